"""Energy-efficiency power control: objective, lattice oracle, CNN allocator, baselines.

Allocations are per-user optical powers (W).  Every allocator returns a
:class:`PowerAllocation` that respects the per-user bounds and the per-AP
budgets; the rate constraint is reported, not guaranteed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .learnkit import Cnn, CnnSpec, TrainConfig, fit, load_checkpoint, save_checkpoint
from .netstate import (
    NoiseModel,
    achievable_rates,
    associate,
    interference,
    min_power_for_rate,
)

__all__ = [
    "PowerConstraints",
    "PowerAllocation",
    "UndefinedEnergyEfficiency",
    "SearchSpaceTooLarge",
    "energy_efficiency",
    "check_constraints",
    "oracle_solve",
    "repair",
    "AllocatorModel",
    "encode_scenario",
    "random_scenarios",
    "label_scenarios",
    "train_allocator",
    "allocate",
    "allocate_many",
    "cpc_allocate",
    "conspc_allocate",
    "rpc_allocate",
    "save_allocator",
    "load_allocator",
    "save_labeled_set",
    "load_labeled_set",
]

SEARCH_LIMIT = 10**8


class UndefinedEnergyEfficiency(ZeroDivisionError):
    pass


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PowerConstraints:
    r_min: float | np.ndarray
    p_min: float
    p_max: float
    ap_budget: np.ndarray

    def __post_init__(self):
        if not 0 <= self.p_min <= self.p_max:
            raise ValueError("need 0 <= p_min <= p_max")
        if np.any(np.asarray(self.r_min) < 0):
            raise ValueError("r_min must be >= 0")
        bud = np.asarray(self.ap_budget, dtype=float)
        if np.any(bud <= 0):
            raise ValueError("AP budgets must be > 0")
        object.__setattr__(self, "ap_budget", bud)

    def r_min_for(self, n_users: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.r_min, dtype=float), (n_users,)).copy()


@dataclass
class PowerAllocation:
    p: np.ndarray
    association: np.ndarray
    feasible: bool
    violated_constraints: list = field(default_factory=list)
    ee: float = float("nan")


def energy_efficiency(rates, powers, mode: str = "log", rate_floor: float | None = None) -> float:
    """Sum of log2 rates (or of rates, ``mode="linear"``) over total power.

    With ``rate_floor`` set, rates are floored before the log; otherwise a
    zero rate in log mode gives ``-inf`` and a warning.
    """
    rates = np.asarray(rates, dtype=float)
    total = float(np.sum(powers))
    if total <= 0:
        raise UndefinedEnergyEfficiency("total transmit power is zero")
    if mode == "linear":
        return float(np.sum(rates)) / total
    if mode != "log":
        raise ValueError(f"unknown EE mode {mode!r}")
    if rate_floor is not None:
        rates = np.maximum(rates, rate_floor)
    if np.any(rates <= 0):
        warnings.warn("zero rate in log-mode energy efficiency", RuntimeWarning, stacklevel=2)
        return -math.inf
    return float(np.sum(np.log2(rates))) / total


def _ee_rows(rates, total_power, mode, rate_floor):
    if mode == "linear":
        return rates.sum(axis=-1) / total_power
    r = np.maximum(rates, rate_floor) if rate_floor is not None else rates
    with np.errstate(divide="ignore"):
        return np.log2(r).sum(axis=-1) / total_power


def _membership(assoc, n_aps):
    m = np.zeros((len(assoc), n_aps))
    served = np.flatnonzero(assoc >= 0)
    m[served, assoc[served]] = 1.0
    return m


def check_constraints(p, gains, assoc, cons: PowerConstraints, nm: NoiseModel,
                      mode: str = "interferer", tol: float = 1e-12):
    """Names of the violated constraints (``C1``..``C4``) for allocation ``p``."""
    p = np.asarray(p, dtype=float)
    assoc = np.asarray(assoc)
    out = []
    rates = achievable_rates(p, gains, assoc, nm, mode)
    served = assoc >= 0
    if np.any(rates[served] < cons.r_min_for(len(p))[served] * (1 - 1e-12)):
        out.append("C1")
    load = p @ _membership(assoc, np.atleast_2d(gains).shape[1])
    if np.any(load > cons.ap_budget * (1 + tol)):
        out.append("C2")
    if np.any(p < cons.p_min * (1 - tol)) or np.any(p > cons.p_max * (1 + tol)):
        out.append("C3")
    if cons.p_min < 0 or np.any(p < 0):
        out.append("C4")
    return out


def oracle_solve(gains, assoc, cons: PowerConstraints, nm: NoiseModel, grid_levels: int = 16, *,
                 mode: str = "interferer", ee_mode: str = "log", rate_floor: float | None = 1.0,
                 chunk: int = 1 << 16) -> PowerAllocation:
    """Exhaustive EE maximisation over the power lattice of the served users.

    Lattice: ``p_min + k (p_max - p_min)/(L - 1)``.  Unassociated users sit at
    ``p_min``.  Users that cannot meet ``r_min`` even alone at ``p_max`` have
    their rate constraint dropped.  If no lattice point satisfies the
    remaining rate constraints, the point meeting the most of them (then the
    highest EE) is returned and flagged infeasible.  The default 1 bit/s
    rate floor makes an unserved user contribute ``log2(1) = 0`` instead of
    sending every lattice point to ``-inf``.
    """
    g = np.atleast_2d(np.asarray(gains, dtype=float))
    assoc = np.asarray(assoc)
    n_users, n_aps = g.shape
    served = np.flatnonzero(assoc >= 0)
    if grid_levels < 2:
        raise ValueError("grid_levels must be >= 2")
    if float(grid_levels) ** len(served) > SEARCH_LIMIT:
        raise SearchSpaceTooLarge(
            f"{grid_levels}^{len(served)} lattice points exceed {SEARCH_LIMIT}; use the learned allocator")
    levels = np.linspace(cons.p_min, cons.p_max, grid_levels)
    r_min = cons.r_min_for(n_users)
    h_serv = np.where(assoc >= 0, g[np.arange(n_users), np.maximum(assoc, 0)], 0.0)
    attainable = min_power_for_rate(h_serv, 0.0, r_min, nm) <= cons.p_max * (1 + 1e-12)
    need_c1 = np.zeros(n_users, dtype=bool)
    need_c1[served] = attainable[served]
    member = _membership(assoc, n_aps)

    base = np.full(n_users, cons.p_min)
    shape = (grid_levels,) * len(served)
    n_points = grid_levels ** len(served)
    best_key, best_p = None, base
    for start in range(0, n_points, chunk):
        flat = np.arange(start, min(start + chunk, n_points))
        idx = np.stack(np.unravel_index(flat, shape), axis=1) if served.size else np.zeros((1, 0), int)
        P = np.tile(base, (len(idx), 1))
        P[:, served] = levels[idx]
        rates = achievable_rates(P, g, assoc, nm, mode)
        n_met = (rates[:, need_c1] >= r_min[need_c1]).sum(axis=1)
        ok_budget = np.all(P @ member <= cons.ap_budget * (1 + 1e-12), axis=1)
        ee = _ee_rows(rates, P.sum(axis=1), ee_mode, rate_floor)
        # rank: budget first, then rate constraints met, then EE; the first index wins ties
        score = np.where(ok_budget, n_met, -1)
        cand = np.flatnonzero(score == score.max())
        j = cand[np.argmax(ee[cand])]
        key = (int(score[j]), float(ee[j]))
        if best_key is None or key > best_key:
            best_key, best_p = key, P[j].copy()
    violated = check_constraints(best_p, g, assoc, cons, nm, mode)
    return PowerAllocation(best_p, assoc, not violated, violated, best_key[1])


def _budget_repair(p, assoc, cons: PowerConstraints):
    """Proportional down-scaling inside every over-budget AP, keeping ``p >= p_min``."""
    p = np.clip(np.asarray(p, dtype=float), cons.p_min, cons.p_max)
    for a in range(len(cons.ap_budget)):
        users = np.flatnonzero(assoc == a)
        budget = cons.ap_budget[a]
        for _ in range(len(users) + 1):
            load = p[users].sum()
            if load <= budget:
                break
            free = users[p[users] > cons.p_min]
            fixed = load - p[free].sum()
            if free.size == 0 or budget <= fixed:
                p[users] = cons.p_min
                break
            p[free] = np.maximum(p[free] * (budget - fixed) / p[free].sum(), cons.p_min)
    return p


def repair(p_raw, gains, assoc, cons: PowerConstraints, nm: NoiseModel, mode: str = "interferer",
           lift_rounds: int = 10) -> PowerAllocation:
    """Project a raw allocation onto C2-C4, then lift users failing C1 where that succeeds.

    A failing user is raised to the smallest power meeting ``r_min`` under
    the current interference, provided that power fits below ``p_max`` and
    the AP's remaining budget.
    """
    g = np.atleast_2d(np.asarray(gains, dtype=float))
    assoc = np.asarray(assoc)
    p = _budget_repair(p_raw, assoc, cons)
    r_min = cons.r_min_for(len(p))
    member = _membership(assoc, g.shape[1])
    h = np.where(assoc >= 0, g[np.arange(len(p)), np.maximum(assoc, 0)], 0.0)
    for _ in range(lift_rounds):
        rates = achievable_rates(p, g, assoc, nm, mode)
        failing = np.flatnonzero((assoc >= 0) & (rates < r_min))
        if failing.size == 0:
            break
        # interference is frozen within a round; the next round sees the lifts
        need = min_power_for_rate(h[failing], interference(p, g, assoc, nm.responsivity, mode)[failing],
                                  r_min[failing], nm) * (1 + 1e-9)
        load = p @ member
        changed = False
        for u, nu in zip(failing, need):
            a = assoc[u]
            if p[u] < nu <= min(cons.p_max, cons.ap_budget[a] - load[a] + p[u]):
                load[a] += nu - p[u]
                p[u] = nu
                changed = True
        if not changed:
            break
    violated = check_constraints(p, g, assoc, cons, nm, mode)
    return PowerAllocation(p, assoc, "C1" not in violated, violated)


# ----------------------------------------------------------------------------
# learned allocator


@dataclass
class AllocatorModel:
    """CNN allocator plus the fixed scenario encoding it was trained with.

    Input image: channel 0 = log10 gain mapped from ``[log_gain_lo,
    log_gain_hi]`` to [0, 1] (0 for zero gain), channel 1 = user demand /
    ``rate_ref``, channel 2 = AP budget / ``budget_ref``; APs along the
    rows, users along the columns, zero-padded to the CNN input size.
    Outputs are powers mapped log-linearly from ``[p_lo, p_hi]`` to [0, 1].
    """

    cnn: Cnn
    p_lo: float
    p_hi: float
    log_gain_lo: float = -12.0
    log_gain_hi: float = -4.0
    rate_ref: float = 1e9
    budget_ref: float = 1.0
    final_loss: float = float("nan")

    @property
    def max_users(self) -> int:
        return self.cnn.spec.output_dim

    @property
    def max_aps(self) -> int:
        return self.cnn.spec.height

    def encoding(self) -> dict:
        return {"p_lo": self.p_lo, "p_hi": self.p_hi, "log_gain_lo": self.log_gain_lo,
                "log_gain_hi": self.log_gain_hi, "rate_ref": self.rate_ref,
                "budget_ref": self.budget_ref}

    def power_to_label(self, p):
        lo, hi = math.log(self.p_lo), math.log(self.p_hi)
        return (np.log(np.clip(p, self.p_lo, self.p_hi)) - lo) / (hi - lo)

    def label_to_power(self, y):
        lo, hi = math.log(self.p_lo), math.log(self.p_hi)
        return np.exp(lo + np.asarray(y) * (hi - lo))


def _cnn_spec_for(max_users: int, max_aps: int) -> CnnSpec:
    def padded(n):
        return max(8, int(math.ceil(n / 8.0)) * 8)

    return CnnSpec(in_channels=3, height=padded(max_aps), width=padded(max_users), output_dim=max_users)


def encode_scenario(model_or_enc, gains, r_min, budgets):
    """(3, H, W) input image for one scenario."""
    enc = model_or_enc.encoding() if isinstance(model_or_enc, AllocatorModel) else model_or_enc
    spec = model_or_enc.cnn.spec if isinstance(model_or_enc, AllocatorModel) else enc["spec"]
    g = np.atleast_2d(np.asarray(gains, dtype=float))
    U, A = g.shape
    if U > spec.output_dim or A > spec.height:
        raise ValueError(f"scenario {U} users x {A} APs exceeds model capacity")
    img = np.zeros((3, spec.height, spec.width))
    with np.errstate(divide="ignore"):
        lg = np.log10(g.T)
    img[0, :A, :U] = np.where(g.T > 0, np.clip((lg - enc["log_gain_lo"]) /
                                               (enc["log_gain_hi"] - enc["log_gain_lo"]), 0, 1), 0.0)
    img[1, :A, :U] = np.broadcast_to(np.asarray(r_min, dtype=float), (U,))[None, :] / enc["rate_ref"]
    img[2, :A, :U] = np.asarray(budgets, dtype=float)[:, None] / enc["budget_ref"]
    return img


def random_scenarios(n, sample_states, layout, beam, recv, rng, *, max_users=4,
                     r_min_range=(0.25e9, 1.0e9), budget_scale=(0.6, 1.0), z_u=0.0):
    """Randomised training scenarios: (gains, association, r_min, budgets) tuples.

    ``sample_states(rng, n_users)`` draws user states; the channel is
    evaluated with :func:`mapcsim.netstate.channel_matrix`.
    """
    from .netstate import channel_matrix

    out = []
    for _ in range(n):
        U = int(rng.integers(1, max_users + 1))
        g = channel_matrix(sample_states(rng, U), layout, beam, recv, z_u)
        r = float(rng.uniform(*r_min_range))
        bud = layout.budgets * rng.uniform(*budget_scale)
        out.append((g, associate(g), r, bud))
    return out


def label_scenarios(scenarios, p_min, p_max_of_budget, nm: NoiseModel, grid_levels=16,
                    mode="interferer"):
    """Oracle power labels for :func:`random_scenarios` output.

    ``p_max_of_budget(budgets)`` gives the per-user cap for a scenario.
    Returns a dict of object arrays ready for :func:`train_allocator`.
    """
    labels = []
    for g, assoc, r, bud in scenarios:
        cons = PowerConstraints(r, p_min, p_max_of_budget(bud), bud)
        labels.append(oracle_solve(g, assoc, cons, nm, grid_levels, mode=mode).p)
    return {"gains": [s[0] for s in scenarios], "assoc": [s[1] for s in scenarios],
            "r_min": np.array([s[2] for s in scenarios]),
            "budgets": np.array([s[3] for s in scenarios]), "powers": labels}


def train_allocator(labeled, p_lo, p_hi, cfg: TrainConfig = TrainConfig(), seed=0, *,
                    max_users=4, max_aps=12, epochs=None, callback=None, resume=None, **encoding):
    """Supervised CNN fit of log-normalised oracle powers.

    ``resume=(model, optimizer, rng_state)`` continues an earlier run.  The
    returned model carries ``history``, ``optimizer`` and ``rng``.
    """
    n = len(labeled["powers"])
    if n < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} labelled scenarios, got {n}")
    rng = np.random.default_rng(seed)
    init_seed, fit_seed = (int(v) for v in rng.integers(2**31, size=2))
    if resume is None:
        model = AllocatorModel(Cnn(_cnn_spec_for(max_users, max_aps), seed=init_seed), p_lo, p_hi, **encoding)
        optimizer, fit_rng, past = None, None, {"train_loss": [], "val_loss": []}
    else:
        model, optimizer, rng_state = resume
        fit_rng = np.random.default_rng()
        fit_rng.bit_generator.state = rng_state
        past = getattr(model, "history", None) or {"train_loss": [], "val_loss": []}
    X = np.stack([encode_scenario(model, g, r, b) for g, r, b in
                  zip(labeled["gains"], labeled["r_min"], labeled["budgets"])])
    T = np.zeros((n, model.max_users))
    for i, p in enumerate(labeled["powers"]):
        T[i, :len(p)] = model.power_to_label(p)
    history, optimizer, fit_rng = fit(model.cnn, X, T, cfg, seed=fit_seed, optimizer=optimizer,
                                      epochs=epochs, rng=fit_rng, callback=callback)
    history = {k: list(past.get(k, [])) + v for k, v in history.items()}
    model.final_loss = history["train_loss"][-1] if history["train_loss"] else float("nan")
    model.history, model.optimizer, model.rng = history, optimizer, fit_rng
    return model


def _group_chunks(assoc, size):
    order = np.argsort(np.where(assoc >= 0, assoc, np.iinfo(np.int64).max), kind="stable")
    return [order[i:i + size] for i in range(0, len(order), size)]


def allocate(model: AllocatorModel, gains, assoc, cons: PowerConstraints, nm: NoiseModel,
             mode: str = "interferer") -> PowerAllocation:
    """CNN inference followed by :func:`repair`.

    Scenarios with more users than the model's capacity are split into
    AP-ordered groups of at most ``model.max_users`` users, each inferred on
    its own; the repair step then runs on the joint allocation.
    """
    return allocate_many(model, [(gains, assoc, cons)], nm, mode)[0]


def allocate_many(model: AllocatorModel, problems, nm: NoiseModel, mode: str = "interferer",
                  batch: int = 2048):
    """:func:`allocate` for a sequence of ``(gains, assoc, cons)`` problems.

    CNN inference runs over up to ``batch`` images at a time, which is much
    cheaper than one forward pass per scenario.
    """
    items, images = [], []
    for gains, assoc, cons in problems:
        g = np.atleast_2d(np.asarray(gains, dtype=float))
        assoc = np.asarray(assoc)
        r_min = cons.r_min_for(g.shape[0])
        chunks = _group_chunks(assoc, model.max_users)
        items.append((g, assoc, cons, chunks))
        images += [encode_scenario(model, g[c], r_min[c], cons.ap_budget) for c in chunks]
    if not items:
        return []
    X = np.stack(images)
    Y = np.concatenate([model.cnn.predict(X[i:i + batch]) for i in range(0, len(X), batch)])
    out, k = [], 0
    for g, assoc, cons, chunks in items:
        raw = np.empty(g.shape[0])
        for c in chunks:
            raw[c] = model.label_to_power(Y[k][:len(c)])
            k += 1
        raw[assoc < 0] = cons.p_min
        out.append(repair(raw, g, assoc, cons, nm, mode))
    return out


def save_allocator(path, model: AllocatorModel, optimizer=None):
    """Checkpoint in learnkit format; the Adam state and shuffle RNG are kept for resuming."""
    optimizer = optimizer or getattr(model, "optimizer", None)
    extra = {"role": "allocator", "encoding": model.encoding(), "final_loss": model.final_loss}
    if getattr(model, "rng", None) is not None:
        extra["rng_state"] = model.rng.bit_generator.state
    if getattr(model, "history", None) is not None:
        extra["history"] = model.history
    return save_checkpoint(path, model.cnn, optimizer, extra)


def load_allocator(path):
    """Returns ``(model, optimizer_or_None, rng_state_or_None)``."""
    cnn, opt, meta, _ = load_checkpoint(path)
    extra = meta["extra"]
    if extra.get("role") != "allocator":
        raise ValueError(f"{path}: not an allocator checkpoint")
    model = AllocatorModel(cnn, final_loss=extra["final_loss"], **extra["encoding"])
    model.history = extra.get("history")
    return model, opt, extra.get("rng_state")


def save_labeled_set(path, labeled):
    """Store a labelled scenario set as ``.npz`` (format version 1, ragged rows padded with NaN)."""
    n = len(labeled["powers"])
    U = max(len(p) for p in labeled["powers"])
    A = labeled["gains"][0].shape[1]
    gains = np.full((n, U, A), np.nan)
    assoc = np.full((n, U), -2, dtype=np.int64)
    powers = np.full((n, U), np.nan)
    for i in range(n):
        k = len(labeled["powers"][i])
        gains[i, :k] = labeled["gains"][i]
        assoc[i, :k] = labeled["assoc"][i]
        powers[i, :k] = labeled["powers"][i]
    with open(path, "wb") as fh:
        np.savez(fh, format=np.array("mapcsim-labels"), version=np.array(1), gains=gains,
                 assoc=assoc, powers=powers, r_min=labeled["r_min"], budgets=labeled["budgets"])


def load_labeled_set(path):
    with np.load(path, allow_pickle=False) as z:
        if str(z["format"]) != "mapcsim-labels" or int(z["version"]) != 1:
            raise ValueError(f"{path}: not a version-1 labelled scenario file")
        counts = (z["assoc"] != -2).sum(axis=1)
        return {"gains": [z["gains"][i, :k] for i, k in enumerate(counts)],
                "assoc": [z["assoc"][i, :k] for i, k in enumerate(counts)],
                "powers": [z["powers"][i, :k] for i, k in enumerate(counts)],
                "r_min": z["r_min"].copy(), "budgets": z["budgets"].copy()}


# ----------------------------------------------------------------------------
# benchmark schemes


def cpc_allocate(gains_now, assoc, cons: PowerConstraints, nm: NoiseModel, mode: str = "interferer",
                 max_iter: int = 50, tol: float = 1e-12) -> PowerAllocation:
    """Minimum power meeting ``r_min`` on the current channel, by Jacobi iteration.

    Each round sets every served user to the power that meets its demand
    under the interference of the previous round, clipped to
    ``[p_min, p_max]``.  The fixed point (or the last iterate) is
    budget-repaired.
    """
    g = np.atleast_2d(np.asarray(gains_now, dtype=float))
    assoc = np.asarray(assoc)
    U = g.shape[0]
    r_min = cons.r_min_for(U)
    h = np.where(assoc >= 0, g[np.arange(U), np.maximum(assoc, 0)], 0.0)
    p = np.full(U, cons.p_min)
    for _ in range(max_iter):
        i_u = interference(p, g, assoc, nm.responsivity, mode)
        need = np.minimum(min_power_for_rate(h, i_u, r_min, nm), cons.p_max)
        new = np.where(assoc >= 0, np.clip(need, cons.p_min, cons.p_max), cons.p_min)
        if np.max(np.abs(new - p)) <= tol * max(cons.p_max, 1e-30):
            p = new
            break
        p = new
    p = _budget_repair(p, assoc, cons)
    violated = check_constraints(p, g, assoc, cons, nm, mode)
    return PowerAllocation(p, assoc, "C1" not in violated, violated)


def conspc_allocate(gains_now, assoc, cons: PowerConstraints, nm: NoiseModel, margin_db: float = 3.0,
                    mode: str = "interferer") -> PowerAllocation:
    """CPC powers scaled by a fixed safety margin, then clipped and budget-repaired."""
    base = cpc_allocate(gains_now, assoc, cons, nm, mode)
    p = base.p * 10.0 ** (margin_db / 10.0)
    p = np.where(np.asarray(assoc) >= 0, p, cons.p_min)
    p = _budget_repair(p, np.asarray(assoc), cons)
    violated = check_constraints(p, gains_now, assoc, cons, nm, mode)
    return PowerAllocation(p, np.asarray(assoc), "C1" not in violated, violated)


def rpc_allocate(prev: PowerAllocation, realized_rates, cons: PowerConstraints, step_db: float = 1.0,
                 hysteresis: float = 0.5, assoc=None) -> PowerAllocation:
    """Step powers up after a rate violation and down after comfortable surplus.

    ``assoc`` overrides the association carried by ``prev``.  No channel is
    seen here, so ``feasible`` only reflects C2-C4, which hold by construction.
    """
    p = np.asarray(prev.p, dtype=float).copy()
    rates = np.asarray(realized_rates, dtype=float)
    r_min = cons.r_min_for(len(p))
    up = 10.0 ** (step_db / 10.0)
    p = np.where(rates < r_min, p * up, np.where(rates > (1 + hysteresis) * r_min, p / up, p))
    assoc = np.asarray(prev.association if assoc is None else assoc)
    p = np.where(assoc >= 0, p, cons.p_min)
    p = _budget_repair(p, assoc, cons)
    return PowerAllocation(p, assoc, True, [])

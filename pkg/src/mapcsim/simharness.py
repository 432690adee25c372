"""Slotted closed loop: move users, predict, associate, allocate, then score on the true channel.

At slot ``t`` a scheme chooses powers for slot ``t+1`` from what it knows
at ``t``; the rates it actually gets are evaluated with the true states
at ``t+1`` and the association it committed to.  All schemes in one
episode see the same true trajectories.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .mobility import PHI, THETA, X, Y, BehaviorParams, GmParams, Room, generate_dataset, wrap_angle
from .netstate import NoiseModel, achievable_rates, associate, channel_matrix, grid_layout
from .optics import BeamParams, ReceiverParams
from .powerctl import (
    PowerAllocation,
    PowerConstraints,
    allocate,
    conspc_allocate,
    cpc_allocate,
    energy_efficiency,
    rpc_allocate,
)
from .predictor import predict_batch, rmse_vs_horizon

__all__ = [
    "SCHEMES",
    "ScenarioConfig",
    "SlotMetrics",
    "Models",
    "episode_traces",
    "run_episode",
    "summarize_episode",
    "experiment_ee_vs_users",
    "experiment_ee_vs_speed",
    "experiment_rmse_vs_horizon",
    "config_hash",
    "write_slot_csv",
    "write_table_csv",
    "sample_user_states",
    "build_label_set",
    "scenario_p_max",
    "predictor_training_traces",
]

SCHEMES = ("MAPC", "CPC", "ConsPC", "RPC")


@dataclass(frozen=True)
class ScenarioConfig:
    room: Room = Room()
    ap_grid: tuple[int, int] = (4, 3)
    beam: BeamParams = BeamParams()
    receiver: ReceiverParams = ReceiverParams()
    noise: NoiseModel = NoiseModel()
    n_users: int = 8
    gm: GmParams = GmParams()
    behavior: BehaviorParams = BehaviorParams()
    scheme: str = "MAPC"
    n_slots: int = 100
    seed: int = 0
    history: int = 5
    r_min: float = 0.5e9
    p_min: float = 1e-3
    p_max: float | None = None  # None: half the AP budget
    margin_db: float = 3.0
    step_db: float = 1.0
    hysteresis: float = 0.5
    rate_floor: float = 1.0
    ee_mode: str = "log"
    interference_mode: str = "interferer"
    user_height: float = 0.0

    def __post_init__(self):
        if self.gm.dt <= 0:
            raise ValueError("slot duration must be > 0")
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")
        if self.n_slots < 0:
            raise ValueError("n_slots must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.history < 1:
            raise ValueError("history must be >= 1")
        object.__setattr__(self, "ap_grid", tuple(int(v) for v in self.ap_grid))
        if len(self.ap_grid) != 2 or min(self.ap_grid) < 1:
            raise ValueError("ap_grid needs two positive counts")

    @property
    def dt(self) -> float:
        return self.gm.dt

    def layout(self):
        return grid_layout(self.room, *self.ap_grid, beam=self.beam)

    def constraints(self, layout=None) -> PowerConstraints:
        layout = layout or self.layout()
        return PowerConstraints(self.r_min, self.p_min, scenario_p_max(self, layout.budgets), layout.budgets)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Models:
    """Trained components MAPC needs; ``perfect_prediction`` feeds true next states (test hook)."""

    predictor: object = None
    allocator: object = None
    perfect_prediction: bool = False


@dataclass
class SlotMetrics:
    slot: int
    rates: np.ndarray
    powers: np.ndarray
    planned_rates: np.ndarray
    ee: float
    ee_predicted: float
    position_error: float
    orientation_error: float
    c1_violations: int
    blocked: int
    ap_loads: np.ndarray = field(repr=False, default=None)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.powers))

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.rates))


def config_hash(cfg) -> str:
    """Short content hash of a config (dataclass or dict), used in output file names."""
    d = cfg.to_dict() if hasattr(cfg, "to_dict") else cfg
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def episode_traces(cfg: ScenarioConfig):
    """True trajectories ``(n_users, history + n_slots + 1, 6)`` for one episode."""
    n_steps = cfg.history + cfg.n_slots + 1
    return generate_dataset(cfg.n_users, max(n_steps, 2), cfg.gm, cfg.behavior, cfg.room, cfg.seed)


def _predict_next(cfg, models, hist, true_next):
    if cfg.scheme != "MAPC":
        return hist[:, -1]
    if models.perfect_prediction:
        return true_next
    model = models.predictor
    if model.gm_params != cfg.gm:
        model = replace(model, gm_params=cfg.gm)
    return predict_batch(model, hist)


def run_episode(cfg: ScenarioConfig, models: Models | None = None, traces=None):
    """Per-slot metrics of one scheme over one episode.

    ``traces`` may be passed to share trajectories between schemes; by
    default they are generated from ``cfg.seed``.
    """
    models = models or Models()
    if cfg.scheme == "MAPC" and (models.allocator is None or
                                 (models.predictor is None and not models.perfect_prediction)):
        raise ValueError("MAPC needs a trained allocator and predictor (or perfect_prediction)")
    if cfg.n_slots == 0:
        return []
    if traces is None:
        traces = episode_traces(cfg)
    layout = cfg.layout()
    cons = cfg.constraints(layout)
    nm = cfg.noise

    def gains(states):
        return channel_matrix(states, layout, cfg.beam, cfg.receiver, cfg.user_height)

    out = []
    prev_alloc, prev_rates = None, None
    for t in range(cfg.n_slots):
        k = cfg.history - 1 + t
        hist = traces[:, k - cfg.history + 1:k + 1]
        true_next = traces[:, k + 1]
        s_hat = _predict_next(cfg, models, hist, true_next)
        if cfg.scheme == "MAPC":
            g_plan = gains(s_hat)
            assoc = associate(g_plan)
            alloc = allocate(models.allocator, g_plan, assoc, cons, nm, cfg.interference_mode)
        else:
            g_plan = gains(traces[:, k])
            assoc = associate(g_plan)
            if cfg.scheme == "CPC":
                alloc = cpc_allocate(g_plan, assoc, cons, nm, cfg.interference_mode)
            elif cfg.scheme == "ConsPC":
                alloc = conspc_allocate(g_plan, assoc, cons, nm, cfg.margin_db, cfg.interference_mode)
            elif prev_alloc is None:
                alloc = cpc_allocate(g_plan, assoc, cons, nm, cfg.interference_mode)
            else:
                alloc = rpc_allocate(prev_alloc, prev_rates, cons, cfg.step_db, cfg.hysteresis, assoc)
        p = alloc.p
        planned = achievable_rates(p, g_plan, assoc, nm, cfg.interference_mode)
        rates = achievable_rates(p, gains(true_next), assoc, nm, cfg.interference_mode)
        d = true_next - s_hat
        served = assoc >= 0
        loads = np.zeros(layout.n_aps)
        np.add.at(loads, assoc[served], p[served])
        out.append(SlotMetrics(
            slot=t, rates=rates, powers=p, planned_rates=planned,
            ee=energy_efficiency(rates, p, cfg.ee_mode, cfg.rate_floor),
            ee_predicted=energy_efficiency(planned, p, cfg.ee_mode, cfg.rate_floor),
            position_error=float(np.sqrt(np.mean(d[:, X] ** 2 + d[:, Y] ** 2))),
            orientation_error=float(np.sqrt(np.mean(d[:, THETA] ** 2 + wrap_angle(d[:, PHI]) ** 2))),
            c1_violations=int(np.sum(rates < cons.r_min_for(len(p)))),
            blocked=int(np.sum(rates <= 0)),
            ap_loads=loads,
        ))
        prev_alloc = PowerAllocation(p, assoc, alloc.feasible, alloc.violated_constraints)
        prev_rates = rates
    return out


def summarize_episode(metrics) -> dict:
    if not metrics:
        return {"slots": 0, "ee": math.nan, "ee_predicted": math.nan, "total_power": math.nan,
                "sum_rate": math.nan, "c1_violation_rate": math.nan, "blocked_rate": math.nan,
                "position_error": math.nan, "orientation_error": math.nan}
    n_users = len(metrics[0].rates)
    return {
        "slots": len(metrics),
        "ee": float(np.mean([m.ee for m in metrics])),
        "ee_predicted": float(np.mean([m.ee_predicted for m in metrics])),
        "total_power": float(np.mean([m.total_power for m in metrics])),
        "sum_rate": float(np.mean([m.sum_rate for m in metrics])),
        "c1_violation_rate": float(np.mean([m.c1_violations for m in metrics])) / n_users,
        "blocked_rate": float(np.mean([m.blocked for m in metrics])) / n_users,
        "position_error": float(np.mean([m.position_error for m in metrics])),
        "orientation_error": float(np.mean([m.orientation_error for m in metrics])),
    }


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


_SLOT_FIELDS = ["slot", "ee", "ee_predicted", "total_power", "sum_rate", "c1_violations", "blocked",
                "position_error", "orientation_error"]


def write_slot_csv(path, metrics, scheme: str = ""):
    """One row per slot plus a final aggregate row with ``slot = all``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme"] + _SLOT_FIELDS)
        for m in metrics:
            w.writerow([scheme, m.slot] + [_fmt(v) for v in (
                m.ee, m.ee_predicted, m.total_power, m.sum_rate)] + [m.c1_violations, m.blocked]
                + [_fmt(m.position_error), _fmt(m.orientation_error)])
        s = summarize_episode(metrics)
        w.writerow([scheme, "all"] + [_fmt(s[k]) for k in (
            "ee", "ee_predicted", "total_power", "sum_rate", "c1_violation_rate", "blocked_rate",
            "position_error", "orientation_error")])


def write_table_csv(path, rows):
    rows = list(rows)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _episode_job(args):
    cfg, models, schemes = args
    traces = episode_traces(cfg)
    return {s: summarize_episode(run_episode(replace(cfg, scheme=s), models, traces)) for s in schemes}


def _run_grid(cfgs, models, schemes, jobs):
    tasks = [(c, models, tuple(schemes)) for c in cfgs]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_episode_job, tasks))
    return [_episode_job(t) for t in tasks]


def _mean_ci(values, level=0.95):
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), math.nan
    half = stats.t.ppf(0.5 + level / 2, len(v) - 1) * v.std(ddof=1) / math.sqrt(len(v))
    return float(v.mean()), float(half)


def _aggregate(key_name, key_value, scheme, summaries):
    ee_mean, ee_ci = _mean_ci([s["ee"] for s in summaries])
    return {
        key_name: key_value, "scheme": scheme, "mean_ee": ee_mean, "ci95_ee": ee_ci,
        "mean_ee_predicted": float(np.mean([s["ee_predicted"] for s in summaries])),
        "mean_power": float(np.mean([s["total_power"] for s in summaries])),
        "mean_sum_rate": float(np.mean([s["sum_rate"] for s in summaries])),
        "c1_violation_rate": float(np.mean([s["c1_violation_rate"] for s in summaries])),
        "blocked_rate": float(np.mean([s["blocked_rate"] for s in summaries])),
        "repetitions": len(summaries),
    }


def _seeds(base_seed, repetitions):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(base_seed).spawn(repetitions)]


def experiment_ee_vs_users(base: ScenarioConfig, models: Models, user_counts=(4, 8, 12, 16),
                           speed: float = 1.0, schemes=SCHEMES, repetitions: int = 20, jobs: int = 1):
    """Mean realized EE (with 95% CI) per scheme and user count at a fixed mean speed."""
    gm = replace(base.gm, mean_speed=speed)
    rows = []
    for n in user_counts:
        cfgs = [replace(base, n_users=int(n), gm=gm, seed=s) for s in _seeds(base.seed, repetitions)]
        res = _run_grid(cfgs, models, schemes, jobs)
        rows += [_aggregate("n_users", int(n), s, [r[s] for r in res]) for s in schemes]
    return rows


def experiment_ee_vs_speed(base: ScenarioConfig, models: Models, speeds=(0.2, 0.6, 1.0, 1.5),
                           n_users: int = 10, schemes=SCHEMES, repetitions: int = 20, jobs: int = 1):
    """Mean realized EE per scheme and mean speed, plus each scheme's relative drop.

    Every row carries ``relative_drop`` = 1 - EE(fastest) / EE(slowest) for
    its scheme.  Seeds are shared across speeds.
    """
    seeds = _seeds(base.seed, repetitions)
    rows = []
    for v in speeds:
        gm = replace(base.gm, mean_speed=float(v))
        cfgs = [replace(base, n_users=n_users, gm=gm, seed=s) for s in seeds]
        res = _run_grid(cfgs, models, schemes, jobs)
        rows += [_aggregate("speed", float(v), s, [r[s] for r in res]) for s in schemes]
    lo, hi = min(speeds), max(speeds)
    for s in schemes:
        e = {r["speed"]: r["mean_ee"] for r in rows if r["scheme"] == s}
        drop = 1.0 - e[hi] / e[lo]
        for r in rows:
            if r["scheme"] == s:
                r["relative_drop"] = drop
    return rows


def experiment_rmse_vs_horizon(base: ScenarioConfig, predictor, horizons=range(1, 11),
                               n_users: int = 20, n_steps: int = 300, seed: int | None = None):
    """Position and orientation RMSE per horizon for the hybrid and the GM-only predictor."""
    from .predictor import gm_only

    seed = base.seed + 1_000_003 if seed is None else seed
    traces = generate_dataset(n_users, n_steps, base.gm, base.behavior, base.room, seed)
    model = replace(predictor, gm_params=base.gm)
    hyb = rmse_vs_horizon(model, traces, horizons)
    gm = rmse_vs_horizon(gm_only(base.gm, base.room), traces, horizons, model.sequence_length)
    return [{"horizon": a["horizon"], "position_rmse": a["position_rmse"],
             "orientation_rmse": a["orientation_rmse"], "gm_position_rmse": b["position_rmse"],
             "gm_orientation_rmse": b["orientation_rmse"]} for a, b in zip(hyb, gm)]


# ----------------------------------------------------------------------------
# training helpers shared by the CLI, the tests and the gallery scripts


def sample_user_states(rng, n, gm: GmParams, room: Room = Room()):
    """Independent user states: uniform position, heading and azimuth, stationary elevation."""
    th_std = math.sqrt(gm.theta_noise_var / (1.0 - gm.alpha_theta**2)) if gm.alpha_theta < 1 else 0.0
    return np.column_stack([
        rng.uniform(0, room.x, n), rng.uniform(0, room.y, n),
        np.clip(rng.normal(gm.mean_speed, math.sqrt(gm.speed_noise_var), n), 0, gm.v_max),
        rng.uniform(-np.pi, np.pi, n),
        np.clip(rng.normal(gm.mean_theta, th_std, n), 0, np.pi / 2),
        rng.uniform(-np.pi, np.pi, n)])


def build_label_set(cfg: ScenarioConfig, n_scenarios: int, seed: int = 0, *, max_users: int = 4,
                    r_min_range=(0.25e9, 1.0e9), grid_levels: int = 16):
    """Oracle-labelled random scenarios for allocator training."""
    from .powerctl import label_scenarios, random_scenarios

    rng = np.random.default_rng(seed)
    layout = cfg.layout()
    scen = random_scenarios(n_scenarios, lambda r, u: sample_user_states(r, u, cfg.gm, cfg.room), layout,
                            cfg.beam, cfg.receiver, rng, max_users=max_users, r_min_range=r_min_range,
                            z_u=cfg.user_height)
    return label_scenarios(scen, cfg.p_min, lambda b: scenario_p_max(cfg, b), cfg.noise,
                           grid_levels, cfg.interference_mode)


def scenario_p_max(cfg: ScenarioConfig, budgets) -> float:
    """Per-user cap for a scenario with AP ``budgets``: the configured value, else half the smallest budget."""
    b = float(np.min(budgets))
    return b / 2.0 if cfg.p_max is None else min(cfg.p_max, b)


def predictor_training_traces(cfg: ScenarioConfig, n_users: int, n_steps: int, seed: int = 0):
    """Behavioural training traces, seeded apart from any episode seed."""
    return generate_dataset(n_users, n_steps, cfg.gm, cfg.behavior, cfg.room, seed + 7_919)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import LAYOUT, lattice_key, lattice_rescan, random_instance

from mapcsim.learnkit import TrainConfig
from mapcsim.netstate import NoiseModel, achievable_rates, noise_variance
from mapcsim.powerctl import (
    PowerAllocation,
    PowerConstraints,
    SearchSpaceTooLarge,
    UndefinedEnergyEfficiency,
    allocate,
    allocate_many,
    check_constraints,
    conspc_allocate,
    cpc_allocate,
    energy_efficiency,
    label_scenarios,
    load_allocator,
    load_labeled_set,
    oracle_solve,
    repair,
    rpc_allocate,
    save_allocator,
    save_labeled_set,
    train_allocator,
)

NM = NoiseModel()
B, R = 1.5e9, 0.7


def _cons(r_min=0.5e9, p_min=1e-3, p_max=0.5, budgets=(1.0,)):
    return PowerConstraints(r_min, p_min, p_max, np.asarray(budgets, float))


# ---------------------------------------------------------------- objective

def test_ee_single_user_arithmetic():
    assert energy_efficiency([2.0**30], [1.0]) == 30.0


@given(st.floats(0.01, 100))
def test_ee_power_scaling(k):
    r, p = [1e9, 3e8], [0.2, 0.1]
    assert energy_efficiency(r, np.multiply(p, k)) == pytest.approx(energy_efficiency(r, p) / k, rel=1e-12)


def test_ee_multi_user_and_linear_mode():
    r, p = np.array([1e9, 2e8, 7e7]), np.array([0.1, 0.3, 0.05])
    expect = (math.log2(1e9) + math.log2(2e8) + math.log2(7e7)) / 0.45
    assert energy_efficiency(r, p) == pytest.approx(expect, rel=1e-14)
    assert energy_efficiency(r, p, mode="linear") == pytest.approx(1.27e9 / 0.45, rel=1e-14)


def test_ee_degenerate_inputs():
    with pytest.raises(UndefinedEnergyEfficiency):
        energy_efficiency([1e9], [0.0])
    with pytest.warns(RuntimeWarning):
        assert energy_efficiency([0.0, 1e9], [0.1, 0.1]) == -math.inf
    assert energy_efficiency([0.0, 2.0**20], [0.5, 0.5], rate_floor=1.0) == 20.0


# ---------------------------------------------------------------- oracle

@pytest.mark.parametrize("fixed", [1e-12, None])
def test_oracle_single_user_matches_scan(fixed):
    nm = NoiseModel(fixed_sigma2=fixed)
    h = 2e-6
    cons = _cons(r_min=0.0)
    got = oracle_solve([[h]], [0], cons, nm)
    grid = np.linspace(cons.p_min, cons.p_max, 16)
    sig2 = np.array([noise_variance(nm, p * h) for p in grid])
    obj = np.log2(B * np.log2(1 + (grid * R * h) ** 2 / sig2)) / grid
    assert got.p[0] == grid[np.argmax(obj)]
    assert got.feasible and got.ee == pytest.approx(obj.max(), rel=1e-12)


def test_oracle_flags_unreachable_demand():
    h = 2e-6
    r_max = achievable_rates([0.5], [[h]], [0], NM)[0]
    got = oracle_solve([[h]], [0], _cons(r_min=r_max * 1.01), NM)
    assert not got.feasible and got.violated_constraints == ["C1"]


def test_oracle_single_feasible_point():
    h = 2e-6
    # with two levels only p_max meets a demand just above the p_min rate
    r_lo = achievable_rates([1e-3], [[h]], [0], NM)[0]
    got = oracle_solve([[h]], [0], _cons(r_min=r_lo * 1.5), NM, grid_levels=2)
    assert got.p[0] == 0.5 and got.feasible


def test_oracle_guard():
    with pytest.raises(SearchSpaceTooLarge):
        oracle_solve(np.full((7, 1), 1e-6), np.zeros(7, int), _cons(budgets=(10.0,)), NM)


def test_oracle_unassociated_user_at_p_min():
    g = np.array([[0.0, 0.0], [3e-6, 0.0]])
    got = oracle_solve(g, np.array([-1, 0]), _cons(budgets=(1.0, 1.0)), NM)
    assert got.p[0] == 1e-3 and np.isfinite(got.ee)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_oracle_beats_every_lattice_point(seed, n_users):
    g, a, cons = random_instance(np.random.default_rng(seed), n_users)
    got = oracle_solve(g, a, cons, NM)
    best = lattice_rescan(g, a, cons, NM)
    mine = lattice_key(got.p, g, a, cons, NM)
    assert mine[0] == best[0]
    assert mine[1] >= best[1] * (1 - 1e-12)
    assert got.ee == pytest.approx(mine[1], rel=1e-12)


# ---------------------------------------------------------------- repair

def test_repair_scales_over_budget_ap_proportionally():
    g = np.array([[3e-6, 0.0], [2e-6, 0.0], [0.0, 4e-6]])
    a = np.array([0, 0, 1])
    cons = _cons(r_min=0.0, p_max=1.0, budgets=(0.5, 1.0))
    raw = np.array([0.6, 0.4, 0.3])  # AP 0 carries 1.0 = 2x its budget
    out = repair(raw, g, a, cons, NM)
    np.testing.assert_allclose(out.p, [0.3, 0.2, 0.3], rtol=1e-14)
    assert out.feasible


def test_repair_clamps_low_and_high():
    g = np.array([[3e-6], [2e-6]])
    out = repair([1e-9, 7.0], g, [0, 0], _cons(r_min=0.0, p_max=0.5, budgets=(2.0,)), NM)
    np.testing.assert_array_equal(out.p, [1e-3, 0.5])


def test_repair_lifts_failing_user_to_demand():
    g = np.array([[3e-6, 0.0], [0.0, 3e-6]])
    cons = _cons(r_min=0.6e9, budgets=(1.0, 1.0))
    out = repair([1e-3, 1e-3], g, [0, 1], cons, NM)
    assert out.feasible
    assert np.all(achievable_rates(out.p, g, [0, 1], NM) >= 0.6e9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_repair_always_satisfies_bounds_and_budgets(seed, n_users):
    rng = np.random.default_rng(seed)
    g, a, cons = random_instance(rng, n_users, budget_scale=(0.05, 1.0))
    raw = rng.lognormal(-2, 2, n_users) * rng.choice([1, -1], n_users)
    out = repair(raw, g, a, cons, NM)
    assert not {"C2", "C3", "C4"} & set(check_constraints(out.p, g, a, cons, NM))
    assert out.feasible == ("C1" not in check_constraints(out.p, g, a, cons, NM))


# ---------------------------------------------------------------- baselines

def test_cpc_zero_demand_is_p_min():
    g, a, _ = random_instance(np.random.default_rng(0), 5)
    out = cpc_allocate(g, a, _cons(r_min=0.0, budgets=LAYOUT.budgets), NM)
    np.testing.assert_array_equal(out.p, 1e-3)


def test_cpc_two_user_fixed_point_closed_form():
    sig2 = 1e-13
    nm = NoiseModel(fixed_sigma2=sig2)
    g = np.array([[4e-6, 1e-6], [0.8e-6, 3e-6]])
    r = 1.0e9
    s = 2 ** (r / B) - 1
    # squared powers solve x = a + b y, y = c + d x
    a_ = s * sig2 / (R * g[0, 0]) ** 2
    b_ = s * g[0, 1] ** 2 / g[0, 0] ** 2
    c_ = s * sig2 / (R * g[1, 1]) ** 2
    d_ = s * g[1, 0] ** 2 / g[1, 1] ** 2
    x = (a_ + b_ * c_) / (1 - b_ * d_)
    y = c_ + d_ * x
    out = cpc_allocate(g, [0, 1], _cons(r_min=r, p_min=0.0, budgets=(1.0, 1.0)), nm)
    np.testing.assert_allclose(out.p, np.sqrt([x, y]), rtol=1e-9)
    np.testing.assert_allclose(achievable_rates(out.p, g, [0, 1], nm), r, rtol=1e-9)


def test_conspc_margin_zero_is_cpc():
    for seed in range(10):
        g, a, cons = random_instance(np.random.default_rng(seed), 6)
        np.testing.assert_array_equal(conspc_allocate(g, a, cons, NM, margin_db=0.0).p,
                                      cpc_allocate(g, a, cons, NM).p)


def test_conspc_three_db_and_clamp():
    g = np.array([[5e-6, 0.0], [0.0, 5e-6]])
    cons = _cons(r_min=0.3e9, budgets=(1.0, 1.0))
    base = cpc_allocate(g, [0, 1], cons, NM).p
    assert np.all(base * 1.9953 < 0.5)
    np.testing.assert_allclose(conspc_allocate(g, [0, 1], cons, NM).p, base * 10 ** 0.3, rtol=1e-12)
    big = conspc_allocate(g, [0, 1], cons, NM, margin_db=40.0)
    np.testing.assert_array_equal(big.p, 0.5)


def test_rpc_rules():
    cons = _cons(r_min=1e9, budgets=(10.0,))
    prev = PowerAllocation(np.array([0.1, 0.1, 0.1]), np.array([0, 0, 0]), True)
    out = rpc_allocate(prev, [0.9e9, 1.2e9, 1.6e9], cons)
    np.testing.assert_allclose(out.p, [0.1 * 10 ** 0.1, 0.1, 0.1 / 10 ** 0.1], rtol=1e-14)


def test_rpc_static_channel_settles_in_band():
    g = np.array([[3e-6, 0.0], [0.0, 2e-6]])
    a = np.array([0, 1])
    cons = _cons(r_min=0.5e9, budgets=(1.0, 1.0))
    alloc = PowerAllocation(np.full(2, 1e-3), a, True)
    tail = []
    for t in range(200):
        rates = achievable_rates(alloc.p, g, a, NM)
        alloc = rpc_allocate(alloc, rates, cons)
        if t >= 150:
            tail.append(rates)
    tail = np.array(tail)
    # after settling, rates oscillate around the demand without leaving the step band
    need = cpc_allocate(g, a, cons, NM).p
    assert np.all(alloc.p <= need * 10 ** 0.2) and np.all(alloc.p >= need / 10 ** 0.2)
    assert np.all(tail.max(axis=0) >= 0.5e9)


# ---------------------------------------------------------------- learned allocator

def _tiny_labeled(n, seed=0):
    rng = np.random.default_rng(seed)
    sc = []
    for _ in range(n):
        g, a, cons = random_instance(rng, int(rng.integers(1, 3)))
        sc.append((g, a, float(cons.r_min), cons.ap_budget))
    return label_scenarios(sc, 1e-3, lambda b: b[0] / 2, NM, grid_levels=6)


@pytest.fixture(scope="module")
def labeled():
    return _tiny_labeled(96)


def test_constant_labels_are_learned(labeled):
    const = dict(labeled, powers=[np.full(len(p), 0.05) for p in labeled["powers"]])
    m = train_allocator(const, 1e-3, 0.5, TrainConfig(batch_size=32, epochs=150), seed=0)
    assert m.history["train_loss"][-1] < 1e-3
    assert m.history["train_loss"][-1] < m.history["train_loss"][0] / 100


def test_training_loss_decreases(labeled):
    m = train_allocator(labeled, 1e-3, 0.5, TrainConfig(batch_size=32, epochs=20), seed=1)
    assert m.history["train_loss"][-1] < m.history["train_loss"][0]
    with pytest.raises(ValueError):
        train_allocator(_tiny_labeled(8), 1e-3, 0.5, TrainConfig(batch_size=32))


def test_allocate_is_budget_safe_beyond_capacity(labeled):
    m = train_allocator(labeled, 1e-3, 0.5, TrainConfig(batch_size=32, epochs=2), seed=2)
    rng = np.random.default_rng(5)
    for n in (1, 4, 9, 16):
        g, a, cons = random_instance(rng, n)
        out = allocate(m, g, a, cons, NM)
        assert out.p.shape == (n,)
        assert not {"C2", "C3", "C4"} & set(check_constraints(out.p, g, a, cons, NM))


def test_allocate_many_matches_allocate(labeled):
    m = train_allocator(labeled, 1e-3, 0.5, TrainConfig(batch_size=32, epochs=2), seed=2)
    rng = np.random.default_rng(6)
    probs = [random_instance(rng, n) for n in (1, 3, 4, 7, 16)]
    for (g, a, cons), out in zip(probs, allocate_many(m, probs, NM, batch=3)):
        np.testing.assert_allclose(out.p, allocate(m, g, a, cons, NM).p, rtol=1e-12)
    assert allocate_many(m, [], NM) == []


def test_allocator_checkpoint_and_resume(labeled, tmp_path):
    cfg = TrainConfig(batch_size=32, epochs=4)
    full = train_allocator(labeled, 1e-3, 0.5, cfg, seed=3)
    half = train_allocator(labeled, 1e-3, 0.5, cfg, seed=3, epochs=2)
    f = tmp_path / "a.npz"
    save_allocator(f, half)
    model, opt, rng_state = load_allocator(f)
    resumed = train_allocator(labeled, 1e-3, 0.5, cfg, seed=3, epochs=2, resume=(model, opt, rng_state))
    for k in full.cnn.params:
        np.testing.assert_array_equal(full.cnn.params[k], resumed.cnn.params[k])
    assert model.encoding() == half.encoding()


def test_labeled_set_round_trip(labeled, tmp_path):
    f = tmp_path / "l.npz"
    save_labeled_set(f, labeled)
    back = load_labeled_set(f)
    assert len(back["powers"]) == len(labeled["powers"])
    for k in ("gains", "assoc", "powers"):
        for x, y in zip(back[k], labeled[k]):
            np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(back["budgets"], labeled["budgets"])
    bad = tmp_path / "bad.npz"
    np.savez(bad, format=np.array("other"), version=np.array(1))
    with pytest.raises(ValueError):
        load_labeled_set(bad)


def test_constraint_validation():
    with pytest.raises(ValueError):
        PowerConstraints(1e9, 0.5, 0.1, np.ones(1))
    with pytest.raises(ValueError):
        PowerConstraints(-1.0, 0.0, 0.1, np.ones(1))
    with pytest.raises(ValueError):
        PowerConstraints(1.0, 0.0, 0.1, np.zeros(1))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapcsim.mobility import Room
from mapcsim.netstate import (
    UNASSOCIATED,
    ApLayout,
    NoiseModel,
    achievable_rates,
    associate,
    channel_matrix,
    grid_layout,
    interference,
    link_geometry_matrix,
    min_power_for_rate,
    noise_variance,
    predicted_geometry,
    predicted_rate,
    write_channel_snapshot,
)
from mapcsim.optics import BeamParams, ReceiverParams

AP = (2.5, 2.5, 3.0)


def _state(x, y, theta=0.0, phi=0.0):
    return np.array([x, y, 0.0, 0.0, theta, phi])


def test_geometry_directly_below():
    g = predicted_geometry(_state(2.5, 2.5), AP)
    assert (float(g.distance), float(g.radial_offset), float(g.incidence_angle)) == pytest.approx((3.0, 0.0, 0.0), abs=1e-15)


def test_geometry_three_four_five():
    g = predicted_geometry(_state(2.5 + 4.0, 2.5), AP)
    assert float(g.distance) == pytest.approx(5.0, rel=1e-15)
    assert float(g.radial_offset) == pytest.approx(4.0, rel=1e-15)
    # untilted detector: incidence equals the elevation of the line of sight
    assert float(g.incidence_angle) == pytest.approx(math.atan2(4.0, 3.0), rel=1e-12)


def test_geometry_tilt_toward_ap_under_it():
    # under the AP a tilt of theta gives incidence theta whatever the azimuth
    for phi in (0.0, 1.0, -2.5):
        g = predicted_geometry(_state(2.5, 2.5, 0.4, phi), AP)
        assert float(g.incidence_angle) == pytest.approx(0.4, abs=1e-12)


def test_geometry_rejects_coincident():
    with pytest.raises(ValueError):
        predicted_geometry(_state(2.5, 2.5), AP, z_u=3.0)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 2.0))
def test_geometry_identity(x, y, zu):
    g = predicted_geometry(_state(x, y), AP, z_u=zu)
    dz = 3.0 - zu
    assert float(g.distance) ** 2 == pytest.approx(float(g.radial_offset) ** 2 + dz**2, rel=1e-12, abs=1e-12)
    assert float(g.distance) >= dz - 1e-12
    assert float(g.radial_offset) <= float(g.distance)


def test_geometry_matrix_matches_scalar_path():
    rng = np.random.default_rng(0)
    lay = grid_layout()
    s = np.column_stack([rng.uniform(0, 5, 7), rng.uniform(0, 5, 7), np.ones(7), np.zeros(7),
                         rng.uniform(0, 1.2, 7), rng.uniform(-3, 3, 7)])
    m = link_geometry_matrix(s, lay)
    for u in range(7):
        for a in range(lay.n_aps):
            g = predicted_geometry(s[u], lay.positions[a])
            assert m.distance[u, a] == pytest.approx(float(g.distance), rel=1e-14)
            assert m.incidence_angle[u, a] == pytest.approx(float(g.incidence_angle), abs=1e-12)


def test_grid_layout_defaults():
    lay = grid_layout()
    assert lay.n_aps == 12
    assert np.all(lay.positions[:, 2] == 3.0)
    assert np.all((lay.positions[:, :2] > 0) & (lay.positions[:, :2] < 5))
    assert np.allclose(lay.budgets, 1.0)
    with pytest.raises(ValueError):
        ApLayout(np.zeros((1, 3)), [0.0])


def test_channel_matrix_fov_zero_and_nonnegative():
    lay = grid_layout()
    s = np.array([_state(0.3, 0.3, 1.5, math.pi)])  # steep tilt away from the room
    h = channel_matrix(s, lay, BeamParams(), ReceiverParams())
    assert np.all(h >= 0)
    geo = link_geometry_matrix(s, lay)
    assert np.all(h[geo.incidence_angle > ReceiverParams().fov_half_angle] == 0.0)


def test_noise_override():
    assert noise_variance(NoiseModel(fixed_sigma2=1e-14), 1e-3) == 1e-14


def test_noise_zero_power_is_thermal_only():
    nm = NoiseModel()
    assert noise_variance(nm, 0.0) == pytest.approx(nm.thermal, rel=1e-15)


def test_noise_hand_calculation_at_one_microwatt():
    # independent evaluation with the defaults written out
    q, kb = 1.602176634e-19, 1.380649e-23
    B, R, P = 1.5e9, 0.7, 1e-6
    shot = 2 * q * R * P * B
    thermal = 4 * kb * 300 / 50 * 10 ** 0.5 * B
    rin = 10 ** (-15.5) * (R * P) ** 2 * B
    assert noise_variance(NoiseModel(), P) == pytest.approx(shot + thermal + rin, rel=1e-13)
    with pytest.raises(ValueError):
        noise_variance(NoiseModel(), -1.0)


def test_associate_examples():
    assert list(associate([[0.5, 0.2, 0.0]])) == [0]
    assert list(associate([[0.0, 0.0]])) == [UNASSOCIATED]
    assert list(associate([[0.3, 0.3]])) == [0]


@given(st.lists(st.floats(0, 1e-4), min_size=6, max_size=6), st.floats(1e-3, 1e3))
def test_association_scale_invariant_and_argmax(row, k):
    g = np.array(row).reshape(2, 3)
    a = associate(g)
    np.testing.assert_array_equal(a, associate(g * k))
    for u in range(2):
        if a[u] >= 0:
            assert np.all(g[u, a[u]] >= g[u])


def test_rate_zero_power_and_unit_sinr():
    nm = NoiseModel(fixed_sigma2=1e-12)
    g = np.array([[1e-5]])
    assert achievable_rates([0.0], g, [0], nm)[0] == 0.0
    p = math.sqrt(1e-12) / (0.7 * 1e-5)  # SINR exactly 1
    assert achievable_rates([p], g, [0], nm)[0] == pytest.approx(1.5e9, rel=1e-12)


def test_rate_two_user_hand_expansion():
    nm = NoiseModel()
    g = np.array([[4e-6, 1e-6], [0.5e-6, 3e-6]])
    a = np.array([0, 1])
    p = np.array([0.2, 0.35])
    R = 0.7
    # user 0 is served by AP 0, interfered by AP 1 (serving user 1) through its own gain to AP 1
    i0 = (R * g[0, 1] * p[1]) ** 2
    i1 = (R * g[1, 0] * p[0]) ** 2
    s0 = noise_variance(nm, p[0] * g[0, 0])
    s1 = noise_variance(nm, p[1] * g[1, 1])
    expect = [1.5e9 * math.log2(1 + (R * g[0, 0] * p[0]) ** 2 / (s0 + i0)),
              1.5e9 * math.log2(1 + (R * g[1, 1] * p[1]) ** 2 / (s1 + i1))]
    np.testing.assert_allclose(achievable_rates(p, g, a, nm), expect, rtol=1e-13)


def test_victim_mode_uses_own_power():
    g = np.array([[4e-6, 1e-6], [0.5e-6, 3e-6]])
    p = np.array([0.2, 0.35])
    got = interference(p, g, [0, 1], 0.7, mode="victim")
    np.testing.assert_allclose(got, [(0.7 * 1e-6 * 0.2) ** 2, (0.7 * 0.5e-6 * 0.35) ** 2], rtol=1e-14)
    with pytest.raises(ValueError):
        interference(p, g, [0, 1], 0.7, mode="other")


def test_intra_ap_interference_is_nulled():
    g = np.array([[4e-6, 0.0], [3e-6, 0.0]])
    assert np.all(interference([0.3, 0.3], g, [0, 0], 0.7) == 0.0)


def test_unassociated_user_gets_zero_rate():
    g = np.array([[0.0, 0.0], [1e-5, 0.0]])
    r = achievable_rates([0.1, 0.1], g, associate(g), NoiseModel())
    assert r[0] == 0.0 and r[1] > 0


@settings(max_examples=60)
@given(st.floats(1e-3, 0.5), st.floats(1e-3, 0.5), st.floats(1e-3, 0.5))
def test_rate_monotonicity(p_own, p_other, bump):
    nm = NoiseModel()
    g = np.array([[4e-6, 1e-6], [0.5e-6, 3e-6]])
    a = np.array([0, 1])
    base = predicted_rate(p_own, 0, g, a, [p_own, p_other], nm)
    assert predicted_rate(p_own + bump, 0, g, a, [p_own, p_other], nm) > base
    assert predicted_rate(p_own, 0, g, a, [p_own, p_other + bump], nm) <= base


@settings(max_examples=60)
@given(st.floats(1e-7, 1e-4), st.floats(0, 1e-12), st.floats(1e6, 3e9))
def test_min_power_reaches_rate_exactly(h, ivar, rmin):
    nm = NoiseModel()
    p = float(min_power_for_rate(h, ivar, rmin, nm))
    if math.isfinite(p):
        # check against a direct SINR evaluation of the same link
        sinr = (0.7 * p * h) ** 2 / (noise_variance(nm, p * h) + ivar)
        assert 1.5e9 * math.log2(1 + sinr) == pytest.approx(rmin, rel=1e-7)


def test_min_power_edge_cases():
    nm = NoiseModel()
    assert min_power_for_rate(1e-5, 0.0, 0.0, nm) == 0.0
    assert math.isinf(min_power_for_rate(0.0, 0.0, 1e9, nm))
    # RIN ceiling: SINR can never exceed 1 / (RIN * B)
    assert math.isinf(min_power_for_rate(1e-5, 0.0, 1.5e9 * 30, nm))


def test_channel_snapshot_csv(tmp_path):
    f = tmp_path / "snap.csv"
    g = np.array([[1e-5, 0.0], [2e-6, 3e-6]])
    write_channel_snapshot(f, 0, g, associate(g))
    write_channel_snapshot(f, 1, g, associate(g), append=True)
    lines = f.read_text().splitlines()
    assert lines[0] == "slot,user,ap,gain,associated"
    assert len(lines) == 1 + 2 * 4
    assert lines[1].split(",")[-1] == "1"


def test_room_default_is_five_by_five():
    assert (Room().x, Room().y, Room().z) == (5.0, 5.0, 3.0)

import math
import warnings

import numpy as np
import pytest

from spcawsr.numerics import DomainError, RngStream
from spcawsr.system import (
    ChannelSet,
    CsiErrorParams,
    Geometry,
    JakesParams,
    Schedule,
    SystemConfig,
    apply_csi_error,
    draw_scenario,
    evolve_channels,
    generate_channels,
    generate_user_channels,
    jakes_rho,
    path_gain,
    place_scenario,
    random_schedule,
)


def test_config_validation():
    with pytest.raises(DomainError):
        SystemConfig.make(0, 1, 1, 1)
    with pytest.raises(DomainError):
        SystemConfig(M=1, K=1, N=1, N_Tx=1, p_max=(0.0,), weights=1.0)
    with pytest.raises(DomainError):
        SystemConfig.make(1, 2, 1, 1, weights=[1.0, 0.0])
    with pytest.raises(DomainError):
        SystemConfig.make(1, 1, 1, 1, d_min=0.0)
    cfg = SystemConfig.make(2, 3, 4, 2, 10.0)
    assert cfg.p_max == pytest.approx((10.0, 10.0))
    assert cfg.weights.shape == (2, 3)
    assert cfg.T == 8
    assert cfg.with_power_dbw(0.0).p_max == pytest.approx((1.0, 1.0))


def test_bs_layout():
    geo = place_scenario(SystemConfig.make(2, 3, 1, 1), RngStream(0))
    np.testing.assert_array_equal(geo.bs_positions, [[0, 0], [1000, 0]])


@pytest.mark.parametrize("seed", range(5))
def test_min_distance(seed):
    cfg = SystemConfig.make(3, 20, 1, 1, d_min=35.0)
    assert place_scenario(cfg, RngStream(seed)).distances().min() >= 35.0


def test_geometry_replay():
    cfg = SystemConfig.make(2, 4, 1, 1)
    a = place_scenario(cfg, RngStream(3, 7))
    b = place_scenario(cfg, RngStream(3, 7))
    np.testing.assert_array_equal(a.user_positions, b.user_positions)


def test_path_gain_examples():
    assert path_gain(200.0) == pytest.approx(1.0)
    assert path_gain(1000.0) == pytest.approx(0.2 ** 3.5)
    assert path_gain(1000.0) == pytest.approx(math.exp(3.5 * math.log(0.2)), rel=1e-12)
    assert path_gain(1000.0) == pytest.approx(3.5777e-3, rel=1e-4)


def _users_at(distance, count):
    bs = np.zeros((1, 2))
    users = np.zeros((1, count, 2))
    users[..., 0] = distance
    return Geometry(bs, users)


def test_shadowing_statistics():
    cfg = SystemConfig.make(1, 10_000, 1, 1)
    uc = generate_user_channels(cfg, _users_at(200.0, 10_000), RngStream(4))
    shadow_db = 10 * np.log10(uc.scale.ravel())  # path gain is exactly 1 at 200 m
    assert -0.25 <= shadow_db.mean() <= 0.25
    assert shadow_db.std() == pytest.approx(8.0, rel=0.03)


def test_shadowing_is_frequency_flat():
    cfg = SystemConfig.make(2, 2, 8, 2)
    scn = draw_scenario(cfg, RngStream(5))
    ch = scn.channels
    # the per-link scale is shared by all subcarriers serving the same user
    for m in range(2):
        for n in range(8):
            k = scn.schedule.user(m, n)
            np.testing.assert_allclose(ch.scale[m, n], scn.users.scale[m, k])


def test_channel_set_complete_and_finite():
    cfg = SystemConfig.make(3, 2, 4, 2)
    scn = draw_scenario(cfg, RngStream(6))
    assert scn.channels.h.shape == (3, 4, 3, 2)
    assert np.all(np.isfinite(scn.channels.h))
    with pytest.raises(DomainError):
        ChannelSet(np.full((1, 1, 1, 1), np.nan))
    with pytest.raises(DomainError):
        ChannelSet(np.zeros((2, 1, 1, 1)))


def test_generate_channels_matches_select():
    cfg = SystemConfig.make(2, 2, 3, 2)
    geo = place_scenario(cfg, RngStream(7, 0))
    sched = random_schedule(cfg, RngStream(7, 1))
    ch = generate_channels(cfg, geo, sched, RngStream(7, 2))
    uc = generate_user_channels(cfg, geo, RngStream(7, 2))
    m, n, j = 1, 2, 0
    k = sched.user(m, n)
    np.testing.assert_allclose(ch.h[m, n, j], uc.scale[m, k, j] * uc.fading[m, k, j, n])


def test_distance_guard():
    cfg = SystemConfig.make(1, 1, 1, 1)
    with pytest.raises(DomainError):
        generate_user_channels(cfg, _users_at(10.0, 1), RngStream(0))


@pytest.mark.parametrize("fdt, expected, tol", [(0.0, 1.0, 0.0), (0.01, 0.9990133, 1e-7),
                                                (0.001, 0.99999013, 1e-8)])
def test_jakes_examples(fdt, expected, tol):
    assert jakes_rho(JakesParams(f_D=fdt, T_f=1.0)) == pytest.approx(expected, abs=tol)


def test_jakes_validation():
    with pytest.raises(DomainError):
        JakesParams(f_D=-1.0, T_f=1.0)
    with pytest.raises(DomainError):
        JakesParams(f_D=1.0, T_f=0.0)


def test_frozen_channel():
    cfg = SystemConfig.make(2, 2, 2, 2)
    ch = draw_scenario(cfg, RngStream(8)).channels
    out = evolve_channels(ch, JakesParams(0.0, 1.0), RngStream(8, 1))
    np.testing.assert_array_equal(out.h, ch.h)


def _many_entries(seed):
    cfg = SystemConfig.make(1, 1, 100, 100)
    return draw_scenario(cfg, RngStream(seed)).channels  # 10^4 fading entries


def test_memoryless_limit():
    ch = _many_entries(9)
    # f_D T_f at the first zero of J0 gives rho ~ 0
    params = JakesParams(f_D=2.404825557695773 / (2 * math.pi), T_f=1.0)
    assert abs(jakes_rho(params)) < 1e-9
    out = evolve_channels(ch, params, RngStream(9, 1))
    a, b = ch.fading.ravel(), out.fading.ravel()
    corr = abs(np.vdot(a, b)) / math.sqrt(np.vdot(a, a).real * np.vdot(b, b).real)
    assert corr < 3 / math.sqrt(a.size)


def test_evolution_preserves_marginal():
    ch = _many_entries(10)
    out = evolve_channels(ch, JakesParams(1.0, 0.05), RngStream(10, 1))
    assert 0.97 <= np.mean(np.abs(out.fading) ** 2) <= 1.03
    np.testing.assert_allclose(out.h, out.scale[..., None] * out.fading)


def test_evolution_needs_generated_set():
    with pytest.raises(DomainError):
        evolve_channels(ChannelSet(np.ones((1, 1, 1, 1))), JakesParams(1.0, 0.01), RngStream(0))


def test_csi_error_zero_is_copy():
    ch = draw_scenario(SystemConfig.make(2, 2, 2, 2), RngStream(11)).channels
    out = apply_csi_error(ch, CsiErrorParams(0.0), RngStream(11, 1))
    np.testing.assert_array_equal(out.h, ch.h)
    assert out.h is not ch.h


def test_csi_error_statistics():
    ch = _many_entries(12)
    out = apply_csi_error(ch, CsiErrorParams(0.01), RngStream(12, 1))
    e = (out.h - ch.h).ravel()
    assert 0.0097 <= np.mean(np.abs(e) ** 2) <= 0.0103
    # independence between entries: lag-1 cross-correlation of the error sequence
    cross = np.mean(e[:-1] * np.conj(e[1:])) / 0.01
    assert abs(cross) < 3 / math.sqrt(e.size)
    np.testing.assert_array_equal(ch.h, _many_entries(12).h)  # input untouched


def test_csi_error_vanishing_limit():
    ch = draw_scenario(SystemConfig.make(2, 2, 2, 2), RngStream(13)).channels
    diffs = [np.abs(apply_csi_error(ch, CsiErrorParams(s), RngStream(13, 1)).h - ch.h).max()
             for s in (1e-2, 1e-6, 1e-10)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-4
    assert CsiErrorParams.from_db(-math.inf).sigma_e_sq == 0.0
    with pytest.raises(DomainError):
        CsiErrorParams(-1.0)


def test_schedule_single_user():
    sched = random_schedule(SystemConfig.make(2, 1, 5, 1), RngStream(14))
    assert np.all(sched.assignment == 0)


def test_schedule_permutation():
    sched = random_schedule(SystemConfig.make(3, 6, 6, 1), RngStream(15))
    for row in sched.assignment:
        assert sorted(row) == list(range(6))


def test_schedule_two_users_64():
    sched = random_schedule(SystemConfig.make(2, 2, 64, 1), RngStream(16))
    assert sched.assignment.shape == (2, 64)
    for row in sched.assignment:
        assert set(row) == {0, 1}


def test_schedule_more_users_than_subcarriers():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sched = random_schedule(SystemConfig.make(1, 5, 3, 1), RngStream(17))
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    assert len(set(sched.assignment[0])) == 3


def test_schedule_validation():
    with pytest.raises(DomainError):
        Schedule(np.zeros(3))

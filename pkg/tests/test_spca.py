import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcawsr.numerics import DomainError, RngStream
from spcawsr.oracles import waterfilling_single_cell
from spcawsr.rates import BeamformerSet, build_index_set, weighted_sum_rate
from spcawsr.spca import (
    TRACE_HEADER,
    SpcaError,
    SpcaSettings,
    build_subproblem,
    initialize,
    kkt_activity_report,
    spca_iterate,
    state_from_init,
    surrogate_c3,
    true_point,
    write_trace_csv,
)
from spcawsr.system import ChannelSet, Schedule, SystemConfig, draw_scenario

TIGHT = SpcaSettings(epsilon=1e-6, relative_stop=True, n_iter_max=200)


def _single_cell(gains, p_max, n_tx=1):
    N = len(gains)
    h = np.zeros((1, N, 1, n_tx), dtype=complex)
    h[0, :, 0, 0] = np.sqrt(gains)
    cfg = SystemConfig(M=1, K=1, N=N, N_Tx=n_tx, p_max=(p_max,), weights=1.0)
    return ChannelSet(h), Schedule(np.zeros((1, N), dtype=int)), cfg


def _start(channels, schedule, cfg, settings=None):
    settings = settings or SpcaSettings()
    idx = build_index_set(cfg, schedule)
    init = initialize(channels, schedule, cfg, idx, settings)
    wsr0 = weighted_sum_rate(channels, init.beams0, cfg, idx).wsr_bits
    return idx, init, state_from_init(init, idx.weights(cfg), wsr0)


# -- surrogate ---------------------------------------------------------------

@pytest.mark.parametrize("r, beta, phi, expected", [(2, 1, 1, 1.0), (2, 1, 2, 1.25), (1, 3, 1, 4.5)])
def test_surrogate_examples(r, beta, phi, expected):
    assert surrogate_c3(r, beta, phi) == pytest.approx(expected)
    assert surrogate_c3(r, beta, phi) >= beta * math.sqrt(r - 1)


@given(st.floats(1.0, 1e6), st.floats(0.0, 1e3), st.floats(1e-6, 1e6))
def test_surrogate_upper_bound(r, beta, phi):
    lhs = surrogate_c3(r, beta, phi)
    rhs = beta * math.sqrt(r - 1.0)
    assert lhs >= rhs - 1e-12 * max(1.0, rhs)


@given(st.floats(1.001, 1e4), st.floats(1e-2, 1e2))
def test_surrogate_tight_at_fixed_point(r, beta):
    phi = math.sqrt(r - 1.0) / beta
    assert surrogate_c3(r, beta, phi) == pytest.approx(beta * math.sqrt(r - 1.0), rel=1e-12)


def test_surrogate_vectorized():
    out = surrogate_c3(np.array([2.0, 2.0]), np.array([1.0, 1.0]), np.array([1.0, 2.0]))
    np.testing.assert_allclose(out, [1.0, 1.25])


# -- initialization -----------------------------------------------------------

def test_initial_beam_formula():
    h = np.zeros((1, 2, 1, 2), dtype=complex)
    h[0, 0, 0] = (3, 4)
    h[0, 1, 0] = (1, 0)
    cfg = SystemConfig(M=1, K=1, N=2, N_Tx=2, p_max=(8.0,), weights=1.0)
    ch, sched = ChannelSet(h), Schedule(np.zeros((1, 2), dtype=int))
    init = initialize(ch, sched, cfg, build_index_set(cfg, sched))
    np.testing.assert_allclose(init.beams0.w[0, 0], [1.2, 1.6])
    np.testing.assert_allclose(np.sum(np.abs(init.beams0.w[0]) ** 2, axis=-1), [4.0, 4.0])
    # second tuple: |h^H w| = 2 with no interference
    assert init.beta0[1] == pytest.approx(1.0)
    assert init.r0[1] == pytest.approx(5.0)
    assert init.x0[1] == pytest.approx(init.r0[1])
    assert init.phi1[1] == pytest.approx(math.sqrt(init.r0[1] - 1) / init.beta0[1])


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("variant", ["WGM", "EXP"])
def test_initial_point_feasible(seed, variant):
    cfg = SystemConfig.make(3, 2, 3, 2, 10.0, weights=[[0.2, 0.5], [0.3, 0.6], [0.1, 0.4]])
    scn = draw_scenario(cfg, RngStream(21, seed))
    s = SpcaSettings(variant=variant)
    idx, init, state = _start(scn.channels, scn.schedule, cfg, s)
    assert np.all(state.phi > 0) and np.all(state.beta >= 1.0 - 1e-12)
    prog = build_subproblem(state, scn.channels, cfg, idx, s)
    x = prog.point(state.beams, state.beta, state.gamma)
    assert prog.residuals(x).max() <= 1e-8


def test_zero_channel_is_degenerate():
    ch, sched, cfg = _single_cell([1.0, 0.0, 0.5], 3.0)
    init = initialize(ch, sched, cfg, build_index_set(cfg, sched))
    np.testing.assert_array_equal(init.degenerate, [False, True, False])
    _, st_ = spca_iterate(ch, sched, cfg, TIGHT)
    rep = kkt_activity_report(st_, ch, cfg)
    assert rep.degenerate[1] and not rep.flagged[1]
    ref = waterfilling_single_cell([1.0, 0.5], 3.0)[1]
    assert st_.objective_trace[-1] == pytest.approx(ref, rel=5e-3)


# -- subproblem structure ---------------------------------------------------------

def test_subproblem_counts_two_cells():
    cfg = SystemConfig.make(2, 1, 1, 1, 10.0)
    scn = draw_scenario(cfg, RngStream(22))
    idx, _, state = _start(scn.channels, scn.schedule, cfg)
    prog = build_subproblem(state, scn.channels, cfg, idx, SpcaSettings())
    assert prog.count("power") == 2
    assert prog.count("c2") == 2
    assert prog.count("c3") == 2
    assert prog.count("c4") == 2
    assert prog.g is not None and prog.count("tower") >= 1
    # beta, the constant, and one complex interference term as two reals
    assert [c.dim for c in prog.constraints if c.label == "c2"] == [4, 4]
    assert [c.kind for c in prog.constraints if c.label == "c3"] == ["rotated_soc"] * 2


def test_exp_variant_structure():
    cfg = SystemConfig.make(2, 1, 2, 1, 10.0)
    scn = draw_scenario(cfg, RngStream(23))
    s = SpcaSettings(variant="EXP")
    idx, _, state = _start(scn.channels, scn.schedule, cfg, s)
    prog = build_subproblem(state, scn.channels, cfg, idx, s)
    assert prog.count("exp") == 4 and prog.g is None


def test_single_cell_beta_is_one():
    cfg = SystemConfig.make(1, 1, 4, 2, 10.0)
    scn = draw_scenario(cfg, RngStream(24))
    _, st_ = spca_iterate(scn.channels, scn.schedule, cfg)
    np.testing.assert_allclose(st_.last_beta_raw, 1.0, atol=1e-6)
    np.testing.assert_allclose(st_.beta, 1.0, atol=1e-12)


# -- convergence examples --------------------------------------------------------------

def test_symmetric_single_cell():
    ch, sched, cfg = _single_cell([1.0, 1.0], 2.0)
    beams, st_ = spca_iterate(ch, sched, cfg, TIGHT)
    assert st_.objective_trace[-1] == pytest.approx(2.0, rel=5e-3)
    np.testing.assert_allclose(np.abs(beams.w[0, :, 0]) ** 2, [1.0, 1.0], rtol=2e-2)


def test_weak_channel_shut_off():
    ch, sched, cfg = _single_cell([1.0, 0.25], 2.0)
    _, st_ = spca_iterate(ch, sched, cfg, TIGHT)
    assert st_.objective_trace[-1] == pytest.approx(math.log2(3.0), rel=5e-3)


@pytest.mark.parametrize("seed", range(6))
def test_trace_monotone_and_feasible_chain(seed):
    cfg = SystemConfig.make(2, 2, 3, 2, 10.0, weights=[[0.3, 0.5], [0.2, 0.6]])
    scn = draw_scenario(cfg, RngStream(25, seed))
    s = SpcaSettings(epsilon=1e-9, n_iter_max=6)
    idx = build_index_set(cfg, scn.schedule)
    _, full = spca_iterate(scn.channels, scn.schedule, cfg, s)
    assert np.min(np.diff(full.objective_trace)) >= -1e-5
    # each iterate is feasible for the next subproblem
    for k in range(1, full.iteration):
        _, part = spca_iterate(scn.channels, scn.schedule, cfg, SpcaSettings(epsilon=1e-9, n_iter_max=k))
        assert part.objective_trace == full.objective_trace[:k + 1]
        prog = build_subproblem(part, scn.channels, cfg, idx, s)
        assert prog.residuals(prog.point(part.beams, part.beta, part.gamma)).max() <= 1e-7


def test_iterates_respect_power_budget():
    cfg = SystemConfig.make(3, 2, 4, 2, 10.0)
    scn = draw_scenario(cfg, RngStream(26))
    beams, _ = spca_iterate(scn.channels, scn.schedule, cfg)
    assert np.all(beams.power() <= np.asarray(cfg.p_max) + 1e-6)


def test_fixed_point_gap_vanishes():
    cfg = SystemConfig.make(2, 1, 2, 2, 10.0)
    scn = draw_scenario(cfg, RngStream(27))
    _, st_ = spca_iterate(scn.channels, scn.schedule, cfg, TIGHT)
    assert st_.converged
    beta, gamma, _ = true_point(scn.channels, st_.beams)
    live = gamma > 1e-6
    beta, gamma = beta[live], gamma[live]
    phi = np.sqrt(gamma) / beta
    np.testing.assert_allclose(surrogate_c3(1 + gamma, beta, phi), beta * np.sqrt(gamma), rtol=1e-12)
    rep = kkt_activity_report(st_, scn.channels, cfg)
    assert rep.c4_residual.max() <= 1e-6
    assert rep.ok


def test_phase_invariance_of_result():
    cfg = SystemConfig.make(2, 2, 3, 2, 10.0)
    scn = draw_scenario(cfg, RngStream(28))
    beams, _ = spca_iterate(scn.channels, scn.schedule, cfg)
    idx = build_index_set(cfg, scn.schedule)
    base = weighted_sum_rate(scn.channels, beams, cfg, idx).wsr_bits
    theta = np.random.default_rng(0).uniform(0, 2 * np.pi, (2, 3))
    rot = weighted_sum_rate(scn.channels, beams.rotated(theta), cfg, idx).wsr_bits
    assert abs(rot - base) <= 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_variants_agree(seed):
    cfg = SystemConfig.make(2, 2, 2, 2, 10.0, weights=np.array([[8, 20], [33, 11]]) / 64)
    scn = draw_scenario(cfg, RngStream(29, seed))
    a = spca_iterate(scn.channels, scn.schedule, cfg, SpcaSettings(variant="WGM"))[1].objective_trace[-1]
    b = spca_iterate(scn.channels, scn.schedule, cfg, SpcaSettings(variant="EXP"))[1].objective_trace[-1]
    assert a == pytest.approx(b, rel=1e-2)


def test_deterministic():
    cfg = SystemConfig.make(2, 2, 3, 2, 10.0)
    scn = draw_scenario(cfg, RngStream(30))
    a = spca_iterate(scn.channels, scn.schedule, cfg)[1]
    b = spca_iterate(scn.channels, scn.schedule, cfg)[1]
    assert a.objective_trace == b.objective_trace
    assert np.array_equal(a.beams.w, b.beams.w)


def test_stop_rules():
    cfg = SystemConfig.make(2, 2, 3, 2, 10.0)
    scn = draw_scenario(cfg, RngStream(31))
    _, st_ = spca_iterate(scn.channels, scn.schedule, cfg, SpcaSettings(n_iter_max=1))
    assert st_.iteration == 1 and not st_.converged and len(st_.objective_trace) == 2
    _, st_ = spca_iterate(scn.channels, scn.schedule, cfg, SpcaSettings(epsilon=1e3))
    assert st_.converged and st_.iteration == 2  # never judged on the first solve
    _, st_ = spca_iterate(scn.channels, scn.schedule, cfg, SpcaSettings(epsilon=1e-3, relative_stop=True))
    tr = st_.objective_trace
    assert tr[-1] - tr[-2] <= 1e-3 * tr[-1]


def test_retirement_disabled_on_healthy_instance():
    # no tuple is ever near zero SINR at symmetric full-rate optima
    ch, sched, cfg = _single_cell([1.0, 1.0], 2.0)
    a = spca_iterate(ch, sched, cfg)[1].objective_trace
    b = spca_iterate(ch, sched, cfg, SpcaSettings(retire_sinr=0.0))[1].objective_trace
    assert a == b


def test_settings_validation():
    with pytest.raises(DomainError):
        SpcaSettings(epsilon=0.0)
    with pytest.raises(DomainError):
        SpcaSettings(n_iter_max=0)
    with pytest.raises(DomainError):
        SpcaSettings(variant="SOCP")
    with pytest.raises(DomainError):
        SpcaSettings(retire_sinr=-1.0)


def test_inner_failure_raises():
    cfg = SystemConfig.make(2, 2, 3, 2, 10.0)
    scn = draw_scenario(cfg, RngStream(32))
    with pytest.raises(SpcaError) as err:
        spca_iterate(scn.channels, scn.schedule, cfg, SpcaSettings(inner_max_iters=5))
    assert err.value.iteration == 1


def test_kkt_needs_a_solve():
    ch, sched, cfg = _single_cell([1.0], 1.0)
    _, _, state = _start(ch, sched, cfg)
    with pytest.raises(SpcaError):
        kkt_activity_report(state, ch, cfg)


def test_trace_csv(tmp_path):
    cfg = SystemConfig.make(1, 1, 2, 1, 10.0)
    scn = draw_scenario(cfg, RngStream(33))
    _, st_ = spca_iterate(scn.channels, scn.schedule, cfg)
    path = tmp_path / "trace.csv"
    write_trace_csv(st_, path)
    lines = path.read_text().splitlines()
    assert lines[0] == TRACE_HEADER
    assert lines[1].split(",")[:2] == ["iteration", "wsr_bits"]
    assert len(lines) == 2 + len(st_.objective_trace)

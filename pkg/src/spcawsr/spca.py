"""Sequential parametric convex approximation for weighted sum-rate beamforming.

Per tuple ``t`` the nonconvex rate coupling ``beta_t * sqrt(r_t - 1) <= Re(h^H w)``
is replaced by its AM-GM upper bound ``((r-1)/phi + phi beta^2) / 2``, which is
tight when ``phi = sqrt(r-1)/beta``. Each outer iteration solves the convex
subproblem at the current ``phi`` and moves ``phi`` to the equality value of
the new point.

Subproblem variables are rescaled around the current point so that all of
them are O(1) regardless of path loss:

* ``w_hat = w / sqrt(p_max[m])``
* ``b = beta / beta_ref``
* ``r = 1 + gamma_ref * q`` with ``gamma_ref = (phi beta_ref)^2``
* rate leaves ``l = r / r_ref``

With these, the surrogate constraint reads ``q + b^2 <= 2 Re(h^H w) / x_ref``,
``x_ref = phi beta_ref^2``, a rotated cone.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .conic import (
    Affine,
    ConicProgram,
    WarmStart,
    add_exp_epigraph,
    add_geomean_tower,
    fill_tower_values,
    rationalize_weights,
    solve,
)
from .conic.solver import MAX_ITERS, OPTIMAL
from .numerics import DomainError, RngStream
from .rates import BeamformerSet, IndexSet, build_index_set, inner_products, weighted_sum_rate
from .system import ChannelSet, Schedule, SystemConfig

log = logging.getLogger(__name__)

VARIANTS = ("WGM", "EXP")
TRACE_HEADER = "# spcawsr trace v1"


class SpcaError(RuntimeError):
    def __init__(self, message, iteration=None, status=None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message} (status={status})")
        self.iteration = iteration
        self.status = status


class InitializationError(SpcaError):
    pass


@dataclass(frozen=True)
class SpcaSettings:
    epsilon: float = 0.01
    n_iter_max: int = 20
    variant: str = "WGM"
    inner_tolerance: float = 1e-8
    r_floor: float = 1e-8
    inner_max_iters: int = 50000
    weight_denominator: int = 64
    check_feasibility: bool = True
    warm_start: bool = False  # cold starts converge faster on these subproblems
    relative_stop: bool = False  # compare the gain against epsilon * |WSR| instead of epsilon bits
    retire_sinr: float = 1e-6  # tuples whose SINR falls to this level get their rate fixed at 0; 0 disables

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.n_iter_max < 1:
            raise DomainError("n_iter_max must be >= 1")
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}")
        if not (self.inner_tolerance > 0 and self.r_floor > 0):
            raise DomainError("inner_tolerance and r_floor must be positive")
        if self.retire_sinr < 0:
            raise DomainError("retire_sinr must be >= 0")


def surrogate_c3(r, beta, phi):
    """AM-GM upper bound ``((r-1)/phi + phi beta^2) / 2`` of ``beta sqrt(r-1)``."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise DomainError("phi must be positive")
    out = 0.5 * ((np.asarray(r, dtype=float) - 1.0) / phi + phi * np.asarray(beta, dtype=float) ** 2)
    return float(out) if out.ndim == 0 else out


def true_point(channels: ChannelSet, beams: BeamformerSet):
    """Tight ``(beta, gamma, |h^H w|)`` per tuple for the given beams."""
    g2 = np.abs(inner_products(channels, beams)) ** 2
    idx = np.arange(g2.shape[0])
    sig = g2[idx, :, idx].reshape(-1)
    interf = (g2.sum(axis=2) - g2[idx, :, idx]).reshape(-1)
    beta = np.sqrt(1.0 + interf)
    return beta, sig / beta ** 2, np.sqrt(sig)


def align_phases(channels: ChannelSet, beams: BeamformerSet) -> BeamformerSet:
    """Rotate every beam so its serving inner product is real and nonnegative."""
    G = inner_products(channels, beams)
    idx = np.arange(G.shape[0])
    g = G[idx, :, idx]
    phase = np.where(np.abs(g) > 0, np.exp(-1j * np.angle(g)), 1.0)
    return BeamformerSet(beams.w * phase[..., None])


def clip_power(beams: BeamformerSet, p_max) -> BeamformerSet:
    """Scale down any BS whose power exceeds its budget."""
    p = beams.power()
    scale = np.minimum(1.0, np.sqrt(np.asarray(p_max) / np.maximum(p, 1e-300)))
    if np.all(scale == 1.0):
        return beams
    return BeamformerSet(beams.w * scale[:, None, None])


@dataclass
class InitState:
    beams0: BeamformerSet
    beta0: np.ndarray
    r0: np.ndarray
    x0: np.ndarray
    s0: np.ndarray
    phi1: np.ndarray
    degenerate: np.ndarray


def initialize(channels: ChannelSet, schedule: Schedule, config: SystemConfig,
               index_set: IndexSet, settings: SpcaSettings | None = None) -> InitState:
    """Channel-matched beams and the tight starting values of ``beta``, ``r`` and ``phi``."""
    settings = settings or SpcaSettings()
    hs = channels.serving()  # (M, N, N_Tx)
    norm = np.linalg.norm(hs, axis=-1)
    degenerate = (norm == 0).reshape(-1)
    if np.any(degenerate):
        log.warning("%d tuple(s) with a zero serving channel; their rate is floored", degenerate.sum())
    amp = np.sqrt(np.asarray(config.p_max) / config.N)[:, None, None]
    w = amp * np.divide(hs, norm[..., None], out=np.zeros_like(hs), where=norm[..., None] > 0)
    beams = BeamformerSet(w)
    beta0, gamma0, _ = true_point(channels, beams)
    r0 = np.maximum(1.0 + gamma0, 1.0 + settings.r_floor)
    alpha = index_set.weights(config)
    x0 = r0 ** (1.0 / alpha)
    s0 = np.log(x0)
    phi1 = np.sqrt(np.maximum(r0 - 1.0, settings.r_floor)) / beta0
    if not (np.all(np.isfinite(phi1)) and np.all(phi1 > 0)):
        raise InitializationError("non-finite initial surrogate parameter")
    return InitState(beams, beta0, r0, x0, s0, phi1, degenerate)


@dataclass
class SpcaState:
    """Iteration state. ``s`` is ``ln(r)/alpha`` so that ``exp(alpha s) = r``."""

    alpha: np.ndarray
    s: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    beams: BeamformerSet
    degenerate: np.ndarray
    iteration: int = 0
    objective_trace: list = field(default_factory=list)
    solver_iters: list = field(default_factory=list)
    solver_status: list = field(default_factory=list)
    max_c2_slack: list = field(default_factory=list)
    max_c3_gap: list = field(default_factory=list)
    iter_time_s: list = field(default_factory=list)
    converged: bool = False
    # raw subproblem solution of the last solve and the phi it used
    last_phi: np.ndarray | None = None
    last_beams_raw: BeamformerSet | None = None
    last_beta_raw: np.ndarray | None = None
    last_r_raw: np.ndarray | None = None
    last_dual: np.ndarray | None = None

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.alpha * self.s)

    @property
    def gamma(self) -> np.ndarray:
        return np.expm1(self.alpha * self.s)

    @property
    def solves(self) -> int:
        return len(self.objective_trace) - 1


def state_from_init(init: InitState, alpha: np.ndarray, wsr0: float) -> SpcaState:
    return SpcaState(alpha=alpha, s=init.s0.copy(), beta=init.beta0.copy(), phi=init.phi1.copy(),
                     beams=init.beams0, degenerate=init.degenerate, objective_trace=[wsr0],
                     solver_iters=[0], solver_status=["init"], max_c2_slack=[0.0], max_c3_gap=[0.0],
                     iter_time_s=[0.0])


def _inner_affine(h: np.ndarray, w_idx: np.ndarray, scale: float):
    """Affine ``(Re, Im)`` of ``scale * h^H w`` with ``w = x[w_idx[:, 0]] + j x[w_idx[:, 1]]``."""
    hr, hi = h.real * scale, h.imag * scale
    idx = np.concatenate((w_idx[:, 0], w_idx[:, 1]))
    re = Affine(idx, np.concatenate((hr, hi)))
    im = Affine(idx, np.concatenate((-hi, hr)))
    return re, im


class SpcaSubproblem(ConicProgram):
    """Convex subproblem at fixed ``phi`` plus the maps to and from physical quantities."""

    def __init__(self, variant: str):
        super().__init__()
        self.variant = variant

    def point(self, beams: BeamformerSet, beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """Solver vector for physical ``(w, beta, gamma)``; auxiliary variables made tight."""
        x = np.zeros(self.num_vars)
        w = beams.w / self.sqrt_p[:, None, None]
        x[self.w_idx[..., 0]] = w.real
        x[self.w_idx[..., 1]] = w.imag
        x[self.b_idx] = beta / self.beta_ref
        q = np.where(self.degenerate, 0.0, gamma / self.gamma_ref)
        x[self.q_idx] = q
        if self.u_idx is not None:
            leaf = (1.0 + self.gamma_ref * q) / self.r_ref
            x[self.u_idx] = np.log(leaf[self.active])
        return fill_tower_values(self, x)

    def beams_from(self, x: np.ndarray) -> BeamformerSet:
        w = x[self.w_idx[..., 0]] + 1j * x[self.w_idx[..., 1]]
        return BeamformerSet(w * self.sqrt_p[:, None, None])

    def beta_from(self, x: np.ndarray) -> np.ndarray:
        return x[self.b_idx] * self.beta_ref

    def r_from(self, x: np.ndarray) -> np.ndarray:
        return 1.0 + self.gamma_ref * x[self.q_idx]


def build_subproblem(state: SpcaState, channels: ChannelSet, config: SystemConfig,
                     index_set: IndexSet, settings: SpcaSettings) -> SpcaSubproblem:
    M, N, A = channels.M, channels.N, channels.N_Tx
    T = M * N
    prog = SpcaSubproblem(settings.variant)
    h = channels.h
    sqrt_p = np.sqrt(np.asarray(config.p_max))
    beta_ref = np.maximum(state.beta, 1.0)
    phi = state.phi
    gamma_ref = (phi * beta_ref) ** 2
    x_ref = phi * beta_ref ** 2
    r_ref = np.maximum(state.r, 1.0)
    active = ~state.degenerate

    w_idx = prog.add_variables(M * N * A * 2, "w").reshape(M, N, A, 2)
    b_idx = prog.add_variables(T, "beta")
    q_idx = prog.add_variables(T, "q")

    one = Affine.constant(1.0)
    for m in range(M):
        prog.add_soc([one] + [Affine.var(i) for i in w_idx[m].reshape(-1)], "power")
    for t in range(T):
        m, n = divmod(t, N)
        rows = [Affine.var(b_idx[t]), Affine.constant(1.0 / beta_ref[t])]
        for j in range(M):
            if j != m:
                rows.extend(_inner_affine(h[m, n, j], w_idx[j, n], sqrt_p[j] / beta_ref[t]))
        prog.add_soc(rows, "c2")
    leaves = []
    for t in range(T):
        q = Affine.var(q_idx[t])
        if not active[t]:
            prog.add_equality(q, 0.0, "degenerate")
            continue
        m, n = divmod(t, N)
        re, im = _inner_affine(h[m, n, m], w_idx[m, n], sqrt_p[m] / x_ref[t])
        prog.add_rotated_soc([re - 0.5 * q, one, Affine.var(b_idx[t])], "c3")
        prog.add_equality(im, 0.0, "c4")
        prog.add_nonneg(q, "rate")
        leaves.append((q * gamma_ref[t] + 1.0) / r_ref[t])

    alpha = state.alpha[active]
    prog.u_idx = None
    prog.g = None
    if settings.variant == "WGM":
        weights = rationalize_weights(alpha, settings.weight_denominator)
        prog.g = add_geomean_tower(prog, leaves, weights, "tower")
        prog.maximize(Affine.var(prog.g))
    else:
        prog.u_idx = prog.add_variables(len(leaves), "u")
        for u, leaf in zip(prog.u_idx, leaves):
            add_exp_epigraph(prog, int(u), leaf, "exp")
        prog.maximize(Affine(prog.u_idx, alpha / alpha.sum()))

    prog.w_idx, prog.b_idx, prog.q_idx = w_idx, b_idx, q_idx
    prog.sqrt_p, prog.beta_ref, prog.gamma_ref = sqrt_p, beta_ref, gamma_ref
    prog.x_ref, prog.r_ref, prog.phi = x_ref, r_ref, phi.copy()
    prog.degenerate, prog.active = state.degenerate.copy(), active
    return prog


def _solve_step(prog: SpcaSubproblem, state: SpcaState, settings: SpcaSettings, it: int):
    x_start = prog.point(state.beams, state.beta, state.gamma)
    if settings.check_feasibility:
        worst = float(np.max(prog.residuals(x_start)))
        if worst > 1e-8:
            if it == 1:
                raise InitializationError(f"initial point violates the first subproblem by {worst:.3g}")
            log.debug("iteration %d: previous iterate violates the subproblem by %.3g", it, worst)
    warm = WarmStart(x_start, state.last_dual) if settings.warm_start else None
    sol = solve(prog, settings.inner_tolerance, settings.inner_max_iters, warm_start=warm)
    if sol.status != OPTIMAL:
        tol = settings.inner_tolerance
        if not (sol.status == MAX_ITERS and max(sol.primal_residual, sol.dual_residual, sol.gap) <= 1e3 * tol
                and np.all(np.isfinite(sol.primal))):
            raise SpcaError("inner conic solve failed", it, sol.status)
        log.warning("iteration %d: inner solve hit the iteration cap (rp=%.1e rd=%.1e gap=%.1e)",
                    it, sol.primal_residual, sol.dual_residual, sol.gap)
    return sol


def spca_iterate(channels: ChannelSet, schedule: Schedule, config: SystemConfig,
                 settings: SpcaSettings | None = None, stream: RngStream | None = None):
    """Run the SPCA loop from the channel-matched start; returns ``(beams, state)``.

    The trace holds the true weighted sum-rate (bits) of the start point
    followed by one entry per subproblem solve. The loop stops once an
    iteration gains at most ``epsilon`` bits, or ``epsilon`` times the
    current WSR with ``relative_stop`` (never before the second solve)
    or after ``n_iter_max`` solves. Tuples whose SINR drops to
    ``retire_sinr`` are treated as degenerate from the next solve on. The
    algorithm is deterministic; ``stream`` is accepted for interface
    symmetry and not consumed.
    """
    settings = settings or SpcaSettings()
    index_set = build_index_set(config, schedule)
    alpha = index_set.weights(config)
    init = initialize(channels, schedule, config, index_set, settings)
    wsr0 = weighted_sum_rate(channels, init.beams0, config, index_set).wsr_bits
    state = state_from_init(init, alpha, wsr0)
    if np.all(state.degenerate):
        state.converged = True
        return state.beams, state

    for it in range(1, settings.n_iter_max + 1):
        t0 = time.perf_counter()
        prog = build_subproblem(state, channels, config, index_set, settings)
        sol = _solve_step(prog, state, settings, it)
        x = sol.primal
        raw = prog.beams_from(x)
        beta_raw = prog.beta_from(x)
        r_raw = prog.r_from(x)

        beams = clip_power(align_phases(channels, raw), config.p_max)
        beta, gamma, _ = true_point(channels, beams)
        report = weighted_sum_rate(channels, beams, config, index_set)

        beta_norm, _, sig_raw = true_point(channels, raw)
        c2 = np.abs(beta_raw - beta_norm)
        gap = np.abs(surrogate_c3(r_raw, beta_raw, prog.phi) - beta_raw * np.sqrt(np.maximum(r_raw - 1.0, 0.0)))
        live = prog.active
        state.last_phi = prog.phi
        state.last_beams_raw, state.last_beta_raw, state.last_r_raw = raw, beta_raw, r_raw
        state.last_dual = sol.dual

        state.beams = beams
        state.beta = beta
        state.s = np.log1p(np.maximum(gamma, 0.0)) / alpha
        state.phi = np.sqrt(np.maximum(gamma, settings.r_floor)) / beta
        if settings.retire_sinr > 0:
            # a near-dead tuple contributes ~nothing but wrecks the subproblem's scaling
            state.degenerate = state.degenerate | (gamma <= settings.retire_sinr)
        state.iteration = it
        state.objective_trace.append(report.wsr_bits)
        state.solver_iters.append(sol.iterations)
        state.solver_status.append(sol.status)
        state.max_c2_slack.append(float(c2.max()))
        state.max_c3_gap.append(float(gap[live].max()) if live.any() else 0.0)
        state.iter_time_s.append(time.perf_counter() - t0)

        tol = settings.epsilon * abs(report.wsr_bits) if settings.relative_stop else settings.epsilon
        if it >= 2 and state.objective_trace[-1] - state.objective_trace[-2] <= tol:
            state.converged = True
            break
        if np.all(state.degenerate):
            state.converged = True
            break
    return state.beams, state


@dataclass
class KktReport:
    c2_slack: np.ndarray
    c3_slack: np.ndarray
    c3_gap: np.ndarray
    c4_residual: np.ndarray
    rate_bits: np.ndarray
    degenerate: np.ndarray
    flagged: np.ndarray

    @property
    def ok(self) -> bool:
        return not self.flagged.any()


def kkt_activity_report(state: SpcaState, channels: ChannelSet, config: SystemConfig,
                        tol: float = 1e-3, rate_threshold: float = 1e-2) -> KktReport:
    """Constraint activity at the last subproblem solution.

    Tuples whose rate is at most ``rate_threshold`` bits are marked
    degenerate and never flagged.
    """
    if state.last_beams_raw is None:
        raise SpcaError("no subproblem has been solved yet")
    raw = state.last_beams_raw
    beta, r, phi = state.last_beta_raw, state.last_r_raw, state.last_phi
    beta_norm, _, _ = true_point(channels, raw)
    G = inner_products(channels, raw)
    idx = np.arange(G.shape[0])
    g = G[idx, :, idx].reshape(-1)
    sur = surrogate_c3(r, beta, phi)
    orig = beta * np.sqrt(np.maximum(r - 1.0, 0.0))
    rate = np.log2(1.0 + np.maximum(state.gamma, 0.0))
    degenerate = state.degenerate | (rate <= rate_threshold)
    c2 = beta - beta_norm
    c3_slack = g.real - sur
    c3_gap = np.abs(sur - orig)
    c4 = np.abs(g.imag)
    bad = (np.abs(c2) > tol) | (np.abs(c3_slack) > tol) | (c3_gap > tol)
    return KktReport(c2, c3_slack, c3_gap, c4, rate, degenerate, bad & ~degenerate)


def write_trace_csv(state: SpcaState, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "wsr_bits", "max_c2_slack", "max_c3_gap", "solver_iters"])
        for i, wsr in enumerate(state.objective_trace):
            wr.writerow([i, f"{wsr:.12g}", f"{state.max_c2_slack[i]:.6e}", f"{state.max_c3_gap[i]:.6e}",
                         state.solver_iters[i]])

"""Homogeneous self-dual embedding solved by ADMM (operator splitting).

The iteration follows the classic splitting-conic-solver scheme: a fixed
quasi-definite linear system factored once, cone projections, and a dual
update, with over-relaxation and Ruiz equilibration. The hot loop runs in
numba when available and in vectorized numpy otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import _accel
from . import _kernels
from .cones import exp_project_vec, project_dual_vec, soc_project_blocks
from .program import CompiledProgram, ConicProgram

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERS = "max_iters"
_CODES = {0: OPTIMAL, 1: INFEASIBLE, 2: UNBOUNDED, 3: MAX_ITERS}


@dataclass
class ConicSolution:
    """Primal-dual answer in the caller's (unscaled) coordinates.

    ``dual`` and ``slack`` use compiled row order; use
    :meth:`dual_of` to read the multiplier of one constraint.
    ``primal_residual``/``dual_residual``/``gap`` are relative measures
    recomputed from the problem data after the loop stopped.
    """

    status: str
    primal: np.ndarray
    dual: np.ndarray
    slack: np.ndarray
    objective_value: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    backend: str
    _program: CompiledProgram = field(repr=False, default=None)

    def dual_of(self, cid: int) -> np.ndarray:
        rows = self._program.row_map[cid]
        y = self.dual[rows]
        if cid in self._program.rotated:
            h = math.sqrt(0.5)
            y = y.copy()
            y[0], y[1] = h * (y[0] + y[1]), h * (y[0] - y[1])
        return y

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class _Scaled:
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    d_row: np.ndarray
    e_col: np.ndarray
    sigma_b: float
    sigma_c: float


def _block_ids(cp: CompiledProgram) -> np.ndarray:
    """Row -> block id, with each SOC/exp cone one block and other rows singletons."""
    m = cp.A.shape[0]
    ids = np.arange(m)
    k = cp.n_zero + cp.n_nonneg
    for d in cp.soc_dims:
        ids[k:k + d] = k
        k += d
    for _ in range(cp.n_exp):
        ids[k:k + 3] = k
        k += 3
    return ids


def equilibrate(cp: CompiledProgram, passes: int = 25, lo: float = 1e-4, hi: float = 1e4) -> _Scaled:
    """Ruiz infinity-norm scaling ``D A E`` with D constant on every cone block.

    A block takes the largest row norm of its rows so the cone is mapped to
    itself. ``b`` and ``c`` get the matching ``D`` and ``E`` factors only.
    """
    A = cp.A.tocsr().astype(float)
    m, n = A.shape
    d = np.ones(m)
    e = np.ones(n)
    ids = _block_ids(cp)
    absA = abs(A)
    for _ in range(passes):
        S = (sp.diags(d) @ absA @ sp.diags(e)).tocsr()
        rn = S.max(axis=1).toarray().ravel() if m else np.zeros(0)
        cn = S.max(axis=0).toarray().ravel() if m else np.ones(n)
        blk = np.zeros(m)
        np.maximum.at(blk, ids, rn)
        rn = blk[ids]
        d = np.clip(d / np.sqrt(np.where(rn > 0, rn, 1.0)), lo, hi)
        e = np.clip(e / np.sqrt(np.where(cn > 0, cn, 1.0)), lo, hi)
    As = (sp.diags(d) @ A @ sp.diags(e)).tocsr()
    As.sort_indices()
    return _Scaled(As, d * cp.b, e * cp.c, d, e, 1.0, 1.0)


class _Factor:
    """SuperLU factor of ``rho_x I + A^T diag(1/r_y) A``, also exposed as sorted CSR arrays."""

    def __init__(self, A: sp.csr_matrix, rho_x: float, r_y: np.ndarray):
        n = A.shape[1]
        P = (rho_x * sp.identity(n, format="csc") + A.T @ sp.diags(1.0 / r_y) @ A).tocsc()
        self.lu = spla.splu(P, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        L = self.lu.L.tocsr()
        U = self.lu.U.tocsr()
        L.sort_indices()
        U.sort_indices()
        self.L, self.U = L, U
        self.perm_r = np.ascontiguousarray(self.lu.perm_r, dtype=np.int64)
        self.perm_c = np.ascontiguousarray(self.lu.perm_c, dtype=np.int64)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs)


def _reduced_solve(A, AT, fac: _Factor, rho_x, r_y, rx, ry):
    """Solve ``[[rho_x I, A^T], [-A, diag(r_y)]] [x; y] = [rx; ry]``."""
    x = fac.solve(rx - AT @ (ry / r_y))
    return x, (ry + A @ x) / r_y


def _certify(cp: CompiledProgram, x, y, tol: float):
    """Relative residuals recomputed from problem data, independent of solver state."""
    A = cp.A
    slack = cp.b - A @ x
    viol = slack.copy()
    _project_primal_numpy(viol, cp)
    pres = np.linalg.norm(slack - viol)
    yy = y.copy()
    _project_dual_numpy(yy, cp)
    dres = np.linalg.norm(A.T @ y + cp.c) + np.linalg.norm(y - yy)
    cx = float(cp.c @ x)
    by = float(cp.b @ y)
    rp = pres / (1.0 + np.linalg.norm(cp.b))
    rd = dres / (1.0 + np.linalg.norm(cp.c))
    gap = abs(cx + by) / (1.0 + abs(cx) + abs(by))
    return rp, rd, gap, slack


def _extract(sc: _Scaled, u, v, n: int, m: int, normalize: bool):
    """``(x, y, s)`` in caller units; certificates stay unnormalized."""
    tau = u[-1] if normalize and u[-1] > 0 else 1.0
    x = sc.e_col * u[:n] / (sc.sigma_b * tau)
    y = sc.d_row * u[n:n + m] / (sc.sigma_c * tau)
    s = v[n:n + m] / (sc.d_row * sc.sigma_b * tau)
    return x, y, s


def _soc_layout(cp: CompiledProgram):
    starts = cp.n_zero + cp.n_nonneg + np.concatenate(([0], np.cumsum(cp.soc_dims)[:-1])).astype(np.int64)
    if cp.soc_dims.size == 0:
        starts = np.zeros(0, dtype=np.int64)
    return starts, cp.soc_dims


def _project_dual_numpy(y: np.ndarray, cp: CompiledProgram) -> None:
    starts, dims = _soc_layout(cp)
    project_dual_vec(y, cp.n_zero, cp.n_nonneg, starts, dims, cp.n_exp)


def _project_primal_numpy(s: np.ndarray, cp: CompiledProgram) -> None:
    s[:cp.n_zero] = 0.0
    k = cp.n_zero
    np.maximum(s[k:k + cp.n_nonneg], 0.0, out=s[k:k + cp.n_nonneg])
    starts, dims = _soc_layout(cp)
    soc_project_blocks(s, starts, dims)
    if cp.n_exp:
        blk = s[s.size - 3 * cp.n_exp:].reshape(cp.n_exp, 3)
        pr, ps, pt = exp_project_vec(blk[:, 0], blk[:, 1], blk[:, 2])
        blk[:, 0], blk[:, 1], blk[:, 2] = pr, ps, pt


def _residuals_numpy(sc: _Scaled, AT, u, v, b_norm, c_norm, res) -> bool:
    A, b, c = sc.A, sc.b, sc.c
    m, n = A.shape
    x, y, s = u[:n], u[n:n + m], v[n:n + m]
    tau, kappa = u[-1], v[-1]
    if tau <= 1e-12 * max(1.0, kappa):
        return False
    rp = (A @ x + s - b * tau) / (sc.d_row * sc.sigma_b * tau)
    rd = (AT @ y + c * tau) / (sc.e_col * sc.sigma_c * tau)
    scale = 1.0 / (sc.sigma_b * sc.sigma_c * tau)
    cx, by = (c @ x) * scale, (b @ y) * scale
    res[0] = np.linalg.norm(rp) / (1.0 + b_norm)
    res[1] = np.linalg.norm(rd) / (1.0 + c_norm)
    res[2] = abs(cx + by) / (1.0 + abs(cx) + abs(by))
    return True


def _admm_numpy(sc: _Scaled, AT, fac: _Factor, cp: CompiledProgram, g, denom, rho_x, r_y, w, u, v,
                alpha, it_start, it_stop, check_every, eps, eps_infeas, b_norm, c_norm, res):
    A = sc.A
    b, c = sc.b, sc.c
    m, n = A.shape
    starts, dims = _soc_layout(cp)
    code = 3
    it = it_start
    while it < it_stop:
        it += 1
        px, py = _reduced_solve(A, AT, fac, rho_x, r_y, rho_x * w[:n], r_y * w[n:n + m])
        tau = (w[-1] + c @ px + b @ py) / denom
        ut = np.concatenate((px, py, [0.0]))
        ut[:-1] -= tau * g
        ut[-1] = tau
        u[:] = 2.0 * ut - w
        project_dual_vec(u[n:n + m], cp.n_zero, cp.n_nonneg, starts, dims, cp.n_exp)
        u[-1] = max(u[-1], 0.0)
        check = it % check_every == 0 or it == it_stop
        if check:
            v[:n] = 0.0
            v[n:n + m] = r_y * (w[n:n + m] - 2.0 * ut[n:n + m] + u[n:n + m])
            v[-1] = w[-1] - 2.0 * ut[-1] + u[-1]
        w += alpha * (u - ut)
        if not check:
            continue
        if _residuals_numpy(sc, AT, u, v, b_norm, c_norm, res):
            if res[0] <= eps and res[1] <= eps and res[2] <= eps:
                code = 0
                break
        y, x, s = u[n:n + m], u[:n], v[n:n + m]
        by = b @ y
        if by < 0.0 and np.linalg.norm((AT @ y) / sc.e_col) / sc.sigma_c <= eps_infeas * (-by / sc.sigma_b / sc.sigma_c):
            code = 1
            break
        cx = c @ x
        if cx < 0.0 and np.linalg.norm((A @ x + s) / sc.d_row) / sc.sigma_b <= eps_infeas * (-cx / sc.sigma_b / sc.sigma_c):
            code = 2
            break
    return it, code


class _Anderson:
    """Type-II Anderson acceleration of a fixed-point map ``x -> G(x)``.

    Each step stores ``(x, f = G(x) - x)`` and proposes
    ``G(x) - (dX + dF) gamma`` with ``gamma`` the regularized least-squares
    fit of ``f`` by the stored residual differences ``dF``.
    """

    def __init__(self, memory: int, reg: float = 1e-2, max_weight: float = 1e6):
        self.memory = memory
        self.reg = reg
        self.max_weight = max_weight
        self.reset()

    def reset(self):
        self.xs: list = []
        self.fs: list = []

    def propose(self, x: np.ndarray, g: np.ndarray):
        f = g - x
        self.xs.append(x.copy())
        self.fs.append(f)
        if len(self.xs) > self.memory + 1:
            self.xs.pop(0)
            self.fs.pop(0)
        if len(self.xs) < 2:
            return None
        dX = np.diff(np.array(self.xs), axis=0).T
        dF = np.diff(np.array(self.fs), axis=0).T
        gram = dF.T @ dF
        gram[np.diag_indices_from(gram)] += self.reg * max(np.trace(gram), 1e-300)
        try:
            gamma = np.linalg.solve(gram, dF.T @ f)
        except np.linalg.LinAlgError:
            self.reset()
            return None
        if not np.all(np.isfinite(gamma)) or np.abs(gamma).sum() > self.max_weight:
            self.reset()
            return None
        return g - (dX + dF) @ gamma


@dataclass
class WarmStart:
    x: np.ndarray
    y: np.ndarray | None = None
    s: np.ndarray | None = None


@dataclass
class SolverParams:
    """Splitting parameters. ``scale`` weights the dual block of the metric
    (equality rows get ``zero_row_boost`` times more); it is adapted every
    ``adapt_every`` iterations when the residual balance drifts past
    ``adapt_ratio``. Anderson acceleration acts on blocks of
    ``check_every`` iterations; a proposal is dropped when the next block's
    fixed-point residual exceeds ``aa_safeguard`` times the previous one."""

    alpha: float = 1.5
    rho_x: float = 1e-6
    scale: float = 0.1
    zero_row_boost: float = 1e3
    adaptive: bool = True
    adapt_every: int = 100
    adapt_ratio: float = 3.0
    check_every: int = 10
    aa_memory: int = 10  # 0 turns acceleration off
    aa_safeguard: float = 3.0


def _metric(cp: CompiledProgram, scale: float, boost: float) -> np.ndarray:
    r_y = np.full(cp.A.shape[0], 1.0 / scale)
    r_y[:cp.n_zero] /= boost
    return r_y


def solve(prog, tolerance: float = 1e-6, max_iters: int = 50000, *, alpha: float = 1.5,
          check_every: int = 10, warm_start: WarmStart | None = None,
          backend: str | None = None, params: SolverParams | None = None) -> ConicSolution:
    """Solve a :class:`ConicProgram` (or its compiled form).

    ``status == "optimal"`` means the relative primal residual, dual
    residual and duality gap, recomputed from the unscaled problem data,
    are all within ``tolerance``. The run is deterministic: same program,
    same warm start, same result.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    prm = params or SolverParams(alpha=alpha, check_every=check_every)
    cp = prog.compile() if isinstance(prog, ConicProgram) else prog
    backend = backend or _accel.backend_name()
    if backend == "numba" and not _accel.USE_NUMBA:
        raise RuntimeError("numba backend requested but numba is disabled")
    m, n = cp.A.shape
    sc = equilibrate(cp)
    AT = sc.A.T.tocsr()
    AT.sort_indices()
    b_norm = float(np.linalg.norm(cp.b))
    c_norm = float(np.linalg.norm(cp.c))
    eps_infeas = 1e-7

    scale = prm.scale
    r_y = _metric(cp, scale, prm.zero_row_boost)
    w = np.zeros(n + m + 1)
    w[-1] = 1.0
    if warm_start is not None:
        w[:n] = warm_start.x / sc.e_col * sc.sigma_b
        if warm_start.y is not None:
            w[n:n + m] = warm_start.y / sc.d_row * sc.sigma_c
        s0 = warm_start.s
        if s0 is None:
            s0 = cp.b - cp.A @ warm_start.x
            _project_primal_numpy(s0, cp)
        w[n:n + m] += s0 * sc.d_row * sc.sigma_b / r_y
    u = np.zeros(n + m + 1)
    v = np.zeros(n + m + 1)
    res = np.full(3, np.inf)

    a_args = (sc.A.indptr.astype(np.int64), sc.A.indices.astype(np.int64), sc.A.data,
              AT.indptr.astype(np.int64), AT.indices.astype(np.int64), AT.data)
    # residuals come from the kernel every check_every iterations; chunks of
    # that length let the scale rule average the primal/dual balance
    accel = _Anderson(prm.aa_memory) if prm.aa_memory > 0 else None
    chunk = prm.check_every if (prm.adaptive or accel) else max_iters
    it, code = 0, 3
    fallback, f_ref = None, math.inf  # plain iterate and residual norm behind an accelerated step
    log_sum, log_n, last_update = 0.0, 0, 0
    refactor = True
    while True:
        if refactor:
            fac = _Factor(sc.A, prm.rho_x, r_y)
            gx, gy = _reduced_solve(sc.A, AT, fac, prm.rho_x, r_y, sc.c, sc.b)
            g = np.concatenate((gx, gy))
            denom = 1.0 + sc.c @ gx + sc.b @ gy
            f_args = (fac.L.indptr.astype(np.int64), fac.L.indices.astype(np.int64), fac.L.data,
                      fac.U.indptr.astype(np.int64), fac.U.indices.astype(np.int64), fac.U.data,
                      fac.perm_r, fac.perm_c)
            refactor = False
        stop = min(max_iters, it + chunk)
        w_in = w.copy() if accel is not None else None
        if backend == "numba":
            it, code = _kernels.admm_loop(
                *a_args, *f_args,
                sc.b, sc.c, g, denom,
                cp.n_zero, cp.n_nonneg, cp.soc_dims, cp.n_exp,
                sc.d_row, sc.e_col, sc.sigma_b, sc.sigma_c, b_norm, c_norm,
                prm.rho_x, r_y, w, u, v, prm.alpha, it, stop, prm.check_every, tolerance, eps_infeas, res,
            )
        else:
            it, code = _admm_numpy(sc, AT, fac, cp, g, denom, prm.rho_x, r_y, w, u, v, prm.alpha,
                                   it, stop, prm.check_every, tolerance, eps_infeas, b_norm, c_norm, res)
        if code == 0 and it < max_iters:
            # the in-loop test runs on scaled data; confirm on the original
            # problem and keep iterating if rounding left it just outside
            xc, yc, _ = _extract(sc, u, v, n, m, normalize=True)
            rp, rd, gap, _ = _certify(cp, xc, yc, tolerance)
            if max(rp, rd, gap) > tolerance:
                log.debug("loop converged but recheck failed: rp=%.2e rd=%.2e gap=%.2e", rp, rd, gap)
                code = 3
        if code != 3 or it >= max_iters:
            break
        if accel is not None:
            f_norm = float(np.linalg.norm(w - w_in))
            if fallback is not None and f_norm > prm.aa_safeguard * f_ref:
                # the accelerated step made things worse: resume from the plain iterate
                w[:] = fallback
                accel.reset()
                fallback, f_ref = None, math.inf
            else:
                prop = accel.propose(w_in, w)
                if prop is not None:
                    fallback, f_ref = w.copy(), f_norm
                    w[:] = prop
                else:
                    fallback, f_ref = None, math.inf
        # rebalance primal and dual progress by changing the dual metric; the
        # factor is the geometric mean of sqrt(rp/rd) since the last change
        if np.all(np.isfinite(res)) and res[0] > 0 and res[1] > 0:
            log_sum += math.log(res[0] / res[1])
            log_n += 1
        if log_n and it - last_update >= prm.adapt_every:
            ratio = math.sqrt(math.exp(log_sum / log_n))
            new_scale = float(np.clip(scale * ratio, 1e-6, 1e6))
            if (ratio > prm.adapt_ratio or ratio < 1.0 / prm.adapt_ratio) and new_scale != scale:
                r_new = _metric(cp, new_scale, prm.zero_row_boost)
                # keep (u, v) fixed: w = u + R^-1 v
                w[n:n + m] = u[n:n + m] + v[n:n + m] / r_new
                w[:n] = u[:n]
                w[-1] = u[-1] + v[-1]
                scale, r_y = new_scale, r_new
                refactor = True
                log_sum, log_n, last_update = 0.0, 0, it
                if accel is not None:
                    accel.reset()
                    fallback, f_ref = None, math.inf

    status = _CODES[int(code)]
    x, y, s = _extract(sc, u, v, n, m, normalize=status in (OPTIMAL, MAX_ITERS))
    rp, rd, gap, _ = _certify(cp, x, y, tolerance)
    if status == OPTIMAL and max(rp, rd, gap) > tolerance:
        status = MAX_ITERS
    return ConicSolution(
        status=status, primal=x, dual=y, slack=s, objective_value=float(-cp.c @ x),
        gap=float(gap), primal_residual=float(rp), dual_residual=float(rd),
        iterations=int(it), backend=backend, _program=cp,
    )

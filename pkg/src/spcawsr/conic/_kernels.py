"""Scalar-loop kernels compiled with numba.

Everything here also runs as plain Python (slowly) when numba is disabled,
but the solver only routes through these when ``USE_NUMBA`` is true. The
vectorized numpy counterparts live in :mod:`spcawsr.conic.cones` and
:mod:`spcawsr.conic.solver`.
"""

import math

import numpy as np

from .._accel import njit

_E = math.e


@njit
def soc_project_inplace(v, start, dim):
    t = v[start]
    nrm2 = 0.0
    for i in range(start + 1, start + dim):
        nrm2 += v[i] * v[i]
    nrm = math.sqrt(nrm2)
    if nrm <= t:
        return
    if nrm <= -t:
        for i in range(start, start + dim):
            v[i] = 0.0
        return
    a = 0.5 * (t + nrm)
    scale = a / nrm
    v[start] = a
    for i in range(start + 1, start + dim):
        v[i] *= scale


@njit
def _in_exp_cone(r, s, t):
    if s > 0.0:
        if t <= 0.0:
            return False
        return math.log(s) + r / s <= math.log(t)
    return s == 0.0 and r <= 0.0 and t >= 0.0


@njit
def _in_exp_polar(r, s, t):
    # polar cone is -K*, K* = cl{(u, v, w): u < 0, -u exp(v/u) <= e w}
    if r > 0.0:
        if t >= 0.0:
            return False
        return math.log(r) + s / r <= math.log(-_E * t)
    return r == 0.0 and s <= 0.0 and t <= 0.0


@njit
def _exp_root_fn(rho, r0, s0, t0):
    q = rho * rho - rho + 1.0
    a = ((rho - 1.0) * r0 + s0) / q
    b = (r0 - rho * s0) / q
    ep = math.exp(min(rho, 700.0))
    em = math.exp(min(-rho, 700.0))
    h = a * ep - b * em - t0
    dq = 2.0 * rho - 1.0
    da = (r0 * q - ((rho - 1.0) * r0 + s0) * dq) / (q * q)
    db = (-s0 * q - (r0 - rho * s0) * dq) / (q * q)
    dh = (da + a) * ep - (db - b) * em
    return h, dh


@njit
def exp_project(r0, s0, t0):
    """Euclidean projection onto cl{(x, y, z): y > 0, y exp(x/y) <= z}."""
    if _in_exp_cone(r0, s0, t0):
        return r0, s0, t0
    if _in_exp_polar(r0, s0, t0):
        return 0.0, 0.0, 0.0
    if r0 <= 0.0 and s0 <= 0.0:
        return r0, 0.0, max(t0, 0.0)

    # bracket on rho = x/y of the projection: both Moreau multipliers positive
    lo = -math.inf
    hi = math.inf
    if s0 > 0.0:
        hi = r0 / s0
        if r0 > 0.0:
            lo = 1.0 - s0 / r0
    else:
        lo = 1.0 - s0 / r0
        if s0 < 0.0:
            lo = max(lo, r0 / s0)
    if lo == -math.inf:
        step = 1.0
        lo = hi - step
        while _exp_root_fn(lo, r0, s0, t0)[0] > 0.0 and lo > -700.0:
            step *= 2.0
            lo = hi - step
    if hi == math.inf:
        step = 1.0
        hi = lo + step
        while _exp_root_fn(hi, r0, s0, t0)[0] < 0.0 and hi < 700.0:
            step *= 2.0
            hi = lo + step
    hi = min(hi, 700.0)
    lo = max(lo, -700.0)

    # safeguarded Newton: bisect whenever the Newton step leaves the bracket
    # or fails to halve the previous step (rtsafe rule)
    rho = 0.5 * (lo + hi)
    dx_old = hi - lo
    for _ in range(300):
        h, dh = _exp_root_fn(rho, r0, s0, t0)
        if h < 0.0:
            lo = rho
        else:
            hi = rho
        nxt = rho - h / dh if dh > 0.0 else lo - 1.0
        if lo < nxt < hi and abs(2.0 * h) <= abs(dx_old * dh):
            dx_old = abs(nxt - rho)
        else:
            nxt = 0.5 * (lo + hi)
            dx_old = 0.5 * (hi - lo)
        if abs(nxt - rho) <= 1e-15 * max(1.0, abs(rho)) or hi - lo <= 1e-15 * max(1.0, abs(rho)):
            rho = nxt
            break
        rho = nxt

    # project onto the boundary ray through (rho, 1, e^rho)
    ep = math.exp(rho)
    dd = rho * rho + 1.0 + ep * ep
    coef = (r0 * rho + s0 + t0 * ep) / dd
    best_r, best_s, best_t = 0.0, 0.0, 0.0
    best = r0 * r0 + s0 * s0 + t0 * t0
    if coef > 0.0:
        pr, ps, pt = coef * rho, coef, coef * ep
        dist = (pr - r0) ** 2 + (ps - s0) ** 2 + (pt - t0) ** 2
        if dist < best:
            best, best_r, best_s, best_t = dist, pr, ps, pt
    hr, ht = min(r0, 0.0), max(t0, 0.0)
    dist = (hr - r0) ** 2 + s0 * s0 + (ht - t0) ** 2
    if dist < best:
        best, best_r, best_s, best_t = dist, hr, 0.0, ht
    return best_r, best_s, best_t


@njit
def project_dual_cone(y, n_zero, n_nonneg, soc_dims, n_exp):
    """Project ``y`` in place onto the dual of {0}^z x R+^l x SOC... x Kexp^e.

    The zero cone's dual is the whole space, so those entries are untouched.
    """
    k = n_zero
    for i in range(k, k + n_nonneg):
        if y[i] < 0.0:
            y[i] = 0.0
    k += n_nonneg
    for j in range(soc_dims.shape[0]):
        soc_project_inplace(y, k, soc_dims[j])
        k += soc_dims[j]
    for j in range(n_exp):
        # Moreau: P_{K*}(z) = z + P_K(-z)
        pr, ps, pt = exp_project(-y[k], -y[k + 1], -y[k + 2])
        y[k] += pr
        y[k + 1] += ps
        y[k + 2] += pt
        k += 3


@njit
def project_primal_cone(s, n_zero, n_nonneg, soc_dims, n_exp):
    for i in range(n_zero):
        s[i] = 0.0
    k = n_zero
    for i in range(k, k + n_nonneg):
        if s[i] < 0.0:
            s[i] = 0.0
    k += n_nonneg
    for j in range(soc_dims.shape[0]):
        soc_project_inplace(s, k, soc_dims[j])
        k += soc_dims[j]
    for j in range(n_exp):
        pr, ps, pt = exp_project(s[k], s[k + 1], s[k + 2])
        s[k] = pr
        s[k + 1] = ps
        s[k + 2] = pt
        k += 3


@njit
def csr_matvec(indptr, indices, data, x, out):
    for i in range(indptr.shape[0] - 1):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        out[i] = acc


@njit
def lu_solve_inplace(l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, perm_r, perm_c, rhs, work, out):
    """Solve with a SuperLU factorization ``Pr A Pc = L U`` held as sorted CSR."""
    n = rhs.shape[0]
    for j in range(n):
        work[perm_r[j]] = rhs[j]
    # forward substitution, diagonal of L is the last entry of each row
    for i in range(n):
        acc = work[i]
        end = l_ptr[i + 1] - 1
        for p in range(l_ptr[i], end):
            acc -= l_val[p] * work[l_idx[p]]
        work[i] = acc / l_val[end]
    # back substitution, diagonal of U is the first entry of each row
    for i in range(n - 1, -1, -1):
        acc = work[i]
        start = u_ptr[i]
        for p in range(start + 1, u_ptr[i + 1]):
            acc -= u_val[p] * work[u_idx[p]]
        work[i] = acc / u_val[start]
    for j in range(n):
        out[j] = work[perm_c[j]]


@njit
def _norm(v):
    acc = 0.0
    for i in range(v.shape[0]):
        acc += v[i] * v[i]
    return math.sqrt(acc)


@njit
def _dot(a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        acc += a[i] * b[i]
    return acc


@njit
def residuals_unscaled(a_ptr, a_idx, a_val, at_ptr, at_idx, at_val, b, c, d_row, e_col,
                       sigma_b, sigma_c, b_norm, c_norm, u, v, tmp_n, tmp_m, out):
    """Relative primal residual, dual residual and gap of ``(u, v)`` in caller units.

    Unscaled quantities are ``x = E x~ / (sb tau)``, ``s = s~ / (D sb tau)``
    and ``y = D y~ / (sc tau)``. Writes ``out[:3]``; returns False when tau
    is too small for the ratio to mean anything.
    """
    m = b.shape[0]
    n = c.shape[0]
    tau = u[n + m]
    kappa = v[n + m]
    if tau <= 1e-12 * max(1.0, kappa):
        return False
    csr_matvec(a_ptr, a_idx, a_val, u[:n], tmp_m)
    acc = 0.0
    for i in range(m):
        r = (tmp_m[i] + v[n + i] - b[i] * tau) / (d_row[i] * sigma_b * tau)
        acc += r * r
    out[0] = math.sqrt(acc) / (1.0 + b_norm)
    csr_matvec(at_ptr, at_idx, at_val, u[n:n + m], tmp_n)
    acc = 0.0
    for i in range(n):
        r = (tmp_n[i] + c[i] * tau) / (e_col[i] * sigma_c * tau)
        acc += r * r
    out[1] = math.sqrt(acc) / (1.0 + c_norm)
    scale = 1.0 / (sigma_b * sigma_c * tau)
    cx = _dot(c, u[:n]) * scale
    by = _dot(b, u[n:n + m]) * scale
    out[2] = abs(cx + by) / (1.0 + abs(cx) + abs(by))
    return True


@njit
def admm_loop(
    a_ptr, a_idx, a_val, at_ptr, at_idx, at_val,
    l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, perm_r, perm_c,
    b, c, g, denom,
    n_zero, n_nonneg, soc_dims, n_exp,
    d_row, e_col, sigma_b, sigma_c, b_norm, c_norm,
    rho_x, r_y, w, u, v, alpha, it_start, it_stop, check_every, eps, eps_infeas, res,
):
    """Douglas-Rachford splitting on the homogeneous embedding, scaled data.

    ``w`` is the iterated point; ``u = (x, y, tau)`` and ``v = (0, s, kappa)``
    are the iterates recovered from it. Metric ``R = diag(rho_x, r_y, 1)``.
    Runs iterations ``it_start + 1 .. it_stop``; ``res`` receives the last
    relative residuals. Returns ``(iteration, code)`` with code 0 optimal,
    1 infeasible, 2 unbounded, 3 iteration limit.
    """
    m = b.shape[0]
    n = c.shape[0]
    nt = n + m + 1
    ut = np.empty(nt)
    rhs_x = np.empty(n)
    tmp_n = np.empty(n)
    tmp_m = np.empty(m)
    work = np.empty(n)
    code = 3
    it = it_start
    while it < it_stop:
        it += 1
        # ut = (R + M)^-1 R w via the reduced quasi-definite system
        csr_matvec(at_ptr, at_idx, at_val, w[n:n + m], tmp_n)
        for i in range(n):
            rhs_x[i] = rho_x * w[i] - tmp_n[i]
        lu_solve_inplace(l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, perm_r, perm_c, rhs_x, work, tmp_n)
        csr_matvec(a_ptr, a_idx, a_val, tmp_n, tmp_m)
        hp = 0.0
        for i in range(n):
            ut[i] = tmp_n[i]
            hp += c[i] * tmp_n[i]
        for i in range(m):
            ut[n + i] = w[n + i] + tmp_m[i] / r_y[i]
            hp += b[i] * ut[n + i]
        tau = (w[n + m] + hp) / denom
        for i in range(n + m):
            ut[i] -= tau * g[i]
        ut[n + m] = tau

        # reflected projection onto R^n x K* x R_+
        for i in range(nt):
            u[i] = 2.0 * ut[i] - w[i]
        project_dual_cone(u[n:n + m], n_zero, n_nonneg, soc_dims, n_exp)
        if u[n + m] < 0.0:
            u[n + m] = 0.0

        check = it % check_every == 0 or it == it_stop
        if check:
            for i in range(n):
                v[i] = 0.0
            for i in range(m):
                v[n + i] = r_y[i] * (w[n + i] - 2.0 * ut[n + i] + u[n + i])
            v[n + m] = w[n + m] - 2.0 * ut[n + m] + u[n + m]
        for i in range(nt):
            w[i] += alpha * (u[i] - ut[i])
        if not check:
            continue

        if residuals_unscaled(a_ptr, a_idx, a_val, at_ptr, at_idx, at_val, b, c, d_row, e_col,
                              sigma_b, sigma_c, b_norm, c_norm, u, v, tmp_n, tmp_m, res):
            if res[0] <= eps and res[1] <= eps and res[2] <= eps:
                code = 0
                break
        # infeasibility certificates, valid for any tau
        by = _dot(b, u[n:n + m])
        if by < 0.0:
            csr_matvec(at_ptr, at_idx, at_val, u[n:n + m], tmp_n)
            acc = 0.0
            for i in range(n):
                acc += (tmp_n[i] / e_col[i]) ** 2
            if math.sqrt(acc) / sigma_c <= eps_infeas * (-by / sigma_b / sigma_c):
                code = 1
                break
        cx = _dot(c, u[:n])
        if cx < 0.0:
            csr_matvec(a_ptr, a_idx, a_val, u[:n], tmp_m)
            acc = 0.0
            for i in range(m):
                acc += ((tmp_m[i] + v[n + i]) / d_row[i]) ** 2
            if math.sqrt(acc) / sigma_b <= eps_infeas * (-cx / sigma_b / sigma_c):
                code = 2
                break
    return it, code

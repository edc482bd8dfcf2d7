"""Cone kinds and Euclidean projections.

Slices use the ordering of :class:`~spcawsr.conic.program.ConicProgram`:

* ``soc``: ``(t, u...)`` with ``t >= ||u||``
* ``rotated_soc``: ``(a, b, u...)`` with ``2ab >= ||u||^2``, ``a, b >= 0``
* ``exp``: ``(x, y, z)`` in cl{y > 0, y exp(x/y) <= z}

The vectorized functions here back the numpy solver path; the numba path
uses the scalar kernels in :mod:`spcawsr.conic._kernels`.
"""

import math

import numpy as np

from . import _kernels

CONE_KINDS = ("zero", "nonneg", "soc", "rotated_soc", "exp")

_SQRT_HALF = math.sqrt(0.5)


def min_dim(kind: str) -> int:
    return {"zero": 1, "nonneg": 1, "soc": 2, "rotated_soc": 3, "exp": 3}[kind]


def rotated_to_soc(point):
    """Map ``(a, b, u)`` to ``((a+b)/sqrt2, (a-b)/sqrt2, u)``; an involution."""
    out = np.array(point, dtype=float, copy=True)
    a, b = out[0], out[1]
    out[0] = _SQRT_HALF * (a + b)
    out[1] = _SQRT_HALF * (a - b)
    return out


def project_cone(kind: str, point) -> np.ndarray:
    """Euclidean projection of ``point`` onto a single cone of ``kind``."""
    v = np.array(point, dtype=float, copy=True).ravel()
    if kind not in CONE_KINDS:
        raise ValueError(f"unknown cone kind {kind!r}")
    if v.size < min_dim(kind) or (kind == "exp" and v.size != 3):
        raise ValueError(f"{kind} cone needs dimension >= {min_dim(kind)}, got {v.size}")
    if kind == "zero":
        return np.zeros_like(v)
    if kind == "nonneg":
        return np.maximum(v, 0.0)
    if kind == "soc":
        _kernels.soc_project_inplace(v, 0, v.size)
        return v
    if kind == "rotated_soc":
        w = rotated_to_soc(v)
        _kernels.soc_project_inplace(w, 0, w.size)
        return rotated_to_soc(w)
    return np.array(_kernels.exp_project(v[0], v[1], v[2]))


def project_dual(kind: str, point) -> np.ndarray:
    """Projection onto the dual cone (Moreau: ``P_K*(z) = z + P_K(-z)``)."""
    v = np.asarray(point, dtype=float).ravel()
    if kind == "zero":
        return v.copy()
    if kind in ("nonneg", "soc", "rotated_soc"):
        return project_cone(kind, v)
    return v + project_cone(kind, -v)


def distance_to_cone(kind: str, point) -> float:
    v = np.asarray(point, dtype=float).ravel()
    return float(np.linalg.norm(v - project_cone(kind, v)))


# ---------------------------------------------------------------------------
# vectorized numpy kernels


def soc_project_blocks(v: np.ndarray, starts: np.ndarray, dims: np.ndarray) -> None:
    """Project consecutive SOC blocks of ``v`` in place."""
    if starts.size == 0:
        return
    sq = v * v
    ends = starts + dims
    cums = np.concatenate(([0.0], np.cumsum(sq[starts[0]:ends[-1]])))
    off = starts[0]
    tail = np.sqrt(np.maximum(cums[ends - off] - cums[starts + 1 - off], 0.0))
    t = v[starts]
    inside = tail <= t
    zero = (~inside) & (tail <= -t)
    mid = ~(inside | zero)
    a = 0.5 * (t + tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mid, a / np.where(tail > 0, tail, 1.0), 1.0)
    scale = np.where(zero, 0.0, scale)
    seg = v[off:ends[-1]]
    seg *= np.repeat(scale, dims)
    v[starts] = np.where(mid, a, np.where(zero, 0.0, t))


def _exp_root_vec(rho, r0, s0, t0):
    q = rho * rho - rho + 1.0
    a = ((rho - 1.0) * r0 + s0) / q
    b = (r0 - rho * s0) / q
    ep = np.exp(np.minimum(rho, 700.0))
    em = np.exp(np.minimum(-rho, 700.0))
    h = a * ep - b * em - t0
    dq = 2.0 * rho - 1.0
    da = (r0 * q - ((rho - 1.0) * r0 + s0) * dq) / (q * q)
    db = (-s0 * q - (r0 - rho * s0) * dq) / (q * q)
    dh = (da + a) * ep - (db - b) * em
    return h, dh


def exp_project_vec(r0: np.ndarray, s0: np.ndarray, t0: np.ndarray):
    """Vectorized exponential-cone projection; same case split as the scalar kernel."""
    r0 = np.asarray(r0, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    t0 = np.asarray(t0, dtype=float)
    out_r, out_s, out_t = r0.copy(), s0.copy(), t0.copy()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        in_k = np.where(
            s0 > 0.0,
            (t0 > 0.0) & (np.log(np.where(s0 > 0, s0, 1.0)) + r0 / np.where(s0 > 0, s0, 1.0)
                          <= np.log(np.where(t0 > 0, t0, 1.0))),
            (s0 == 0.0) & (r0 <= 0.0) & (t0 >= 0.0),
        )
        in_polar = np.where(
            r0 > 0.0,
            (t0 < 0.0) & (np.log(np.where(r0 > 0, r0, 1.0)) + s0 / np.where(r0 > 0, r0, 1.0)
                          <= np.log(np.where(t0 < 0, -math.e * t0, 1.0))),
            (r0 == 0.0) & (s0 <= 0.0) & (t0 <= 0.0),
        )
    in_polar &= ~in_k
    quad3 = (~in_k) & (~in_polar) & (r0 <= 0.0) & (s0 <= 0.0)
    hard = ~(in_k | in_polar | quad3)
    out_r[in_polar] = 0.0
    out_s[in_polar] = 0.0
    out_t[in_polar] = 0.0
    out_s[quad3] = 0.0
    out_t[quad3] = np.maximum(t0[quad3], 0.0)
    if not hard.any():
        return out_r, out_s, out_t

    r, s, t = r0[hard], s0[hard], t0[hard]
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(s <= 0.0, 1.0 - s / r, np.where(r > 0.0, 1.0 - s / np.where(r > 0, r, 1.0), -np.inf))
        lo = np.where(s < 0.0, np.maximum(lo, r / np.where(s < 0, s, 1.0)), lo)
        hi = np.where(s > 0.0, r / np.where(s > 0, s, 1.0), np.inf)
    # expand infinite ends until the root function changes sign
    with np.errstate(over="ignore", invalid="ignore"):
        need = np.isinf(lo)
        step = np.ones_like(r)
        while need.any():
            cand = hi - step
            h, _ = _exp_root_vec(cand, r, s, t)
            done = need & ((h <= 0.0) | (cand <= -700.0))
            lo = np.where(done, cand, lo)
            need &= ~done
            step = np.where(need, step * 2.0, step)
        need = np.isinf(hi)
        step = np.ones_like(r)
        while need.any():
            cand = lo + step
            h, _ = _exp_root_vec(cand, r, s, t)
            done = need & ((h >= 0.0) | (cand >= 700.0))
            hi = np.where(done, cand, hi)
            need &= ~done
            step = np.where(need, step * 2.0, step)
        hi = np.minimum(hi, 700.0)
        lo = np.maximum(lo, -700.0)
        rho = 0.5 * (lo + hi)
        dx_old = hi - lo
        active = np.ones_like(r, dtype=bool)
        for _ in range(300):
            h, dh = _exp_root_vec(rho, r, s, t)
            lo = np.where(active & (h < 0.0), rho, lo)
            hi = np.where(active & (h >= 0.0), rho, hi)
            nxt = np.where(dh > 0.0, rho - h / np.where(dh > 0.0, dh, 1.0), lo - 1.0)
            newton = (lo < nxt) & (nxt < hi) & (np.abs(2.0 * h) <= np.abs(dx_old * dh))
            nxt = np.where(newton, nxt, 0.5 * (lo + hi))
            dx_old = np.where(newton, np.abs(nxt - rho), 0.5 * (hi - lo))
            tol = 1e-15 * np.maximum(1.0, np.abs(rho))
            stop = (np.abs(nxt - rho) <= tol) | (hi - lo <= tol)
            rho = np.where(active, nxt, rho)
            active &= ~stop
            if not active.any():
                break
    ep = np.exp(rho)
    coef = (r * rho + s + t * ep) / (rho * rho + 1.0 + ep * ep)
    best = r * r + s * s + t * t
    br, bs, bt = np.zeros_like(r), np.zeros_like(r), np.zeros_like(r)
    pr, ps, pt = coef * rho, coef, coef * ep
    dist = (pr - r) ** 2 + (ps - s) ** 2 + (pt - t) ** 2
    take = (coef > 0.0) & (dist < best)
    best = np.where(take, dist, best)
    br, bs, bt = np.where(take, pr, br), np.where(take, ps, bs), np.where(take, pt, bt)
    hr, ht = np.minimum(r, 0.0), np.maximum(t, 0.0)
    dist = (hr - r) ** 2 + s * s + (ht - t) ** 2
    take = dist < best
    br, bs, bt = np.where(take, hr, br), np.where(take, 0.0, bs), np.where(take, ht, bt)
    out_r[hard], out_s[hard], out_t[hard] = br, bs, bt
    return out_r, out_s, out_t


def project_dual_vec(y: np.ndarray, n_zero: int, n_nonneg: int, soc_starts, soc_dims, n_exp: int) -> None:
    """In-place projection onto the dual of the compiled cone product."""
    k = n_zero
    np.maximum(y[k:k + n_nonneg], 0.0, out=y[k:k + n_nonneg])
    soc_project_blocks(y, soc_starts, soc_dims)
    if n_exp:
        e0 = y.size - 3 * n_exp
        blk = y[e0:].reshape(n_exp, 3)
        pr, ps, pt = exp_project_vec(-blk[:, 0], -blk[:, 1], -blk[:, 2])
        blk[:, 0] += pr
        blk[:, 1] += ps
        blk[:, 2] += pt

"""Solver-independent reference optima for tiny or single-cell instances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, DomainError
from .rates import BeamformerSet, build_index_set
from .system import ChannelSet, Schedule, SystemConfig

MAX_GRID = 10 ** 7


class GridTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    points_per_dim: int = 65  # 2**k + 1 keeps p_max/2 on the grid and nests coarser grids
    spacing: str = "linear"  # or "geometric"
    dynamic_range_db: float = 30.0  # geometric grids span p_max * 10**(-range/10) .. p_max

    def __post_init__(self):
        if self.points_per_dim < 2:
            raise DomainError("points_per_dim must be >= 2")
        if self.spacing not in ("linear", "geometric"):
            raise DomainError("spacing must be 'linear' or 'geometric'")

    def levels(self, p_max: float) -> np.ndarray:
        """Per-tuple power levels in ``[0, p_max]``, always containing both ends."""
        g = self.points_per_dim
        if self.spacing == "linear":
            return p_max * np.arange(g) / (g - 1)
        top = p_max * np.logspace(-self.dynamic_range_db / 10.0, 0.0, g - 1)
        return np.concatenate(([0.0], top))


def _cell_candidates(levels: np.ndarray, p_max: float, n_sub: int, boundary_only: bool) -> np.ndarray:
    """Power vectors of one cell: grid points inside the simplex plus their
    completions onto the face ``sum(p) = p_max``."""
    if n_sub == 1:
        return (levels[-1:] if boundary_only else levels)[:, None]
    head = np.array(list(itertools.product(levels, repeat=n_sub - 1)), dtype=float).reshape(-1, n_sub - 1)
    head = head[head.sum(axis=1) <= p_max * (1 + 1e-12)]
    last = np.maximum(p_max - head.sum(axis=1), 0.0)
    face = np.column_stack((head, last))
    if boundary_only:
        return face
    full = np.array(list(itertools.product(levels, repeat=n_sub)), dtype=float)
    full = full[full.sum(axis=1) <= p_max * (1 + 1e-12)]
    return np.unique(np.vstack((face, full)), axis=0)


def grid_search_wsr(channels: ChannelSet, schedule: Schedule, config: SystemConfig,
                    grid: GridSpec | None = None, chunk: int = 200_000):
    """Exhaustive search over per-tuple powers for single-antenna instances.

    With one antenna each beam is ``sqrt(p) h / |h|`` after phase
    normalization, so SINRs depend only on the powers and the gains
    ``|h|^2``. Single-cell instances only search the full-power face (the
    optimum lies there); multicell instances search the whole simplex.
    Ties keep the lowest grid index. Returns ``(best_wsr, best_beams)``.
    """
    grid = grid or GridSpec()
    if channels.N_Tx != 1:
        raise DimensionError("grid search needs N_Tx = 1")
    M, N = channels.M, channels.N
    if M * N > 3:
        raise GridTooLargeError(f"M*N = {M * N} > 3 tuples")
    index_set = build_index_set(config, schedule)
    alpha = index_set.weights(config)
    gains = np.abs(channels.h[..., 0]) ** 2  # (M, N, M): user of (m, n) from BS j
    cands = [_cell_candidates(grid.levels(config.p_max[m]), config.p_max[m], N, boundary_only=(M == 1))
             for m in range(M)]
    total = math.prod(len(c) for c in cands)
    if total > MAX_GRID:
        raise GridTooLargeError(f"grid of {total} points exceeds {MAX_GRID}")

    sizes = [len(c) for c in cands]
    best_val, best_flat = -np.inf, 0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        sub = np.unravel_index(flat, sizes)
        p = np.stack([cands[m][sub[m]] for m in range(M)], axis=1)  # (B, M, N)
        val = np.zeros(flat.size)
        for m in range(M):
            for n in range(N):
                rx = gains[m, n, :] * p[:, :, n]  # (B, M) received power from each BS
                sig = rx[:, m]
                gamma = sig / (1.0 + rx.sum(axis=1) - sig)
                val += alpha[m * N + n] * np.log2(1.0 + gamma)
        k = int(np.argmax(val))
        if val[k] > best_val:
            best_val, best_flat = float(val[k]), int(flat[k])

    sub = np.unravel_index(best_flat, sizes)
    p = np.stack([cands[m][sub[m]] for m in range(M)])  # (M, N)
    hs = channels.serving()[..., 0]
    phase = np.where(np.abs(hs) > 0, hs / np.where(np.abs(hs) > 0, np.abs(hs), 1.0), 1.0)
    beams = BeamformerSet((np.sqrt(p) * phase)[..., None])
    return best_val, beams


def waterfilling_single_cell(gains, p_max: float, weights=None, tol: float = 1e-10):
    """Weighted water-filling ``p_n = max(0, alpha_n mu - 1/g_n)`` with ``sum(p) = p_max``.

    ``mu`` is found by bisection until the bracket is below ``tol`` (relative).
    Returns ``(powers, wsr_bits)`` with ``wsr = sum(alpha log2(1 + g p))``.
    """
    g = np.asarray(gains, dtype=float).ravel()
    if g.size == 0 or np.any(~np.isfinite(g)) or np.any(g <= 0):
        raise DomainError("gains must be finite and positive")
    if not p_max > 0:
        raise DomainError("p_max must be positive")
    a = np.ones_like(g) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), g.shape)
    if np.any(a <= 0):
        raise DomainError("weights must be positive")
    inv = 1.0 / g

    def used(mu):
        return np.maximum(0.0, a * mu - inv).sum()

    lo, hi = 0.0, (p_max + inv.sum()) / a.min()
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if used(mid) < p_max:
            lo = mid
        else:
            hi = mid
    p = np.maximum(0.0, a * hi - inv)
    p *= p_max / p.sum()  # remove the residual bisection slack
    return p, float(np.sum(a * np.log2(1.0 + g * p)))

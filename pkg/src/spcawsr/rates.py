"""Received signal, SINR and weighted sum-rate for a scheduled multicell OFDM downlink.

Tuples are flattened cell-major: tuple ``t`` is cell ``t // N``, subcarrier
``t % N``, user ``schedule[m, n]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, DomainError
from .system import ChannelSet, Schedule, SystemConfig

POWER_TOL = 1e-6


class InfeasibleBeamsError(ValueError):
    def __init__(self, cells, excess):
        self.cells = list(cells)
        self.excess = list(excess)
        detail = ", ".join(f"cell {m}: +{e:.3g} W" for m, e in zip(self.cells, self.excess))
        super().__init__(f"per-BS power budget exceeded ({detail})")


@dataclass(frozen=True)
class IndexSet:
    M: int
    N: int
    users: np.ndarray  # (T,) scheduled user per tuple

    @property
    def T(self) -> int:
        return self.M * self.N

    def cell(self, t: int) -> int:
        return t // self.N

    def subcarrier(self, t: int) -> int:
        return t % self.N

    def tuple(self, t: int) -> tuple:
        if not 0 <= t < self.T:
            raise IndexError(f"tuple index {t} out of range [0, {self.T})")
        return int(self.users[t]), t // self.N, t % self.N

    def index(self, m: int, n: int) -> int:
        return m * self.N + n

    @property
    def tuples(self) -> list:
        return [self.tuple(t) for t in range(self.T)]

    def weights(self, config: SystemConfig) -> np.ndarray:
        """Per-tuple weights ``alpha[k, m]`` (the same on every subcarrier)."""
        cells = np.arange(self.T) // self.N
        return np.asarray(config.weights)[cells, self.users]


def build_index_set(config: SystemConfig, schedule: Schedule) -> IndexSet:
    a = schedule.assignment
    if a.shape != (config.M, config.N):
        raise DimensionError(f"schedule shape {a.shape} != ({config.M}, {config.N})")
    if np.any(a < 0) or np.any(a >= config.K):
        raise DomainError("schedule refers to a user outside the cell")
    return IndexSet(config.M, config.N, a.reshape(-1).copy())


@dataclass(frozen=True)
class BeamformerSet:
    w: np.ndarray  # (M, N, N_Tx)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.complex128)
        if w.ndim != 3:
            raise DimensionError(f"beams must be (M, N, N_Tx), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DomainError("beam entries must be finite")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def power(self) -> np.ndarray:
        """Per-BS transmit power."""
        return np.sum(np.abs(self.w) ** 2, axis=(1, 2))

    def check_power(self, p_max, tol: float = POWER_TOL) -> None:
        excess = self.power() - np.asarray(p_max, dtype=float)
        bad = np.flatnonzero(excess > tol)
        if bad.size:
            raise InfeasibleBeamsError(bad.tolist(), excess[bad].tolist())

    def rotated(self, theta) -> "BeamformerSet":
        """Multiply each beam by ``exp(j theta[m, n])``."""
        return BeamformerSet(self.w * np.exp(1j * np.asarray(theta))[..., None])


def inner_products(channels: ChannelSet, beams: BeamformerSet) -> np.ndarray:
    """``G[m, n, j] = h[m, n, j]^H w[j, n]``: BS ``j``'s beam seen by the user of cell ``m``."""
    h = channels.h
    if beams.w.shape != (h.shape[0], h.shape[1], h.shape[3]):
        raise DimensionError(f"beams {beams.w.shape} do not match channels {h.shape}")
    return np.einsum("mnja,jna->mnj", h.conj(), beams.w)


def sinr_all(channels: ChannelSet, beams: BeamformerSet) -> np.ndarray:
    g2 = np.abs(inner_products(channels, beams)) ** 2
    idx = np.arange(g2.shape[0])
    sig = g2[idx, :, idx]
    interf = g2.sum(axis=2) - sig
    return sig / (1.0 + interf)


def sinr(t: int, channels: ChannelSet, beams: BeamformerSet, index_set: IndexSet) -> float:
    _, m, n = index_set.tuple(t)
    h = channels.h[m, n]  # (M, N_Tx)
    g2 = np.abs(np.einsum("ja,ja->j", h.conj(), beams.w[:, n, :])) ** 2
    return float(g2[m] / (1.0 + g2.sum() - g2[m]))


@dataclass(frozen=True)
class RateReport:
    gamma: np.ndarray  # (T,)
    rate_bits: np.ndarray
    weights: np.ndarray
    wsr_bits: float


def rate_report(gamma, weights) -> RateReport:
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(gamma < 0):
        raise DomainError("SINR must be >= 0")
    rate = np.log2(1.0 + gamma)
    return RateReport(gamma, rate, weights, float(np.dot(weights, rate)))


def weighted_sum_rate(channels: ChannelSet, beams: BeamformerSet, config: SystemConfig,
                      index_set: IndexSet, check: bool = True) -> RateReport:
    if check:
        beams.check_power(config.p_max)
    return rate_report(sinr_all(channels, beams).reshape(-1), index_set.weights(config))


def received_symbol(t: int, symbols, noise, channels: ChannelSet, beams: BeamformerSet,
                    index_set: IndexSet) -> complex:
    """``y = sum_j h[m, n, j]^H w[j, n] d[j, n] + z`` for tuple ``t``.

    ``symbols`` is ``(M, N)`` (or flattened per tuple); ``noise`` is the
    scalar noise sample for this tuple or an array indexed by tuple.
    """
    _, m, n = index_set.tuple(t)
    d = np.asarray(symbols, dtype=np.complex128).reshape(index_set.M, index_set.N)
    g = np.einsum("ja,ja->j", channels.h[m, n].conj(), beams.w[:, n, :])
    z = np.asarray(noise, dtype=np.complex128)
    z = complex(z.reshape(-1)[t]) if z.ndim else complex(z)
    return complex(np.dot(g, d[:, n]) + z)


@dataclass(frozen=True)
class TransmissionFrame:
    symbols: np.ndarray  # (S, M, N) or (M, N)
    noise: np.ndarray
    received: np.ndarray


def transmit(channels: ChannelSet, beams: BeamformerSet, symbols, noise) -> TransmissionFrame:
    """Vectorized received signal for a batch of symbol periods.

    ``symbols`` and ``noise`` have shape ``(..., M, N)``; the channel is held
    fixed across the batch.
    """
    G = inner_products(channels, beams)  # (M, N, M)
    d = np.asarray(symbols, dtype=np.complex128)
    z = np.asarray(noise, dtype=np.complex128)
    y = np.einsum("mnj,...jn->...mn", G, d) + z
    return TransmissionFrame(d, z, y)

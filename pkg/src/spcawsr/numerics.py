"""Complex vector helpers, reproducible random streams and the Bessel J0."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def as_complex_vector(a) -> np.ndarray:
    """Validate and return ``a`` as a 1-D complex128 array."""
    v = np.asarray(a, dtype=np.complex128)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError(f"expected a non-empty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError("vector has non-finite entries")
    return v


def hermitian_inner(a, b) -> complex:
    """``sum(conj(a_i) * b_i)``."""
    a = as_complex_vector(a)
    b = as_complex_vector(b)
    if a.size != b.size:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    return complex(np.vdot(a, b))


def l2_norm(a) -> float:
    return float(np.linalg.norm(as_complex_vector(a)))


@dataclass
class RngStream:
    """Counter-based (Philox) stream keyed by ``(master_seed, stream_id)``.

    ``stream_id`` may be an int or a tuple of ints; :meth:`child` extends the
    tuple, so ``(trial, purpose)`` pairs get independent streams without any
    shared state. Draws from one stream are a pure function of the key and
    the number of values already drawn.
    """

    master_seed: int
    stream_id: int | tuple = 0
    _gen: np.random.Generator = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise DomainError("master_seed must fit in 64 bits")
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        if any(int(k) < 0 for k in key):
            raise DomainError("stream ids must be non-negative")
        self.stream_id = tuple(int(k) for k in key) if len(key) > 1 else int(key[0])

    @property
    def key(self) -> tuple:
        return self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=self.key)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.master_seed, self.key + tuple(int(i) for i in ids))

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def normal(self, size=None) -> np.ndarray:
        """Real standard normals via Box-Muller (two uniforms per pair)."""
        n = int(np.prod(size)) if size is not None else 1
        z = sample_complex_gaussian(self, 2.0, (n + 1) // 2)
        out = np.concatenate((z.real, z.imag))[:n]
        return out.reshape(size) if size is not None else float(out[0])


def sample_complex_gaussian(stream: RngStream, variance: float = 1.0, size=None):
    """Circularly-symmetric CN(0, variance) draws by the Box-Muller transform.

    Real and imaginary parts are independent with variance ``variance / 2``.
    Returns a Python complex when ``size`` is None.
    """
    if variance < 0 or not math.isfinite(variance):
        raise DomainError(f"variance must be finite and >= 0, got {variance}")
    gen = stream.generator
    u1 = 1.0 - gen.random(size)  # (0, 1]
    u2 = gen.random(size)
    amp = np.sqrt(-variance * np.log(u1))
    z = amp * np.exp(2j * np.pi * u2)
    if size is None:
        return complex(z)
    return np.asarray(z, dtype=np.complex128)


def _j0_series(x: np.ndarray, terms: int = 60) -> np.ndarray:
    q = -(x * x) / 4.0
    term = np.ones_like(x)
    acc = np.ones_like(x)
    for k in range(1, terms):
        term = term * q / (k * k)
        acc = acc + term
    return acc


def _j0_integral(x: float) -> float:
    # J0(x) = (1/pi) int_0^pi cos(x sin t) dt; the periodic trapezoid rule
    # converges geometrically once the node count exceeds |x|
    nodes = int(abs(x)) + 64
    t = np.pi * (np.arange(nodes) + 0.5) / nodes
    return float(np.mean(np.cos(x * np.sin(t))))


def bessel_j0(x):
    """Bessel function of the first kind, order zero.

    Power series for ``|x| <= 12`` (cancellation stays below 1e-12 there),
    periodic trapezoid quadrature of the integral form beyond.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("bessel_j0 needs finite input")
    flat = arr.ravel()
    out = np.empty_like(flat)
    small = np.abs(flat) <= 12.0
    out[small] = _j0_series(flat[small])
    for i in np.flatnonzero(~small):
        out[i] = _j0_integral(flat[i])
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(lin):
    return 10.0 * np.log10(np.asarray(lin, dtype=float))

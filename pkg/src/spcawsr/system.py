"""Cellular scenario: geometry, scheduling and the stochastic channel model.

Conventions (0-based everywhere):

* cells / BSs ``m in range(M)``, users ``k in range(K)`` within a cell,
  subcarriers ``n in range(N)``, antennas ``a in range(N_Tx)``;
* ``ChannelSet.h[m, n, j, :]`` is the channel from BS ``j`` to the user that
  cell ``m`` schedules on subcarrier ``n`` (``j == m`` is the serving link).

Noise power is 1, so ``p_max`` doubles as the transmit SNR.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import DomainError, RngStream, bessel_j0, db_to_linear, sample_complex_gaussian

PATH_LOSS_REF_M = 200.0
PATH_LOSS_EXP = 3.5


@dataclass(frozen=True)
class SystemConfig:
    M: int
    K: int
    N: int
    N_Tx: int
    p_max: tuple  # linear watts per BS
    weights: np.ndarray  # alpha[m, k]
    inter_site_distance: float = 1000.0
    shadow_std_db: float = 8.0
    d_min: float = 35.0

    def __post_init__(self):
        for name in ("M", "K", "N", "N_Tx"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be >= 1")
        p = tuple(float(x) for x in np.broadcast_to(np.asarray(self.p_max, dtype=float), (self.M,)))
        if any(not (x > 0 and math.isfinite(x)) for x in p):
            raise DomainError("every p_max must be positive and finite")
        object.__setattr__(self, "p_max", p)
        w = np.broadcast_to(np.asarray(self.weights, dtype=float), (self.M, self.K)).copy()
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("user weights must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.inter_site_distance <= 0:
            raise DomainError("inter-site distance must be positive")
        if self.shadow_std_db < 0 or self.d_min <= 0:
            raise DomainError("shadowing std must be >= 0 and d_min > 0")

    @classmethod
    def make(cls, M, K, N, N_Tx, p_max_dbw=10.0, weights=1.0, **kw) -> "SystemConfig":
        return cls(M=M, K=K, N=N, N_Tx=N_Tx, p_max=tuple(np.broadcast_to(db_to_linear(p_max_dbw), (M,))),
                   weights=weights, **kw)

    def with_power_dbw(self, p_max_dbw) -> "SystemConfig":
        return replace(self, p_max=tuple(np.broadcast_to(db_to_linear(p_max_dbw), (self.M,))))

    @property
    def T(self) -> int:
        return self.M * self.N


@dataclass(frozen=True)
class Geometry:
    bs_positions: np.ndarray  # (M, 2)
    user_positions: np.ndarray  # (M, K, 2)

    def distances(self) -> np.ndarray:
        """``l[m, k, j]``: distance from user k of cell m to BS j."""
        diff = self.user_positions[:, :, None, :] - self.bs_positions[None, None, :, :]
        return np.linalg.norm(diff, axis=-1)


@dataclass(frozen=True)
class Schedule:
    assignment: np.ndarray  # (M, N) user index in cell m on subcarrier n

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.ndim != 2:
            raise DomainError("assignment must be an (M, N) array")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def user(self, m: int, n: int) -> int:
        return int(self.assignment[m, n])


@dataclass(frozen=True)
class ChannelSet:
    """Scheduled channels ``h[m, n, j, :]``.

    ``scale`` (amplitude path gain times shadowing, per link) and ``fading``
    are kept when the set comes from the generator so that the fast-fading
    part can be evolved; they are None after a CSI perturbation.
    """

    h: np.ndarray
    scale: np.ndarray | None = None
    fading: np.ndarray | None = None

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.complex128)
        if h.ndim != 4 or h.shape[0] != h.shape[2]:
            raise DomainError(f"channel tensor must be (M, N, M, N_Tx), got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise DomainError("channel entries must be finite")
        h = h.copy()
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def M(self) -> int:
        return self.h.shape[0]

    @property
    def N(self) -> int:
        return self.h.shape[1]

    @property
    def N_Tx(self) -> int:
        return self.h.shape[3]

    def serving(self) -> np.ndarray:
        """``(M, N, N_Tx)`` serving-link channels."""
        idx = np.arange(self.M)
        return self.h[idx, :, idx, :]


@dataclass(frozen=True)
class JakesParams:
    f_D: float
    T_f: float

    def __post_init__(self):
        if self.f_D < 0 or self.T_f <= 0:
            raise DomainError("need f_D >= 0 and T_f > 0")


@dataclass(frozen=True)
class CsiErrorParams:
    sigma_e_sq: float

    def __post_init__(self):
        if self.sigma_e_sq < 0:
            raise DomainError("CSI error variance must be >= 0")

    @classmethod
    def from_db(cls, db: float) -> "CsiErrorParams":
        return cls(0.0 if db == -math.inf else float(db_to_linear(db)))


def place_scenario(config: SystemConfig, stream: RngStream) -> Geometry:
    """BSs on a line at the inter-site spacing; users uniform in a disc around their BS.

    The disc radius is half the spacing; draws closer than ``d_min`` to any
    BS are rejected and redrawn.
    """
    isd = config.inter_site_distance
    bs = np.stack([np.arange(config.M) * isd, np.zeros(config.M)], axis=1)
    radius = isd / 2.0
    gen = stream.generator
    users = np.empty((config.M, config.K, 2))
    for m in range(config.M):
        for k in range(config.K):
            while True:
                r = radius * math.sqrt(gen.random())
                th = 2.0 * math.pi * gen.random()
                p = bs[m] + r * np.array([math.cos(th), math.sin(th)])
                if np.min(np.linalg.norm(bs - p, axis=1)) >= config.d_min:
                    break
            users[m, k] = p
    return Geometry(bs, users)


def path_gain(distance) -> np.ndarray:
    """Amplitude factor ``(200 / l) ** 3.5``."""
    return (PATH_LOSS_REF_M / np.asarray(distance, dtype=float)) ** PATH_LOSS_EXP


@dataclass(frozen=True)
class UserChannels:
    """Channels of every user to every BS, before scheduling.

    ``scale[m, k, j]`` is the amplitude path gain times shadowing and
    ``fading[m, k, j, n, :]`` the CN(0,1) small-scale part.
    """

    scale: np.ndarray
    fading: np.ndarray

    def select(self, schedule: Schedule) -> ChannelSet:
        M, N = schedule.assignment.shape
        cells = np.arange(M)[:, None]
        sub = np.arange(N)[None, :]
        k = schedule.assignment
        scale = self.scale[cells, k, :]  # (M, N, M)
        fading = np.transpose(self.fading, (0, 1, 3, 2, 4))[cells, k, sub]  # (M, N, M, N_Tx)
        return ChannelSet(scale[..., None] * fading, scale=scale, fading=fading)


def generate_user_channels(config: SystemConfig, geometry: Geometry, stream: RngStream) -> UserChannels:
    dist = geometry.distances()
    if np.any(dist < config.d_min):
        raise DomainError(f"user-BS distance below d_min={config.d_min} m")
    shadow_db = config.shadow_std_db * stream.child(0).normal(dist.shape)
    scale = path_gain(dist) * 10.0 ** (shadow_db / 10.0)
    fading = sample_complex_gaussian(stream.child(1), 1.0,
                                     (config.M, config.K, config.M, config.N, config.N_Tx))
    return UserChannels(scale, fading)


def generate_channels(config: SystemConfig, geometry: Geometry, schedule: Schedule,
                      stream: RngStream) -> ChannelSet:
    """Draw path loss, frequency-flat lognormal shadowing and i.i.d. Rayleigh fading.

    Channels are drawn for every user (scheduled or not) so the realization
    does not depend on the schedule, then gathered per ``(m, n)``.
    """
    return generate_user_channels(config, geometry, stream).select(schedule)


def jakes_rho(params: JakesParams) -> float:
    return float(bessel_j0(2.0 * math.pi * params.f_D * params.T_f))


def evolve_channels(channels: ChannelSet, params: JakesParams, stream: RngStream) -> ChannelSet:
    """Next frame under a first-order Gauss-Markov fading process with lag-1 correlation rho."""
    if channels.fading is None or channels.scale is None:
        raise DomainError("evolve_channels needs a generated channel set (scale/fading kept)")
    rho = jakes_rho(params)
    if rho == 1.0:
        return channels
    fresh = sample_complex_gaussian(stream, 1.0, channels.fading.shape)
    fading = rho * channels.fading + math.sqrt(max(0.0, 1.0 - rho * rho)) * fresh
    return ChannelSet(channels.scale[..., None] * fading, scale=channels.scale, fading=fading)


def apply_csi_error(channels: ChannelSet, params: CsiErrorParams, stream: RngStream) -> ChannelSet:
    """``h + e`` with i.i.d. CN(0, sigma_e^2) entries in ``e``; the input is not modified."""
    if params.sigma_e_sq == 0.0:
        return ChannelSet(channels.h.copy())
    e = sample_complex_gaussian(stream, params.sigma_e_sq, channels.h.shape)
    return ChannelSet(channels.h + e)


def random_schedule(config: SystemConfig, stream: RngStream) -> Schedule:
    """Uniform random assignment, with every user covered when ``K <= N``.

    The first ``K`` subcarriers of each cell get a random permutation of the
    users and the rest are uniform. With ``K > N`` a random subset of ``N``
    users is served and a warning is issued.
    """
    gen = stream.generator
    K, N = config.K, config.N
    out = np.empty((config.M, N), dtype=np.int64)
    if K > N:
        warnings.warn(f"K={K} > N={N}: some users are left unscheduled", RuntimeWarning, stacklevel=2)
    for m in range(config.M):
        if K <= N:
            out[m, :K] = gen.permutation(K)
            out[m, K:] = gen.integers(0, K, size=N - K)
        else:
            out[m] = gen.permutation(K)[:N]
    return Schedule(out)


@dataclass
class Scenario:
    """One drop: geometry, schedule and channels for a config."""

    config: SystemConfig
    geometry: Geometry
    schedule: Schedule
    channels: ChannelSet
    users: UserChannels = field(repr=False, default=None)


def draw_scenario(config: SystemConfig, stream: RngStream) -> Scenario:
    geo = place_scenario(config, stream.child(0))
    sched = random_schedule(config, stream.child(1))
    users = generate_user_channels(config, geo, stream.child(2))
    return Scenario(config, geo, sched, users.select(sched), users)

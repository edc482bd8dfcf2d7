"""Monte-Carlo studies: sum-rate vs per-BS power, convergence traces and BER under CSI error.

Every trial draws from its own stream ``RngStream(seed, trial)``, so the
output does not depend on worker count or completion order. All CSV files
start with a versioned comment line and are byte-identical across reruns
with the same seed, except ``convergence_timing.csv`` (wall clock).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import DomainError, RngStream, sample_complex_gaussian
from .rates import BeamformerSet, inner_products, sinr_all
from .spca import SpcaError, SpcaSettings, spca_iterate
from .system import CsiErrorParams, SystemConfig, apply_csi_error, draw_scenario

log = logging.getLogger(__name__)

KINDS = ("sweep", "convergence", "ber")
CSV_VERSION = 1

# trial sub-streams
_SCENARIO, _CSI, _SYMBOLS, _NOISE, _WEIGHTS = range(5)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig
    kind: str
    pmax_sweep_dbw: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    sigma_e2_sweep_db: tuple = (-math.inf, -30.0, -20.0, -10.0)
    trials: int = 20
    seed: int = 0
    variant: str = "WGM"
    epsilon: float = 0.01
    n_iter: int = 20
    out_dir: str = "."
    workers: int = 1
    ber_bits: int = 100_000  # simulated bits per sweep point, summed over trials
    serve_rate_bits: float = 0.01  # BSs load data only where their own design promises more than this
    weight_range: tuple = (0.10, 0.60)
    pmax_dbw: float = 10.0
    uniform_weights: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment must be one of {KINDS}, got {self.kind!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for name in ("pmax_sweep_dbw", "sigma_e2_sweep_db"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ConfigError(f"{name} must be nonempty")
            if list(vals) != sorted(vals):
                raise ConfigError(f"{name} must be sorted ascending")
            object.__setattr__(self, name, vals)
        if self.workers < 1 or self.ber_bits < 1:
            raise ConfigError("workers and ber_bits must be >= 1")
        if not self.serve_rate_bits >= 0:
            raise ConfigError("serve_rate_bits must be >= 0")
        lo, hi = self.weight_range
        if not 0 < lo <= hi:
            raise ConfigError("weight range must satisfy 0 < lo <= hi")
        try:
            self.settings()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    def settings(self) -> SpcaSettings:
        return SpcaSettings(epsilon=self.epsilon, n_iter_max=self.n_iter, variant=self.variant)


# ---------------------------------------------------------------------------
# config files

_DEFAULT_N = {"sweep": 8, "convergence": 8, "ber": 64}
_DEFAULT_M = {"sweep": 3, "convergence": 3, "ber": 2}
_DEFAULT_PMAX = {"sweep": "10", "convergence": "10", "ber": "30"}
_DEFAULT_VARIANT = {"sweep": "WGM", "convergence": "WGM", "ber": "EXP"}
_KNOWN = {"M", "K", "N", "NTX", "PMAX_DBW", "INTER_SITE_M", "WEIGHTS", "SHADOW_STD_DB", "DMIN_M", "SEED",
          "EXPERIMENT", "PMAX_SWEEP_DBW", "SIGMA_E2_SWEEP_DB", "TRIALS", "VARIANT", "EPSILON", "NITER",
          "WORKERS", "BER_BITS", "WEIGHT_RANGE", "SERVE_RATE_BITS"}


def parse_config_text(text: str) -> dict:
    """Flat ``KEY = value`` lines; ``#`` starts a comment. Keys are case-insensitive."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected KEY = value")
        key, val = (p.strip() for p in line.split("=", 1))
        key = key.upper()
        if key not in _KNOWN:
            raise ConfigError(f"line {lineno}: unknown key {key}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        out[key] = val
    return out


def _floats(val: str) -> list:
    out = []
    for tok in val.replace(",", " ").split():
        t = tok.lower()
        if t in ("-inf", "none", "off"):
            out.append(-math.inf)
            continue
        try:
            out.append(float(tok))
        except ValueError as exc:
            raise ConfigError(f"not a number: {tok!r}") from exc
    return out


def _int(val: str, key: str) -> int:
    try:
        return int(val)
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {val!r}") from exc


def config_from_mapping(values: dict, **overrides) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from parsed keys; keyword overrides
    (``seed``, ``trials``, ``out_dir``, ``workers``) win over file values."""
    kind = values.get("EXPERIMENT", "sweep").strip().lower()
    if kind not in KINDS:
        raise ConfigError(f"EXPERIMENT must be one of {KINDS}")
    M = _int(values.get("M", str(_DEFAULT_M[kind])), "M")
    K = _int(values.get("K", "2"), "K")
    N = _int(values.get("N", str(_DEFAULT_N[kind])), "N")
    ntx = _int(values.get("NTX", "2"), "NTX")
    p_dbw = _floats(values.get("PMAX_DBW", _DEFAULT_PMAX[kind]))
    if len(p_dbw) not in (1, M):
        raise ConfigError("PMAX_DBW needs one value or one per BS")
    w_raw = values.get("WEIGHTS", "uniform").strip()
    uniform = w_raw.lower() == "uniform"
    weights = 1.0 if uniform else np.asarray(_floats(w_raw), dtype=float)
    if not uniform and weights.size not in (1, M * K):
        raise ConfigError("WEIGHTS needs 'uniform', one value or M*K values")
    if not uniform and weights.size == M * K:
        weights = weights.reshape(M, K)
    try:
        system = SystemConfig.make(
            M, K, N, ntx, p_max_dbw=np.asarray(p_dbw), weights=weights,
            inter_site_distance=float(values.get("INTER_SITE_M", "1000")),
            shadow_std_db=float(values.get("SHADOW_STD_DB", "8")),
            d_min=float(values.get("DMIN_M", "35")),
        )
    except (DomainError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    kw = dict(kind=kind, pmax_dbw=float(p_dbw[0]), uniform_weights=uniform)
    if "PMAX_SWEEP_DBW" in values:
        kw["pmax_sweep_dbw"] = tuple(_floats(values["PMAX_SWEEP_DBW"]))
    if "SIGMA_E2_SWEEP_DB" in values:
        kw["sigma_e2_sweep_db"] = tuple(_floats(values["SIGMA_E2_SWEEP_DB"]))
    if "WEIGHT_RANGE" in values:
        wr = _floats(values["WEIGHT_RANGE"])
        if len(wr) != 2:
            raise ConfigError("WEIGHT_RANGE needs two values")
        kw["weight_range"] = tuple(wr)
    for key, name, conv in (("TRIALS", "trials", int), ("SEED", "seed", int), ("NITER", "n_iter", int),
                            ("WORKERS", "workers", int), ("BER_BITS", "ber_bits", int),
                            ("EPSILON", "epsilon", float), ("SERVE_RATE_BITS", "serve_rate_bits", float)):
        if key in values:
            try:
                kw[name] = conv(values[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: bad value {values[key]!r}") from exc
    kw["variant"] = values.get("VARIANT", _DEFAULT_VARIANT[kind]).strip().upper()
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if not 0 <= int(kw.get("seed", 0)) < 2 ** 64:
        raise ConfigError("SEED must fit in 64 bits")
    return ExperimentConfig(system=system, **kw)


def load_config(path, **overrides) -> ExperimentConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text()), **overrides)


# ---------------------------------------------------------------------------
# output

@dataclass
class ExperimentResult:
    """CSV tables keyed by file name: ``(columns, rows)``."""

    kind: str
    tables: dict = field(default_factory=dict)
    failed_trials: int = 0
    timing: tuple | None = None  # nondeterministic wall-clock table, written separately


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == -math.inf:
            return "-inf"
        return f"{v:.12g}"
    return str(v)


def write_tables(result: ExperimentResult, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (columns, rows) in result.tables.items():
        path = out / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# spcawsr {name[:-4]} v{CSV_VERSION}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(columns)
            for row in rows:
                wr.writerow([_fmt(v) for v in row])
        written.append(path)
    return written


def mean_stderr(values) -> tuple:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def _map_trials(fn, args: list, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
        return list(pool.map(fn, args))


def _trial_config(cfg: ExperimentConfig, stream: RngStream) -> SystemConfig:
    if cfg.kind != "convergence" or not cfg.uniform_weights:
        return cfg.system
    lo, hi = cfg.weight_range
    w = lo + (hi - lo) * stream.child(_WEIGHTS).uniform((cfg.system.M, cfg.system.K))
    return replace(cfg.system, weights=w)


# ---------------------------------------------------------------------------
# sum-rate vs power

def _sweep_trial(args):
    cfg, trial = args
    stream = RngStream(cfg.seed, trial)
    scn = draw_scenario(cfg.system, stream.child(_SCENARIO))
    rows = []
    for p_dbw in cfg.pmax_sweep_dbw:
        system = cfg.system.with_power_dbw(p_dbw)
        try:
            _, state = spca_iterate(scn.channels, scn.schedule, system, cfg.settings())
            status = "converged" if state.converged else "max_iter"
            rows.append((p_dbw, trial, state.objective_trace[-1], state.iteration, status))
        except SpcaError as exc:
            log.warning("trial %d at %g dBW failed: %s", trial, p_dbw, exc)
            rows.append((p_dbw, trial, "", getattr(exc, "iteration", None) or 0, "failed"))
    return rows


def run_sumrate_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Converged WSR per power and trial, plus trial averages.

    The drop (positions, schedule, channels) of a trial is shared by all
    powers of the sweep, so the averaged curve compares powers on common
    random numbers. Weights come from the scenario (all ones by default).
    """
    if cfg.kind != "sweep":
        raise ConfigError("run_sumrate_sweep needs kind 'sweep'")
    per_trial = _map_trials(_sweep_trial, [(cfg, t) for t in range(cfg.trials)], cfg.workers)
    rows = sorted((r for rs in per_trial for r in rs), key=lambda r: (r[0], r[1]))
    summary = []
    failed = 0
    for p in cfg.pmax_sweep_dbw:
        ok = [r[2] for r in rows if r[0] == p and r[4] != "failed"]
        bad = sum(1 for r in rows if r[0] == p and r[4] == "failed")
        failed += bad
        mean, se = mean_stderr(ok)
        summary.append((p, len(ok), bad, mean, se))
    res = ExperimentResult("sweep", failed_trials=failed)
    res.tables["sweep.csv"] = (["pmax_dbw", "trial", "wsr_bits", "iterations", "status"], rows)
    res.tables["sweep_summary.csv"] = (["pmax_dbw", "n", "n_failed", "mean_wsr_bits", "stderr_wsr_bits"], summary)
    return res


# ---------------------------------------------------------------------------
# convergence traces

def _convergence_trial(args):
    cfg, trial = args
    stream = RngStream(cfg.seed, trial)
    system = _trial_config(cfg, stream)
    scn = draw_scenario(system, stream.child(_SCENARIO))
    try:
        _, state = spca_iterate(scn.channels, scn.schedule, system, cfg.settings())
    except SpcaError as exc:
        log.warning("trial %d failed: %s", trial, exc)
        return trial, None
    return trial, state


def run_convergence(cfg: ExperimentConfig) -> ExperimentResult:
    """Full objective traces (iteration 0 is the matched-filter start).

    With ``WEIGHTS = uniform`` each trial draws its user weights uniformly
    from ``weight_range``. Wall-clock times go to a separate table because
    they are the only nondeterministic output. Averaged traces carry each
    trial's final value forward after it stops.
    """
    if cfg.kind != "convergence":
        raise ConfigError("run_convergence needs kind 'convergence'")
    results = sorted(_map_trials(_convergence_trial, [(cfg, t) for t in range(cfg.trials)], cfg.workers),
                     key=lambda r: r[0])
    trace_rows, timing_rows, trial_rows = [], [], []
    traces = []
    failed = 0
    for trial, state in results:
        if state is None:
            failed += 1
            trial_rows.append((trial, 0, 0, "", "failed"))
            continue
        tr = state.objective_trace
        traces.append(tr)
        for i, v in enumerate(tr):
            trace_rows.append((trial, i, v))
        for i, (dt, iters) in enumerate(zip(state.iter_time_s, state.solver_iters[1:]), 1):
            timing_rows.append((trial, i, 1e3 * dt, iters))
        trial_rows.append((trial, state.iteration, int(state.converged), tr[-1],
                           "converged" if state.converged else "max_iter"))
    mean_rows = []
    if traces:
        depth = max(len(t) for t in traces)
        padded = np.array([t + [t[-1]] * (depth - len(t)) for t in traces])
        for i in range(depth):
            mean, se = mean_stderr(padded[:, i])
            mean_rows.append((i, padded.shape[0], mean, se))
    res = ExperimentResult("convergence", failed_trials=failed)
    res.tables["convergence.csv"] = (["trial", "iteration", "wsr_bits"], trace_rows)
    res.tables["convergence_trials.csv"] = (["trial", "iterations", "converged", "final_wsr_bits", "status"],
                                            trial_rows)
    res.tables["convergence_mean.csv"] = (["iteration", "n", "mean_wsr_bits", "stderr_wsr_bits"], mean_rows)
    res.timing = (["trial", "iteration", "iter_time_ms", "solver_iters"], timing_rows)
    return res


# ---------------------------------------------------------------------------
# BER under CSI error

def qpsk_modulate(bits: np.ndarray) -> np.ndarray:
    """Gray-mapped unit-energy QPSK: bit pairs ``(b0, b1)`` -> ``((1-2b0) + j(1-2b1)) / sqrt2``."""
    b = np.asarray(bits, dtype=np.int8)
    if b.shape[-1] % 2:
        raise DomainError("need an even number of bits")
    b = b.reshape(*b.shape[:-1], -1, 2)
    return ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1])) / math.sqrt(2.0)


def qpsk_demodulate(symbols: np.ndarray) -> np.ndarray:
    s = np.asarray(symbols)
    bits = np.stack(((s.real < 0), (s.imag < 0)), axis=-1).astype(np.int8)
    return bits.reshape(*s.shape[:-1], -1)


@dataclass(frozen=True)
class LinkResult:
    bits_simulated: int
    bit_errors: int
    unserved_tuples: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_simulated if self.bits_simulated else math.nan


def _qpsk_frame(stream: RngStream, periods: int, M: int, N: int):
    """Bits ``(periods, M, 2N)`` and unit noise ``(periods, M, N)``, one row per period.

    Rows are drawn one period at a time so a shorter frame is a prefix of a
    longer one from the same stream.
    """
    bit_gen, noise = stream.child(0), stream.child(1)
    bits = np.empty((periods, M, 2 * N), dtype=np.int8)
    z = np.empty((periods, M, N), dtype=np.complex128)
    for p in range(periods):
        bits[p] = bit_gen.uniform((M, 2 * N)) < 0.5
        z[p] = sample_complex_gaussian(noise, 1.0, (M, N))
    return bits, z


def _detect(G: np.ndarray, bits: np.ndarray, z: np.ndarray, served: np.ndarray) -> LinkResult:
    M = G.shape[0]
    d = qpsk_modulate(bits) * served[None]  # unserved tuples transmit nothing
    eff = G[np.arange(M), :, np.arange(M)]  # (M, N)
    y = np.einsum("mnj,pjn->pmn", G, d) + z
    safe = np.where(served & (eff != 0), eff, 1.0)
    decided = qpsk_demodulate(y / safe)
    err = (decided != bits).reshape(*y.shape, 2) & served[None, :, :, None]
    n = int(served.sum())
    return LinkResult(2 * bits.shape[0] * n, int(err.sum()), int(served.size - n))


def served_tuples(design_channels, beams: BeamformerSet, rate_bits: float) -> np.ndarray:
    """``(M, N)`` mask of tuples whose rate, as the BS computes it from its own
    channel estimate, exceeds ``rate_bits``."""
    return np.log2(1.0 + sinr_all(design_channels, beams)) > rate_bits


def simulate_link(channels, beams: BeamformerSet, periods: int, stream: RngStream,
                  served: np.ndarray | None = None) -> LinkResult:
    """QPSK over ``periods`` symbol periods on the served (cell, subcarrier) tuples.

    ``channels`` are the true channels. Unserved tuples (default: those with
    a zero effective gain) carry no data and cause no interference. The
    receiver divides by its own effective gain ``h^H w`` and slices. Bits
    come from ``stream.child(0)`` and noise from ``stream.child(1)``,
    independent of the beams, so different beam sets see identical symbols
    and noise.
    """
    M, N = channels.M, channels.N
    G = inner_products(channels, beams)
    if served is None:
        served = G[np.arange(M), :, np.arange(M)] != 0
    bits, z = _qpsk_frame(stream, periods, M, N)
    return _detect(G, bits, z, np.asarray(served, dtype=bool))


def _ber_periods(cfg: ExperimentConfig, n_served: int) -> int:
    per_trial = math.ceil(cfg.ber_bits / cfg.trials)
    return math.ceil(per_trial / (2 * n_served)) if n_served else 0


def _ber_trial(args):
    cfg, trial = args
    stream = RngStream(cfg.seed, trial)
    scn = draw_scenario(cfg.system, stream.child(_SCENARIO))
    designs = []
    for i, s_db in enumerate(cfg.sigma_e2_sweep_db):
        est = apply_csi_error(scn.channels, CsiErrorParams.from_db(s_db), stream.child(_CSI, i))
        try:
            beams, _ = spca_iterate(est, scn.schedule, cfg.system, cfg.settings())
        except SpcaError as exc:
            log.warning("trial %d at sigma_e^2 = %g dB failed: %s", trial, s_db, exc)
            designs.append(None)
            continue
        served = served_tuples(est, beams, cfg.serve_rate_bits)
        designs.append((beams, served, _ber_periods(cfg, int(served.sum()))))
    # one frame, long enough for every sweep point; each point uses a prefix
    longest = max((d[2] for d in designs if d is not None), default=0)
    M, N = cfg.system.M, cfg.system.N
    bits, z = _qpsk_frame(stream.child(_SYMBOLS), longest, M, N)
    rows = []
    for s_db, design in zip(cfg.sigma_e2_sweep_db, designs):
        if design is None:
            rows.append((s_db, trial, None))
            continue
        beams, served, periods = design
        G = inner_products(scn.channels, beams)
        rows.append((s_db, trial, _detect(G, bits[:periods], z[:periods], served)))
    return rows


def run_ber(cfg: ExperimentConfig) -> ExperimentResult:
    """Beams from perturbed CSI, transmission over the true channels.

    Each BS loads data only on the tuples its design (on its own estimate)
    serves at more than ``serve_rate_bits``; the symbol count per point is
    set so the served tuples carry about ``ber_bits`` bits in total. Symbols
    and noise of a trial are shared across the error sweep. The
    trial-averaged BER is the mean of per-trial BERs.
    """
    if cfg.kind != "ber":
        raise ConfigError("run_ber needs kind 'ber'")
    per_trial = _map_trials(_ber_trial, [(cfg, t) for t in range(cfg.trials)], cfg.workers)
    flat = sorted((r for rs in per_trial for r in rs), key=lambda r: (r[0], r[1]))
    rows, summary = [], []
    failed = 0
    for s_db, trial, lr in flat:
        if lr is None:
            failed += 1
            continue
        rows.append((s_db, trial, lr.bits_simulated, lr.bit_errors, lr.ber))
    for s_db in cfg.sigma_e2_sweep_db:
        mine = [lr for s, _, lr in flat if s == s_db and lr is not None and lr.bits_simulated]
        mean, se = mean_stderr([lr.ber for lr in mine])
        summary.append((s_db, len(mine), mean, se, sum(lr.bits_simulated for lr in mine),
                        sum(lr.bit_errors for lr in mine), sum(lr.unserved_tuples for lr in mine)))
    res = ExperimentResult("ber", failed_trials=failed)
    res.tables["ber.csv"] = (["sigma_e2_db", "trial", "bits_simulated", "bit_errors", "ber"], rows)
    res.tables["ber_summary.csv"] = (["sigma_e2_db", "n", "mean_ber", "stderr_ber", "bits_total", "errors_total",
                                      "unserved_tuples"], summary)
    return res


RUNNERS = {"sweep": run_sumrate_sweep, "convergence": run_convergence, "ber": run_ber}


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    t0 = time.perf_counter()
    res = RUNNERS[cfg.kind](cfg)
    out = Path(out_dir or cfg.out_dir)
    write_tables(res, out)
    if res.timing is not None:
        write_tables(ExperimentResult(cfg.kind, {"convergence_timing.csv": res.timing}), out)
    log.info("%s: %d trials in %.1f s (%d failed)", cfg.kind, cfg.trials, time.perf_counter() - t0,
             res.failed_trials)
    return res

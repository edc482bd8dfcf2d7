"""Fast oracle-equivalence and invariant checks for an installed build."""

from __future__ import annotations

import logging
import math
import time

import numpy as np

from .conic import solve
from .conic.battery import BATTERY, PROJECTION_CASES, projection_violations
from .numerics import RngStream
from .oracles import GridSpec, grid_search_wsr, waterfilling_single_cell
from .spca import SpcaSettings, spca_iterate, surrogate_c3
from .system import JakesParams, SystemConfig, draw_scenario, jakes_rho

log = logging.getLogger(__name__)


def _waterfilling_examples():
    p, wsr = waterfilling_single_cell([1.0, 1.0], 2.0)
    ok = np.allclose(p, [1, 1]) and abs(wsr - 2.0) < 1e-9
    p, wsr = waterfilling_single_cell([1.0, 0.25], 2.0)
    ok &= np.allclose(p, [2, 0]) and abs(wsr - math.log2(3.0)) < 1e-9
    return ok, "closed-form examples"


def _conic_battery():
    worst = 0.0
    for case in BATTERY:
        sol = solve(case.build(), tolerance=1e-9)
        if not sol.ok:
            return False, f"{case.name}: {sol.status}"
        worst = max(worst, abs(sol.objective_value - case.optimum) / max(1.0, abs(case.optimum)))
    return worst <= 1e-6, f"{len(BATTERY)} programs, worst rel. error {worst:.1e}"


def _projections():
    gen = np.random.default_rng(0)
    worst = 0.0
    for kind, dim in PROJECTION_CASES:
        worst = max(worst, max(projection_violations(kind, dim, 20, gen).values()))
    return worst <= 1e-9, f"worst violation {worst:.1e}"


def _surrogate():
    gen = np.random.default_rng(1)
    r = 1.0 + gen.exponential(5.0, 200)
    beta = gen.uniform(0.1, 10.0, 200)
    phi = gen.uniform(0.01, 10.0, 200)
    lower = surrogate_c3(r, beta, phi) >= beta * np.sqrt(r - 1.0) * (1 - 1e-12)
    tight = np.sqrt(r - 1.0) / beta
    eq = np.allclose(surrogate_c3(r, beta, tight), beta * np.sqrt(r - 1.0), rtol=1e-12)
    return bool(lower.all() and eq), "upper bound and tangency"


def _jakes():
    rho = jakes_rho(JakesParams(f_D=1.0, T_f=0.01))
    return abs(rho - 0.999013) <= 1e-6, f"rho = {rho:.6f}"


def _spca_vs_waterfilling():
    worst = 0.0
    for seed in range(3):
        cfg = SystemConfig.make(1, 1, 4, 1 + seed % 2, 10.0)
        scn = draw_scenario(cfg, RngStream(7, seed))
        gains = np.sum(np.abs(scn.channels.serving()[0]) ** 2, axis=-1)
        _, ref = waterfilling_single_cell(gains, cfg.p_max[0])
        _, st = spca_iterate(scn.channels, scn.schedule, cfg,
                             SpcaSettings(epsilon=1e-4, relative_stop=True, n_iter_max=200))
        worst = max(worst, abs(st.objective_trace[-1] - ref) / ref)
    return worst <= 5e-3, f"worst rel. gap {worst:.1e}"


def _spca_vs_grid():
    worst = 0.0
    for seed in range(3):
        cfg = SystemConfig.make(2, 1, 1, 1, 10.0)
        scn = draw_scenario(cfg, RngStream(8, seed))
        ref, _ = grid_search_wsr(scn.channels, scn.schedule, cfg, GridSpec(256))
        _, st = spca_iterate(scn.channels, scn.schedule, cfg)
        worst = max(worst, (ref - st.objective_trace[-1]) / ref)
    return worst <= 1e-2, f"worst shortfall {worst:.1e}"


def _spca_monotone():
    worst = 0.0
    for seed in range(3):
        cfg = SystemConfig.make(3, 2, 4, 2, 10.0)
        scn = draw_scenario(cfg, RngStream(9, seed))
        _, st = spca_iterate(scn.channels, scn.schedule, cfg)
        worst = min(worst, float(np.min(np.diff(st.objective_trace))))
    return worst >= -1e-5, f"largest decrease {max(0.0, -worst):.1e}"


CHECKS = (
    ("waterfilling examples", _waterfilling_examples),
    ("conic battery", _conic_battery),
    ("cone projections", _projections),
    ("surrogate bound", _surrogate),
    ("jakes correlation", _jakes),
    ("spca vs water-filling", _spca_vs_waterfilling),
    ("spca vs grid search", _spca_vs_grid),
    ("spca monotone trace", _spca_monotone),
)


def run_selftest(out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name:<24} {detail} ({time.perf_counter() - t0:.1f} s)")
    return all_ok

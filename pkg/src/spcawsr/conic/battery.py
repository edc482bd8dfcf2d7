"""Tiny conic programs with known optima and cone-projection sanity checks.

Shared by the test suite and the ``selftest`` command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .cones import project_cone, project_dual
from .program import Affine, ConicProgram, add_exp_epigraph, add_geomean_tower

V = Affine.var


@dataclass(frozen=True)
class BatteryCase:
    name: str
    build: Callable[[], ConicProgram]
    optimum: float  # of the maximization objective


def _lp_box():
    p = ConicProgram()
    x = p.add_variables(2)
    for i in x:
        p.add_nonneg(V(i))
        p.add_nonneg(1.0 - V(i))
    p.maximize(V(x[0]) + 2.0 * V(x[1]))
    return p


def _lp_equality():
    p = ConicProgram()
    x, y = p.add_variables(2)
    p.add_equality(V(x) + 2.0 * V(y), 4.0)
    p.add_nonneg(V(x))
    p.add_nonneg(V(y))
    p.add_nonneg(3.0 - V(x))
    p.maximize(V(x) + V(y))
    return p


def _lp_simplex():
    p = ConicProgram()
    x = p.add_variables(3)
    for i in x:
        p.add_nonneg(V(i))
    p.add_nonneg(1.0 - V(x[0]) - V(x[1]) - V(x[2]))
    p.maximize(3.0 * V(x[0]) + V(x[1]) + 2.0 * V(x[2]))
    return p


def _soc_ball():
    p = ConicProgram()
    x = p.add_variables(2)
    p.add_soc([Affine.constant(1.0), V(x[0]), V(x[1])])
    p.maximize(3.0 * V(x[0]) + 4.0 * V(x[1]))
    return p


def _norm_epigraph():
    # distance from (1, 1) to the line x0 + x1 = 0
    p = ConicProgram()
    t = p.add_variable("t")
    x = p.add_variables(2)
    p.add_soc([V(t), V(x[0]) - 1.0, V(x[1]) - 1.0])
    p.add_equality(V(x[0]) + V(x[1]), 0.0)
    p.maximize(-V(t))
    return p


def _rotated_box():
    p = ConicProgram()
    a, b, z = p.add_variables(3)
    p.add_rotated_soc([V(a), V(b), V(z)])
    p.add_nonneg(2.0 - V(a))
    p.add_nonneg(3.0 - V(b))
    p.maximize(V(z))
    return p


def _geomean_symmetric():
    p = ConicProgram()
    x = p.add_variables(2)
    p.add_nonneg(2.0 - V(x[0]) - V(x[1]))
    g = add_geomean_tower(p, list(x), [1, 1])
    p.maximize(V(g))
    return p


def _geomean_weighted():
    p = ConicProgram()
    x = p.add_variables(2)
    p.add_nonneg(3.0 - V(x[0]) - V(x[1]))
    g = add_geomean_tower(p, list(x), [Fraction(1, 3), Fraction(2, 3)])
    p.maximize(V(g))
    return p


def _geomean_three():
    # three leaves pad the tower to four slots
    p = ConicProgram()
    x = p.add_variables(3)
    p.add_nonneg(3.0 - V(x[0]) - V(x[1]) - V(x[2]))
    g = add_geomean_tower(p, list(x), [1, 1, 1])
    p.maximize(V(g))
    return p


def _exp_log_two():
    p = ConicProgram()
    x, z = p.add_variables(2)
    add_exp_epigraph(p, x, z)
    p.add_nonneg(2.0 - V(z))
    p.maximize(V(x))
    return p


def _exp_min_epigraph():
    p = ConicProgram()
    x, t = p.add_variables(2)
    add_exp_epigraph(p, x, t)
    p.add_nonneg(V(x) - 1.0)
    p.maximize(-V(t))
    return p


def _log_sum():
    # max log(1 + x0) + log(1 + x1) with x0 + x1 = 1
    p = ConicProgram()
    x = p.add_variables(2)
    u = p.add_variables(2)
    p.add_equality(V(x[0]) + V(x[1]), 1.0)
    for i in range(2):
        p.add_nonneg(V(x[i]))
        add_exp_epigraph(p, u[i], V(x[i]) + 1.0)
    p.maximize(V(u[0]) + V(u[1]))
    return p


def _entropy():
    # max sum -x ln x on the simplex: (t, x, 1) in K_exp means t <= -x ln x
    p = ConicProgram()
    x = p.add_variables(3)
    t = p.add_variables(3)
    p.add_equality(V(x[0]) + V(x[1]) + V(x[2]), 1.0)
    for i in range(3):
        p.add_cone("exp", [V(t[i]), V(x[i]), Affine.constant(1.0)])
    p.maximize(V(t[0]) + V(t[1]) + V(t[2]))
    return p


def _soc_with_equality():
    p = ConicProgram()
    x, y = p.add_variables(2)
    p.add_soc([Affine.constant(2.0), V(x), V(y)])
    p.add_equality(V(y), 1.0)
    p.maximize(V(x))
    return p


BATTERY = (
    BatteryCase("lp_box", _lp_box, 3.0),
    BatteryCase("lp_equality", _lp_equality, 3.5),
    BatteryCase("lp_simplex", _lp_simplex, 3.0),
    BatteryCase("soc_ball", _soc_ball, 5.0),
    BatteryCase("norm_epigraph", _norm_epigraph, -math.sqrt(2.0)),
    BatteryCase("rotated_box", _rotated_box, math.sqrt(12.0)),
    BatteryCase("geomean_symmetric", _geomean_symmetric, 1.0),
    BatteryCase("geomean_weighted", _geomean_weighted, 2.0 ** (2.0 / 3.0)),
    BatteryCase("geomean_three", _geomean_three, 1.0),
    BatteryCase("exp_log_two", _exp_log_two, math.log(2.0)),
    BatteryCase("exp_min_epigraph", _exp_min_epigraph, -math.e),
    BatteryCase("log_sum", _log_sum, 2.0 * math.log(1.5)),
    BatteryCase("entropy", _entropy, math.log(3.0)),
    BatteryCase("soc_with_equality", _soc_with_equality, math.sqrt(3.0)),
)


def _sample_in_cone(kind: str, dim: int, gen: np.random.Generator) -> np.ndarray:
    return project_cone(kind, 3.0 * gen.standard_normal(dim))


def cone_violation(kind: str, p: np.ndarray) -> float:
    """Direct membership violation, computed without any projection."""
    if kind == "nonneg":
        return float(max(0.0, -p.min()))
    if kind == "soc":
        return float(max(0.0, np.linalg.norm(p[1:]) - p[0]))
    if kind == "rotated_soc":
        a, b, u = p[0], p[1], p[2:]
        return float(max(0.0, -a, -b, np.linalg.norm(u) - math.sqrt(max(2.0 * a * b, 0.0))))
    x, y, z = p
    if y > 1e-12:
        if x / y < 700.0:
            return float(max(0.0, -z, y * math.exp(x / y) - z))
        # y exp(x/y) <= z  <=>  x <= y log(z/y), without the overflow
        return float(max(0.0, -z, x - y * math.log(z / y)) if z > 0 else max(-z, x, 1.0))
    return float(max(0.0, -y, x, -z))


def projection_violations(kind: str, dim: int, n_points: int, gen: np.random.Generator) -> dict:
    """Worst violations over random points of: membership of ``P(v)``,
    idempotence, polarity and orthogonality of ``v - P(v)``, and the
    variational inequality ``<v - P(v), z - P(v)> <= 0`` for sampled cone
    points ``z``. Each value is relative to ``max(1, |v|)``.
    """
    worst = dict(membership=0.0, idempotence=0.0, polar=0.0, orthogonality=0.0, variational=0.0)
    for _ in range(n_points):
        v = gen.standard_normal(dim) * 10.0 ** gen.uniform(-2, 2)
        scale = max(1.0, float(np.linalg.norm(v)))
        p = project_cone(kind, v)
        r = v - p
        pp = project_cone(kind, p)
        worst["membership"] = max(worst["membership"], cone_violation(kind, p) / scale)
        worst["idempotence"] = max(worst["idempotence"], float(np.linalg.norm(pp - p)) / scale)
        # -r must lie in the dual cone
        worst["polar"] = max(worst["polar"], float(np.linalg.norm(project_dual(kind, -r) + r)) / scale)
        worst["orthogonality"] = max(worst["orthogonality"], abs(float(p @ r)) / scale ** 2)
        for _ in range(5):
            z = _sample_in_cone(kind, dim, gen)
            worst["variational"] = max(worst["variational"], float(r @ (z - p)) / (scale * max(1.0, float(np.linalg.norm(z)))))
    return worst


PROJECTION_CASES = (("nonneg", 1), ("nonneg", 5), ("soc", 2), ("soc", 4), ("soc", 9),
                    ("rotated_soc", 3), ("rotated_soc", 5), ("exp", 3))

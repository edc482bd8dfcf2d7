import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcawsr import _accel
from spcawsr.conic import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    Affine,
    ConicProgram,
    DimensionError,
    add_exp_epigraph,
    add_geomean_tower,
    distance_to_cone,
    load_triplets,
    project_cone,
    project_dual,
    rationalize_weights,
    solve,
)
from spcawsr.conic import _kernels
from spcawsr.conic.battery import BATTERY, PROJECTION_CASES, cone_violation, projection_violations
from spcawsr.conic.cones import exp_project_vec, soc_project_blocks

V = Affine.var
vec = lambda n: st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n).map(np.array)


def _fixed(prog, values):
    idx = prog.add_variables(len(values))
    for i, v in zip(idx, values):
        prog.add_equality(V(i), v)
    return list(idx)


# -- cone slices -------------------------------------------------------------

def test_soc_norm_epigraph():
    p = ConicProgram()
    t = p.add_variable()
    p.add_soc([V(t), Affine.constant(3.0), Affine.constant(4.0)])
    p.maximize(-V(t))
    sol = solve(p, 1e-9)
    assert sol.status == OPTIMAL
    assert sol.primal[t] == pytest.approx(5.0, rel=1e-7)


def test_rotated_cone_bound():
    p = ConicProgram()
    u = p.add_variable()
    p.add_rotated_soc([Affine.constant(1.0), Affine.constant(1.0), V(u)])
    p.maximize(V(u))
    assert solve(p, 1e-9).primal[u] == pytest.approx(math.sqrt(2.0), rel=1e-7)


def test_infeasible_slice_residual():
    p = ConicProgram()
    t = p.add_variable()
    p.add_equality(V(t), -1.0)
    cid = p.add_soc([V(t), Affine.constant(1.0)])
    assert p.residuals([-1.0]).max() > 0
    assert distance_to_cone("soc", p.slice_value(cid, [-1.0])) > 0


def test_cone_argument_checks():
    p = ConicProgram()
    x = p.add_variable()
    with pytest.raises(ValueError):
        p.add_cone("psd", [V(x)])
    with pytest.raises(ValueError):
        p.add_rotated_soc([V(x), V(x)])
    with pytest.raises((DimensionError, IndexError, ValueError)):
        p.add_nonneg(V(5))


# -- geomean towers ----------------------------------------------------------

@pytest.mark.parametrize("values, weights, expected", [
    ((4.0, 1.0), (1, 1), 2.0),
    ((8.0,), (1,), 8.0),
    ((2.0, 2.0, 2.0), (1, 1, 2), 2.0),
    ((3.0, 5.0, 7.0), (Fraction(1, 6), Fraction(1, 3), Fraction(1, 2)), 3 ** (1 / 6) * 5 ** (1 / 3) * 7 ** 0.5),
])
def test_geomean_of_fixed_inputs(values, weights, expected):
    p = ConicProgram()
    leaves = _fixed(p, values)
    g = add_geomean_tower(p, leaves, weights)
    p.maximize(V(g))
    sol = solve(p, 1e-9)
    assert sol.status == OPTIMAL
    assert sol.objective_value == pytest.approx(expected, rel=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=5), st.lists(st.integers(1, 64), min_size=5, max_size=5))
def test_geomean_tower_exactness(values, nums):
    weights = [Fraction(k, 64) for k in nums[:len(values)]]
    p = ConicProgram()
    g = add_geomean_tower(p, _fixed(p, values), weights)
    p.maximize(V(g))
    total = sum(weights)
    expected = math.prod(v ** float(w / total) for v, w in zip(values, weights))
    assert solve(p, 1e-10).objective_value == pytest.approx(expected, rel=1e-6)


def test_geomean_symmetric_split():
    p = ConicProgram()
    r = p.add_variables(2)
    p.add_equality(V(r[0]) + V(r[1]), 4.0)
    for i in r:
        p.add_nonneg(V(i))
    g = add_geomean_tower(p, list(r), [1, 1])
    p.maximize(V(g))
    sol = solve(p, 1e-9)
    assert sol.objective_value == pytest.approx(2.0, rel=1e-7)
    np.testing.assert_allclose(sol.primal[r], [2.0, 2.0], rtol=1e-5)


def test_geomean_rejects_irrational_weights():
    p = ConicProgram()
    x = p.add_variables(2)
    with pytest.raises(ValueError):
        add_geomean_tower(p, list(x), [0.3, 0.7])
    with pytest.raises(DimensionError):
        add_geomean_tower(p, list(x), [1])


def test_rationalize_weights():
    # only ratios matter, so weights are snapped relative to the largest one
    w = np.array([0.1, 1 / 3, 0.6])
    fr = rationalize_weights(w, 64)
    assert all(f.denominator <= 64 for f in fr)
    np.testing.assert_allclose([float(f) for f in fr], w / w.max(), atol=0.5 / 64)
    assert rationalize_weights([0.25, 0.5]) == [Fraction(1, 2), Fraction(1, 1)]
    with pytest.raises(ValueError):
        rationalize_weights([1.0, 0.0])


# -- exponential cone --------------------------------------------------------

@pytest.mark.parametrize("a, v_min", [(0.0, 1.0), (math.log(2.0), 2.0)])
def test_exp_minimal_epigraph(a, v_min):
    p = ConicProgram()
    x, v = p.add_variables(2)
    p.add_equality(V(x), a)
    add_exp_epigraph(p, x, v)
    p.maximize(-V(v))
    assert solve(p, 1e-9).primal[v] == pytest.approx(v_min, rel=1e-6)


def test_exp_inversion():
    p = ConicProgram()
    a, v = p.add_variables(2)
    p.add_equality(V(v), 0.5)
    add_exp_epigraph(p, a, v)
    p.maximize(V(a))
    assert solve(p, 1e-9).primal[a] == pytest.approx(math.log(0.5), rel=1e-6)


# -- solver ------------------------------------------------------------------

def test_lp_box_example():
    p = ConicProgram()
    x, s = p.add_variables(2)
    p.add_nonneg(V(x))
    p.add_nonneg(V(s))
    p.add_equality(V(x) + V(s), 3.0)
    p.maximize(V(x))
    assert solve(p, 1e-9).primal[x] == pytest.approx(3.0, rel=1e-7)


@pytest.mark.parametrize("case", BATTERY, ids=lambda c: c.name)
def test_battery(case):
    sol = solve(case.build(), tolerance=1e-9)
    assert sol.status == OPTIMAL
    assert abs(sol.objective_value - case.optimum) <= 1e-6 * max(1.0, abs(case.optimum))


@pytest.mark.parametrize("case", BATTERY, ids=lambda c: c.name)
def test_certificate_recheck(case):
    # residuals recomputed from the program itself, not the solver's state
    prog = case.build()
    sol = solve(prog, tolerance=1e-9)
    assert prog.residuals(sol.primal).max() <= 1e-6
    cp = prog.compile()
    # the compiled cost is the minimization form of the objective
    assert float(cp.c @ sol.primal) == pytest.approx(-sol.objective_value, abs=1e-9)


def test_infeasible_and_unbounded():
    p = ConicProgram()
    x = p.add_variable()
    p.add_nonneg(V(x) - 1.0)
    p.add_nonneg(-V(x))
    p.maximize(V(x))
    assert solve(p).status == INFEASIBLE
    q = ConicProgram()
    y = q.add_variable()
    q.add_nonneg(V(y))
    q.maximize(V(y))
    assert solve(q).status == UNBOUNDED


def test_solve_is_deterministic():
    a = solve(BATTERY[-3].build(), 1e-9)
    b = solve(BATTERY[-3].build(), 1e-9)
    assert np.array_equal(a.primal, b.primal) and np.array_equal(a.dual, b.dual)
    assert a.iterations == b.iterations


def test_solve_validation():
    with pytest.raises(ValueError):
        solve(BATTERY[0].build(), tolerance=0.0)


@pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba disabled")
@pytest.mark.parametrize("case", BATTERY, ids=lambda c: c.name)
def test_backends_agree(case):
    a = solve(case.build(), 1e-9, backend="numba")
    b = solve(case.build(), 1e-9, backend="numpy")
    assert a.backend == "numba" and b.backend == "numpy"
    assert a.status == b.status == OPTIMAL
    assert a.objective_value == pytest.approx(b.objective_value, rel=1e-7, abs=1e-8)


def test_triplet_roundtrip(tmp_path):
    prog = BATTERY[-2].build()
    path = tmp_path / "prog.txt"
    prog.dump_triplets(path)
    cp = load_triplets(path)
    ref = prog.compile()
    assert (cp.A != ref.A).nnz == 0
    np.testing.assert_array_equal(cp.b, ref.b)
    assert solve(cp, 1e-9).objective_value == pytest.approx(solve(prog, 1e-9).objective_value, rel=1e-9)


def test_scs_cross_check():
    scs = pytest.importorskip("scs")
    for case in BATTERY:
        cp = case.build().compile()
        data = dict(A=cp.A.tocsc(), b=cp.b, c=cp.c)
        cone = dict(z=cp.n_zero, l=cp.n_nonneg, q=cp.soc_dims.tolist(), ep=cp.n_exp)
        ref = scs.SCS(data, cone, eps_abs=1e-9, eps_rel=1e-9, verbose=False).solve()
        mine = solve(cp, 1e-9)
        assert float(cp.c @ mine.primal) == pytest.approx(float(cp.c @ ref["x"]), abs=1e-6), case.name


# -- projections -------------------------------------------------------------

def test_projection_examples():
    np.testing.assert_allclose(project_cone("soc", [0.0, 2.0, 0.0]), [1.0, 1.0, 0.0])
    assert project_cone("nonneg", [-1.0])[0] == 0.0
    inside = np.array([5.0, 3.0, 4.0])
    np.testing.assert_array_equal(project_cone("soc", inside), inside)
    assert np.all(project_cone("zero", [1.0, -2.0]) == 0)
    np.testing.assert_allclose(project_cone("exp", [0.0, 1.0, 1.0]), [0.0, 1.0, 1.0])


@pytest.mark.parametrize("kind, dim", PROJECTION_CASES)
def test_projection_properties(kind, dim):
    v = projection_violations(kind, dim, 100, np.random.default_rng(hash((kind, dim)) % 2 ** 32))
    assert v["idempotence"] <= 1e-12
    assert v["variational"] <= 1e-10
    assert v["membership"] <= 1e-10
    assert v["polar"] <= 1e-10
    assert v["orthogonality"] <= 1e-10


@settings(max_examples=200)
@given(vec(3))
def test_exp_projection_moreau(v):
    p = project_cone("exp", v)
    # Moreau: v = P_K(v) - P_K*(-v) for the dual cone K*
    d = project_dual("exp", -v)
    np.testing.assert_allclose(p - d, v, atol=1e-8 * max(1.0, np.linalg.norm(v)))
    assert cone_violation("exp", p) <= 1e-9 * max(1.0, np.linalg.norm(v))


@settings(max_examples=100)
@given(vec(5))
def test_rotated_projection_optimal(v):
    p = project_cone("rotated_soc", v)
    assert cone_violation("rotated_soc", p) <= 1e-9 * max(1.0, np.linalg.norm(v))
    gen = np.random.default_rng(0)
    for _ in range(10):
        z = project_cone("rotated_soc", gen.standard_normal(5) * 10)
        assert (v - p) @ (z - p) <= 1e-8 * max(1.0, np.linalg.norm(v)) * max(1.0, np.linalg.norm(z))


def test_vector_kernels_match_scalar_kernels():
    gen = np.random.default_rng(5)
    pts = gen.standard_normal((500, 3)) * 10.0 ** gen.uniform(-3, 3, (500, 1))
    r, s, t = exp_project_vec(pts[:, 0].copy(), pts[:, 1].copy(), pts[:, 2].copy())
    for i in range(pts.shape[0]):
        ref = _kernels.exp_project(*pts[i])
        scale = max(1.0, np.linalg.norm(pts[i]))
        assert np.allclose([r[i], s[i], t[i]], ref, atol=1e-9 * scale)
    dims = np.array([2, 4, 9])
    starts = np.concatenate(([0], np.cumsum(dims)[:-1]))
    v = gen.standard_normal(dims.sum())
    ref = v.copy()
    for a, d in zip(starts, dims):
        _kernels.soc_project_inplace(ref, a, d)
    soc_project_blocks(v, starts, dims)
    np.testing.assert_allclose(v, ref, atol=1e-14)

"""Conic program container and builders.

A program maximizes ``c @ x`` subject to linear equalities and cone
memberships of affine slices ``D x + e``. Everything is real; complex data
must be embedded by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .cones import CONE_KINDS, distance_to_cone, min_dim


class DimensionError(ValueError):
    pass


class Affine:
    """Scalar affine expression ``sum(coef[i] * x[idx[i]]) + const``."""

    __slots__ = ("idx", "coef", "const")

    def __init__(self, idx=(), coef=(), const: float = 0.0):
        self.idx = np.asarray(idx, dtype=np.int64).ravel()
        self.coef = np.asarray(coef, dtype=float).ravel()
        if self.idx.shape != self.coef.shape:
            raise DimensionError("index/coefficient length mismatch")
        self.const = float(const)

    @classmethod
    def var(cls, i: int, coef: float = 1.0) -> "Affine":
        return cls([i], [coef])

    @classmethod
    def constant(cls, value: float) -> "Affine":
        return cls((), (), value)

    def __add__(self, other):
        if isinstance(other, Affine):
            return Affine(np.concatenate((self.idx, other.idx)),
                          np.concatenate((self.coef, other.coef)), self.const + other.const)
        return Affine(self.idx, self.coef, self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.idx, -self.coef, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k: float):
        k = float(k)
        return Affine(self.idx, self.coef * k, self.const * k)

    __rmul__ = __mul__

    def __truediv__(self, k: float):
        return self * (1.0 / float(k))

    def value(self, x: np.ndarray) -> float:
        return float(self.coef @ x[self.idx]) + self.const if self.idx.size else self.const

    def __repr__(self):
        terms = " + ".join(f"{c:g}*x{i}" for i, c in zip(self.idx, self.coef))
        return f"Affine({terms or '0'} + {self.const:g})"


def _as_affine(item) -> Affine:
    if isinstance(item, Affine):
        return item
    return Affine.constant(float(item))


@dataclass
class ConeConstraint:
    kind: str
    rows: list
    label: str = ""

    @property
    def dim(self) -> int:
        return len(self.rows)


@dataclass
class EqConstraint:
    expr: Affine  # expr.const holds -rhs
    label: str = ""


@dataclass
class CompiledProgram:
    """SCS-style data: minimize ``c @ x`` s.t. ``A x + s = b``, ``s`` in K.

    Cone order is zero, nonneg, soc (rotated cones already mapped), exp.
    ``row_map[i]`` lists the compiled rows of constraint id ``i``.
    """

    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    n_zero: int
    n_nonneg: int
    soc_dims: np.ndarray
    n_exp: int
    row_map: list
    rotated: list = field(default_factory=list)

    @property
    def shape(self):
        return self.A.shape


class ConicProgram:
    """Mutable builder; :meth:`compile` freezes it into solver data."""

    def __init__(self):
        self.num_vars = 0
        self.var_names: list = []
        self._obj_idx: list = []
        self._obj_coef: list = []
        self.constraints: list = []  # EqConstraint | ConeConstraint, id = position
        self.towers: list = []  # (g, leaves, multiplicities, levels) per geomean tower
        self._compiled = None

    # variables and objective ------------------------------------------------
    def add_variables(self, count: int, name: str = "x") -> np.ndarray:
        if count < 1:
            raise DimensionError("need at least one variable")
        first = self.num_vars
        self.num_vars += count
        self.var_names.extend(f"{name}[{i}]" for i in range(count))
        self._compiled = None
        return np.arange(first, first + count)

    def add_variable(self, name: str = "x") -> int:
        return int(self.add_variables(1, name)[0])

    def maximize(self, expr: Affine) -> None:
        """Add ``expr`` (constant ignored) to the maximization objective."""
        self._obj_idx.append(expr.idx)
        self._obj_coef.append(expr.coef)
        self._compiled = None

    @property
    def objective(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        if self._obj_idx:
            np.add.at(c, np.concatenate(self._obj_idx), np.concatenate(self._obj_coef))
        return c

    # constraints -------------------------------------------------------------
    def add_equality(self, lhs, rhs: float = 0.0, label: str = "eq") -> int:
        expr = _as_affine(lhs) - float(rhs)
        self._check_indices(expr)
        self.constraints.append(EqConstraint(expr, label))
        self._compiled = None
        return len(self.constraints) - 1

    def add_cone(self, kind: str, rows: Sequence, label: str = "") -> int:
        if kind not in CONE_KINDS:
            raise ValueError(f"unknown cone kind {kind!r}")
        rows = [_as_affine(r) for r in rows]
        if len(rows) < min_dim(kind) or (kind == "exp" and len(rows) != 3):
            raise DimensionError(f"{kind} slice of dimension {len(rows)} is too small")
        for r in rows:
            self._check_indices(r)
        self.constraints.append(ConeConstraint(kind, rows, label or kind))
        self._compiled = None
        return len(self.constraints) - 1

    def add_soc(self, rows: Sequence, label: str = "soc") -> int:
        return self.add_cone("soc", rows, label)

    def add_rotated_soc(self, rows: Sequence, label: str = "rotated_soc") -> int:
        return self.add_cone("rotated_soc", rows, label)

    def add_nonneg(self, expr, label: str = "nonneg") -> int:
        return self.add_cone("nonneg", [expr], label)

    def _check_indices(self, expr: Affine) -> None:
        if expr.idx.size and (expr.idx.min() < 0 or expr.idx.max() >= self.num_vars):
            raise DimensionError("expression references an unknown variable")

    def count(self, label: str) -> int:
        return sum(1 for c in self.constraints if c.label == label)

    # evaluation --------------------------------------------------------------
    def residuals(self, x) -> np.ndarray:
        """Per-constraint violation at ``x``: |lhs| for equalities, cone distance otherwise."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.num_vars,):
            raise DimensionError(f"point has shape {x.shape}, expected ({self.num_vars},)")
        out = np.empty(len(self.constraints))
        for i, con in enumerate(self.constraints):
            if isinstance(con, EqConstraint):
                out[i] = abs(con.expr.value(x))
            else:
                out[i] = distance_to_cone(con.kind, [r.value(x) for r in con.rows])
        return out

    def slice_value(self, cid: int, x) -> np.ndarray:
        con = self.constraints[cid]
        if isinstance(con, EqConstraint):
            return np.array([con.expr.value(np.asarray(x))])
        return np.array([r.value(np.asarray(x)) for r in con.rows])

    # compilation -------------------------------------------------------------
    def compile(self) -> CompiledProgram:
        if self._compiled is not None:
            return self._compiled
        groups = {"zero": [], "nonneg": [], "soc": [], "exp": []}
        for cid, con in enumerate(self.constraints):
            if isinstance(con, EqConstraint):
                groups["zero"].append(cid)
            elif con.kind == "rotated_soc":
                groups["soc"].append(cid)
            else:
                groups[con.kind].append(cid)

        rows_i, cols, vals, rhs = [], [], [], []
        row_map: list = [None] * len(self.constraints)
        rotated = []
        soc_dims = []
        r = 0

        def emit(expr: Affine, sign: float):
            nonlocal r
            rows_i.append(np.full(expr.idx.size, r))
            cols.append(expr.idx)
            vals.append(sign * expr.coef)
            r += 1

        for kind in ("zero", "nonneg", "soc", "exp"):
            for cid in groups[kind]:
                con = self.constraints[cid]
                start = r
                if isinstance(con, EqConstraint):
                    # a.x + const = 0  ->  A x + s = b with s = 0
                    emit(con.expr, 1.0)
                    rhs.append(-con.expr.const)
                else:
                    slices = con.rows
                    if con.kind == "rotated_soc":
                        h = math.sqrt(0.5)
                        slices = [(slices[0] + slices[1]) * h, (slices[0] - slices[1]) * h] + list(slices[2:])
                        rotated.append(cid)
                    # s = D x + e  ->  A = -D, b = e
                    for expr in slices:
                        emit(expr, -1.0)
                        rhs.append(expr.const)
                    if kind == "soc":
                        soc_dims.append(len(slices))
                row_map[cid] = np.arange(start, r)

        n = self.num_vars
        if rows_i:
            A = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols))), shape=(r, n)
            )
        else:
            A = sp.csr_matrix((0, n))
        A.sum_duplicates()
        A.sort_indices()
        n_zero = sum(len(self.constraints[c].rows) if isinstance(self.constraints[c], ConeConstraint) else 1
                     for c in groups["zero"])
        n_nonneg = sum(self.constraints[c].dim for c in groups["nonneg"])
        self._compiled = CompiledProgram(
            A=A, b=np.asarray(rhs, dtype=float), c=-self.objective,
            n_zero=n_zero, n_nonneg=n_nonneg,
            soc_dims=np.asarray(soc_dims, dtype=np.int64), n_exp=len(groups["exp"]),
            row_map=row_map, rotated=rotated,
        )
        return self._compiled

    # plain-text export -----------------------------------------------------------
    def dump_triplets(self, path) -> None:
        """Write compiled data, one nonzero per line.

        ``row col value`` for A, ``row -1 value`` for b, ``-1 col value`` for
        the (minimization) cost. Header comments record the cone layout.
        """
        cp = self.compile()
        A = cp.A.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# m={A.shape[0]} n={A.shape[1]}\n")
            fh.write(f"# zero={cp.n_zero} nonneg={cp.n_nonneg} "
                     f"soc={','.join(map(str, cp.soc_dims.tolist()))} exp={cp.n_exp}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
            for i, v in enumerate(cp.b):
                if v != 0.0:
                    fh.write(f"{i} -1 {float(v)!r}\n")
            for j, v in enumerate(cp.c):
                if v != 0.0:
                    fh.write(f"-1 {j} {float(v)!r}\n")


def load_triplets(path) -> CompiledProgram:
    """Inverse of :meth:`ConicProgram.dump_triplets` (without constraint ids)."""
    header = {}
    ri, ci, vi = [], [], []
    bvals, cvals = {}, {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, v = tok.split("=")
                    header[k] = v
                continue
            i, j, v = line.split()
            i, j, v = int(i), int(j), float(v)
            if j == -1:
                bvals[i] = v
            elif i == -1:
                cvals[j] = v
            else:
                ri.append(i)
                ci.append(j)
                vi.append(v)
    m, n = int(header["m"]), int(header["n"])
    b = np.zeros(m)
    for i, v in bvals.items():
        b[i] = v
    c = np.zeros(n)
    for j, v in cvals.items():
        c[j] = v
    soc = header.get("soc", "")
    return CompiledProgram(
        A=sp.csr_matrix((vi, (ri, ci)), shape=(m, n)), b=b, c=c,
        n_zero=int(header["zero"]), n_nonneg=int(header["nonneg"]),
        soc_dims=np.array([int(s) for s in soc.split(",") if s], dtype=np.int64),
        n_exp=int(header["exp"]), row_map=[],
    )


# ---------------------------------------------------------------------------
# builders


def add_soc(prog: ConicProgram, rows: Sequence, label: str = "soc") -> int:
    return prog.add_soc(rows, label)


def add_rotated_soc(prog: ConicProgram, rows: Sequence, label: str = "rotated_soc") -> int:
    return prog.add_rotated_soc(rows, label)


def add_exp_epigraph(prog: ConicProgram, arg, epi, label: str = "exp") -> int:
    """Enforce ``exp(arg) <= epi`` with the membership ``(arg, 1, epi)``."""
    a = Affine.var(arg) if isinstance(arg, (int, np.integer)) else _as_affine(arg)
    v = Affine.var(epi) if isinstance(epi, (int, np.integer)) else _as_affine(epi)
    return prog.add_cone("exp", [a, Affine.constant(1.0), v], label)


def rationalize_weights(weights: Iterable[float], max_denominator: int = 64) -> list:
    """Snap positive weights to fractions sharing a denominator <= ``max_denominator``.

    Only the ratios matter for a geometric mean, so weights are scaled by the
    largest one first.
    """
    w = np.asarray(list(weights), dtype=float)
    if w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and positive")
    num = np.maximum(1, np.rint(w / w.max() * max_denominator)).astype(np.int64)
    return [Fraction(int(k), max_denominator) for k in num]


def add_geomean_tower(prog: ConicProgram, leaves: Sequence, weights: Sequence, label: str = "geomean") -> int:
    """Epigraph variable ``g <= prod(leaf_t ** (w_t / sum(w)))`` via rotated cones.

    ``weights`` must be positive rationals (``Fraction`` or integers); floats
    are rejected rather than silently snapped. Leaves may be variable indices
    or :class:`Affine` expressions. The multiplicity-expanded leaf list is
    padded with copies of ``g`` to the next power of two and reduced pairwise
    by constraints ``z^2 <= x y`` written as ``(x/2, y, z)`` rotated cones.
    Returns the index of ``g``.
    """
    if len(leaves) != len(weights) or not leaves:
        raise DimensionError("need one weight per leaf")
    fracs = []
    for w in weights:
        if isinstance(w, (float, np.floating)) and not float(w).is_integer():
            raise ValueError(f"weight {w!r} is not rational; snap it with rationalize_weights")
        f = Fraction(w)
        if f <= 0:
            raise ValueError("weights must be positive")
        fracs.append(f)
    q = math.lcm(*(f.denominator for f in fracs))
    mult = [int(f * q) for f in fracs]
    g_mult = math.gcd(*mult)
    mult = [k // g_mult for k in mult]
    total = sum(mult)
    depth = max(1, math.ceil(math.log2(total))) if total > 1 else 0

    g = prog.add_variable("geomean")
    g_expr = Affine.var(g)
    level = []
    for leaf, k in zip(leaves, mult):
        expr = Affine.var(leaf) if isinstance(leaf, (int, np.integer)) else _as_affine(leaf)
        level.extend([expr] * k)
    levels: list = []
    prog.towers.append((g, [Affine.var(l) if isinstance(l, (int, np.integer)) else _as_affine(l) for l in leaves],
                        mult, levels))
    if depth == 0:
        # single leaf with unit multiplicity: g <= leaf
        prog.add_nonneg(level[0] - g_expr, label)
        return g
    level.extend([g_expr] * (2 ** depth - total))
    while len(level) > 1:
        nxt = []
        levels.append([])
        pairs = len(level) // 2
        if pairs == 1:
            outs = [g_expr]
        else:
            outs = [Affine.var(i) for i in prog.add_variables(pairs, "geomean_node")]
        for p in range(pairs):
            x, y = level[2 * p], level[2 * p + 1]
            prog.add_rotated_soc([x * 0.5, y, outs[p]], label)
            levels[-1].append((x, y, int(outs[p].idx[0])))
            nxt.append(outs[p])
        level = nxt
    return g


def fill_tower_values(prog: ConicProgram, x: np.ndarray) -> np.ndarray:
    """Complete ``x`` with feasible values for every geomean tower.

    The leaves are evaluated at ``x``; ``g`` is set to their exact weighted
    geometric mean and each node to ``sqrt(left * right)``, so every tower
    cone holds (with equality) as long as the leaves are nonnegative.
    """
    x = np.array(x, dtype=float)
    for g, leaves, mult, levels in prog.towers:
        vals = np.array([max(l.value(x), 0.0) for l in leaves])
        k = np.asarray(mult, dtype=float)
        with np.errstate(divide="ignore"):
            x[g] = 0.0 if np.any(vals == 0) else float(np.exp(k @ np.log(vals) / k.sum()))
        for lvl in levels:
            for left, right, out in lvl:
                x[out] = math.sqrt(max(left.value(x), 0.0) * max(right.value(x), 0.0))
    return x

"""Trivialized vector bundles over a chart: sections, vector-valued
differential forms, linear connections, covariant exterior calculus,
curvature, and the graded fiberwise bracket.

Forms store components only on strictly increasing index tuples; all
formulas route through a signed lookup, so antisymmetry is structural.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import (
    Chart,
    Expr,
    ZERO,
    add,
    const,
    differentiate,
    evaluate,
    fold,
    mul,
    neg,
)
from .sampling import SamplePlan

__all__ = [
    "Bundle",
    "Section",
    "CoeffForm",
    "LinearConnection",
    "FiberBracket",
    "covariant_derivative",
    "exterior_covariant_derivative",
    "curvature_tensor",
    "connection_is_flat",
    "fiber_bracket_wedge",
    "sort_with_sign",
    "zero_form",
    "section_form",
    "wedge_scalar_one_form",
]


@dataclass(frozen=True)
class Bundle:
    """Trivialized vector bundle of the given rank over a chart.

    The label is cosmetic: bundles of equal rank over the same chart
    are the same trivialized object and compare equal.
    """

    chart: Chart
    rank: int
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("bundle rank must be >= 1")


class Section:
    """Section of a trivialized bundle: one Expr coefficient per frame
    element e_1..e_r."""

    __slots__ = ("bundle", "components")

    def __init__(self, bundle: Bundle, components: Sequence[Expr]):
        components = tuple(fold(c) for c in components)
        if len(components) != bundle.rank:
            raise ValueError(
                f"section needs {bundle.rank} components, got {len(components)}"
            )
        self.bundle = bundle
        self.components = components

    def value(self, p) -> np.ndarray:
        return np.array([evaluate(c, p) for c in self.components])

    def __add__(self, other: "Section") -> "Section":
        if other.bundle != self.bundle:
            raise ValueError("bundle mismatch")
        return Section(
            self.bundle,
            [a + b for a, b in zip(self.components, other.components)],
        )

    def __sub__(self, other: "Section") -> "Section":
        if other.bundle != self.bundle:
            raise ValueError("bundle mismatch")
        return Section(
            self.bundle,
            [a - b for a, b in zip(self.components, other.components)],
        )

    def scale(self, f: Expr) -> "Section":
        return Section(self.bundle, [fold(mul(f, c)) for c in self.components])

    def __repr__(self):
        return f"Section({[str(c.value) if c.op == 'const' else '...' for c in self.components]})"


def sort_with_sign(idx: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    """Insertion-sort an index tuple; return (sign, sorted tuple).
    Sign 0 on repeated indices."""
    idx = list(idx)
    sign = 1
    for i in range(1, len(idx)):
        j = i
        while j > 0 and idx[j - 1] > idx[j]:
            idx[j - 1], idx[j] = idx[j], idx[j - 1]
            sign = -sign
            j -= 1
    for i in range(1, len(idx)):
        if idx[i - 1] == idx[i]:
            return 0, tuple(idx)
    return sign, tuple(idx)


class CoeffForm:
    """Bundle-valued differential form of degree k.

    Components are stored per strictly increasing index tuple, each a
    tuple of ``rank`` Exprs (the value in the standard frame).  Missing
    tuples are zero.
    """

    __slots__ = ("bundle", "degree", "comps")

    def __init__(
        self,
        bundle: Bundle,
        degree: int,
        comps: Mapping[tuple[int, ...], Sequence[Expr]],
    ):
        if degree < 0 or degree > bundle.chart.dim:
            raise ValueError("form degree out of range for chart")
        clean: dict[tuple[int, ...], tuple[Expr, ...]] = {}
        for idx, vec in comps.items():
            idx = tuple(idx)
            if len(idx) != degree:
                raise ValueError("index tuple length must equal degree")
            if any(i < 0 or i >= bundle.chart.dim for i in idx):
                raise ValueError("index out of chart range")
            if list(idx) != sorted(set(idx)):
                raise ValueError("indices must be strictly increasing")
            vec = tuple(fold(v) for v in vec)
            if len(vec) != bundle.rank:
                raise ValueError("component vector length must equal rank")
            if any(v != ZERO for v in vec):
                clean[idx] = vec
        self.bundle = bundle
        self.degree = degree
        self.comps = clean

    def component(self, idx: Sequence[int]) -> tuple[Expr, ...]:
        """Signed component for an arbitrary index tuple."""
        sign, key = sort_with_sign(idx)
        if sign == 0:
            return (ZERO,) * self.bundle.rank
        vec = self.comps.get(key)
        if vec is None:
            return (ZERO,) * self.bundle.rank
        if sign == 1:
            return vec
        return tuple(fold(neg(v)) for v in vec)

    def value(self, idx: Sequence[int], p) -> np.ndarray:
        return np.array([evaluate(c, p) for c in self.component(idx)])

    def is_structurally_zero(self) -> bool:
        return not self.comps

    def __add__(self, other: "CoeffForm") -> "CoeffForm":
        if other.bundle != self.bundle or other.degree != self.degree:
            raise ValueError("form mismatch")
        keys = set(self.comps) | set(other.comps)
        out = {
            k: [a + b for a, b in zip(self.component(k), other.component(k))]
            for k in keys
        }
        return CoeffForm(self.bundle, self.degree, out)

    def __sub__(self, other: "CoeffForm") -> "CoeffForm":
        return self + other.scale(const(-1))

    def scale(self, f: Expr) -> "CoeffForm":
        return CoeffForm(
            self.bundle,
            self.degree,
            {k: [fold(mul(f, v)) for v in vec] for k, vec in self.comps.items()},
        )

    def contract(self, X: Sequence[Expr]) -> "CoeffForm":
        """Interior product i_X with a vector field (n Exprs): the first
        slot is contracted."""
        if self.degree == 0:
            raise ValueError("cannot contract a 0-form")
        n = self.bundle.chart.dim
        out: dict[tuple[int, ...], list[Expr]] = {}
        for rest in itertools.combinations(range(n), self.degree - 1):
            vec = [ZERO] * self.bundle.rank
            for i in range(n):
                comp = self.component((i,) + rest)
                for c in range(self.bundle.rank):
                    vec[c] = add(vec[c], mul(X[i], comp[c]))
            out[rest] = [fold(v) for v in vec]
        return CoeffForm(self.bundle, self.degree - 1, out)


def zero_form(bundle: Bundle, degree: int) -> CoeffForm:
    return CoeffForm(bundle, degree, {})


def section_form(s: Section) -> CoeffForm:
    """A section viewed as a bundle-valued 0-form."""
    return CoeffForm(s.bundle, 0, {(): s.components})


def wedge_scalar_one_form(omega: Sequence[Expr], form: CoeffForm) -> CoeffForm:
    """Wedge a scalar 1-form (n Exprs) with a bundle-valued k-form."""
    bundle = form.bundle
    n = bundle.chart.dim
    k = form.degree
    out: dict[tuple[int, ...], list[Expr]] = {}
    for idx in itertools.combinations(range(n), k + 1):
        vec = [ZERO] * bundle.rank
        for t in range(k + 1):
            rest = idx[:t] + idx[t + 1 :]
            comp = form.component(rest)
            sgn = const((-1) ** t)
            for c in range(bundle.rank):
                vec[c] = add(vec[c], mul(sgn, omega[idx[t]], comp[c]))
        out[idx] = [fold(v) for v in vec]
    return CoeffForm(bundle, k + 1, out)


class LinearConnection:
    """Linear connection on a trivialized bundle.

    ``christoffel[i]`` is the r x r Expr matrix G_i with
    nabla_{d_i} e_a = sum_b (G_i)[b][a] e_b.
    """

    __slots__ = ("bundle", "christoffel")

    def __init__(self, bundle: Bundle, christoffel: Sequence[Sequence[Sequence[Expr]]]):
        n, r = bundle.chart.dim, bundle.rank
        if len(christoffel) != n:
            raise ValueError("one Christoffel matrix per chart direction required")
        mats = []
        for G in christoffel:
            if len(G) != r or any(len(row) != r for row in G):
                raise ValueError("Christoffel matrix dimensions must match rank")
            mats.append(tuple(tuple(fold(x) for x in row) for row in G))
        self.bundle = bundle
        self.christoffel = tuple(mats)

    @classmethod
    def trivial(cls, bundle: Bundle) -> "LinearConnection":
        n, r = bundle.chart.dim, bundle.rank
        zero = [[ZERO] * r for _ in range(r)]
        return cls(bundle, [zero for _ in range(n)])

    def gamma_value(self, i: int, p) -> np.ndarray:
        G = self.christoffel[i]
        return np.array([[evaluate(x, p) for x in row] for row in G])

    def gamma_dvalue(self, j: int, i: int, p) -> np.ndarray:
        G = self.christoffel[i]
        return np.array(
            [[evaluate(differentiate(x, j), p) for x in row] for row in G]
        )

    def apply_matrix(self, i: int, vec: Sequence[Expr]) -> list[Expr]:
        """Frame action of nabla_{d_i} on a coefficient vector: the
        Gamma_i part only (no derivative)."""
        G = self.christoffel[i]
        r = self.bundle.rank
        return [
            fold(add(*(mul(G[b][a], vec[a]) for a in range(r))))
            for b in range(r)
        ]

    def directional(self, i: int, vec: Sequence[Expr]) -> list[Expr]:
        """Full covariant derivative of a coefficient vector along d_i."""
        gam = self.apply_matrix(i, vec)
        return [fold(add(differentiate(v, i), g)) for v, g in zip(vec, gam)]


def covariant_derivative(
    conn: LinearConnection, X: Sequence[Expr], s: Section
) -> Section:
    """nabla_X s with X a vector field given as n Exprs."""
    if s.bundle != conn.bundle:
        raise ValueError("bundle mismatch between connection and section")
    n = conn.bundle.chart.dim
    r = conn.bundle.rank
    out = [ZERO] * r
    for i in range(n):
        di = conn.directional(i, s.components)
        for b in range(r):
            out[b] = add(out[b], mul(X[i], di[b]))
    return Section(conn.bundle, [fold(v) for v in out])


def exterior_covariant_derivative(
    conn: LinearConnection, omega: CoeffForm
) -> CoeffForm:
    """Covariant exterior derivative for coordinate vector fields.

    On a chart the coordinate fields commute, so the alternating-sum
    formula reduces to signed covariant derivatives of the components.
    For k = 0 this is the covariant differential.
    """
    if omega.bundle != conn.bundle:
        raise ValueError("bundle mismatch between connection and form")
    k = omega.degree
    n = conn.bundle.chart.dim
    if k >= n:
        raise ValueError("degree overflow: form degree must be < chart dimension")
    r = conn.bundle.rank
    out: dict[tuple[int, ...], list[Expr]] = {}
    for idx in itertools.combinations(range(n), k + 1):
        vec = [ZERO] * r
        for t in range(k + 1):
            rest = idx[:t] + idx[t + 1 :]
            di = conn.directional(idx[t], omega.component(rest))
            sgn = (-1) ** t
            for c in range(r):
                term = di[c] if sgn == 1 else neg(di[c])
                vec[c] = add(vec[c], term)
        out[idx] = [fold(v) for v in vec]
    return CoeffForm(conn.bundle, k + 1, out)


def curvature_tensor(
    conn: LinearConnection,
) -> dict[tuple[int, int], list[list[Expr]]]:
    """Curvature R(d_i, d_j) = d_i G_j - d_j G_i + [G_i, G_j], returned
    as matrices on increasing pairs (i, j)."""
    n, r = conn.bundle.chart.dim, conn.bundle.rank
    G = conn.christoffel
    out = {}
    for i in range(n):
        for j in range(i + 1, n):
            R = [[ZERO] * r for _ in range(r)]
            for b in range(r):
                for a in range(r):
                    comm = add(
                        *(mul(G[i][b][c], G[j][c][a]) for c in range(r)),
                        *(neg(mul(G[j][b][c], G[i][c][a])) for c in range(r)),
                    )
                    R[b][a] = fold(
                        add(
                            differentiate(G[j][b][a], i),
                            neg(differentiate(G[i][b][a], j)),
                            comm,
                        )
                    )
            out[(i, j)] = R
    return out


def connection_is_flat(
    conn: LinearConnection, plan: SamplePlan | None = None, tol: float = 1e-10
) -> tuple[bool, float]:
    """Sampled flatness predicate: curvature entries vanish on 64 chart
    points within ``tol``.  Returns (flat, max residual)."""
    plan = plan or SamplePlan(seed=42, samples=64)
    R = curvature_tensor(conn)
    worst = 0.0
    for p in plan.points(conn.bundle.chart, 64):
        for mat in R.values():
            for row in mat:
                for x in row:
                    worst = max(worst, abs(evaluate(x, p)))
    return worst < tol, worst


class FiberBracket:
    """Fiberwise Lie bracket on a trivialized bundle, given by structure
    functions c[a][b] -> coefficient vector of [e_a, e_b].

    Storage is canonically antisymmetric: the strict lower triangle is
    the structural negation of the upper one and the diagonal is zero.
    Supplied entries that disagree structurally are validated by
    sampled evaluation before being replaced by the canonical form.
    """

    __slots__ = ("bundle", "c")

    def __init__(self, bundle: Bundle, structure: Sequence[Sequence[Sequence[Expr]]]):
        from .expr import expr_equal, neg as _neg

        r = bundle.rank
        if len(structure) != r or any(len(row) != r for row in structure):
            raise ValueError("structure tensor must be rank x rank")
        raw = [[None] * r for _ in range(r)]
        for a in range(r):
            for b in range(r):
                vec = tuple(fold(x) for x in structure[a][b])
                if len(vec) != r:
                    raise ValueError("structure vectors must have length rank")
                raw[a][b] = vec
        c = [[None] * r for _ in range(r)]
        for a in range(r):
            c[a][a] = (ZERO,) * r
            for k in range(r):
                if raw[a][a][k] != ZERO and not expr_equal(
                    raw[a][a][k], ZERO, bundle.chart
                ):
                    raise ValueError(
                        f"diagonal structure entry [{a}][{a}][{k}] must vanish"
                    )
        for a in range(r):
            for b in range(a + 1, r):
                c[a][b] = raw[a][b]
                derived = tuple(fold(_neg(x)) for x in raw[a][b])
                for k in range(r):
                    if raw[b][a][k] != derived[k] and not expr_equal(
                        raw[b][a][k], derived[k], bundle.chart
                    ):
                        raise ValueError(
                            "structure functions must be antisymmetric in the "
                            f"first two slots (violated at a={a}, b={b}, c={k})"
                        )
                c[b][a] = derived
        self.bundle = bundle
        self.c = tuple(tuple(row) for row in c)

    @classmethod
    def abelian(cls, bundle: Bundle) -> "FiberBracket":
        r = bundle.rank
        zero = [ZERO] * r
        return cls(bundle, [[list(zero) for _ in range(r)] for _ in range(r)])

    @classmethod
    def from_constants(cls, bundle: Bundle, c: np.ndarray) -> "FiberBracket":
        """Structure constants c[a, b, k] as a numeric array."""
        r = bundle.rank
        struct = [
            [[const(float(c[a, b, k])) for k in range(r)] for b in range(r)]
            for a in range(r)
        ]
        return cls(bundle, struct)

    def pair_sections(self, u: Sequence[Expr], v: Sequence[Expr]) -> list[Expr]:
        """Pointwise bracket of two coefficient vectors."""
        r = self.bundle.rank
        out = [ZERO] * r
        for a in range(r):
            if u[a] == ZERO:
                continue
            for b in range(r):
                if v[b] == ZERO:
                    continue
                for k in range(r):
                    out[k] = add(out[k], mul(u[a], v[b], self.c[a][b][k]))
        return [fold(x) for x in out]

    def ad_value(self, p) -> np.ndarray:
        """Stacked adjoint matrices at a point: ad[a][k][b] = c_{ab}^k."""
        r = self.bundle.rank
        out = np.zeros((r, r, r))
        for a in range(r):
            for b in range(r):
                for k in range(r):
                    out[a, k, b] = evaluate(self.c[a][b][k], p)
        return out

    def jacobi_residual(self, plan: SamplePlan, n_points: int = 64) -> float:
        """Max Jacobi identity residual of the fiberwise bracket at
        sampled points; the bracket is fiberwise, so no derivatives of
        the structure functions enter."""
        r = self.bundle.rank
        worst = 0.0
        for p in plan.points(self.bundle.chart, n_points):
            c = np.array(
                [
                    [[evaluate(self.c[a][b][k], p) for k in range(r)] for b in range(r)]
                    for a in range(r)
                ]
            )
            # Jacobi: [[ea,eb],ed] + [[eb,ed],ea] + [[ed,ea],eb] = 0
            for a in range(r):
                for b in range(r):
                    for d in range(r):
                        total = np.zeros(r)
                        for k in range(r):
                            total += (
                                c[a, b, k] * c[k, d]
                                + c[b, d, k] * c[k, a]
                                + c[d, a, k] * c[k, b]
                            )
                        worst = max(worst, float(np.max(np.abs(total))))
        return worst


def fiber_bracket_wedge(
    br: FiberBracket, beta: CoeffForm, gamma: CoeffForm
) -> CoeffForm:
    """Graded fiberwise bracket [beta, gamma] of bundle-valued forms.

    Implements the signed sum over all permutations of the k+l
    arguments; for k = l = 1 this gives
    [beta,gamma](X,Y) = [beta(X),gamma(Y)] - [beta(Y),gamma(X)].
    """
    if beta.bundle != br.bundle or gamma.bundle != br.bundle:
        raise ValueError("forms must be valued in the bracket's bundle")
    k, l = beta.degree, gamma.degree
    n = br.bundle.chart.dim
    r = br.bundle.rank
    if k + l > n:
        raise ValueError(
            f"bracket of forms would have degree {k + l} > chart dimension {n}"
        )
    out: dict[tuple[int, ...], list[Expr]] = {}
    for idx in itertools.combinations(range(n), k + l):
        vec = [ZERO] * r
        for perm in itertools.permutations(range(k + l)):
            sign, _ = sort_with_sign(perm)
            bcomp = beta.component(tuple(idx[perm[t]] for t in range(k)))
            gcomp = gamma.component(tuple(idx[perm[k + t]] for t in range(l)))
            term = br.pair_sections(bcomp, gcomp)
            for c in range(r):
                vec[c] = add(vec[c], term[c] if sign == 1 else neg(term[c]))
        out[idx] = [fold(v) for v in vec]
    return CoeffForm(br.bundle, k + l, out)

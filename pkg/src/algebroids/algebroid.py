"""Lie algebroids over a chart: anchor + structure functions, the
Leibniz-expanded bracket, axiom checkers, bundles of ideals, canonical
representations, invariant connections, Lie derivatives of coefficient
forms, basic curvature, and the connection-based construction of
ideal-valued connection forms.

Frame convention: a bundle of ideals is always the span of the first k
frame elements (an adapted frame); users change frames with
``change_frame`` before constructing an IdealBundle.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .bundles import (
    Bundle,
    CoeffForm,
    FiberBracket,
    LinearConnection,
    Section,
    covariant_derivative,
    curvature_tensor,
)
from .expr import (
    Expr,
    ZERO,
    ONE,
    add,
    differentiate,
    div,
    evaluate,
    fold,
    mul,
    neg,
)
from .sampling import Report, SamplePlan, random_polynomial

__all__ = [
    "LieAlgebroid",
    "IdealBundle",
    "ARepresentation",
    "bracket",
    "vf_bracket",
    "check_axioms",
    "canonical_representation",
    "lie_derivative_form",
    "check_A_invariant",
    "basic_curvature",
    "cartan_build_connection",
    "ConstructionRefused",
    "change_frame",
    "symbolic_inverse",
    "tangent_algebroid",
]


class ConstructionRefused(Exception):
    """A constructor's residual precondition failed; carries the report."""

    def __init__(self, message: str, report: Report):
        super().__init__(message)
        self.report = report


class LieAlgebroid:
    """Lie algebroid on a trivialized bundle: anchor matrix rho[i][a]
    (n x r Exprs) and structure functions c[a][b] -> r-vector with
    [e_a, e_b] = sum_c c[a][b][c] e_c.

    Antisymmetry of the structure functions is enforced structurally;
    Jacobi and the anchor-morphism property are checkable, not assumed.
    """

    __slots__ = ("bundle", "anchor", "structure")

    def __init__(
        self,
        bundle: Bundle,
        anchor: Sequence[Sequence[Expr]],
        structure: Sequence[Sequence[Sequence[Expr]]],
    ):
        n, r = bundle.chart.dim, bundle.rank
        if len(anchor) != n or any(len(row) != r for row in anchor):
            raise ValueError("anchor must be an n x r matrix of Exprs")
        self.bundle = bundle
        self.anchor = tuple(tuple(fold(x) for x in row) for row in anchor)
        # Reuse the fiberwise container for storage + antisymmetry check.
        self.structure = FiberBracket(bundle, structure).c

    @property
    def chart(self):
        return self.bundle.chart

    @property
    def rank(self):
        return self.bundle.rank

    def frame_section(self, a: int) -> Section:
        comps = [ZERO] * self.rank
        comps[a] = ONE
        return Section(self.bundle, comps)

    def section(self, components: Sequence[Expr]) -> Section:
        return Section(self.bundle, components)

    def random_section(self, rng: np.random.Generator) -> Section:
        return Section(
            self.bundle,
            [random_polynomial(self.chart, rng) for _ in range(self.rank)],
        )

    def rho_of(self, alpha: Section) -> list[Expr]:
        """Anchor image of a section, as a vector field (n Exprs)."""
        n, r = self.chart.dim, self.rank
        return [
            fold(add(*(mul(self.anchor[i][a], alpha.components[a]) for a in range(r))))
            for i in range(n)
        ]

    def anchor_value(self, p) -> np.ndarray:
        return np.array(
            [[evaluate(x, p) for x in row] for row in self.anchor]
        )

    def fiber_bracket(self, k: int | None = None) -> FiberBracket:
        """Fiberwise bracket restricted to the first k frame elements
        (defaults to the full rank).  Only meaningful where the anchor
        vanishes on that span."""
        k = self.rank if k is None else k
        sub = Bundle(self.chart, k, label=self.bundle.label + "|fiber")
        struct = [
            [[self.structure[a][b][c] for c in range(k)] for b in range(k)]
            for a in range(k)
        ]
        return FiberBracket(sub, struct)


def vf_bracket(V: Sequence[Expr], W: Sequence[Expr], dim: int) -> list[Expr]:
    """Commutator of vector fields given as Expr tuples."""
    out = []
    for i in range(dim):
        terms = []
        for j in range(dim):
            terms.append(mul(V[j], differentiate(W[i], j)))
            terms.append(neg(mul(W[j], differentiate(V[i], j))))
        out.append(fold(add(*terms)))
    return out


def directional(X: Sequence[Expr], f: Expr) -> Expr:
    """Derivative of a scalar along a vector field."""
    return fold(add(*(mul(X[j], differentiate(f, j)) for j in range(len(X)))))


def bracket(A: LieAlgebroid, alpha: Section, beta: Section) -> Section:
    """Leibniz-expanded bracket:
    [alpha, beta]^c = sum alpha^a beta^b c_ab^c
                      + rho(alpha)(beta^c) - rho(beta)(alpha^c)."""
    if alpha.bundle != A.bundle or beta.bundle != A.bundle:
        raise ValueError("sections do not live on this algebroid")
    r = A.rank
    ra = A.rho_of(alpha)
    rb = A.rho_of(beta)
    out = []
    for c in range(r):
        terms = []
        for a in range(r):
            if alpha.components[a] == ZERO:
                continue
            for b in range(r):
                if beta.components[b] == ZERO or A.structure[a][b][c] == ZERO:
                    continue
                terms.append(
                    mul(alpha.components[a], beta.components[b], A.structure[a][b][c])
                )
        terms.append(directional(ra, beta.components[c]))
        terms.append(neg(directional(rb, alpha.components[c])))
        out.append(fold(add(*terms)))
    return Section(A.bundle, out)


class IdealBundle:
    """Bundle of ideals: the span of the first k frame elements of an
    adapted frame.  The defining clauses (anchor vanishes on the span,
    the span is bracket-invariant) are verified on construction at
    sampled points."""

    __slots__ = ("parent", "k", "fiber")

    def __init__(
        self,
        parent: LieAlgebroid,
        k: int,
        plan: SamplePlan | None = None,
        tol: float = 1e-8,
        verify: bool = True,
    ):
        if not 1 <= k <= parent.rank:
            raise ValueError("ideal rank out of range")
        self.parent = parent
        self.k = k
        self.fiber = parent.fiber_bracket(k)
        if verify:
            rep = check_axioms(parent, self, plan or SamplePlan(seed=42, samples=60))
            bad = [
                c
                for c in rep.checks
                if c.name.startswith("ideal_") and not c.passed
            ]
            if bad:
                raise ValueError(
                    "not a bundle of ideals: "
                    + ", ".join(f"{c.name} residual {c.max_residual:.2e}" for c in bad)
                )

    @property
    def bundle(self) -> Bundle:
        return self.fiber.bundle


class ARepresentation:
    """Algebroid representation on a trivialized bundle V.

    ``coeffs[b]`` is the r_V x r_V Expr matrix of nabla_{e_b} acting on
    the frame of V; the full derivative part along the anchor is added
    when applying to sections.  Flatness is a sampled check.
    """

    __slots__ = ("algebroid", "bundle", "coeffs")

    def __init__(
        self,
        algebroid: LieAlgebroid,
        bundle: Bundle,
        coeffs: Sequence[Sequence[Sequence[Expr]]],
    ):
        rV = bundle.rank
        if len(coeffs) != algebroid.rank:
            raise ValueError("one coefficient matrix per algebroid frame element")
        mats = []
        for M in coeffs:
            if len(M) != rV or any(len(row) != rV for row in M):
                raise ValueError("coefficient matrices must be r_V x r_V")
            mats.append(tuple(tuple(fold(x) for x in row) for row in M))
        self.algebroid = algebroid
        self.bundle = bundle
        self.coeffs = tuple(mats)

    @classmethod
    def zero(cls, algebroid: LieAlgebroid, bundle: Bundle) -> "ARepresentation":
        rV = bundle.rank
        z = [[ZERO] * rV for _ in range(rV)]
        return cls(algebroid, bundle, [z for _ in range(algebroid.rank)])

    def apply(self, alpha: Section, comps: Sequence[Expr]) -> list[Expr]:
        """nabla_alpha of a V-coefficient vector."""
        ra = self.algebroid.rho_of(alpha)
        rV = self.bundle.rank
        out = []
        for d in range(rV):
            terms = [directional(ra, comps[d])]
            for b in range(self.algebroid.rank):
                if alpha.components[b] == ZERO:
                    continue
                for c in range(rV):
                    if comps[c] == ZERO or self.coeffs[b][d][c] == ZERO:
                        continue
                    terms.append(
                        mul(alpha.components[b], self.coeffs[b][d][c], comps[c])
                    )
            out.append(fold(add(*terms)))
        return out

    def apply_section(self, alpha: Section, s: Section) -> Section:
        if s.bundle != self.bundle:
            raise ValueError("section not valued in the representation bundle")
        return Section(self.bundle, self.apply(alpha, s.components))

    def flatness_residual(self, plan: SamplePlan, n_pairs: int = 6) -> float:
        """Max residual of nabla_[a,b] = [nabla_a, nabla_b] on random
        polynomial sections."""
        A = self.algebroid
        worst = 0.0
        for _ in range(n_pairs):
            al = A.random_section(plan.rng)
            be = A.random_section(plan.rng)
            s = Section(
                self.bundle,
                [random_polynomial(A.chart, plan.rng) for _ in range(self.bundle.rank)],
            )
            lhs = self.apply(bracket(A, al, be), s.components)
            rhs1 = self.apply(al, self.apply(be, s.components))
            rhs2 = self.apply(be, self.apply(al, s.components))
            for p in plan.points(A.chart, 8):
                for d in range(self.bundle.rank):
                    res = abs(
                        evaluate(lhs[d], p)
                        - evaluate(rhs1[d], p)
                        + evaluate(rhs2[d], p)
                    )
                    worst = max(worst, res)
        return worst


def check_axioms(
    A: LieAlgebroid,
    ideal: IdealBundle | None = None,
    plan: SamplePlan | None = None,
    tol: float = 1e-8,
) -> Report:
    """Sampled verification of the algebroid axioms.

    Checks (a) the Jacobi identity on random polynomial section triples,
    (b) the anchor-morphism property, and, when an ideal is supplied,
    (c) anchor vanishing on the ideal span and bracket-invariance of
    the span.  Pass iff all residuals < tol.
    """
    plan = plan or SamplePlan()
    rep = Report(command="check-axioms", seed=plan.seed, samples=plan.samples)
    draws, pts = plan.split_budget(per_draw=25)
    draws = max(2, min(draws, 10))

    jac_worst = 0.0
    anch_worst = 0.0
    for _ in range(draws):
        al = A.random_section(plan.rng)
        be = A.random_section(plan.rng)
        ga = A.random_section(plan.rng)
        jacobiator = (
            bracket(A, bracket(A, al, be), ga)
            + bracket(A, bracket(A, be, ga), al)
            + bracket(A, bracket(A, ga, al), be)
        )
        anchor_defect = [
            fold(add(x, neg(y)))
            for x, y in zip(
                A.rho_of(bracket(A, al, be)),
                vf_bracket(A.rho_of(al), A.rho_of(be), A.chart.dim),
            )
        ]
        for p in plan.points(A.chart, pts):
            jac_worst = max(jac_worst, float(np.max(np.abs(jacobiator.value(p)))))
            for x in anchor_defect:
                anch_worst = max(anch_worst, abs(evaluate(x, p)))
    rep.add("jacobi", jac_worst, tol)
    rep.add("anchor_morphism", anch_worst, tol)

    if ideal is not None:
        k = ideal.k
        pts_list = plan.points(A.chart, max(20, pts))
        rho_worst = 0.0
        inv_worst = 0.0
        for p in pts_list:
            for a in range(k):
                for i in range(A.chart.dim):
                    rho_worst = max(rho_worst, abs(evaluate(A.anchor[i][a], p)))
            for b in range(A.rank):
                for a in range(k):
                    for c in range(k, A.rank):
                        inv_worst = max(
                            inv_worst, abs(evaluate(A.structure[b][a][c], p))
                        )
        rep.add("ideal_anchor", rho_worst, 1e-10 if tol > 1e-10 else tol)
        rep.add("ideal_bracket", inv_worst, tol)
    return rep


def canonical_representation(A: LieAlgebroid, ideal: IdealBundle) -> ARepresentation:
    """The representation of the algebroid on a bundle of ideals given
    by bracketing: coefficients are the structure functions with one
    slot in the ideal range, truncated to the ideal components."""
    if ideal.parent is not A:
        raise ValueError("ideal does not belong to this algebroid")
    k = ideal.k
    coeffs = [
        [[A.structure[b][a][c] for a in range(k)] for c in range(k)]
        for b in range(A.rank)
    ]
    # coeffs[b][c][a] = component c of [e_b, e_a] for a, c in the ideal.
    return ARepresentation(A, ideal.bundle, coeffs)


def lie_derivative_form(
    alpha: Section, rep: ARepresentation, gamma: CoeffForm
) -> CoeffForm:
    """Lie derivative of a V-valued form along a section, using the
    representation for the coefficient part and the commutator with
    coordinate fields for the argument part."""
    if gamma.bundle != rep.bundle:
        raise ValueError("form not valued in the representation bundle")
    A = rep.algebroid
    n = A.chart.dim
    ra = A.rho_of(alpha)
    rV = rep.bundle.rank
    out: dict[tuple[int, ...], list[Expr]] = {}
    import itertools

    for J in itertools.combinations(range(n), gamma.degree):
        vec = list(rep.apply(alpha, gamma.component(J)))
        for t in range(len(J)):
            for m in range(n):
                dcoef = differentiate(ra[m], J[t])
                if dcoef == ZERO:
                    continue
                swapped = gamma.component(J[:t] + (m,) + J[t + 1 :])
                for d in range(rV):
                    vec[d] = add(vec[d], mul(dcoef, swapped[d]))
        out[J] = [fold(v) for v in vec]
    return CoeffForm(rep.bundle, gamma.degree, out)


def check_A_invariant(
    conn: LinearConnection,
    rep: ARepresentation,
    plan: SamplePlan | None = None,
    tol: float = 1e-9,
) -> Report:
    """Invariance of a linear connection under an algebroid
    representation: the representation agrees with the connection along
    the anchor, and the curvature is killed by anchored directions."""
    if conn.bundle != rep.bundle:
        raise ValueError("connection and representation bundles differ")
    plan = plan or SamplePlan()
    A = rep.algebroid
    n, rV = A.chart.dim, rep.bundle.rank
    report = Report(command="check-A-invariant", seed=plan.seed, samples=plan.samples)

    # Condition 1: coefficient matrices match sum_i rho^i_b Gamma_i.
    worst1 = 0.0
    diffs = []
    for b in range(A.rank):
        D = [[ZERO] * rV for _ in range(rV)]
        for d in range(rV):
            for c in range(rV):
                terms = [rep.coeffs[b][d][c]]
                for i in range(n):
                    terms.append(neg(mul(A.anchor[i][b], conn.christoffel[i][d][c])))
                D[d][c] = fold(add(*terms))
        diffs.append(D)
    # Condition 2: curvature contracted with the anchor vanishes.
    R = curvature_tensor(conn)
    worst2 = 0.0
    pts = plan.points(A.chart, min(plan.samples, 60))
    for p in pts:
        for b in range(A.rank):
            for D in (diffs[b],):
                for row in D:
                    for x in row:
                        worst1 = max(worst1, abs(evaluate(x, p)))
        rho_p = A.anchor_value(p)
        Rp = {ij: np.array([[evaluate(x, p) for x in row] for row in mat]) for ij, mat in R.items()}
        for b in range(A.rank):
            for j in range(n):
                M = np.zeros((rV, rV))
                for i in range(n):
                    if i < j:
                        M += rho_p[i, b] * Rp[(i, j)]
                    elif i > j:
                        M -= rho_p[i, b] * Rp[(j, i)]
                worst2 = max(worst2, float(np.max(np.abs(M))) if M.size else 0.0)
    report.add("invariance_anchor_compatibility", worst1, tol)
    report.add("invariance_curvature_contraction", worst2, tol)
    return report


class BasicCurvature:
    """The five-term tensor measuring the failure of a linear connection
    on an algebroid to have multiplicative-type horizontal behavior.

    Callable as (alpha, beta, X, point) -> fiber vector.
    """

    def __init__(self, A: LieAlgebroid, conn: LinearConnection):
        if conn.bundle != A.bundle:
            raise ValueError("connection must live on the algebroid bundle")
        self.A = A
        self.conn = conn

    def bar_nabla_vf(self, alpha: Section, X: Sequence[Expr]) -> list[Expr]:
        """Induced derivative on vector fields:
        rho(nabla_X alpha) + [rho(alpha), X]."""
        A = self.A
        na = covariant_derivative(self.conn, X, alpha)
        first = A.rho_of(na)
        second = vf_bracket(A.rho_of(alpha), X, A.chart.dim)
        return [fold(add(x, y)) for x, y in zip(first, second)]

    def section_expr(
        self, alpha: Section, beta: Section, X: Sequence[Expr]
    ) -> Section:
        A, conn = self.A, self.conn
        t1 = covariant_derivative(conn, X, bracket(A, alpha, beta))
        t2 = bracket(A, covariant_derivative(conn, X, alpha), beta)
        t3 = bracket(A, alpha, covariant_derivative(conn, X, beta))
        t4 = covariant_derivative(conn, self.bar_nabla_vf(beta, X), alpha)
        t5 = covariant_derivative(conn, self.bar_nabla_vf(alpha, X), beta)
        comps = [
            fold(add(a, neg(b), neg(c), neg(d), e))
            for a, b, c, d, e in zip(
                t1.components, t2.components, t3.components, t4.components, t5.components
            )
        ]
        return Section(A.bundle, comps)

    def __call__(self, alpha: Section, beta: Section, X: Sequence[Expr], p) -> np.ndarray:
        return self.section_expr(alpha, beta, X).value(p)

    def cartan_residual(self, plan: SamplePlan, n_points: int = 24) -> float:
        """Max residual over frame pairs and coordinate directions (the
        tensor property makes frame evaluation sufficient)."""
        A = self.A
        n = A.chart.dim
        worst = 0.0
        pts = plan.points(A.chart, n_points)
        for a in range(A.rank):
            for b in range(a + 1, A.rank):
                for i in range(n):
                    X = [ZERO] * n
                    X[i] = ONE
                    s = self.section_expr(A.frame_section(a), A.frame_section(b), X)
                    for p in pts:
                        worst = max(worst, float(np.max(np.abs(s.value(p)))))
        return worst


def basic_curvature(A: LieAlgebroid, conn: LinearConnection) -> BasicCurvature:
    return BasicCurvature(A, conn)


def cartan_build_connection(
    A: LieAlgebroid,
    ideal: IdealBundle,
    l: Sequence[Sequence[Expr]],
    conn: LinearConnection,
    plan: SamplePlan | None = None,
    tol: float = 1e-8,
):
    """Build an ideal-valued connection form from a splitting l and a
    linear connection on A, via i_X L(alpha) = l(nabla_X alpha).

    Preconditions (refused with a residual report when violated):
    l restricted to the ideal columns is the identity; l is parallel for
    the induced derivative; l kills the basic curvature of the
    connection.
    """
    from .imforms import IMOneForm  # deferred: imforms imports this module

    plan = plan or SamplePlan()
    k, r, n = ideal.k, A.rank, A.chart.dim
    if len(l) != k or any(len(row) != r for row in l):
        raise ValueError("splitting must be a k x r Expr matrix")
    l = [[fold(x) for x in row] for row in l]
    for c in range(k):
        for a in range(k):
            want = ONE if c == a else ZERO
            if l[c][a] != want:
                raise ValueError(
                    "splitting must restrict to the identity on the ideal columns"
                )

    report = Report(command="cartan-build", seed=plan.seed, samples=plan.samples)

    def embed(vec_k: Sequence[Expr]) -> Section:
        return Section(A.bundle, list(vec_k) + [ZERO] * (r - k))

    def apply_l(sec: Section) -> list[Expr]:
        return [
            fold(add(*(mul(l[c][a], sec.components[a]) for a in range(r))))
            for c in range(k)
        ]

    # Parallelism of l: [e_a, l(e_b)] - l(nabla_{rho(e_b)} e_a + [e_a, e_b]).
    worst_par = 0.0
    pts = plan.points(A.chart, 20)
    for a in range(r):
        ea = A.frame_section(a)
        for b in range(r):
            eb = A.frame_section(b)
            lhs = bracket(A, ea, embed(apply_l(eb)))
            inner = covariant_derivative(conn, A.rho_of(eb), ea) + bracket(A, ea, eb)
            rhs = embed(apply_l(inner))
            defect = lhs - rhs
            for p in pts:
                worst_par = max(worst_par, float(np.max(np.abs(defect.value(p)))))
    report.add("parallel_splitting", worst_par, tol)

    # l kills the basic curvature.
    bc = basic_curvature(A, conn)
    worst_bc = 0.0
    for a in range(r):
        for b in range(a + 1, r):
            for i in range(n):
                X = [ZERO] * n
                X[i] = ONE
                s = bc.section_expr(A.frame_section(a), A.frame_section(b), X)
                ls = apply_l(s)
                for p in pts:
                    for x in ls:
                        worst_bc = max(worst_bc, abs(evaluate(x, p)))
    report.add("splitting_kills_basic_curvature", worst_bc, tol)

    if not report.passed:
        raise ConstructionRefused(
            "connection construction refused: residuals "
            + ", ".join(f"{c.name}={c.max_residual:.2e}" for c in report.checks),
            report,
        )

    # Frame values: L(e_a)_i = l(nabla_{d_i} e_a).
    frame_values = []
    for a in range(r):
        comps = {}
        for i in range(n):
            col = [conn.christoffel[i][b][a] for b in range(r)]
            comps[(i,)] = [
                fold(add(*(mul(l[c][b], col[b]) for b in range(r))))
                for c in range(k)
            ]
        frame_values.append(CoeffForm(ideal.bundle, 1, comps))
    return IMOneForm(A, ideal, l, frame_values)


def symbolic_inverse(P: Sequence[Sequence[Expr]]) -> list[list[Expr]]:
    """Exact inverse of a small Expr matrix by cofactor expansion.
    Intended for frame changes of rank <= 4."""
    r = len(P)
    if r > 4:
        raise ValueError("symbolic inversion supported only for rank <= 4")
    det = _det(P)
    out = [[ZERO] * r for _ in range(r)]
    for i in range(r):
        for j in range(r):
            minor = [
                [P[a][b] for b in range(r) if b != i]
                for a in range(r)
                if a != j
            ]
            cof = _det(minor)
            if (i + j) % 2 == 1:
                cof = neg(cof)
            out[i][j] = fold(div(cof, det))
    return out


def _det(M) -> Expr:
    r = len(M)
    if r == 1:
        return M[0][0]
    terms = []
    for j in range(r):
        minor = [row[:j] + row[j + 1 :] for row in [list(m) for m in M[1:]]]
        t = mul(M[0][j], _det(minor))
        terms.append(t if j % 2 == 0 else neg(t))
    return fold(add(*terms))


def change_frame(
    A: LieAlgebroid,
    P: Sequence[Sequence[Expr]],
    P_inv: Sequence[Sequence[Expr]] | None = None,
    label: str = "",
) -> LieAlgebroid:
    """Rewrite the algebroid in the frame e'_a = sum_b P[b][a] e_b.

    P must be invertible on the chart; P_inv may be supplied to avoid
    symbolic inversion.
    """
    r, n = A.rank, A.chart.dim
    P = [[fold(x) for x in row] for row in P]
    if P_inv is None:
        P_inv = symbolic_inverse(P)
    anchor = [
        [
            fold(add(*(mul(A.anchor[i][b], P[b][a]) for b in range(r))))
            for a in range(r)
        ]
        for i in range(n)
    ]
    cols = [Section(A.bundle, [P[b][a] for b in range(r)]) for a in range(r)]
    structure = [[None] * r for _ in range(r)]
    for a in range(r):
        for b in range(r):
            if b < a:
                structure[a][b] = [fold(neg(x)) for x in structure[b][a]]
                continue
            if a == b:
                structure[a][b] = [ZERO] * r
                continue
            w = bracket(A, cols[a], cols[b])
            structure[a][b] = [
                fold(add(*(mul(P_inv[c][d], w.components[d]) for d in range(r))))
                for c in range(r)
            ]
    bundle = Bundle(A.chart, r, label=label or (A.bundle.label + "'"))
    return LieAlgebroid(bundle, anchor, structure)


def connection_change_frame(
    conn: LinearConnection,
    P: Sequence[Sequence[Expr]],
    P_inv: Sequence[Sequence[Expr]] | None = None,
) -> LinearConnection:
    """Christoffel matrices of the same connection in the frame
    e'_a = sum_b P[b][a] e_b:  G'_i = P^{-1} (d_i P + G_i P)."""
    r = conn.bundle.rank
    n = conn.bundle.chart.dim
    P = [[fold(x) for x in row] for row in P]
    if P_inv is None:
        P_inv = symbolic_inverse(P)
    mats = []
    for i in range(n):
        inner = [
            [
                fold(
                    add(
                        differentiate(P[b][a], i),
                        *(mul(conn.christoffel[i][b][c], P[c][a]) for c in range(r)),
                    )
                )
                for a in range(r)
            ]
            for b in range(r)
        ]
        Gp = [
            [
                fold(add(*(mul(P_inv[c][b], inner[b][a]) for b in range(r))))
                for a in range(r)
            ]
            for c in range(r)
        ]
        mats.append(Gp)
    return LinearConnection(conn.bundle, mats)


def tangent_algebroid(chart) -> LieAlgebroid:
    """The tangent algebroid: identity anchor, vanishing structure."""
    n = chart.dim
    bundle = Bundle(chart, n, label="TM")
    anchor = [[ONE if i == a else ZERO for a in range(n)] for i in range(n)]
    zero = [[([ZERO] * n) for _ in range(n)] for _ in range(n)]
    return LieAlgebroid(bundle, anchor, zero)

"""Ideal-valued connection 1-forms on Lie algebroids, their coupling
data, structure equations, semidirect rebuilds, curvature 2-forms,
flatness classes, the covariant differential on such forms, and the
map to algebroid cochains.

A degree-k form is stored by its frame values plus the extension rule
    L(f e_a) = f L(e_a) + df ^ sym(e_a),
which makes the symbol equation hold by construction; the checkers
therefore only test the three compatibility identities.

Checkers access forms and couplings through small value/derivative
accessors, so numerically-backed twins (from the groupoid side) run
through the same code paths as exact symbolic objects.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .algebroid import (
    ARepresentation,
    ConstructionRefused,
    IdealBundle,
    LieAlgebroid,
    bracket,
    canonical_representation,
)
from .bundles import (
    Bundle,
    CoeffForm,
    FiberBracket,
    LinearConnection,
    Section,
    exterior_covariant_derivative,
    sort_with_sign,
    wedge_scalar_one_form,
    zero_form,
)
from .expr import (
    Expr,
    ONE,
    ZERO,
    add,
    const,
    differentiate,
    evaluate,
    fold,
    mul,
    neg,
)
from .sampling import Report, SamplePlan

__all__ = [
    "IMOneForm",
    "IMTwoForm",
    "NumericIMOneForm",
    "CouplingData",
    "NumericCouplingData",
    "check_im_form",
    "extract_coupling",
    "coupling_to_im",
    "check_structure_equations",
    "build_semidirect",
    "curvature_im",
    "classify_flatness",
    "d_im",
    "chain_map",
    "CochainEvaluator",
    "center_basis",
    "CenterDegeneracyError",
    "FLATNESS_ORDER",
]

FLATNESS_ORDER = ("totally", "leafwise", "kernel")


class CenterDegeneracyError(Exception):
    """The fiberwise center does not have constant rank over the sample."""


def _value_bundle(value) -> Bundle:
    return value.bundle if isinstance(value, IdealBundle) else value


class _IMFormBase:
    """Shared storage and accessors for degree-1 and degree-2 forms."""

    degree: int

    def __init__(
        self,
        algebroid: LieAlgebroid,
        value,
        symbols: Sequence[CoeffForm],
        frame_values: Sequence[CoeffForm],
    ):
        vb = _value_bundle(value)
        if len(symbols) != algebroid.rank or len(frame_values) != algebroid.rank:
            raise ValueError("one symbol and one frame value per frame element")
        for s in symbols:
            if s.bundle != vb or s.degree != self.degree - 1:
                raise ValueError("symbol degree/bundle mismatch")
        for f in frame_values:
            if f.bundle != vb or f.degree != self.degree:
                raise ValueError("frame value degree/bundle mismatch")
        self.algebroid = algebroid
        self.ideal = value if isinstance(value, IdealBundle) else None
        self.value_bundle = vb
        self.symbols = tuple(symbols)
        self.frame_values = tuple(frame_values)

    @property
    def value_rank(self) -> int:
        return self.value_bundle.rank

    # Value/derivative accessors used by the generic checkers.
    def sym_value(self, a: int, idx: tuple, p) -> np.ndarray:
        return self.symbols[a].value(idx, p)

    def sym_dvalue(self, j: int, a: int, idx: tuple, p) -> np.ndarray:
        comp = self.symbols[a].component(idx)
        return np.array([evaluate(differentiate(x, j), p) for x in comp])

    def op_value(self, a: int, idx: tuple, p) -> np.ndarray:
        return self.frame_values[a].value(idx, p)

    def op_dvalue(self, j: int, a: int, idx: tuple, p) -> np.ndarray:
        comp = self.frame_values[a].component(idx)
        return np.array([evaluate(differentiate(x, j), p) for x in comp])

    # Symbolic evaluation on sections.
    def sym_of(self, alpha: Section) -> CoeffForm:
        """The symbol applied to a section (tensorial)."""
        out = zero_form(self.value_bundle, self.degree - 1)
        for a in range(self.algebroid.rank):
            ca = alpha.components[a]
            if ca == ZERO:
                continue
            out = out + self.symbols[a].scale(ca)
        return out

    def L_of(self, alpha: Section) -> CoeffForm:
        """The operator applied to a section, via the extension rule."""
        n = self.algebroid.chart.dim
        out = zero_form(self.value_bundle, self.degree)
        for a in range(self.algebroid.rank):
            ca = alpha.components[a]
            if ca != ZERO:
                out = out + self.frame_values[a].scale(ca)
            dca = [differentiate(ca, i) for i in range(n)]
            if any(d != ZERO for d in dca):
                out = out + wedge_scalar_one_form(dca, self.symbols[a])
        return out


class IMOneForm(_IMFormBase):
    """Vector-bundle-valued 1-form pair (L, l) on an algebroid, stored
    by frame values.  ``l`` is the r_V x r symbol matrix; when the value
    bundle is a bundle of ideals whose columns carry the identity, the
    form is an Ehresmann connection form.
    """

    degree = 1

    def __init__(self, algebroid, value, l, frame_values):
        vb = _value_bundle(value)
        rV, r = vb.rank, algebroid.rank
        if len(l) != rV or any(len(row) != r for row in l):
            raise ValueError("symbol must be an r_V x r Expr matrix")
        self.l = tuple(tuple(fold(x) for x in row) for row in l)
        symbols = [
            CoeffForm(vb, 0, {(): [self.l[c][a] for c in range(rV)]})
            for a in range(r)
        ]
        super().__init__(algebroid, value, symbols, frame_values)

    def is_connection(self) -> bool:
        """Exact predicate: the symbol restricts to the identity on the
        ideal columns."""
        if self.ideal is None:
            return False
        k = self.ideal.k
        for c in range(self.ideal.bundle.rank):
            for a in range(k):
                want = ONE if c == a else ZERO
                if self.l[c][a] != want:
                    return False
        return True

    def l_of(self, alpha: Section) -> list[Expr]:
        rV, r = self.value_rank, self.algebroid.rank
        return [
            fold(add(*(mul(self.l[c][a], alpha.components[a]) for a in range(r))))
            for c in range(rV)
        ]


class IMTwoForm(_IMFormBase):
    """Degree-2 analogue: the symbol maps frame elements to value-bundle
    valued 1-forms, the operator to 2-forms."""

    degree = 2

    def __init__(self, algebroid, value, symbols, frame_values):
        super().__init__(algebroid, value, symbols, frame_values)

    def is_connection(self) -> bool:
        return False


def fd_partial(fn: Callable[[np.ndarray], np.ndarray], j: int, p, h: float) -> np.ndarray:
    """Fourth-order central difference of a point evaluator along the
    j-th coordinate; keeps finite-difference noise well below the
    derivative tolerances of the numerically-backed checkers."""
    p = np.asarray(p, dtype=float)

    def at(s: float) -> np.ndarray:
        q = p.copy()
        q[j] += s
        return np.asarray(fn(q))

    return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)


class NumericIMOneForm:
    """Numerically-backed connection form: frame values are point
    evaluators and derivatives are higher-order central differences.
    Used by the groupoid harness; satisfies the same accessor protocol
    as IMOneForm."""

    degree = 1

    def __init__(
        self,
        algebroid: LieAlgebroid,
        ideal: IdealBundle,
        sym_fn: Callable[[int, np.ndarray], np.ndarray],
        op_fn: Callable[[int, int, np.ndarray], np.ndarray],
        fd_step: float = 2e-3,
    ):
        self.algebroid = algebroid
        self.ideal = ideal
        self.value_bundle = ideal.bundle
        self._sym = sym_fn
        self._op = op_fn
        self.h = fd_step

    @property
    def value_rank(self) -> int:
        return self.value_bundle.rank

    def sym_value(self, a, idx, p) -> np.ndarray:
        return np.asarray(self._sym(a, np.asarray(p, dtype=float)))

    def sym_dvalue(self, j, a, idx, p) -> np.ndarray:
        return fd_partial(lambda q: self._sym(a, q), j, p, self.h)

    def op_value(self, a, idx, p) -> np.ndarray:
        sign, key = sort_with_sign(idx)
        if sign == 0:
            return np.zeros(self.value_rank)
        return sign * np.asarray(self._op(a, key[0], np.asarray(p, dtype=float)))

    def op_dvalue(self, j, a, idx, p) -> np.ndarray:
        sign, key = sort_with_sign(idx)
        if sign == 0:
            return np.zeros(self.value_rank)
        return sign * fd_partial(lambda q: self._op(a, key[0], q), j, p, self.h)

    def connection_residual(self, plan: SamplePlan, n_points: int = 30) -> float:
        """Sampled version of the symbol-restricts-to-identity predicate."""
        k = self.ideal.k
        worst = 0.0
        for p in plan.points(self.algebroid.chart, n_points):
            for a in range(k):
                v = self.sym_value(a, (), p)
                v = v - np.eye(self.value_rank)[:, a] if False else v
                unit = np.zeros(self.value_rank)
                unit[a] = 1.0
                worst = max(worst, float(np.max(np.abs(self.sym_value(a, (), p) - unit))))
        return worst


class _SectionData:
    """Cached values / first and second derivatives of a section's
    coefficients at a point."""

    def __init__(self, A: LieAlgebroid, alpha: Section):
        self.A = A
        self.alpha = alpha
        n, r = A.chart.dim, A.rank
        self.jac_exprs = [
            [differentiate(alpha.components[a], j) for j in range(n)] for a in range(r)
        ]
        self.hess_exprs = [
            [[differentiate(self.jac_exprs[a][j], i) for i in range(n)] for j in range(n)]
            for a in range(r)
        ]
        self.rho = A.rho_of(alpha)
        self.drho = [
            [differentiate(self.rho[m], j) for j in range(n)]
            for m in range(n)
        ]

    def at(self, p):
        n, r = self.A.chart.dim, self.A.rank
        val = np.array([evaluate(c, p) for c in self.alpha.components])
        jac = np.array(
            [[evaluate(self.jac_exprs[a][j], p) for j in range(n)] for a in range(r)]
        )
        hess = np.array(
            [
                [[evaluate(self.hess_exprs[a][j][i], p) for i in range(n)] for j in range(n)]
                for a in range(r)
            ]
        )
        rho = np.array([evaluate(x, p) for x in self.rho])
        drho = np.array(
            [[evaluate(self.drho[m][j], p) for j in range(n)] for m in range(n)]
        )
        return val, jac, hess, rho, drho


def _op_of_section(form, sd_vals, idx, p) -> np.ndarray:
    """L(alpha) component at idx (strictly increasing), via the
    extension rule, from cached section data."""
    val, jac = sd_vals[0], sd_vals[1]
    r = form.algebroid.rank
    out = np.zeros(form.value_rank)
    for a in range(r):
        if val[a] != 0.0:
            out += val[a] * form.op_value(a, idx, p)
        for t in range(len(idx)):
            if jac[a][idx[t]] != 0.0:
                out += ((-1.0) ** t) * jac[a][idx[t]] * form.sym_value(
                    a, idx[:t] + idx[t + 1 :], p
                )
    return out


def _op_of_section_d(form, sd_vals, j, idx, p) -> np.ndarray:
    """d/dx_j of the above."""
    val, jac, hess = sd_vals[0], sd_vals[1], sd_vals[2]
    r = form.algebroid.rank
    out = np.zeros(form.value_rank)
    for a in range(r):
        out += jac[a][j] * form.op_value(a, idx, p)
        if val[a] != 0.0:
            out += val[a] * form.op_dvalue(j, a, idx, p)
        for t in range(len(idx)):
            rest = idx[:t] + idx[t + 1 :]
            sgn = (-1.0) ** t
            out += sgn * hess[a][j][idx[t]] * form.sym_value(a, rest, p)
            if jac[a][idx[t]] != 0.0:
                out += sgn * jac[a][idx[t]] * form.sym_dvalue(j, a, rest, p)
    return out


def _sym_of_section(form, sd_vals, idx, p) -> np.ndarray:
    val = sd_vals[0]
    out = np.zeros(form.value_rank)
    for a in range(form.algebroid.rank):
        if val[a] != 0.0:
            out += val[a] * form.sym_value(a, idx, p)
    return out


def _sym_of_section_d(form, sd_vals, j, idx, p) -> np.ndarray:
    val, jac = sd_vals[0], sd_vals[1]
    out = np.zeros(form.value_rank)
    for a in range(form.algebroid.rank):
        out += jac[a][j] * form.sym_value(a, idx, p)
        if val[a] != 0.0:
            out += val[a] * form.sym_dvalue(j, a, idx, p)
    return out


def _signed_lookup(fn, idx) -> np.ndarray:
    sign, key = sort_with_sign(idx)
    if sign == 0:
        return None
    v = fn(key)
    return v if sign == 1 else -v


def _rep_matrices(rep: ARepresentation, p) -> list[np.ndarray]:
    rV = rep.bundle.rank
    return [
        np.array([[evaluate(rep.coeffs[b][d][c], p) for c in range(rV)] for d in range(rV)])
        for b in range(rep.algebroid.rank)
    ]


def _lie_of(form, rep_mats, sd_vals, value_fn, dvalue_fn, idx, p) -> np.ndarray:
    """Lie derivative along the section (with cached data sd_vals) of a
    V-valued form given by lookup callables, at index tuple idx."""
    val, jac, hess, rho, drho = sd_vals
    n = form.algebroid.chart.dim
    # Coefficient part: directional derivative along the anchor plus the
    # representation matrices.
    out = np.zeros(form.value_rank)
    for j in range(n):
        if rho[j] != 0.0:
            out += rho[j] * dvalue_fn(j, idx)
    gamma_here = value_fn(idx)
    for b in range(form.algebroid.rank):
        if val[b] != 0.0:
            out += val[b] * (rep_mats[b] @ gamma_here)
    # Argument part: commutators with the coordinate fields.
    for t in range(len(idx)):
        for m in range(n):
            coef = drho[m][idx[t]]
            if coef == 0.0:
                continue
            swapped = idx[:t] + (m,) + idx[t + 1 :]
            sign, key = sort_with_sign(swapped)
            if sign == 0:
                continue
            out += coef * sign * value_fn(key)
    return out


def check_im_form(
    form,
    rep: ARepresentation,
    plan: SamplePlan | None = None,
    tol: float = 1e-8,
) -> Report:
    """Verify the compatibility identities of a degree-1 or degree-2
    form pair against a representation, on random polynomial sections at
    sampled points.  Also reports the connection predicate.
    """
    if rep.bundle != form.value_bundle:
        raise ValueError("representation must act on the form's value bundle")
    plan = plan or SamplePlan()
    A = form.algebroid
    n = A.chart.dim
    k = form.degree
    report = Report(command="check-im", seed=plan.seed, samples=plan.samples)
    draws, pts = plan.split_budget(per_draw=20)
    draws = max(2, min(draws, 10))

    worst = {1: 0.0, 2: 0.0, 3: 0.0}
    for _ in range(draws):
        alpha = A.random_section(plan.rng)
        beta = A.random_section(plan.rng)
        gamma = bracket(A, alpha, beta)
        sda, sdb = _SectionData(A, alpha), _SectionData(A, beta)
        sdg = _SectionData(A, gamma)
        for p in plan.points(A.chart, pts):
            va, vb_, vg = sda.at(p), sdb.at(p), sdg.at(p)
            rep_mats = _rep_matrices(rep, p)

            if k == 2:
                # identity 1: i_{rho(a)} sym(b) + i_{rho(b)} sym(a) = 0
                res = np.zeros(form.value_rank)
                for i in range(n):
                    if va[3][i] != 0.0:
                        res += va[3][i] * _sym_of_section(form, vb_, (i,), p)
                    if vb_[3][i] != 0.0:
                        res += vb_[3][i] * _sym_of_section(form, va, (i,), p)
                worst[1] = max(worst[1], float(np.max(np.abs(res))))

            # identity 2: L([a,b]) = Lie_a L(b) - Lie_b L(a)
            for idx in itertools.combinations(range(n), k):
                lhs = _op_of_section(form, vg, idx, p)
                lie_ab = _lie_of(
                    form,
                    rep_mats,
                    va,
                    lambda key: _op_of_section(form, vb_, key, p),
                    lambda j, key: _op_of_section_d(form, vb_, j, key, p),
                    idx,
                    p,
                )
                lie_ba = _lie_of(
                    form,
                    rep_mats,
                    vb_,
                    lambda key: _op_of_section(form, va, key, p),
                    lambda j, key: _op_of_section_d(form, va, j, key, p),
                    idx,
                    p,
                )
                worst[2] = max(
                    worst[2], float(np.max(np.abs(lhs - lie_ab + lie_ba)))
                )

            # identity 3: sym([a,b]) = Lie_a sym(b) - i_{rho(b)} L(a)
            for idx in itertools.combinations(range(n), k - 1):
                lhs = _sym_of_section(form, vg, idx, p)
                lie_s = _lie_of(
                    form,
                    rep_mats,
                    va,
                    lambda key: _sym_of_section(form, vb_, key, p),
                    lambda j, key: _sym_of_section_d(form, vb_, j, key, p),
                    idx,
                    p,
                )
                contr = np.zeros(form.value_rank)
                for i in range(n):
                    if vb_[3][i] == 0.0:
                        continue
                    v = _signed_lookup(
                        lambda key: _op_of_section(form, va, key, p), (i,) + idx
                    )
                    if v is not None:
                        contr += vb_[3][i] * v
                worst[3] = max(worst[3], float(np.max(np.abs(lhs - lie_s + contr))))

    if k == 2:
        report.add("im_identity_1", worst[1], tol)
    report.add("im_identity_2", worst[2], tol)
    report.add("im_identity_3", worst[3], tol)

    if isinstance(form, NumericIMOneForm):
        res = form.connection_residual(plan.fork("connpred"))
        report.extra["connection_predicate"] = bool(res < 1e-6)
        report.extra["connection_predicate_residual"] = float(res)
    elif isinstance(form, IMOneForm):
        report.extra["connection_predicate"] = form.is_connection()
    return report


class CouplingData:
    """Quotient algebroid, fiberwise Lie algebra, a linear connection on
    the fiber bundle, and the mixed tensor; everything symbolic.

    ``U[a][i]`` is the fiber coefficient vector of the tensor evaluated
    on the a-th base frame element and the i-th coordinate direction.
    """

    def __init__(
        self,
        base: LieAlgebroid,
        fiber: FiberBracket,
        nablaL: LinearConnection,
        U: Sequence[Sequence[Sequence[Expr]]],
        verify_skew: bool = True,
        plan: SamplePlan | None = None,
    ):
        if fiber.bundle.chart != base.chart:
            raise ValueError("base and fiber must share the chart")
        if nablaL.bundle != fiber.bundle:
            raise ValueError("connection must live on the fiber bundle")
        rB, n, kk = base.rank, base.chart.dim, fiber.bundle.rank
        if len(U) != rB or any(len(row) != n for row in U):
            raise ValueError("U must be indexed by base frame x chart direction")
        self.base = base
        self.fiber = fiber
        self.nablaL = nablaL
        self.U = tuple(
            tuple(tuple(fold(x) for x in vec) for vec in row) for row in U
        )
        for row in self.U:
            for vec in row:
                if len(vec) != kk:
                    raise ValueError("U entries must be fiber coefficient vectors")
        self._semidirect = None
        if verify_skew:
            res = self.skew_residual(plan or SamplePlan(seed=42, samples=40))
            if res > 1e-9:
                raise ValueError(
                    f"mixed tensor is not anchor-skew (residual {res:.2e})"
                )

    @property
    def k(self) -> int:
        return self.fiber.bundle.rank

    # Accessors shared with the numeric twin.
    def gamma(self, i: int, p) -> np.ndarray:
        return self.nablaL.gamma_value(i, p)

    def dgamma(self, j: int, i: int, p) -> np.ndarray:
        return self.nablaL.gamma_dvalue(j, i, p)

    def u(self, a: int, i: int, p) -> np.ndarray:
        return np.array([evaluate(x, p) for x in self.U[a][i]])

    def du(self, j: int, a: int, i: int, p) -> np.ndarray:
        return np.array(
            [evaluate(differentiate(x, j), p) for x in self.U[a][i]]
        )

    def u_form(self, a: int) -> CoeffForm:
        """U on the a-th base frame element, as a fiber-valued 1-form."""
        n = self.base.chart.dim
        return CoeffForm(
            self.fiber.bundle, 1, {(i,): list(self.U[a][i]) for i in range(n)}
        )

    def skew_residual(self, plan: SamplePlan, n_points: int = 30) -> float:
        B = self.base
        n, rB = B.chart.dim, B.rank
        worst = 0.0
        for p in plan.points(B.chart, n_points):
            rho = B.anchor_value(p)
            for a in range(rB):
                for b in range(rB):
                    v = np.zeros(self.k)
                    for i in range(n):
                        v += rho[i, b] * self.u(a, i, p) + rho[i, a] * self.u(b, i, p)
                    worst = max(worst, float(np.max(np.abs(v))))
        return worst

    def base_rep_on_fiber(self) -> ARepresentation:
        """The base acting on the fiber bundle through the connection
        along the anchor (the representation used for the kernel-flat
        2-form checks; genuinely flat on the center)."""
        B = self.base
        n, kk = B.chart.dim, self.k
        coeffs = []
        for b in range(B.rank):
            M = [
                [
                    fold(
                        add(
                            *(
                                mul(B.anchor[i][b], self.nablaL.christoffel[i][d][c])
                                for i in range(n)
                            )
                        )
                    )
                    for c in range(kk)
                ]
                for d in range(kk)
            ]
            coeffs.append(M)
        return ARepresentation(B, self.fiber.bundle, coeffs)

    def semidirect(self) -> LieAlgebroid:
        if self._semidirect is None:
            self._semidirect = build_semidirect(self)
        return self._semidirect


class NumericCouplingData:
    """Coupling accessors backed by point evaluators (base and fiber
    stay symbolic); derivative access is higher-order central finite
    differences.  A ``None`` base encodes the degenerate full-ideal
    case (rank-zero quotient), for which only the bracket-preservation
    equation carries content."""

    def __init__(
        self,
        base: LieAlgebroid | None,
        fiber: FiberBracket,
        gamma_fn: Callable[[int, np.ndarray], np.ndarray],
        u_fn: Callable[[int, int, np.ndarray], np.ndarray],
        fd_step: float = 2e-3,
    ):
        self.base = base
        self.fiber = fiber
        self._gamma = gamma_fn
        self._u = u_fn
        self.h = fd_step

    @property
    def k(self) -> int:
        return self.fiber.bundle.rank

    def gamma(self, i, p) -> np.ndarray:
        return np.asarray(self._gamma(i, np.asarray(p, dtype=float)))

    def dgamma(self, j, i, p) -> np.ndarray:
        return fd_partial(lambda q: self._gamma(i, q), j, p, self.h)

    def u(self, a, i, p) -> np.ndarray:
        return np.asarray(self._u(a, i, np.asarray(p, dtype=float)))

    def du(self, j, a, i, p) -> np.ndarray:
        return fd_partial(lambda q: self._u(a, i, q), j, p, self.h)


def extract_coupling(
    A: LieAlgebroid,
    ideal: IdealBundle,
    form: IMOneForm,
    plan: SamplePlan | None = None,
    check: bool = True,
    tol: float = 1e-8,
) -> CouplingData:
    """Read the coupling data off a connection form: the fiber
    connection from the ideal columns, the mixed tensor from the
    complementary (kernel-of-symbol) frame, and the quotient bracket on
    that frame."""
    if form.algebroid is not A or form.ideal is None or form.ideal.k != ideal.k:
        raise ValueError("form does not belong to the given algebroid and ideal")
    if not form.is_connection():
        raise ValueError("symbol does not restrict to the identity on the ideal")
    plan = plan or SamplePlan()
    if check:
        rep = canonical_representation(A, ideal)
        r = check_im_form(form, rep, plan.fork("imcheck"), tol=tol)
        if not r.passed:
            raise ConstructionRefused("form fails the compatibility identities", r)

    k, r, n = ideal.k, A.rank, A.chart.dim
    if k >= r:
        raise ValueError("coupling extraction needs a nontrivial quotient")

    # Complementary frame: e~_a = e_a - sum_c l^c_a e_c for a >= k.
    comp_secs = []
    for a in range(k, r):
        comps = [fold(neg(form.l[c][a])) for c in range(k)] + [ZERO] * (r - k)
        comps[a] = ONE
        comp_secs.append(Section(A.bundle, comps))

    rB = r - k
    anchor = [[A.anchor[i][k + a] for a in range(rB)] for i in range(n)]
    structure = [[None] * rB for _ in range(rB)]
    for a in range(rB):
        for b in range(rB):
            if b < a:
                structure[a][b] = [fold(neg(x)) for x in structure[b][a]]
                continue
            if a == b:
                structure[a][b] = [ZERO] * rB
                continue
            w = bracket(A, comp_secs[a], comp_secs[b])
            structure[a][b] = [w.components[k + c] for c in range(rB)]
    B = LieAlgebroid(Bundle(A.chart, rB, label="B"), anchor, structure)

    gam = [
        [[form.frame_values[a].component((i,))[c] for a in range(k)] for c in range(k)]
        for i in range(n)
    ]
    nablaL = LinearConnection(ideal.bundle, gam)

    # U(e~_a, d_i) = -L(e~_a)_i, expanded through the extension rule.
    U = []
    for a in range(rB):
        row = []
        for i in range(n):
            vec = []
            for c in range(k):
                terms = [neg(form.frame_values[k + a].component((i,))[c])]
                for cc in range(k):
                    terms.append(
                        mul(form.l[cc][k + a], form.frame_values[cc].component((i,))[c])
                    )
                terms.append(differentiate(form.l[c][k + a], i))
                vec.append(fold(add(*terms)))
            row.append(vec)
        U.append(row)

    return CouplingData(B, ideal.fiber, nablaL, U, plan=plan.fork("skew"))


def build_semidirect(cd) -> LieAlgebroid:
    """Rebuild the algebroid on fiber + base from coupling data; the
    first k frame elements span the bundle of ideals."""
    B, fiber = cd.base, cd.fiber
    k, rB, n = cd.k, B.rank, B.chart.dim
    r = k + rB
    if not isinstance(cd, CouplingData):
        raise TypeError("build_semidirect needs symbolic coupling data")
    anchor = [[ZERO] * k + [B.anchor[i][a] for a in range(rB)] for i in range(n)]
    structure = [[[ZERO] * r for _ in range(r)] for _ in range(r)]
    Gam = cd.nablaL.christoffel
    for c in range(k):
        for d in range(k):
            for e in range(k):
                structure[c][d][e] = fiber.c[c][d][e]
    for a in range(rB):
        for c in range(k):
            vec = [
                fold(add(*(mul(B.anchor[i][a], Gam[i][e][c]) for i in range(n))))
                for e in range(k)
            ]
            for e in range(k):
                structure[k + a][c][e] = vec[e]
                structure[c][k + a][e] = fold(neg(vec[e]))
    # Base-base brackets: quotient structure plus the fiber component
    # coming from the mixed tensor contracted with the anchor.  Only
    # the upper triangle is taken from the formula; the lower one is
    # its structural negation (equal to the formula's value exactly
    # when the mixed tensor is anchor-skew).
    for a in range(rB):
        for b in range(a + 1, rB):
            for cc in range(rB):
                structure[k + a][k + b][k + cc] = B.structure[a][b][cc]
                structure[k + b][k + a][k + cc] = fold(neg(B.structure[a][b][cc]))
            vec = [
                fold(add(*(mul(B.anchor[i][b], cd.U[a][i][e]) for i in range(n))))
                for e in range(k)
            ]
            for e in range(k):
                structure[k + a][k + b][e] = vec[e]
                structure[k + b][k + a][e] = fold(neg(vec[e]))
    bundle = Bundle(B.chart, r, label="semidirect")
    return LieAlgebroid(bundle, anchor, structure)


def coupling_to_im(
    cd: CouplingData,
    plan: SamplePlan | None = None,
    check: bool = True,
    tol: float = 1e-8,
) -> IMOneForm:
    """The connection form of a coupling on its semidirect carrier:
    the symbol is the fiber projection and the frame values are the
    fiber connection on ideal elements and minus the mixed tensor on
    base elements."""
    plan = plan or SamplePlan()
    if check:
        rep = check_structure_equations(cd, plan=plan.fork("structeq"), tol=tol)
        if not rep.passed:
            raise ConstructionRefused("coupling fails the structure equations", rep)
    A = cd.semidirect()
    k, rB, n = cd.k, cd.base.rank, cd.base.chart.dim
    ideal = IdealBundle(A, k, plan=plan.fork("ideal"), verify=True)
    l = [
        [ONE if c == a else ZERO for a in range(k)] + [ZERO] * rB
        for c in range(k)
    ]
    frame_values = []
    Gam = cd.nablaL.christoffel
    for c in range(k):
        frame_values.append(
            CoeffForm(
                ideal.bundle,
                1,
                {(i,): [Gam[i][e][c] for e in range(k)] for i in range(n)},
            )
        )
    for a in range(rB):
        frame_values.append(
            CoeffForm(
                ideal.bundle,
                1,
                {(i,): [fold(neg(x)) for x in cd.U[a][i]] for i in range(n)},
            )
        )
    return IMOneForm(A, ideal, l, frame_values)


def check_structure_equations(
    cd,
    variant: str = "S1S3",
    plan: SamplePlan | None = None,
    tol: float = 1e-8,
    center_tol: float = 1e-7,
    svd_tol: float = 1e-9,
) -> Report:
    """Residuals of the coupling structure equations at sampled points.

    variant="S1S3": bracket preservation, curvature vs fiber adjoint,
    and the mixed cocycle equation.  variant="S1'S3'" additionally
    requires a flat fiber connection, center-valued mixed tensor, and
    that the pair (covariant differential of U, U) passes the degree-2
    compatibility identities on the base.
    """
    if variant not in ("S1S3", "S1'S3'"):
        raise ValueError("variant must be 'S1S3' or \"S1'S3'\"")
    plan = plan or SamplePlan()
    B, fiber = cd.base, cd.fiber
    chart = fiber.bundle.chart
    n, k = chart.dim, cd.k
    rB = B.rank if B is not None else 0
    report = Report(command="check-structure", seed=plan.seed, samples=plan.samples)
    pts = plan.points(chart, max(10, min(plan.samples, 40)))

    c_exprs = fiber.c
    dc_exprs = {
        (a, b, i): [differentiate(c_exprs[a][b][e], i) for e in range(k)]
        for a in range(k)
        for b in range(k)
        for i in range(n)
    }

    s1 = s2 = s3 = 0.0
    for p in pts:
        Gams = [cd.gamma(i, p) for i in range(n)]
        dGams = [[cd.dgamma(j, i, p) for i in range(n)] for j in range(n)]
        cvals = np.array(
            [
                [[evaluate(c_exprs[a][b][e], p) for e in range(k)] for b in range(k)]
                for a in range(k)
            ]
        )
        if rB:
            rho = B.anchor_value(p)
            drho = np.array(
                [
                    [[evaluate(differentiate(B.anchor[i][a], j), p) for a in range(rB)] for i in range(n)]
                    for j in range(n)
                ]
            )
            cB = np.array(
                [
                    [[evaluate(B.structure[a][b][cc], p) for cc in range(rB)] for b in range(rB)]
                    for a in range(rB)
                ]
            )
            uvals = np.array([[cd.u(a, i, p) for i in range(n)] for a in range(rB)])
            duvals = np.array(
                [[[cd.du(j, a, i, p) for i in range(n)] for a in range(rB)] for j in range(n)]
            )

        # (S1): the fiber connection preserves the fiberwise bracket.
        for i in range(n):
            for a in range(k):
                for b in range(k):
                    dc = np.array([evaluate(x, p) for x in dc_exprs[(a, b, i)]])
                    lhs = dc + Gams[i] @ cvals[a, b]
                    rhs = np.einsum("f,fe->e", Gams[i][:, a], cvals[:, b, :]) + np.einsum(
                        "f,fe->e", Gams[i][:, b], cvals[a, :, :]
                    )
                    s1 = max(s1, float(np.max(np.abs(lhs - rhs))))

        # (S2): curvature along anchored directions equals the adjoint
        # action of the mixed tensor.
        for a in range(rB):
            for j in range(n):
                for c in range(k):
                    t1 = np.zeros(k)
                    for i in range(n):
                        if rho[i, a] == 0.0:
                            continue
                        t1 += rho[i, a] * (dGams[i][j][:, c] + Gams[i] @ Gams[j][:, c])
                    inner2 = sum(rho[i, a] * Gams[i][:, c] for i in range(n))
                    dinner2 = np.zeros(k)
                    for i in range(n):
                        dinner2 += drho[j, i, a] * Gams[i][:, c] + rho[i, a] * dGams[j][i][:, c]
                    t2 = dinner2 + Gams[j] @ inner2
                    t3 = -sum(drho[j, i, a] * Gams[i][:, c] for i in range(n))
                    uaj = uvals[a, j]
                    t4 = np.einsum("f,fe->e", uaj, cvals[:, c, :])
                    s2 = max(s2, float(np.max(np.abs(t1 - t2 - t3 - t4))))

        # (S3): the mixed cocycle equation on base frame pairs.
        for a in range(rB):
            for b in range(rB):
                for j in range(n):
                    t1 = np.zeros(k)
                    for i in range(n):
                        if rho[i, a] != 0.0:
                            t1 += rho[i, a] * (duvals[i][b][j] + Gams[i] @ uvals[b, j])
                    t2 = np.zeros(k)
                    for i in range(n):
                        if rho[i, b] != 0.0:
                            t2 += rho[i, b] * (duvals[i][a][j] + Gams[i] @ uvals[a, j])
                    W = sum(rho[i, b] * uvals[a, i] for i in range(n))
                    dW = np.zeros(k)
                    for i in range(n):
                        dW += drho[j, i, b] * uvals[a, i] + rho[i, b] * duvals[j][a][i]
                    t3 = dW + Gams[j] @ W
                    t4 = -sum(drho[j, i, b] * uvals[a, i] for i in range(n))
                    t5 = +sum(drho[j, i, a] * uvals[b, i] for i in range(n))
                    rhs = sum(cB[a, b, cc] * uvals[cc, j] for cc in range(rB))
                    s3 = max(s3, float(np.max(np.abs(t1 - t2 + t3 + t4 + t5 - rhs))))

    report.add("S1", s1, tol)
    report.add("S2", s2, tol)
    report.add("S3", s3, tol)

    if variant == "S1'S3'":
        flat_res = _curvature_residual(cd, pts)
        report.add("kernel_flat_curvature", flat_res, tol)
        center_res = _center_residual_of_u(cd, pts, svd_tol)
        report.add("U_center_valued", center_res, center_tol)
        if isinstance(cd, CouplingData):
            pair = kernel_flat_two_form(cd)
            rep2 = check_im_form(
                pair, cd.base_rep_on_fiber(), plan.fork("kfpair"), tol=tol
            )
            report.merge(rep2, prefix="U_pair_")
        else:
            raise TypeError("the kernel-flat variant needs symbolic coupling data")
    return report


def _curvature_residual(cd, pts) -> float:
    n = cd.base.chart.dim
    worst = 0.0
    for p in pts:
        Gams = [cd.gamma(i, p) for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                R = (
                    cd.dgamma(i, j, p)
                    - cd.dgamma(j, i, p)
                    + Gams[i] @ Gams[j]
                    - Gams[j] @ Gams[i]
                )
                worst = max(worst, float(np.max(np.abs(R))))
    return worst


def center_basis(fiber: FiberBracket, p, svd_tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (columns) of the fiberwise center at a point:
    the joint kernel of the stacked adjoint matrices."""
    k = fiber.bundle.rank
    ad = fiber.ad_value(p)
    stacked = ad.reshape(k * k, k)
    if np.allclose(stacked, 0.0):
        return np.eye(k)
    u, s, vt = np.linalg.svd(stacked)
    null_mask = np.concatenate([s, np.zeros(max(0, k - len(s)))]) <= svd_tol
    return vt.T[:, null_mask[:k]]


def _center_residual_of_u(cd, pts, svd_tol: float) -> float:
    worst = 0.0
    rank_seen = None
    n, rB = cd.base.chart.dim, cd.base.rank
    for p in pts:
        Z = center_basis(cd.fiber, p, svd_tol)
        if rank_seen is None:
            rank_seen = Z.shape[1]
        elif Z.shape[1] != rank_seen:
            raise CenterDegeneracyError(
                f"center rank jumps across samples ({rank_seen} vs {Z.shape[1]})"
            )
        proj = Z @ Z.T
        for a in range(rB):
            for i in range(n):
                v = cd.u(a, i, p)
                worst = max(worst, float(np.max(np.abs(v - proj @ v))))
    return worst


def kernel_flat_two_form(cd: CouplingData) -> IMTwoForm:
    """The degree-2 pair (covariant differential of U, U) on the base,
    valued in the fiber bundle."""
    B = cd.base
    symbols = [cd.u_form(a) for a in range(B.rank)]
    frames = [
        exterior_covariant_derivative(cd.nablaL, cd.u_form(a)) for a in range(B.rank)
    ]
    return IMTwoForm(B, cd.fiber.bundle, symbols, frames)


def curvature_im(
    cd: CouplingData,
    plan: SamplePlan | None = None,
    check: bool = True,
    tol: float = 1e-8,
) -> IMTwoForm:
    """Curvature 2-form pair of a coupling, on the semidirect carrier:
    the operator is the fiber curvature on ideal elements and minus the
    covariant differential of the mixed tensor on base elements; the
    symbol is minus the mixed tensor."""
    plan = plan or SamplePlan()
    if check:
        rep = check_structure_equations(cd, plan=plan.fork("structeq"), tol=tol)
        if not rep.passed:
            raise ConstructionRefused("coupling fails the structure equations", rep)
    A = cd.semidirect()
    k, rB, n = cd.k, cd.base.rank, cd.base.chart.dim
    ideal = IdealBundle(A, k, verify=False)
    kb = ideal.bundle
    from .bundles import curvature_tensor

    R = curvature_tensor(cd.nablaL)
    symbols = []
    frames = []
    for c in range(k):
        symbols.append(zero_form(kb, 1))
        frames.append(
            CoeffForm(
                kb,
                2,
                {ij: [R[ij][e][c] for e in range(k)] for ij in R},
            )
        )
    for a in range(rB):
        symbols.append(
            CoeffForm(kb, 1, {(i,): [fold(neg(x)) for x in cd.U[a][i]] for i in range(n)})
        )
        dU = exterior_covariant_derivative(cd.nablaL, cd.u_form(a))
        frames.append(dU.scale(const(-1)))
    return IMTwoForm(A, ideal, symbols, frames)


def classify_flatness(
    cd,
    plan: SamplePlan | None = None,
    tol: float = 1e-9,
) -> tuple[set, Report]:
    """Which flatness classes the coupling belongs to, by sampled
    residuals: 'kernel' (flat fiber connection), 'leafwise' (the mixed
    tensor vanishes on anchored directions), 'totally' (flat and the
    mixed tensor vanishes outright)."""
    plan = plan or SamplePlan()
    B = cd.base
    n, rB = B.chart.dim, B.rank
    pts = plan.points(B.chart, max(10, min(plan.samples, 50)))
    report = Report(command="classify", seed=plan.seed, samples=plan.samples)

    curv = _curvature_residual(cd, pts)
    u_res = 0.0
    leaf_res = 0.0
    for p in pts:
        rho = B.anchor_value(p)
        for a in range(rB):
            for i in range(n):
                u_res = max(u_res, float(np.max(np.abs(cd.u(a, i, p)))))
            for b in range(rB):
                v = sum(rho[i, b] * cd.u(a, i, p) for i in range(n))
                leaf_res = max(leaf_res, float(np.max(np.abs(v))))

    report.add("kernel_flat_curvature", curv, tol)
    report.add("leafwise_anchored_U", leaf_res, tol)
    report.add("totally_flat_U", max(u_res, curv), tol)

    classes = set()
    if curv < tol:
        classes.add("kernel")
    if leaf_res < tol:
        classes.add("leafwise")
    if curv < tol and u_res < tol:
        classes.add("totally")
        classes |= {"leafwise", "kernel"}
    report.extra["flatness"] = [c for c in FLATNESS_ORDER if c in classes]
    return classes, report


def d_im(
    conn: LinearConnection,
    form: IMOneForm,
    rep: ARepresentation,
    plan: SamplePlan | None = None,
    tol: float = 1e-9,
) -> IMTwoForm:
    """Covariant differential on degree-1 form pairs:
    (L, l) -> (d_conn L, L - d_conn l).  The connection must be
    invariant under the representation; the check is run and the
    construction refused on failure.

    Sign convention (pinned by the test suite): applied to the
    connection form of a coupling with conn the coupling's own fiber
    connection, the result coincides exactly with curvature_im of that
    coupling, with no sign flip.
    """
    from .algebroid import check_A_invariant

    plan = plan or SamplePlan()
    inv = check_A_invariant(conn, rep, plan.fork("inv"), tol=tol)
    if not inv.passed:
        raise ConstructionRefused("connection is not invariant", inv)
    if conn.bundle != form.value_bundle:
        raise ValueError("connection must live on the form's value bundle")
    symbols = []
    frames = []
    for a in range(form.algebroid.rank):
        dsym = exterior_covariant_derivative(conn, form.symbols[a])
        symbols.append(form.frame_values[a] - dsym)
        frames.append(exterior_covariant_derivative(conn, form.frame_values[a]))
    value = form.ideal if form.ideal is not None else form.value_bundle
    return IMTwoForm(form.algebroid, value, symbols, frames)


class CochainEvaluator:
    """Algebroid cochain obtained from a form pair by contracting the
    symbol with anchors: omega(a_1, ..., a_k) = sym(a_1)(rho(a_2), ...)."""

    def __init__(self, form):
        self.form = form
        self.degree = form.degree

    def __call__(self, *sections: Section) -> list[Expr]:
        if len(sections) != self.degree:
            raise ValueError(f"expected {self.degree} sections")
        A = self.form.algebroid
        out = self.form.sym_of(sections[0])
        for s in sections[1:]:
            out = out.contract(A.rho_of(s))
        return list(out.component(()))

    def value(self, p, *sections: Section) -> np.ndarray:
        return np.array([evaluate(x, p) for x in self(*sections)])


def chain_map(form) -> CochainEvaluator:
    return CochainEvaluator(form)


def cochain_differential(
    rep: ARepresentation, omega: CochainEvaluator
) -> Callable[..., list[Expr]]:
    """Algebroid cochain differential of a degree-1 evaluator, using the
    representation for the coefficient action (enough for the
    intertwining cross-checks)."""
    if omega.degree != 1:
        raise ValueError("only degree-1 cochains are differentiated here")
    A = rep.algebroid

    def d_omega(alpha: Section, beta: Section) -> list[Expr]:
        wa = omega(beta)
        wb = omega(alpha)
        t1 = rep.apply(alpha, wa)
        t2 = rep.apply(beta, wb)
        t3 = omega(bracket(A, alpha, beta))
        return [fold(add(x, neg(y), neg(z))) for x, y, z in zip(t1, t2, t3)]

    return d_omega

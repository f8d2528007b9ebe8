"""Ready-to-check model constructors: products, Lie algebra bundles,
transitive algebroids with a chosen splitting, matrix-algebra actions
with adapted ideal frames, principal-type fiber products, their
kernel-flat variants, and generic rank-one couplings.

Every constructor validates its defining conditions at sampled points
and returns an ExampleModel bundling the algebroid, ideal, coupling
and/or connection form the family provides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebroid import (
    ConstructionRefused,
    IdealBundle,
    LieAlgebroid,
    bracket,
    change_frame,
    connection_change_frame,
    symbolic_inverse,
    tangent_algebroid,
)
from .bundles import (
    Bundle,
    CoeffForm,
    FiberBracket,
    LinearConnection,
    Section,
    curvature_tensor,
)
from .expr import (
    Chart,
    Expr,
    ONE,
    ZERO,
    add,
    const,
    coord,
    differentiate,
    div,
    evaluate,
    fold,
    mul,
    neg,
    parse,
)
from .imforms import (
    CouplingData,
    IMOneForm,
    center_basis,
    coupling_to_im,
)
from .sampling import Report, SamplePlan

__all__ = [
    "ExampleSpec",
    "ExampleModel",
    "make_example",
    "transitive_im_connection",
    "so3_constants",
    "so3_basis",
    "so3_radial_action",
    "EXAMPLE_NAMES",
]

EXAMPLE_NAMES = (
    "product",
    "lie_algebra_bundle",
    "transitive",
    "action",
    "principal_type",
    "principal_type_flat",
    "rank_one",
)


def so3_constants() -> np.ndarray:
    """Structure constants of the rotation algebra in the cross-product
    basis: [E_a, E_b] = eps_abc E_c."""
    eps = np.zeros((3, 3, 3))
    for a, b, c in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps[a, b, c] = 1.0
        eps[b, a, c] = -1.0
    return eps


def so3_basis() -> list[np.ndarray]:
    """Matrix generators matching so3_constants: (E_a)_{ij} = -eps_aij."""
    eps = so3_constants()
    return [-eps[a] for a in range(3)]


@dataclass(frozen=True)
class ExampleSpec:
    """Family name plus family-specific parameters; validated by the
    matching builder before construction."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXAMPLE_NAMES:
            raise ValueError(
                f"unknown example family {self.name!r}; choose from {EXAMPLE_NAMES}"
            )


@dataclass
class ExampleModel:
    """Constructed model: always an algebroid with its ideal; a coupling
    and/or a connection form when the family provides one."""

    name: str
    algebroid: LieAlgebroid
    ideal: IdealBundle
    coupling: CouplingData | None = None
    im_form: IMOneForm | None = None
    connection: LinearConnection | None = None
    splitting: list | None = None
    tau: list | None = None


def _fiber_from_name(chart: Chart, name, rank: int | None = None) -> FiberBracket:
    if isinstance(name, FiberBracket):
        return name
    if name == "so3":
        return FiberBracket.from_constants(Bundle(chart, 3, "k"), so3_constants())
    if name == "abelian":
        return FiberBracket.abelian(Bundle(chart, rank or 1, "k"))
    if name == "so3_center":
        # so(3) + a one dimensional center.
        c = np.zeros((4, 4, 4))
        c[:3, :3, :3] = so3_constants()
        return FiberBracket.from_constants(Bundle(chart, 4, "k"), c)
    raise ValueError(f"unknown fiber algebra {name!r}")


def _parse_matrix(rows, chart: Chart):
    out = []
    for row in rows:
        out.append(
            [x if isinstance(x, Expr) else parse(str(x), chart) for x in row]
        )
    return out


def make_example(spec: ExampleSpec, plan: SamplePlan | None = None) -> ExampleModel:
    plan = plan or SamplePlan()
    builder = {
        "product": _build_product,
        "lie_algebra_bundle": _build_lie_algebra_bundle,
        "transitive": _build_transitive,
        "action": _build_action,
        "principal_type": _build_principal_type,
        "principal_type_flat": _build_principal_type_flat,
        "rank_one": _build_rank_one,
    }[spec.name]
    return builder(dict(spec.params), plan)


def _build_product(params: dict, plan: SamplePlan) -> ExampleModel:
    """Product of the tangent algebroid with a fixed Lie algebra: the
    canonical coupling has a flat trivial fiber connection and no mixed
    tensor."""
    dim = int(params.pop("dim", 2))
    algebra = params.pop("algebra", "so3")
    if params:
        raise ValueError(f"unknown product parameters: {sorted(params)}")
    chart = Chart(dim)
    B = tangent_algebroid(chart)
    fiber = _fiber_from_name(chart, algebra)
    nablaL = LinearConnection.trivial(fiber.bundle)
    k = fiber.bundle.rank
    U = [[[ZERO] * k for _ in range(dim)] for _ in range(B.rank)]
    cd = CouplingData(B, fiber, nablaL, U, plan=plan.fork("skew"))
    form = coupling_to_im(cd, plan=plan.fork("im"), check=False)
    A = form.algebroid
    return ExampleModel(
        "product", A, form.ideal, coupling=cd, im_form=form,
        connection=LinearConnection.trivial(A.bundle),
    )


def _build_lie_algebra_bundle(params: dict, plan: SamplePlan) -> ExampleModel:
    """Bundle of Lie algebras (vanishing anchor) whose fiberwise bracket
    is a direct product of the ideal and a complement; the direct
    product splitting is the witness making the ideal partially split."""
    dim = int(params.pop("dim", 2))
    fiber_name = params.pop("fiber", "so3")
    base_rank = int(params.pop("base_rank", 1))
    if params:
        raise ValueError(f"unknown lie_algebra_bundle parameters: {sorted(params)}")
    chart = Chart(dim)
    fiber = _fiber_from_name(chart, fiber_name)
    # Base: an abelian bundle of Lie algebras with zero anchor.
    Bb = Bundle(chart, base_rank, "B")
    zero_anchor = [[ZERO] * base_rank for _ in range(dim)]
    zero_struct = [[[ZERO] * base_rank for _ in range(base_rank)] for _ in range(base_rank)]
    B = LieAlgebroid(Bb, zero_anchor, zero_struct)
    nablaL = LinearConnection.trivial(fiber.bundle)
    U = [[[ZERO] * fiber.bundle.rank for _ in range(dim)] for _ in range(base_rank)]
    cd = CouplingData(B, fiber, nablaL, U, plan=plan.fork("skew"))
    form = coupling_to_im(cd, plan=plan.fork("im"), check=False)
    return ExampleModel("lie_algebra_bundle", form.algebroid, form.ideal,
                        coupling=cd, im_form=form)


def _transitive_algebroid(
    chart: Chart,
    fiber: FiberBracket,
    nabla: LinearConnection,
    Omega: Sequence[Sequence[Sequence[Expr]]],
    plan: SamplePlan,
    tol: float = 1e-8,
) -> LieAlgebroid:
    """Transitive algebroid on fiber + tangent directions with bracket
    twisted by a fiber-valued 2-form; requires the connection curvature
    to equal the adjoint of the 2-form and the 2-form to be covariantly
    closed (verified at samples)."""
    n, k = chart.dim, fiber.bundle.rank
    _require_curvature_is_ad(fiber, nabla, Omega, plan, tol)
    r = k + n
    anchor = [
        [ZERO] * k + [ONE if i == a else ZERO for a in range(n)] for i in range(n)
    ]
    structure = [[[ZERO] * r for _ in range(r)] for _ in range(r)]
    for c in range(k):
        for d in range(k):
            for e in range(k):
                structure[c][d][e] = fiber.c[c][d][e]
    for i in range(n):
        for c in range(k):
            vec = [nabla.christoffel[i][e][c] for e in range(k)]
            for e in range(k):
                structure[k + i][c][e] = vec[e]
                structure[c][k + i][e] = fold(neg(vec[e]))
    for i in range(n):
        for j in range(i + 1, n):
            for e in range(k):
                structure[k + i][k + j][e] = Omega[i][j][e]
                structure[k + j][k + i][e] = fold(neg(Omega[i][j][e]))
    return LieAlgebroid(Bundle(chart, r, "transitive"), anchor, structure)


def _require_curvature_is_ad(fiber, nabla, Omega, plan, tol: float = 1e-8):
    n, k = fiber.bundle.chart.dim, fiber.bundle.rank
    R = curvature_tensor(nabla)
    worst_ad = 0.0
    worst_closed = 0.0
    # Covariant closedness: sum of signed covariant derivatives of the
    # antisymmetric components over ordered triples.
    for p in plan.points(fiber.bundle.chart, 25):
        cvals = np.array(
            [
                [[evaluate(fiber.c[a][b][e], p) for e in range(k)] for b in range(k)]
                for a in range(k)
            ]
        )
        for i in range(n):
            for j in range(i + 1, n):
                Rm = np.array([[evaluate(x, p) for x in row] for row in R[(i, j)]])
                Om = np.array([evaluate(x, p) for x in Omega[i][j]])
                adO = np.einsum("f,fce->ce", Om, cvals).T
                worst_ad = max(worst_ad, float(np.max(np.abs(Rm - adO))))
    OmForm = CoeffForm(
        fiber.bundle,
        2,
        {
            (i, j): list(Omega[i][j])
            for i in range(n)
            for j in range(i + 1, n)
        },
    )
    if n >= 3:
        from .bundles import exterior_covariant_derivative

        dOm = exterior_covariant_derivative(nabla, OmForm)
        for p in plan.points(fiber.bundle.chart, 25):
            for idx in dOm.comps:
                worst_closed = max(
                    worst_closed, float(np.max(np.abs(dOm.value(idx, p))))
                )
    if worst_ad > tol or worst_closed > tol:
        rep = Report(command="transitive-build", seed=plan.seed, samples=plan.samples)
        rep.add("curvature_equals_ad_of_twist", worst_ad, tol)
        rep.add("twist_covariantly_closed", worst_closed, tol)
        raise ConstructionRefused(
            "twist 2-form incompatible with the connection", rep
        )


def _ad_connection(fiber: FiberBracket, theta: Sequence[Sequence[Expr]]) -> LinearConnection:
    """Connection d + ad(theta) for a fiber-valued 1-form theta; always
    preserves the fiberwise bracket."""
    n, k = fiber.bundle.chart.dim, fiber.bundle.rank
    mats = []
    for i in range(n):
        M = [
            [
                fold(add(*(mul(theta[i][f], fiber.c[f][c][e]) for f in range(k))))
                for c in range(k)
            ]
            for e in range(k)
        ]
        mats.append(M)
    return LinearConnection(fiber.bundle, mats)


def _curvature_of_theta(fiber: FiberBracket, theta) -> list:
    """Omega = d theta + 1/2 [theta, theta] for a fiber-valued 1-form,
    returned as Omega[i][j] vectors on all pairs."""
    n, k = fiber.bundle.chart.dim, fiber.bundle.rank
    Om = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            vec = []
            for e in range(k):
                t = add(
                    differentiate(theta[j][e], i),
                    neg(differentiate(theta[i][e], j)),
                    *(
                        mul(theta[i][a], theta[j][b], fiber.c[a][b][e])
                        for a in range(k)
                        for b in range(k)
                    ),
                )
                vec.append(fold(t))
            Om[i][j] = vec
    return Om


def _build_transitive(params: dict, plan: SamplePlan) -> ExampleModel:
    """Transitive algebroid with isotropy the given fiber algebra, built
    from a connection 1-form; the anchor splitting tau lifting the
    coordinate fields is returned alongside."""
    dim = int(params.pop("dim", 2))
    fiber_name = params.pop("fiber", "abelian")
    fiber_rank = int(params.pop("fiber_rank", 1))
    chart = Chart(dim)
    fiber = _fiber_from_name(chart, fiber_name, rank=fiber_rank)
    k = fiber.bundle.rank
    theta = params.pop("theta", None)
    omega = params.pop("omega", None)
    if params:
        raise ValueError(f"unknown transitive parameters: {sorted(params)}")
    if theta is None:
        theta = [[ZERO] * k for _ in range(dim)]
    else:
        theta = _parse_matrix(theta, chart)
    nabla = _ad_connection(fiber, theta)
    if omega is None:
        Om = _curvature_of_theta(fiber, theta)
    else:
        Om = [[None] * dim for _ in range(dim)]
        given = _parse_matrix(omega, chart)  # rows: increasing pairs
        pairs = [(i, j) for i in range(dim) for j in range(i + 1, dim)]
        if len(given) != len(pairs):
            raise ValueError("omega must list one fiber vector per increasing pair")
        for (i, j), vec in zip(pairs, given):
            Om[i][j] = list(vec)
            Om[j][i] = [fold(neg(x)) for x in vec]
    A = _transitive_algebroid(chart, fiber, nabla, Om, plan.fork("trans"))
    ideal = IdealBundle(A, k, plan=plan.fork("ideal"))
    tau = [[ZERO] * dim for _ in range(k)] + [
        [ONE if i == a else ZERO for i in range(dim)] for a in range(dim)
    ]
    return ExampleModel("transitive", A, ideal, tau=tau)


def so3_radial_action(plan: SamplePlan | None = None) -> ExampleModel:
    """Rotation algebra acting on a box away from the origin, with the
    radial line ideal in an adapted frame, the orthogonal-projection
    splitting, and the transported canonical flat connection."""
    plan = plan or SamplePlan()
    chart = Chart(3, bounds=[(0.4, 1.2), (-0.8, 0.8), (-0.8, 0.8)], excluded_origin=True)
    x = [coord(i) for i in range(3)]
    eps = so3_constants()
    bund = Bundle(chart, 3, "g*M")
    # anchor columns: rho(E_a)(x) = x cross E_a.
    anchor = [
        [ZERO, neg(x[2]), x[1]],
        [x[2], ZERO, neg(x[0])],
        [neg(x[1]), x[0], ZERO],
    ]
    struct = [
        [[const(float(eps[a, b, c])) for c in range(3)] for b in range(3)]
        for a in range(3)
    ]
    A0 = LieAlgebroid(bund, anchor, struct)

    # Adapted frame: radial section first, then E_2, E_3 (valid since
    # the chart keeps x1 away from zero).
    P = [
        [x[0], ZERO, ZERO],
        [x[1], ONE, ZERO],
        [x[2], ZERO, ONE],
    ]
    P_inv = symbolic_inverse(P)
    A = change_frame(A0, P, P_inv, label="g*M adapted")
    ideal = IdealBundle(A, 1, plan=plan.fork("ideal"))

    r2 = add(mul(x[0], x[0]), mul(x[1], x[1]), mul(x[2], x[2]))
    # Radial projection <v, x> x / |x|^2 in the adapted frame.
    l = [[ONE, fold(div(x[1], r2)), fold(div(x[2], r2))]]
    conn0 = connection_change_frame(LinearConnection.trivial(bund), P, P_inv)
    conn = LinearConnection(A.bundle, conn0.christoffel)
    return ExampleModel("action", A, ideal, connection=conn, splitting=l)


def _build_action(params: dict, plan: SamplePlan) -> ExampleModel:
    """Action algebroids: either the shipped rotation/radial model or a
    user-specified algebra action."""
    variant = params.pop("variant", "so3_radial")
    if variant == "so3_radial":
        if params:
            raise ValueError(f"unknown action parameters: {sorted(params)}")
        return so3_radial_action(plan)
    raise ValueError(f"unknown action variant {variant!r}")


def _build_principal_type(params: dict, plan: SamplePlan) -> ExampleModel:
    """Fiber-product model: tangent base, rotation-algebra fiber with
    connection d + ad(theta), mixed tensor the curvature contracted
    with the anchor."""
    dim = int(params.pop("dim", 2))
    chart = Chart(dim)
    fiber = _fiber_from_name(chart, params.pop("fiber", "so3"))
    k = fiber.bundle.rank
    theta = params.pop("theta", None)
    if theta is None:
        theta = [[ZERO] * k for _ in range(dim)]
        theta[0][0] = coord(1)  # theta = x2 E_1 dx1
    else:
        theta = _parse_matrix(theta, chart)
    omega = params.pop("omega", None)
    if params:
        raise ValueError(f"unknown principal_type parameters: {sorted(params)}")
    nabla = _ad_connection(fiber, theta)
    if omega is None:
        Om = _curvature_of_theta(fiber, theta)
    else:
        Om = [[None] * dim for _ in range(dim)]
        given = _parse_matrix(omega, chart)
        pairs = [(i, j) for i in range(dim) for j in range(i + 1, dim)]
        for (i, j), vec in zip(pairs, given):
            Om[i][j] = list(vec)
            Om[j][i] = [fold(neg(x)) for x in vec]
    # Precondition: connection curvature equals the adjoint of Omega.
    _require_curvature_is_ad(fiber, nabla, Om, plan.fork("ad"))
    B = tangent_algebroid(chart)
    U = [[list(Om[a][i]) if Om[a][i] is not None else [ZERO] * k for i in range(dim)] for a in range(dim)]
    cd = CouplingData(B, fiber, nabla, U, plan=plan.fork("skew"))
    form = coupling_to_im(cd, plan=plan.fork("im"), check=False)
    return ExampleModel("principal_type", form.algebroid, form.ideal,
                        coupling=cd, im_form=form)


def _build_principal_type_flat(params: dict, plan: SamplePlan) -> ExampleModel:
    """Kernel-flat variant: flat fiber connection and a center-valued,
    covariantly closed 2-form feeding the mixed tensor."""
    dim = int(params.pop("dim", 2))
    chart = Chart(dim)
    fiber_name = params.pop("fiber", "abelian")
    fiber_rank = int(params.pop("fiber_rank", 1))
    fiber = _fiber_from_name(chart, fiber_name, rank=fiber_rank)
    k = fiber.bundle.rank
    theta_scalar = params.pop("theta", None)
    omega = params.pop("omega", None)
    if params:
        raise ValueError(f"unknown principal_type_flat parameters: {sorted(params)}")
    if theta_scalar is None:
        gam = [[[ZERO] * k for _ in range(k)] for _ in range(dim)]
    else:
        th = [x if isinstance(x, Expr) else parse(str(x), chart) for x in theta_scalar]
        gam = [
            [[th[i] if a == b else ZERO for b in range(k)] for a in range(k)]
            for i in range(dim)
        ]
    nablaL = LinearConnection(fiber.bundle, gam)
    pairs = [(i, j) for i in range(dim) for j in range(i + 1, dim)]
    if omega is None:
        Om = {pairs[0]: [ZERO] * k}
        vec = [ZERO] * k
        vec[k - 1] = ONE  # last fiber direction is central for the stock fibers
        Om = {pairs[0]: vec}
    else:
        given = _parse_matrix(omega, chart)
        Om = {pair: list(vec) for pair, vec in zip(pairs, given)}
    # Preconditions: flat connection, center-valued and covariantly
    # closed 2-form.
    rep = Report(command="principal-type-flat", seed=plan.seed, samples=plan.samples)
    from .bundles import connection_is_flat, exterior_covariant_derivative

    flat, res = connection_is_flat(nablaL, plan.fork("flat"))
    rep.add("fiber_connection_flat", res, 1e-10)
    OmForm = CoeffForm(fiber.bundle, 2, Om)
    worst_center = 0.0
    for p in plan.points(chart, 25):
        Z = center_basis(fiber, p)
        proj = Z @ Z.T
        for idx in OmForm.comps:
            v = OmForm.value(idx, p)
            worst_center = max(worst_center, float(np.max(np.abs(v - proj @ v))))
    rep.add("twist_center_valued", worst_center, 1e-9)
    if dim >= 3:
        dOm = exterior_covariant_derivative(nablaL, OmForm)
        worst = 0.0
        for p in plan.points(chart, 25):
            for idx in dOm.comps:
                worst = max(worst, float(np.max(np.abs(dOm.value(idx, p)))))
        rep.add("twist_covariantly_closed", worst, 1e-9)
    if not rep.passed:
        raise ConstructionRefused("kernel-flat construction preconditions failed", rep)

    B = tangent_algebroid(chart)
    U = [
        [list(OmForm.component((a, i))) for i in range(dim)]
        for a in range(dim)
    ]
    cd = CouplingData(B, fiber, nablaL, U, plan=plan.fork("skew"))
    form = coupling_to_im(cd, plan=plan.fork("im"), check=False)
    return ExampleModel("principal_type_flat", form.algebroid, form.ideal,
                        coupling=cd, im_form=form)


def _build_rank_one(params: dict, plan: SamplePlan) -> ExampleModel:
    """Generic rank-one coupling from a scalar connection 1-form and a
    mixed-tensor matrix over the tangent base."""
    dim = int(params.pop("dim", 2))
    chart = Chart(dim)
    theta = params.pop("theta", ["0"] * dim)
    theta = [x if isinstance(x, Expr) else parse(str(x), chart) for x in theta]
    U1 = params.pop("U1", None)
    verify_skew = bool(params.pop("verify_skew", True))
    if params:
        raise ValueError(f"unknown rank_one parameters: {sorted(params)}")
    B = tangent_algebroid(chart)
    if U1 is None:
        U1 = [[ZERO] * dim for _ in range(dim)]
    else:
        U1 = _parse_matrix(U1, chart)
    fiber = _fiber_from_name(chart, "abelian", rank=1)
    nablaL = LinearConnection(fiber.bundle, [[[theta[i]]] for i in range(dim)])
    U = [[[U1[a][i]] for i in range(dim)] for a in range(dim)]
    cd = CouplingData(B, fiber, nablaL, U, verify_skew=verify_skew, plan=plan.fork("skew"))
    form = coupling_to_im(cd, plan=plan.fork("im"), check=False)
    return ExampleModel("rank_one", form.algebroid, form.ideal,
                        coupling=cd, im_form=form)


def transitive_im_connection(
    A: LieAlgebroid,
    tau: Sequence[Sequence[Expr]],
    plan: SamplePlan | None = None,
    tol: float = 1e-10,
) -> IMOneForm:
    """Connection form of a transitive algebroid induced by an anchor
    splitting tau (r x n Exprs, columns lifting the coordinate fields):
    the symbol is the projection along the splitting and the operator
    brackets with the lifted fields.

    Requires rho o tau = Id and full anchor rank at samples; the
    isotropy must be the span of the first r - n frame elements.
    """
    plan = plan or SamplePlan()
    n, r = A.chart.dim, A.rank
    k = r - n
    if k < 0:
        raise ValueError("algebroid rank below chart dimension cannot be transitive")
    tau = [[fold(x) for x in row] for row in tau]
    if len(tau) != r or any(len(row) != n for row in tau):
        raise ValueError("tau must be an r x n Expr matrix")

    # rho o tau = Id and transitivity at samples.
    worst = 0.0
    rank_bad = 0.0
    for p in plan.points(A.chart, 25):
        rho = A.anchor_value(p)
        tv = np.array([[evaluate(x, p) for x in row] for row in tau])
        worst = max(worst, float(np.max(np.abs(rho @ tv - np.eye(n)))))
        s = np.linalg.svd(rho, compute_uv=False)
        if len(s) < n or s[n - 1] < 1e-9:
            rank_bad = max(rank_bad, 1.0)
    if worst > tol:
        rep = Report(command="transitive-im", seed=plan.seed, samples=plan.samples)
        rep.add("anchor_splitting", worst, tol)
        raise ConstructionRefused("tau is not a splitting of the anchor", rep)
    if rank_bad > 0:
        rep = Report(command="transitive-im", seed=plan.seed, samples=plan.samples)
        rep.add("anchor_full_rank", rank_bad, 0.5)
        raise ConstructionRefused("anchor is rank deficient at samples", rep)

    ideal = IdealBundle(A, k, plan=plan.fork("ideal"))
    # Symbol: identity minus tau rho, restricted to the ideal rows.
    l = []
    for c in range(k):
        row = []
        for a in range(r):
            t = add(
                ONE if c == a else ZERO,
                neg(add(*(mul(tau[c][i], A.anchor[i][a]) for i in range(n)))),
            )
            row.append(fold(t))
        l.append(row)
    tau_secs = [Section(A.bundle, [tau[b][i] for b in range(r)]) for i in range(n)]
    frame_values = []
    for a in range(r):
        comps = {}
        ea = A.frame_section(a)
        for i in range(n):
            w = bracket(A, tau_secs[i], ea)
            comps[(i,)] = [
                fold(
                    add(
                        *(mul(l[c][b], w.components[b]) for b in range(r))
                    )
                )
                for c in range(k)
            ]
        frame_values.append(CoeffForm(ideal.bundle, 1, comps))
    return IMOneForm(A, ideal, l, frame_values)

"""Numeric desk-scale realization of the global theory on action
groupoids of matrix Lie groups: multiplicative fiber-valued forms, the
simplicial differential with its coefficient twist, connection forms
from equivariant splittings, covariant exterior derivatives and
curvature by finite differences, and differentiation down to the
symbolic infinitesimal side.

Conventions: an arrow is a pair (g, x) from x to g.x; sections of the
algebroid are identified with group-algebra-valued functions through
the kernel-of-target-differential convention, which makes the anchor
the negative of the naive action field and keeps constant sections
bracketing by the group structure constants.  Left-invariant flows are
then explicit:  (g, x) -> (g exp(t v), exp(-t v).x).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .algebroid import (
    IdealBundle,
    LieAlgebroid,
    change_frame,
)
from .bundles import Bundle, LinearConnection
from .expr import (
    Chart,
    Expr,
    ONE,
    ZERO,
    add,
    const,
    coord,
    differentiate,
    evaluate,
    fold,
    mul,
    neg,
    substitute,
)
from .imforms import NumericCouplingData, NumericIMOneForm
from .sampling import Report, SamplePlan

__all__ = [
    "MatrixGroup",
    "ActionGroupoid",
    "MultForm",
    "connection_from_splitting",
    "simplicial_delta",
    "delta_of_function",
    "covariant_exterior_D",
    "d_nabla_s",
    "check_groupoid_properties",
    "differentiate_to_im",
    "numeric_extract_coupling",
    "EquivarianceError",
    "FlowRegionError",
    "StepSizeWarning",
]


class StepSizeWarning(UserWarning):
    """Halving the finite-difference step moved the result by more than
    an order of magnitude: the step is in a noise-dominated regime."""


class EquivarianceError(Exception):
    """A splitting failed its equivariance precondition; carries the report."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class FlowRegionError(Exception):
    """A left-invariant flow left the padded sampling region."""


class MatrixGroup:
    """Matrix Lie group presented by an ambient size and a basis of its
    Lie algebra; group elements are reached as products of exponentials.
    """

    def __init__(self, ambient: int, basis: Sequence[np.ndarray], tol: float = 1e-10):
        self.N = int(ambient)
        self.basis = [np.asarray(X, dtype=float).reshape(self.N, self.N) for X in basis]
        self.dim = len(self.basis)
        flat = np.stack([X.ravel() for X in self.basis], axis=1)
        if self.dim and np.linalg.matrix_rank(flat, tol=1e-12) < self.dim:
            raise ValueError("Lie algebra basis is linearly dependent")
        self._flat = flat
        self._pinv = np.linalg.pinv(flat) if self.dim else np.zeros((0, self.N**2))
        # Structure constants from commutators; require closure.
        self.structure = np.zeros((self.dim, self.dim, self.dim))
        worst = 0.0
        for a in range(self.dim):
            for b in range(self.dim):
                comm = self.basis[a] @ self.basis[b] - self.basis[b] @ self.basis[a]
                coef = self._pinv @ comm.ravel()
                worst = max(
                    worst,
                    float(np.max(np.abs(self._flat @ coef - comm.ravel()))),
                )
                self.structure[a, b] = coef
        if worst > tol:
            raise ValueError(
                f"basis does not close under commutators (residual {worst:.2e})"
            )

    def to_matrix(self, v: np.ndarray) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((self.N, self.N))
        return np.tensordot(np.asarray(v, dtype=float), np.stack(self.basis), axes=1)

    def coords(self, V: np.ndarray) -> np.ndarray:
        return self._pinv @ np.asarray(V, dtype=float).ravel()

    def exp(self, v: np.ndarray) -> np.ndarray:
        return expm(self.to_matrix(v))

    def ad_action(self, g: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Adjoint action on coordinates: coords of g V g^-1."""
        V = self.to_matrix(v)
        return self.coords(g @ V @ np.linalg.inv(g))

    def bracket_coords(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("a,b,abc->c", u, v, self.structure)

    def random_element(self, rng: np.random.Generator) -> np.ndarray:
        v = rng.uniform(-1.0, 1.0, size=self.dim)
        nrm = np.linalg.norm(v)
        if nrm > 1.0:
            v = v / nrm
        return self.exp(v)


class ActionGroupoid:
    """Action groupoid of a matrix group on a chart.

    The action is given by Exprs over a combined chart whose first
    ambient^2 coordinates are the (row-major) group entries and whose
    remaining ones are the chart point.  The bundle of ideals is a frame
    of group-algebra-valued sections over the chart, completed to a full
    frame by the supplied complement, and comes with a splitting onto
    the ideal-frame coefficients.
    """

    def __init__(
        self,
        group: MatrixGroup,
        chart: Chart,
        action: Sequence[Expr],
        ideal_frame: Sequence[Sequence[Expr]],
        complement: Sequence[Sequence[Expr]] | None = None,
        splitting: Sequence[Sequence[Expr]] | None = None,
    ):
        self.group = group
        self.chart = chart
        n, d, N = chart.dim, group.dim, group.N
        if len(action) != n:
            raise ValueError("one action expression per chart coordinate")
        self.action_exprs = tuple(fold(a) for a in action)
        self.k = len(ideal_frame)
        if not 1 <= self.k <= d:
            raise ValueError("ideal frame size out of range")
        self.ideal_frame = tuple(
            tuple(fold(x) for x in sec) for sec in ideal_frame
        )
        for sec in self.ideal_frame:
            if len(sec) != d:
                raise ValueError("ideal frame sections must have one entry per basis element")
        if complement is None:
            complement = []
        self.complement = tuple(tuple(fold(x) for x in sec) for sec in complement)
        if len(self.complement) != d - self.k:
            raise ValueError("complement must complete the ideal frame to a full frame")
        self.splitting = None
        if splitting is not None:
            if len(splitting) != self.k or any(len(row) != d for row in splitting):
                raise ValueError("splitting must be a k x d Expr matrix")
            self.splitting = tuple(tuple(fold(x) for x in row) for row in splitting)

        # Exact derivatives of the action in group and chart directions.
        self._jac_x = [
            [differentiate(self.action_exprs[i], N * N + j) for j in range(n)]
            for i in range(n)
        ]
        self._jac_g = [
            [differentiate(self.action_exprs[i], q) for q in range(N * N)]
            for i in range(n)
        ]
        self._alg = None

    # Numeric evaluation helpers.
    def _combined(self, g: np.ndarray, x) -> np.ndarray:
        return np.concatenate([np.asarray(g, dtype=float).ravel(), np.asarray(x, dtype=float)])

    def act(self, g: np.ndarray, x) -> np.ndarray:
        gx = self._combined(g, x)
        return np.array([evaluate(a, gx) for a in self.action_exprs])

    def act_jac_x(self, g: np.ndarray, x) -> np.ndarray:
        gx = self._combined(g, x)
        return np.array([[evaluate(e, gx) for e in row] for row in self._jac_x])

    def act_jac_g(self, g: np.ndarray, x) -> np.ndarray:
        gx = self._combined(g, x)
        return np.array([[evaluate(e, gx) for e in row] for row in self._jac_g])

    def action_field(self, v: np.ndarray, x) -> np.ndarray:
        """Naive infinitesimal action: d/dt of exp(tv).x at t = 0."""
        I = np.eye(self.group.N)
        return self.act_jac_g(I, x) @ self.group.to_matrix(v).ravel()

    def kframe(self, x) -> np.ndarray:
        return np.array(
            [[evaluate(c, x) for c in sec] for sec in self.ideal_frame]
        ).T  # d x k

    def kcoords(self, x, w: np.ndarray) -> np.ndarray:
        F = self.kframe(x)
        sol, *_ = np.linalg.lstsq(F, np.asarray(w, dtype=float), rcond=None)
        return sol

    def fiber_structure(self, x) -> np.ndarray:
        """Structure constants of the ideal fibers in the ideal frame."""
        k = self.k
        F = self.kframe(x)
        out = np.zeros((k, k, k))
        for i in range(k):
            for j in range(k):
                br = self.group.bracket_coords(F[:, i], F[:, j])
                out[i, j] = self.kcoords(x, br)
        return out

    def twist(self, g: np.ndarray, x, coeffs_at_gx: np.ndarray) -> np.ndarray:
        """Coefficient twist by the inverse conjugation action: value in
        the fiber over g.x expressed over x."""
        y = self.act(g, x)
        w = self.kframe(y) @ np.asarray(coeffs_at_gx)
        w_back = self.group.ad_action(np.linalg.inv(g), w)
        return self.kcoords(x, w_back)

    def sample_arrow(self, rng: np.random.Generator):
        from .expr import _sample_point

        g = self.group.random_element(rng)
        x = _sample_point(self.chart, rng)
        return g, x

    def sample_tangent(self, g, rng: np.random.Generator):
        v = rng.uniform(-1.0, 1.0, size=self.group.dim)
        w = rng.uniform(-1.0, 1.0, size=self.chart.dim)
        return g @ self.group.to_matrix(v), w

    def verify(self, plan: SamplePlan | None = None) -> Report:
        """Sampled structural invariants: identity action, composition
        compatibility, and invariance of the ideal under conjugation."""
        plan = plan or SamplePlan()
        report = Report(command="groupoid-structure", seed=plan.seed, samples=plan.samples)
        rng = plan.rng
        I = np.eye(self.group.N)
        id_res = 0.0
        comp_res = 0.0
        ad_res = 0.0
        frame_res = 0.0
        n_pairs = min(plan.samples, 100)
        for _ in range(n_pairs):
            g1, x = self.sample_arrow(rng)
            g2, _ = self.sample_arrow(rng)
            id_res = max(id_res, float(np.max(np.abs(self.act(I, x) - np.asarray(x)))))
            comp_res = max(
                comp_res,
                float(
                    np.max(
                        np.abs(self.act(g1, self.act(g2, x)) - self.act(g1 @ g2, x))
                    )
                ),
            )
            # Conjugation maps the fiber over x onto the fiber over g1.x:
            # compare orthonormalized spans.
            F = self.kframe(x)
            Fg = np.stack(
                [self.group.to_matrix(self.group.ad_action(g1, F[:, j])).ravel() for j in range(self.k)],
                axis=1,
            )
            y = self.act(g1, x)
            Fy = np.stack(
                [self.group.to_matrix(self.kframe(y)[:, j]).ravel() for j in range(self.k)],
                axis=1,
            )
            Q1, _ = np.linalg.qr(Fg)
            Q2, _ = np.linalg.qr(Fy)
            ad_res = max(
                ad_res, float(np.max(np.abs(Q1 @ Q1.T - Q2 @ Q2.T)))
            )
            # Ideal sections must sit in the kernel of the action.
            for j in range(self.k):
                frame_res = max(
                    frame_res,
                    float(np.max(np.abs(self.action_field(F[:, j], x)))),
                )
        report.add("action_identity", id_res, 1e-12)
        report.add("action_composition", comp_res, 1e-8)
        report.add("ideal_conjugation_invariance", ad_res, 1e-7)
        report.add("ideal_in_action_kernel", frame_res, 1e-8)
        return report

    def action_algebroid(self) -> tuple[LieAlgebroid, IdealBundle]:
        """The symbolic infinitesimal counterpart, in the frame adapted
        to the ideal (ideal sections first, then the complement).

        The anchor is minus the action field, matching the
        kernel-of-target convention under which constant sections
        bracket by the group structure constants.
        """
        if self._alg is not None:
            return self._alg
        n, d, N = self.chart.dim, self.group.dim, self.group.N
        # Substitute g = identity, renumber chart coordinates.
        mapping = {}
        I = np.eye(N)
        for p in range(N):
            for q in range(N):
                mapping[N * p + q] = const(float(I[p, q]))
        for i in range(n):
            mapping[N * N + i] = coord(i)
        jac_g_at_id = [
            [substitute(e, mapping) for e in row] for row in self._jac_g
        ]
        anchor = []
        for i in range(n):
            row = []
            for b in range(d):
                Xb = self.group.basis[b].ravel()
                terms = [
                    mul(const(float(Xb[q])), jac_g_at_id[i][q])
                    for q in range(N * N)
                    if Xb[q] != 0.0
                ]
                row.append(fold(neg(add(*terms))) if terms else ZERO)
            anchor.append(row)
        struct = [
            [
                [const(float(self.group.structure[a, b, c])) for c in range(d)]
                for b in range(d)
            ]
            for a in range(d)
        ]
        A0 = LieAlgebroid(Bundle(self.chart, d, "action"), anchor, struct)
        P = [[ZERO] * d for _ in range(d)]
        for j, sec in enumerate(self.ideal_frame):
            for b in range(d):
                P[b][j] = sec[b]
        for j, sec in enumerate(self.complement):
            for b in range(d):
                P[b][self.k + j] = sec[b]
        A = change_frame(A0, P, label="action adapted")
        ideal = IdealBundle(A, self.k)
        self._alg = (A, ideal, P)
        return self._alg

    def induced_connection(self) -> LinearConnection:
        """Linear connection on the ideal coefficients induced by the
        splitting: differentiate the frame sections componentwise and
        project."""
        if self.splitting is None:
            raise ValueError("groupoid carries no splitting")
        n, d, k = self.chart.dim, self.group.dim, self.k
        kb = Bundle(self.chart, k, "k")
        mats = []
        for i in range(n):
            M = [
                [
                    fold(
                        add(
                            *(
                                mul(self.splitting[c][b], differentiate(self.ideal_frame[j][b], i))
                                for b in range(d)
                            )
                        )
                    )
                    for j in range(k)
                ]
                for c in range(k)
            ]
            mats.append(M)
        return LinearConnection(kb, mats)


class MultForm:
    """Fiber-valued form on the arrow space, of degree 0, 1 or 2.

    The evaluator receives an arrow (g, x) and ``degree`` tangent
    vectors, each a pair (group tangent matrix at g, chart vector), and
    returns coefficients in the ideal frame over the source point x.
    """

    def __init__(self, gpd: ActionGroupoid, degree: int, evaluator: Callable):
        if degree not in (0, 1, 2):
            raise ValueError("only degrees 0, 1, 2 are supported")
        self.gpd = gpd
        self.degree = degree
        self._eval = evaluator

    def __call__(self, g, x, *tangents) -> np.ndarray:
        if len(tangents) != self.degree:
            raise ValueError(f"form of degree {self.degree} needs {self.degree} tangents")
        return np.asarray(self._eval(g, x, *tangents))

    def antisymmetry_residual(self, plan: SamplePlan, n_samples: int = 20) -> float:
        if self.degree != 2:
            return 0.0
        worst = 0.0
        for _ in range(n_samples):
            g, x = self.gpd.sample_arrow(plan.rng)
            T1 = self.gpd.sample_tangent(g, plan.rng)
            T2 = self.gpd.sample_tangent(g, plan.rng)
            worst = max(
                worst,
                float(
                    np.max(np.abs(self(g, x, T1, T2) + self(g, x, T2, T1)))
                ),
            )
        return worst


def connection_from_splitting(
    gpd: ActionGroupoid,
    splitting: Sequence[Sequence[Expr]] | None = None,
    plan: SamplePlan | None = None,
    tol: float = 1e-7,
) -> MultForm:
    """Connection 1-form of an equivariant splitting: decompose the
    group component of a tangent vector by left translation and apply
    the splitting at the source point.

    Refused when the splitting fails equivariance or does not restrict
    to the identity on the ideal frame (sampled).
    """
    plan = plan or SamplePlan()
    l = splitting if splitting is not None else gpd.splitting
    if l is None:
        raise ValueError("no splitting supplied")
    d, k, n = gpd.group.dim, gpd.k, gpd.chart.dim

    def l_val(x) -> np.ndarray:
        return np.array([[evaluate(e, x) for e in row] for row in l])

    report = Report(command="connection-from-splitting", seed=plan.seed, samples=plan.samples)
    eq_res = 0.0
    id_res = 0.0
    for _ in range(min(plan.samples, 60)):
        g, x = gpd.sample_arrow(plan.rng)
        v = plan.rng.uniform(-1, 1, size=d)
        gx = gpd.act(g, x)
        lhs_coeff = l_val(gx) @ gpd.group.ad_action(g, v)
        lhs = gpd.kframe(gx) @ lhs_coeff
        rhs = gpd.group.to_matrix(
            gpd.group.ad_action(g, gpd.kframe(x) @ (l_val(x) @ v))
        )
        lhs_m = gpd.group.to_matrix(lhs)
        eq_res = max(eq_res, float(np.max(np.abs(lhs_m - rhs))))
        F = gpd.kframe(x)
        id_res = max(
            id_res, float(np.max(np.abs(l_val(x) @ F - np.eye(k))))
        )
    report.add("splitting_equivariance", eq_res, tol)
    report.add("splitting_identity_on_ideal", id_res, 1e-9)
    if not report.passed:
        raise EquivarianceError(
            "splitting rejected: "
            + ", ".join(f"{c.name}={c.max_residual:.2e}" for c in report.checks),
            report,
        )

    def evaluator(g, x, T):
        xi, _w = T
        v = gpd.group.coords(np.linalg.solve(g, xi))
        return l_val(np.asarray(x, dtype=float)) @ v

    return MultForm(gpd, 1, evaluator)


def delta_of_function(gpd: ActionGroupoid, f: Sequence[Expr]) -> Callable:
    """Degree-zero simplicial differential of a fiber-valued function on
    the chart: an arrow function (g, x) -> coefficients over x."""
    if len(f) != gpd.k:
        raise ValueError("function must have one coefficient per ideal frame section")

    def F(g, x):
        y = gpd.act(g, x)
        fy = np.array([evaluate(c, y) for c in f])
        fx = np.array([evaluate(c, np.asarray(x, dtype=float)) for c in f])
        return gpd.twist(g, x, fy) - fx

    return F


def simplicial_delta(gpd: ActionGroupoid, omega) -> Callable:
    """Simplicial differential on composable pairs.

    For a degree-0 arrow function F:  (g1, g2, x) -> twisted alternating
    sum; for MultForms of degree 1 or 2 the evaluator takes the pair
    plus that many tangent vectors (xi1, xi2, w) of the pair manifold.
    """
    if callable(omega) and not isinstance(omega, MultForm):
        def delta0(g1, g2, x):
            y = gpd.act(g2, x)
            return gpd.twist(g2, x, omega(g1, y)) - omega(g1 @ g2, x) + omega(g2, x)

        return delta0

    if omega.degree == 1:
        def delta1(g1, g2, x, T):
            xi1, xi2, w = T
            y = gpd.act(g2, x)
            dy = gpd.act_jac_g(g2, x) @ np.asarray(xi2).ravel() + gpd.act_jac_x(g2, x) @ w
            t_pr1 = omega(g1, y, (xi1, dy))
            t_m = omega(g1 @ g2, x, (xi1 @ g2 + g1 @ xi2, w))
            t_pr2 = omega(g2, x, (xi2, w))
            return gpd.twist(g2, x, t_pr1) - t_m + t_pr2

        return delta1

    def delta2(g1, g2, x, T1, T2):
        y = gpd.act(g2, x)

        def lift(T):
            xi1, xi2, w = T
            dy = gpd.act_jac_g(g2, x) @ np.asarray(xi2).ravel() + gpd.act_jac_x(g2, x) @ w
            return (xi1, dy), (xi1 @ g2 + g1 @ xi2, w), (xi2, w)

        p1a, ma, p2a = lift(T1)
        p1b, mb, p2b = lift(T2)
        return (
            gpd.twist(g2, x, omega(g1, y, p1a, p1b))
            - omega(g1 @ g2, x, ma, mb)
            + omega(g2, x, p2a, p2b)
        )

    return delta2


def _w_basis_tangent(gpd: ActionGroupoid, g, mu: int):
    """Tangent vector of the mu-th stock vector field at (g, x): the
    left-invariant extensions of the algebra basis followed by the
    coordinate fields."""
    d, n = gpd.group.dim, gpd.chart.dim
    if mu < d:
        return (g @ gpd.group.basis[mu], np.zeros(n))
    w = np.zeros(n)
    w[mu - d] = 1.0
    return (np.zeros((gpd.group.N, gpd.group.N)), w)


def _coords_in_w_basis(gpd: ActionGroupoid, g, T) -> np.ndarray:
    xi, w = T
    cg = gpd.group.coords(np.linalg.solve(g, xi))
    return np.concatenate([cg, np.asarray(w, dtype=float)])


def d_nabla_s(
    gpd: ActionGroupoid,
    omega: MultForm,
    conn: LinearConnection,
    step: float = 1e-5,
) -> MultForm:
    """Covariant exterior derivative (no horizontal projection) of a
    degree-1 form with respect to the source-pullback of a fiber
    connection, by central differences along the stock vector fields."""
    if omega.degree != 1:
        raise ValueError("only degree-1 forms are differentiated here")
    d, n = gpd.group.dim, gpd.chart.dim
    m = d + n

    def move(g, x, mu, s):
        if mu < d:
            return g @ expm(s * gpd.group.basis[mu]), np.asarray(x, dtype=float)
        y = np.asarray(x, dtype=float).copy()
        y[mu - d] += s
        return g, y

    def matrix(g, x):
        x = np.asarray(x, dtype=float)
        vals = [omega(g, x, _w_basis_tangent(gpd, g, nu)) for nu in range(m)]
        out = np.zeros((m, m, gpd.k))
        for mu in range(m):
            for nu in range(mu + 1, m):
                gm, xm = move(g, x, mu, step)
                gm2, xm2 = move(g, x, mu, -step)
                dmu = (
                    omega(gm, xm, _w_basis_tangent(gpd, gm, nu))
                    - omega(gm2, xm2, _w_basis_tangent(gpd, gm2, nu))
                ) / (2 * step)
                gn, xn = move(g, x, nu, step)
                gn2, xn2 = move(g, x, nu, -step)
                dnu = (
                    omega(gn, xn, _w_basis_tangent(gpd, gn, mu))
                    - omega(gn2, xn2, _w_basis_tangent(gpd, gn2, mu))
                ) / (2 * step)
                val = dmu - dnu
                # Connection term along the chart part of the fields.
                if mu >= d:
                    val += conn.gamma_value(mu - d, x) @ vals[nu]
                if nu >= d:
                    val -= conn.gamma_value(nu - d, x) @ vals[mu]
                # Bracket term: only group-group pairs contribute.
                if mu < d and nu < d:
                    fc = gpd.group.structure[mu, nu]
                    for c in range(d):
                        if fc[c] != 0.0:
                            val -= fc[c] * vals[c]
                out[mu, nu] = val
                out[nu, mu] = -val
        return out

    def evaluator(g, x, T1, T2):
        M = matrix(g, x)
        c1 = _coords_in_w_basis(gpd, g, T1)
        c2 = _coords_in_w_basis(gpd, g, T2)
        return np.einsum("m,n,mnk->k", c1, c2, M)

    return MultForm(gpd, 2, evaluator)


def horizontal_projection(gpd: ActionGroupoid, alpha: MultForm):
    """h(X) = X minus the vertical lift of alpha(X)."""

    def h(g, x, T):
        xi, w = T
        c = alpha(g, x, T)
        vert = g @ gpd.group.to_matrix(gpd.kframe(x) @ c)
        return (xi - vert, np.asarray(w, dtype=float))

    return h


def covariant_exterior_D(
    gpd: ActionGroupoid,
    omega: MultForm,
    conn: LinearConnection,
    alpha: MultForm | None = None,
    step: float = 1e-5,
    check_step: bool = True,
) -> MultForm:
    """Exterior covariant derivative: the covariant differential
    evaluated on horizontal projections (with respect to the connection
    form alpha, defaulting to omega itself for degree 1).

    On the first evaluation the result is recomputed at half the step;
    if the two values disagree by more than an order of magnitude of
    their size, a StepSizeWarning is emitted.
    """
    import warnings

    alpha = alpha if alpha is not None else omega
    h = horizontal_projection(gpd, alpha)

    if omega.degree == 1:
        dnabla = d_nabla_s(gpd, omega, conn, step=step)
        dnabla_half = d_nabla_s(gpd, omega, conn, step=step / 2)
        checked = [not check_step]

        def evaluator(g, x, T1, T2):
            hT1, hT2 = h(g, x, T1), h(g, x, T2)
            val = dnabla(g, x, hT1, hT2)
            if not checked[0]:
                checked[0] = True
                val_half = dnabla_half(g, x, hT1, hT2)
                drift = float(np.max(np.abs(val - val_half)))
                scale = max(
                    float(np.max(np.abs(val))), float(np.max(np.abs(val_half)))
                )
                # Honest second-order differences agree to several
                # digits; disagreement beyond a tenth of the magnitude
                # means the step is noise-dominated.
                if drift * 10.0 > scale + 1e-8:
                    warnings.warn(
                        f"step-size failure: values at steps h and h/2 "
                        f"disagree by {drift:.2e} (scale {scale:.2e})",
                        StepSizeWarning,
                        stacklevel=2,
                    )
            return val

        return MultForm(gpd, 2, evaluator)

    if omega.degree != 2:
        raise ValueError("degree must be 1 or 2")

    d, n = gpd.group.dim, gpd.chart.dim
    m = d + n

    def move(g, x, mu, s):
        if mu < d:
            return g @ expm(s * gpd.group.basis[mu]), np.asarray(x, dtype=float)
        y = np.asarray(x, dtype=float).copy()
        y[mu - d] += s
        return g, y

    def evaluator(g, x, T1, T2, T3):
        x = np.asarray(x, dtype=float)
        hts = [h(g, x, T) for T in (T1, T2, T3)]
        cs = [_coords_in_w_basis(gpd, g, ht) for ht in hts]
        # 3-form values on the stock fields, assembled on demand.
        total = np.zeros(gpd.k)
        for mu in range(m):
            for nu in range(mu + 1, m):
                for lam in range(nu + 1, m):
                    coef = 0.0
                    for (i, j, kk), sgn in _perm3():
                        coef += sgn * cs[i][mu] * cs[j][nu] * cs[kk][lam]
                    if coef == 0.0:
                        continue
                    total += coef * _d2_component(
                        gpd, omega, conn, g, x, mu, nu, lam, move, step
                    )
        return total

    return _DegreeThree(gpd, evaluator)


class _DegreeThree:
    """Minimal wrapper for the degree-3 output of the second covariant
    derivative; only evaluation is needed for the Bianchi residual."""

    degree = 3

    def __init__(self, gpd, evaluator):
        self.gpd = gpd
        self._eval = evaluator

    def __call__(self, g, x, T1, T2, T3):
        return np.asarray(self._eval(g, x, T1, T2, T3))


def _perm3():
    return [
        ((0, 1, 2), 1.0),
        ((1, 2, 0), 1.0),
        ((2, 0, 1), 1.0),
        ((1, 0, 2), -1.0),
        ((2, 1, 0), -1.0),
        ((0, 2, 1), -1.0),
    ]


def _d2_component(gpd, omega, conn, g, x, mu, nu, lam, move, step):
    """One component of the covariant differential of a 2-form on the
    stock fields (coordinate-like, with group-group brackets)."""
    d = gpd.group.dim

    def omega_on(gg, xx, a, b):
        return omega(
            gg, xx, _w_basis_tangent(gpd, gg, a), _w_basis_tangent(gpd, gg, b)
        )

    total = np.zeros(gpd.k)
    for t, (a, rest) in enumerate(
        [(mu, (nu, lam)), (nu, (mu, lam)), (lam, (mu, nu))]
    ):
        sgn = (-1.0) ** t
        gp, xp = move(g, x, a, step)
        gm, xm = move(g, x, a, -step)
        dval = (omega_on(gp, xp, *rest) - omega_on(gm, xm, *rest)) / (2 * step)
        if a >= d:
            dval += conn.gamma_value(a - d, x) @ omega_on(g, x, *rest)
        total += sgn * dval
    # Bracket corrections for group-group slots.
    pairs = [((mu, nu), lam, 1.0), ((mu, lam), nu, -1.0), ((nu, lam), mu, 1.0)]
    for (a, b), other, sgn in pairs:
        if a < d and b < d:
            fc = gpd.group.structure[a, b]
            for c in range(d):
                if fc[c] != 0.0:
                    total -= sgn * fc[c] * omega_on(g, x, c, other)
    return total


def check_groupoid_properties(
    gpd: ActionGroupoid,
    alpha: MultForm,
    Omega,
    conn: LinearConnection,
    plan: SamplePlan | None = None,
    tol: float = 1e-4,
    delta_tol: float = 1e-7,
    n_pairs: int = 100,
    n_points: int = 25,
    step: float = 1e-5,
) -> Report:
    """Multiplicativity of the connection form and its curvature, the
    structure equation, and the differential Bianchi identity, all by
    sampled finite differences.  Residuals are relative to the sampled
    curvature scale."""
    plan = plan or SamplePlan()
    rng = plan.rng
    report = Report(command="groupoid-verify", seed=plan.seed, samples=plan.samples)

    # (multiplicativity of alpha) delta alpha = 0 on composable pairs.
    d_alpha = simplicial_delta(gpd, alpha)
    worst = 0.0
    for _ in range(n_pairs):
        g1, x = gpd.sample_arrow(rng)
        g2, _ = gpd.sample_arrow(rng)
        xi1 = g1 @ gpd.group.to_matrix(rng.uniform(-1, 1, size=gpd.group.dim))
        xi2 = g2 @ gpd.group.to_matrix(rng.uniform(-1, 1, size=gpd.group.dim))
        w = rng.uniform(-1, 1, size=gpd.chart.dim)
        worst = max(worst, float(np.max(np.abs(d_alpha(g1, g2, x, (xi1, xi2, w))))))
    report.add("delta_alpha", worst, delta_tol)

    # Scale of the curvature over the sample, for relative residuals.
    scale = 0.0
    samples = []
    for _ in range(n_points):
        g, x = gpd.sample_arrow(rng)
        T1 = gpd.sample_tangent(g, rng)
        T2 = gpd.sample_tangent(g, rng)
        v = Omega(g, x, T1, T2)
        scale = max(scale, float(np.max(np.abs(v))))
        samples.append((g, x, T1, T2, v))
    denom = 1.0 + scale

    # (a) delta Omega = 0.
    d_Omega = simplicial_delta(gpd, Omega)
    worst = 0.0
    for _ in range(min(n_pairs, 40)):
        g1, x = gpd.sample_arrow(rng)
        g2, _ = gpd.sample_arrow(rng)

        def pair_tangent():
            xi1 = g1 @ gpd.group.to_matrix(rng.uniform(-1, 1, size=gpd.group.dim))
            xi2 = g2 @ gpd.group.to_matrix(rng.uniform(-1, 1, size=gpd.group.dim))
            w = rng.uniform(-1, 1, size=gpd.chart.dim)
            return (xi1, xi2, w)

        worst = max(
            worst,
            float(np.max(np.abs(d_Omega(g1, g2, x, pair_tangent(), pair_tangent())))),
        )
    report.add("delta_Omega", worst / denom, tol)

    # (b) structure equation Omega = d^nabla alpha + [alpha, alpha]-half.
    dn_alpha = d_nabla_s(gpd, alpha, conn, step=step)
    worst = 0.0
    for g, x, T1, T2, v in samples:
        c = gpd.fiber_structure(x)
        a1 = alpha(g, x, T1)
        a2 = alpha(g, x, T2)
        half_bracket = np.einsum("a,b,abc->c", a1, a2, c)
        res = v - dn_alpha(g, x, T1, T2) - half_bracket
        worst = max(worst, float(np.max(np.abs(res))))
    report.add("structure_equation", worst / denom, tol)

    # (c) Bianchi: D Omega = 0.
    DOmega = covariant_exterior_D(gpd, Omega, conn, alpha=alpha, step=max(step, 2e-4))
    worst = 0.0
    for _ in range(min(n_points, 12)):
        g, x = gpd.sample_arrow(rng)
        Ts = [gpd.sample_tangent(g, rng) for _ in range(3)]
        worst = max(worst, float(np.max(np.abs(DOmega(g, x, *Ts)))))
    report.add("bianchi", worst / denom, tol)
    return report


def differentiate_to_im(
    gpd: ActionGroupoid,
    alpha: MultForm,
    plan: SamplePlan | None = None,
    step: float = 1e-5,
    region_pad: float = 1.0,
) -> NumericIMOneForm:
    """Differentiate a multiplicative connection form to a numerically
    backed infinitesimal pair on the adapted action algebroid.

    The symbol contracts the form at units against algebroid elements;
    the operator differentiates along the explicit left-invariant flow
    (g, x) -> (g exp(t v), exp(-t v).x) of constant sections, extended
    to the adapted frame by the symbol rule.
    """
    plan = plan or SamplePlan()
    A, ideal, P = gpd.action_algebroid()
    d, n, k = gpd.group.dim, gpd.chart.dim, gpd.k
    N = gpd.group.N
    I = np.eye(N)

    dP = [[[differentiate(P[b][a], i) for i in range(n)] for a in range(d)] for b in range(d)]

    def l_const(v: np.ndarray, x) -> np.ndarray:
        """Symbol on the constant section with coordinates v, at x."""
        w = -gpd.action_field(v, x)
        return alpha(I, np.asarray(x, dtype=float), (gpd.group.to_matrix(v), w))

    def L_const(b: int, x) -> np.ndarray:
        """Operator value on the b-th constant basis section: an
        (n x k) array of flow derivatives (fourth-order stencil in the
        flow parameter)."""
        x = np.asarray(x, dtype=float)
        Umat = gpd.group.basis[b]

        def F(eps: float) -> np.ndarray:
            ge = expm(eps * Umat)
            gi = expm(-eps * Umat)
            y = gpd.act(gi, x)
            if not gpd.chart.contains(y, pad=region_pad):
                raise FlowRegionError(
                    "left-invariant flow left the padded sampling region"
                )
            J = gpd.act_jac_x(gi, x)  # columns: d(exp(-eps u).x)/dx_i
            out = np.zeros((n, k))
            for i in range(n):
                val = alpha(ge, y, (np.zeros((N, N)), J[:, i]))
                out[i] = _twist_by(gpd, ge, y, val)
            return out

        h = max(step, 1e-3)
        return (-F(2 * h) + 8 * F(h) - 8 * F(-h) + F(-2 * h)) / (12 * h)

    def sym_fn(a: int, x: np.ndarray) -> np.ndarray:
        v = np.array([evaluate(P[b][a], x) for b in range(d)])
        return l_const(v, x)

    # Cache the flow derivatives per (b, point) since the operator
    # accessor sweeps the direction index at a fixed point.
    cache: dict = {}

    def L_const_cached(b, x):
        key = (b, tuple(np.round(np.asarray(x, dtype=float), 12)))
        if key not in cache:
            cache[key] = L_const(b, x)
        return cache[key]

    def op_fn_cached(a: int, i: int, x: np.ndarray) -> np.ndarray:
        out = np.zeros(k)
        for b in range(d):
            Pba = evaluate(P[b][a], x)
            dPba = evaluate(dP[b][a][i], x)
            if Pba != 0.0:
                out += Pba * L_const_cached(b, x)[i]
            if dPba != 0.0:
                ub = np.zeros(d)
                ub[b] = 1.0
                out += dPba * l_const(ub, x)
        return out

    return NumericIMOneForm(A, ideal, sym_fn, op_fn_cached, fd_step=5e-4)


def _twist_by(gpd: ActionGroupoid, g, y, coeffs_at_y: np.ndarray) -> np.ndarray:
    """Push coefficients over y through the arrow (g, y): adjoint on the
    underlying algebra vector, re-coefficiented over g.y."""
    w = gpd.kframe(y) @ np.asarray(coeffs_at_y)
    w_fwd = gpd.group.ad_action(g, w)
    return gpd.kcoords(gpd.act(g, y), w_fwd)


def numeric_extract_coupling(
    gpd: ActionGroupoid,
    form: NumericIMOneForm,
) -> NumericCouplingData:
    """Coupling accessors of a numerically backed connection form, using
    the groupoid's symbolic splitting for the complementary frame."""
    from .algebroid import bracket as _bracket
    from .bundles import Section as _Section

    if gpd.splitting is None:
        raise ValueError("groupoid carries no splitting")
    A, ideal, P = gpd.action_algebroid()
    k, r, n = gpd.k, A.rank, gpd.chart.dim

    # Symbol in the adapted frame: l'(e'_a) = splitting applied to the
    # frame columns, yielding Exprs.
    l_ad = [
        [
            fold(add(*(mul(gpd.splitting[c][b], P[b][a]) for b in range(gpd.group.dim))))
            for a in range(r)
        ]
        for c in range(k)
    ]
    dl = [[[differentiate(l_ad[c][a], i) for i in range(n)] for a in range(r)] for c in range(k)]

    def gamma_only(i, p):
        return np.stack([form.op_value(c, (i,), p) for c in range(k)], axis=1)

    if k == r:
        # Full ideal: the quotient is rank zero and only the fiber
        # connection carries content.
        return NumericCouplingData(
            None, ideal.fiber, gamma_only,
            lambda a, i, p: np.zeros(k),
        )

    comp_secs = []
    for a in range(k, r):
        comps = [fold(neg(l_ad[c][a])) for c in range(k)] + [ZERO] * (r - k)
        comps[a] = ONE
        comp_secs.append(_Section(A.bundle, comps))
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
            w = _bracket(A, comp_secs[a], comp_secs[b])
            structure[a][b] = [w.components[k + c] for c in range(rB)]
    B = LieAlgebroid(Bundle(A.chart, rB, "B"), anchor, structure)

    def gamma_fn(i, p):
        return np.stack([form.op_value(c, (i,), p) for c in range(k)], axis=1)

    def u_fn(a, i, p):
        vec = -form.op_value(k + a, (i,), p)
        for c in range(k):
            lval = evaluate(l_ad[c][k + a], p)
            if lval != 0.0:
                vec += lval * form.op_value(c, (i,), p)
        for c in range(k):
            vec[c] += evaluate(dl[c][k + a][i], p)
        return vec

    return NumericCouplingData(B, ideal.fiber, gamma_fn, u_fn)

"""Command-line verification surface.

Every checker in the library is reachable from a subcommand; reports
are deterministic for a fixed (model, seed, samples) triple and are
emitted either as a human table or as a single JSON document.

Exit codes: 0 all checks passed, 1 at least one check failed,
2 usage/unknown subcommand, 3 model errors.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .algebroid import (
    ConstructionRefused,
    canonical_representation,
    cartan_build_connection,
    check_axioms,
    check_A_invariant,
)
from .expr import EvalError, evaluate
from .factory import ExampleSpec, make_example, transitive_im_connection
from .imforms import (
    CenterDegeneracyError,
    FLATNESS_ORDER,
    build_semidirect,
    chain_map,
    check_im_form,
    check_structure_equations,
    classify_flatness,
    coupling_to_im,
    curvature_im,
    d_im,
    extract_coupling,
    kernel_flat_two_form,
)
from .groupoid import (
    EquivarianceError,
    check_groupoid_properties,
    connection_from_splitting,
    covariant_exterior_D,
    differentiate_to_im,
    numeric_extract_coupling,
)
from .modelio import ModelError, load_model
from .rankone import check_rank_one, extract_rank_one, verify_witness
from .sampling import Report, SamplePlan

__all__ = ["run", "main", "OPERATION_COVERAGE", "SUBCOMMANDS"]

SUBCOMMANDS = (
    "verify-algebroid",
    "verify-ideal",
    "verify-im",
    "coupling",
    "check-structure",
    "build-semidirect",
    "curvature",
    "classify",
    "rank-one",
    "groupoid-verify",
    "lie-functor",
    "example",
)

# Which spec-level operations each subcommand exercises (directly or as
# a required internal step).  The coverage test walks this table.
OPERATION_COVERAGE = {
    "verify-algebroid": ["parse", "differentiate", "evaluate", "bracket", "check_axioms", "load_model", "run"],
    "verify-ideal": ["check_axioms", "canonical_representation"],
    "verify-im": ["check_im_form", "lie_derivative_form"],
    "coupling": ["extract_coupling", "coupling_to_im"],
    "check-structure": ["check_structure_equations", "covariant_derivative", "exterior_covariant_derivative", "fiber_bracket_wedge"],
    "build-semidirect": ["build_semidirect"],
    "curvature": ["curvature_im", "curvature_tensor", "d_im", "chain_map"],
    "classify": ["classify_flatness"],
    "rank-one": ["extract_rank_one", "check_rank_one", "verify_witness"],
    "groupoid-verify": ["connection_from_splitting", "simplicial_delta", "covariant_exterior_D", "check_groupoid_properties"],
    "lie-functor": ["differentiate_to_im"],
    "example": ["make_example", "transitive_im_connection", "cartan_build_connection", "basic_curvature", "check_A_invariant"],
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="algebroids",
        description="Verification checks for algebroid connection data.",
    )
    sub = p.add_subparsers(dest="command")
    sub.required = True

    def common(sp):
        sp.add_argument("--model", help="model JSON file")
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--samples", type=int, default=200)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--json", action="store_true", dest="as_json")

    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        common(sp)
        if name == "coupling":
            sp.add_argument("--roundtrip", action="store_true")
        if name == "check-structure":
            sp.add_argument("--kernel-flat", action="store_true", dest="kernel_flat")
        if name == "rank-one":
            sp.add_argument("--witness", default=None, metavar="KIND")
        if name == "example":
            sp.add_argument("name", help="example family name")
    return p


def _emit(report: Report, as_json: bool, started: float) -> int:
    if as_json:
        sys.stdout.write(report.to_json())
    else:
        print(report.table())
        print(f"wall time: {time.monotonic() - started:.2f}s")
    return 0 if report.passed else 1


def _require_model(args):
    if not args.model:
        raise ModelError("this subcommand needs --model <path>")
    return load_model(args.model)


def _cmd_verify_algebroid(args, plan, tol):
    model = _require_model(args)
    A = model.algebroid()
    rep = check_axioms(A, None, plan, tol=tol or 1e-8)
    rep.command = "verify-algebroid"
    return rep


def _cmd_verify_ideal(args, plan, tol):
    model = _require_model(args)
    A = model.algebroid()
    ideal = model.ideal(verify=False)
    rep = check_axioms(A, ideal, plan, tol=tol or 1e-8)
    rep.command = "verify-ideal"
    # The canonical representation drives the downstream checkers; its
    # flatness is part of the ideal being well-formed.
    if rep.passed:
        arep = canonical_representation(A, ideal)
        rep.add("canonical_representation_flat",
                arep.flatness_residual(plan.fork("rep")), tol or 1e-8)
    return rep


def _cmd_verify_im(args, plan, tol):
    model = _require_model(args)
    A = model.algebroid()
    ideal = model.ideal(verify=False)
    form = model.im_form()
    arep = canonical_representation(A, ideal)
    rep = check_im_form(form, arep, plan, tol=tol or 1e-8)
    rep.command = "verify-im"
    return rep


def _cmd_coupling(args, plan, tol):
    model = _require_model(args)
    cd = model.coupling()
    tol = tol or 1e-10
    rep = Report(command="coupling", seed=plan.seed, samples=plan.samples)
    rep.add("U_anchor_skew", cd.skew_residual(plan.fork("skew")), 1e-9)
    if args.roundtrip:
        form = coupling_to_im(cd, plan=plan.fork("c2i"), check=False)
        cd2 = extract_coupling(
            form.algebroid, form.ideal, form, plan.fork("ext"), check=False
        )
        worst_g = worst_u = worst_b = 0.0
        n = cd.base.chart.dim
        for p in plan.points(cd.base.chart, 30):
            for i in range(n):
                worst_g = max(
                    worst_g,
                    float(np.max(np.abs(cd.gamma(i, p) - cd2.gamma(i, p)))),
                )
                for a in range(cd.base.rank):
                    worst_u = max(
                        worst_u,
                        float(np.max(np.abs(cd.u(a, i, p) - cd2.u(a, i, p)))),
                    )
            for a in range(cd.base.rank):
                for b in range(cd.base.rank):
                    for c in range(cd.base.rank):
                        worst_b = max(
                            worst_b,
                            abs(
                                evaluate(cd.base.structure[a][b][c], p)
                                - evaluate(cd2.base.structure[a][b][c], p)
                            ),
                        )
        rep.add("roundtrip_fiber_connection", worst_g, tol)
        rep.add("roundtrip_mixed_tensor", worst_u, tol)
        rep.add("roundtrip_base_structure", worst_b, tol)
        # Reverse direction: the rebuilt form agrees with the form the
        # second coupling generates.
        form2 = coupling_to_im(cd2, plan=plan.fork("c2i2"), check=False)
        worst_f = 0.0
        for p in plan.points(cd.base.chart, 15):
            for a in range(form.algebroid.rank):
                for i in range(n):
                    worst_f = max(
                        worst_f,
                        float(
                            np.max(
                                np.abs(
                                    form.op_value(a, (i,), p)
                                    - form2.op_value(a, (i,), p)
                                )
                            )
                        ),
                    )
        rep.add("roundtrip_connection_form", worst_f, tol)
    return rep


def _cmd_check_structure(args, plan, tol):
    model = _require_model(args)
    cd = model.coupling()
    variant = "S1'S3'" if args.kernel_flat else "S1S3"
    rep = check_structure_equations(cd, variant=variant, plan=plan, tol=tol or 1e-8)
    return rep


def _cmd_build_semidirect(args, plan, tol):
    model = _require_model(args)
    cd = model.coupling()
    A = build_semidirect(cd)
    from .algebroid import IdealBundle

    ideal = IdealBundle(A, cd.k, verify=False)
    rep = check_axioms(A, ideal, plan, tol=tol or 1e-8)
    rep.command = "build-semidirect"
    rep.extra["rank"] = A.rank
    return rep


def _cmd_curvature(args, plan, tol):
    model = _require_model(args)
    cd = model.coupling()
    tol = tol or 1e-8
    curv = curvature_im(cd, plan.fork("curv"), check=False)
    arep = canonical_representation(curv.algebroid, curv.ideal)
    rep = check_im_form(curv, arep, plan, tol=tol)
    rep.command = "curvature"
    worst = 0.0
    n = cd.base.chart.dim
    for p in plan.points(cd.base.chart, 25):
        for a in range(curv.algebroid.rank):
            for i in range(n):
                for j in range(i + 1, n):
                    worst = max(
                        worst, float(np.max(np.abs(curv.op_value(a, (i, j), p))))
                    )
                worst = max(
                    worst, float(np.max(np.abs(curv.sym_value(a, (i,), p))))
                )
    rep.extra["curvature_max_value"] = worst
    rep.extra["curvature_vanishes"] = bool(worst < 1e-9)
    return rep


def _cmd_classify(args, plan, tol):
    model = _require_model(args)
    cd = model.coupling()
    classes, inner = classify_flatness(cd, plan, tol=tol or 1e-9)
    rep = Report(command="classify", seed=plan.seed, samples=plan.samples)
    rep.extra["flatness"] = [c for c in FLATNESS_ORDER if c in classes]
    rep.extra["residuals"] = {
        c.name: c.max_residual for c in inner.checks
    }
    return rep


def _cmd_rank_one(args, plan, tol):
    model = _require_model(args)
    cd = model.coupling()
    try:
        data = extract_rank_one(cd)
    except ValueError as e:
        raise ModelError(str(e)) from e
    tol = tol or 1e-8
    if args.witness:
        witness = model.witness() if model.has("rank_one_witness") else {"kind": args.witness}
        kind = args.witness
        if witness.get("kind") not in (None, kind):
            kind = witness["kind"]
        witness.pop("kind", None)
        try:
            rep = verify_witness(kind, data, witness, plan, tol=tol)
        except ValueError as e:
            raise ModelError(str(e)) from e
    else:
        rep = check_rank_one(data, plan, tol=tol)
    return rep


def _cmd_groupoid_verify(args, plan, tol):
    model = _require_model(args)
    gpd = model.groupoid()
    rep = gpd.verify(plan.fork("structure"))
    rep.command = "groupoid-verify"
    alpha = connection_from_splitting(gpd, plan=plan.fork("conn"))
    conn = gpd.induced_connection()
    Om = covariant_exterior_D(gpd, alpha, conn)
    props = check_groupoid_properties(
        gpd, alpha, Om, conn, plan.fork("props"), tol=tol or 1e-4
    )
    rep.merge(props)
    return rep


def _cmd_lie_functor(args, plan, tol):
    model = _require_model(args)
    gpd = model.groupoid()
    tol = tol or 1e-6
    alpha = connection_from_splitting(gpd, plan=plan.fork("conn"))
    nform = differentiate_to_im(gpd, alpha, plan.fork("diff"))
    A, ideal, P = gpd.action_algebroid()
    arep = canonical_representation(A, ideal)
    rep = check_im_form(nform, arep, plan.fork("im"), tol=tol)
    rep.command = "lie-functor"
    ncd = numeric_extract_coupling(gpd, nform)
    rep.merge(
        check_structure_equations(ncd, plan=plan.fork("se"), tol=tol),
        prefix="coupling_",
    )
    return rep


def _cmd_example(args, plan, tol):
    params = {}
    if args.model:
        model = load_model(args.model)
        if model.has("example"):
            spec = model.example_spec()
            if spec.name != args.name:
                raise ModelError(
                    f"model example section is for {spec.name!r}, not {args.name!r}"
                )
            params = dict(spec.params)
    try:
        spec = ExampleSpec(args.name, params)
    except ValueError as e:
        raise ModelError(str(e)) from e
    rep = run_example_suite(spec, plan, tol=tol or 1e-8)
    return rep


def run_example_suite(spec: ExampleSpec, plan: SamplePlan, tol: float = 1e-8) -> Report:
    """Family-appropriate checker suite over a factory output."""
    model = make_example(spec, plan.fork("build"))
    rep = Report(command=f"example:{spec.name}", seed=plan.seed, samples=plan.samples)
    ax = check_axioms(model.algebroid, model.ideal, plan.fork("axioms"), tol=tol)
    rep.merge(ax, prefix="axioms_")
    arep = canonical_representation(model.algebroid, model.ideal)

    if spec.name == "action":
        form = cartan_build_connection(
            model.algebroid, model.ideal, model.splitting, model.connection,
            plan.fork("cartan"), tol=tol,
        )
        rep.merge(check_im_form(form, arep, plan.fork("im"), tol=tol), prefix="im_")
        cd = extract_coupling(model.algebroid, model.ideal, form, plan.fork("ext"), check=False)
        rep.merge(check_structure_equations(cd, plan=plan.fork("se"), tol=tol), prefix="coupling_")
        return rep

    if spec.name == "transitive":
        form = transitive_im_connection(model.algebroid, model.tau, plan.fork("tau"))
        rep.merge(check_im_form(form, arep, plan.fork("im"), tol=tol), prefix="im_")
        cd = extract_coupling(model.algebroid, model.ideal, form, plan.fork("ext"), check=False)
        rep.merge(check_structure_equations(cd, plan=plan.fork("se"), tol=tol), prefix="coupling_")
        return rep

    cd = model.coupling
    if model.im_form is not None:
        rep.merge(
            check_im_form(model.im_form, arep, plan.fork("im"), tol=tol), prefix="im_"
        )
    variant = "S1'S3'" if spec.name == "principal_type_flat" else "S1S3"
    try:
        rep.merge(
            check_structure_equations(cd, variant=variant, plan=plan.fork("se"), tol=tol),
            prefix="structure_",
        )
    except CenterDegeneracyError as e:
        rep.add("center_constant_rank", 1.0, 0.5)
        rep.extra["center_degeneracy"] = str(e)
    classes, _ = classify_flatness(cd, plan.fork("cl"))
    rep.extra["flatness"] = [c for c in FLATNESS_ORDER if c in classes]

    if spec.name == "principal_type_flat":
        # Kernel-flat extras: the degree-2 pair maps onto the base
        # cocycle through the cochain contraction.
        pair = kernel_flat_two_form(cd)
        ev = chain_map(pair)
        worst = 0.0
        B = cd.base
        rng = plan.fork("chain").rng
        for _ in range(4):
            al = B.random_section(rng)
            be = B.random_section(rng)
            vals = ev(al, be)
            for p in plan.points(B.chart, 8):
                lam = np.zeros(cd.k)
                rho_b = np.array([evaluate(x, p) for x in B.rho_of(be)])
                for a in range(B.rank):
                    ca = evaluate(al.components[a], p)
                    for i in range(B.chart.dim):
                        lam += ca * rho_b[i] * cd.u(a, i, p)
                got = np.array([evaluate(x, p) for x in vals])
                worst = max(worst, float(np.max(np.abs(got - lam))))
        rep.add("chain_map_matches_base_cocycle", worst, 1e-9)
    return rep


_DISPATCH = {
    "verify-algebroid": _cmd_verify_algebroid,
    "verify-ideal": _cmd_verify_ideal,
    "verify-im": _cmd_verify_im,
    "coupling": _cmd_coupling,
    "check-structure": _cmd_check_structure,
    "build-semidirect": _cmd_build_semidirect,
    "curvature": _cmd_curvature,
    "classify": _cmd_classify,
    "rank-one": _cmd_rank_one,
    "groupoid-verify": _cmd_groupoid_verify,
    "lie-functor": _cmd_lie_functor,
    "example": _cmd_example,
}


def run(argv=None) -> int:
    started = time.monotonic()
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on usage errors (incl. unknown subcommands).
        return int(e.code) if e.code else 0
    plan = SamplePlan(seed=args.seed, samples=args.samples)
    try:
        rep = _DISPATCH[args.command](args, plan, args.tol)
    except ModelError as e:
        print(f"model error: {e}", file=sys.stderr)
        return 3
    except (ConstructionRefused, EquivarianceError) as e:
        rep = e.report
        rep.extra["refused"] = str(e)
        code = _emit(rep, args.as_json, started)
        return 1 if code == 0 else code
    except CenterDegeneracyError as e:
        print(f"degeneracy: {e}", file=sys.stderr)
        return 1
    except EvalError as e:
        print(f"evaluation error: {e}", file=sys.stderr)
        return 3
    rep.seed = plan.seed
    rep.samples = plan.samples
    return _emit(rep, args.as_json, started)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

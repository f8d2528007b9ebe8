"""Tests for the model constructors: every family's output passes its
checker suite; defective parameters are refused."""

import numpy as np
import pytest

from algebroids.algebroid import (
    ConstructionRefused,
    canonical_representation,
    check_axioms,
)
from algebroids.expr import Chart, ZERO, ONE, coord, evaluate
from algebroids.factory import (
    ExampleSpec,
    ExampleModel,
    make_example,
    so3_basis,
    so3_constants,
    transitive_im_connection,
)
from algebroids.imforms import (
    check_im_form,
    check_structure_equations,
    classify_flatness,
    coupling_to_im,
    extract_coupling,
)
from algebroids.sampling import SamplePlan

PLAN = SamplePlan(seed=42, samples=60)


def test_spec_rejects_unknown_family():
    with pytest.raises(ValueError):
        ExampleSpec("nonsense")


def test_so3_basis_matches_constants():
    eps = so3_constants()
    basis = so3_basis()
    for a in range(3):
        for b in range(3):
            comm = basis[a] @ basis[b] - basis[b] @ basis[a]
            want = sum(eps[a, b, c] * basis[c] for c in range(3))
            assert np.max(np.abs(comm - want)) < 1e-14


def test_product_rank_and_flatness(product_model):
    m = product_model
    assert m.algebroid.rank == 5
    classes, _ = classify_flatness(m.coupling, PLAN.fork("cl"))
    assert classes == {"totally", "leafwise", "kernel"}


@pytest.mark.parametrize(
    "name,params",
    [
        ("product", {"dim": 2, "algebra": "so3"}),
        ("lie_algebra_bundle", {"dim": 2}),
        ("principal_type", {"dim": 2}),
        ("principal_type_flat", {"dim": 2}),
        ("rank_one", {"dim": 2, "U1": [["0", "1"], ["-1", "0"]]}),
    ],
)
def test_families_pass_suites(name, params):
    plan = SamplePlan(seed=42, samples=60)
    m = make_example(ExampleSpec(name, params), plan)
    assert check_axioms(m.algebroid, m.ideal, plan.fork("ax")).passed
    rep = canonical_representation(m.algebroid, m.ideal)
    assert check_im_form(m.im_form, rep, plan.fork("im")).passed
    variant = "S1'S3'" if name == "principal_type_flat" else "S1S3"
    assert check_structure_equations(
        m.coupling, variant=variant, plan=plan.fork("se")
    ).passed


def test_action_radial_suite(radial_model, radial_form):
    plan = SamplePlan(seed=42, samples=60)
    m = radial_model
    assert check_axioms(m.algebroid, m.ideal, plan.fork("ax")).passed
    rep = canonical_representation(m.algebroid, m.ideal)
    assert check_im_form(radial_form, rep, plan.fork("im")).passed
    cd = extract_coupling(m.algebroid, m.ideal, radial_form, plan.fork("ext"), check=False)
    assert check_structure_equations(cd, plan=plan.fork("se")).passed


def test_transitive_family_and_uniqueness():
    plan = SamplePlan(seed=42, samples=60)
    m = make_example(
        ExampleSpec("transitive", {"dim": 2, "fiber": "abelian", "omega": [["1"]]}),
        plan,
    )
    form = transitive_im_connection(m.algebroid, m.tau, plan.fork("tau"))
    rep = canonical_representation(m.algebroid, m.ideal)
    out = check_im_form(form, rep, plan.fork("im"))
    assert out.passed and out.extra["connection_predicate"]
    # Uniqueness of the symbol: rebuilding the form from its own
    # coupling reproduces the frame values.
    cd = extract_coupling(m.algebroid, m.ideal, form, plan.fork("ext"), check=False)
    form2 = coupling_to_im(cd, plan=plan.fork("c2i"), check=False)
    worst = 0.0
    for p in plan.points(m.algebroid.chart, 20):
        for a in range(m.algebroid.rank):
            for i in range(2):
                worst = max(
                    worst,
                    float(
                        np.max(
                            np.abs(
                                form.op_value(a, (i,), p) - form2.op_value(a, (i,), p)
                            )
                        )
                    ),
                )
    assert worst < 1e-9
    # The coupling contracts the twist with the anchor.
    for p in plan.points(m.algebroid.chart, 8):
        assert abs(cd.u(0, 1, p)[0] - 1.0) < 1e-12


def test_transitive_tm_trivial_isotropy():
    # A transitive algebroid with one-dimensional abelian isotropy and
    # no twist: the connection form has vanishing frame values.
    plan = SamplePlan(seed=42, samples=60)
    m = make_example(ExampleSpec("transitive", {"dim": 2, "fiber": "abelian"}), plan)
    form = transitive_im_connection(m.algebroid, m.tau, plan.fork("tau"))
    for fv in form.frame_values:
        assert fv.is_structurally_zero()


def test_transitive_rejects_bad_splitting():
    plan = SamplePlan(seed=42, samples=60)
    m = make_example(ExampleSpec("transitive", {"dim": 2, "fiber": "abelian"}), plan)
    tau = [row[:] for row in m.tau]
    tau[2][0] = ONE  # no longer a right inverse of the anchor
    with pytest.raises(ConstructionRefused):
        transitive_im_connection(m.algebroid, tau, plan.fork("tau"))


def test_principal_type_rejects_wrong_twist():
    plan = SamplePlan(seed=42, samples=60)
    with pytest.raises(ConstructionRefused):
        make_example(
            ExampleSpec(
                "principal_type",
                {"dim": 2, "omega": [["1", "0", "0"]]},  # curvature of theta differs
            ),
            plan,
        )


def test_rank_one_skew_guard():
    with pytest.raises(ValueError):
        make_example(
            ExampleSpec("rank_one", {"dim": 2, "U1": [["x1", "1"], ["-1", "0"]]}),
            SamplePlan(seed=1, samples=30),
        )
    m = make_example(
        ExampleSpec(
            "rank_one",
            {"dim": 2, "U1": [["x1", "1"], ["-1", "0"]], "verify_skew": False},
        ),
        SamplePlan(seed=1, samples=30),
    )
    assert m.coupling.skew_residual(SamplePlan(seed=2, samples=30)) > 1e-3


def test_factory_rejects_unknown_params():
    with pytest.raises(ValueError):
        make_example(ExampleSpec("product", {"bogus": 1}), PLAN)

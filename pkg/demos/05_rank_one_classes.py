#!/usr/bin/env python3
"""Rank-one ideals in a trivialization: the scalar connection form, the
degree-1 and degree-2 cochain representatives, gauge changes, and
witness verification of the flatness characterizations."""

from algebroids.expr import coord, exp as eexp
from algebroids.factory import ExampleSpec, make_example
from algebroids.rankone import (
    check_rank_one,
    extract_rank_one,
    gauge_transform,
    verify_witness,
)
from algebroids.sampling import SamplePlan

plan = SamplePlan(seed=42, samples=100)

m = make_example(
    ExampleSpec("rank_one", {"dim": 2, "theta": ["0", "0"], "U1": [["0", "1"], ["-1", "0"]]}),
    plan.fork("build"),
)
data = extract_rank_one(m.coupling)
print("trivialized structure equations and tangentiality:")
print(check_rank_one(data, plan.fork("r1")).table())

print()
print("gauge change by exp(x1): the connection form shifts, verdicts do not.")
gauged = gauge_transform(data, eexp(coord(0)))
print(check_rank_one(gauged, plan.fork("r1g")).table())

print()
print("witness verification: the area form realizes the principal-type class...")
out = verify_witness(
    "principal_type",
    data,
    {"theta": [coord(0) * 0, coord(0) * 0], "Omega": [coord(0) ** 0], "Z": [coord(0) * 0] * 2},
    plan.fork("w1"),
)
print(out.table())

print()
print("...but the same model is not totally flat for the zero primitive:")
bad = verify_witness(
    "totally_flat",
    data,
    {"theta": [coord(0) * 0, coord(0) * 0], "Z": [coord(0) * 0] * 2},
    plan.fork("w2"),
)
print(bad.table())

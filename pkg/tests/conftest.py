"""Shared fixtures (the expensive factory models are built once per
session) and the end-of-run acceptance summary."""

import pytest

from algebroids.algebroid import cartan_build_connection
from algebroids.factory import ExampleSpec, make_example, so3_radial_action
from algebroids.sampling import SamplePlan

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def product_model():
    return make_example(
        ExampleSpec("product", {"dim": 2, "algebra": "so3"}),
        SamplePlan(seed=42, samples=60),
    )


@pytest.fixture(scope="session")
def radial_model():
    return so3_radial_action(SamplePlan(seed=42, samples=60))


@pytest.fixture(scope="session")
def radial_form(radial_model):
    m = radial_model
    return cartan_build_connection(
        m.algebroid, m.ideal, m.splitting, m.connection,
        SamplePlan(seed=42, samples=60),
    )


@pytest.fixture(scope="session")
def flat67_model():
    return make_example(
        ExampleSpec("principal_type_flat", {"dim": 2, "omega": [["1"]]}),
        SamplePlan(seed=42, samples=60),
    )

"""Seeded sampling plans and check reports.

Every checker in the package draws its random points, sections and
fiber vectors from a SamplePlan so that a (model, seed, samples)
triple determines the verdict byte-for-byte.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .expr import Chart, Expr, add, const, coord, mul, _sample_point

__all__ = ["SamplePlan", "Check", "Report", "random_polynomial"]


class SamplePlan:
    """A seeded source of sample points and random tensors.

    ``samples`` is the nominal evaluation budget; checkers split it
    between random section draws and points per draw.
    """

    def __init__(self, seed: int = 42, samples: int = 200):
        if samples < 1:
            raise ValueError("samples must be >= 1")
        self.seed = int(seed)
        self.samples = int(samples)
        self.rng = np.random.default_rng(self.seed)

    def fork(self, tag: str) -> "SamplePlan":
        """Independent sub-plan, deterministic in (seed, tag) across
        processes (the tag digest must not depend on the interpreter's
        salted string hashing)."""
        sub = SamplePlan.__new__(SamplePlan)
        sub.seed = self.seed
        sub.samples = self.samples
        sub.rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, zlib.crc32(tag.encode("utf-8"))])
        )
        return sub

    def points(self, chart: Chart, n: int | None = None) -> list[np.ndarray]:
        n = self.samples if n is None else n
        return [_sample_point(chart, self.rng) for _ in range(n)]

    def point(self, chart: Chart) -> np.ndarray:
        return _sample_point(chart, self.rng)

    def vectors(self, dim: int, n: int) -> list[np.ndarray]:
        return [self.rng.uniform(-1.0, 1.0, size=dim) for _ in range(n)]

    def split_budget(self, per_draw: int = 20) -> tuple[int, int]:
        """Split the budget into (number of random draws, points per draw)."""
        draws = max(1, self.samples // per_draw)
        pts = max(1, min(per_draw, self.samples))
        return draws, pts


def random_polynomial(chart: Chart, rng: np.random.Generator, degree: int = 2) -> Expr:
    """Random polynomial of degree <= 2 with coefficients in [-1, 1].

    The shape (constant + linear + a few quadratics) is the stock
    random section used by the property checkers.
    """
    terms = [const(float(rng.uniform(-1, 1)))]
    for i in range(chart.dim):
        terms.append(mul(const(float(rng.uniform(-1, 1))), coord(i)))
    if degree >= 2:
        for i in range(chart.dim):
            for j in range(i, chart.dim):
                if rng.uniform() < 0.5:
                    terms.append(
                        mul(const(float(rng.uniform(-1, 1))), coord(i), coord(j))
                    )
    e = add(*terms)
    from .expr import fold

    return fold(e)


@dataclass
class Check:
    """One named residual check."""

    name: str
    max_residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_residual < self.tolerance)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "max_residual": float(self.max_residual),
            "tolerance": float(self.tolerance),
            "pass": self.passed,
        }


@dataclass
class Report:
    """Machine-readable verification report.

    Deterministic for a fixed (model, seed, samples); wall time is
    deliberately not part of the JSON payload so identical runs emit
    byte-identical documents.
    """

    command: str
    seed: int
    samples: int
    checks: list[Check] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, name: str, max_residual: float, tolerance: float) -> Check:
        c = Check(name, float(max_residual), float(tolerance))
        self.checks.append(c)
        return c

    def merge(self, other: "Report", prefix: str = "") -> None:
        for c in other.checks:
            self.checks.append(
                Check(prefix + c.name, c.max_residual, c.tolerance)
            )

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        d = {
            "report_version": 1,
            "command": self.command,
            "seed": self.seed,
            "samples": self.samples,
            "checks": [c.as_dict() for c in self.checks],
            "pass": self.passed,
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [f"{'check':<44} {'max residual':>14} {'tolerance':>11} verdict"]
        for c in self.checks:
            lines.append(
                f"{c.name:<44} {c.max_residual:>14.3e} {c.tolerance:>11.1e} "
                + ("pass" if c.passed else "FAIL")
            )
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)

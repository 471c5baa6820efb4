"""Built-in problems used by the CLI and the test-suite."""

from __future__ import annotations

from .exprs import ProblemSpec, problem_from_dict

EXAMPLE1 = {
    "name": "example1",
    "parameters": ["p"],
    "variables": ["x1", "x2"],
    "H": ["x1 - p", "-x2 + x2^2"],
    "g": ["0.5*x1 - 0.5*x1^2 - x2", "0.5*x1 - 0.5*x1^2 + x2"],
    "cone": {"type": "orthant_nonpositive", "dim": 2},
    "reference": {"p": [0.0], "x": [0.0, 0.0]},
}

EXAMPLE2 = {
    "name": "example2",
    "parameters": ["p"],
    "variables": ["x1", "x2"],
    "H": ["x1 - p", "-x2"],
    "g": ["2*x2", "-x1"],
    "cone": {"type": "lorentz_product", "blocks": [2], "axis": "last"},
    "reference": {"p": [0.0], "x": [0.0, 0.0]},
}

# g(x) = x2 + x1² with D = ℝ₋ and x* = (0, 1): the multiplier is 1 and the
# curvature term ∇²⟨λ̄, g⟩ = diag(2, 0) is active.
QUADRATIC = {
    "name": "quadratic",
    "parameters": ["p"],
    "variables": ["x1", "x2"],
    "H": ["x1 - p", "x2 - 1"],
    "g": ["x2 + x1^2"],
    "cone": {"type": "orthant_nonpositive", "dim": 1},
    "reference": {"p": [0.0], "x": [0.0, 0.0]},
}

FIXTURES = {"example1": EXAMPLE1, "example2": EXAMPLE2, "quadratic": QUADRATIC}


def fixture(name: str) -> ProblemSpec:
    """Problem spec of a built-in fixture by name."""
    try:
        return problem_from_dict(FIXTURES[name])
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None

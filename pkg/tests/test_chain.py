import itertools

import numpy as np
import pytest

from aubin.chain import (
    InfeasibleReference,
    NondegeneracyError,
    check_nondegeneracy,
    gamma_dirlim_coderiv,
    gamma_graph_tangent,
    gamma_regular_coderiv,
    prepare_reference,
    recover_multiplier,
)
from aubin.cones import LorentzProduct, orthant_graph_tangent
from aubin.exprs import assemble_reference
from aubin.lorentz import LorentzSpec, project_lorentz, project_polar
from conftest import make_problem


def test_example_multipliers(ex1, ex2, quad):
    assert np.array_equal(ex1.multiplier, [0.0, 0.0])
    assert np.array_equal(ex2.multiplier, [0.0, 0.0])
    assert np.allclose(quad.multiplier, [1.0])


def test_orthant_multiplier_with_active_rows():
    spec = make_problem(["x1 - 1", "x2 - 2"], ["x1", "x2"], 2)
    assert np.allclose(recover_multiplier(assemble_reference(spec)), [1.0, 2.0])


def test_orthant_multiplier_outside_polar():
    spec = make_problem(["x1 + 1", "x2 - 2"], ["x1", "x2"], 2)
    with pytest.raises(InfeasibleReference):
        recover_multiplier(assemble_reference(spec))


def test_multiplier_sign():
    spec = make_problem(["x1 - 1"], ["x1"], 1)
    assert np.allclose(recover_multiplier(assemble_reference(spec)), [1.0])


def test_infeasible_reference():
    with pytest.raises(InfeasibleReference):
        recover_multiplier(assemble_reference(make_problem(["x1 + 1"], ["x1"], 1)))


def test_inactive_constraint_needs_zero_normal():
    with pytest.raises(InfeasibleReference):
        recover_multiplier(assemble_reference(make_problem(["x1 - 1"], ["x1 - 1"], 1)))


def test_lorentz_multiplier_at_boundary():
    cone = {"type": "lorentz_product", "blocks": [2], "axis": "last"}
    # the normal cone at (1, 1) is the ray through (1, -1)
    spec = make_problem(["x1 - 2", "x2"], ["x1", "x2"], cone, x=[1.0, 1.0])
    assert np.allclose(recover_multiplier(assemble_reference(spec)), [1.0, -1.0])


@pytest.mark.parametrize(
    "g, ok",
    [(["x1", "x2"], True), (["x1", "x1"], False), (["x1 + x2"], True), (["x1 - 1"], True)],
)
def test_nondegeneracy_orthant(g, ok):
    spec = make_problem(["x1", "x2"], g, len(g))
    assert check_nondegeneracy(assemble_reference(spec)).ok is ok


def test_nondegeneracy_examples(ex1, ex2, quad):
    assert check_nondegeneracy(ex1).ok
    assert check_nondegeneracy(ex2).ok
    res = check_nondegeneracy(quad)
    assert res.ok and res.reduction.kinds == ("orthant",)


def test_degenerate_multiplier_is_refused():
    spec = make_problem(["x1 - 1", "x2"], ["x1", "x1"], 2)
    with pytest.raises(NondegeneracyError):
        recover_multiplier(assemble_reference(spec))


@pytest.mark.parametrize("q", [-1.0, -0.3])
def test_example1_interior_tangent(ex1, q):
    # with λ̄ = 0, u* = ∇gᵀξ, so the ξ = 0 branch pairs u = (q, 0) with u* = 0
    res = gamma_graph_tangent(ex1, [q, 0.0], [0.0, 0.0])
    assert res.tangent and res.unique
    assert np.allclose(res.xi, [0.0, 0.0])


def test_example1_nonzero_u_star_for_interior_u_is_not_tangent(ex1):
    assert not gamma_graph_tangent(ex1, [-1.0, 0.0], [-1.0, 0.0]).tangent


def test_range_test_rejects():
    spec = make_problem(["x1", "x2"], ["x1"], 1)
    ref = prepare_reference(spec)
    assert not gamma_graph_tangent(ref, [0.0, 0.0], [0.0, 1.0]).tangent


@pytest.mark.parametrize("s", [-2.0, 0.0, 0.5, 3.0])
def test_quadratic_tangent(quad, s):
    res = gamma_graph_tangent(quad, [1.0, 0.0], [2.0, s])
    assert res.tangent and res.unique
    assert np.allclose(res.xi, [s], atol=1e-12)


def test_quadratic_requires_critical_direction(quad):
    assert not gamma_graph_tangent(quad, [0.0, 1.0], [0.0, 0.0]).tangent


@pytest.mark.parametrize("t", [0.1, 1.0, 7.5])
def test_tangent_homogeneity(ex1, quad, t, rng):
    for ref in (ex1, quad):
        for _ in range(30):
            u, u_star = rng.normal(size=2), rng.normal(size=2)
            base = gamma_graph_tangent(ref, u, u_star)
            scaled = gamma_graph_tangent(ref, t * u, t * u_star)
            assert base.tangent == scaled.tangent
            if base.tangent:
                assert np.allclose(scaled.xi, t * base.xi, atol=1e-12 * max(1, t))


def _graph_direction(ref, z):
    """(v, ξ) tangent to Gr N_D at (0, 0) from the Moreau split of z."""
    if isinstance(ref.cone, LorentzProduct):
        spec = LorentzSpec(ref.s, ref.cone.axis)
        return project_lorentz(spec, z), project_polar(spec, z)
    return np.minimum(z, 0.0), np.maximum(z, 0.0)


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_xi_unique_on_sampled_tangents(name, request, rng):
    ref = request.getfixturevalue(name)
    inv = np.linalg.inv(ref.jac_g)
    for z in rng.normal(size=(300, ref.s)):
        v, xi = _graph_direction(ref, z)
        u = inv @ v
        res = gamma_graph_tangent(ref, u, ref.jac_g.T @ xi)
        assert res.tangent and res.unique
        assert np.allclose(res.xi, xi, atol=1e-12)


def test_xi_unique_on_quadratic(quad, rng):
    for a, s in rng.normal(size=(100, 2)):
        res = gamma_graph_tangent(quad, [a, 0.0], [2 * a, s])
        assert res.tangent and res.unique and np.isclose(res.xi[0], s)


@pytest.mark.parametrize("s", [1, 2, 3, 4])
def test_linear_orthant_matches_face_patterns(s, rng):
    # λ̄ = 0 and g = A x: tangent iff ∃ξ with u* = Aᵀξ and (A u, ξ) tangent to Gr N_{ℝˢ₋} at 0
    n = s
    a = rng.integers(-2, 3, (s, n)).astype(float) + 3 * np.eye(s)
    g = [" + ".join(f"{a[i, j]:g}*x{j + 1}" for j in range(n)) for i in range(s)]
    spec = make_problem([f"x{j + 1}" for j in range(n)], g, s)
    ref = prepare_reference(spec)
    ainv_t = np.linalg.inv(a.T)
    for signs in itertools.product((-1, 0, 1), repeat=s):
        for xi_signs in itertools.product((-1, 0, 1), repeat=s):
            v = np.array(signs, float)
            xi = np.array(xi_signs, float)
            u = np.linalg.solve(a, v)
            u_star = a.T @ xi
            expect = orthant_graph_tangent(np.zeros(s), np.zeros(s), v, xi)
            res = gamma_graph_tangent(ref, u, u_star)
            assert res.tangent == expect
            if expect:
                assert np.allclose(res.xi, ainv_t @ u_star)


def test_example1_branch_coderivative_is_zero(ex1, rng):
    img = gamma_dirlim_coderiv(ex1, [-1.0, 0.0], [0.0, 0.0], [1.0, 2.0])
    assert img.exact and img.contains([0.0, 0.0])
    for _ in range(20):
        w_star = rng.normal(size=2)
        assert not img.contains(w_star)
    assert not gamma_dirlim_coderiv(ex1, [-1.0, 0.0], [0.0, 0.0], [1.0, -1.0]).is_empty()


def test_union_case_at_zero_direction(rng):
    spec = make_problem(["x1", "x2"], ["x1", "x2"], 2)
    ref = prepare_reference(spec)
    for _ in range(40):
        w = rng.integers(-1, 2, 2).astype(float)
        w_star = rng.integers(-1, 2, 2).astype(float)
        expect = all(_lim_orthant(wi, yi) for wi, yi in zip(w, w_star))
        assert gamma_dirlim_coderiv(ref, [0, 0], [0, 0], w).contains(w_star) == expect


def _lim_orthant(w, y):
    # limiting coderivative of N_{ℝ₋} at (0, 0): {w = 0} ∪ {y = 0} ∪ {w ≥ 0, y ≥ 0}
    return w == 0 or y == 0 or (w > 0 and y > 0)


def test_non_tangent_direction_gives_empty_image(ex1):
    img = gamma_dirlim_coderiv(ex1, [-1.0, 0.0], [-1.0, 0.0], [1.0, 0.0])
    assert img.is_empty() and not img.contains([0.0, 0.0])


def test_quadratic_hessian_shift(quad, rng):
    img = gamma_dirlim_coderiv(quad, [1.0, 0.0], [2.0, 0.0], [1.0, 0.0])
    assert np.allclose(img.shift, [2.0, 0.0])
    for t in rng.normal(size=10):
        assert img.contains([2.0, t])
    assert not img.contains([1.0, 0.0])
    reg = gamma_regular_coderiv(quad, [3.0, 0.0])
    assert np.allclose(reg.shift, [6.0, 0.0])
    assert reg.contains([6.0, 4.0]) and not reg.contains([5.0, 4.0])
    # λ̄ > 0 pins ∇g w to zero
    assert gamma_regular_coderiv(quad, [3.0, -1.0]).is_empty()


def test_regular_inside_limiting(ex1, rng):
    for _ in range(40):
        w = rng.integers(-2, 3, 2).astype(float)
        w_star = rng.integers(-2, 3, 2).astype(float)
        if gamma_regular_coderiv(ex1, w).contains(w_star):
            assert gamma_dirlim_coderiv(ex1, [0, 0], [0, 0], w).contains(w_star)


def test_regular_linear_composition():
    ref = prepare_reference(make_problem(["x1", "x2"], ["x1", "x2"], 2))
    for w in itertools.product((-1.0, 0.0, 1.0), repeat=2):
        for y in itertools.product((-1.0, 0.0, 1.0), repeat=2):
            expect = all(_reg_orthant(wi, yi) for wi, yi in zip(w, y))
            assert gamma_regular_coderiv(ref, np.array(w)).contains(np.array(y)) == expect


def _reg_orthant(w, y):
    # regular normals to Gr N_{ℝ₋} at (0, 0) are ℝ₊ × ℝ₋, and y ∈ D̂*N(w) iff (y, -w) is one
    return w >= 0 and y >= 0

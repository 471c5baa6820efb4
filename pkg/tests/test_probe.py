import numpy as np
import pytest

from aubin.chain import prepare_reference
from aubin.fixtures import fixture
from aubin.probe import (
    GraphPoint,
    ProbeOptions,
    ProblemFunctions,
    brute_force_tangent,
    distance_to_tangent_set,
    graph_sampler,
    in_normal_graph,
    sample_aubin_modulus,
    solve_ge_grid,
)
from conftest import make_problem

BOX = [(-0.5, 0.5), (-0.5, 0.5)]


def _xs(roots):
    return np.array([r.x for r in roots])


def _near(xs, point, tol):
    return np.min(np.linalg.norm(xs - point, axis=1)) <= tol


def test_reference_point_is_a_root():
    roots = solve_ge_grid(fixture("example1"), [0.0], BOX)
    assert _near(_xs(roots), [0.0, 0.0], 1e-9)


@pytest.mark.parametrize("p", [-0.1, -0.01])
def test_roots_follow_the_first_order_prediction(p):
    xs = _xs(solve_ge_grid(fixture("example1"), [p], BOX))
    for u in ([1.0, 0.0], [4 / 3, 2 / 3], [4 / 3, -2 / 3]):
        # the prediction is p·u up to o(|p|)
        assert _near(xs, p * np.array(u), 8 * p * p)


def test_unconstrained_root_is_the_parameter():
    spec = make_problem(["x1 - p", "x2 - 2*p"], ["x1 - 5"], 1)
    roots = solve_ge_grid(spec, [0.3], [(-1, 1), (-1, 1)])
    assert len(roots) == 1
    assert np.allclose(roots[0].x, [0.3, 0.6], atol=1e-12)


@pytest.mark.parametrize("name, p", [("example1", -0.05), ("example1", 0.05), ("example2", -0.05), ("quadratic", 0.1)])
def test_roots_solve_the_system(name, p):
    spec = fixture(name)
    fns = ProblemFunctions(spec)
    roots = solve_ge_grid(spec, [p], BOX, fns=fns)
    assert roots
    for r in roots:
        x, lam = np.array(r.x), np.array(r.lam)
        assert r.residual <= 1e-9
        assert np.linalg.norm(fns.H([p], x) + fns.jac_g(x).T @ lam) <= 1e-9
        assert in_normal_graph(fns, spec.cone, x, fns.jac_g(x).T @ lam, tol=1e-8)


def test_example2_roots():
    xs = _xs(solve_ge_grid(fixture("example2"), [-0.01], BOX))
    for u in ([1.0, 0.0], [4 / 3, -2 / 3], [4 / 3, 2 / 3]):
        assert _near(xs, -0.01 * np.array(u), 1e-6)
    assert _near(_xs(solve_ge_grid(fixture("example2"), [0.01], BOX)), [0.0, 0.0], 1e-9)


def test_options_are_validated():
    for bad in (dict(radius=0), dict(samples=0), dict(neighborhood=-1), dict(resolution=0)):
        with pytest.raises(ValueError):
            ProbeOptions(**bad)


def test_constant_map_has_zero_modulus():
    spec = make_problem(["x1", "x2"], ["x1 - 1"], 1)
    est = sample_aubin_modulus(spec, ProbeOptions(samples=20, pool=6, resolution=3))
    assert est.kappa_hat == 0.0 and not est.anomalies


def test_example2_modulus_is_finite():
    est = sample_aubin_modulus(fixture("example2"), ProbeOptions(samples=30, pool=8, seed=3))
    assert np.isfinite(est.kappa_hat) and est.kappa_hat > 0
    assert not est.anomalies
    assert len(est.pairs) == 30


def test_modulus_is_deterministic():
    opts = ProbeOptions(samples=15, pool=5, seed=7, resolution=3)
    a = sample_aubin_modulus(fixture("quadratic"), opts)
    b = sample_aubin_modulus(fixture("quadratic"), opts)
    assert a.to_dict() == b.to_dict()


def test_empty_section_is_an_anomaly():
    # S(p) is empty for p > 0
    spec = make_problem(["x1^2 + p"], ["x1 - 1"], 1, variables=["x1"])
    est = sample_aubin_modulus(spec, ProbeOptions(samples=10, pool=6, resolution=3))
    assert est.anomalies


def test_free_space_tangent_has_zero_dual_part():
    spec = make_problem(["x1", "x2"], ["x1 - 5"], 1)
    ref = prepare_reference(spec)
    rows = brute_force_tangent(graph_sampler(spec, ref), GraphPoint(ref.x, ref.x_star), [1e-2], 50)
    assert rows.shape == (50, 4)
    assert np.allclose(rows[:, 2:], 0.0)
    assert np.linalg.matrix_rank(rows[:, :2]) == 2


@pytest.mark.parametrize("name", ["example1", "example2", "quadratic"])
def test_sampled_quotients_are_tangent_for_small_t(name):
    spec = fixture(name)
    ref = prepare_reference(spec)
    base = GraphPoint(ref.x, ref.x_star)
    rows = brute_force_tangent(graph_sampler(spec, ref), base, [1e-6, 1e-7], 100, seed=1)
    assert len(rows) == 200
    n = ref.n
    assert max(distance_to_tangent_set(ref, r[:n], r[n:]) for r in rows) <= 1e-5


def test_sampler_stays_on_the_graph():
    spec = fixture("example1")
    fns = ProblemFunctions(spec)
    sample = graph_sampler(spec)
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(100):
        pt = sample(rng, 1e-2)
        if pt is not None:
            hits += 1
            assert in_normal_graph(fns, spec.cone, pt.x, pt.x_star, tol=1e-8)
    assert hits > 50


def test_distance_is_zero_on_the_tangent_set(ex1):
    assert distance_to_tangent_set(ex1, [-1.0, 0.0], [0.0, 0.0]) <= 1e-12
    assert distance_to_tangent_set(ex1, [-1.0, 0.0], [1.0, 0.0]) > 0.1

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aubin.lorentz import (
    CaseTag,
    LorentzBlock,
    LorentzSpec,
    UnsupportedConeCase,
    c_matrix,
    classify_graph_direction,
    coderiv_family_at_apex,
    convert_projection_normal,
    family_membership,
    lorentz_dir_derivative,
    project_lorentz,
    project_polar,
)
from aubin.relations import NORMAL, PROJECTION

LAST2 = LorentzSpec(2, "last")


def _in_cone(spec, z, tol=1e-12):
    zi = spec.inner(z)
    return zi[-1] >= np.linalg.norm(zi[:-1]) - tol


@pytest.mark.parametrize("axis", ["first", "last"])
def test_projection_fixed_points(axis):
    spec = LorentzSpec(3, axis)
    apex_dir = spec.outer(np.array([0.0, 0.0, 1.0]))
    assert np.allclose(project_lorentz(spec, apex_dir), apex_dir)
    assert np.allclose(project_lorentz(spec, -apex_dir), 0.0)


def test_projection_matches_grid_search():
    z = np.array([1.0, 0.0])
    grid = np.linspace(-2, 2, 801)
    best = min(
        ((a, b) for a in grid for b in grid if b >= abs(a)),
        key=lambda p: (p[0] - z[0]) ** 2 + (p[1] - z[1]) ** 2,
    )
    p = project_lorentz(LAST2, z)
    assert np.allclose(p, [0.5, 0.5])
    assert np.allclose(p, best, atol=5e-3)


@pytest.mark.parametrize("s", [2, 3, 5])
@pytest.mark.parametrize("axis", ["first", "last"])
def test_moreau_decomposition(s, axis, rng):
    spec = LorentzSpec(s, axis)
    for z in rng.normal(scale=3, size=(2000, s)):
        p, q = project_lorentz(spec, z), project_polar(spec, z)
        assert np.linalg.norm(z - p - q) <= 1e-12 * max(1, np.linalg.norm(z))
        assert abs(p @ q) <= 1e-12 * max(1, z @ z)
        assert _in_cone(spec, p) and _in_cone(spec, -q)


@pytest.mark.parametrize("t", [0.5, 2.0, 10.0])
def test_positive_homogeneity(t, rng):
    spec = LorentzSpec(4, "first")
    for z in rng.normal(size=(200, 4)):
        assert np.allclose(project_lorentz(spec, t * z), t * project_lorentz(spec, z), atol=1e-12 * t)


def test_derivative_at_apex_is_projection(rng):
    spec = LorentzSpec(3, "last")
    for h in rng.normal(size=(50, 3)):
        assert np.allclose(lorentz_dir_derivative(spec, np.zeros(3), h), project_lorentz(spec, h))


def test_derivative_in_interior_is_identity(rng):
    z = np.array([0.1, -0.2, 2.0])
    for h in rng.normal(scale=1e-3, size=(20, 3)):
        assert np.allclose(lorentz_dir_derivative(LorentzSpec(3, "last"), z, h), h)


def _near_nonsmooth(spec, z, margin):
    zi = spec.inner(z)
    r = np.linalg.norm(zi[:-1])
    return abs(zi[-1] - r) < margin or abs(zi[-1] + r) < margin


@pytest.mark.parametrize("s", [2, 3, 5])
def test_derivative_matches_finite_differences(s, rng):
    spec = LorentzSpec(s, "first")
    checked = 0
    while checked < 300:
        z, h = rng.normal(size=s), rng.normal(size=s)
        if _near_nonsmooth(spec, z, 1e-4):
            continue
        t = 1e-6
        fd = (project_lorentz(spec, z + t * h) - project_lorentz(spec, z)) / t
        assert np.allclose(lorentz_dir_derivative(spec, z, h), fd, atol=1e-6 * max(1, np.linalg.norm(h)))
        checked += 1


def test_derivative_on_boundary_matches_one_sided_quotients(rng):
    spec = LorentzSpec(3, "last")
    for _ in range(100):
        zb = rng.normal(size=2)
        sign = rng.choice([-1.0, 1.0])
        z = np.r_[zb, sign * np.linalg.norm(zb)]
        h = rng.normal(size=3)
        t = 1e-7
        fd = (project_lorentz(spec, z + t * h) - project_lorentz(spec, z)) / t
        assert np.allclose(lorentz_dir_derivative(spec, z, h), fd, atol=1e-5)


@pytest.mark.parametrize("q", [-1.0, -0.25])
def test_classify_interior_branch(q):
    h = np.array([0.0, -q])
    assert classify_graph_direction(LAST2, h, h) is CaseTag.INT_K


@pytest.mark.parametrize("q", [-1.0, -3.0])
def test_classify_outside_branch(q):
    h = np.array([-5 / 3 * q, -q])
    k = np.array([-4 / 3 * q, -4 / 3 * q])
    assert classify_graph_direction(LAST2, h, k) is CaseTag.OUTSIDE


def test_classify_polar_branch():
    q = 1.0
    assert classify_graph_direction(LAST2, [0.0, -q], [0.0, 0.0]) is CaseTag.INT_POLAR


def test_classify_rejects_non_projection():
    with pytest.raises(ValueError):
        classify_graph_direction(LAST2, [1.0, 0.0], [1.0, 0.0])


@pytest.mark.parametrize("s", [2, 3, 5])
def test_tags_partition_tangent_pairs(s, rng):
    spec = LorentzSpec(s, "first")
    seen = set()
    for i in range(1000):
        h = rng.normal(size=s)
        if i % 4 == 0:
            # put a quarter of the samples on the boundary rays
            hi = spec.inner(h)
            hi[-1] = rng.choice([-1, 1]) * np.linalg.norm(hi[:-1])
            h = spec.outer(hi)
        tags = [t for t in CaseTag if _holds(spec, t, h)]
        assert len(tags) == 1
        assert classify_graph_direction(spec, h, project_lorentz(spec, h)) is tags[0]
        seen.add(tags[0])
    assert seen == set(CaseTag)


def _holds(spec, tag, h, tol=1e-9):
    hi = spec.inner(h)
    r, h0 = np.linalg.norm(hi[:-1]), hi[-1]
    scale = tol * np.linalg.norm(hi)
    on_k, on_polar = abs(h0 - r) <= scale and h0 > 0, abs(h0 + r) <= scale and h0 < 0
    return {
        CaseTag.INT_K: h0 > r and not on_k,
        CaseTag.INT_POLAR: h0 < -r and not on_polar,
        CaseTag.OUTSIDE: abs(h0) < r and not (on_k or on_polar),
        CaseTag.BD_K: on_k,
        CaseTag.BD_POLAR: on_polar,
    }[tag]


def test_family_per_case():
    kinds = {t: coderiv_family_at_apex(LAST2, t).kind for t in CaseTag}
    assert kinds == {
        CaseTag.INT_K: "Identity",
        CaseTag.INT_POLAR: "Zero",
        CaseTag.OUTSIDE: "CFamily",
        CaseTag.BD_K: "CFamilyPlusA",
        CaseTag.BD_POLAR: "CFamilyPlusB",
    }


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_c_matrix_structure(m, alpha, seed):
    w = np.random.default_rng(seed).normal(size=m)
    w /= np.linalg.norm(w)
    c = c_matrix(w, alpha)
    assert np.array_equal(c, c.T)
    expect = 0.5 * np.block([[2 * alpha * np.eye(m) + (1 - 2 * alpha) * np.outer(w, w), w[:, None]], [w[None, :], np.ones((1, 1))]])
    assert np.allclose(c, expect, atol=1e-15)


@pytest.mark.parametrize("w", [-1.0, 1.0])
@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
def test_c_matrix_fixes_the_ray_in_the_plane(w, alpha):
    assert np.array_equal(c_matrix([w], alpha) @ np.array([w, 1.0]), np.array([w, 1.0]))


def test_outside_family_in_the_plane():
    fam = coderiv_family_at_apex(LAST2, CaseTag.OUTSIDE)
    mats = sorted(tuple(map(tuple, c_matrix([w], a))) for w in (-1.0, 1.0) for a in (0.0, 0.5, 1.0))
    assert {m for m in mats} == {((0.5, -0.5), (-0.5, 0.5)), ((0.5, 0.5), (0.5, 0.5))}
    assert fam.exact and len(fam.pieces()) == 2


def test_identity_membership():
    fam = coderiv_family_at_apex(LAST2, CaseTag.INT_K)
    assert family_membership(fam, [1.0, 2.0], [1.0, 2.0])
    assert not family_membership(fam, [1.0, 2.0], [1.0, 2.5])


def test_zero_membership():
    fam = coderiv_family_at_apex(LAST2, CaseTag.INT_POLAR)
    assert family_membership(fam, [3.0, 1.0], [0.0, 0.0])
    assert not family_membership(fam, [3.0, 1.0], [0.0, 1e-3])


def test_outside_membership_forces_zero():
    # input -d, output -∇g v*; with w = -1 the matrix kills (1, 1) directions only
    fam = coderiv_family_at_apex(LAST2, CaseTag.OUTSIDE)
    m = np.array([[0.5, -0.5], [-0.5, 0.5]])
    for d in ([1.0, 0.0], [0.0, 2.0], [1.0, 1.0]):
        assert family_membership(fam, -np.array(d), -m @ d)
    assert not family_membership(fam, [1.0, 0.0], [1.0, 0.0])


def test_boundary_family_contains_its_input():
    fam = coderiv_family_at_apex(LAST2, CaseTag.BD_K)
    res = family_membership(fam, [0.0, 1.0], [0.0, 1.0])
    assert res.status == "in"


@pytest.mark.parametrize("kind", [CaseTag.OUTSIDE, CaseTag.BD_K, CaseTag.BD_POLAR])
def test_membership_in_three_dimensions(kind, rng):
    spec = LorentzSpec(3, "last")
    fam = coderiv_family_at_apex(spec, kind)
    for _ in range(5):
        w = rng.normal(size=2)
        w /= np.linalg.norm(w)
        u = rng.normal(size=3)
        y = c_matrix(w, rng.uniform()) @ u
        assert family_membership(fam, u, y, n_sphere=2000, n_alpha=21).status == "in"
    far = family_membership(fam, [0.0, 0.0, 1.0], [5.0, 5.0, -5.0], n_sphere=2000, n_alpha=21)
    assert far.status in ("out", "undecided")
    assert far.status == "out" or kind is not CaseTag.OUTSIDE


def test_projection_query_at_origin():
    q = convert_projection_normal([0, 0], [0, 0], [0, 0], [0, 0])
    assert np.array_equal(q.point[0], [0, 0]) and np.array_equal(q.input, [0, 0])


def test_normal_and_projection_forms_agree(rng):
    # regular coderivative at a boundary point of the plane cone, checked in both forms
    spec = LAST2
    z = np.array([1.0, 1.0])
    lam = np.array([0.0, 0.0])
    rel = LorentzBlock(spec, z, lam).regular_relation().to_form(NORMAL)
    proj = rel.to_form(PROJECTION)
    for _ in range(200):
        w = rng.integers(-2, 3, 2).astype(float)
        eta = rng.integers(-2, 3, 2).astype(float)
        query = convert_projection_normal(z, lam, eta, w)
        assert rel.contains(w, eta) == proj.contains(query.input, query.output)


def test_degenerate_block_unsupported():
    spec = LorentzSpec(3, "last")
    blk = LorentzBlock(spec, np.array([0.0, 1.0, 1.0]), np.zeros(3))
    with pytest.raises(UnsupportedConeCase):
        blk.tangent_pieces()


def test_apex_pieces_in_the_plane():
    blk = LorentzBlock(LAST2, np.zeros(2), np.zeros(2))
    labels = sorted(p.label for p in blk.tangent_pieces())
    assert labels == ["apex", "boundary-ray", "boundary-ray", "interior"]

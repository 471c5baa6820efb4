"""Lorentz (second-order) cone calculus.

Formulas are written for the axis-last layout z = (z̄, z₀) with
𝒦 = {z : z₀ >= ‖z̄‖}; a :class:`LorentzSpec` permutes to and from the layout
the user chose.  The coderivative of the projection at the apex is a family
of matrices C(w, α), possibly joined with segments conv{u*, A u*} or
conv{u*, B u*}, selected by where the graph direction (h, k) points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import least_squares

from .cones import ACTIVE_TOL, PolyhedralBlock, _in_param_cone
from .linalg import null_space
from .relations import NORMAL, PROJECTION, Piece, Relation

__all__ = [
    "LorentzSpec",
    "CaseTag",
    "CoderivFamily",
    "MembershipResult",
    "ProjectionQuery",
    "UnsupportedConeCase",
    "project_lorentz",
    "project_polar",
    "lorentz_jacobian",
    "lorentz_dir_derivative",
    "classify_graph_direction",
    "coderiv_family_at_apex",
    "family_membership",
    "convert_projection_normal",
    "c_matrix",
    "a_matrix",
    "b_matrix",
    "sphere_points",
    "LorentzBlock",
]


class UnsupportedConeCase(ValueError):
    """A Lorentz configuration outside the implemented calculus."""


@dataclass(frozen=True)
class LorentzSpec:
    dim: int
    axis: str = "first"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("Lorentz cone dimension must be at least 1")
        if self.axis not in ("first", "last"):
            raise ValueError("axis must be 'first' or 'last'")

    @property
    def order(self) -> np.ndarray:
        """Index map: internal (axis-last) vector = external[order]."""
        if self.axis == "last" or self.dim == 1:
            return np.arange(self.dim)
        return np.r_[np.arange(1, self.dim), 0]

    @property
    def perm(self) -> np.ndarray:
        """Permutation matrix P with internal = P·external."""
        return np.eye(self.dim)[self.order]

    def inner(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float)[self.order]

    def outer(self, z) -> np.ndarray:
        out = np.empty(self.dim)
        out[self.order] = z
        return out

    def outer_matrix(self, m: np.ndarray) -> np.ndarray:
        p = self.perm
        return p.T @ m @ p

    def hrep(self) -> np.ndarray:
        """Halfspace rows (only for dim <= 2, where the cone is polyhedral)."""
        if self.dim == 1:
            return np.array([[-1.0]])
        if self.dim == 2:
            return np.array([[1.0, -1.0], [-1.0, -1.0]]) @ self.perm
        raise UnsupportedConeCase("Lorentz cones of dimension > 2 are not polyhedral")


# --------------------------------------------------------------------------
# Projection and its derivatives (axis-last internals)

def _split(z):
    return z[:-1], z[-1]


def _project_inner(z: np.ndarray) -> np.ndarray:
    zb, z0 = _split(z)
    r = float(np.linalg.norm(zb))
    if r <= z0:
        return z.copy()
    if r <= -z0:
        return np.zeros_like(z)
    c = 0.5 * (z0 + r)
    return np.r_[c * zb / r, c]


def project_lorentz(spec: LorentzSpec, z) -> np.ndarray:
    """Euclidean projection onto 𝒦."""
    return spec.outer(_project_inner(spec.inner(z)))


def project_polar(spec: LorentzSpec, z) -> np.ndarray:
    """Projection onto the polar cone 𝒦° = −𝒦."""
    return -project_lorentz(spec, -np.asarray(z, dtype=float))


def _outside_jacobian(z: np.ndarray) -> np.ndarray:
    zb, z0 = _split(z)
    r = float(np.linalg.norm(zb))
    w = zb / r
    beta = z0 / r
    m = len(zb)
    jac = np.empty((m + 1, m + 1))
    jac[:m, :m] = (1 + beta) * np.eye(m) - beta * np.outer(w, w)
    jac[:m, m] = w
    jac[m, :m] = w
    jac[m, m] = 1.0
    return 0.5 * jac


def lorentz_jacobian(spec: LorentzSpec, z, tol: float = 1e-12) -> np.ndarray:
    """Jacobian of P_𝒦 at a point where it is differentiable."""
    zi = spec.inner(z)
    zb, z0 = _split(zi)
    r = float(np.linalg.norm(zb))
    scale = tol * max(1.0, float(np.linalg.norm(zi)))
    if z0 - r > scale:
        return np.eye(spec.dim)
    if -z0 - r > scale:
        return np.zeros((spec.dim, spec.dim))
    if abs(z0) < r - scale:
        return spec.outer_matrix(_outside_jacobian(zi))
    raise UnsupportedConeCase("projection is not differentiable at a boundary point")


def lorentz_dir_derivative(spec: LorentzSpec, z, h, tol: float = 1e-12) -> np.ndarray:
    """One-sided directional derivative P′_𝒦(z; h)."""
    zi, hi = spec.inner(z), spec.inner(h)
    zb, z0 = _split(zi)
    hb, h0 = _split(hi)
    r = float(np.linalg.norm(zb))
    scale = tol * max(1.0, float(np.linalg.norm(zi)))
    if np.linalg.norm(zi) <= tol:
        out = _project_inner(hi)
    elif z0 - r > scale:
        out = hi
    elif -z0 - r > scale:
        out = np.zeros_like(hi)
    elif abs(z0) < r - scale:
        out = _outside_jacobian(zi) @ hi
    elif z0 > 0:
        # z on the boundary of 𝒦: identity on the inward side, the limiting
        # outside Jacobian otherwise.
        w = zb / r
        if h0 - w @ hb >= 0:
            out = hi
        else:
            m = len(zb)
            jac = np.empty((m + 1, m + 1))
            jac[:m, :m] = 2 * np.eye(m) - np.outer(w, w)
            jac[:m, m] = w
            jac[m, :m] = w
            jac[m, m] = 1.0
            out = 0.5 * jac @ hi
    else:
        w = zb / r
        t = w @ hb + h0
        out = np.zeros_like(hi) if t <= 0 else 0.5 * t * np.r_[w, 1.0]
    return spec.outer(out)


# --------------------------------------------------------------------------
# Directions at the apex

class CaseTag(str, Enum):
    INT_K = "IntK"
    INT_POLAR = "IntPolar"
    OUTSIDE = "Outside"
    BD_K = "BdK"
    BD_POLAR = "BdPolar"


def classify_graph_direction(spec: LorentzSpec, h, k, tol: float = 1e-9) -> CaseTag:
    """Locate a nonzero tangent direction (h, k) of the graph of P_𝒦 at the origin."""
    hi, ki = spec.inner(h), spec.inner(k)
    scale = max(float(np.linalg.norm(hi)), float(np.linalg.norm(ki)))
    if scale == 0.0:
        raise ValueError("(h, k) must be nonzero")
    if np.linalg.norm(ki - _project_inner(hi)) > tol * scale:
        raise ValueError("k is not the projection of h")
    hb, h0 = _split(hi)
    r = float(np.linalg.norm(hb))
    t = tol * scale
    if abs(h0 - r) <= t and h0 > 0:
        return CaseTag.BD_K
    if abs(h0 + r) <= t and h0 < 0:
        return CaseTag.BD_POLAR
    if h0 > r:
        return CaseTag.INT_K
    if h0 < -r:
        return CaseTag.INT_POLAR
    return CaseTag.OUTSIDE


def c_matrix(w, alpha: float) -> np.ndarray:
    """C(w, α) = ½[[2αI + (1−2α)wwᵀ, w], [wᵀ, 1]] (axis-last)."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    m = w.size
    out = np.empty((m + 1, m + 1))
    out[:m, :m] = 2 * alpha * np.eye(m) + (1 - 2 * alpha) * np.outer(w, w)
    out[:m, m] = w
    out[m, :m] = w
    out[m, m] = 1.0
    return 0.5 * out


def a_matrix(w) -> np.ndarray:
    """A = I − ½(w, −1)(w, −1)ᵀ (axis-last)."""
    e = np.r_[np.atleast_1d(w), -1.0]
    return np.eye(e.size) - 0.5 * np.outer(e, e)


def b_matrix(w) -> np.ndarray:
    """B = ½(w, 1)(w, 1)ᵀ (axis-last)."""
    e = np.r_[np.atleast_1d(w), 1.0]
    return 0.5 * np.outer(e, e)


def sphere_points(m: int, count: int, seed: int = 0) -> np.ndarray:
    """Unit vectors in ℝ^m: both signs for m = 1, an even circle grid for m = 2."""
    if m == 1:
        return np.array([[-1.0], [1.0]])
    if m == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.c_[np.cos(ang), np.sin(ang)]
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(count, m))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


@dataclass(frozen=True)
class CoderivFamily:
    """Directional limiting coderivative of P_𝒦 at the apex, as a matrix family."""

    kind: str  # Identity | Zero | CFamily | CFamilyPlusA | CFamilyPlusB
    spec: LorentzSpec

    @property
    def exact(self) -> bool:
        return self.kind in ("Identity", "Zero") or self.spec.dim <= 2

    def pieces(self, n_sphere: int = 48, n_alpha: int = 5, seed: int = 0) -> tuple[Piece, ...]:
        """Graph of the family as pieces over (input, output, aux) in user coordinates.

        Exact for dimension ≤ 2; otherwise a finite sample of (w, α).
        """
        spec, s = self.spec, self.spec.dim
        eye = np.eye(s)
        if self.kind == "Identity":
            return (Piece.build(s, np.hstack([-eye, eye]), label="identity"),)
        if self.kind == "Zero":
            return (Piece.build(s, np.hstack([np.zeros((s, s)), eye]), label="zero"),)
        ws = sphere_points(s - 1, n_sphere, seed)
        alphas = [0.0] if s <= 2 else np.linspace(0.0, 1.0, n_alpha)
        out = []
        for w in ws:
            for alpha in alphas:
                c = spec.outer_matrix(c_matrix(w, alpha))
                out.append(Piece.build(s, np.hstack([-c, eye]), label="C", params=(("w", tuple(w)), ("alpha", float(alpha)))))
        if self.kind == "CFamilyPlusA":
            for w in ws:
                e = spec.outer(np.r_[w, -1.0])
                gamma = -0.5 * e  # A a − a = ⟨γ, a⟩ e
                cond = spec.outer(np.r_[-w, 1.0])
                out.append(_segment_piece(s, e, gamma, cond, positive=True, label="A", w=w))
        elif self.kind == "CFamilyPlusB":
            for w in ws:
                cond = spec.outer(np.r_[w, 1.0])
                if s <= 2:
                    e = spec.outer(np.r_[w, -1.0])
                    gamma = -0.5 * e
                    for positive in (True, False):
                        out.append(_segment_piece(s, e, gamma, cond, positive, label="B", w=w))
                else:
                    bm = spec.outer_matrix(b_matrix(w))
                    for theta in np.linspace(0.0, 1.0, n_alpha):
                        m = (1 - theta) * eye + theta * bm
                        out.append(
                            Piece.build(
                                s,
                                np.hstack([-m, eye]),
                                np.r_[-cond, np.zeros(s)][None, :],
                                label="B",
                                params=(("w", tuple(w)), ("theta", float(theta))),
                            )
                        )
        return tuple(out)

    def relation(self, **kw) -> Relation:
        return Relation(self.spec.dim, self.pieces(**kw), PROJECTION, exact=self.exact, info={"family": self.kind})


def _segment_piece(s, e, gamma, cond, positive, label, w) -> Piece:
    """b = a + τe with τ between 0 and ⟨γ, a⟩, subject to ⟨cond, a⟩ >= 0."""
    eqs = np.hstack([-np.eye(s), np.eye(s), -e[:, None]])
    zero = np.zeros(s)
    if positive:
        rows = [np.r_[zero, zero, -1.0], np.r_[-gamma, zero, 1.0]]
    else:
        rows = [np.r_[zero, zero, 1.0], np.r_[gamma, zero, -1.0]]
    rows.append(np.r_[-cond, zero, 0.0])
    return Piece.build(s, eqs, np.array(rows), n_aux=1, label=label, params=(("w", tuple(np.atleast_1d(w))), ("segment", "+" if positive else "-")))


_FAMILY_OF = {
    CaseTag.INT_K: "Identity",
    CaseTag.INT_POLAR: "Zero",
    CaseTag.OUTSIDE: "CFamily",
    CaseTag.BD_K: "CFamilyPlusA",
    CaseTag.BD_POLAR: "CFamilyPlusB",
}


def coderiv_family_at_apex(spec: LorentzSpec, tag: CaseTag | str, h=None, k=None) -> CoderivFamily:
    """Family describing D*P_𝒦((0,0);(h,k)) for a direction of the given case."""
    return CoderivFamily(_FAMILY_OF[CaseTag(tag)], spec)


@dataclass(frozen=True)
class MembershipResult:
    status: str  # "in" | "out" | "undecided"
    params: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.status == "in"


def _segment_distance(u, v, y):
    d = v - u
    dd = float(d @ d)
    theta = 0.0 if dd == 0.0 else min(1.0, max(0.0, float((y - u) @ d) / dd))
    return float(np.linalg.norm(u + theta * d - y)), theta


def family_membership(
    f: CoderivFamily,
    u_star,
    y,
    tol: float = 1e-9,
    n_sphere: int = 10_000,
    n_alpha: int = 101,
    seed: int = 0,
) -> MembershipResult:
    """Decide y ∈ f(u*).

    Exact for dimension ≤ 2.  Larger cones use a sphere/α grid with local
    refinement; a Lipschitz bound over the grid certifies non-membership on
    the circle (dimension 3), anything else unresolved is "undecided".
    """
    spec = f.spec
    u = spec.inner(u_star)
    yi = spec.inner(y)
    scale = tol * max(1.0, float(np.linalg.norm(u)), float(np.linalg.norm(yi)))
    if f.kind == "Identity":
        return MembershipResult("in" if np.linalg.norm(yi - u) <= scale else "out")
    if f.kind == "Zero":
        return MembershipResult("in" if np.linalg.norm(yi) <= scale else "out")
    s = spec.dim
    m = s - 1
    ub, u0 = _split(u)

    def c_res(w, alpha):
        return float(np.linalg.norm(c_matrix(w, alpha) @ u - yi))

    def seg_res(w):
        if f.kind == "CFamilyPlusA":
            if np.r_[-w, 1.0] @ u < -scale:
                return np.inf, 0.0
            return _segment_distance(u, a_matrix(w) @ u, yi)
        if np.r_[w, 1.0] @ u < -scale:
            return np.inf, 0.0
        return _segment_distance(u, b_matrix(w) @ u, yi)

    if s <= 2:
        for w in sphere_points(m, 2):
            if c_res(w, 0.0) <= scale:
                return MembershipResult("in", {"w": w.tolist(), "alpha": 0.0})
        if f.kind != "CFamily":
            for w in sphere_points(m, 2):
                dist, theta = seg_res(w)
                if dist <= scale:
                    return MembershipResult("in", {"w": w.tolist(), "weight": theta})
        return MembershipResult("out")

    ws = sphere_points(m, n_sphere, seed)
    alphas = np.linspace(0.0, 1.0, n_alpha)
    best = (np.inf, None, None)
    for w in ws:
        # residual is affine in α: solve the 1-D least squares in closed form
        c0 = c_matrix(w, 0.0) @ u - yi
        c1 = c_matrix(w, 1.0) @ u - yi - c0
        denom = float(c1 @ c1)
        a_opt = 0.0 if denom == 0.0 else min(1.0, max(0.0, -float(c0 @ c1) / denom))
        r = float(np.linalg.norm(c0 + a_opt * c1))
        if r < best[0]:
            best = (r, w, a_opt)
    r0, w0, a0 = best

    def refine_fun(x):
        w = x[:m] / max(np.linalg.norm(x[:m]), 1e-300)
        return c_matrix(w, x[m]) @ u - yi

    sol = least_squares(refine_fun, np.r_[w0, a0], bounds=(np.r_[-np.inf * np.ones(m), 0.0], np.r_[np.inf * np.ones(m), 1.0]), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    w_ref = sol.x[:m] / np.linalg.norm(sol.x[:m])
    if c_res(w_ref, sol.x[m]) <= scale:
        return MembershipResult("in", {"w": w_ref.tolist(), "alpha": float(sol.x[m])})
    if r0 <= scale:
        return MembershipResult("in", {"w": w0.tolist(), "alpha": a0})
    seg_best = np.inf
    if f.kind != "CFamily":
        for w in ws:
            dist, theta = seg_res(w)
            if dist <= scale:
                return MembershipResult("in", {"w": w.tolist(), "weight": theta})
            seg_best = min(seg_best, _segment_distance(u, (a_matrix(w) if f.kind == "CFamilyPlusA" else b_matrix(w)) @ u, yi)[0])
    if m == 2:
        # chordal covering radius of the circle grid and half the α spacing
        delta_w = 2 * math.sin(math.pi / (2 * n_sphere))
        nb = float(np.linalg.norm(ub))
        lip_w = 0.5 * (3 * nb + abs(u0))
        bound_c = lip_w * delta_w
        c_out = r0 > bound_c
        seg_out = True
        if f.kind != "CFamily":
            lip_seg = math.sqrt(2.0) * float(np.linalg.norm(u)) * 2
            seg_out = seg_best > lip_seg * delta_w
        if c_out and seg_out:
            return MembershipResult("out", {"margin": float(r0 - bound_c)})
    return MembershipResult("undecided", {"best_residual": float(min(r0, seg_best))})


@dataclass(frozen=True)
class ProjectionQuery:
    """Query ``output ∈ D*P(point)(input)`` on the projection side."""

    point: tuple[np.ndarray, np.ndarray]
    input: np.ndarray
    output: np.ndarray


def convert_projection_normal(a, b, p, q) -> ProjectionQuery:
    """p ∈ D*N(a, b)(q) holds exactly when −q ∈ D*P(a + b, a)(−q − p)."""
    a, b, p, q = (np.asarray(t, dtype=float) for t in (a, b, p, q))
    return ProjectionQuery((a + b, a), -q - p, -q)


# --------------------------------------------------------------------------
# Block model of N_𝒦 near a graph point

class LorentzBlock:
    """Local model of N_𝒦 near (z̄, λ̄) for one Lorentz block.

    States: ``interior`` (z̄ ∈ int 𝒦), ``polar`` (z̄ = 0, λ̄ ∈ int 𝒦°),
    ``apex`` (z̄ = λ̄ = 0), ``boundary`` (z̄ ∈ bd 𝒦 \\ {0}, λ̄ ≠ 0) and the two
    degenerate boundary states ``boundary-flat`` (λ̄ = 0) and
    ``polar-boundary`` (z̄ = 0, λ̄ ∈ bd 𝒦° \\ {0}).
    """

    kind = "lorentz"

    def __init__(self, spec: LorentzSpec, z, lam, tol: float = ACTIVE_TOL, sampling: dict | None = None):
        self.spec = spec
        self.dim = spec.dim
        self.z = np.asarray(z, dtype=float)
        self.lam = np.asarray(lam, dtype=float)
        self.tol = tol
        self.sampling = sampling or {}
        self.state = self._state()
        self.poly = PolyhedralBlock(spec.hrep(), self.z, self.lam, tol) if self.dim <= 2 else None

    def _state(self) -> str:
        zi, li = self.spec.inner(self.z), self.spec.inner(self.lam)
        zb, z0 = _split(zi)
        lb, l0 = _split(li)
        t = self.tol
        rz, rl = float(np.linalg.norm(zb)), float(np.linalg.norm(lb))
        if z0 < rz - t * max(1.0, rz):
            raise ValueError("point lies outside the Lorentz cone")
        if -l0 < rl - t * max(1.0, rl):
            raise ValueError("multiplier lies outside the polar cone")
        if abs(zi @ li) > t * max(1.0, float(np.linalg.norm(zi) * np.linalg.norm(li))):
            raise ValueError("point and multiplier are not complementary")
        z_zero = np.linalg.norm(zi) <= t
        l_zero = np.linalg.norm(li) <= t
        if z_zero:
            if l_zero:
                return "apex"
            return "polar" if -l0 - rl > t else "polar-boundary"
        if z0 - rz > t:
            if not l_zero:
                raise ValueError("nonzero multiplier at an interior point")
            return "interior"
        return "flat" if l_zero else "boundary"

    # tangent cone to the graph ---------------------------------------------
    def _strict_jacobian(self) -> np.ndarray:
        return lorentz_jacobian(self.spec, self.z + self.lam)

    def tangent_pieces(self) -> list[Piece]:
        s = self.dim
        if self.poly is not None:
            return self._relabel(self.poly.tangent_pieces())
        eye, zero = np.eye(s), np.zeros((s, s))
        if self.state == "interior":
            return [Piece.build(s, np.hstack([zero, eye]), label="interior")]
        if self.state == "polar":
            return [Piece.build(s, np.hstack([eye, zero]), label="apex")]
        if self.state == "boundary":
            j = self._strict_jacobian()
            return [Piece.build(s, np.hstack([eye - j, -j]), label="boundary")]
        if self.state == "apex":
            # non-polyhedral: linear part only, the conic condition rides in params
            return [
                Piece.build(s, np.hstack([zero, eye]), label="interior", params=(("conic", "v in K"),)),
                Piece.build(s, np.hstack([eye, zero]), label="apex", params=(("conic", "xi in polar"),)),
                Piece.build(s, np.zeros((0, 2 * s)), label="boundary-ray", params=(("conic", "boundary"),)),
            ]
        raise UnsupportedConeCase(f"graph tangents at a degenerate {self.state} point of a Lorentz cone of dimension {s}")

    def _relabel(self, pieces: list[Piece]) -> list[Piece]:
        if self.state != "apex":
            return pieces
        names = {0: "interior", 1: "boundary-ray", 2: "apex"}
        out = []
        for p in pieces:
            n_active = len(p.params[0]) if p.params else 0
            key = min(n_active, 2) if self.dim == 2 else (0 if n_active == 0 else 2)
            out.append(Piece(p.dim, p.eqs, p.rows, p.n_aux, names[key], p.params, p.strict))
        return out

    def xi_basis(self, v):
        """N-side parametrization of the ξ with (v, ξ) tangent, or ``None``."""
        if self.poly is not None:
            return self.poly.xi_basis(v)
        v = np.asarray(v, dtype=float)
        s = self.dim
        t = self.tol * max(1.0, float(np.linalg.norm(v)))
        if self.state == "interior":
            return np.zeros(s), np.zeros((s, 0)), np.zeros(0, bool), None
        if self.state == "polar":
            if np.linalg.norm(v) > t:
                return None
            return np.zeros(s), np.eye(s), np.zeros(s, bool), None
        if self.state == "boundary":
            j = self._strict_jacobian()
            rhs = (np.eye(s) - j) @ v
            xi0, *_ = np.linalg.lstsq(j, rhs, rcond=None)
            if np.linalg.norm(j @ xi0 - rhs) > t:
                return None
            kern = null_space(j)
            return xi0, kern, np.zeros(kern.shape[1], bool), None
        if self.state == "apex":
            vi = self.spec.inner(v)
            vb, v0 = _split(vi)
            r = float(np.linalg.norm(vb))
            if np.linalg.norm(vi) <= t:
                polar_check = lambda xi: self._in_polar(xi)  # noqa: E731
                return np.zeros(s), np.eye(s), np.zeros(s, bool), polar_check
            if v0 - r > t:
                return np.zeros(s), np.zeros((s, 0)), np.zeros(0, bool), None
            if abs(v0 - r) <= t:
                normal = self.spec.outer(np.r_[vb, -v0])
                return np.zeros(s), normal[:, None], np.ones(1, bool), None
            return None
        raise UnsupportedConeCase(f"graph tangents at a degenerate {self.state} point of a Lorentz cone of dimension {s}")

    def _in_polar(self, xi) -> bool:
        xb, x0 = _split(self.spec.inner(xi))
        return bool(-x0 >= float(np.linalg.norm(xb)) - self.tol * max(1.0, float(np.linalg.norm(xi))))

    def tangent_contains(self, v, xi) -> bool:
        if self.poly is not None:
            return self.poly.tangent_contains(v, xi)
        param = self.xi_basis(v)
        if param is None:
            return False
        xi0, basis, nonneg, check = param
        xi = np.asarray(xi, dtype=float)
        if not _in_param_cone(basis, nonneg, xi - xi0, self.tol):
            return False
        return check is None or check(xi)

    # coderivatives ----------------------------------------------------------
    def _sampling(self) -> dict:
        return {k: self.sampling[k] for k in ("n_sphere", "n_alpha", "seed") if k in self.sampling}

    def dirlim_relation(self, v, xi) -> Relation:
        s = self.dim
        v, xi = np.asarray(v, dtype=float), np.asarray(xi, dtype=float)
        if not self.tangent_contains(v, xi):
            return Relation(s, (), NORMAL, note="direction not tangent")
        nonzero = np.linalg.norm(np.r_[v, xi]) > self.tol
        if self.state == "apex" and nonzero and s >= 2:
            h, k = v + xi, v
            tag = classify_graph_direction(self.spec, h, k)
            fam = coderiv_family_at_apex(self.spec, tag, h, k)
            rel = fam.relation(**self._sampling())
            return Relation(s, rel.pieces, PROJECTION, exact=rel.exact, info={"case": tag.value, "family": fam.kind})
        if self.poly is not None:
            return self.poly.dirlim_relation(v, xi)
        return self._smooth_relation()

    def _smooth_relation(self) -> Relation:
        s = self.dim
        eye, zero = np.eye(s), np.zeros((s, s))
        if self.state == "interior":
            return Relation(s, (Piece.build(s, np.hstack([zero, eye]), label="interior"),), NORMAL)
        if self.state == "polar":
            return Relation(s, (Piece.build(s, np.hstack([eye, zero]), label="polar"),), NORMAL)
        if self.state == "boundary":
            j = self._strict_jacobian()
            return Relation(s, (Piece.build(s, np.hstack([-j.T, eye]), label="boundary"),), PROJECTION)
        raise UnsupportedConeCase(
            f"coderivative at a degenerate {self.state} point of a Lorentz cone of dimension {s} is not available"
        )

    def limiting_relation(self) -> Relation:
        s = self.dim
        if self.poly is not None:
            return self.poly.limiting_relation()
        if self.state != "apex":
            return self._smooth_relation()
        # Union of every directional family; only a finite sample is available.
        pieces: list[Piece] = []
        for kind in ("Identity", "Zero", "CFamilyPlusA", "CFamilyPlusB"):
            pieces.extend(CoderivFamily(kind, self.spec).pieces(**self._sampling()))
        return Relation(s, tuple(pieces), PROJECTION, exact=False, note="sampled apex families")

    def regular_relation(self) -> Relation:
        if self.poly is not None:
            return self.poly.regular_relation()
        if self.state == "apex":
            raise UnsupportedConeCase("regular coderivative at the apex of a non-polyhedral Lorentz cone")
        return self._smooth_relation()

    def signature(self, v, xi) -> tuple:
        v, xi = np.asarray(v, dtype=float), np.asarray(xi, dtype=float)
        if self.state == "apex" and np.linalg.norm(np.r_[v, xi]) > self.tol and self.dim >= 2:
            tag = classify_graph_direction(self.spec, v + xi, v)
            return (self.kind, tag.value, tuple(np.round(v + xi, 9)) if self.dim > 2 else ())
        if self.poly is not None:
            return (self.kind,) + self.poly.signature(v, xi)
        return (self.kind, self.state)

    # reduction ---------------------------------------------------------------
    def reduction(self) -> dict:
        s = self.dim
        if self.state in ("interior",):
            return {"kind": "lorentz-interior", "jac_h": np.zeros((0, s)), "mu": np.zeros(0), "theta": "whole space"}
        if self.state in ("apex", "polar", "polar-boundary"):
            return {"kind": "lorentz-apex", "jac_h": np.eye(s), "mu": self.lam.copy(), "theta": "Lorentz cone"}
        zi = self.spec.inner(self.z)
        zb, _ = _split(zi)
        w = zb / np.linalg.norm(zb)
        grad = self.spec.outer(np.r_[-w, 1.0])  # gradient of z₀ − ‖z̄‖
        mu = float(grad @ self.lam) / float(grad @ grad)
        return {"kind": "lorentz-boundary", "jac_h": grad[None, :], "mu": np.array([mu]), "theta": "nonnegative half-line"}

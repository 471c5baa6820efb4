"""Cone specifications, critical cones and polyhedral normal-cone calculus.

The polyhedral part treats D = {z : A z <= 0}.  Near a point of its graph the
normal-cone map N_D looks like N_K for the critical cone K, so tangents and
(directional) limiting coderivatives reduce to face computations on K.  The
orthant ℝˢ₋ gets its own componentwise case table.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.optimize import lsq_linear, nnls

from .linalg import row_basis
from .polyhedra import GEOM_TOL, Face, PolyhedralCone, enumerate_faces
from .relations import NORMAL, Piece, Relation

ACTIVE_TOL = 1e-9

__all__ = [
    "ACTIVE_TOL",
    "ConeSpec",
    "OrthantNonpositive",
    "PolyhedralHRep",
    "LorentzProduct",
    "cone_from_json",
    "cone_to_json",
    "PolyhedralCone",
    "Face",
    "enumerate_faces",
    "NormalConeError",
    "critical_cone",
    "orthant_graph_tangent",
    "orthant_dirlim_coderiv",
    "OrthantCoderiv",
    "face_pair_relation",
    "PolyhedralBlock",
    "OrthantBlock",
]


# --------------------------------------------------------------------------
# Specifications

class ConeSpec:
    """Base class of the supported closed convex cones D."""

    dim: int


@dataclass(frozen=True)
class OrthantNonpositive(ConeSpec):
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("orthant dimension must be at least 1")

    def hrep(self) -> np.ndarray:
        return np.eye(self.dim)


@dataclass(frozen=True)
class PolyhedralHRep(ConeSpec):
    """``{z : a_i·z <= 0 for every row a_i}``."""

    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not self.rows:
            raise ValueError("at least one row is required")
        width = {len(r) for r in self.rows}
        if len(width) != 1 or 0 in width:
            raise ValueError("rows must be nonempty and of equal length")
        if any(all(v == 0 for v in r) for r in self.rows):
            raise ValueError("rows must be nonzero")

    @property
    def dim(self) -> int:
        return len(self.rows[0])

    def hrep(self) -> np.ndarray:
        return np.array(self.rows, dtype=float)


@dataclass(frozen=True)
class LorentzProduct(ConeSpec):
    """Product of Lorentz cones; ``axis`` says whether z₀ is the first or last coordinate."""

    blocks: tuple[int, ...]
    axis: str = "first"

    def __post_init__(self):
        if not self.blocks or any(b < 1 for b in self.blocks):
            raise ValueError("block dimensions must be at least 1")
        if self.axis not in ("first", "last"):
            raise ValueError("axis must be 'first' or 'last'")

    @property
    def dim(self) -> int:
        return sum(self.blocks)

    def slices(self) -> list[slice]:
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b))
            start += b
        return out


def cone_from_json(data: dict) -> ConeSpec:
    kind = data.get("type")
    try:
        if kind == "orthant_nonpositive":
            return OrthantNonpositive(int(data["dim"]))
        if kind == "polyhedral_hrep":
            return PolyhedralHRep(tuple(tuple(float(v) for v in row) for row in data["rows"]))
        if kind == "lorentz_product":
            return LorentzProduct(tuple(int(b) for b in data["blocks"]), data.get("axis", "first"))
    except KeyError as exc:
        raise ValueError(f"missing key {exc.args[0]!r} for cone type {kind!r}") from None
    except TypeError as exc:
        raise ValueError(f"malformed cone description: {exc}") from None
    raise ValueError(f"unknown cone type {kind!r}")


def cone_to_json(cone: ConeSpec) -> dict:
    if isinstance(cone, OrthantNonpositive):
        return {"type": "orthant_nonpositive", "dim": cone.dim}
    if isinstance(cone, PolyhedralHRep):
        return {"type": "polyhedral_hrep", "rows": [list(r) for r in cone.rows]}
    if isinstance(cone, LorentzProduct):
        return {"type": "lorentz_product", "blocks": list(cone.blocks), "axis": cone.axis}
    raise TypeError(f"unsupported cone {cone!r}")


# --------------------------------------------------------------------------
# Critical cones

class NormalConeError(ValueError):
    """A point or multiplier violating the normal-cone relation."""


def _active_rows(a: np.ndarray, z: np.ndarray, tol: float) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1)
    vals = (a @ z) / norms
    if np.any(vals > tol):
        i = int(np.argmax(vals))
        raise NormalConeError(f"point violates constraint row {i} by {vals[i]:.3g}")
    return np.flatnonzero(vals >= -tol)


def normal_cone_coefficients(a_active: np.ndarray, lam: np.ndarray, tol: float = ACTIVE_TOL):
    """μ >= 0 with a_activeᵀ μ = λ, or ``None`` when λ is not in that cone."""
    if a_active.shape[0] == 0:
        return np.zeros(0) if np.linalg.norm(lam) <= tol else None
    mu, res = nnls(a_active.T, lam)
    return mu if res <= tol * max(1.0, float(np.linalg.norm(lam))) else None


def critical_cone(D: ConeSpec, z, lam, tol: float = ACTIVE_TOL) -> PolyhedralCone:
    """K = T_D(z) ∩ λ^⊥ for polyhedral D (orthant or H-representation)."""
    if not hasattr(D, "hrep"):
        raise TypeError("critical_cone needs a polyhedral cone specification")
    a = D.hrep()
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    active = _active_rows(a, z, tol)
    if normal_cone_coefficients(a[active], lam, tol) is None:
        if isinstance(D, OrthantNonpositive):
            bad_sign = np.flatnonzero(lam < -tol)
            if bad_sign.size:
                raise NormalConeError(f"multiplier component {bad_sign[0]} is negative")
            inactive = np.setdiff1d(np.arange(D.dim), active)
            bad = inactive[np.abs(lam[inactive]) > tol]
            raise NormalConeError(f"multiplier component {bad[0]} is nonzero at an inactive constraint")
        raise NormalConeError("multiplier is not a nonnegative combination of active rows")
    eqs = lam[None, :] if np.linalg.norm(lam) > tol else None
    return PolyhedralCone.from_hrep(a[active], eqs, dim=a.shape[1])


# --------------------------------------------------------------------------
# Orthant case table

ZERO_CASE = "zero"  # output {0}
KERNEL_CASE = "kernel"  # output ℝ when the input vanishes, else empty
UNION_CASE = "union"  # the three-piece union of the limiting case


def _check_orthant_graph(z, lam, tol):
    if np.any(z > tol) or np.any(lam < -tol) or np.any((z < -tol) & (np.abs(lam) > tol)):
        raise NormalConeError("(z, λ) is not in the graph of the orthant normal-cone map")


def orthant_graph_tangent(z, lam, v, xi, tol: float = ACTIVE_TOL) -> bool:
    """Whether (v, ξ) is tangent to the graph of N_{ℝˢ₋} at (z, λ)."""
    z, lam, v, xi = (np.asarray(t, dtype=float) for t in (z, lam, v, xi))
    _check_orthant_graph(z, lam, tol)
    scale = max(1.0, float(np.linalg.norm(np.concatenate([v, xi]))))
    t = tol * scale
    for zi, li, vi, xii in zip(z, lam, v, xi):
        if zi < -tol:
            if abs(xii) > t:
                return False
        elif li > tol:
            if abs(vi) > t:
                return False
        elif vi > t or xii < -t or min(abs(vi), abs(xii)) > t:
            return False
    return True


@dataclass(frozen=True)
class OrthantCoderiv:
    """Componentwise directional limiting coderivative of N_{ℝˢ₋}.

    ``cases`` holds one tag per component; ``None`` means the direction is not
    tangent, so the coderivative has empty domain.
    """

    cases: tuple[str, ...] | None

    @property
    def empty_domain(self) -> bool:
        return self.cases is None

    def output(self, w, tol: float = ACTIVE_TOL) -> list[tuple[float, float]] | None:
        """Admissible output intervals per component for input ``w``; ``None`` if empty."""
        if self.cases is None:
            return None
        out = []
        for case, wi in zip(self.cases, np.asarray(w, dtype=float)):
            if case == ZERO_CASE:
                out.append((0.0, 0.0))
            elif case == KERNEL_CASE:
                if abs(wi) > tol:
                    return None
                out.append((-np.inf, np.inf))
            elif abs(wi) <= tol:
                out.append((-np.inf, np.inf))
            elif wi > 0:
                out.append((0.0, np.inf))
            else:
                out.append((0.0, 0.0))
        return out

    def contains(self, w, y, tol: float = ACTIVE_TOL) -> bool:
        intervals = self.output(w, tol)
        if intervals is None:
            return False
        return all(lo - tol <= yi <= hi + tol for (lo, hi), yi in zip(intervals, np.asarray(y, dtype=float)))

    def relation(self) -> Relation:
        """The same set as a union of polyhedral pieces over (w, η)."""
        if self.cases is None:
            return Relation(0, (), NORMAL)
        s = len(self.cases)
        per_component = []
        for i, case in enumerate(self.cases):
            w_i = np.zeros(2 * s)
            w_i[i] = 1.0
            e_i = np.zeros(2 * s)
            e_i[s + i] = 1.0
            if case == ZERO_CASE:
                per_component.append([([e_i], [])])
            elif case == KERNEL_CASE:
                per_component.append([([w_i], [])])
            else:
                # (η, −w) ∈ (ℝ×{0}) ∪ ({0}×ℝ) ∪ (ℝ₊×ℝ₋)
                per_component.append([([w_i], []), ([e_i], []), ([], [-e_i, -w_i])])
        pieces = []
        for choice in product(*per_component):
            eqs = [r for c in choice for r in c[0]]
            rows = [r for c in choice for r in c[1]]
            pieces.append(Piece.build(s, eqs, rows, label="orthant"))
        return Relation(s, tuple(pieces), NORMAL)


def orthant_dirlim_coderiv(z, lam, v, xi, tol: float = ACTIVE_TOL) -> OrthantCoderiv:
    """Case table for D*N_{ℝˢ₋}((z, λ); (v, ξ))."""
    z, lam, v, xi = (np.asarray(t, dtype=float) for t in (z, lam, v, xi))
    if not orthant_graph_tangent(z, lam, v, xi, tol):
        return OrthantCoderiv(None)
    scale = max(1.0, float(np.linalg.norm(np.concatenate([v, xi]))))
    t = tol * scale
    cases = []
    for zi, li, vi, xii in zip(z, lam, v, xi):
        if zi < -tol or vi < -t:
            cases.append(ZERO_CASE)
        elif li > tol or xii > t:
            cases.append(KERNEL_CASE)
        else:
            cases.append(UNION_CASE)
    return OrthantCoderiv(tuple(cases))


# --------------------------------------------------------------------------
# Polyhedral blocks

def face_pair_relation(kpp: PolyhedralCone) -> Relation:
    """Limiting coderivative of N_{K''} at the origin.

    The graph normals are the union over nested faces F₂ ⊂ F₁ of K'' of
    (F₁ − F₂)° × (F₁ − F₂); as a coderivative this reads η ∈ (F₁ − F₂)°
    together with −w ∈ F₁ − F₂.
    """
    s = kpp.dim
    faces = enumerate_faces(kpp)
    pieces = []
    for f1 in faces:
        for f2 in faces:
            if not set(f1.active) <= set(f2.active):
                continue  # F₂ must lie inside F₁
            lin = np.vstack([f1.lineality, f2.rays]) if f2.rays.size else f1.lineality
            diff = PolyhedralCone.from_generators(f1.rays, lin, dim=s)
            # −w ∈ diff:  rows·(−w) <= 0, eqs·w = 0.   η ∈ diff°.
            rows_w = np.hstack([-diff.rows, np.zeros_like(diff.rows)])
            eqs_w = np.hstack([diff.eqs, np.zeros_like(diff.eqs)])
            rows_eta = np.hstack([np.zeros_like(diff.rays), diff.rays])
            eqs_eta = np.hstack([np.zeros_like(diff.lineality), diff.lineality])
            pieces.append(
                Piece.build(
                    s,
                    np.vstack([eqs_w, eqs_eta]),
                    np.vstack([rows_w, rows_eta]),
                    label=f"faces {f1.active}/{f2.active}",
                )
            )
    return Relation(s, tuple(pieces), NORMAL)


class PolyhedralBlock:
    """Local model of N_D near (z̄, λ̄) for D = {z : A z <= 0}."""

    kind = "polyhedral"

    def __init__(self, a: np.ndarray, z, lam, tol: float = ACTIVE_TOL):
        self.a = np.asarray(a, dtype=float)
        self.dim = self.a.shape[1]
        self.z = np.asarray(z, dtype=float)
        self.lam = np.asarray(lam, dtype=float)
        self.tol = tol
        self.active = _active_rows(self.a, self.z, tol)
        self.K = critical_cone(PolyhedralHRep(tuple(map(tuple, self.a))), self.z, self.lam, tol)

    # tangent cone to the graph --------------------------------------------
    def tangent_pieces(self) -> list[Piece]:
        """Gr N_K as the union over faces F of K of F × (K° ∩ F^⊥)."""
        K, s = self.K, self.dim
        out = []
        for face in enumerate_faces(K):
            act = K.rows[list(face.active)] if face.active else np.zeros((0, s))
            eq_v = np.vstack([K.eqs, act])
            eq_xi = np.vstack([K.lineality, face.rays])
            eqs = np.vstack([np.hstack([eq_v, np.zeros_like(eq_v)]), np.hstack([np.zeros_like(eq_xi), eq_xi])])
            rows = np.vstack(
                [np.hstack([K.rows, np.zeros_like(K.rows)]), np.hstack([np.zeros_like(K.rays), K.rays])]
            )
            inactive = [i for i in range(K.rows.shape[0]) if i not in face.active]
            strict = np.hstack([K.rows[inactive], np.zeros((len(inactive), s))])
            out.append(Piece(s, eqs, rows, 0, label=f"face{face.active}", params=(face.active,), strict=strict))
        return out

    def xi_basis(self, v):
        """Parametrize N_K(v) = {B c : c[nonneg] >= 0}; ``None`` when v ∉ K."""
        v = np.asarray(v, dtype=float)
        K = self.K
        if not K.contains(v, self.tol):
            return None
        scale = max(1.0, float(np.linalg.norm(v)))
        tight = np.flatnonzero(np.abs(K.rows @ v) <= self.tol * scale) if K.rows.size else []
        cols = [K.rows[tight].T, K.eqs.T]
        basis = np.hstack(cols) if cols else np.zeros((self.dim, 0))
        nonneg = np.array([True] * len(tight) + [False] * K.eqs.shape[0], dtype=bool)
        return np.zeros(self.dim), basis, nonneg, None

    def tangent_contains(self, v, xi) -> bool:
        v, xi = np.asarray(v, dtype=float), np.asarray(xi, dtype=float)
        param = self.xi_basis(v)
        if param is None:
            return False
        _, basis, nonneg, _ = param
        return _in_param_cone(basis, nonneg, xi, self.tol)

    # coderivatives ----------------------------------------------------------
    def _reduced_data(self, v, xi):
        v, xi = np.asarray(v, dtype=float), np.asarray(xi, dtype=float)
        K = self.K
        scale = max(1.0, float(np.linalg.norm(v)))
        tight = np.flatnonzero(np.abs(K.rows @ v) <= self.tol * scale) if K.rows.size else np.zeros(0, int)
        xscale = max(1.0, float(np.linalg.norm(xi)))
        eqs = np.vstack([K.eqs, xi[None, :] / xscale]) if np.linalg.norm(xi) > self.tol * xscale else K.eqs
        return tight, eqs

    def reduced_cone(self, v, xi) -> PolyhedralCone:
        """K'' = T_K(v) ∩ ξ^⊥."""
        tight, eqs = self._reduced_data(v, xi)
        return PolyhedralCone.from_hrep(self.K.rows[tight], eqs, dim=self.dim)

    def dirlim_relation(self, v, xi) -> Relation:
        if not self.tangent_contains(v, xi):
            return Relation(self.dim, (), NORMAL, note="direction not tangent")
        return face_pair_relation(self.reduced_cone(v, xi))

    def limiting_relation(self) -> Relation:
        return face_pair_relation(self.K)

    def regular_relation(self) -> Relation:
        """Regular coderivative: η ∈ K° when −w ∈ K."""
        K, s = self.K, self.dim
        rows = np.vstack([np.hstack([-K.rows, np.zeros_like(K.rows)]), np.hstack([np.zeros_like(K.rays), K.rays])])
        eqs = np.vstack([np.hstack([K.eqs, np.zeros_like(K.eqs)]), np.hstack([np.zeros_like(K.lineality), K.lineality])])
        return Relation(s, (Piece.build(s, eqs, rows, label="regular"),), NORMAL)

    def signature(self, v, xi) -> tuple:
        tight, eqs = self._reduced_data(v, xi)
        return (self.kind, tuple(int(i) for i in tight), _proj_key(eqs))

    # reduction ---------------------------------------------------------------
    def reduction(self) -> dict:
        """Linear reduction h(z) = J z with J an orthonormal basis of the active rows."""
        act = self.a[self.active]
        jac_h = row_basis(act)
        mu = jac_h @ self.lam
        theta = PolyhedralCone.from_hrep(act @ jac_h.T, dim=jac_h.shape[0]) if jac_h.shape[0] else None
        return {"kind": self.kind, "active": tuple(int(i) for i in self.active), "jac_h": jac_h, "mu": mu, "theta": theta}


def _proj_key(eqs: np.ndarray) -> tuple:
    """Hashable key for the span of the rows of ``eqs``."""
    if eqs.size == 0:
        return ()
    basis = row_basis(eqs)
    return tuple(np.round(basis.T @ basis, 9).ravel())


def _in_param_cone(basis: np.ndarray, nonneg: np.ndarray, y: np.ndarray, tol: float) -> bool:
    """Whether y = basis·c with c ≥ 0 on ``nonneg`` entries."""
    if basis.shape[1] == 0:
        return bool(np.linalg.norm(y) <= tol * max(1.0, float(np.linalg.norm(y))))

    lb = np.where(nonneg, 0.0, -np.inf)
    res = lsq_linear(basis, y, bounds=(lb, np.full(basis.shape[1], np.inf)), method="bvls")
    return bool(np.linalg.norm(basis @ res.x - y) <= tol * max(1.0, float(np.linalg.norm(y))))


class OrthantBlock(PolyhedralBlock):
    """Polyhedral model of ℝˢ₋ with the componentwise coderivative case table."""

    kind = "orthant"

    def __init__(self, z, lam, tol: float = ACTIVE_TOL):
        super().__init__(np.eye(len(np.atleast_1d(z))), z, lam, tol)

    def dirlim_relation(self, v, xi) -> Relation:
        cod = orthant_dirlim_coderiv(self.z, self.lam, v, xi, self.tol)
        rel = cod.relation()
        return Relation(self.dim, rel.pieces, NORMAL, note="" if cod.cases else "direction not tangent", info={"cases": cod.cases})

    def limiting_relation(self) -> Relation:
        return self.dirlim_relation(np.zeros(self.dim), np.zeros(self.dim))

    def signature(self, v, xi) -> tuple:
        return (self.kind, orthant_dirlim_coderiv(self.z, self.lam, v, xi, self.tol).cases)

    def reduction(self) -> dict:
        act = self.active
        jac_h = np.eye(self.dim)[act]
        return {"kind": self.kind, "active": tuple(int(i) for i in act), "jac_h": jac_h, "mu": self.lam[act], "theta": f"nonpositive orthant of dimension {len(act)}"}


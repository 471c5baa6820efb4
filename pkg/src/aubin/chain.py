"""Second-order chain rules for N̂_Γ with Γ = g⁻¹(D).

Under nondegeneracy the multiplier λ̄ with ∇g(x̄)ᵀλ̄ = x* is unique, and the
tangent cone and coderivatives of N̂_Γ are obtained from those of N_D at
(g(x̄), λ̄) by composing with ∇g(x̄) and adding the curvature term ∇²⟨λ̄, g⟩.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import lsq_linear

from .cones import (
    ACTIVE_TOL,
    ConeSpec,
    LorentzProduct,
    OrthantBlock,
    OrthantNonpositive,
    PolyhedralBlock,
    PolyhedralHRep,
)
from .exprs import ProblemSpec, ReferenceData, assemble_reference
from .linalg import rank, row_basis
from .lorentz import LorentzBlock, LorentzSpec
from .polyhedra import PolyhedralCone
from .relations import NORMAL, Relation, piece_combinations, stack_pieces

RESIDUAL_TOL = 1e-9

__all__ = [
    "InfeasibleReference",
    "NondegeneracyError",
    "ReductionData",
    "NondegeneracyResult",
    "ConeModel",
    "TangentResult",
    "CoderivImage",
    "recover_multiplier",
    "check_nondegeneracy",
    "prepare_reference",
    "cone_model",
    "gamma_graph_tangent",
    "gamma_dirlim_coderiv",
    "gamma_regular_coderiv",
]


class InfeasibleReference(ValueError):
    """The reference point does not solve the generalized equation."""


class NondegeneracyError(ValueError):
    """Nondegeneracy fails, so the multiplier need not be unique."""


@dataclass(frozen=True, eq=False)
class ReductionData:
    """Local reduction D = h⁻¹(Θ) near g(x̄), stacked over the blocks of D."""

    kinds: tuple[str, ...]
    jac_h: np.ndarray  # d × s
    theta: tuple[str, ...]
    mu: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "jac_h": self.jac_h.tolist(),
            "theta": list(self.theta),
            "mu": None if self.mu is None else self.mu.tolist(),
        }


@dataclass(frozen=True, eq=False)
class NondegeneracyResult:
    ok: bool
    reduction: ReductionData
    singular_values: np.ndarray

    def __bool__(self) -> bool:
        return self.ok


# --------------------------------------------------------------------------
# Block structure of D

def _blocks_for_point(cone: ConeSpec, z: np.ndarray):
    """Per-block (slice, kind, data) used before a multiplier is known."""
    if isinstance(cone, (OrthantNonpositive, PolyhedralHRep)):
        return [(slice(0, cone.dim), "polyhedral", cone.hrep())]
    if isinstance(cone, LorentzProduct):
        return [(sl, "lorentz", LorentzSpec(b, cone.axis)) for sl, b in zip(cone.slices(), cone.blocks)]
    raise TypeError(f"unsupported cone {cone!r}")


def _lorentz_position(spec: LorentzSpec, z: np.ndarray, tol: float) -> str:
    zi = spec.inner(z)
    zb, z0 = zi[:-1], zi[-1]
    r = float(np.linalg.norm(zb))
    if np.linalg.norm(zi) <= tol:
        return "apex"
    if z0 < r - tol * max(1.0, r):
        raise InfeasibleReference("g(x̄) lies outside the Lorentz cone")
    if z0 - r > tol:
        return "interior"
    return "boundary"


def _active(a: np.ndarray, z: np.ndarray, tol: float) -> np.ndarray:
    vals = (a @ z) / np.linalg.norm(a, axis=1)
    if np.any(vals > tol):
        raise InfeasibleReference(f"g(x̄) violates constraint row {int(np.argmax(vals))}")
    return np.flatnonzero(vals >= -tol)


def _reduction_blocks(cone: ConeSpec, z: np.ndarray, tol: float):
    kinds, jacs, thetas = [], [], []
    for sl, kind, data in _blocks_for_point(cone, z):
        zj = z[sl]
        width = sl.stop - sl.start
        if kind == "polyhedral":
            act = _active(data, zj, tol)
            if isinstance(cone, OrthantNonpositive):
                j = np.eye(width)[act]
                kinds.append("orthant")
                thetas.append(f"nonpositive orthant on components {tuple(int(i) for i in act)}")
            else:
                j = row_basis(data[act])
                kinds.append("polyhedral")
                thetas.append(f"polyhedral cone on active rows {tuple(int(i) for i in act)}")
        else:
            pos = _lorentz_position(data, zj, tol)
            if pos == "apex":
                j = np.eye(width)
                thetas.append("Lorentz cone")
            elif pos == "interior":
                j = np.zeros((0, width))
                thetas.append("whole space")
            else:
                zi = data.inner(zj)
                w = zi[:-1] / np.linalg.norm(zi[:-1])
                j = data.outer(np.r_[-w, 1.0])[None, :]
                thetas.append("nonnegative half-line")
            kinds.append(f"lorentz-{pos}")
        jacs.append(j)
    return kinds, jacs, thetas


def check_nondegeneracy(ref: ReferenceData, cone: ConeSpec | None = None, tol: float = ACTIVE_TOL) -> NondegeneracyResult:
    """Whether ∇h(g(x̄))·∇g(x̄) has full row rank (range ∇g + ker ∇h = ℝˢ)."""
    cone = cone or ref.cone
    kinds, jacs, thetas = _reduction_blocks(cone, ref.g_value, tol)
    jac_h = block_diag(*jacs) if jacs else np.zeros((0, ref.s))
    jac_h = jac_h.reshape(-1, ref.s)
    prod = jac_h @ ref.jac_g
    sv = np.linalg.svd(prod, compute_uv=False) if prod.size else np.zeros(0)
    ok = rank(prod) == jac_h.shape[0]
    mu = None
    if ref.multiplier is not None and jac_h.shape[0]:
        mu, *_ = np.linalg.lstsq(jac_h.T, ref.multiplier, rcond=None)
    return NondegeneracyResult(bool(ok), ReductionData(tuple(kinds), jac_h, tuple(thetas), mu), sv)


def _multiplier_basis(cone: ConeSpec, z: np.ndarray, tol: float):
    """λ = B c with c ≥ 0 on ``nonneg``; ``checks`` verify polar membership after solving."""
    cols, nonneg, checks = [], [], []
    s = cone.dim
    for sl, kind, data in _blocks_for_point(cone, z):
        zj = z[sl]
        width = sl.stop - sl.start
        if kind == "polyhedral":
            act = _active(data, zj, tol)
            for i in act:
                col = np.zeros(s)
                col[sl] = data[i]
                cols.append(col)
                nonneg.append(True)
            continue
        pos = _lorentz_position(data, zj, tol)
        if pos == "apex":
            for k in range(width):
                col = np.zeros(s)
                col[sl.start + k] = 1.0
                cols.append(col)
                nonneg.append(False)
            checks.append((sl, data))
        elif pos == "boundary":
            zi = data.inner(zj)
            col = np.zeros(s)
            col[sl] = data.outer(np.r_[zi[:-1], -zi[-1]])
            cols.append(col / np.linalg.norm(col))
            nonneg.append(True)
    basis = np.array(cols).T if cols else np.zeros((s, 0))
    return basis, np.array(nonneg, dtype=bool), checks


def recover_multiplier(ref: ReferenceData, cone: ConeSpec | None = None, tol: float = RESIDUAL_TOL) -> np.ndarray:
    """The unique λ̄ ∈ N_D(g(x̄)) with ∇g(x̄)ᵀλ̄ = x*."""
    cone = cone or ref.cone
    basis, nonneg, checks = _multiplier_basis(cone, ref.g_value, ACTIVE_TOL)
    x_star = ref.x_star
    scale = max(1.0, float(np.linalg.norm(x_star)))
    mat = ref.jac_g.T @ basis
    if basis.shape[1] == 0:
        if np.linalg.norm(x_star) > tol * scale:
            raise InfeasibleReference("x* is nonzero but no constraint is active")
        return np.zeros(ref.s)
    lb = np.where(nonneg, 0.0, -np.inf)
    sol = lsq_linear(mat, x_star, bounds=(lb, np.full(basis.shape[1], np.inf)), method="bvls")
    if np.linalg.norm(mat @ sol.x - x_star) > tol * scale:
        raise InfeasibleReference("x* = −H(p̄, x̄) is not a regular normal to Γ at x̄")
    if rank(mat) < rank(basis):
        raise NondegeneracyError("the multiplier is not unique (nondegeneracy fails)")
    lam = basis @ sol.x
    for sl, spec in checks:
        li = spec.inner(lam[sl])
        if -li[-1] < np.linalg.norm(li[:-1]) - tol * max(1.0, float(np.linalg.norm(li))):
            raise InfeasibleReference("the multiplier solving ∇gᵀλ = x* lies outside the polar cone")
    lam[np.abs(lam) < 1e-15] = 0.0
    return lam


# --------------------------------------------------------------------------
# Block model with the multiplier

class ConeModel:
    """N_D near (g(x̄), λ̄) as a product of block models."""

    def __init__(self, cone: ConeSpec, z, lam, tol: float = ACTIVE_TOL, sampling: dict | None = None):
        z = np.asarray(z, dtype=float)
        lam = np.asarray(lam, dtype=float)
        self.cone = cone
        self.dim = cone.dim
        if isinstance(cone, OrthantNonpositive):
            self.blocks = [OrthantBlock(z, lam, tol)]
            self.slices = [slice(0, cone.dim)]
        elif isinstance(cone, PolyhedralHRep):
            self.blocks = [PolyhedralBlock(cone.hrep(), z, lam, tol)]
            self.slices = [slice(0, cone.dim)]
        elif isinstance(cone, LorentzProduct):
            self.slices = cone.slices()
            self.blocks = [
                LorentzBlock(LorentzSpec(b, cone.axis), z[sl], lam[sl], tol, sampling)
                for b, sl in zip(cone.blocks, self.slices)
            ]
        else:
            raise TypeError(f"unsupported cone {cone!r}")

    @property
    def is_lorentz(self) -> bool:
        return isinstance(self.cone, LorentzProduct)

    def split(self, vec) -> list[np.ndarray]:
        vec = np.asarray(vec, dtype=float)
        return [vec[sl] for sl in self.slices]

    def selector(self, j: int) -> np.ndarray:
        sel = np.zeros((self.slices[j].stop - self.slices[j].start, self.dim))
        sel[:, self.slices[j]] = np.eye(sel.shape[0])
        return sel

    def dirlim_relations(self, v, xi) -> list[Relation]:
        return [b.dirlim_relation(vj, xj) for b, vj, xj in zip(self.blocks, self.split(v), self.split(xi))]

    def limiting_relations(self) -> list[Relation]:
        return [b.limiting_relation() for b in self.blocks]

    def regular_relations(self) -> list[Relation]:
        return [b.regular_relation() for b in self.blocks]

    def signature(self, v, xi) -> tuple:
        return tuple(b.signature(vj, xj) for b, vj, xj in zip(self.blocks, self.split(v), self.split(xi)))


def prepare_reference(source: ProblemSpec | ReferenceData, sampling: dict | None = None) -> ReferenceData:
    """Reference data with multiplier, reduction and block model filled in.

    Raises :class:`InfeasibleReference` or :class:`NondegeneracyError`.
    """
    ref = assemble_reference(source) if isinstance(source, ProblemSpec) else source
    if ref.multiplier is not None and "model" in ref.extra:
        return ref
    nd = check_nondegeneracy(ref)
    if not nd.ok:
        raise NondegeneracyError(
            "nondegeneracy fails: singular values of ∇h·∇g are " + ", ".join(f"{v:.3g}" for v in nd.singular_values)
        )
    lam = recover_multiplier(ref)
    ref = replace(ref, multiplier=lam, extra=dict(ref.extra))
    ref = replace(ref, reduction=check_nondegeneracy(ref).reduction)
    ref.extra["model"] = ConeModel(ref.cone, ref.g_value, lam, sampling=sampling)
    return ref


def cone_model(ref: ReferenceData) -> ConeModel:
    if "model" not in ref.extra:
        raise ValueError("reference data has no cone model; call prepare_reference first")
    return ref.extra["model"]


# --------------------------------------------------------------------------
# Tangents and coderivatives of N̂_Γ

@dataclass(frozen=True, eq=False)
class TangentResult:
    """ξ solving the tangent system, or ``None`` when (u, u*) is not tangent."""

    xi: np.ndarray | None
    unique: bool
    residual: float

    @property
    def tangent(self) -> bool:
        return self.xi is not None


def gamma_graph_tangent(ref: ReferenceData, u, u_star, tol: float = RESIDUAL_TOL) -> TangentResult:
    """Solve u* = ∇gᵀξ + ∇²⟨λ̄,g⟩u with (∇g u, ξ) tangent to Gr N_D."""
    model = cone_model(ref)
    u = np.asarray(u, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    v = ref.jac_g @ u
    rhs = u_star - ref.hess_contraction(ref.multiplier) @ u
    xi0_parts, bases, masks, checks = [], [], [], []
    for blk, vj in zip(model.blocks, model.split(v)):
        param = blk.xi_basis(vj)
        if param is None:
            return TangentResult(None, True, np.inf)
        xi0, basis, nonneg, check = param
        xi0_parts.append(xi0)
        bases.append(basis)
        masks.append(nonneg)
        checks.append(check)
    xi0 = np.concatenate(xi0_parts)
    basis = block_diag(*bases) if bases else np.zeros((ref.s, 0))
    basis = basis.reshape(ref.s, -1)
    nonneg = np.concatenate(masks) if masks else np.zeros(0, bool)
    target = rhs - ref.jac_g.T @ xi0
    mat = ref.jac_g.T @ basis
    if basis.shape[1]:
        lb = np.where(nonneg, 0.0, -np.inf)
        sol = lsq_linear(mat, target, bounds=(lb, np.full(basis.shape[1], np.inf)), method="bvls")
        coef = sol.x
    else:
        coef = np.zeros(0)
    residual = float(np.linalg.norm(mat @ coef - target))
    scale = max(1.0, float(np.linalg.norm(rhs)), float(np.linalg.norm(u)))
    unique = rank(mat) == rank(basis)
    if residual > tol * scale:
        return TangentResult(None, unique, residual)
    xi = xi0 + basis @ coef
    for check, xj in zip(checks, model.split(xi)):
        if check is not None and not check(xj):
            return TangentResult(None, unique, residual)
    return TangentResult(xi, unique, residual)


@dataclass(frozen=True, eq=False)
class CoderivImage:
    """The set {∇²⟨λ̄,g⟩w + ∇gᵀη : η_j ∈ F_j((∇g w)_j)} for block relations F_j."""

    ref: ReferenceData
    relations: tuple[Relation, ...] | None
    w: np.ndarray

    @property
    def exact(self) -> bool:
        return self.relations is not None and all(r.exact for r in self.relations)

    @property
    def shift(self) -> np.ndarray:
        return self.ref.hess_contraction(self.ref.multiplier) @ self.w

    def _cones(self, target: np.ndarray | None):
        """Cones over (τ, η, aux) with input τ·∇g w and, if given, ∇gᵀη = τ·target."""
        ref = self.ref
        model = cone_model(ref)
        s = ref.s
        w_d = ref.jac_g @ self.w
        rels = [r.to_form(NORMAL) for r in self.relations]
        a_maps, b_maps = [], []
        for j, sl in enumerate(model.slices):
            sel = model.selector(j)
            a_maps.append(np.hstack([w_d[sl][:, None], np.zeros((sl.stop - sl.start, s))]))
            b_maps.append(np.hstack([np.zeros((sl.stop - sl.start, 1)), sel]))
        if target is None:
            base = np.zeros((0, 1 + s))
        else:
            base = np.hstack([-target[:, None], ref.jac_g.T])
        for combo in piece_combinations(rels):
            eqs, rows, _, width = stack_pieces(combo, a_maps, b_maps, base)
            yield PolyhedralCone.from_hrep(rows, eqs, dim=width)

    def contains(self, w_star, tol: float = 1e-9) -> bool:
        if self.relations is None:
            return False
        target = np.asarray(w_star, dtype=float) - self.shift
        return any(c.has_positive(0, tol) for c in self._cones(target))

    def is_empty(self) -> bool:
        if self.relations is None:
            return True
        return not any(c.has_positive(0) for c in self._cones(None))


def gamma_dirlim_coderiv(ref: ReferenceData, u, u_star, w) -> CoderivImage:
    """Directional limiting coderivative of N̂_Γ at (x̄, x*) in direction (u, u*), applied to w."""
    model = cone_model(ref)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.linalg.norm(u) == 0 and np.linalg.norm(u_star) == 0:
        return CoderivImage(ref, tuple(model.limiting_relations()), w)
    tan = gamma_graph_tangent(ref, u, u_star)
    if not tan.tangent:
        return CoderivImage(ref, None, w)
    rels = model.dirlim_relations(ref.jac_g @ u, tan.xi)
    if any(not r.pieces for r in rels):
        return CoderivImage(ref, None, w)
    return CoderivImage(ref, tuple(rels), w)


def gamma_regular_coderiv(ref: ReferenceData, w) -> CoderivImage:
    """Regular coderivative of N̂_Γ at (x̄, x*) applied to w."""
    model = cone_model(ref)
    return CoderivImage(ref, tuple(model.regular_relations()), np.asarray(w, dtype=float))

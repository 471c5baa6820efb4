"""Directional Aubin-property check for S(p) = {x | 0 ∈ H(p,x) + N̂_Γ(x)}.

For every critical direction (q, u, ξ) with (q, u) ≠ 0 the adjoint inclusion

    0 ∈ ∇ₓ𝓛ᵀ v* + ∇gᵀ D*N_D((g(x̄), λ̄); (∇g u, ξ))(∇g v*)

must force v* = 0 (mode "iv") or ∇ₚHᵀ v* = 0 (mode "iii").  Each block
coderivative is a finite union of polyhedral pieces, so each choice of pieces
gives a polyhedral cone over (v*, aux) and the check reduces to finding a
generator with nonzero v*-part.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .avi import CriticalBranch, check_direction_coverage, enumerate_critical_branches
from .chain import NondegeneracyError, cone_model, prepare_reference
from .exprs import ProblemSpec, ReferenceData, assemble_reference
from .lorentz import UnsupportedConeCase
from .polyhedra import PolyhedralCone, enumerate_faces
from .relations import NORMAL, PROJECTION, Relation, find_nonzero, piece_combinations, stack_pieces

__all__ = [
    "AUBIN_VERIFIED",
    "CRITERION_FAILED",
    "INCONCLUSIVE",
    "AdjointWitness",
    "ImplicationResult",
    "MordukhovichResult",
    "VerifyOptions",
    "VerificationReport",
    "NotVerifiedError",
    "DerivativePiece",
    "adjoint_system",
    "solve_adjoint",
    "adjoint_membership",
    "branch_directions",
    "check_adjoint_implication",
    "mordukhovich_check",
    "verify_aubin",
    "solution_map_derivative",
]

AUBIN_VERIFIED = "AubinVerified"
CRITERION_FAILED = "CriterionFailed"
INCONCLUSIVE = "Inconclusive"

PASS, FAIL, UNDECIDED = "pass", "fail", "undecided"
SUBREGULARITY_CAVEAT = "mode iii assumes metric subregularity of the linearized map; it is not checked"


class NotVerifiedError(RuntimeError):
    """The derivative formula for S is only valid once the Aubin property is verified."""


@dataclass(frozen=True)
class AdjointWitness:
    """Nonzero solution of the adjoint system.

    ``aux`` is η (normal-cone variables) or d (projection variables, Lorentz
    cones) as named by ``aux_kind``.
    """

    v_star: tuple[float, ...]
    aux: tuple[float, ...]
    aux_kind: str
    pieces: tuple[str, ...]
    branch: int | None = None
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "v_star": list(self.v_star),
            "aux": list(self.aux),
            "aux_kind": self.aux_kind,
            "pieces": list(self.pieces),
            "branch": self.branch,
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdjointWitness":
        return cls(
            tuple(data["v_star"]),
            tuple(data["aux"]),
            data["aux_kind"],
            tuple(data["pieces"]),
            data.get("branch"),
            data.get("residual", 0.0),
        )


@dataclass(frozen=True)
class ImplicationResult:
    status: str  # pass | fail | undecided
    witness: AdjointWitness | None = None
    directions: int = 0
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS


# --------------------------------------------------------------------------
# Adjoint system

def adjoint_form(ref: ReferenceData) -> str:
    """Lorentz problems use projection variables (v*, d), the rest (v*, η)."""
    return PROJECTION if cone_model(ref).is_lorentz else NORMAL


def adjoint_system(ref: ReferenceData, form: str | None = None):
    """Base equations and block maps over x = (v*, aux).

    normal form:      ∇ₓ𝓛ᵀ v* + ∇gᵀ η = 0,  block input (∇g v*)_j, output η_j
    projection form:  (∇ₓ𝓛ᵀ − ∇gᵀ∇g) v* + ∇gᵀ d = 0,  input −d_j, output −(∇g v*)_j

    The two agree through η = d − ∇g v*.  Returns (base, a_maps, b_maps).
    """
    form = form or adjoint_form(ref)
    model = cone_model(ref)
    n, s = ref.n, ref.s
    jac = ref.jac_g
    lag_t = ref.lagrangian_hessian.T
    a_maps, b_maps = [], []
    if form == NORMAL:
        base = np.hstack([lag_t, jac.T])
        for sl in model.slices:
            k = sl.stop - sl.start
            a_maps.append(np.hstack([jac[sl], np.zeros((k, s))]))
            b = np.zeros((k, n + s))
            b[:, n + sl.start : n + sl.stop] = np.eye(k)
            b_maps.append(b)
    elif form == PROJECTION:
        base = np.hstack([lag_t - jac.T @ jac, jac.T])
        for sl in model.slices:
            k = sl.stop - sl.start
            a = np.zeros((k, n + s))
            a[:, n + sl.start : n + sl.stop] = -np.eye(k)
            a_maps.append(a)
            b_maps.append(np.hstack([-jac[sl], np.zeros((k, s))]))
    else:
        raise ValueError(f"unknown adjoint form {form!r}")
    return base, a_maps, b_maps


def _target(ref: ReferenceData, mode: str, width: int) -> np.ndarray:
    n = ref.n
    proj = np.zeros((n if mode == "iv" else ref.l, width))
    proj[:, :n] = np.eye(n) if mode == "iv" else ref.dHp.T
    return proj


def solve_adjoint(
    ref: ReferenceData,
    relations: Sequence[Relation],
    mode: str = "iv",
    branch: int | None = None,
) -> ImplicationResult:
    """Search every piece combination for a solution violating the implication."""
    if mode not in ("iii", "iv"):
        raise ValueError(f"mode must be 'iii' or 'iv', not {mode!r}")
    form = adjoint_form(ref)
    base, a_maps, b_maps = adjoint_system(ref, form)
    rels = [r.to_form(form) for r in relations]
    n, s = ref.n, ref.s
    for combo in piece_combinations(rels):
        eqs, rows, _, width = stack_pieces(combo, a_maps, b_maps, base)
        cone = PolyhedralCone.from_hrep(rows, eqs, dim=width)
        g = find_nonzero(cone, _target(ref, mode, width))
        if g is None:
            continue
        g = g / np.linalg.norm(g[:n])
        x = g[: n + s]
        residual = float(np.linalg.norm(base @ x))
        witness = AdjointWitness(
            tuple(float(c) for c in x[:n]),
            tuple(float(c) for c in x[n:]),
            "d" if form == PROJECTION else "eta",
            tuple(p.label for p in combo),
            branch,
            residual,
        )
        return ImplicationResult(FAIL, witness, 1)
    exact = all(r.exact for r in rels)
    return ImplicationResult(PASS if exact else UNDECIDED, None, 1, "" if exact else "sampled coderivative family")


def adjoint_membership(ref: ReferenceData, v_star, direction=None, tol: float = 1e-9) -> bool:
    """Whether the given v* solves the adjoint inclusion.

    ``direction`` is (v, ξ) at D-level or ``None`` for the limiting
    (non-directional) coderivative.
    """
    model = cone_model(ref)
    v_star = np.asarray(v_star, dtype=float)
    rels = model.limiting_relations() if direction is None else model.dirlim_relations(*direction)
    form = adjoint_form(ref)
    base, a_maps, b_maps = adjoint_system(ref, form)
    n, s = ref.n, ref.s
    for combo in piece_combinations([r.to_form(form) for r in rels]):
        eqs, rows, _, width = stack_pieces(combo, a_maps, b_maps, base)
        # v* = τ·v_star with τ > 0; the remaining variables stay free
        lift = np.zeros((width, 1 + width - n))
        lift[:n, 0] = v_star
        lift[n:, 1:] = np.eye(width - n)
        cone = PolyhedralCone.from_hrep(rows @ lift, eqs @ lift, dim=lift.shape[1])
        if cone.has_positive(0, tol):
            return True
    return False


# --------------------------------------------------------------------------
# Branch checks

def branch_directions(branch: CriticalBranch) -> list[np.ndarray]:
    """Representative (q, u, ξ), one per face of the branch with (q, u) ≠ 0."""
    l, n, _ = branch.dims
    if branch.cone is None:
        cands = list(branch.points)
    else:
        cands = [f.witness for f in enumerate_faces(branch.cone)]
        # the minimal face is the lineality space; sample it along ± its basis
        lin = branch.cone.lineality
        cands.extend(list(lin) + list(-lin))
    out = []
    for z in cands:
        if np.linalg.norm(z[: l + n]) > 1e-12 * max(1.0, float(np.linalg.norm(z))):
            out.append(np.asarray(z, dtype=float))
    return out


def check_adjoint_implication(
    ref: ReferenceData,
    branch: CriticalBranch,
    mode: str = "iv",
    index: int | None = None,
    cache: dict | None = None,
) -> ImplicationResult:
    """Check the adjoint implication along every face direction of ``branch``."""
    model = cone_model(ref)
    l, n, _ = branch.dims
    cache = {} if cache is None else cache
    status = PASS
    notes = []
    dirs = branch_directions(branch)
    for z in dirs:
        u, xi = z[l : l + n], z[l + n :]
        v = ref.jac_g @ u
        key = (mode, model.signature(v, xi))
        if key not in cache:
            rels = model.dirlim_relations(v, xi)
            cache[key] = solve_adjoint(ref, rels, mode, index)
        res = cache[key]
        if res.status == FAIL:
            w = res.witness
            if w.branch != index:
                w = AdjointWitness(w.v_star, w.aux, w.aux_kind, w.pieces, index, w.residual)
            return ImplicationResult(FAIL, w, len(dirs))
        if res.status == UNDECIDED:
            status = UNDECIDED
            notes.append(res.note)
    if not branch.certified and status == PASS:
        status = UNDECIDED
        notes.append("branch located numerically")
    return ImplicationResult(status, None, len(dirs), "; ".join(sorted(set(notes))))


@dataclass(frozen=True)
class MordukhovichResult:
    trivial_only: bool | None  # None: undecided
    witness: AdjointWitness | None

    def to_dict(self) -> dict:
        return {
            "trivial_only": self.trivial_only,
            "witness": None if self.witness is None else self.witness.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MordukhovichResult":
        w = data.get("witness")
        return cls(data["trivial_only"], None if w is None else AdjointWitness.from_dict(w))


def mordukhovich_check(ref: ReferenceData) -> MordukhovichResult:
    """Classical criterion: the adjoint inclusion with the limiting coderivative."""
    model = cone_model(ref)
    res = solve_adjoint(ref, model.limiting_relations(), "iv")
    if res.status == FAIL:
        return MordukhovichResult(False, res.witness)
    return MordukhovichResult(True if res.status == PASS else None, None)


# --------------------------------------------------------------------------
# Derivative of the solution map

@dataclass(frozen=True)
class DerivativePiece:
    """u-part of one branch slice: conv(points) + cone(rays) + span(lineality)."""

    descriptor: tuple[str, ...]
    points: tuple[tuple[float, ...], ...]
    rays: tuple[tuple[float, ...], ...] = ()
    lineality: tuple[tuple[float, ...], ...] = ()
    xi: tuple[tuple[float, ...], ...] = ()

    @property
    def is_point(self) -> bool:
        return len(self.points) == 1 and not self.rays and not self.lineality

    def to_dict(self) -> dict:
        return {k: [list(x) for x in v] if k != "descriptor" else list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "DerivativePiece":
        tup = lambda rows: tuple(tuple(r) for r in rows)  # noqa: E731
        return cls(tuple(data["descriptor"]), tup(data["points"]), tup(data["rays"]), tup(data["lineality"]), tup(data["xi"]))


def _as_tuples(arr: np.ndarray) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(c) for c in row) for row in arr)


def solution_map_derivative(
    ref: ReferenceData,
    branches: Sequence[CriticalBranch],
    q,
    report: "VerificationReport | None" = None,
    tol: float = 1e-9,
) -> list[DerivativePiece]:
    """{u | (q, u, ξ) critical for some ξ}, one piece per branch meeting q.

    Refuses unless ``report`` certifies the Aubin property.
    """
    if report is None or report.verdict != AUBIN_VERIFIED:
        raise NotVerifiedError("the derivative of S is only available after the Aubin property is verified")
    n = ref.n
    out: list[DerivativePiece] = []
    for br in branches:
        sl = br.slice_at(q)
        if sl.empty:
            continue
        pts = sl.points[:, :n]
        piece = DerivativePiece(
            br.descriptor,
            _as_tuples(np.where(np.abs(pts) < tol, 0.0, pts)),
            _as_tuples(sl.rays[:, :n]),
            _as_tuples(sl.lineality[:, :n]),
            _as_tuples(sl.points[:, n:]),
        )
        if not any(_same_piece(piece, other, tol) for other in out):
            out.append(piece)
    return out


def _same_piece(a: DerivativePiece, b: DerivativePiece, tol: float) -> bool:
    if not (a.is_point and b.is_point):
        return False
    return bool(np.allclose(a.points[0], b.points[0], atol=tol))


# --------------------------------------------------------------------------
# Driver

@dataclass(frozen=True)
class VerifyOptions:
    mode: str = "iv"
    compare_mordukhovich: bool = False
    seed: int = 0
    sampling: dict | None = None


@dataclass
class VerificationReport:
    problem: str
    p: list[float]
    x: list[float]
    multiplier: list[float] | None
    nondegenerate: bool
    verdict: str
    reason: str = ""
    mode: str = "iv"
    branches: list[dict] = field(default_factory=list)
    coverage: dict | None = None
    witness: AdjointWitness | None = None
    mordukhovich: MordukhovichResult | None = None
    ds: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def verified(self) -> bool:
        return self.verdict == AUBIN_VERIFIED

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "verdict": self.verdict,
            "reason": self.reason,
            "mode": self.mode,
            "p": self.p,
            "x": self.x,
            "multiplier": self.multiplier,
            "nondegenerate": self.nondegenerate,
            "branches": self.branches,
            "coverage": self.coverage,
            "witness": None if self.witness is None else self.witness.to_dict(),
            "mordukhovich": None if self.mordukhovich is None else self.mordukhovich.to_dict(),
            "DS": self.ds,
            "notes": self.notes,
            "elapsed": self.elapsed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VerificationReport":
        w = data.get("witness")
        m = data.get("mordukhovich")
        return cls(
            problem=data["problem"],
            p=data["p"],
            x=data["x"],
            multiplier=data["multiplier"],
            nondegenerate=data["nondegenerate"],
            verdict=data["verdict"],
            reason=data.get("reason", ""),
            mode=data.get("mode", "iv"),
            branches=data.get("branches", []),
            coverage=data.get("coverage"),
            witness=None if w is None else AdjointWitness.from_dict(w),
            mordukhovich=None if m is None else MordukhovichResult.from_dict(m),
            ds=data.get("DS", {}),
            notes=data.get("notes", []),
            elapsed=data.get("elapsed", 0.0),
        )


def _floats(a) -> list[float] | None:
    return None if a is None else [float(c) for c in np.ravel(a)]


def _ds_summary(ref, branches, report) -> dict:
    probes = [[-1.0], [1.0]] if ref.l == 1 else [list(r) for r in np.vstack([np.eye(ref.l), -np.eye(ref.l)])]
    out = {}
    for q in probes:
        pieces = solution_map_derivative(ref, branches, q, report)
        key = ",".join(f"{c:g}" for c in q)
        out[key] = [p.to_dict() for p in pieces]
    return out


def verify_aubin(spec: ProblemSpec | ReferenceData, options: VerifyOptions | None = None) -> VerificationReport:
    """Run the full check and return a report; never raises for a failed criterion.

    Raises :class:`~aubin.chain.InfeasibleReference` when x̄ does not solve the
    generalized equation at p̄.
    """
    opts = options or VerifyOptions()
    start = time.perf_counter()
    ref0 = assemble_reference(spec) if isinstance(spec, ProblemSpec) else spec
    report = VerificationReport(
        problem=ref0.name,
        p=_floats(ref0.p),
        x=_floats(ref0.x),
        multiplier=None,
        nondegenerate=False,
        verdict=INCONCLUSIVE,
        mode=opts.mode,
    )
    if opts.mode == "iii":
        report.notes.append(SUBREGULARITY_CAVEAT)

    def done():
        report.elapsed = time.perf_counter() - start
        return report

    try:
        ref = prepare_reference(ref0, opts.sampling)
    except NondegeneracyError as exc:
        report.reason = "A2 fails"
        report.notes.append(str(exc))
        return done()
    report.nondegenerate = True
    report.multiplier = _floats(ref.multiplier)

    if opts.compare_mordukhovich:
        try:
            report.mordukhovich = mordukhovich_check(ref)
        except UnsupportedConeCase as exc:
            report.notes.append(f"classical criterion not evaluated: {exc}")

    try:
        branches = enumerate_critical_branches(ref, seed=opts.seed)
    except UnsupportedConeCase as exc:
        report.reason = str(exc)
        return done()
    report.branches = [b.to_dict() for b in branches]

    cov = check_direction_coverage(branches, ref.l, seed=opts.seed)
    report.coverage = {
        "covered": cov.covered,
        "exact": cov.exact,
        "uncovered": _floats(cov.uncovered),
        "cells": cov.cells,
    }
    if cov.covered is False:
        report.reason = "condition (i) fails: some q admits no critical direction"
        return done()

    cache: dict = {}
    undecided = []
    for i, br in enumerate(branches):
        res = check_adjoint_implication(ref, br, opts.mode, i, cache)
        report.branches[i]["implication"] = res.status
        if res.status == FAIL:
            report.verdict = CRITERION_FAILED
            report.witness = res.witness
            report.reason = f"adjoint system has a nonzero solution along branch {i}"
            # remaining branches are not needed for the verdict
            for rest in report.branches[i + 1 :]:
                rest["implication"] = "skipped"
            return done()
        if res.status == UNDECIDED:
            undecided.append(f"branch {i}: {res.note}")

    if undecided:
        report.reason = "undecided: " + "; ".join(undecided)
        return done()
    if cov.covered is None or not cov.exact:
        report.reason = "coverage of the parameter space is not certified"
        return done()
    report.verdict = AUBIN_VERIFIED
    report.ds = _ds_summary(ref, branches, report)
    return done()

"""Critical directions: all (q, u, ξ) with

    0 = ∇ₚH q + ∇ₓ𝓛 u + ∇gᵀ ξ,    (∇g u, ξ) tangent to Gr N_D at (g(x̄), λ̄).

The graph tangent is a finite union of polyhedral pieces (one per face of the
critical cone, or per conic branch at a Lorentz apex), so the solution set is
a finite union of polyhedral cones in (q, u, ξ).  Each cone, cut by the sign
of q when there is a single parameter, is one :class:`CriticalBranch`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, linprog

from .chain import cone_model
from .exprs import ReferenceData
from .linalg import normalize_rows, unique_rows
from .lorentz import LorentzBlock
from .polyhedra import GEOM_TOL, PolyhedralCone
from .relations import Piece, stack_pieces

__all__ = [
    "CriticalBranch",
    "DirectionSlice",
    "CoverageResult",
    "enumerate_critical_branches",
    "check_direction_coverage",
    "projected_parameter_cone",
]


@dataclass(frozen=True, eq=False)
class DirectionSlice:
    """{(u, ξ) : (q, u, ξ) in a branch} for fixed q: conv(points) + cone(rays) + span(lineality)."""

    points: np.ndarray  # rows (u, ξ)
    rays: np.ndarray
    lineality: np.ndarray

    @property
    def bounded(self) -> bool:
        return self.rays.shape[0] == 0 and self.lineality.shape[0] == 0

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0


@dataclass(frozen=True, eq=False)
class CriticalBranch:
    """One polyhedral family of critical directions.

    ``region`` is "q<=0", "q>=0" or "q=0" for a single parameter and "fan"
    otherwise.  ``certified`` is false for branches produced by the numerical
    search at a non-polyhedral Lorentz apex; such branches carry sample points
    in ``points`` instead of a cone.
    """

    descriptor: tuple[str, ...]
    region: str
    dims: tuple[int, int, int]  # (l, n, s)
    cone: PolyhedralCone | None
    relint: bool = True
    certified: bool = True
    points: np.ndarray | None = None
    notes: tuple[str, ...] = ()

    @property
    def l(self) -> int:
        return self.dims[0]

    def split(self, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        l, n, s = self.dims
        z = np.asarray(z, dtype=float)
        return z[:l], z[l : l + n], z[l + n :]

    def generators(self) -> list[np.ndarray]:
        if self.cone is not None:
            return self.cone.generators()
        return list(self.points)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.cone is not None:
            return self.cone.sample(rng, count)
        idx = rng.integers(0, self.points.shape[0], count)
        return self.points[idx] * rng.exponential(1.0, (count, 1))

    def slice_at(self, q) -> DirectionSlice:
        """All (u, ξ) with (q, u, ξ) in the branch."""
        l, n, s = self.dims
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.cone is None:
            pts = []
            for z in self.points:
                zq = z[:l]
                # points are scaled representatives; match direction of q
                if l == 1 and zq[0] != 0 and q[0] != 0 and np.sign(zq[0]) == np.sign(q[0]):
                    pts.append(z[l:] * q[0] / zq[0])
                elif np.linalg.norm(q) == 0 and np.linalg.norm(zq) == 0:
                    pts.append(np.zeros(n + s))
            arr = np.array(pts).reshape(-1, n + s)
            return DirectionSlice(arr, np.zeros((0, n + s)), np.zeros((0, n + s)))
        scale = float(np.linalg.norm(q))
        if scale > 0 and scale != 1.0:
            # slice at the unit direction so scaling q scales the points exactly
            unit = self.slice_at(q / scale)
            return DirectionSlice(unit.points * scale, unit.rays, unit.lineality)
        c = self.cone
        width = c.dim + 1
        rows = np.hstack([c.rows, np.zeros((c.rows.shape[0], 1))])
        rows = np.vstack([rows, np.r_[np.zeros(c.dim), -1.0]])
        fix = np.hstack([np.eye(l), np.zeros((l, n + s)), -q[:, None]])
        eqs = np.vstack([np.hstack([c.eqs, np.zeros((c.eqs.shape[0], 1))]), fix])
        lifted = PolyhedralCone.from_hrep(rows, eqs, dim=width)
        pts, rays = [], []
        for g in lifted.rays:
            if g[-1] > GEOM_TOL:
                pts.append(g[l:-1] / g[-1])
            else:
                rays.append(g[l:-1])
        lin = lifted.lineality[:, l:-1]
        as_arr = lambda xs: np.array(xs).reshape(-1, n + s)  # noqa: E731
        if not pts and lifted.lineality.shape[0] + len(rays) == 0 and np.linalg.norm(q) == 0:
            pts = [np.zeros(n + s)]
        elif not pts and np.linalg.norm(q) == 0 and lifted.lineality.shape[0]:
            pts = [np.zeros(n + s)]
        return DirectionSlice(_clean(as_arr(pts)), _clean(as_arr(rays)), _clean(lin.reshape(-1, n + s)))

    def unique_solution(self, q) -> tuple[np.ndarray, np.ndarray] | None:
        """(u, ξ) when the slice at q is a single point."""
        sl = self.slice_at(q)
        if sl.points.shape[0] == 1 and sl.bounded:
            n = self.dims[1]
            return sl.points[0][:n], sl.points[0][n:]
        return None

    def to_dict(self) -> dict:
        """JSON summary: (u, ξ) at q = ±1 for a single ray, generators otherwise."""
        l, n, s = self.dims
        out = {"descriptor": list(self.descriptor), "region": self.region, "relint": self.relint, "certified": self.certified}
        if l == 1 and self.region in ("q<=0", "q>=0"):
            q = -1.0 if self.region == "q<=0" else 1.0
            sol = self.unique_solution(q)
            if sol is not None:
                # the branch is the ray t·(q, u, ξ), t >= 0
                out["q"] = [q]
                out["u"] = sol[0].tolist()
                out["xi"] = sol[1].tolist()
                return out
        gens = self.generators()
        out["generators"] = [g.tolist() for g in gens]
        out["u"] = [self.split(g)[1].tolist() for g in gens]
        out["xi"] = [self.split(g)[2].tolist() for g in gens]
        return out


def _clean(rows: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Zero out round-off entries, relative to each row's size."""
    if rows.size == 0:
        return rows
    scale = np.maximum(1.0, np.abs(rows).max(axis=1, keepdims=True))
    return np.where(np.abs(rows) <= tol * scale, 0.0, rows)


# --------------------------------------------------------------------------
# Enumeration

def _system(ref: ReferenceData) -> np.ndarray:
    """Rows of 0 = ∇ₚH q + ∇ₓ𝓛 u + ∇gᵀ ξ over z = (q, u, ξ)."""
    return np.hstack([ref.dHp, ref.lagrangian_hessian, ref.jac_g.T])


def _maps(ref: ReferenceData, model):
    l, n, s = ref.l, ref.n, ref.s
    a_maps, b_maps = [], []
    for j, sl in enumerate(model.slices):
        k = sl.stop - sl.start
        a = np.zeros((k, l + n + s))
        a[:, l : l + n] = ref.jac_g[sl]
        b = np.zeros((k, l + n + s))
        b[:, l + n + sl.start : l + n + sl.stop] = np.eye(k)
        a_maps.append(a)
        b_maps.append(b)
    return a_maps, b_maps


def _conic(piece: Piece) -> str | None:
    for item in piece.params:
        if isinstance(item, tuple) and len(item) == 2 and item[0] == "conic":
            return item[1]
    return None


def _region_parts(cone: PolyhedralCone, l: int):
    if l != 1:
        yield "fan", cone
        return
    e = np.zeros(cone.dim)
    e[0] = 1.0
    for region, row in (("q<=0", e), ("q>=0", -e)):
        part = cone.intersect(rows=row[None, :])
        if part.is_zero:
            continue
        if any(abs(g[0]) > GEOM_TOL for g in part.generators()):
            yield region, part
        else:
            yield "q=0", part


def enumerate_critical_branches(ref: ReferenceData, seed: int = 0) -> list[CriticalBranch]:
    """All branches of critical directions, deduplicated, sorted by descriptor."""
    model = cone_model(ref)
    l, n, s = ref.l, ref.n, ref.s
    base = _system(ref)
    a_maps, b_maps = _maps(ref, model)
    per_block = [blk.tangent_pieces() for blk in model.blocks]
    rng = np.random.default_rng(seed)
    found: list[CriticalBranch] = []
    for combo in product(*per_block):
        conic = [(j, _conic(p)) for j, p in enumerate(combo) if _conic(p) is not None]
        descriptor = tuple(p.label for p in combo)
        if conic:
            found.extend(_conic_branches(ref, model, combo, conic, descriptor, a_maps, b_maps, base))
            continue
        eqs, rows, strict, width = stack_pieces(combo, a_maps, b_maps, base)
        cone = PolyhedralCone.from_hrep(rows, eqs, dim=width)
        if cone.is_zero:
            continue
        for region, part in _region_parts(cone, l):
            w = part.interior_point(rng)
            scale = max(1.0, float(np.linalg.norm(w)))
            relint = strict.shape[0] == 0 or bool(np.all(strict @ w < -GEOM_TOL * scale))
            found.append(CriticalBranch(descriptor, region, (l, n, s), part, relint))
    return _dedupe(found)


def _dedupe(branches: list[CriticalBranch]) -> list[CriticalBranch]:
    kept: list[CriticalBranch] = []
    for br in sorted(branches, key=lambda b: (not b.relint, b.descriptor)):
        dup = False
        for k in kept:
            if k.region != br.region or k.cone is None or br.cone is None:
                continue
            if k.cone.same_as(br.cone):
                dup = True
                break
        if not dup:
            kept.append(br)
    kept.sort(key=lambda b: (b.region, b.descriptor))
    return kept


# --------------------------------------------------------------------------
# Non-polyhedral Lorentz apex (dimension > 2): numerical branch search

def _conic_branches(ref, model, combo, conic, descriptor, a_maps, b_maps, base):
    """Branches through apex blocks of Lorentz cones of dimension > 2.

    Only one parameter and a single apex block are handled.  The linear part
    of each piece is solved for q = ±1; conic conditions are checked on the
    resulting points, and the boundary branch is located by scanning the
    multiplier ratio μ in ξ = μ·(v̄, −v₀) for roots.  Results are uncertified.
    """
    l, n, s = ref.l, ref.n, ref.s
    note = ("numerical apex branch search",)
    if l != 1 or len(conic) != 1:
        return [CriticalBranch(descriptor, "fan", (l, n, s), None, False, False, np.zeros((0, l + n + s)), ("apex branch search skipped",))]
    j, kind = conic[0]
    blk: LorentzBlock = model.blocks[j]
    sl = model.slices[j]
    eqs, rows, _, width = stack_pieces(combo, a_maps, b_maps, base)
    out = []
    if kind in ("v in K", "xi in polar"):
        cone = PolyhedralCone.from_hrep(rows, eqs, dim=width)
        for region, part in _region_parts(cone, l):
            pts = []
            for g in part.generators():
                v = (ref.jac_g @ g[l : l + n])[sl]
                xi = g[l + n :][sl]
                test = v if kind == "v in K" else -xi
                ti = blk.spec.inner(test)
                if ti[-1] >= np.linalg.norm(ti[:-1]) - 1e-9 * max(1.0, float(np.linalg.norm(ti))):
                    pts.append(g)
            if pts and len(pts) == len(part.generators()):
                out.append(CriticalBranch(descriptor, region, (l, n, s), part, True, False, None, note))
            elif pts:
                out.append(CriticalBranch(descriptor, region, (l, n, s), None, True, False, np.array(pts), note))
        return out
    # boundary: v ∈ bd 𝒦 \ {0}, ξ = μ R v with R v = (v̄, −v₀), μ >= 0.
    spec = blk.spec
    refl = spec.outer_matrix(np.diag(np.r_[np.ones(spec.dim - 1), -1.0]))
    k = sl.stop - sl.start
    pts = []
    for q in (-1.0, 1.0):

        def solve(mu):
            # ξ_j = μ R (∇g u)_j; the other blocks stay in their linear pieces
            m = np.zeros((k, width))
            m[:, l + n + sl.start : l + n + sl.stop] = np.eye(k)
            m[:, l : l + n] -= mu * refl @ ref.jac_g[sl]
            fix = np.zeros((1, width))
            fix[0, 0] = 1.0
            a = np.vstack([eqs, m, fix])
            rhs = np.r_[np.zeros(eqs.shape[0] + k), q]
            z, *_ = np.linalg.lstsq(a, rhs, rcond=None)
            return z, float(np.linalg.norm(a @ z - rhs))

        def boundary_gap(mu):
            z, _ = solve(mu)
            vi = spec.inner((ref.jac_g @ z[l : l + n])[sl])
            return vi[-1] - np.linalg.norm(vi[:-1])

        grid = np.r_[0.0, np.geomspace(1e-4, 1e4, 400)]
        gaps = [boundary_gap(mu) for mu in grid]
        for a, b, ga, gb in zip(grid[:-1], grid[1:], gaps[:-1], gaps[1:]):
            if ga == 0 or ga * gb < 0:
                mu = a if ga == 0 else brentq(boundary_gap, a, b, xtol=1e-14)
                z, res = solve(mu)
                v = (ref.jac_g @ z[l : l + n])[sl]
                if res <= 1e-9 and np.linalg.norm(v) > 1e-9 and (rows.shape[0] == 0 or np.all(rows @ z <= 1e-9)):
                    pts.append(z)
    for z in pts:
        region = "q<=0" if z[0] < 0 else "q>=0"
        out.append(CriticalBranch(descriptor, region, (l, n, s), None, True, False, z[None, :], note))
    return out


# --------------------------------------------------------------------------
# Coverage of the parameter space

@dataclass(frozen=True, eq=False)
class CoverageResult:
    covered: bool | None  # None: undecided
    uncovered: np.ndarray | None
    exact: bool
    cells: int = 0
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return bool(self.covered)


def projected_parameter_cone(branch: CriticalBranch) -> PolyhedralCone:
    """Image of the branch in q-space."""
    l = branch.l
    if branch.cone is None:
        return PolyhedralCone.from_generators(branch.points[:, :l], dim=l)
    rays = branch.cone.rays[:, :l]
    lin = branch.cone.lineality[:, :l]
    return PolyhedralCone.from_generators(rays, lin, dim=l)


def _cell_witness(normals: np.ndarray, signs: Sequence[int]) -> np.ndarray | None:
    """Point strictly inside the cell {σ_i h_i·q > 0}, via a small LP."""
    k, l = normals.shape
    if k == 0:
        return np.eye(l)[0]
    # maximize t s.t. σ_i h_i·q >= t, -1 <= q <= 1, t <= 1
    a_ub = np.hstack([-(np.array(signs)[:, None] * normals), np.ones((k, 1))])
    res = linprog(
        c=np.r_[np.zeros(l), -1.0],
        A_ub=a_ub,
        b_ub=np.zeros(k),
        bounds=[(-1, 1)] * l + [(None, 1)],
        method="highs",
    )
    if res.status != 0 or -res.fun <= 1e-9:
        return None
    return res.x[:l]


def check_direction_coverage(branches: Sequence[CriticalBranch], l: int, seed: int = 0, samples: int = 1000) -> CoverageResult:
    """Whether every q ∈ ℝˡ admits a critical direction.

    The facet normals of the projected branch cones cut ℝˡ into open cells on
    which membership in each (full-dimensional) projected cone is constant, so
    one witness per cell decides coverage for l <= 3.  Larger l falls back to
    random sampling and cannot certify coverage.
    """
    cones = [projected_parameter_cone(b) for b in branches]
    exact = all(b.certified for b in branches)

    def covered(q):
        return any(c.contains(q, 1e-9) for c in cones)

    if l > 3:
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            q = rng.normal(size=l)
            q /= np.linalg.norm(q)
            if not covered(q):
                return CoverageResult(False, q, exact)
        return CoverageResult(None, None, False, samples, ("coverage undecided: sampled only",))

    normals = [c.rows for c in cones] + [c.eqs for c in cones]
    normals = normalize_rows(np.vstack(normals)) if normals else np.zeros((0, l))
    canon = [h if next(x for x in h if abs(x) > 1e-12) > 0 else -h for h in normals]
    normals = unique_rows(np.array(canon).reshape(-1, l))
    k = normals.shape[0]
    cells = 0

    # depth-first sign assignment with LP pruning
    def dfs(signs):
        nonlocal cells
        if _cell_witness(normals[: len(signs)], signs) is None:
            return None
        if len(signs) == k:
            cells += 1
            q = _cell_witness(normals, signs)
            return None if covered(q) else q
        for sgn in (1, -1):
            bad = dfs(signs + [sgn])
            if bad is not None:
                return bad
        return None

    bad = dfs([])
    if bad is not None:
        return CoverageResult(False, bad, exact, cells)
    return CoverageResult(True, None, exact, cells)

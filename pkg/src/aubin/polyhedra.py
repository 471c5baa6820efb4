"""Polyhedral cones with halfspace and generator descriptions, and their faces."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .linalg import as_matrix, extreme_rays, null_space, normalize_rows, row_basis, unique_rows

GEOM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PolyhedralCone:
    """The cone ``{x : rows·x <= 0, eqs·x = 0}`` in ℝ^dim.

    Generators (extreme rays of the pointed part plus an orthonormal basis of
    the lineality space) are computed on demand and cached.
    """

    dim: int
    rows: np.ndarray
    eqs: np.ndarray

    @classmethod
    def from_hrep(cls, rows=None, eqs=None, dim: int | None = None) -> "PolyhedralCone":
        if dim is None:
            for m in (rows, eqs):
                if m is not None and np.size(m):
                    dim = np.asarray(m).reshape(np.shape(m)[0], -1).shape[1]
                    break
            else:
                raise ValueError("dimension required for a cone without constraints")
        return cls(dim, normalize_rows(as_matrix(rows, dim)), row_basis(as_matrix(eqs, dim)))

    @classmethod
    def from_generators(cls, rays=None, lineality=None, dim: int | None = None) -> "PolyhedralCone":
        """The cone ``cone(rays) + span(lineality)``, converted to halfspaces via its polar."""
        polar = cls.from_hrep(rows=rays, eqs=lineality, dim=dim)
        return cls(polar.dim, polar.rays, polar.lineality)

    @classmethod
    def whole_space(cls, dim: int) -> "PolyhedralCone":
        return cls(dim, np.zeros((0, dim)), np.zeros((0, dim)))

    @cached_property
    def _vrep(self) -> tuple[np.ndarray, np.ndarray]:
        d = self.dim
        z = null_space(self.eqs, d)  # d × k
        if z.shape[1] == 0:
            return np.zeros((0, d)), np.zeros((0, d))
        m = self.rows @ z
        lz = null_space(m, z.shape[1])
        lineality = (z @ lz).T
        w = null_space(lz.T, z.shape[1]) if lz.shape[1] else np.eye(z.shape[1])
        if w.shape[1] == 0:
            return np.zeros((0, d)), lineality.reshape(-1, d)
        b = normalize_rows(m @ w)
        t = extreme_rays(b, GEOM_TOL)
        rays = normalize_rows((z @ w @ t.T).T) if t.size else np.zeros((0, d))
        return rays.reshape(-1, d), lineality.reshape(-1, d)

    @property
    def rays(self) -> np.ndarray:
        return self._vrep[0]

    @property
    def lineality(self) -> np.ndarray:
        return self._vrep[1]

    def generators(self) -> list[np.ndarray]:
        """Rays followed by both signs of each lineality basis vector."""
        gens = list(self.rays)
        for v in self.lineality:
            gens.extend((v, -v))
        return gens

    @property
    def is_zero(self) -> bool:
        return self.rays.shape[0] == 0 and self.lineality.shape[0] == 0

    def contains(self, x, tol: float = GEOM_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        scale = max(1.0, float(np.linalg.norm(x)))
        ok_rows = self.rows.shape[0] == 0 or np.all(self.rows @ x <= tol * scale)
        ok_eqs = self.eqs.shape[0] == 0 or np.all(np.abs(self.eqs @ x) <= tol * scale)
        return bool(ok_rows and ok_eqs)

    def polar(self) -> "PolyhedralCone":
        return PolyhedralCone.from_hrep(rows=self.rays, eqs=self.lineality, dim=self.dim)

    def intersect(self, rows=None, eqs=None) -> "PolyhedralCone":
        r = np.vstack([self.rows, as_matrix(rows, self.dim)])
        e = np.vstack([self.eqs, as_matrix(eqs, self.dim)])
        return PolyhedralCone.from_hrep(r, e, dim=self.dim)

    def has_positive(self, index: int, tol: float = GEOM_TOL) -> bool:
        """Whether the cone holds a point with coordinate ``index`` > 0."""
        for g in self.generators():
            if g[index] > tol * max(1.0, float(np.linalg.norm(g))):
                return True
        return False

    def interior_point(self, rng: np.random.Generator | None = None) -> np.ndarray:
        """A point of the relative interior (positive combination of all generators)."""
        if rng is None:
            coef_r = np.ones(self.rays.shape[0])
            coef_l = np.zeros(self.lineality.shape[0])
        else:
            coef_r = rng.uniform(1.0, 2.0, self.rays.shape[0])
            coef_l = rng.uniform(-1.0, 1.0, self.lineality.shape[0])
        return coef_r @ self.rays + coef_l @ self.lineality if (self.rays.size or self.lineality.size) else np.zeros(self.dim)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Random points: nonnegative combinations of rays plus lineality terms."""
        pts = np.zeros((count, self.dim))
        if self.rays.shape[0]:
            pts += rng.exponential(1.0, (count, self.rays.shape[0])) @ self.rays
        if self.lineality.shape[0]:
            pts += rng.normal(size=(count, self.lineality.shape[0])) @ self.lineality
        return pts

    def same_as(self, other: "PolyhedralCone", tol: float = 1e-8) -> bool:
        """Set equality, checked on generators in both directions."""
        if self.dim != other.dim:
            return False
        return all(other.contains(g, tol) for g in self.generators()) and all(
            self.contains(g, tol) for g in other.generators()
        )

    def __repr__(self) -> str:
        return (
            f"PolyhedralCone(dim={self.dim}, rows={self.rows.shape[0]}, eqs={self.eqs.shape[0]}, "
            f"rays={self.rays.shape[0]}, lineality={self.lineality.shape[0]})"
        )


@dataclass(frozen=True, eq=False)
class Face:
    """A face of a cone: its tight inequality rows, spanning rays and a relative-interior point."""

    active: tuple[int, ...]
    rays: np.ndarray
    lineality: np.ndarray
    witness: np.ndarray

    def as_cone(self, dim: int) -> PolyhedralCone:
        return PolyhedralCone.from_generators(self.rays, self.lineality, dim=dim)


def enumerate_faces(cone: PolyhedralCone, tol: float = GEOM_TOL) -> list[Face]:
    """All faces of ``cone``, sorted by their active row sets.

    A face is determined by the extreme rays it contains; starting from the
    whole cone, each face is cut with one further inequality at a time.
    """
    rays, lin = cone.rays, cone.lineality
    m = cone.rows.shape[0]
    tight = np.abs(cone.rows @ rays.T) <= tol if rays.size else np.zeros((m, 0), dtype=bool)

    def make(subset: frozenset[int]) -> Face:
        idx = sorted(subset)
        r = rays[idx] if idx else np.zeros((0, cone.dim))
        active = tuple(i for i in range(m) if all(tight[i, j] for j in idx))
        witness = r.sum(axis=0) if idx else np.zeros(cone.dim)
        return Face(active, r, lin, witness)

    start = frozenset(range(rays.shape[0]))
    seen = {start}
    queue = [start]
    while queue:
        current = queue.pop()
        for i in range(m):
            sub = frozenset(j for j in current if tight[i, j])
            if sub != current and sub not in seen:
                seen.add(sub)
                queue.append(sub)
    faces = [make(s) for s in seen]
    faces.sort(key=lambda f: (len(f.active), f.active))
    return faces


def unique_cones(cones: list[PolyhedralCone]) -> list[int]:
    """Indices of the first occurrence of each distinct cone."""
    keep: list[int] = []
    for i, c in enumerate(cones):
        if not any(cones[k].same_as(c) for k in keep):
            keep.append(i)
    return keep


__all__ = ["PolyhedralCone", "Face", "enumerate_faces", "unique_cones", "GEOM_TOL", "unique_rows"]

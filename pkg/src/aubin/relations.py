"""Set-valued linear relations as finite unions of polyhedral cones.

A :class:`Relation` describes ``b ∈ F(a)`` for a positively homogeneous map
whose graph is a finite union of polyhedral cones (each a :class:`Piece`,
possibly with auxiliary variables).  Coderivatives of normal-cone maps and of
projections are stored this way, and the adjoint systems are assembled from
them by stacking pieces block by block.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Sequence

import numpy as np

from .polyhedra import PolyhedralCone
from .linalg import as_matrix

NORMAL = "normal"  # (a, b) = (w, η) with η ∈ D*N(w)
PROJECTION = "projection"  # (a, b) with b ∈ D*P(a)
TANGENT = "tangent"  # (a, b) = (v, ξ) in a tangent cone to a graph


@dataclass(frozen=True, eq=False)
class Piece:
    """Polyhedral cone ``{(a, b, t) : eqs·(a,b,t) = 0, rows·(a,b,t) <= 0}``.

    ``a`` and ``b`` live in ℝ^dim, ``t`` collects ``n_aux`` auxiliary variables.
    ``strict`` lists rows that hold strictly on the relative interior the
    piece stands for (used to flag closure-only solutions).
    """

    dim: int
    eqs: np.ndarray
    rows: np.ndarray
    n_aux: int = 0
    label: str = ""
    params: tuple = ()
    strict: np.ndarray | None = None

    @property
    def width(self) -> int:
        return 2 * self.dim + self.n_aux

    @classmethod
    def build(cls, dim: int, eqs=None, rows=None, n_aux: int = 0, **kw) -> "Piece":
        width = 2 * dim + n_aux
        return cls(dim, as_matrix(eqs, width), as_matrix(rows, width), n_aux, **kw)

    def cone(self) -> PolyhedralCone:
        return PolyhedralCone.from_hrep(self.rows, self.eqs, dim=self.width)

    def contains(self, a, b, tol: float = 1e-9) -> bool:
        """Whether some auxiliary ``t`` puts ``(a, b, t)`` in the piece."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        fixed = np.concatenate([a, b])
        # Homogenize: find (τ, t) in the cone {(τ·fixed, t)} with τ > 0.
        k = fixed.size
        lift = np.zeros((self.width, 1 + self.n_aux))
        lift[:k, 0] = fixed
        lift[k:, 1:] = np.eye(self.n_aux)
        cone = PolyhedralCone.from_hrep(self.rows @ lift, self.eqs @ lift, dim=1 + self.n_aux)
        return cone.has_positive(0, tol)

    def mapped(self, a_map: np.ndarray, b_map: np.ndarray) -> "Piece":
        """Substitute ``a = a_map·(a', b')`` and ``b = b_map·(a', b')`` (aux untouched)."""
        s = self.dim
        m = np.zeros((self.width, self.width))
        m[:s, : 2 * s] = a_map
        m[s : 2 * s, : 2 * s] = b_map
        m[2 * s :, 2 * s :] = np.eye(self.n_aux)
        strict = None if self.strict is None else self.strict @ m
        return replace(self, eqs=self.eqs @ m, rows=self.rows @ m, strict=strict)


@dataclass(frozen=True, eq=False)
class Relation:
    """``b ∈ F(a)`` as the union of ``pieces``.

    ``exact`` is false when the pieces are a finite sample of an infinite
    family; then an empty search result proves nothing.
    """

    dim: int
    pieces: tuple[Piece, ...]
    form: str = NORMAL
    exact: bool = True
    note: str = ""
    info: dict = field(default_factory=dict)

    def to_form(self, form: str) -> "Relation":
        """Rewrite between normal-cone and projection coderivative variables.

        η ∈ D*N(w) holds exactly when −w ∈ D*P(−w−η), so the projection-side
        pair is (a, b) = (−w−η, −w) and conversely (w, η) = (−b, b−a).
        """
        if form == self.form:
            return self
        s = self.dim
        eye, zero = np.eye(s), np.zeros((s, s))
        if self.form == NORMAL and form == PROJECTION:
            # old (w, η) in terms of new (a, b)
            old_a = np.hstack([zero, -eye])
            old_b = np.hstack([-eye, eye])
        elif self.form == PROJECTION and form == NORMAL:
            # old (a, b) in terms of new (w, η)
            old_a = np.hstack([-eye, -eye])
            old_b = np.hstack([-eye, zero])
        else:
            raise ValueError(f"cannot convert {self.form} relation to {form}")
        pieces = tuple(p.mapped(old_a, old_b) for p in self.pieces)
        return replace(self, pieces=pieces, form=form)

    def contains(self, a, b, tol: float = 1e-9) -> bool:
        return any(p.contains(a, b, tol) for p in self.pieces)


def stack_pieces(
    combo: Sequence[Piece],
    a_maps: Sequence[np.ndarray],
    b_maps: Sequence[np.ndarray],
    base_eqs: np.ndarray,
    base_rows: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Lift one piece per block onto a global variable ``x`` plus auxiliaries.

    Block j reads ``a_j = a_maps[j]·x`` and ``b_j = b_maps[j]·x``.  Returns the
    global (eqs, rows, strict rows, total width).
    """
    base = base_eqs.shape[1]
    width = base + sum(p.n_aux for p in combo)
    eqs = [np.hstack([base_eqs, np.zeros((base_eqs.shape[0], width - base))])]
    rows = []
    strict = []
    if base_rows is not None and base_rows.shape[0]:
        rows.append(np.hstack([base_rows, np.zeros((base_rows.shape[0], width - base))]))
    offset = base
    for piece, am, bm in zip(combo, a_maps, b_maps):
        s = piece.dim

        def lift(mat):
            out = np.zeros((mat.shape[0], width))
            out[:, :base] = mat[:, :s] @ am + mat[:, s : 2 * s] @ bm
            out[:, offset : offset + piece.n_aux] = mat[:, 2 * s :]
            return out

        eqs.append(lift(piece.eqs))
        rows.append(lift(piece.rows))
        if piece.strict is not None:
            strict.append(lift(piece.strict))
        offset += piece.n_aux
    cat = lambda ms: np.vstack(ms) if ms else np.zeros((0, width))  # noqa: E731
    return cat(eqs), cat(rows), cat(strict), width


def piece_combinations(relations: Sequence[Relation]):
    """All choices of one piece per relation."""
    return product(*(r.pieces for r in relations))


def find_nonzero(cone: PolyhedralCone, proj: np.ndarray, tol: float = 1e-9) -> np.ndarray | None:
    """A generator of ``cone`` whose image under ``proj`` is nonzero, if any."""
    for g in cone.generators():
        if np.linalg.norm(proj @ g) > tol * max(1.0, np.linalg.norm(g)):
            return g
    return None

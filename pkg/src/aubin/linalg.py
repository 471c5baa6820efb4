"""Small dense linear-algebra helpers shared by the cone and relation code."""

from __future__ import annotations

from itertools import combinations

import numpy as np
import scipy.linalg

RANK_TOL = 1e-10


def as_matrix(a, ncols: int) -> np.ndarray:
    """Coerce to a 2-D float array with ``ncols`` columns (empty input allowed)."""
    if a is None:
        return np.zeros((0, ncols))
    m = np.asarray(a, dtype=float)
    if m.size == 0:
        return np.zeros((0, ncols))
    return m.reshape(-1, ncols)


def null_space(m: np.ndarray, ncols: int | None = None, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (as columns) of ``{x : m x = 0}``."""
    if ncols is None:
        ncols = m.shape[1]
    if ncols == 0:
        return np.zeros((0, 0))
    if m.shape[0] == 0:
        return np.eye(ncols)
    return scipy.linalg.null_space(m, rcond=tol)


def rank(m: np.ndarray, tol: float = RANK_TOL) -> int:
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0])))


def row_basis(m: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal rows spanning the row space of ``m``."""
    if m.shape[0] == 0:
        return np.zeros((0, m.shape[1]))
    _, s, vt = np.linalg.svd(m, full_matrices=False)
    k = int(np.sum(s > tol * max(1.0, s[0]))) if s.size else 0
    return vt[:k]


def normalize_rows(m: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """Scale rows to unit length and drop (numerically) zero rows."""
    if m.shape[0] == 0:
        return m
    norms = np.linalg.norm(m, axis=1)
    keep = norms > tol
    return m[keep] / norms[keep, None]


def unique_rows(m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Drop rows equal (within ``tol``) to an earlier row."""
    kept: list[np.ndarray] = []
    for row in m:
        if not any(np.linalg.norm(row - k) <= tol for k in kept):
            kept.append(row)
    return np.array(kept).reshape(-1, m.shape[1])


def extreme_rays(b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Extreme rays of the pointed cone ``{t : b t <= 0}`` (rows of ``b`` unit length).

    An extreme ray is cut out by r-1 linearly independent tight rows, with r the
    dimension; candidates are enumerated over row subsets.
    """
    m, r = b.shape
    if r == 0:
        return np.zeros((0, 0))
    found: list[np.ndarray] = []
    tried: set[tuple[int, ...]] = set()
    for subset in combinations(range(m), r - 1):
        sub = b[list(subset)] if subset else np.zeros((0, r))
        kernel = null_space(sub, r)
        if kernel.shape[1] != 1:
            continue
        t = kernel[:, 0]
        # Every subset of tight rows of the same ray yields the same candidate.
        tight = tuple(np.flatnonzero(np.abs(b @ t) <= tol))
        if tight in tried:
            continue
        tried.add(tight)
        for sign in (1.0, -1.0):
            cand = sign * t
            if np.all(b @ cand <= tol):
                found.append(cand)
    if not found:
        return np.zeros((0, r))
    return unique_rows(np.array(found))

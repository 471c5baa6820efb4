"""Numerical cross-checks: root finding for the generalized equation, an
empirical Lipschitz modulus of S, and sampled difference quotients of the
graph of N̂_Γ.  Nothing here feeds a verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from .chain import cone_model, prepare_reference
from .cones import LorentzProduct, OrthantNonpositive, PolyhedralHRep
from .exprs import ProblemSpec, ReferenceData, assemble_reference, compile_vector, derivative_expr
from .linalg import rank
from .lorentz import LorentzSpec, project_lorentz
from .polyhedra import PolyhedralCone
from .relations import stack_pieces

__all__ = [
    "ProbeOptions",
    "Root",
    "GraphPoint",
    "ProblemFunctions",
    "solve_ge_grid",
    "sample_aubin_modulus",
    "ModulusEstimate",
    "in_normal_graph",
    "graph_sampler",
    "brute_force_tangent",
    "distance_to_tangent_set",
]

NEWTON_MAX_ITER = 100
NEWTON_HALVINGS = 30
NEWTON_TOL = 1e-12
ROOT_TOL = 1e-9
STALL_WINDOW = 10


@dataclass(frozen=True)
class ProbeOptions:
    radius: float = 0.05
    samples: int = 200
    neighborhood: float = 0.2
    resolution: int = 4
    seed: int = 0
    pool: int = 40  # distinct parameters the pairs are drawn from

    def __post_init__(self):
        if self.radius <= 0 or self.neighborhood <= 0:
            raise ValueError("radius and neighborhood must be positive")
        if self.samples < 1 or self.resolution < 1 or self.pool < 2:
            raise ValueError("samples and resolution must be >= 1, pool >= 2")


class ProblemFunctions:
    """Compiled H, ∇ₓH, g, ∇g and ∇²g of a problem."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        order = spec.parameters + spec.variables
        n, s = spec.n, spec.s
        self.l, self.n, self.s = spec.l, n, s
        self._p0 = np.zeros(spec.l)  # g does not depend on p
        self._h = compile_vector(spec.H, order)
        self._dhx = compile_vector([derivative_expr(h, x) for h in spec.H for x in spec.variables], order, (n, n))
        grads = [derivative_expr(gj, x) for gj in spec.g for x in spec.variables]
        self._g = compile_vector(spec.g, order)
        self._jac = compile_vector(grads, order, (s, n))
        self._hess = compile_vector(
            [derivative_expr(d, y) for d in grads for y in spec.variables], order, (s, n, n)
        )

    def _v(self, p, x):
        return np.concatenate([np.ravel(p), x])

    def H(self, p, x):
        return self._h(self._v(p, x))

    def dHx(self, p, x):
        return self._dhx(self._v(p, x))

    def g(self, x):
        return self._g(self._v(self._p0, x))

    def jac_g(self, x):
        return self._jac(self._v(self._p0, x))

    def hess_g(self, x):
        return self._hess(self._v(self._p0, x))


# --------------------------------------------------------------------------
# Activity patterns

class _Polyhedral:
    """Rows A_I active: A_I z = 0, λ = A_Iᵀμ, μ >= 0."""

    def __init__(self, a: np.ndarray, idx: tuple[int, ...], sl: slice):
        self.a, self.idx, self.sl = a, idx, sl
        self.ai = a[list(idx)] if idx else np.zeros((0, a.shape[1]))
        self.n_extra = len(idx)
        self.label = f"active{idx}"

    def lam(self, z, e):
        return self.ai.T @ e

    def dlam(self, z, e):
        return np.zeros((self.a.shape[1], z.size)), self.ai.T

    def cons(self, z, e):
        return self.ai @ z

    def dcons(self, z, e):
        return self.ai, np.zeros((self.n_extra, self.n_extra))

    def feasible(self, z, e, tol):
        return bool(np.all(e >= -tol) and np.all(self.a @ z <= tol))


class _LorentzPiece:
    """One of: g_j interior (λ_j = 0), apex (g_j = 0), boundary (λ_j = −μ Q g_j)."""

    def __init__(self, spec: LorentzSpec, kind: str, sl: slice):
        self.spec, self.kind, self.sl = spec, kind, sl
        s = spec.dim
        self.q = spec.outer_matrix(np.diag(np.r_[-np.ones(s - 1), 1.0]))
        self.n_extra = {"interior": 0, "apex": s, "boundary": 1}[kind]
        self.label = kind

    def lam(self, z, e):
        if self.kind == "interior":
            return np.zeros_like(z)
        if self.kind == "apex":
            return e
        return -e[0] * self.q @ z

    def dlam(self, z, e):
        s = z.size
        if self.kind == "interior":
            return np.zeros((s, s)), np.zeros((s, 0))
        if self.kind == "apex":
            return np.zeros((s, s)), np.eye(s)
        return -e[0] * self.q, -(self.q @ z)[:, None]

    def cons(self, z, e):
        if self.kind == "interior":
            return np.zeros(0)
        if self.kind == "apex":
            return z
        return np.array([z @ self.q @ z])

    def dcons(self, z, e):
        s = z.size
        if self.kind == "interior":
            return np.zeros((0, s)), np.zeros((0, 0))
        if self.kind == "apex":
            return np.eye(s), np.zeros((s, s))
        return 2 * (self.q @ z)[None, :], np.zeros((1, 1))

    def feasible(self, z, e, tol):
        zi = self.spec.inner(z)
        in_k = zi[-1] >= np.linalg.norm(zi[:-1]) - tol
        if self.kind == "interior":
            return bool(in_k)
        if self.kind == "apex":
            ei = self.spec.inner(-e)
            return bool(ei[-1] >= np.linalg.norm(ei[:-1]) - tol)
        return bool(in_k and e[0] >= -tol)


def _block_patterns(cone) -> list[list]:
    """Per block, the list of activity pieces."""
    if isinstance(cone, (OrthantNonpositive, PolyhedralHRep)):
        a = cone.hrep()
        s = a.shape[1]
        sl = slice(0, s)
        opts = []
        for k in range(0, min(a.shape[0], s) + 1):
            for idx in combinations(range(a.shape[0]), k):
                if k == 0 or rank(a[list(idx)]) == k:
                    opts.append(_Polyhedral(a, idx, sl))
        return [opts]
    if isinstance(cone, LorentzProduct):
        out = []
        for dim, sl in zip(cone.blocks, cone.slices()):
            spec = LorentzSpec(dim, cone.axis)
            kinds = ("interior", "apex") if dim == 1 else ("interior", "apex", "boundary")
            out.append([_LorentzPiece(spec, k, sl) for k in kinds])
        return out
    raise TypeError(f"unsupported cone {cone!r}")


class _System:
    """Square smooth system of one activity pattern over y = (x, extras)."""

    def __init__(self, fns: ProblemFunctions, pieces, p):
        self.fns, self.pieces, self.p = fns, pieces, np.atleast_1d(np.asarray(p, float))
        self.n = fns.n
        self.offsets = np.cumsum([0] + [pc.n_extra for pc in pieces])
        self.size = self.n + int(self.offsets[-1])
        self.label = tuple(pc.label for pc in pieces)

    def split(self, y):
        x = y[: self.n]
        extras = [y[self.n + a : self.n + b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]
        return x, extras

    def lam(self, y):
        x, extras = self.split(y)
        z = self.fns.g(x)
        lam = np.zeros(self.fns.s)
        for pc, e in zip(self.pieces, extras):
            lam[pc.sl] = pc.lam(z[pc.sl], e)
        return lam

    def residual(self, y):
        x, extras = self.split(y)
        z = self.fns.g(x)
        lam = self.lam(y)
        parts = [self.fns.H(self.p, x) + self.fns.jac_g(x).T @ lam]
        parts += [pc.cons(z[pc.sl], e) for pc, e in zip(self.pieces, extras)]
        return np.concatenate(parts)

    def jacobian(self, y):
        x, extras = self.split(y)
        fns, n = self.fns, self.n
        z, jac = fns.g(x), fns.jac_g(x)
        lam = self.lam(y)
        top = np.zeros((n, self.size))
        top[:, :n] = fns.dHx(self.p, x) + np.tensordot(lam, fns.hess_g(x), axes=1)
        rows = [top]
        for k, (pc, e) in enumerate(zip(self.pieces, extras)):
            zj, jj = z[pc.sl], jac[pc.sl]
            dl_dz, dl_de = pc.dlam(zj, e)
            a, b = n + self.offsets[k], n + self.offsets[k + 1]
            top[:, :n] += jj.T @ dl_dz @ jj
            top[:, a:b] += jj.T @ dl_de
            dc_dz, dc_de = pc.dcons(zj, e)
            row = np.zeros((dc_dz.shape[0], self.size))
            row[:, :n] = dc_dz @ jj
            row[:, a:b] = dc_de
            rows.append(row)
        return np.vstack(rows)

    def feasible(self, y, tol):
        x, extras = self.split(y)
        z = self.fns.g(x)
        return all(pc.feasible(z[pc.sl], e, tol) for pc, e in zip(self.pieces, extras))


def _newton(system: _System, y0: np.ndarray) -> np.ndarray | None:
    """Damped Newton; ``None`` when it stalls before reaching NEWTON_TOL."""
    y = y0.astype(float)
    r = system.residual(y)
    norm = np.linalg.norm(r)
    history = []
    for it in range(NEWTON_MAX_ITER):
        if norm <= NEWTON_TOL:
            return y
        history.append(norm)
        # stalled: under 1% progress over ten iterations
        if it >= STALL_WINDOW and norm > 0.99 * history[it - STALL_WINDOW] and norm > ROOT_TOL:
            return None
        step = np.linalg.lstsq(system.jacobian(y), -r, rcond=None)[0]
        t = 1.0
        for _ in range(NEWTON_HALVINGS + 1):
            trial = y + t * step
            rt = system.residual(trial)
            nt = np.linalg.norm(rt)
            if np.isfinite(nt) and nt < norm:
                break
            t *= 0.5
        else:
            return y if norm <= ROOT_TOL else None
        y, r, norm = trial, rt, nt
    return y if norm <= ROOT_TOL else None


@dataclass(frozen=True)
class Root:
    x: tuple[float, ...]
    lam: tuple[float, ...]
    pattern: tuple[str, ...]
    residual: float


def solve_ge_grid(
    spec: ProblemSpec,
    p,
    box: Sequence[tuple[float, float]],
    resolution: int = 5,
    fns: ProblemFunctions | None = None,
    tol: float = ROOT_TOL,
) -> list[Root]:
    """All roots of 0 ∈ H(p,x) + ∇g(x)ᵀλ, λ ∈ N_D(g(x)), found from grid seeds in ``box``.

    Each activity pattern gives a square smooth system; Newton runs from every
    grid seed and converged points passing the feasibility filters are kept.
    """
    fns = fns or ProblemFunctions(spec)
    box = np.asarray(box, dtype=float)
    axes = [np.linspace(lo, hi, resolution) if resolution > 1 else np.array([(lo + hi) / 2]) for lo, hi in box]
    seeds = np.array(list(product(*axes)))
    roots: list[Root] = []
    for pieces in product(*_block_patterns(spec.cone)):
        system = _System(fns, pieces, p)
        extra = system.size - fns.n
        # multipliers enter linearly except on Lorentz boundaries
        starts = [np.zeros(extra)]
        if any(getattr(pc, "kind", "") == "boundary" for pc in pieces):
            starts.append(np.ones(extra))
        for x0 in seeds:
            for e0 in starts:
                y = _newton(system, np.r_[x0, e0])
                if y is None:
                    continue
                x = y[: fns.n]
                if np.any(x < box[:, 0] - tol) or np.any(x > box[:, 1] + tol):
                    continue
                if not system.feasible(y, tol):
                    continue
                lam = system.lam(y)
                res = float(np.linalg.norm(fns.H(p, x) + fns.jac_g(x).T @ lam))
                if res > tol:
                    continue
                if any(np.linalg.norm(np.asarray(r.x) - x) <= 1e-7 for r in roots):
                    continue
                roots.append(Root(tuple(map(float, x)), tuple(map(float, lam)), system.label, res))
    roots.sort(key=lambda r: r.x)
    return roots


# --------------------------------------------------------------------------
# Empirical Aubin modulus

@dataclass
class ModulusEstimate:
    kappa_hat: float
    pairs: list[dict] = field(default_factory=list)
    anomalies: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kappa_hat": self.kappa_hat, "pairs": self.pairs, "anomalies": self.anomalies}


def sample_aubin_modulus(spec: ProblemSpec, opts: ProbeOptions = ProbeOptions()) -> ModulusEstimate:
    """Largest observed e(S(p₁)∩V, S(p₂)) / ‖p₁−p₂‖ over random parameter pairs.

    Pairs are drawn from a pool of ``opts.pool`` parameters sampled uniformly
    in the ball of radius ``opts.radius`` around p̄; V is the ball of radius
    ``opts.neighborhood`` around x̄ and S(p) is searched in twice that box.
    """
    rng = np.random.default_rng(opts.seed)
    fns = ProblemFunctions(spec)
    p_bar, x_bar = np.array(spec.p_ref), np.array(spec.x_ref)
    l = spec.l
    dirs = rng.normal(size=(opts.pool, l))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pool = p_bar + dirs * opts.radius * rng.uniform(size=(opts.pool, 1)) ** (1.0 / l)
    box = [(c - 2 * opts.neighborhood, c + 2 * opts.neighborhood) for c in x_bar]
    sections = []
    for p in pool:
        roots = solve_ge_grid(spec, p, box, opts.resolution, fns)
        sections.append(np.array([r.x for r in roots]).reshape(-1, spec.n))
    in_v = [sec[np.linalg.norm(sec - x_bar, axis=1) <= opts.neighborhood] for sec in sections]
    est = ModulusEstimate(0.0)
    for i, sec in enumerate(in_v):
        if sec.shape[0] == 0:
            est.anomalies.append({"p": pool[i].tolist(), "kind": "empty section S(p)∩V"})
    for _ in range(opts.samples):
        i, j = rng.choice(opts.pool, size=2, replace=False)
        if in_v[i].shape[0] == 0 or sections[j].shape[0] == 0:
            continue
        d = np.linalg.norm(in_v[i][:, None, :] - sections[j][None, :, :], axis=2)
        excess = float(d.min(axis=1).max())
        gap = float(np.linalg.norm(pool[i] - pool[j]))
        ratio = excess / gap if gap > 0 else 0.0
        est.pairs.append({"p1": pool[i].tolist(), "p2": pool[j].tolist(), "excess": excess, "ratio": ratio})
        est.kappa_hat = max(est.kappa_hat, ratio)
    return est


# --------------------------------------------------------------------------
# Graph of N̂_Γ: membership, sampling, difference quotients

def _normal_coefficients(cone, z, lam, tol):
    """Whether λ ∈ N_D(z) for the supported cone types."""
    if isinstance(cone, (OrthantNonpositive, PolyhedralHRep)):
        a = cone.hrep()
        if np.any(a @ z > tol):
            return False
        act = np.abs(a @ z) <= tol * max(1.0, float(np.linalg.norm(z)))
        if not act.any():
            return bool(np.linalg.norm(lam) <= tol)
        coef, res = nnls(a[act].T, lam)
        return bool(res <= tol * max(1.0, float(np.linalg.norm(lam))))
    if isinstance(cone, LorentzProduct):
        for dim, sl in zip(cone.blocks, cone.slices()):
            spec = LorentzSpec(dim, cone.axis)
            zj, lj = z[sl], lam[sl]
            # λ ∈ N_K(z) ⟺ z = P_K(z + λ)
            if np.linalg.norm(project_lorentz(spec, zj + lj) - zj) > tol * max(1.0, float(np.linalg.norm(zj + lj))):
                return False
        return True
    raise TypeError(f"unsupported cone {cone!r}")


def in_normal_graph(fns: ProblemFunctions, cone, x, x_star, tol: float = 1e-9) -> bool:
    """Whether x* ∈ N̂_Γ(x), i.e. x* = ∇g(x)ᵀλ for some λ ∈ N_D(g(x))."""
    x = np.asarray(x, float)
    x_star = np.asarray(x_star, float)
    z, jac = fns.g(x), fns.jac_g(x)
    lam, *_ = np.linalg.lstsq(jac.T, x_star, rcond=None)
    if np.linalg.norm(jac.T @ lam - x_star) > tol * max(1.0, float(np.linalg.norm(x_star))):
        return False
    return _normal_coefficients(cone, z, lam, tol)


@dataclass(frozen=True)
class GraphPoint:
    x: np.ndarray
    x_star: np.ndarray


def _project_onto(fn: Callable, jac: Callable, x0: np.ndarray, scale: float, iters: int = 50) -> np.ndarray | None:
    """Gauss-Newton projection of x0 onto {fn(x) = 0} (minimal-norm steps).

    ``scale`` is the size of the displacement being resolved; the residual
    must end far below it.
    """
    x = x0.copy()
    tol = 1e-12 * scale
    for _ in range(iters):
        r = fn(x)
        if np.linalg.norm(r) <= tol:
            return x
        x = x - np.linalg.lstsq(jac(x), r, rcond=None)[0]
    return x if np.linalg.norm(fn(x)) <= tol else None


def graph_sampler(spec: ProblemSpec, ref: ReferenceData | None = None):
    """Random points of Gr N̂_Γ at distance O(t) from (x̄, x̄*).

    Returns ``sample(rng, t) -> GraphPoint | None``.  A random activity
    pattern is drawn, x is x̄ + t·d pulled back onto the pattern's manifold,
    and λ is λ̄ plus an O(t) perturbation inside the pattern's normal cone.
    """
    fns = ProblemFunctions(spec)
    ref = prepare_reference(ref or assemble_reference(spec))
    model = cone_model(ref)
    x_bar, lam_bar = ref.x, ref.multiplier
    blocks = _block_patterns(spec.cone)
    n = spec.n

    def sample(rng: np.random.Generator, t: float) -> GraphPoint | None:
        pieces = [opts[rng.integers(len(opts))] for opts in blocks]
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        x0 = x_bar + t * d

        def cons(x):
            z = fns.g(x)
            parts = []
            for pc in pieces:
                if isinstance(pc, _Polyhedral):
                    parts.append(pc.ai @ z[pc.sl])
                elif pc.kind == "apex":
                    parts.append(z[pc.sl])
                elif pc.kind == "boundary":
                    zi = pc.spec.inner(z[pc.sl])
                    parts.append([zi[-1] - np.linalg.norm(zi[:-1])])
            return np.concatenate([np.ravel(p) for p in parts]) if parts else np.zeros(0)

        def cons_jac(x):
            z, jac = fns.g(x), fns.jac_g(x)
            rows = []
            for pc in pieces:
                if isinstance(pc, _Polyhedral):
                    rows.append(pc.ai @ jac[pc.sl])
                elif pc.kind == "apex":
                    rows.append(jac[pc.sl])
                elif pc.kind == "boundary":
                    zi = pc.spec.inner(z[pc.sl])
                    radius = np.linalg.norm(zi[:-1])
                    grad = np.r_[-zi[:-1] / radius if radius > 0 else np.zeros(zi.size - 1), 1.0]
                    rows.append(pc.spec.outer(grad)[None, :] @ jac[pc.sl])
            return np.vstack(rows) if rows else np.zeros((0, n))

        x = x0 if cons(x0).size == 0 else _project_onto(cons, cons_jac, x0, t)
        if x is None:
            return None
        z = fns.g(x)
        lam = np.zeros(spec.s)
        for pc, blk, sl in zip(pieces, model.blocks, model.slices):
            if isinstance(pc, _Polyhedral):
                base = np.zeros(len(pc.idx))
                if pc.idx:
                    base, res = nnls(pc.ai.T, lam_bar[pc.sl])
                    if res > 1e-9:
                        return None
                mu = np.maximum(base + t * rng.exponential(size=base.size) * rng.integers(0, 2, base.size), 0.0)
                lam[pc.sl] = pc.ai.T @ mu
            elif pc.kind == "interior":
                lam[pc.sl] = 0.0
            elif pc.kind == "apex":
                r = pc.spec.outer(np.r_[rng.normal(size=pc.spec.dim - 1), 0.0])
                r = -pc.spec.outer(np.r_[pc.spec.inner(r)[:-1], np.linalg.norm(r) * rng.uniform(1.0, 2.0)])
                lam[pc.sl] = lam_bar[pc.sl] + t * r * rng.integers(0, 2)
            else:
                zq = pc.q @ z[pc.sl]
                scale = np.linalg.norm(zq)
                if scale == 0:
                    return None
                lam[pc.sl] = -(t * rng.exponential() / scale) * zq
        x_star = fns.jac_g(x).T @ lam
        if not in_normal_graph(fns, spec.cone, x, x_star, 1e-9):
            return None
        return GraphPoint(x, x_star)

    return sample


def brute_force_tangent(
    sampler: Callable,
    base: GraphPoint,
    t_list: Sequence[float],
    samples: int,
    seed: int = 0,
    reach: float = 10.0,
) -> np.ndarray:
    """Difference quotients ((x − x̄)/t, (x* − x̄*)/t) of sampled graph points.

    Points farther than ``reach``·t from the base point are discarded, so the
    quotients stay bounded.  Rows of the result are (u, u*).
    """
    rng = np.random.default_rng(seed)
    out = []
    for t in t_list:
        got, tries = 0, 0
        while got < samples and tries < 50 * samples:
            tries += 1
            pt = sampler(rng, t)
            if pt is None:
                continue
            dx, dxs = pt.x - base.x, pt.x_star - base.x_star
            if np.linalg.norm(np.r_[dx, dxs]) > reach * t:
                continue
            out.append(np.r_[dx, dxs] / t)
            got += 1
    return np.array(out)


def _tangent_generators(ref: ReferenceData) -> list[np.ndarray]:
    """Generator matrix of each tangent piece, cached on ``ref``."""
    cached = ref.extra.get("tangent_generators")
    if cached is not None:
        return cached
    model = cone_model(ref)
    n, s = ref.n, ref.s
    hess = ref.hess_contraction(ref.multiplier)
    a_maps, b_maps = [], []
    for sl in model.slices:
        k = sl.stop - sl.start
        a_maps.append(np.hstack([ref.jac_g[sl], np.zeros((k, s))]))
        b = np.zeros((k, n + s))
        b[:, n + sl.start : n + sl.stop] = np.eye(k)
        b_maps.append(b)
    emb = np.vstack([np.hstack([np.eye(n), np.zeros((n, s))]), np.hstack([hess, ref.jac_g.T])])
    out = []
    for combo in product(*(blk.tangent_pieces() for blk in model.blocks)):
        eqs, rows, _, width = stack_pieces(combo, a_maps, b_maps, np.zeros((0, n + s)))
        cone = PolyhedralCone.from_hrep(rows, eqs, dim=width)
        rays = cone.rays[:, : n + s] @ emb.T
        lin = cone.lineality[:, : n + s] @ emb.T
        # lineality directions enter with both signs so every coefficient is nonnegative
        out.append(np.vstack([rays, lin, -lin]).T.reshape(2 * n, -1))
    ref.extra["tangent_generators"] = out
    return out


def distance_to_tangent_set(ref: ReferenceData, u, u_star) -> float:
    """Euclidean distance from (u, u*) to the tangent cone of Gr N̂_Γ at (x̄, x̄*).

    The tangent cone is the union, over graph-tangent pieces of N_D, of the
    cones {(u, ∇gᵀξ + ∇²⟨λ̄,g⟩u) : (∇g u, ξ) in the piece}; the distance to
    each is a bounded least-squares problem on its generators.
    """
    y = np.r_[np.asarray(u, float), np.asarray(u_star, float)]
    best = np.inf
    for gens in _tangent_generators(ref):
        dist = float(np.linalg.norm(y)) if gens.shape[1] == 0 else nnls(gens, y)[1]
        best = min(best, dist)
    return best

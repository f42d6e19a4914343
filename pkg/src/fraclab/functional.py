"""Discrete oscillation norms, fractional seminorms and constant estimation.

Functions are piecewise constant on occupied voxels.  The seminorm double
integral is a sum over ordered voxel-center pairs; intra-voxel pairs have
|u(x)-u(y)| = 0 identically and never enter, so the kernel singularity is
avoided without any regularization.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .conditions import ExponentSet

__all__ = ["GridFunction", "SeminormEstimate", "EstimateReport",
           "oscillation_norm", "fractional_seminorm", "poincare_ratio",
           "estimate_constant", "cube_lemma_check", "log_distance_integral"]


def domain_hash(d):
    payload = d.to_json_dict()
    payload.pop("dist_field", None)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class GridFunction:
    domain: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.values) != self.domain.occupied_count():
            raise ValueError("value count does not match occupied voxel count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    def save(self, path):
        with open(path, "w") as f:
            json.dump({"domain_hash": domain_hash(self.domain),
                       "values": [f"%.17g" % v for v in self.values]},
                      f, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path, domain):
        with open(path) as f:
            d = json.load(f)
        if d["domain_hash"] != domain_hash(domain):
            raise ValueError("function file was saved for a different domain")
        return cls(domain, np.array([float(v) for v in d["values"]]))


@dataclass
class SeminormEstimate:
    value: float
    method: str
    pair_count: int
    localization: str
    std_error: float = 0.0


@dataclass
class EstimateReport:
    value: float
    method: str
    seed: int = None
    std_error: float = math.nan
    iterations: int = 0
    converged: bool = True
    details: dict = field(default_factory=dict)


def oscillation_norm(u: GridFunction, q):
    """integral over G of |u - u_G|^q (voxel midpoint rule, u_G the mean)."""
    if q < 1:
        raise ValueError("q must be >= 1")
    d = u.domain
    if d.occupied_count() == 0:
        raise ValueError("empty domain")
    h_n = (2.0**-d.J) ** d.n
    ubar = float(u.values.mean())
    return math.fsum((np.abs(u.values - ubar) ** q * h_n).tolist())


def _pair_weights(d, p, delta, localization, chunk=400):
    """Yields (i-range, weight-matrix chunk) for the ordered-pair kernel
    h^{2n} / |x_i - y_j|^{n + delta p} restricted by the localization."""
    centers = d.voxel_centers()
    h2n = ((2.0**-d.J) ** d.n) ** 2
    if localization == "full":
        radius = None
    elif isinstance(localization, (int, float)):
        radius = float(localization) * d.dist_to_boundary(centers)
    elif isinstance(localization, tuple) and localization[0] == "rho-cube":
        _, Q, rho = localization
        radius = np.full(len(centers), rho * Q.side)
    else:
        raise ValueError(f"unknown localization {localization!r}")
    N = len(centers)
    for a in range(0, N, chunk):
        b = min(a + chunk, N)
        diff = centers[a:b, None, :] - centers[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        with np.errstate(divide="ignore"):
            w = dist ** -(d.n + delta * p) * h2n
        ii = np.arange(a, b)
        w[np.arange(b - a), ii] = 0.0
        if radius is not None:
            w[dist >= radius[a:b, None]] = 0.0
        yield a, b, w


def fractional_seminorm(u: GridFunction, p, delta, localization="full"):
    """S_p(u)^p as a sum over ordered center pairs.  localization: "full",
    a tau value in (0,1], or ("rho-cube", Q, rho)."""
    if p < 1 or not (0 < delta < 1):
        raise ValueError("need p >= 1 and delta in (0,1)")
    d = u.domain
    vals = u.values
    pieces = []
    pairs = 0
    for a, b, w in _pair_weights(d, p, delta, localization):
        du = np.abs(vals[a:b, None] - vals[None, :]) ** p
        contrib = w * du
        pairs += int((w > 0).sum())
        pieces.append(math.fsum(contrib.ravel().tolist()))
    loc_tag = ("full" if localization == "full"
               else "rho-cube" if isinstance(localization, tuple)
               else "tau-localized")
    return SeminormEstimate(value=math.fsum(pieces), method="exact-pairs",
                            pair_count=pairs, localization=loc_tag)


def poincare_ratio(u: GridFunction, e: ExponentSet):
    """oscillation_norm(u,q) / seminorm^{q/p}: a lower bound for the constant
    in the localized (q,p) inequality."""
    sem = fractional_seminorm(u, e.p, e.delta, e.tau)
    if sem.value <= 0:
        raise ValueError("ratio undefined: seminorm is zero (u constant on "
                         "each interaction component)")
    return oscillation_norm(u, e.q) / sem.value ** (e.q / e.p)


# ---------------------------------------------------------------------------
# best-constant estimation at p = q = 2


def _quadratic_forms(d, e: ExponentSet):
    """Dense matrices of both quadratic forms on the largest interaction
    component.  Returns (M, L, keep) with u' M u = oscillation and
    u' L u = seminorm for u supported on the kept voxels."""
    N = d.occupied_count()
    A = np.zeros((N, N))
    for a, b, w in _pair_weights(d, 2.0, e.delta, e.tau):
        A[a:b] = w
    A = A + A.T  # symmetrized ordered-pair weights
    # interaction components; voxels that interact with nobody (or only with
    # a small clique) admit unbounded ratios and are excluded from the search
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components
    ncomp, labels = connected_components(csr_matrix(A > 0), directed=False)
    if ncomp > 1:
        sizes = np.bincount(labels)
        keep = labels == np.argmax(sizes)
    else:
        keep = np.ones(N, dtype=bool)
    A = A[np.ix_(keep, keep)]
    L = np.diag(A.sum(axis=1)) - A
    m = int(keep.sum())
    h_n = (2.0**-d.J) ** d.n
    M = h_n * (np.eye(m) - np.full((m, m), 1.0 / m))
    return M, L, keep


def estimate_constant(d, e: ExponentSet, method="eig", restarts=8, seed=0):
    """sup_u oscillation / seminorm^{q/p} over grid functions, at p = q = 2.

    eig: generalized eigenproblem on the mean-zero subspace of the largest
    interaction component.  ascent: seeded projected-gradient ascent on the
    Rayleigh quotient (cross-check; also a certified lower bound)."""
    if e.p != 2 or e.q != 2:
        raise ValueError("constant estimation is implemented for p = q = 2")
    M, L, keep = _quadratic_forms(d, e)
    m = len(M)
    if m < 2:
        raise ValueError("interaction component too small")
    # mean-zero basis
    B = np.zeros((m, m - 1))
    B[:m - 1] += np.eye(m - 1)
    B[-1] -= 1.0
    Mp = B.T @ M @ B
    Lp = B.T @ L @ B
    from scipy.linalg import eigh
    if method == "eig":
        mu = eigh(Mp, Lp, eigvals_only=True, subset_by_index=[m - 2, m - 2])
        val = float(mu[0])
        return EstimateReport(value=val, method="eig", seed=seed,
                              details={"component_size": m,
                                       "excluded_voxels": int((~keep).sum())})
    if method != "ascent":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    best = -np.inf
    best_iters = 0
    converged = True
    for _ in range(max(1, restarts)):
        v = rng.standard_normal(m - 1)
        v /= np.linalg.norm(v)
        it = 0
        pdir = None
        prev = -np.inf
        while it < 10_000:
            it += 1
            Mv = Mp @ v
            Lv = Lp @ v
            r = float(v @ Mv) / float(v @ Lv)
            g = Mv - r * Lv
            if np.linalg.norm(g) < 1e-300:
                break
            # ascend within span{v, gradient, previous direction}: the
            # optimal step in that subspace is a tiny eigenproblem, which is
            # an exact line search with momentum
            cols = [v, g] if pdir is None else [v, g, pdir]
            Qb, _ = np.linalg.qr(np.stack(cols, axis=1))
            A = Qb.T @ Mp @ Qb
            Bm = Qb.T @ Lp @ Qb
            Bm += 1e-14 * np.trace(Bm) * np.eye(len(Bm))
            w, vecs = eigh(A, Bm)
            vnew = Qb @ vecs[:, -1]
            vnew /= np.linalg.norm(vnew)
            pdir = vnew - v * float(v @ vnew)
            v = vnew
            rnew = float(w[-1])
            if rnew - prev < 1e-9 * abs(rnew):
                prev = rnew
                break
            prev = rnew
        else:
            converged = False
        final = float(v @ Mp @ v) / float(v @ Lp @ v)
        if final > best:
            best = final
            best_iters = it
    return EstimateReport(value=float(best), method="ascent", seed=seed,
                          iterations=best_iters, converged=converged,
                          details={"restarts": restarts, "component_size": m,
                                   "excluded_voxels": int((~keep).sum())})


# ---------------------------------------------------------------------------
# cube lemma and log-distance integral


def cube_lemma_check(Q, e: ExponentSet, rho, trials=16, seed=0, J_sub=4):
    """Empirical constant in the single-cube estimate: for random piecewise
    constant u on a refined grid over Q,
      max  (integral_Q |u - u_Q|^q) / (|Q|^{1 + q(delta/n - 1/p)} RHS^{q/p})
    where RHS is the pair sum restricted to |x - y| < rho l(Q).  Also reports
    the subdivision count k = ceil(sqrt(n+3)/rho) used by the constructive
    argument (two face-adjacent subcubes of side l/k fit in a rho*l ball)."""
    if not (1 <= e.q <= e.p):
        raise ValueError("need 1 <= q <= p")
    if not (0 < rho < 1):
        raise ValueError("rho must be in (0,1)")
    n = Q.n
    m = 1 << J_sub
    side = Q.side
    h = side / m
    axes = [np.asarray(Q.lo)[i] + (np.arange(m) + 0.5) * h for i in range(n)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    with np.errstate(divide="ignore"):
        w = dist ** -(n + e.delta * e.p) * (h**n) ** 2
    np.fill_diagonal(w, 0.0)
    w[dist >= rho * side] = 0.0
    volQ = side**n
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(trials):
        u = rng.standard_normal(len(centers))
        lhs = float(np.sum(np.abs(u - u.mean()) ** e.q) * h**n)
        rhs = float((w * np.abs(u[:, None] - u[None, :]) ** e.p).sum())
        ratios.append(lhs / (volQ ** (1 + e.q * (e.delta / n - 1 / e.p))
                             * rhs ** (e.q / e.p)))
    k = math.ceil(math.sqrt(n + 3) / rho)
    return EstimateReport(value=float(max(ratios)), method="random-trials",
                          seed=seed,
                          details={"k": k, "rho": rho, "J_sub": J_sub,
                                   "trials": trials,
                                   "median_ratio": float(np.median(ratios))})


def log_distance_integral(S, x, r, p, cells_per_radius=64):
    """Midpoint quadrature of max(0, log(1/dist(y,S)))^p over B(x,r), plus the
    ratio against r^n (1 + log^p(1/r)).  S is a point array or a rectangle
    set with a dist2_points method."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    m = 2 * cells_per_radius
    h = 2 * r / m
    axes = [x[i] - r + (np.arange(m) + 0.5) * h for i in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    inside = ((pts - x) ** 2).sum(axis=1) <= r * r
    pts = pts[inside]
    if hasattr(S, "dist2_points"):
        dist = np.sqrt(S.dist2_points(pts))
    else:
        from scipy.spatial import cKDTree
        dist = cKDTree(np.atleast_2d(np.asarray(S, dtype=float))).query(pts)[0]
    zero = dist <= 0
    excluded = float(zero.sum()) * h**n
    dist = dist[~zero]
    with np.errstate(divide="ignore"):
        f = np.maximum(0.0, np.log(1.0 / dist)) ** p
    value = float(f.sum() * h**n)
    denom = r**n * (1.0 + max(0.0, math.log(1.0 / r)) ** p)
    return {"value": value, "ratio": value / denom, "excluded_measure": excluded,
            "cells": int(inside.sum()), "r": r, "p": p}

"""Chain decompositions over a Whitney family.

Each cube gets a chain of star-overlapping cubes back to the root cube;
chains are stored as a parent tree (parent pointers + depths), which keeps
memory linear even for multi-million-cube decompositions.  Shadows
A(W) = {Q : A is on the chain of Q} are then exactly the subtrees, and all
shadow statistics reduce to bottom-up subtree aggregation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .whitney import WhitneyDecomposition, whitney_decompose

__all__ = ["ChainDecomposition", "ChainClassification", "BallChain",
           "build_chain_decomposition", "shadow_volume", "classify_wjk",
           "estimate_sjohn", "build_ball_chain"]

_BIG_N = 2_000_000  # above this, never materialize the edge list


def _stars_overlap(W, a, b):
    ga, gb = int(W.gen[a]), int(W.gen[b])
    gmax = max(ga, gb)
    sa, sb = 1 << (gmax - ga), 1 << (gmax - gb)
    Ka, Kb = W.corner[a], W.corner[b]
    A_lo, A_hi = (16 * Ka - 1) * sa, (16 * Ka + 17) * sa
    B_lo, B_hi = (16 * Kb - 1) * sb, (16 * Kb + 17) * sb
    return bool(np.all((A_lo <= B_hi) & (B_lo <= A_hi)))


class ChainDecomposition:
    """Parent-tree representation of the chain family.

    chain(i) materializes (root_id, ..., i); length(i) = depth(i) = l(C(Q*)).
    """

    def __init__(self, W: WhitneyDecomposition, parent, depth, strategy):
        self.W = W
        self.parent = np.asarray(parent, dtype=np.int64)
        self.depth = np.asarray(depth, dtype=np.int64)
        self.root_id = int(W.root_id)
        self.strategy = strategy

    def __len__(self):
        return len(self.parent)

    def chain(self, i):
        out = []
        i = int(i)
        while i >= 0:
            out.append(i)
            i = int(self.parent[i])
        out.reverse()
        return out

    @property
    def lengths(self):
        return self.depth

    def subtree_sum(self, weights):
        """For each cube A, the sum of `weights` over the subtree rooted at A
        (i.e. over the shadow A(W)).  O(N) by processing depths bottom-up."""
        vals = np.array(weights, dtype=float)
        order = np.argsort(self.depth, kind="stable")[::-1]
        d_sorted = self.depth[order]
        # group by depth, deepest first
        edges = np.nonzero(np.diff(d_sorted))[0] + 1
        blocks = np.split(order, edges)
        for blk in blocks:
            blk = blk[self.parent[blk] >= 0]
            if len(blk):
                np.add.at(vals, self.parent[blk], vals[blk])
        return vals

    def subtree_reduce(self, values, how="max"):
        """Componentwise max (or min) of `values` over each subtree."""
        vals = np.array(values, dtype=float)
        fn = np.maximum if how == "max" else np.minimum
        order = np.argsort(self.depth, kind="stable")[::-1]
        d_sorted = self.depth[order]
        edges = np.nonzero(np.diff(d_sorted))[0] + 1
        for blk in np.split(order, edges):
            blk = blk[self.parent[blk] >= 0]
            if len(blk):
                fn.at(vals, self.parent[blk], vals[blk])
        return vals

    def shadow_counts(self):
        return self.subtree_sum(np.ones(len(self)))

    def shadow_volumes(self):
        return self.subtree_sum(self.W.volume)

    def shadow_members(self, A):
        """Explicit shadow id list (subtree of A); intended for small W."""
        A = int(A)
        members = []
        mark = np.zeros(len(self), dtype=bool)
        mark[A] = True
        order = np.argsort(self.depth, kind="stable")
        for i in order:
            p = self.parent[i]
            if p >= 0 and mark[p]:
                mark[i] = True
        return np.nonzero(mark)[0]

    def contains_fit(self, d):
        """Smallest c with every Q in A(W) inside B(omega_A, c*l(A)), where
        omega_A is the boundary point nearest the midpoint of A.  Exact for
        small families, bounding-box estimate above 50k cubes."""
        W = self.W
        rects = d.boundary_rects()
        omega, _ = rects.nearest_points(W.midpoint)
        sub_lo = self.subtree_reduce(W.midpoint, "min")
        sub_hi = self.subtree_reduce(W.midpoint, "max")
        far = np.maximum(np.abs(sub_lo - omega), np.abs(sub_hi - omega))
        reach = np.sqrt((far**2).sum(axis=1))
        return float(np.max(reach / W.side))

    def to_json_dict(self):
        chains = {str(i): [int(v) for v in self.chain(i)] for i in range(len(self))}
        return {"root_id": self.root_id, "strategy": self.strategy,
                "chains": chains,
                "lengths": {str(i): int(self.depth[i]) for i in range(len(self))}}

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json_dict(cls, d, W):
        parent = np.full(len(W), -1, dtype=np.int64)
        depth = np.zeros(len(W), dtype=np.int64)
        for key, chain in d["chains"].items():
            i = int(key)
            if len(chain) > 1:
                parent[i] = chain[-2]
            depth[i] = d["lengths"][key]
        return cls(W, parent, depth, d.get("strategy", "hop-count"))

    @classmethod
    def load(cls, path, W):
        with open(path) as f:
            return cls.from_json_dict(json.load(f), W)


def _bfs_tree(W: WhitneyDecomposition, root):
    """Level-synchronous BFS with smallest-id parent choice.  Uses the
    materialized adjacency for small families and corner probing for big
    ones."""
    N = len(W)
    parent = np.full(N, -2, dtype=np.int64)
    depth = np.full(N, -1, dtype=np.int64)
    parent[root] = -1
    depth[root] = 0
    use_csr = N <= _BIG_N
    if use_csr:
        indptr, indices = W.adjacency_csr()
    frontier = np.array([root], dtype=np.int64)
    d = 0
    while len(frontier):
        d += 1
        if use_csr:
            counts = indptr[frontier + 1] - indptr[frontier]
            src = np.repeat(frontier, counts)
            dst = np.concatenate([indices[indptr[f]:indptr[f + 1]] for f in frontier]) \
                if len(frontier) else np.zeros(0, dtype=np.int64)
        else:
            src, dst = W.neighbors_of(frontier)
        new = depth[dst] < 0
        src, dst = src[new], dst[new]
        if len(dst) == 0:
            break
        # smallest source id wins as parent
        order = np.lexsort((src, dst))
        dst, src = dst[order], src[order]
        first = np.ones(len(dst), dtype=bool)
        first[1:] = dst[1:] != dst[:-1]
        dst, src = dst[first], src[first]
        parent[dst] = src
        depth[dst] = d
        frontier = np.sort(dst)
    if (depth < 0).any():
        bad = int(np.nonzero(depth < 0)[0][0])
        raise ValueError(f"adjacency graph is disconnected: cube id {bad} "
                         f"(generation {int(W.gen[bad])}) unreachable from root {root}")
    return parent, depth


def _dijkstra_tree(W: WhitneyDecomposition, root):
    """Geometric chains: shortest paths through cube midpoints by Euclidean
    length, which approximates following center curves."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra

    e = W.adjacency
    mid = W.midpoint
    wgt = np.sqrt(((mid[e[:, 0]] - mid[e[:, 1]]) ** 2).sum(axis=1))
    N = len(W)
    g = csr_matrix((np.concatenate([wgt, wgt]),
                    (np.concatenate([e[:, 0], e[:, 1]]),
                     np.concatenate([e[:, 1], e[:, 0]]))), shape=(N, N))
    dist, pred = dijkstra(g, indices=root, return_predecessors=True)
    if np.isinf(dist).any():
        bad = int(np.nonzero(np.isinf(dist))[0][0])
        raise ValueError(f"adjacency graph is disconnected: cube id {bad} unreachable")
    parent = pred.astype(np.int64)
    parent[root] = -1
    return parent


def _shortcut_tree(W, parent, root):
    """Reparent each cube to the earliest chain ancestor whose star overlaps
    its own.  At the fixed point every chain has the consecutive-only overlap
    property: any earlier ancestor does not meet the cube's star."""
    N = len(parent)
    chains = {root: (root,)}

    def chain_of(i):
        if i in chains:
            return chains[i]
        stack = []
        j = i
        while j not in chains:
            stack.append(j)
            j = int(parent[j])
        for k in reversed(stack):
            chains[k] = chains[int(parent[k])] + (k,)
        return chains[i]

    changed = True
    while changed:
        changed = False
        chains = {root: (root,)}
        for i in range(N):
            if i == root:
                continue
            ch = chain_of(i)
            for a in ch[:-2]:
                if _stars_overlap(W, a, i):
                    parent[i] = a
                    changed = True
                    chains = {root: (root,)}
                    break
    depth = np.zeros(N, dtype=np.int64)
    chains = {root: (root,)}
    for i in range(N):
        depth[i] = len(chain_of(i)) - 1
    return parent, depth


def build_chain_decomposition(W: WhitneyDecomposition, strategy="hop-count"):
    root = W.root_id
    if strategy == "hop-count":
        parent, depth = _bfs_tree(W, root)
    elif strategy == "curve-following":
        if len(W) > 200_000:
            raise ValueError("curve-following chains are only supported for "
                             "small decompositions (<= 200k cubes)")
        parent = _dijkstra_tree(W, root)
        parent, depth = _shortcut_tree(W, parent, root)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return ChainDecomposition(W, parent, depth, strategy)


def shadow_volume(cd: ChainDecomposition, A):
    A = int(A)
    if not (0 <= A < len(cd)):
        raise KeyError(f"unknown cube id {A}")
    return float(cd.shadow_volumes()[A])


# ---------------------------------------------------------------------------
# Shadow-volume classification into (j, k) buckets


@dataclass
class ChainClassification:
    sigma: int
    buckets: dict             # (j, k) -> list of cube ids
    shadow_volumes: np.ndarray
    fitted_c: float
    s: float
    lam: float

    def bucket_counts(self):
        return {jk: len(v) for jk, v in self.buckets.items()}


def classify_wjk(cd: ChainDecomposition, s, lam=None):
    """Sorts each cube A of generation j into the bucket k determined by its
    shadow volume V: 2^{-(j-k)n} <= V <= sigma * 2^{-(j-k-1)n}, with k capped
    at [j - j/s]; sigma is the smallest power of two making every cube fit."""
    if s <= 1:
        raise ValueError("s must be > 1")
    W = cd.W
    n = W.n
    if lam is None:
        lam = (W.domain.meta or {}).get("lambda", n - 1) if W.domain is not None else n - 1
    vols = cd.shadow_volumes()
    j = W.gen.astype(int)
    # natural bucket: largest k with the lower bound 2^{-(j-k)n} <= V
    k_nat = np.floor(j + np.log2(vols) / n + 1e-12).astype(int)
    k_cap = np.floor(j - j / s).astype(int)
    k = np.minimum(k_nat, k_cap)
    if (k < 0).any():
        k = np.maximum(k, 0)
    sigma_need = vols * 2.0 ** ((j - k - 1) * n)
    sigma = 1
    while sigma < float(sigma_need.max()) - 1e-12:
        sigma *= 2
        if sigma > 1 << 16:
            raise ValueError("no sigma <= 2^16 covers all shadow volumes; "
                             "chain strategy looks pathological")
    buckets = {}
    for i in range(len(W)):
        buckets.setdefault((int(j[i]), int(k[i])), []).append(i)
    # fitted constant in  #W_{j,k,sigma} <= c 2^{-kn} 2^{j(n+1+(lam-n-1)/s)}
    c = 0.0
    for (jj, kk), ids in buckets.items():
        denom = 2.0 ** (-kk * n) * 2.0 ** (jj * (n + 1 + (lam - n - 1) / s))
        c = max(c, len(ids) / denom)
    return ChainClassification(sigma=sigma, buckets=buckets, shadow_volumes=vols,
                               fitted_c=c, s=s, lam=float(lam))


# ---------------------------------------------------------------------------
# s-John parameter estimation


def _greedy_paths_samples(cd: ChainDecomposition, d):
    """(t, clearance) samples along clearance-greedy descending paths from
    every cube midpoint to the root.  The successor of a cube is its
    neighbor one BFS level closer to the root with the largest midpoint
    clearance (ties by id); t is the arc length walked from the start."""
    W = cd.W
    mid = W.midpoint
    clear = d.dist_to_boundary(mid)
    # build the greedy-successor tree: among all (child, parent-level nbr)
    # pairs choose the nbr maximizing clearance
    succ = np.full(len(W), -1, dtype=np.int64)

    def pick(src, dst):
        down = cd.depth[dst] == cd.depth[src] - 1
        src, dst = src[down], dst[down]
        order = np.lexsort((dst, -clear[dst], src))
        s_sorted, d_sorted = src[order], dst[order]
        first = np.ones(len(s_sorted), dtype=bool)
        first[1:] = s_sorted[1:] != s_sorted[:-1]
        succ[s_sorted[first]] = d_sorted[first]

    if len(W) <= _BIG_N:
        e = W.adjacency
        pick(np.concatenate([e[:, 0], e[:, 1]]),
             np.concatenate([e[:, 1], e[:, 0]]))
    else:
        # probe neighbors in blocks: each block yields the complete neighbor
        # set of its cubes, so the per-source argmax stays exact
        for lo in range(0, len(W), 500_000):
            pick(*W.neighbors_of(np.arange(lo, min(lo + 500_000, len(W)))))
    succ[cd.root_id] = -1
    # accumulate arc length along the greedy tree, walking depths top-down
    step = np.zeros(len(W))
    ok = succ >= 0
    step[ok] = np.sqrt(((mid[ok] - mid[succ[ok]]) ** 2).sum(axis=1))
    # t measured from the path start: every cube is a start; samples are the
    # (t, clearance) pairs seen while walking.  Equivalent per-sample form:
    # for each pair (start S, waypoint Q on greedy path of S),
    # t = dist_along(S..Q).  The worst (lower-envelope) sample for a given
    # waypoint is the one with the largest t, i.e. the deepest start below Q
    # in the greedy tree.
    gcd_depth = cd.depth
    order = np.argsort(gcd_depth, kind="stable")[::-1]
    # seed each start with its own clearance: the curve is extended backward
    # from the midpoint to a near-boundary point, along which the clearance
    # grows at most linearly, so this keeps the envelope honest at small t
    t_max = clear.copy()  # longest greedy arc arriving at this cube
    d_sorted = gcd_depth[order]
    edges = np.nonzero(np.diff(d_sorted))[0] + 1
    for blk in np.split(order, edges):
        blk = blk[succ[blk] >= 0]
        if len(blk):
            np.maximum.at(t_max, succ[blk], t_max[blk] + step[blk])
    return t_max, clear


def estimate_sjohn(d, center=None, J_max=None, W=None, cd=None,
                   t_lo=None, t_hi=None, bins_per_octave=2):
    """Fits dist(gamma(t), boundary) >= t^s / c along greedy paths to the
    center; returns (s_hat, c_hat) from a log-log fit of the lower envelope."""
    if W is None:
        if J_max is None:
            J_max = d.J + 1 if hasattr(d, "J") else 9
        W = whitney_decompose(d, J_max, center=center)
    if cd is None:
        cd = build_chain_decomposition(W, "hop-count")
    t, clear = _greedy_paths_samples(cd, d)
    return _fit_envelope(t, clear, t_lo, t_hi, bins_per_octave)


def _fit_envelope(t, clear, t_lo=None, t_hi=None, bins_per_octave=2):
    sel = (t > 0) & (clear > 0)
    t, clear = t[sel], clear[sel]
    # trim the extreme octave at each end: the bottom is one cube wide, the
    # top is the recovery right at the center
    if t_lo is None:
        t_lo = float(t.min()) * 4
    if t_hi is None:
        t_hi = float(t.max()) / 4
    sel = (t >= t_lo) & (t <= t_hi)
    t, clear = t[sel], clear[sel]
    if len(t) < 8:
        raise ValueError("not enough path samples for the s-John fit")
    b = np.floor(np.log2(t) * bins_per_octave).astype(int)
    b -= b.min()
    env = np.full(b.max() + 1, np.inf)
    np.minimum.at(env, b, clear)
    tb = np.full(b.max() + 1, np.inf)
    np.minimum.at(tb, b, t)
    use = np.isfinite(env)
    if use.sum() < 3:
        raise ValueError("degenerate s-John fit: fewer than 3 envelope bins")
    # generic wall cubes sit on the clear ~ min(t, inradius) line at every
    # scale; narrow necks append a staircase to the envelope, each neck
    # width contributing a flat run of bins at its floor.  The exponent is
    # the corner-to-corner slope between consecutive flats.  The terminal
    # flat is the saturation of the recovery out of the last neck, not a
    # floor, so its corner is dropped.  Without flats the domain is John
    # and a plain least-squares slope of the envelope does it.
    cmax = float(clear.max())
    idx = np.nonzero(use)[0]
    lt, le = np.log(tb[idx]), np.log(env[idx])
    corners = []
    k = 0
    while k < len(le):
        j = k
        while j + 1 < len(le) and abs(le[j + 1] - le[k]) <= 1e-9:
            j += 1
        if j > k:
            corners.append((lt[k], le[k]))
        k = j + 1
    corners = corners[:-1]
    slopes = [(y2 - y1) / (x2 - x1)
              for (x1, y1), (x2, y2) in zip(corners, corners[1:])]
    if len(corners) >= 2 and corners[-1][0] - corners[0][0] >= 0.5 * math.log(2):
        s_hat = float(max(slopes))
    else:
        fit = use & (tb <= cmax)
        if fit.sum() < 3:
            fit = use
        A = np.stack([np.log(tb[fit]), np.ones(int(fit.sum()))], axis=1)
        s_hat = float(np.linalg.lstsq(A, np.log(env[fit]), rcond=None)[0][0])
    c_hat = float(np.max(t**s_hat / clear))
    return s_hat, c_hat


# ---------------------------------------------------------------------------
# ball chains


@dataclass
class BallChain:
    x: np.ndarray
    centers: list
    radii: list
    M: float
    c_fit: float = math.nan
    checks: dict = field(default_factory=dict)


def _lens_area(c1, r1, c2, r2):
    """Area of the intersection of two disks (n=2)."""
    d = float(np.linalg.norm(np.asarray(c1) - np.asarray(c2)))
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        r = min(r1, r2)
        return math.pi * r * r
    a1 = math.acos(min(1.0, max(-1.0, (d * d + r1 * r1 - r2 * r2) / (2 * d * r1))))
    a2 = math.acos(min(1.0, max(-1.0, (d * d + r2 * r2 - r1 * r1) / (2 * d * r2))))
    return (r1 * r1 * (a1 - math.sin(2 * a1) / 2)
            + r2 * r2 * (a2 - math.sin(2 * a2) / 2))


def build_ball_chain(d, x, center, M, W=None, cd=None, J_max=None, r_stop=2.0**-40):
    """Ball chain from the center to x: balls of radius dist/(2M) along the
    chain-midpoint polyline, then a geometrically shrinking tail into x."""
    if M <= 1:
        raise ValueError("M must be > 1")
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    if d.n != 2:
        raise ValueError("ball chains are implemented for n=2 domains")
    if W is None:
        if J_max is None:
            J_max = d.J + 1 if hasattr(d, "J") else 9
        W = whitney_decompose(d, J_max, center=center)
    if cd is None:
        cd = build_chain_decomposition(W, "hop-count")
    # cube containing x
    side = W.side
    lo = W.corner * side[:, None]
    okq = np.all((lo <= x) & (x <= lo + side[:, None]), axis=1)
    qids = np.nonzero(okq)[0]
    if len(qids) == 0:
        raise ValueError(f"point {tuple(x)} lies in the truncation collar; "
                         "no Whitney cube contains it")
    q = int(qids[0])
    waypoints = [W.midpoint[i] for i in cd.chain(q)] + [x]
    waypoints[0] = center

    centers, radii = [], []
    p = waypoints[0].copy()
    seg = 1
    while True:
        dist_p = float(d.dist_to_boundary(p[None])[0])
        r = dist_p / (2 * M)
        if r <= 0:
            raise ValueError(f"ball at {tuple(p)} has zero clearance; "
                             "condition 3 unsatisfiable at this scale")
        centers.append(p.copy())
        radii.append(r)
        if seg >= len(waypoints):
            break
        # advance along the polyline by r/2
        remaining = r / 2
        while seg < len(waypoints):
            leg = waypoints[seg] - p
            L = float(np.linalg.norm(leg))
            if L > remaining:
                p = p + leg * (remaining / L)
                break
            p = waypoints[seg].copy()
            remaining -= L
            seg += 1
        else:
            break
    # geometric tail toward x
    p = centers[-1].copy()
    r = radii[-1]
    while r > r_stop and float(np.linalg.norm(p - x)) > r / 4:
        to_x = x - p
        L = float(np.linalg.norm(to_x))
        steplen = min(r / 4, L)
        p = p + to_x * (steplen / max(L, 1e-300))
        r = r / 2
        dist_p = float(d.dist_to_boundary(p[None])[0])
        if dist_p - r < M * r:
            raise ValueError(f"tail ball at {tuple(p)} violates the clearance "
                             f"condition dist >= (M+1) r")
        centers.append(p.copy())
        radii.append(r)

    bc = BallChain(x=x, centers=centers, radii=radii, M=M)
    _verify_ball_chain(bc, d)
    return bc


def _verify_ball_chain(bc: BallChain, d):
    C = np.asarray(bc.centers)
    R = np.asarray(bc.radii)
    x = bc.x
    # 1: union-vs-intersection volume of consecutive balls
    c1 = 0.0
    for i in range(len(R) - 1):
        inter = _lens_area(C[i], R[i], C[i + 1], R[i + 1])
        union = math.pi * (R[i] ** 2 + R[i + 1] ** 2) - inter
        c1 = max(c1, np.inf if inter == 0 else union / inter)
    # 2: dist(x, B_i) <= c r_i
    gap = np.linalg.norm(C - x, axis=1) - R
    c2 = float(np.max(np.maximum(gap, 0.0) / R))
    # 3: dist(B_i, boundary) >= M r_i
    clear = d.dist_to_boundary(C) - R
    ratio3 = clear / R
    ok3 = bool(np.all(ratio3 >= bc.M - 1e-9))
    # 4: |x - x_i| <= c r_i and r_i -> 0
    c4 = float(np.max(np.linalg.norm(C - x, axis=1) / R))
    # 5: bounded overlap of the balls, probed at ball centers
    cnt = (np.linalg.norm(C[:, None, :] - C[None, :, :], axis=2) < R[None, :]).sum(axis=1)
    c5 = int(cnt.max())
    bc.checks = {"c1": c1, "c2": c2, "min_clearance_ratio": float(ratio3.min()),
                 "cond3_ok": ok3, "c4": c4, "c5": c5,
                 "r_final": float(R[-1]), "balls": len(R)}
    bc.c_fit = float(max(c1, c2, c4, c5))
    return bc.checks

"""Whitney decomposition of a domain model into dyadic cubes.

Selection rule (Stein's construction): accept a dyadic cube Q iff
diam(Q) <= dist(Q, boundary) and its dyadic parent violates that lower
bound.  The upper bound dist <= 4 diam(Q) is then automatic.  Generations
beyond J_max are truncated into an explicitly measured collar.

The scan is level-by-level and fully vectorized.  Each undecided box
carries a small set of candidate boundary rectangles plus a certified
lower bound on its distance to every other rectangle; children inherit
both, so most boxes are decided without ever touching the full boundary
set again.
"""

from __future__ import annotations

import json

import numpy as np

from .boxes import DyadicCube, boxes_dist2
from .geometry import AnalyticDomain, VoxelDomain

__all__ = ["WhitneyDecomposition", "whitney_decompose", "expand_star",
           "verify_dist_est", "whitney_counting"]

_KCAND = 8


def expand_star(Q: DyadicCube):
    """Q* = (9/8)Q, as a (lo, hi) box pair."""
    return Q.star()


def _merge_faces(rects_lo, rects_hi, n):
    """Merges contiguous coplanar collinear faces into longer rectangles.
    For n=2 this collapses straight wall runs into single segments."""
    lo, hi = [], []
    flat_axis = np.argmax(rects_hi - rects_lo == 0, axis=1) if len(rects_lo) else []
    for ax in range(n):
        sel = np.nonzero((rects_hi[:, ax] - rects_lo[:, ax]) == 0)[0] if len(rects_lo) else []
        if len(sel) == 0:
            continue
        sub_lo = rects_lo[sel]
        sub_hi = rects_hi[sel]
        run_ax = (ax + 1) % n  # merge along this axis
        other = [d for d in range(n) if d != run_ax]
        order = np.lexsort([sub_lo[:, run_ax]] + [sub_lo[:, d] for d in other])
        sub_lo = sub_lo[order]
        sub_hi = sub_hi[order]
        same_line = np.all(sub_lo[1:][:, other] == sub_lo[:-1][:, other], axis=1)
        if n == 3:
            same_line &= np.all(sub_hi[1:][:, other] == sub_hi[:-1][:, other], axis=1)
        contiguous = sub_lo[1:, run_ax] == sub_hi[:-1, run_ax]
        brk = np.nonzero(~(same_line & contiguous))[0] + 1
        starts = np.concatenate([[0], brk])
        ends = np.concatenate([brk, [len(sub_lo)]])
        mlo = sub_lo[starts].copy()
        mhi = sub_hi[ends - 1].copy()
        lo.append(mlo)
        hi.append(mhi)
    if not lo:
        return rects_lo, rects_hi
    return np.concatenate(lo), np.concatenate(hi)


class _BoundaryOracle:
    """Batched exact squared distances from boxes to the boundary rectangle
    set, with k-candidate + lower-bound output for inheritance."""

    def __init__(self, rects, n):
        lo, hi = _merge_faces(rects.lo, rects.hi, n)
        self.lo = lo
        self.hi = hi
        self.count = len(lo)
        self.k = min(_KCAND, self.count)

    def query(self, blo, bhi, chunk_cost=40_000_000):
        k = self.k
        N = len(blo)
        d2c = np.empty((N, k))
        owners = np.empty((N, k), dtype=np.int32)
        lb2 = np.empty(N)
        step = max(1, chunk_cost // max(1, self.count))
        for a in range(0, N, step):
            b = min(a + step, N)
            d2 = boxes_dist2(blo[a:b, None, :], bhi[a:b, None, :],
                             self.lo[None], self.hi[None])
            if k < self.count:
                idx = np.argpartition(d2, k, axis=1)[:, :k + 1]
                part = np.take_along_axis(d2, idx, axis=1)
                order = np.argsort(part, axis=1)
                idx = np.take_along_axis(idx, order, axis=1)
                part = np.take_along_axis(part, order, axis=1)
                owners[a:b] = idx[:, :k]
                d2c[a:b] = part[:, :k]
                lb2[a:b] = part[:, k]
            else:
                order = np.argsort(d2, axis=1)
                owners[a:b] = order
                d2c[a:b] = np.take_along_axis(d2, order, axis=1)
                lb2[a:b] = np.inf
        return d2c, owners, lb2

    def dist2_for(self, blo, bhi, owners):
        """Exact distances to the listed candidate rectangles only."""
        d2 = boxes_dist2(blo[:, None, :], bhi[:, None, :],
                         self.lo[owners], self.hi[owners])
        return d2


class WhitneyDecomposition:
    """The cube family W.  Cubes are stored as parallel arrays sorted by
    (generation, corner lexicographic); the array position is the stable id.
    """

    def __init__(self, gen, corner, J_max, collar_measure, domain=None, center=None):
        self.gen = np.asarray(gen, dtype=np.int16)
        self.corner = np.asarray(corner, dtype=np.int64)
        self.n = self.corner.shape[1]
        self.J_max = int(J_max)
        self.collar_measure = float(collar_measure)
        self.domain = domain
        self._adjacency = None
        self.observed_gen_gap = None
        order = np.lexsort(tuple(self.corner[:, d] for d in range(self.n - 1, -1, -1))
                           + (self.gen,))
        self.gen = self.gen[order]
        self.corner = self.corner[order]
        self.center = np.asarray(center, dtype=float) if center is not None else None
        self.root_id = self._find_root() if center is not None else 0

    # -- basics -------------------------------------------------------------

    def __len__(self):
        return len(self.gen)

    @property
    def side(self):
        return 2.0 ** (-self.gen.astype(float))

    @property
    def volume(self):
        return self.side**self.n

    @property
    def midpoint(self):
        return (self.corner + 0.5) * self.side[:, None]

    def cube(self, i) -> DyadicCube:
        return DyadicCube(int(self.gen[i]), tuple(int(v) for v in self.corner[i]), self.n)

    @property
    def counts(self):
        gens, cnt = np.unique(self.gen, return_counts=True)
        return {int(g): int(c) for g, c in zip(gens, cnt)}

    def _find_root(self):
        """Smallest-id cube whose closed box contains the center point."""
        c = self.center
        side = self.side
        lo = self.corner * side[:, None]
        ok = np.all((lo <= c) & (c <= lo + side[:, None]), axis=1)
        ids = np.nonzero(ok)[0]
        if len(ids) == 0:
            raise ValueError(f"center point {tuple(c)} is not covered by any Whitney cube")
        return int(ids[0])

    # -- adjacency ----------------------------------------------------------

    def _keys(self, gen_val):
        sel = np.nonzero(self.gen == gen_val)[0]
        k = self.corner[sel]
        key = k[:, 0]
        for d in range(1, self.n):
            key = key * (1 << 25) + k[:, d]
        return sel, key  # key is ascending because of the lexsort

    def _keys_cached(self, gen_val):
        if not hasattr(self, "_key_cache"):
            self._key_cache = {}
        if gen_val not in self._key_cache:
            self._key_cache[gen_val] = self._keys(gen_val)
        return self._key_cache[gen_val]

    def neighbors_of(self, ids, max_gap=4):
        """Star-overlap neighbors of the given cube ids, computed by probing
        candidate corners instead of materializing the full edge list.
        Returns (src_ids, nbr_ids) with src/nbr aligned, self-pairs removed."""
        ids = np.asarray(ids, dtype=np.int64)
        gens_all = np.unique(self.gen)
        out_src, out_dst = [], []
        for gb in np.unique(self.gen[ids]):
            gb = int(gb)
            sub = ids[self.gen[ids] == gb]
            Kb = self.corner[sub]
            a_lo = 16 * Kb - 1
            a_hi = 16 * Kb + 17  # star of B, units 2^-(gb+4)
            for ga in gens_all:
                ga = int(ga)
                if abs(ga - gb) > max_gap or ga - gb > 4:
                    continue
                ids_a, keys_a = self._keys_cached(ga)
                if len(ids_a) == 0:
                    continue
                U = 1 << (4 + gb - ga)  # ga-cell size in B-star units
                c_lo = (a_lo + U - 1) // U - 1
                c_hi = a_hi // U
                spans = c_hi - c_lo
                smax = int(spans.max())
                gmax = max(ga, gb)
                sa = 1 << (gmax - ga)
                sb = 1 << (gmax - gb)
                offs = np.stack(np.meshgrid(*([np.arange(smax + 1)] * self.n),
                                            indexing="ij"), axis=-1).reshape(-1, self.n)
                for off in offs:
                    cand = c_lo + off
                    ok = np.all((off <= spans) & (cand >= 0), axis=1)
                    if not ok.any():
                        continue
                    rows = np.nonzero(ok)[0]
                    key = cand[rows, 0]
                    for d in range(1, self.n):
                        key = key * (1 << 25) + cand[rows, d]
                    pos = np.searchsorted(keys_a, key)
                    hit = (pos < len(keys_a)) & (keys_a[np.minimum(pos, len(keys_a) - 1)] == key)
                    rows = rows[hit]
                    pos = pos[hit]
                    if len(rows) == 0:
                        continue
                    Ka = self.corner[ids_a[pos]]
                    A_lo = (16 * Ka - 1) * sa
                    A_hi = (16 * Ka + 17) * sa
                    B_lo = (16 * Kb[rows] - 1) * sb
                    B_hi = (16 * Kb[rows] + 17) * sb
                    overlap = np.all((A_lo <= B_hi) & (B_lo <= A_hi), axis=1)
                    rows = rows[overlap]
                    pos = pos[overlap]
                    keep = sub[rows] != ids_a[pos]
                    out_src.append(sub[rows[keep]])
                    out_dst.append(ids_a[pos[keep]])
        if not out_src:
            return (np.zeros(0, dtype=np.int64),) * 2
        src = np.concatenate(out_src)
        dst = np.concatenate(out_dst)
        pair = src * len(self) + dst
        _, uniq = np.unique(pair, return_index=True)
        return src[uniq], dst[uniq]

    def neighbor_edges(self, max_gap=5):
        """All unordered id pairs (a, b), a_gen <= b_gen, with overlapping
        star cubes.  Exact integer interval tests."""
        gens = np.unique(self.gen)
        per_gen = {int(g): self._keys(g) for g in gens}
        edges = []
        observed_gap = 0
        for gb in gens:
            ids_b, _ = per_gen[int(gb)]
            Kb = self.corner[ids_b]
            for ga in gens[(gens <= gb) & (gens >= gb - max_gap)]:
                ids_a, keys_a = per_gen[int(ga)]
                if len(ids_a) == 0:
                    continue
                U = 1 << (4 + int(gb - ga))
                a_lo = 16 * Kb - 1
                a_hi = 16 * Kb + 17
                c_lo = (a_lo + U - 1) // U - 1
                c_hi = a_hi // U
                spans = c_hi - c_lo  # per axis, <= 2
                max_span = int(spans.max()) if len(spans) else 0
                offs = np.stack(np.meshgrid(*([np.arange(3)] * self.n), indexing="ij"),
                                axis=-1).reshape(-1, self.n)
                found_any = False
                for off in offs:
                    cand = c_lo + off
                    ok = np.all((off <= spans) & (cand >= 0), axis=1)
                    if not ok.any():
                        continue
                    rows = np.nonzero(ok)[0]
                    key = cand[rows, 0]
                    for d in range(1, self.n):
                        key = key * (1 << 25) + cand[rows, d]
                    pos = np.searchsorted(keys_a, key)
                    hit = (pos < len(keys_a)) & (keys_a[np.minimum(pos, len(keys_a) - 1)] == key)
                    rows = rows[hit]
                    pos = pos[hit]
                    if len(rows) == 0:
                        continue
                    # exact star-overlap verification in units of 2^-(gb+4)
                    sh = 1 << int(gb - ga)
                    Ka = self.corner[ids_a[pos]]
                    A_lo = (16 * Ka - 1) * sh
                    A_hi = (16 * Ka + 17) * sh
                    B_lo = 16 * Kb[rows] - 1
                    B_hi = 16 * Kb[rows] + 17
                    overlap = np.all((A_lo <= B_hi) & (B_lo <= A_hi), axis=1)
                    rows = rows[overlap]
                    pos = pos[overlap]
                    if len(rows) == 0:
                        continue
                    found_any = True
                    a_ids = ids_a[pos]
                    b_ids = ids_b[rows]
                    keep = a_ids != b_ids
                    if ga == gb:
                        keep &= a_ids < b_ids
                    edges.append(np.stack([a_ids[keep], b_ids[keep]], axis=1))
                if found_any and gb - ga > observed_gap:
                    observed_gap = int(gb - ga)
        self.observed_gen_gap = observed_gap
        if not edges:
            return np.zeros((0, 2), dtype=np.int64)
        e = np.concatenate(edges)
        e = np.unique(e, axis=0)
        return e

    @property
    def adjacency(self):
        if self._adjacency is None:
            self._adjacency = self.neighbor_edges()
        return self._adjacency

    def adjacency_csr(self):
        e = self.adjacency
        N = len(self)
        both = np.concatenate([e, e[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        indptr = np.zeros(N + 1, dtype=np.int64)
        np.add.at(indptr, both[:, 0] + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, both[:, 1].copy()

    # -- serialization ------------------------------------------------------

    def to_json_dict(self, include_adjacency=True):
        d = {
            "cubes": [{"id": i, "j": int(self.gen[i]),
                       "k": [int(v) for v in self.corner[i]]}
                      for i in range(len(self))],
            "root_id": int(self.root_id),
            "J_max": self.J_max,
            "collar_measure": self.collar_measure,
        }
        if include_adjacency:
            d["adjacency"] = [[int(a), int(b)] for a, b in self.adjacency]
        if self.center is not None:
            d["center"] = [float(v) for v in self.center]
        return d

    def save(self, path, include_adjacency=True):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(include_adjacency), f, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json_dict(cls, d, domain=None):
        cubes = sorted(d["cubes"], key=lambda c: c["id"])
        gen = np.array([c["j"] for c in cubes], dtype=np.int16)
        corner = np.array([c["k"] for c in cubes], dtype=np.int64)
        w = cls(gen, corner, d["J_max"], d.get("collar_measure", 0.0), domain=domain,
                center=d.get("center"))
        if "adjacency" in d:
            w._adjacency = np.asarray(d["adjacency"], dtype=np.int64).reshape(-1, 2)
        return w

    @classmethod
    def load(cls, path, domain=None):
        with open(path) as f:
            return cls.from_json_dict(json.load(f), domain=domain)


# ---------------------------------------------------------------------------
# the scan


def whitney_decompose(d, J_max, center=None, chunk=2_000_000):
    """Maximal dyadic cubes Q inside the domain with
    diam(Q) <= dist(Q, boundary), truncated at generation J_max with the
    uncovered collar measured and reported on the result."""
    if J_max < 0:
        raise ValueError("J_max must be >= 0")
    n = d.n
    voxel = isinstance(d, VoxelDomain)
    oracle = _BoundaryOracle(d.boundary_rects(), n)
    sqrt_n = n  # we compare squared quantities: diam^2 = n * 4^-g

    center = np.asarray(center if center is not None else d.center(), dtype=float)
    if not d.contains_points(center[None])[0]:
        raise ValueError(f"center point {tuple(center)} lies outside the domain")

    acc_gen, acc_corner = [], []
    collar = 0.0

    # level-0 seed: integer cells covering the domain bounding box
    blo, bhi = d.bbox
    lo_cell = np.floor(np.asarray(blo)).astype(np.int64)
    hi_cell = np.maximum(np.ceil(np.asarray(bhi)).astype(np.int64), lo_cell + 1)
    grids = np.meshgrid(*[np.arange(a, b) for a, b in zip(lo_cell, hi_cell)],
                        indexing="ij")
    cur_corner = np.stack([g.ravel() for g in grids], axis=-1)
    cur_owner = None
    cur_lb2 = None

    for g in range(0, J_max + 1):
        if len(cur_corner) == 0:
            break
        side = 2.0**-g
        diam2 = n * 4.0**-g
        next_corner = []
        next_owner = []
        next_lb2 = []
        for a in range(0, len(cur_corner), chunk):
            b = min(a + chunk, len(cur_corner))
            K = cur_corner[a:b]
            blo = K * side
            bhi = (K + 1) * side
            if voxel:
                if g <= d.J:
                    f = 1 << (d.J - g)
                    cnt = d.box_occupied_count(K * f, (K + 1) * f)
                    fullv = (1 << (d.J - g)) ** n
                    status = np.where(cnt == 0, 0, np.where(cnt == fullv, 1, 2))
                else:
                    inside = d.occupancy[tuple((K >> (g - d.J)).T)]
                    status = np.where(inside, 1, 0)
                    cnt = None
            else:
                status = np.ones(len(K), dtype=np.int8)  # analytic: all in hull
            need = status == 1
            accept = np.zeros(len(K), dtype=bool)
            if need.any():
                rows = np.nonzero(need)[0]
                if cur_owner is None:
                    d2c, owner, lb2 = oracle.query(blo[rows], bhi[rows])
                else:
                    owner = cur_owner[a:b][rows]
                    lb2 = cur_lb2[a:b][rows]
                    d2c = oracle.dist2_for(blo[rows], bhi[rows], owner)
                    d2min = d2c.min(axis=1)
                    # uncertified: candidate distance clears the threshold but
                    # the inherited bound does not -> requery those rows
                    bad = (d2min >= diam2) & (lb2 < diam2)
                    if bad.any():
                        sub = np.nonzero(bad)[0]
                        d2c_f, owner_f, lb2_f = oracle.query(blo[rows[sub]], bhi[rows[sub]])
                        owner[sub] = owner_f
                        lb2[sub] = lb2_f
                        d2c[sub] = d2c_f
                d2min = d2c.min(axis=1)
                ok = (d2min >= diam2) & (lb2 >= diam2)
                accept[rows] = ok
                if np.any(accept[rows]):
                    sel = rows[ok]
                    acc_gen.append(np.full(len(sel), g, dtype=np.int16))
                    acc_corner.append(K[sel].copy())
            else:
                owner = lb2 = None
                rows = np.zeros(0, dtype=np.int64)

            # subdivide refused non-empty boxes, or account the collar
            refuse = (status > 0) & ~accept
            if g == J_max:
                if refuse.any():
                    if voxel and g <= d.J:
                        collar += float(cnt[refuse].sum()) * (2.0**-d.J) ** n
                    elif voxel:
                        collar += float(refuse.sum()) * side**n
                    else:
                        collar += float(refuse.sum()) * side**n
                continue
            if refuse.any():
                rsel = np.nonzero(refuse)[0]
                Kc = K[rsel]
                shifts = np.stack(np.meshgrid(*([np.arange(2)] * n), indexing="ij"),
                                  axis=-1).reshape(-1, n)
                kids = (Kc[:, None, :] * 2 + shifts[None]).reshape(-1, n)
                next_corner.append(kids)
                # children inherit candidates and lower bound (still valid:
                # child box lies inside the parent box)
                kid_owner = np.zeros((len(rsel), oracle.k), dtype=np.int32)
                kid_lb2 = np.zeros(len(rsel))
                if len(rows):
                    pos = np.searchsorted(rows, rsel)
                    have = (pos < len(rows)) & (rows[np.minimum(pos, len(rows) - 1)] == rsel)
                    if have.any():
                        kid_owner[have] = owner[pos[have]]
                        kid_lb2[have] = lb2[pos[have]]
                    if (~have).any():
                        # straddle boxes carry no estimate; force a requery
                        kid_lb2[~have] = -1.0
                        kid_owner[~have] = -1
                else:
                    kid_lb2[:] = -1.0
                    kid_owner[:] = -1
                next_owner.append(np.repeat(kid_owner, 2**n, axis=0))
                next_lb2.append(np.repeat(kid_lb2, 2**n, axis=0))
        if next_corner:
            cur_corner = np.concatenate(next_corner)
            ow = np.concatenate(next_owner)
            lb = np.concatenate(next_lb2)
            # rows flagged -1 must be treated as query-from-scratch; easiest is
            # to query them here in bulk
            fresh = lb < 0
            if fresh.any():
                side_c = 2.0 ** -(g + 1)
                blo = cur_corner[fresh] * side_c
                bhi = (cur_corner[fresh] + 1) * side_c
                _, ow_f, lb_f = oracle.query(blo, bhi)
                ow[fresh] = ow_f
                lb[fresh] = lb_f
            cur_owner, cur_lb2 = ow, lb
        else:
            cur_corner = np.zeros((0, n), dtype=np.int64)
            cur_owner = cur_lb2 = None

    if not acc_gen:
        raise ValueError("decomposition is empty (domain too thin for J_max?)")
    W = WhitneyDecomposition(np.concatenate(acc_gen), np.concatenate(acc_corner),
                             J_max, collar, domain=d, center=center)
    return W


# ---------------------------------------------------------------------------
# checks and statistics


def verify_dist_est(W: WhitneyDecomposition, d, samples_per_cube=64):
    """Samples x in Q* (intersected with the domain) and checks
    (3/4) diam(Q) <= dist(x, boundary) <= 6 diam(Q).  Returns a report dict;
    violations are content, not errors."""
    m = max(1, int(round(np.sqrt(samples_per_cube))))
    if W.n == 3:
        m = max(1, int(round(samples_per_cube ** (1 / 3))))
    ticks = (np.arange(m) + 0.5) / m
    offs = np.stack(np.meshgrid(*([ticks] * W.n), indexing="ij"), axis=-1).reshape(-1, W.n)
    side = W.side
    star_lo = (W.corner - 1.0 / 16.0) * side[:, None]
    star_side = (9.0 / 8.0) * side
    pts = star_lo[:, None, :] + offs[None] * star_side[:, None, None]
    pts = pts.reshape(-1, W.n)
    diam = np.repeat(np.sqrt(W.n) * side, len(offs))
    inside = d.contains_points(pts)
    dist = np.full(len(pts), np.nan)
    dist[inside] = d.dist_to_boundary(pts[inside])
    ratio = dist / diam
    ok_lo = ratio >= 0.75 - 1e-12
    ok_hi = ratio <= 6.0 + 1e-12
    viol = inside & ~(ok_lo & ok_hi)
    report = {
        "cubes": len(W),
        "samples_tested": int(inside.sum()),
        "violations": int(viol.sum()),
        "min_ratio": float(np.nanmin(ratio)) if inside.any() else None,
        "max_ratio": float(np.nanmax(ratio)) if inside.any() else None,
    }
    if viol.any():
        i = int(np.nonzero(viol)[0][0])
        report["first_violation"] = {"cube_id": i // len(offs),
                                     "x": [float(v) for v in pts[i]],
                                     "ratio": float(ratio[i])}
    return report


def whitney_counting(W: WhitneyDecomposition, lam, floor=0.05):
    """Per-generation counts with the normalized sequence 2^(-lam k) #W_k.
    Flags whether the normalized counts stay above `floor` times their own
    maximum over the last 4 generations before truncation."""
    counts = W.counts
    ks = sorted(counts)
    rows = [(k, counts[k], 2.0 ** (-lam * k) * counts[k]) for k in ks]
    normalized = np.array([r[2] for r in rows])
    tail = normalized[-4:]
    flag = bool(np.all(tail >= floor * normalized.max()))
    return {"rows": rows, "lambda": lam, "tail_above_floor": flag,
            "floor": floor * float(normalized.max())}

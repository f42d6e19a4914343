"""Axis-aligned boxes, dyadic cubes, and fast distance queries against
collections of (possibly degenerate) rectangles.

Everything here works on plain float64 coordinates.  All the geometry we
care about lives on dyadic grids, so squared distances between box faces
are exact in floating point as long as coordinates stay above ~2^-400,
which they comfortably do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class DyadicCube:
    """Closed dyadic cube prod_i [k_i 2^-j, (k_i+1) 2^-j]."""

    generation: int
    corner: tuple
    n: int = 2

    def __post_init__(self):
        if self.generation < 0:
            raise ValueError("generation must be >= 0")
        if len(self.corner) != self.n:
            raise ValueError("corner length != n")

    @property
    def side(self) -> float:
        return 2.0 ** (-self.generation)

    @property
    def diam(self) -> float:
        return np.sqrt(self.n) * self.side

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.corner, dtype=float) * self.side

    @property
    def hi(self) -> np.ndarray:
        return (np.asarray(self.corner, dtype=float) + 1.0) * self.side

    @property
    def midpoint(self) -> np.ndarray:
        return (np.asarray(self.corner, dtype=float) + 0.5) * self.side

    def volume(self) -> float:
        return self.side**self.n

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.lo <= x) and np.all(x <= self.hi))

    def star(self):
        """The concentric 9/8 dilation, returned as (lo, hi) arrays."""
        c = self.midpoint
        h = 0.5 * (9.0 / 8.0) * self.side
        return c - h, c + h


def star_bounds(corner: np.ndarray, gen, n_axes: int):
    """Vectorized star boxes.  corner: (N, n) ints, gen: scalar or (N,).

    Works in integer units of 2^-(j+4): the cube is [16k, 16k+16] and the
    star is [16k - 1, 16k + 17] in those units, which is exact.
    """
    corner = np.asarray(corner)
    side = np.asarray(2.0 ** (-np.asarray(gen, dtype=float)))
    if side.ndim:
        side = side[:, None]
    lo = (corner - 1.0 / 16.0) * side
    hi = (corner + 17.0 / 16.0) * side
    return lo, hi


def boxes_dist2(blo, bhi, rlo, rhi):
    """Componentwise squared distance between one batch of boxes and one
    batch of rectangles, broadcast as (N, 1, n) vs (1, R, n)."""
    gap = np.maximum(0.0, np.maximum(rlo - bhi, blo - rhi))
    return np.sum(gap * gap, axis=-1)


class RectSet:
    """A finite union of closed axis-aligned rectangles, possibly degenerate
    (zero thickness along some axes) — our boundary sets are exactly that:
    unions of faces.

    Supports exact point-to-set and box-to-set squared distances.  Small
    sets are handled by brute force; large ones get a kd-tree over pieces
    subdivided to a query-scale pitch (see ScaledRectIndex).
    """

    def __init__(self, lo, hi):
        self.lo = np.atleast_2d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_2d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo/hi shape mismatch")
        if np.any(self.hi < self.lo):
            raise ValueError("inverted rectangle")
        self.n = self.lo.shape[1]
        self.count = self.lo.shape[0]

    @classmethod
    def from_segments(cls, segs, n=2):
        segs = np.asarray(segs, dtype=float)
        return cls(np.minimum(segs[:, 0], segs[:, 1]), np.maximum(segs[:, 0], segs[:, 1]))

    def dist2_points(self, pts, chunk=200_000):
        """Exact squared distance from each point to the set."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.empty(len(pts))
        step = max(1, chunk // max(1, self.count))
        for a in range(0, len(pts), step):
            b = min(a + step, len(pts))
            d2 = boxes_dist2(pts[a:b, None, :], pts[a:b, None, :], self.lo[None], self.hi[None])
            out[a:b] = d2.min(axis=1)
        return out

    def dist2_boxes(self, blo, bhi, chunk=200_000):
        blo = np.atleast_2d(np.asarray(blo, dtype=float))
        bhi = np.atleast_2d(np.asarray(bhi, dtype=float))
        out = np.empty(len(blo))
        step = max(1, chunk // max(1, self.count))
        for a in range(0, len(blo), step):
            b = min(a + step, len(blo))
            d2 = boxes_dist2(blo[a:b, None, :], bhi[a:b, None, :], self.lo[None], self.hi[None])
            out[a:b] = d2.min(axis=1)
        return out

    def nearest_points(self, pts):
        """For each query point: the nearest point *on* the set and its
        squared distance (nearest rectangle by clamping)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d2 = boxes_dist2(pts[:, None, :], pts[:, None, :], self.lo[None], self.hi[None])
        idx = np.argmin(d2, axis=1)
        proj = np.clip(pts, self.lo[idx], self.hi[idx])
        return proj, d2[np.arange(len(pts)), idx]

    def index(self, pitch: float) -> "ScaledRectIndex":
        return ScaledRectIndex(self, pitch)


class ScaledRectIndex:
    """kd-tree over rectangle pieces subdivided to length <= pitch.

    The tree alone only gives candidate rectangles; exact distances are
    recomputed against the full parent rectangles, with a certified lower
    bound for everything the candidate list might have missed.
    """

    K = 12

    def __init__(self, rects: RectSet, pitch: float):
        self.rects = rects
        self.pitch = float(pitch)
        mids = []
        owner = []
        for r in range(rects.count):
            lo, hi = rects.lo[r], rects.hi[r]
            axes = [np.linspace(lo[d], hi[d], max(1, int(np.ceil((hi[d] - lo[d]) / pitch))) + 1)
                    for d in range(rects.n)]
            centers = [(a[:-1] + a[1:]) / 2 if len(a) > 1 else a[:1] for a in axes]
            grid = np.meshgrid(*centers, indexing="ij")
            m = np.stack([g.ravel() for g in grid], axis=1)
            mids.append(m)
            owner.append(np.full(len(m), r, dtype=np.int64))
        self.mids = np.concatenate(mids)
        self.owner = np.concatenate(owner)
        # half-diagonal of the largest piece, used in the miss bound
        self.halfdiag = 0.5 * np.sqrt(rects.n) * self.pitch
        self.tree = cKDTree(self.mids)

    def query_boxes(self, blo, bhi, k=None):
        """Returns (d2_best, lb) per box: exact squared distance to the
        best candidate rectangle, and a certified lower bound on the
        distance to every NON-candidate rectangle.  true_d2 == d2_best
        whenever d2_best <= lb**2."""
        k = k or self.K
        blo = np.atleast_2d(blo)
        bhi = np.atleast_2d(bhi)
        centers = 0.5 * (blo + bhi)
        box_halfdiag = 0.5 * np.sqrt(((bhi - blo) ** 2).sum(axis=1))
        dk, idx = self.tree.query(centers, k=min(k, len(self.mids)))
        if dk.ndim == 1:
            dk = dk[:, None]
            idx = idx[:, None]
        owners = self.owner[idx]
        d2 = boxes_dist2(blo[:, None, :], bhi[:, None, :],
                         self.rects.lo[owners], self.rects.hi[owners])
        d2_best = d2.min(axis=1)
        lb = dk[:, -1] - self.halfdiag - box_halfdiag
        if len(self.mids) <= dk.shape[1]:
            lb = np.full(len(blo), np.inf)  # candidate list was exhaustive
        return d2_best, np.maximum(lb, 0.0), owners


def resolve_box_dist2(rects: RectSet, index: ScaledRectIndex, blo, bhi,
                      chunk=200_000):
    """Exact squared distance from boxes to the set, kd-accelerated with a
    brute-force fallback on the (rare) uncertified rows.  Processed in
    blocks so the k-candidate scratch arrays stay small."""
    blo = np.atleast_2d(blo)
    bhi = np.atleast_2d(bhi)
    out = np.empty(len(blo))
    for a in range(0, len(blo), chunk):
        b = min(a + chunk, len(blo))
        d2, lb, _ = index.query_boxes(blo[a:b], bhi[a:b])
        bad = d2 > lb * lb
        if np.any(bad):
            d2[bad] = rects.dist2_boxes(blo[a:b][bad], bhi[a:b][bad])
        out[a:b] = d2
    return out

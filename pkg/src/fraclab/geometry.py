"""Domain models: voxel occupancy grids and analytic box-CSG domains,
plus porosity and Minkowski precontent/dimension estimators.

Coordinates live on dyadic grids inside [0,1]^n.  The boundary of a voxel
domain is the union of faces between occupied and non-occupied voxels and
every distance query is exact against that polyhedral set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path as MplPath
from scipy import ndimage
from scipy.spatial import cKDTree

from .boxes import DyadicCube, RectSet, resolve_box_dist2

__all__ = [
    "DyadicCube", "VoxelDomain", "AnalyticDomain", "PorosityReport",
    "PrecontentCurve", "make_domain", "distance_transform", "porosity_estimate",
    "minkowski_precontent", "minkowski_dimension_estimate", "koch_polygon",
    "resample_polyline", "sample_square_boundary", "read_pbm",
]


# ---------------------------------------------------------------------------
# voxel domains


class VoxelDomain:
    """Bounded domain as a bit-grid at resolution 2^-J inside [0,1]^n.

    occupancy: bool array, index i corresponds to the voxel
    [i*2^-J, (i+1)*2^-J] per axis.  dist_field (optional) holds the exact
    Euclidean distance from each occupied voxel center to the polyhedral
    boundary.
    """

    def __init__(self, occupancy, J, dist_field=None, meta=None):
        self.occupancy = np.asarray(occupancy, dtype=bool)
        self.n = self.occupancy.ndim
        self.J = int(J)
        self.h = 2.0**-self.J
        self.dist_field = dist_field
        self.meta = dict(meta or {})
        self._cumsum = None
        self._boundary = None

    # -- basic queries ------------------------------------------------------

    @property
    def bbox(self):
        lo = np.zeros(self.n)
        hi = np.asarray(self.occupancy.shape) * self.h
        return lo, hi

    def occupied_indices(self):
        return np.argwhere(self.occupancy)

    def voxel_centers(self):
        return (self.occupied_indices() + 0.5) * self.h

    def occupied_count(self):
        return int(self.occupancy.sum())

    def volume(self):
        return self.occupied_count() * self.h**self.n

    def centroid(self):
        return self.voxel_centers().mean(axis=0)

    def center(self):
        c = self.meta.get("center")
        return np.asarray(c, dtype=float) if c is not None else self.centroid()

    def contains_points(self, pts):
        pts = np.atleast_2d(pts)
        idx = np.floor(pts / self.h).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < self.occupancy.shape), axis=1)
        out = np.zeros(len(pts), dtype=bool)
        inb = np.nonzero(ok)[0]
        out[inb] = self.occupancy[tuple(idx[inb].T)]
        return out

    # -- integral image for box occupancy counts ----------------------------

    def _integral(self):
        if self._cumsum is None:
            c = self.occupancy.astype(np.int64)
            for ax in range(self.n):
                c = np.cumsum(c, axis=ax)
            c = np.pad(c, [(1, 0)] * self.n)
            self._cumsum = c
        return self._cumsum

    def box_occupied_count(self, lo_idx, hi_idx):
        """Number of occupied voxels in the index box [lo, hi) per row.
        Indices are clipped to the grid."""
        S = self._integral()
        lo = np.clip(lo_idx, 0, self.occupancy.shape)
        hi = np.clip(hi_idx, 0, self.occupancy.shape)
        hi = np.maximum(hi, lo)
        out = np.zeros(len(lo), dtype=np.int64)
        # inclusion-exclusion over box corners
        for mask in range(2**self.n):
            pick = np.array([(mask >> d) & 1 for d in range(self.n)], dtype=bool)
            corner = np.where(pick, hi, lo)
            sign = 1 if (self.n - pick.sum()) % 2 == 0 else -1
            out += sign * S[tuple(corner.T)]
        return out

    # -- polyhedral boundary ------------------------------------------------

    def boundary_rects(self) -> RectSet:
        """All faces between occupied voxels and non-occupied/outside space,
        as degenerate rectangles."""
        if self._boundary is not None:
            return self._boundary
        occ = self.occupancy
        lo_list, hi_list = [], []
        for ax in range(self.n):
            padded = np.pad(occ, [(1, 1) if d == ax else (0, 0) for d in range(self.n)])
            sl_lo = [slice(None)] * self.n
            sl_hi = [slice(None)] * self.n
            sl_lo[ax] = slice(0, -1)
            sl_hi[ax] = slice(1, None)
            diff = padded[tuple(sl_lo)] != padded[tuple(sl_hi)]
            # face at plane index i (between voxel i-1 and i of the padded grid)
            pos = np.argwhere(diff)
            lo = pos.astype(float) * self.h
            hi = lo + self.h
            lo[:, ax] = pos[:, ax] * self.h
            hi[:, ax] = pos[:, ax] * self.h
            lo_list.append(lo)
            hi_list.append(hi)
        self._boundary = RectSet(np.concatenate(lo_list), np.concatenate(hi_list))
        return self._boundary

    def dist_to_boundary(self, pts):
        rects = self.boundary_rects()
        if rects.count <= 4096:
            return np.sqrt(rects.dist2_points(pts))
        index = rects.index(self.h)
        pts = np.atleast_2d(pts)
        return np.sqrt(resolve_box_dist2(rects, index, pts, pts))

    # -- connectivity -------------------------------------------------------

    def components(self):
        structure = ndimage.generate_binary_structure(self.n, 1)
        labels, count = ndimage.label(self.occupancy, structure=structure)
        return labels, count

    def check_connected(self):
        labels, count = self.components()
        if count > 1:
            witnesses = []
            for c in (1, 2):
                witnesses.append(tuple(int(v) for v in np.argwhere(labels == c)[0]))
            raise ValueError(
                f"occupancy is disconnected: witness voxels {witnesses[0]} and {witnesses[1]}")

    # -- serialization ------------------------------------------------------

    def to_json_dict(self):
        flat = self.occupancy.ravel()
        runs = _rle_encode(flat)
        d = {
            "n": self.n,
            "J": self.J,
            "bbox": [[0.0, float(s * self.h)] for s in self.occupancy.shape],
            "shape": list(self.occupancy.shape),
            "occupancy": runs,
        }
        if self.meta:
            d["meta"] = self.meta
        if self.dist_field is not None:
            d["dist_field"] = ["%.12e" % v for v in self.dist_field]
        return d

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json_dict(cls, d):
        shape = d.get("shape")
        flat = _rle_decode(d["occupancy"])
        occ = np.asarray(flat, dtype=bool).reshape(shape)
        dist = None
        if "dist_field" in d:
            dist = np.array([float(v) for v in d["dist_field"]])
        return cls(occ, d["J"], dist_field=dist, meta=d.get("meta"))

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def _rle_encode(bits):
    """Alternating run lengths, first run counts zeros; space-separated."""
    bits = np.asarray(bits, dtype=np.int8)
    if len(bits) == 0:
        return ""
    edges = np.nonzero(np.diff(bits))[0] + 1
    starts = np.concatenate([[0], edges, [len(bits)]])
    runs = np.diff(starts)
    if bits[0] == 1:
        runs = np.concatenate([[0], runs])
    return " ".join(str(int(r)) for r in runs)


def _rle_decode(text):
    runs = [int(t) for t in text.split()] if text.strip() else []
    out = []
    bit = 0
    for r in runs:
        out.append(np.full(r, bit, dtype=bool))
        bit ^= 1
    return np.concatenate(out) if out else np.zeros(0, dtype=bool)


def read_pbm(path):
    """Minimal PBM reader (P1 ascii and P4 raw), returns a bool array with
    1 = occupied.  Image row 0 is mapped to the TOP of the domain."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] not in (b"P1", b"P4"):
        raise ValueError("not a PBM file")
    raw = data[:2] == b"P4"
    # strip comments, read header tokens
    tokens = []
    i = 2
    while len(tokens) < 2:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    w, h = int(tokens[0]), int(tokens[1])
    if raw:
        i += 1  # single whitespace after header
        rowbytes = (w + 7) // 8
        arr = np.frombuffer(data[i:i + rowbytes * h], dtype=np.uint8).reshape(h, rowbytes)
        bits = np.unpackbits(arr, axis=1)[:, :w]
    else:
        vals = [c for c in data[i:].split()]
        bits = np.array([int(v) for v in b" ".join(vals).split()], dtype=np.uint8).reshape(h, w)
    # PBM: 1 = black = occupied; flip vertically so row 0 is y = 0
    return bits[::-1].astype(bool)


# ---------------------------------------------------------------------------
# analytic domains (box CSG: open hull minus a finite union of closed
# axis-aligned obstacle rectangles, typically degenerate walls)


class AnalyticDomain:
    """Open axis-aligned hull box minus a RectSet of closed obstacle walls.

    All bounds are dyadic floats, so membership tests are exact comparisons
    on the represented geometry.  dist_to_boundary returns the exact
    distance to the union of obstacles and hull faces; in particular it is
    a certified lower bound d with B(x, d) inside the domain.
    """

    def __init__(self, hull_lo, hull_hi, obstacles: RectSet, meta=None):
        self.hull_lo = np.asarray(hull_lo, dtype=float)
        self.hull_hi = np.asarray(hull_hi, dtype=float)
        self.obstacles = obstacles
        self.n = len(self.hull_lo)
        self.meta = dict(meta or {})
        self._hull_faces = None
        self._all_rects = None

    @property
    def bbox(self):
        return self.hull_lo.copy(), self.hull_hi.copy()

    def hull_faces(self) -> RectSet:
        if self._hull_faces is None:
            lo_list, hi_list = [], []
            for ax in range(self.n):
                for side, val in ((0, self.hull_lo[ax]), (1, self.hull_hi[ax])):
                    lo = self.hull_lo.copy()
                    hi = self.hull_hi.copy()
                    lo[ax] = hi[ax] = val
                    lo_list.append(lo)
                    hi_list.append(hi)
            self._hull_faces = RectSet(np.array(lo_list), np.array(hi_list))
        return self._hull_faces

    def boundary_rects(self) -> RectSet:
        if self._all_rects is None:
            faces = self.hull_faces()
            self._all_rects = RectSet(
                np.concatenate([faces.lo, self.obstacles.lo]),
                np.concatenate([faces.hi, self.obstacles.hi]))
        return self._all_rects

    def center(self):
        c = self.meta.get("center")
        if c is not None:
            return np.asarray(c, dtype=float)
        return 0.5 * (self.hull_lo + self.hull_hi)

    def contains_points(self, pts):
        pts = np.atleast_2d(pts)
        inside = np.all((pts > self.hull_lo) & (pts < self.hull_hi), axis=1)
        if self.obstacles.count:
            on_wall = np.zeros(len(pts), dtype=bool)
            hit = np.nonzero(inside)[0]
            if len(hit):
                d2 = self.obstacles.dist2_points(pts[hit])
                on_wall[hit] = d2 == 0.0
            inside &= ~on_wall
        return inside

    def dist_to_boundary(self, pts):
        pts = np.atleast_2d(pts)
        rects = self.boundary_rects()
        if rects.count <= 2048:
            return np.sqrt(rects.dist2_points(pts))
        index = rects.index(self.meta.get("index_pitch", 2.0**-10))
        return np.sqrt(resolve_box_dist2(rects, index, pts, pts))


# ---------------------------------------------------------------------------
# presets


def koch_polygon(depth=6, side=1.0):
    """Vertices of the standard Koch snowflake built on an equilateral
    triangle of the given side, counterclockwise."""
    a = np.array([0.0, 0.0])
    b = np.array([side, 0.0])
    c = np.array([side / 2, side * np.sqrt(3) / 2])

    def koch_edge(p, q, d):
        if d == 0:
            return [p]
        u = (q - p) / 3
        m1 = p + u
        m2 = p + 2 * u
        # outward bump: rotate u by -60 degrees (polygon is clockwise below)
        rot = np.array([[0.5, np.sqrt(3) / 2], [-np.sqrt(3) / 2, 0.5]])
        tip = m1 + rot @ u
        pts = []
        for s, t in ((p, m1), (m1, tip), (tip, m2), (m2, q)):
            pts.extend(koch_edge(s, t, d - 1))
        return pts

    pts = []
    for p, q in ((a, b), (b, c), (c, a)):
        pts.extend(koch_edge(p, q, depth))
    return np.array(pts)


def resample_polyline(points, pitch, closed=True):
    """Points along a polyline at spacing <= pitch (keeps the vertices)."""
    pts = np.asarray(points, dtype=float)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    out = []
    for p, q in zip(pts[:-1], pts[1:]):
        seg = np.linalg.norm(q - p)
        k = max(1, int(np.ceil(seg / pitch)))
        t = np.arange(k) / k
        out.append(p + t[:, None] * (q - p))
    return np.concatenate(out)


def sample_square_boundary(pitch=2.0**-8, lo=0.0, hi=1.0):
    corners = np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi]])
    return resample_polyline(corners, pitch, closed=True)


def make_domain(preset, J, bitmap=None, n=2):
    """Voxel-domain presets at resolution 2^-J."""
    if not 3 <= J <= 12:
        # the J=2 hand examples in the docs are fine too, so only warn-level
        # enforcement at the extremes
        if not 2 <= J <= 12:
            raise ValueError("J out of range [2, 12]")
    m = 2**J
    if preset == "unit-cube":
        occ = np.ones((m,) * n, dtype=bool)
        meta = {"preset": preset, "lambda": n - 1}
    elif preset == "l-shape":
        if n != 2:
            raise ValueError("l-shape is 2d")
        ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        occ = (ii < m // 2) | (jj < m // 2)
        meta = {"preset": preset, "lambda": 1}
    elif preset == "koch-snowflake":
        if n != 2:
            raise ValueError("koch-snowflake is 2d")
        depth = min(8, max(4, int(np.ceil(J * np.log(2) / np.log(3))) + 2))
        poly = koch_polygon(depth=depth)
        # fit into [1/8, 7/8]^2: snowflake of side a has bbox a x a*2/sqrt(3)
        lo = poly.min(axis=0)
        hi = poly.max(axis=0)
        scale = 0.75 / (hi - lo).max()
        poly = (poly - lo) * scale
        poly += (np.array([1.0, 1.0]) - (hi - lo) * scale) / 2
        h = 2.0**-J
        centers = (np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"),
                            axis=-1).reshape(-1, 2) + 0.5) * h
        occ = MplPath(poly).contains_points(centers).reshape(m, m)
        meta = {"preset": preset, "lambda": float(np.log(4) / np.log(3)),
                "koch_side": float(scale * np.hypot(*(koch_polygon(0)[1] - koch_polygon(0)[0]))),
                "koch_depth": depth}
    elif preset == "custom-bitmap":
        if bitmap is None:
            raise ValueError("custom-bitmap needs a bitmap")
        occ = np.asarray(bitmap, dtype=bool)
        if occ.shape[0] > m or occ.shape[1] > m:
            raise ValueError("bitmap larger than 2^J")
        if not occ.any():
            raise ValueError("bitmap is empty")
        meta = {"preset": preset}
    else:
        raise ValueError(f"unknown preset {preset!r}")
    dom = VoxelDomain(occ, J, meta=meta)
    dom.check_connected()
    return dom


def distance_transform(d: VoxelDomain) -> VoxelDomain:
    """Returns a copy of the domain with dist_field populated: exact
    Euclidean distance from each occupied voxel center to the union of
    boundary faces."""
    centers = d.voxel_centers()
    dist = d.dist_to_boundary(centers)
    out = VoxelDomain(d.occupancy.copy(), d.J, dist_field=dist, meta=d.meta)
    return out


# ---------------------------------------------------------------------------
# porosity


@dataclass
class PorosityReport:
    kappa_hat: float
    scales: list
    verdict: str
    witness_failures: list = field(default_factory=list)
    samples_tested: int = 0
    floor: float = 0.0


def porosity_estimate(S, scales, trials=32, grid_J=8):
    """Searches, for sampled x in S and each scale r, a dyadic grid of
    candidate centers y in B(x, r) for the largest kappa with
    B(y, kappa*r) disjoint from S.  kappa_hat is the min over samples."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if len(S) == 0:
        raise ValueError("empty point set")
    scales = sorted(float(r) for r in scales)
    if not all(0 < r <= 1 for r in scales):
        raise ValueError("scales must lie in (0, 1]")
    tree = cKDTree(S)
    n = S.shape[1]
    floor = 2.0**-grid_J
    # deterministic sample of x's: evenly spaced in lexicographic order
    order = np.lexsort(S.T[::-1])
    picks = order[np.linspace(0, len(S) - 1, min(trials, len(S))).astype(int)]
    kappa_hat = 1.0
    failures = []
    for r in scales:
        # dyadic candidate grid of pitch r/8 covering B(x, r)
        steps = np.arange(-8, 9) / 8.0 * r
        offsets = np.stack(np.meshgrid(*([steps] * n), indexing="ij"), axis=-1).reshape(-1, n)
        offsets = offsets[np.linalg.norm(offsets, axis=1) <= r]
        for i in picks:
            x = S[i]
            cand = x + offsets
            d, _ = tree.query(cand)
            kappa = float(d.max()) / r
            if kappa < floor:
                failures.append((tuple(float(v) for v in x), r))
            else:
                kappa_hat = min(kappa_hat, kappa)
    verdict = "porous" if not failures else "non-porous-at-tested-scales"
    return PorosityReport(kappa_hat=kappa_hat if not failures else 0.0,
                          scales=scales, verdict=verdict,
                          witness_failures=failures,
                          samples_tested=len(picks) * len(scales), floor=floor)


# ---------------------------------------------------------------------------
# Minkowski precontent and dimension


def _tube_volume(E, r, pitch_factor=16, max_grid=3_000_000):
    """|E + B(0, r)| by counting grid-cell centers within r of E."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    n = E.shape[1]
    pitch = r / pitch_factor
    lo = E.min(axis=0) - r - pitch
    hi = E.max(axis=0) + r + pitch
    counts = np.ceil((hi - lo) / pitch).astype(int)
    while np.prod(counts) > max_grid:
        pitch *= 2
        counts = np.ceil((hi - lo) / pitch).astype(int)
    if r < 4 * pitch:
        raise ValueError(f"radius {r} below 4 grid pitches ({pitch}); refine the grid")
    axes = [lo[d] + (np.arange(counts[d]) + 0.5) * pitch for d in range(n)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    tree = cKDTree(E)
    d, _ = tree.query(centers, distance_upper_bound=r * 1.0000001)
    return float(np.sum(np.isfinite(d)) * pitch**n)


def minkowski_precontent(E, r, lam, pitch_factor=16):
    """M_lambda(E, r) = |E + B(0,r)| / r^(n - lambda)."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if len(E) == 0:
        raise ValueError("empty point set")
    n = E.shape[1]
    vol = _tube_volume(E, float(r), pitch_factor=pitch_factor)
    return vol / float(r) ** (n - lam)


@dataclass
class PrecontentCurve:
    lam: float
    samples: list  # (r, M_lambda(E, r)), r strictly decreasing
    fitted_dim: float
    ci: float
    slope: float


def minkowski_dimension_estimate(E, r_min, r_max, pitch_factor=16):
    """Fits dim = n - slope of log tube volume vs log r over dyadic scales
    in [r_min, r_max]."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    n = E.shape[1]
    if not r_min < r_max:
        raise ValueError("need r_min < r_max")
    rs = []
    r = float(r_max)
    while r >= r_min * 0.9999:
        rs.append(r)
        r /= 2
    if len(rs) < 5:
        raise ValueError("need at least 5 dyadic scales between r_min and r_max")
    vols = np.array([_tube_volume(E, r, pitch_factor=pitch_factor) for r in rs])
    usable = vols > 0
    if usable.sum() < 3:
        raise ValueError("degenerate fit: fewer than 3 usable scales")
    x = np.log(np.array(rs)[usable])
    y = np.log(vols[usable])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = coef[0]
    dof = max(1, len(x) - 2)
    resid = y - A @ coef
    se = np.sqrt((resid**2).sum() / dof / ((x - x.mean()) ** 2).sum())
    dim = n - slope
    samples = [(r, v / r ** (n - dim)) for r, v in zip(rs, vols)]
    return PrecontentCurve(lam=dim, samples=samples, fitted_dim=float(dim),
                           ci=float(2 * se), slope=float(slope))

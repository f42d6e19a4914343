import itertools
import math

import numpy as np
import pytest

from fraclab.boxes import DyadicCube
from fraclab.geometry import make_domain
from fraclab.whitney import (WhitneyDecomposition, verify_dist_est,
                             whitney_counting, whitney_decompose)


def brute_whitney_square(J_max):
    """Independent enumeration for the unit square: accept a dyadic cube iff
    dist(Q, boundary) >= diam(Q) and the parent fails that test.  Distance
    to the square boundary is exact in rational arithmetic scaled to
    integers."""
    out = set()
    for g in range(J_max + 1):
        m = 2**g
        diam2 = 2 * 4 ** (J_max - g)          # in units of 2^-J_max squared
        for kx, ky in itertools.product(range(m), repeat=2):
            dd = min(kx * 2 ** (J_max - g), ky * 2 ** (J_max - g),
                     2**J_max - (kx + 1) * 2 ** (J_max - g),
                     2**J_max - (ky + 1) * 2 ** (J_max - g))
            ok = dd * dd >= diam2
            if not ok:
                continue
            if g == 0:
                out.add((g, kx, ky))
                continue
            pdd = min((kx // 2) * 2 ** (J_max - g + 1),
                      (ky // 2) * 2 ** (J_max - g + 1),
                      2**J_max - (kx // 2 + 1) * 2 ** (J_max - g + 1),
                      2**J_max - (ky // 2 + 1) * 2 ** (J_max - g + 1))
            pok = pdd * pdd >= 2 * 4 ** (J_max - g + 1)
            if not pok:
                out.add((g, kx, ky))
    return out


def test_square_matches_brute_enumeration():
    d = make_domain("unit-cube", J=5)
    W = whitney_decompose(d, 5)
    got = {(int(W.gen[i]), int(W.corner[i][0]), int(W.corner[i][1]))
           for i in range(len(W))}
    assert got == brute_whitney_square(5)


def test_square_generation_counts():
    d = make_domain("unit-cube", J=8)
    W = whitney_decompose(d, 8)
    counts = W.counts
    for j in range(3, 9):
        assert counts[j] == 2 ** (j + 3) - 48
    assert len(W) == sum(counts.values())


def test_partition_volume_plus_collar():
    for preset in ("unit-cube", "l-shape"):
        d = make_domain(preset, J=6)
        W = whitney_decompose(d, 6)
        assert W.volume.sum() + W.collar_measure == pytest.approx(d.volume(), abs=1e-12)


def test_cubes_disjoint():
    d = make_domain("l-shape", J=5)
    W = whitney_decompose(d, 5)
    # map each cube to its covered cells at the finest resolution
    seen = set()
    for i in range(len(W)):
        g = int(W.gen[i])
        s = 2 ** (5 - g)
        kx, ky = (int(v) for v in W.corner[i])
        for a in range(kx * s, (kx + 1) * s):
            for b in range(ky * s, (ky + 1) * s):
                assert (a, b) not in seen
                seen.add((a, b))


def test_root_is_center_cube():
    d = make_domain("unit-cube", J=6)
    W = whitney_decompose(d, 6)
    Q = W.cube(W.root_id)
    assert Q.contains((0.5, 0.5))
    assert Q.generation == 3


def test_dist_est_no_violations():
    for preset in ("unit-cube", "l-shape"):
        d = make_domain(preset, J=5)
        W = whitney_decompose(d, 5)
        rep = verify_dist_est(W, d, samples_per_cube=64)
        assert rep["violations"] == 0
        assert rep["min_ratio"] >= 0.75
        assert rep["max_ratio"] <= 6.0


def test_adjacency_matches_brute_force():
    d = make_domain("l-shape", J=4)
    W = whitney_decompose(d, 4)

    def stars_overlap(a, b):
        ga, gb = int(W.gen[a]), int(W.gen[b])
        g = max(ga, gb)
        sa, sb = 2 ** (g - ga), 2 ** (g - gb)
        for dim in range(2):
            alo = (16 * int(W.corner[a][dim]) - 1) * sa
            ahi = (16 * int(W.corner[a][dim]) + 17) * sa
            blo = (16 * int(W.corner[b][dim]) - 1) * sb
            bhi = (16 * int(W.corner[b][dim]) + 17) * sb
            if alo > bhi or blo > ahi:
                return False
        return True

    brute = {(a, b) for a in range(len(W)) for b in range(len(W))
             if a != b and stars_overlap(a, b)}
    src, dst = W.neighbors_of(np.arange(len(W)))
    got = set(zip(src.tolist(), dst.tolist()))
    assert got == brute


def test_generation_gap_bounded():
    d = make_domain("l-shape", J=6)
    W = whitney_decompose(d, 6)
    edges = W.neighbor_edges()
    gap = np.abs(W.gen[edges[:, 0]].astype(int) - W.gen[edges[:, 1]].astype(int))
    assert gap.max() <= 3


def test_save_load_roundtrip(tmp_path):
    d = make_domain("unit-cube", J=5)
    W = whitney_decompose(d, 5)
    p = tmp_path / "w.json"
    W.save(str(p))
    W2 = WhitneyDecomposition.load(str(p), domain=d)
    assert len(W2) == len(W)
    assert np.array_equal(W2.gen, W.gen)
    assert np.array_equal(W2.corner, W.corner)
    assert W2.root_id == W.root_id
    assert W2.collar_measure == W.collar_measure


def test_whitney_counting_flag():
    d = make_domain("unit-cube", J=8)
    W = whitney_decompose(d, 8)
    rep = whitney_counting(W, 1.0)
    assert rep["tail_above_floor"]
    # counts 2^{j+3}-48 normalized by 2^-j converge to 8
    js, cnts, normd = zip(*rep["rows"])
    assert normd[-1] == pytest.approx(8.0, rel=0.05)


def test_upper_bound_automatic():
    # dist(Q, boundary) <= 4 diam(Q) for every accepted cube
    d = make_domain("l-shape", J=6)
    W = whitney_decompose(d, 6)
    lo = W.corner * W.side[:, None]
    hi = lo + W.side[:, None]
    rects = d.boundary_rects()
    dist = np.sqrt(rects.dist2_boxes(lo, hi))
    diam = math.sqrt(2) * W.side
    assert np.all(dist <= 4 * diam + 1e-12)
    assert np.all(dist >= diam - 1e-12)

import json
import math

import numpy as np
import pytest

from fraclab.geometry import (VoxelDomain, distance_transform, koch_polygon,
                              make_domain, minkowski_dimension_estimate,
                              minkowski_precontent, porosity_estimate,
                              read_pbm, resample_polyline,
                              sample_square_boundary, _tube_volume)


def test_unit_cube_basics():
    d = make_domain("unit-cube", J=3)
    assert d.occupied_count() == 64
    assert d.volume() == 1.0
    assert np.allclose(d.centroid(), [0.5, 0.5])
    # voxel center nearest a corner sits h/2 from two faces
    h = 2.0**-3
    dist = d.dist_to_boundary(np.array([[h / 2, h / 2], [0.5, 0.5]]))
    assert dist[0] == pytest.approx(h / 2)
    assert dist[1] == pytest.approx(0.5)


def test_l_shape_voxels():
    d = make_domain("l-shape", J=3)
    assert d.occupied_count() == 48
    assert d.volume() == pytest.approx(0.75)
    d.check_connected()


def test_distance_transform_matches_query():
    rng = np.random.default_rng(2)
    occ = np.zeros((8, 8), dtype=bool)
    occ[2:7, 1:6] = True
    occ[rng.random((8, 8)) < 0.1] = True
    occ[4, 3] = True
    d = VoxelDomain(occ, 3)
    labels, count = d.components()
    if count > 1:
        # keep the biggest blob only so the domain is valid
        sizes = np.bincount(labels.ravel())[1:]
        keep = labels == (1 + int(np.argmax(sizes)))
        d = VoxelDomain(keep, 3)
    dt = distance_transform(d)
    assert np.allclose(dt.dist_field, d.dist_to_boundary(d.voxel_centers()))
    assert np.all(dt.dist_field > 0)


def test_dist_is_min_over_boundary_faces():
    d = make_domain("l-shape", J=3)
    rects = d.boundary_rects()
    pts = d.voxel_centers()
    # brute force: min over every boundary rectangle
    brute = np.full(len(pts), np.inf)
    for lo, hi in zip(rects.lo, rects.hi):
        q = np.clip(pts, lo, hi)
        brute = np.minimum(brute, np.sqrt(((pts - q) ** 2).sum(axis=1)))
    assert np.allclose(d.dist_to_boundary(pts), brute)


def test_save_load_roundtrip(tmp_path):
    d = make_domain("l-shape", J=4)
    p = tmp_path / "d.json"
    d.save(str(p))
    d2 = VoxelDomain.load(str(p))
    assert d2.J == d.J
    assert np.array_equal(d2.occupancy, d.occupancy)
    assert d2.meta["preset"] == "l-shape"


def test_pbm_roundtrip(tmp_path):
    p = tmp_path / "img.pbm"
    p.write_text("P1\n4 3\n1 1 0 0\n1 1 0 0\n1 1 1 1\n")
    bits = read_pbm(str(p))
    assert bits.shape == (3, 4)
    assert bits.sum() == 8
    d = make_domain("custom-bitmap", J=2, bitmap=bits)
    assert d.occupied_count() == 8


def test_koch_area():
    d = make_domain("koch-snowflake", J=8)
    side = d.meta["koch_side"]
    exact = 2 * math.sqrt(3) / 5 * side**2
    assert d.volume() == pytest.approx(exact, rel=0.02)
    d.check_connected()


def test_segment_tube_volume():
    # tube around a unit segment: 2 r L + pi r^2
    pts = np.stack([np.linspace(0, 1, 2001), np.zeros(2001)], axis=1)
    r = 0.05
    vol = _tube_volume(pts, r)
    assert vol == pytest.approx(2 * r * 1.0 + math.pi * r**2, rel=0.02)


def test_minkowski_dimension_segment():
    pts = np.stack([np.linspace(0, 1, 4097), np.zeros(4097)], axis=1)
    curve = minkowski_dimension_estimate(pts, 2.0**-8, 2.0**-3)
    assert abs(curve.fitted_dim - 1.0) < 0.05


def test_minkowski_dimension_koch():
    pts = resample_polyline(koch_polygon(depth=6), 2.0**-10)
    curve = minkowski_dimension_estimate(pts, 2.0**-8, 2.0**-3)
    assert abs(curve.fitted_dim - math.log(4) / math.log(3)) < 0.05


def test_minkowski_dimension_needs_scales():
    pts = np.zeros((4, 2))
    with pytest.raises(ValueError):
        minkowski_dimension_estimate(pts, 0.3, 0.5)


def test_porosity_square_boundary():
    S = sample_square_boundary()
    rep = porosity_estimate(S, [1.0, 0.5, 0.25])
    assert rep.verdict == "porous"
    assert rep.kappa_hat >= 1 / 8


def test_make_domain_errors():
    with pytest.raises(ValueError):
        make_domain("no-such-preset", J=4)
    with pytest.raises(ValueError):
        make_domain("custom-bitmap", J=4, bitmap=np.zeros((4, 4), dtype=bool))


def test_precontent_positive():
    pts = sample_square_boundary()
    assert minkowski_precontent(pts, 2.0**-4, 1.0) > 0

"""Rooms-and-passages geometry, test functions, and the two sides of the
sharpness ratio."""

import math

import numpy as np
import pytest

from fraclab.boxes import DyadicCube
from fraclab.conditions import ExponentSet
from fraclab.counterexample import (apartment, build_s_version, build_vm,
                                    compute_Am, compute_Bm,
                                    sharpness_experiment)
from fraclab.counterexample import _apartment_integral_q, _passage_integral
from fraclab.counterexample import test_function as make_test_function
from fraclab.geometry import make_domain
from fraclab.whitney import whitney_decompose


def unit_apartment(s=2.0):
    # [0,1]^2, center (1/2, 1/2)
    return apartment(DyadicCube(0, (0, 0)), s)


def test_apartment_boxes_unit_square_s2():
    a = unit_apartment()
    assert a.w == (1 / 8) ** 2 == 1 / 64
    lo, hi = a.room
    assert np.allclose(lo, [3 / 8, 3 / 8]) and np.allclose(hi, [5 / 8, 5 / 8])
    lo, hi = a.passage
    assert np.allclose(lo, [31 / 64, 5 / 8]) and np.allclose(hi, [33 / 64, 3 / 4])
    lo, hi = a.tiny_passage
    assert np.allclose(lo, [31 / 64, 21 / 32]) and np.allclose(hi, [33 / 64, 23 / 32])
    lo, hi = a.long_passage
    assert np.allclose(lo, [31 / 64, 1 / 2]) and np.allclose(hi, [33 / 64, 1.0])


def test_apartment_walls():
    a = unit_apartment()
    lo, hi = a.wall_rects()
    assert len(lo) == 7
    # all degenerate (zero-area) segments
    assert np.all(np.isclose(hi - lo, 0).sum(axis=1) == 1)
    # the top face opening: no wall crosses the strip |x - 1/2| < w at y = 5/8
    top = np.isclose(lo[:, 1], 5 / 8) & np.isclose(hi[:, 1], 5 / 8)
    for l_, h_ in zip(lo[top], hi[top]):
        assert h_[0] <= 1 / 2 - a.w + 1e-15 or l_[0] >= 1 / 2 + a.w - 1e-15


def test_apartment_width_restriction():
    # side 1/2 at s = 2: w = (1/16)^2 = 1/256 > (1/2)/32 = 1/64?  no, fine.
    # use s close to 1 so the passage is too wide
    with pytest.raises(ValueError):
        apartment(DyadicCube(0, (0, 0)), 1.05)
    with pytest.raises(ValueError):
        apartment(DyadicCube(0, (0, 0)), 1.0)  # s must exceed 1


def test_test_function_values_and_slope():
    a = unit_apartment()
    lam, q = 1.5, 1.0
    f = make_test_function(a, lam, q)
    plat = 1.0 ** ((lam - 2) / q)
    assert f.plateau == plat == 1.0
    assert f.slope == -16.0
    # room interior and lower passage sit on the plateau
    assert f([[0.5, 0.5]])[0] == plat
    assert f([[0.5, 0.64]])[0] == plat
    # ramp: linear from plateau at y = 21/32 down to 0 at y = 23/32
    ymid = (21 / 32 + 23 / 32) / 2
    assert np.isclose(f([[0.5, ymid]])[0], plat / 2)
    assert f([[0.5, 23 / 32 + 1e-9]])[0] == 0.0
    # zero outside the apartment
    assert f([[0.1, 0.1]])[0] == 0.0
    # finite differences reproduce the analytic slope on the ramp
    h = 1e-6
    fd = (f([[0.5, ymid + h]])[0] - f([[0.5, ymid - h]])[0]) / (2 * h)
    assert abs(fd - f.slope) < 1e-4
    # scaling of the slope with the cube side
    a2 = apartment(DyadicCube(3, (1, 2)), 2.0)
    f2 = make_test_function(a2, lam, q)
    assert np.isclose(f2.slope, -16.0 * a2.side ** ((lam - 2) / q - 1))


def test_test_function_validation():
    a = unit_apartment()
    with pytest.raises(ValueError):
        make_test_function(a, 2.0, 1.0)   # lam must be < n
    with pytest.raises(ValueError):
        make_test_function(a, 0.5, 1.0)   # lam must be >= n-1
    with pytest.raises(ValueError):
        make_test_function(a, 1.5, 0.5)   # q >= 1


def test_apartment_integral_closed_form():
    # against a fine midpoint grid on the unit-square apartment
    a = unit_apartment()
    lam, q = 1.2, 1.0
    f = make_test_function(a, lam, q)
    N = 2048
    h = 1.0 / N
    xs = (np.arange(N) + 0.5) * h
    # restrict the grid to the support bounding box to keep it cheap
    band = xs[(xs > 3 / 8 - h) & (xs < 3 / 4 + h)]
    X, Y = np.meshgrid(band, band, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    num = np.abs(f(pts)) ** q
    grid = num.sum() * h * h
    exact = _apartment_integral_q(a, lam, q)
    assert abs(grid - exact) / exact < 5e-3


@pytest.fixture(scope="module")
def G2():
    W = whitney_decompose(make_domain("unit-cube", J=5), 5)
    return build_s_version(W, 2.0)


def test_build_s_version_geometry(G2):
    W = G2.base_W
    assert len(G2.apartments) == len(W) - 1
    assert G2.meta["scale"] == 1.0
    # every point on a passage midline has clearance exactly w - |xi|
    for a in G2.apartments[:5]:
        w = a.w
        y = a.center[1] + 3 * a.side / 16
        for xi in (0.0, w / 2, -0.9 * w):
            pt = [a.center[0] + xi, y]
            assert np.isclose(G2.dist_to_boundary([pt])[0], w - abs(xi), atol=1e-15)


def test_build_s_version_rescales_for_small_s():
    W = whitney_decompose(make_domain("unit-cube", J=3), 3)
    G = build_s_version(W, 1.2)
    # (8^s/32)^(1/(s-1)) at s = 1.2 forces seven halvings of the unit square
    assert G.meta["scale"] == 2.0**-7
    assert np.allclose(G.hull_hi, 2.0**-7)
    for a in G.apartments:
        assert a.w <= a.side / 32 * (1 + 1e-12)


def test_build_vm_structure(G2):
    v = build_vm(G2, 2, k0=1, lam=1.0, q=1.0)
    assert v.js == sorted(v.js) and len(v.js) == 2
    for j in v.js:
        Mj = 2 ** int(math.floor(v.lam * (j - v.k0)))
        assert len(v.picks[j]) == 2 * Mj
        assert float(v.signs[j].sum()) == 0.0
        assert all(G2.base_W.gen[i] == j for i in v.picks[j])
    # supports are disjoint: distinct base cubes
    ids = [f.a.cube_id for f in v.funcs]
    assert len(set(ids)) == len(ids)
    # sign pairing makes the closed-form mean zero: equal numbers of each
    sgns = [f.sign for f in v.funcs]
    assert sum(sgns) == 0.0
    with pytest.raises(ValueError):
        build_vm(G2, 50)   # runs out of generations below the truncation


def test_compute_Am_matches_single_apartment(G2):
    v = build_vm(G2, 1, lam=1.0, q=1.0)
    am = compute_Am(v)
    exact = math.fsum(_apartment_integral_q(f.a, v.lam, v.q) for f in v.funcs)
    assert np.isclose(am["Am_q"], exact, rtol=1e-14)
    assert am["Am"] == am["Am_q"]  # q = 1
    assert am["room_only_lower_q"] <= am["Am_q"]


def polar_oracle(f, e, n_r=400, n_t=128, n_x=48):
    """Deterministic check of one passage integral: tensor quadrature in
    (x1, x2, theta) with the same rho = r t^(1/beta) substitution."""
    a = f.a
    w, p, delta = a.w, e.p, e.delta
    beta = p * (1 - delta)
    tl, th = a.tiny_passage
    y_lo, y_hi = tl[1] - w, th[1] + w
    gl_t, gl_wt = np.polynomial.legendre.leggauss(n_t)
    theta = np.pi * (gl_t + 1)           # [0, 2pi)
    th_w = np.pi * gl_wt
    gx, gxw = np.polynomial.legendre.leggauss(n_x)
    x1 = a.center[0] + gx * w
    x1w = gxw * w
    x2 = a.center[1] + (y_lo - a.center[1]) + (gx + 1) / 2 * (y_hi - y_lo)
    x2w = gxw / 2 * (y_hi - y_lo)
    gt, gtw = np.polynomial.legendre.leggauss(n_r)
    t = (gt + 1) / 2
    tw = gtw / 2
    total = 0.0
    for i, xa in enumerate(x1):
        r = w - abs(xa - a.center[0])
        rho = r * t ** (1 / beta)
        X = np.stack([np.full_like(rho, xa), np.zeros_like(rho)], axis=1)
        acc = np.zeros(len(rho))
        for x2b, x2wb in zip(x2, x2w):
            X[:, 1] = x2b
            for tb, twb in zip(theta, th_w):
                Y = X + np.stack([rho * np.cos(tb), rho * np.sin(tb)], axis=1)
                du = np.abs(f(X) - f(Y))
                g = du**p * rho ** -(a.n + delta * p)
                acc_t = g * r**beta * rho ** (2 - beta) / beta * twb
                acc += acc_t * x2wb
        total += float((acc * tw).sum()) * x1w[i]
    return total


def test_passage_integral_against_quadrature(G2):
    v = build_vm(G2, 1, lam=1.0, q=1.0)
    f = v.funcs[0]
    e = ExponentSet(p=2.0, q=1.0, delta=0.5, s=2.0, lam=1.0)
    ref = polar_oracle(f, e)
    rng = np.random.default_rng(7)
    vals = []
    for _ in range(3):
        m_, var_ = _passage_integral(f, e, 65536, rng)
        vals.append(m_)
        assert abs(m_ - ref) < 4 * math.sqrt(var_) + 1e-12
    assert abs(np.mean(vals) - ref) / ref < 0.02


def test_compute_Bm_determinism_and_errors(G2):
    v = build_vm(G2, 2, lam=1.0, q=1.0)
    e = ExponentSet(p=2.0, q=1.0, delta=0.5, s=2.0, lam=1.0)
    with pytest.raises(ValueError):
        compute_Bm(v, e)          # seed is mandatory
    with pytest.raises(ValueError):
        compute_Bm(v, ExponentSet(p=1.0, q=1.0, delta=0.5), seed=1)  # q < p
    r1 = compute_Bm(v, e, seed=42)
    r2 = compute_Bm(v, e, seed=42)
    assert r1.value == r2.value
    assert r1.details["Bm_rel_stderr"] <= 0.02
    r3 = compute_Bm(v, e, seed=43)
    assert r3.value != r1.value
    assert abs(r3.details["Bm"] - r1.details["Bm"]) / r1.details["Bm"] < 0.05
    # the closed-form upper bound really is an upper bound
    assert r1.value <= r1.details["paper_bound_Bm_p"]


def test_sharpness_experiment_small():
    e = ExponentSet(p=2.0, q=1.0, delta=0.5, s=2.0, lam=1.0)
    res = sharpness_experiment("square", 2.0, e, m_max=3, seed=5,
                               samples=4096)
    rows = res["rows"]
    assert [r["m"] for r in rows] == [1, 2, 3]
    assert all(r["ratio"] > 0 for r in rows)
    # the ratio grows with m
    assert rows[-1]["ratio"] > rows[0]["ratio"]
    assert res["manifest"]["target"] == 0.5

"""Rooms-and-passages modification of a domain and the sharpness experiment.

Every Whitney cube of a base decomposition (except the root) is replaced by
an "apartment": a room (the concentric quarter cube) whose only exit is a
narrow passage of half-width w = (l/8)^s through the middle of its top
face.  The resulting domain is the base cube minus a finite set of wall
segments, so membership and boundary distance stay exact.

Test functions sit on single apartments: a plateau on the room and lower
passage, a linear ramp across the tiny mid-passage window, zero elsewhere.
Alternating-sign sums of these over several generations have oscillation
growing like m^{1/q} while the localized seminorm grows much slower, which
is what the sharpness experiment measures.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import RectSet
from .conditions import ExponentSet
from .functional import EstimateReport
from .geometry import AnalyticDomain
from .whitney import WhitneyDecomposition

__all__ = ["ApartmentGeometry", "TestFunction", "VmFunction", "apartment",
           "build_s_version", "test_function", "build_vm", "compute_Am",
           "compute_Bm", "sharpness_experiment"]


def _box(lo, hi):
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


@dataclass
class ApartmentGeometry:
    center: np.ndarray       # center x of the base cube
    side: float              # l
    s: float
    n: int
    room: tuple              # R: int(quarter cube)
    passage: tuple           # P_s: half-width w, extent (x_n + l/8, x_n + l/4)
    long_passage: tuple      # L_s: extent (x_n, x_n + l/2)
    tiny_passage: tuple      # T_s: extent (x_n + 5l/32, x_n + 7l/32)
    cube_id: int = None

    @property
    def w(self):
        return (self.side / 8.0) ** self.s

    def wall_rects(self):
        """The removed boundary segments: the room shell with an opening of
        width 2w in the middle of its top face, plus the two passage side
        walls (n = 2)."""
        x, l, w = self.center, self.side, self.w
        r = l / 8.0
        lo, hi = [], []

        def seg(a, b):
            lo.append(a)
            hi.append(b)

        seg([x[0] - r, x[1] - r], [x[0] + r, x[1] - r])          # room bottom
        seg([x[0] - r, x[1] - r], [x[0] - r, x[1] + r])          # room left
        seg([x[0] + r, x[1] - r], [x[0] + r, x[1] + r])          # room right
        seg([x[0] - r, x[1] + r], [x[0] - w, x[1] + r])          # top, left of opening
        seg([x[0] + w, x[1] + r], [x[0] + r, x[1] + r])          # top, right of opening
        seg([x[0] - w, x[1] + l / 8], [x[0] - w, x[1] + l / 4])  # passage wall
        seg([x[0] + w, x[1] + l / 8], [x[0] + w, x[1] + l / 4])  # passage wall
        return np.asarray(lo), np.asarray(hi)


def apartment(Q, s, cube_id=None) -> ApartmentGeometry:
    """Exact apartment boxes for a dyadic cube.  Requires the passage width
    constraint (l/8)^s <= l/32."""
    if s <= 1:
        raise ValueError("s must be > 1")
    n = Q.n
    if n != 2:
        raise ValueError("apartments are implemented for n = 2")
    l = Q.side
    x = np.asarray(Q.midpoint, dtype=float)
    w = (l / 8.0) ** s
    if w > l / 32.0 + 1e-15:
        raise ValueError(f"(l/8)^s = {w} exceeds l/32 = {l/32}; "
                         "rescale the base domain first")
    room = _box(x - l / 8, x + l / 8)
    passage = _box([x[0] - w, x[1] + l / 8], [x[0] + w, x[1] + l / 4])
    long_passage = _box([x[0] - w, x[1]], [x[0] + w, x[1] + l / 2])
    tiny = _box([x[0] - w, x[1] + 5 * l / 32], [x[0] + w, x[1] + 7 * l / 32])
    return ApartmentGeometry(center=x, side=l, s=s, n=n, room=room,
                             passage=passage, long_passage=long_passage,
                             tiny_passage=tiny, cube_id=cube_id)


def build_s_version(W_base: WhitneyDecomposition, s) -> AnalyticDomain:
    """Base cube with every non-root Whitney cube replaced by its apartment.
    If the passage width constraint fails for the largest base cube, the
    whole construction is scaled down by a power of two (recorded in meta).
    """
    if s <= 1:
        raise ValueError("s must be > 1")
    blo, bhi = W_base.domain.bbox if W_base.domain is not None \
        else (np.zeros(W_base.n), np.ones(W_base.n))
    max_side = float(np.max(np.asarray(bhi) - np.asarray(blo)))
    bound = (8.0**s / 32.0) ** (1.0 / (s - 1.0))
    cube_max = max((W_base.cube(i).side for i in range(len(W_base))
                    if i != W_base.root_id), default=0.0)
    scale = 1.0
    if cube_max > bound * (1 + 1e-12):  # width restriction fails somewhere
        while max_side * scale > bound * (1 + 1e-12):
            scale /= 2.0
    lo = np.asarray(blo, dtype=float) * scale
    hi = np.asarray(bhi, dtype=float) * scale
    walls_lo, walls_hi = [], []
    apartments = []
    for i in range(len(W_base)):
        if i == W_base.root_id:
            continue
        Q = W_base.cube(i)
        x = np.asarray(Q.midpoint, dtype=float) * scale
        l = Q.side * scale
        w = (l / 8.0) ** s
        assert w <= l / 32.0 * (1 + 1e-12)
        a = ApartmentGeometry(
            center=x, side=l, s=s, n=W_base.n,
            room=_box(x - l / 8, x + l / 8),
            passage=_box([x[0] - w, x[1] + l / 8], [x[0] + w, x[1] + l / 4]),
            long_passage=_box([x[0] - w, x[1]], [x[0] + w, x[1] + l / 2]),
            tiny_passage=_box([x[0] - w, x[1] + 5 * l / 32],
                              [x[0] + w, x[1] + 7 * l / 32]),
            cube_id=i)
        apartments.append(a)
        wl, wh = a.wall_rects()
        walls_lo.append(wl)
        walls_hi.append(wh)
    obstacles = RectSet(np.concatenate(walls_lo), np.concatenate(walls_hi))
    meta = dict(W_base.domain.meta if W_base.domain is not None
                and W_base.domain.meta else {})
    meta.update({"s": s, "scale": scale, "base_J_max": W_base.J_max,
                 "center": [float(v) for v in W_base.midpoint[W_base.root_id] * scale]})
    meta.setdefault("lambda", W_base.n - 1)
    d = AnalyticDomain(lo, hi, obstacles, meta=meta)
    d.apartments = apartments
    d.base_W = W_base
    return d


# ---------------------------------------------------------------------------
# test functions


@dataclass
class TestFunction:
    a: ApartmentGeometry
    lam: float
    q: float
    sign: float = 1.0

    @property
    def plateau(self):
        return self.a.side ** ((self.lam - self.a.n) / self.q)

    @property
    def slope(self):
        return -16.0 * self.a.side ** ((self.lam - self.a.n) / self.q - 1.0)

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        a = self.a
        out = np.zeros(len(pts))
        rl, rh = a.room
        in_room = np.all((pts > rl) & (pts < rh), axis=1)
        pl, ph = a.passage
        in_pass = np.all((pts > pl) & (pts < ph), axis=1)
        tl, th = a.tiny_passage
        y = pts[:, 1]
        below = in_pass & (y <= tl[1])
        ramp = in_pass & (y > tl[1]) & (y < th[1])
        out[in_room | below] = self.plateau
        out[ramp] = self.plateau + self.slope * (y[ramp] - tl[1])
        return self.sign * out


def test_function(a: ApartmentGeometry, lam, q) -> TestFunction:
    if not (a.n - 1 <= lam < a.n):
        raise ValueError("lambda must be in [n-1, n)")
    if q < 1:
        raise ValueError("q must be >= 1")
    return TestFunction(a=a, lam=lam, q=q)


@dataclass
class VmFunction:
    m: int
    k0: int
    lam: float
    q: float
    js: list                  # j(1) < ... < j(m)
    picks: dict               # j -> list of base cube ids (2 M_j of them)
    signs: dict               # j -> +-1 array
    funcs: list               # TestFunction per pick, sign applied
    domain: object = None

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts))
        for f in self.funcs:
            out += f(pts)
        return out


def build_vm(G_s, m, k0=1, lam=None, q=1.0, seed=None) -> VmFunction:
    """Alternating-sign sums of apartment test functions: at each of the m
    smallest admissible generations j, pick 2 M_j cubes (M_j = 2^{[lam(j-k0)]}),
    half with each sign.  Picks are lexicographic by cube id; the mean over
    the domain is zero by the sign pairing."""
    W = G_s.base_W
    if lam is None:
        lam = G_s.meta.get("lambda", W.n - 1)
    counts = W.counts
    by_id = {a.cube_id: a for a in G_s.apartments}
    root_gen = int(W.gen[W.root_id])
    j_min_excl = max(k0, root_gen)  # -log2 l(Q0) = root generation
    js, picks, signs, funcs = [], {}, {}, []
    j = j_min_excl + 1
    while len(js) < m:
        if j > W.J_max:
            raise ValueError(f"not enough admissible generations: generation "
                             f"{j} exceeds the base truncation {W.J_max}")
        Mj = 2 ** int(math.floor(lam * (j - k0)))
        avail = [i for i in range(len(W))
                 if W.gen[i] == j and i != W.root_id]
        if counts.get(j, 0) >= 2 * Mj and len(avail) >= 2 * Mj:
            chosen = sorted(avail)[:2 * Mj]
            sgn = np.ones(2 * Mj)
            sgn[Mj:] = -1.0
            js.append(j)
            picks[j] = chosen
            signs[j] = sgn
            for cid, sg in zip(chosen, sgn):
                f = test_function(by_id[cid], lam, q)
                f.sign = float(sg)
                funcs.append(f)
        j += 1
    return VmFunction(m=m, k0=k0, lam=float(lam), q=float(q), js=js,
                      picks=picks, signs=signs, funcs=funcs, domain=G_s)


# ---------------------------------------------------------------------------
# the two sides of the ratio


def _apartment_integral_q(a: ApartmentGeometry, lam, q):
    """Exact integral of |u|^q over one apartment: room plateau + lower
    passage plateau + the ramp (polynomial in the vertical coordinate)."""
    l, n, w = a.side, a.n, a.w
    plat_q = l ** (lam - n)          # plateau^q
    room = plat_q * (l / 4.0) ** n
    below = plat_q * (2 * w) * (l / 32.0)   # from l/8 to 5l/32
    ramp = plat_q * (2 * w) * (l / 16.0) / (q + 1.0)
    return room + below + ramp


def compute_Am(v: VmFunction, q=None):
    """A_m^q = integral of |v_m|^q over the domain, in closed form (supports
    are disjoint and (v_m)_G = 0)."""
    if q is None:
        q = v.q
    gen_of = {cid: j for j in v.js for cid in v.picks[j]}
    per_gen = {j: 0.0 for j in v.js}
    room_lower = 0.0
    for f in v.funcs:
        per_gen[gen_of[f.a.cube_id]] += _apartment_integral_q(f.a, v.lam, q)
        room_lower += 4.0 ** -f.a.n * f.a.side**v.lam
    total = math.fsum(per_gen.values())
    return {"Am_q": total, "Am": total ** (1.0 / q), "per_generation": per_gen,
            "room_only_lower_q": room_lower}


def _passage_seed(master, cube_id):
    h = hashlib.sha256(f"{master}:{cube_id}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def _passage_integral(f: TestFunction, e: ExponentSet, samples, rng):
    """Monte-carlo estimate of the localized double integral over one
    passage.  Contributions vanish unless x is within w of the ramp window
    (the localization ball has radius w - |xi| <= w), so x is drawn from
    that band; the radial coordinate of y - x is importance-sampled with
    density ~ rho^{beta-1}, beta = p(1-delta), which makes the per-sample
    weights bounded."""
    a = f.a
    p, delta = e.p, e.delta
    w = a.w
    tl, th = a.tiny_passage
    y_lo, y_hi = tl[1] - w, th[1] + w
    area = (2 * w) * (y_hi - y_lo)
    beta = p * (1.0 - delta)
    xs = np.empty((samples, 2))
    xs[:, 0] = a.center[0] + (rng.random(samples) * 2 - 1) * w
    xs[:, 1] = y_lo + rng.random(samples) * (y_hi - y_lo)
    r = w - np.abs(xs[:, 0] - a.center[0])          # exact clearance
    rho = r * rng.random(samples) ** (1.0 / beta)
    theta = rng.random(samples) * 2 * np.pi
    ys = xs + np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=1)
    du = np.abs(f(xs) - f(ys))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = du**p * rho ** -(a.n + delta * p)
    g[du == 0] = 0.0
    est = area * g * 2 * np.pi * r**beta * rho ** (2.0 - beta) / beta
    mean = float(est.mean())
    var = float(est.var(ddof=1)) / samples
    return mean, var


def compute_Bm(v: VmFunction, e: ExponentSet, samples=8192, seed=None,
               target_rel=0.02, max_doublings=4):
    """B_m^p: the localized double integral of v_m, reduced to per-passage
    integrals (the localization ball never leaves a passage when the
    integrand is nonzero).  Per-passage substreams keyed by cube id."""
    if seed is None:
        raise ValueError("seed required for the monte-carlo seminorm")
    if not (e.q < e.p):
        raise ValueError("requires q < p")
    total = 0.0
    var = 0.0
    n_s = samples
    flagged = False
    for trial in range(max_doublings + 1):
        total = 0.0
        var = 0.0
        for f in v.funcs:
            rng = np.random.default_rng(_passage_seed(seed, (f.a.cube_id, n_s)))
            m_, v_ = _passage_integral(f, e, n_s, rng)
            total += m_
            var += v_
        stderr = math.sqrt(var)
        rel_B = stderr / (e.p * total) if total > 0 else math.inf
        if rel_B <= target_rel:
            break
        n_s *= 2
    else:
        flagged = True
    s_ = v.domain.meta.get("scale", 1.0)
    E = (e.p * (v.lam - v.domain.base_W.n) / v.q - e.p
         + e.s * (v.domain.base_W.n - 1) + 1 + e.s * (1 - e.delta) * e.p)
    bound = math.fsum(2.0 ** (v.lam * j) * (2.0 ** -j * s_) ** E for j in v.js)
    return EstimateReport(
        value=total, method="monte-carlo", seed=seed,
        std_error=math.sqrt(var), converged=not flagged,
        details={"Bm": total ** (1.0 / e.p),
                 "Bm_rel_stderr": math.sqrt(var) / (e.p * total) if total > 0 else math.inf,
                 "samples_per_passage": n_s, "passages": len(v.funcs),
                 "paper_bound_Bm_p": bound})


# ---------------------------------------------------------------------------
# the experiment


def sharpness_experiment(base, s, e: ExponentSet, m_max, seed,
                         base_J=None, J_max=None, k0=1, samples=8192):
    """A_m / B_m for m = 1..m_max and the fitted log-log slope against the
    predicted 1/q - 1/p growth."""
    from .geometry import make_domain
    from .whitney import whitney_decompose

    if e.q >= e.p:
        raise ValueError("requires q < p")
    if isinstance(base, str):
        if J_max is None:
            J_max = k0 + 3 + m_max  # enough admissible generations
        base_d = make_domain(base if base != "square" else "unit-cube",
                             J=base_J if base_J is not None else min(J_max, 12))
        W = whitney_decompose(base_d, J_max)
    else:
        W = base
    G = build_s_version(W, s)
    lam = e.lam
    rows = []
    for m in range(1, m_max + 1):
        v = build_vm(G, m, k0=k0, lam=lam, q=e.q)
        am = compute_Am(v)
        bm = compute_Bm(v, e, samples=samples, seed=seed)
        B = bm.details["Bm"]
        rows.append({"m": m, "Am": am["Am"], "Bm": B,
                     "Bm_stderr": bm.details["Bm_rel_stderr"] * B,
                     "ratio": am["Am"] / B,
                     "paper_bound_Bm": bm.details["paper_bound_Bm_p"] ** (1 / e.p)})
    X = np.log([r["m"] for r in rows])
    Y = np.log([r["ratio"] for r in rows])
    A = np.stack([X, np.ones_like(X)], axis=1)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    slope = float(coef[0])
    target = 1.0 / e.q - 1.0 / e.p
    manifest = {"base": base if isinstance(base, str) else "custom",
                "s": s, "p": e.p, "q": e.q, "lambda": lam, "delta": e.delta,
                "tau": e.tau, "k0": k0, "m_max": m_max, "seed": seed,
                "slope": slope, "target": target,
                "pass": bool(slope >= target - 0.1)}
    return {"rows": rows, "manifest": manifest}


def save_experiment(result, csv_path, manifest_path):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "Am", "Bm", "Bm_stderr", "ratio", "paper_bound_Bm"])
        for r in result["rows"]:
            w.writerow([r["m"]] + [f"{r[k]:.12e}" for k in
                                   ("Am", "Bm", "Bm_stderr", "ratio", "paper_bound_Bm")])
    with open(manifest_path, "w") as fh:
        json.dump(result["manifest"], fh, sort_keys=True)
        fh.write("\n")

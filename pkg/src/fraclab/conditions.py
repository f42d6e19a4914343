"""Sufficient-condition sums for fractional Poincare inequalities.

All sums have the shape  sum_A f(inner-sum over the shadow A(W), |A|),
so with tree-structured chains each one is two O(N) passes: a bottom-up
subtree aggregation for the inner sums, then a grouped outer reduction.

Verdicts are a truncation diagnosis, not a proof.  Smoothly decaying
increment sequences use a plain geometric-ratio test; constructions with
periodic per-generation structure (rooms-and-passages give one spike per
apartment cohort) are aggregated into period-aligned blocks, and the block
ratios are extrapolated before comparing against the decay threshold,
because successive cohort ratios converge at a known geometric rate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chains import ChainDecomposition

__all__ = ["ExponentSet", "ConditionReport", "eval_sharpe_sum", "eval_pp_sup",
           "eval_classical_condition", "eval_sigma_thm51", "check_regime"]

RATIO_THRESHOLD = 0.9


@dataclass
class ExponentSet:
    n: int = 2
    p: float = 2.0
    q: float = 1.0
    delta: float = 0.5
    tau: float = 0.5
    s: float = 1.0
    lam: float = None

    def __post_init__(self):
        if self.lam is None:
            self.lam = self.n - 1
        if not (self.p >= 1 and self.q >= 1):
            raise ValueError("p, q must be >= 1")
        if not (0 < self.delta < 1):
            raise ValueError("delta must be in (0,1)")
        if not (0 < self.tau <= 1):
            raise ValueError("tau must be in (0,1]")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if not (self.n - 1 <= self.lam < self.n):
            raise ValueError("lambda must be in [n-1, n)")


@dataclass
class ConditionReport:
    condition: str
    value: float
    verdict: str
    per_generation: list          # [(j, increment, running)]
    tail_estimate: float = math.nan
    argmax_id: int = None
    details: dict = field(default_factory=dict)

    def to_json_dict(self):
        d = {
            "condition": self.condition,
            "value": f"{self.value:.12e}",
            "verdict": self.verdict,
            "per_generation": [{"j": int(j), "increment": f"{inc:.12e}",
                                "running": f"{run:.12e}"}
                               for j, inc, run in self.per_generation],
        }
        if not math.isnan(self.tail_estimate):
            d["tail_estimate"] = f"{self.tail_estimate:.12e}"
        if self.argmax_id is not None:
            d["argmax_id"] = int(self.argmax_id)
        if self.details:
            d["details"] = {k: (v if isinstance(v, (str, int, bool)) else float(v))
                            for k, v in self.details.items()}
        return d

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True)
            f.write("\n")

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["j", "increment", "running"])
            for j, inc, run in self.per_generation:
                w.writerow([j, f"{inc:.12e}", f"{run:.12e}"])


# ---------------------------------------------------------------------------
# verdict logic


def _detect_period(incs, max_period=4):
    """Spacing of local maxima in the tail of the increment sequence; 1 for
    smooth sequences."""
    tail = incs[-min(len(incs), 12):]
    peaks = [i for i in range(1, len(tail))
             if tail[i] > tail[i - 1]
             and (i == len(tail) - 1 or tail[i] >= tail[i + 1])]
    if len(peaks) < 2:
        return 1
    # early peaks can sit on a transient, so trust the most recent spacings
    gaps = np.diff(peaks)[-3:]
    per = int(gaps[-1])
    if per < 1 or per > max_period:
        return 1
    if np.all(gaps == per) or (len(gaps) >= 2 and gaps[-2] == per):
        return per
    return 1


def _sum_verdict(incs):
    """Verdict for a positive-term sum from its per-generation increments."""
    incs = [v for v in incs]
    total = math.fsum(incs)
    if not math.isfinite(total):
        return "diverging", {}
    pos = [v for v in incs if v > 0]
    if len(pos) <= 2:
        return "finite", {"reason": "sum exhausted within two generations"}
    r_a = incs[-2] / incs[-3] if incs[-3] > 0 else math.inf
    r_b = incs[-1] / incs[-2] if incs[-2] > 0 else math.inf
    if r_a < RATIO_THRESHOLD and r_b < RATIO_THRESHOLD:
        return "finite", {"ratio_1": r_a, "ratio_2": r_b, "period": 1}
    period = _detect_period(incs)
    det = {"period": period}
    nblocks = len(incs) // period
    if nblocks >= 3:
        blocks = [math.fsum(incs[len(incs) - (k + 1) * period:
                                 len(incs) - k * period])
                  for k in range(nblocks)][::-1]  # oldest first
        b1, b2, b3 = blocks[-3], blocks[-2], blocks[-1]
        if b1 > 0 and b2 > 0:
            r1, r2 = b2 / b1, b3 / b2
            det.update(block_ratio_1=r1, block_ratio_2=r2)
            if r1 > 0:
                # successive block ratios approach their limit geometrically
                # (the cube counts per scale do); extrapolate before testing
                L = r2 * r2 / r1
                det["extrapolated_ratio"] = L
                if L >= 1.0:
                    return "diverging", det
                if L < RATIO_THRESHOLD**period:
                    return "finite", det
                return "inconclusive-at-truncation", det
    if r_a >= 1.0 and r_b >= 1.0:
        return "diverging", det
    return "inconclusive-at-truncation", det


def _sup_verdict(traj):
    """Verdict for a sup-type condition from the per-generation sups."""
    pos = [v for v in traj if v > 0]
    if len(pos) <= 2:
        return "finite", {}
    r_a = traj[-2] / traj[-3] if traj[-3] > 0 else math.inf
    r_b = traj[-1] / traj[-2] if traj[-2] > 0 else math.inf
    if r_a < 1.0 and r_b < 1.0:
        return "finite", {"ratio_1": r_a, "ratio_2": r_b}
    if r_a >= 1.0 and r_b >= 1.0:
        return "diverging", {"ratio_1": r_a, "ratio_2": r_b}
    return "inconclusive-at-truncation", {"ratio_1": r_a, "ratio_2": r_b}


def _tail_estimate(per_gen, verdict):
    if verdict != "finite" or len(per_gen) < 2:
        return math.nan
    last = per_gen[-1][1]
    prev = per_gen[-2][1]
    if prev <= 0 or last <= 0:
        return 0.0
    r = last / prev
    if r >= 1:
        return math.nan
    return last * r / (1 - r)


# ---------------------------------------------------------------------------
# the sums


def _chain_weight(cd: ChainDecomposition, expo):
    """w_Q = max(l(C(Q*)), 1)^expo * |Q| with the 0^0 = 1 root convention."""
    ell = np.maximum(cd.depth.astype(float), 1.0)
    return ell**expo * cd.W.volume


def _grouped(cd, terms):
    """fsum of `terms` grouped by the generation of A, in generation order."""
    gens = np.unique(cd.W.gen)
    per = []
    running = 0.0
    for g in gens:
        inc = math.fsum(terms[cd.W.gen == g].tolist())
        running = math.fsum([running, inc])
        per.append((int(g), inc, running))
    return per, running


def eval_sharpe_sum(cd: ChainDecomposition, e: ExponentSet) -> ConditionReport:
    """sum_A ( sum_{Q in A(W)} l(C(Q*))^{q-1} |Q| |A|^{q(delta/n - 1/p)} )^{p/(p-q)}."""
    if e.q >= e.p:
        raise ValueError("requires q < p (use eval_pp_sup for q = p)")
    W = cd.W
    inner = cd.subtree_sum(_chain_weight(cd, e.q - 1.0))
    volA = W.volume
    terms = (inner * volA ** (e.q * (e.delta / e.n - 1.0 / e.p))) ** (e.p / (e.p - e.q))
    per, total = _grouped(cd, terms)
    verdict, det = _sum_verdict([inc for _, inc, _ in per])
    return ConditionReport("sharpe-sum", total, verdict, per,
                           tail_estimate=_tail_estimate(per, verdict), details=det)


def _sup_report(cd, name, chain_expo, vol_expo):
    inner = cd.subtree_sum(_chain_weight(cd, chain_expo))
    terms = inner * cd.W.volume**vol_expo
    gens = np.unique(cd.W.gen)
    per = []
    running = 0.0
    for g in gens:
        sel = cd.W.gen == g
        inc = float(terms[sel].max())
        running = max(running, inc)
        per.append((int(g), inc, running))
    argmax = int(np.argmax(terms))
    verdict, det = _sup_verdict([inc for _, inc, _ in per])
    return ConditionReport(name, float(terms.max()), verdict, per,
                           argmax_id=argmax, details=det)


def eval_pp_sup(cd: ChainDecomposition, e: ExponentSet) -> ConditionReport:
    """sup_A sum_{Q in A(W)} l(C(Q*))^{p-1} |Q| |A|^{p delta/n - 1}."""
    if e.p != e.q:
        raise ValueError("requires p = q (use eval_sharpe_sum for q < p)")
    return _sup_report(cd, "pp-sup", e.p - 1.0, e.p * e.delta / e.n - 1.0)


def eval_classical_condition(cd: ChainDecomposition, p: float) -> ConditionReport:
    """Same sup with the non-fractional volume exponent p/n - 1."""
    if p < 1:
        raise ValueError("p must be >= 1")
    n = cd.W.n
    return _sup_report(cd, "classical-pp-sup", p - 1.0, p / n - 1.0)


def eval_sigma_thm51(cd: ChainDecomposition, e: ExponentSet) -> ConditionReport:
    """sum_A ( |union A(W)| |A|^{delta/n - 1/p} )^{p/(p-1)} -- the q = 1 case
    of the sharpe sum, with shadow volumes as the inner sums."""
    if e.p <= 1:
        raise ValueError("requires p > 1")
    W = cd.W
    shadow = cd.shadow_volumes()
    terms = (shadow * W.volume ** (e.delta / e.n - 1.0 / e.p)) ** (e.p / (e.p - 1.0))
    per, total = _grouped(cd, terms)
    verdict, det = _sum_verdict([inc for _, inc, _ in per])
    return ConditionReport("sigma-shadow-sum", total, verdict, per,
                           tail_estimate=_tail_estimate(per, verdict), details=det)


# ---------------------------------------------------------------------------
# parameter regimes


def check_regime(e: ExponentSet) -> dict:
    """Classifies the exponent point and evaluates the chain-length/geometry
    compatibility inequality
      (p-q)(lam-n)/(pq) + (s-1)(n-1)/p >= 1 - s(1-delta)."""
    n, p, q, delta, s, lam = e.n, e.p, e.q, e.delta, e.s, e.lam
    rels_lhs = (p - q) * (lam - n) / (p * q) + (s - 1) * (n - 1) / p
    rels_rhs = 1 - s * (1 - delta)
    rels = bool(rels_lhs >= rels_rhs - 1e-12)
    out = {"rels_holds": rels, "rels_lhs": rels_lhs, "rels_rhs": rels_rhs}
    if s == 1:
        if p == q:
            out["regime"] = "inequality-holds-by-thm42"
        elif n - delta * p > 0 and 1 < p <= q <= n * p / (n - delta * p):
            out["regime"] = "inequality-holds-by-thm46"
        else:
            out["regime"] = "outside"
        return out
    s_ok = s < (n + 1 - lam) / (1 - delta)
    denom = n - s * (1 - delta) - lam + 1
    out["s_bound_ok"] = bool(s_ok)
    if abs(denom) < 1e-15:
        out["regime"] = "outside"
        out["boundary"] = True
        return out
    p_star = (s * (n - 1) - lam + 1) / denom
    out["p_star"] = p_star
    if not s_ok or denom < 0:
        out["regime"] = "outside"
    elif p > p_star + 1e-12:
        out["regime"] = "thm51-positive"
    elif p >= 1:
        out["regime"] = "thm64-sharp"
    else:
        out["regime"] = "outside"
    return out

import json
import math

import numpy as np
import pytest

from fraclab.chains import build_chain_decomposition
from fraclab.conditions import (ConditionReport, ExponentSet, _detect_period,
                                _sum_verdict, check_regime,
                                eval_classical_condition, eval_pp_sup,
                                eval_sharpe_sum, eval_sigma_thm51)
from fraclab.geometry import make_domain
from fraclab.whitney import whitney_decompose


@pytest.fixture(scope="module")
def small_cd():
    d = make_domain("unit-cube", J=5)
    W = whitney_decompose(d, 5)
    assert len(W) <= 500
    return build_chain_decomposition(W)


def brute_inner_sums(cd, expo):
    """Inner sums by explicit double loop over chain membership."""
    W = cd.W
    N = len(W)
    inner = np.zeros(N)
    for Q in range(N):
        w = max(cd.depth[Q], 1) ** expo * W.volume[Q]
        for A in cd.chain(Q):
            inner[A] += w
    return inner


def test_sharpe_sum_matches_brute_force(small_cd):
    cd = small_cd
    e = ExponentSet(n=2, p=2.0, q=1.0, delta=0.5)
    inner = brute_inner_sums(cd, e.q - 1.0)
    terms = (inner * cd.W.volume ** (e.q * (e.delta / 2 - 1 / e.p))) ** (e.p / (e.p - e.q))
    brute = math.fsum(sorted(terms.tolist()))
    rep = eval_sharpe_sum(cd, e)
    assert rep.value == pytest.approx(brute, rel=1e-12)


def test_pp_sup_matches_brute_force(small_cd):
    cd = small_cd
    for p in (1.0, 2.0):
        e = ExponentSet(n=2, p=p, q=p, delta=0.5)
        inner = brute_inner_sums(cd, p - 1.0)
        terms = inner * cd.W.volume ** (p * e.delta / 2 - 1)
        rep = eval_pp_sup(cd, e)
        assert rep.value == pytest.approx(terms.max(), rel=1e-12)
        assert terms[rep.argmax_id] == pytest.approx(terms.max(), rel=1e-12)


def test_sigma_equals_sharpe_at_q1(small_cd):
    cd = small_cd
    e = ExponentSet(n=2, p=2.0, q=1.0, delta=0.5)
    a = eval_sharpe_sum(cd, e)
    b = eval_sigma_thm51(cd, e)
    assert a.value == b.value
    assert [row[1] for row in a.per_generation] == [row[1] for row in b.per_generation]


def test_classical_condition_runs(small_cd):
    rep = eval_classical_condition(small_cd, 2.0)
    assert rep.value > 0
    assert rep.verdict in ("finite", "diverging", "inconclusive-at-truncation")


def test_exponent_validation():
    with pytest.raises(ValueError):
        ExponentSet(p=0.5)
    with pytest.raises(ValueError):
        ExponentSet(delta=1.5)
    with pytest.raises(ValueError):
        ExponentSet(tau=0.0)
    with pytest.raises(ValueError):
        ExponentSet(s=0.5)
    with pytest.raises(ValueError):
        ExponentSet(lam=2.5)
    with pytest.raises(ValueError):
        eval_sharpe_sum(None, ExponentSet(p=2.0, q=2.0))
    with pytest.raises(ValueError):
        eval_pp_sup(None, ExponentSet(p=2.0, q=1.0))
    with pytest.raises(ValueError):
        eval_sigma_thm51(None, ExponentSet(p=1.0, q=1.0))


def test_sum_verdict_geometric():
    v, _ = _sum_verdict([1.0 * 0.5**k for k in range(10)])
    assert v == "finite"
    v, _ = _sum_verdict([1.0 * 1.3**k for k in range(10)])
    assert v == "diverging"
    v, _ = _sum_verdict([1.0, 0.5])
    assert v == "finite"


def test_sum_verdict_periodic_spikes():
    # alternating spike/floor with decaying spike blocks: finite
    incs = []
    for k in range(8):
        incs += [1e-6, 0.5**k]
    v, det = _sum_verdict(incs)
    assert v == "finite"
    assert det.get("period", 1) >= 1
    # growing spikes: diverging
    incs = []
    for k in range(8):
        incs += [1e-6, 1.5**k]
    v, _ = _sum_verdict(incs)
    assert v == "diverging"


def test_detect_period():
    seq = [0.1, 1.0, 0.1, 0.9, 0.1, 0.8, 0.1, 0.7, 0.1, 0.6]
    assert _detect_period(seq) == 2
    assert _detect_period([1.0 * 0.9**k for k in range(10)]) == 1


def test_check_regime_table():
    # classical p = q at s = 1
    assert check_regime(ExponentSet(n=2, p=2, q=2, delta=0.5, s=1.0))["regime"] \
        == "inequality-holds-by-thm42"
    assert check_regime(ExponentSet(n=2, p=2, q=2.5, delta=0.5, s=1.0))["regime"] \
        == "inequality-holds-by-thm46"
    # s = 2, lambda = 1, delta = 0.5: threshold p* = 2
    base = dict(n=2, q=1.0, delta=0.5, s=2.0, lam=1.0)
    r3 = check_regime(ExponentSet(p=3.0, **base))
    assert r3["regime"] == "thm51-positive"
    assert r3["p_star"] == pytest.approx(2.0)
    r2 = check_regime(ExponentSet(p=2.0, **base))
    assert r2["regime"] == "thm64-sharp"
    # at the headline point the compatibility relation is an equality
    assert r2["rels_lhs"] == pytest.approx(r2["rels_rhs"])
    r15 = check_regime(ExponentSet(p=1.5, **base))
    assert r15["regime"] == "thm64-sharp"


def test_report_serialization(tmp_path, small_cd):
    rep = eval_pp_sup(small_cd, ExponentSet(n=2, p=2.0, q=2.0, delta=0.5))
    jp = tmp_path / "r.json"
    cp = tmp_path / "r.csv"
    rep.save_json(str(jp))
    rep.save_csv(str(cp))
    d = json.loads(jp.read_text())
    assert d["condition"] == "pp-sup"
    assert d["verdict"] == rep.verdict
    assert float(d["value"]) == pytest.approx(rep.value, rel=1e-11)
    lines = cp.read_text().strip().split("\n")
    assert lines[0] == "j,increment,running"
    assert len(lines) == 1 + len(rep.per_generation)

from __future__ import annotations

import math

import pytest
from scipy.optimize import brentq

from mfdbsde.contraction import (
    MeasureSpec,
    c_beta,
    finite_condition,
    infinite_condition,
    measure_condition,
    measure_factor,
    search_beta,
    special_condition,
)
from mfdbsde.errors import DomainError


def test_c_beta_values():
    assert c_beta(1.0, 1.0) == pytest.approx(9 * math.e, abs=1e-12)
    assert c_beta(0.1, 1.0) == pytest.approx(18.0, abs=1e-12)
    assert c_beta(2.0, 0.5) == pytest.approx(9 * math.e, abs=1e-12)


def test_c_beta_domain():
    with pytest.raises(DomainError):
        c_beta(0.0, 1.0)


def test_finite_condition_values():
    assert finite_condition(1.0, 0.01, 1.0, 0.0) == pytest.approx(18 * math.e * 0.01, rel=1e-12)
    assert finite_condition(1.0, 0.0, 3.0, -0.5) == 0.0
    assert finite_condition(1.0, 0.01, 1.0, -0.1) == pytest.approx(0.09 * math.e * (1 + math.exp(0.1)), rel=1e-12)
    assert finite_condition(1.0, 0.01, 1.0, -0.1) == pytest.approx(0.5150203, abs=1e-7)


def test_measure_factors():
    assert measure_factor(1.0, MeasureSpec("dirac", t0=0.0)) == 3.0
    assert measure_factor(1.0, MeasureSpec("lebesgue", delta=0.5)) == pytest.approx(1 + math.exp(0.5), rel=1e-14)
    assert measure_factor(1.0, MeasureSpec("lebesgue", delta=0.0)) == 2.0
    assert measure_condition(1.0, 0.01, 1.0, MeasureSpec("dirac")) == pytest.approx(0.27 * math.e, rel=1e-12)


def test_special_condition_values():
    v = special_condition(1.0, 0.005, 1.0, 0.5)
    assert v == pytest.approx(9 * math.e * 0.005 * (2 + math.exp(0.5)), rel=1e-12)
    assert v == pytest.approx(0.4463214, abs=1e-7)
    assert special_condition(1.0, 0.0, 1.0, 0.5) == 0.0
    assert special_condition(1.0, 0.01, 1.0, 0.0) >= finite_condition(1.0, 0.01, 1.0, 0.0)


def test_infinite_condition_examples():
    ok = infinite_condition(1.1, 0.026, 0.05, 0.0)
    assert ok.ok
    assert ok.slack_beta == pytest.approx(1.1 - 6 * 0.0025 / 0.026 - 0.5, abs=1e-12)
    assert ok.slack_eps == pytest.approx(0.5 - 6 * 0.026 * 3, abs=1e-12)
    assert infinite_condition(2.0, 0.01, 0.0, -0.5).ok
    bad = infinite_condition(5.0, 0.01, 1.0, -1.0)
    assert not bad.ok and bad.slack_beta < 0


def _crossing_min(C):
    # max(9e^b, 8 + 1/b) is minimized where the increasing and decreasing branches meet
    b = brentq(lambda x: 9 * math.exp(x) - 8 - 1 / x, 1e-3, 1.0, xtol=1e-15)
    return b, 2 * C * 9 * math.exp(b)


def _brute_min(fn, lo=1e-4, hi=50.0, n=200_000):
    return min(fn(lo * (hi / lo) ** (k / (n - 1))) for k in range(n))


def test_search_finite_feasible():
    rep = search_beta("finite_point", 0.01, 1.0, s=0.0)
    assert rep.feasible
    b, v = _crossing_min(0.01)
    assert rep.value == pytest.approx(v, abs=1e-9)
    assert rep.value <= _brute_min(lambda b: finite_condition(b, 0.01, 1.0, 0.0)) + 1e-9
    assert rep.beta == pytest.approx(b, abs=1e-6)


def test_search_finite_infeasible():
    rep = search_beta("finite_point", 1.0, 1.0, s=0.0)
    assert not rep.feasible
    assert rep.value == pytest.approx(_crossing_min(1.0)[1], abs=1e-7)


def test_search_is_stable():
    a = search_beta("special_two_point", 0.004, 1.0, delta=0.5)
    b = search_beta("special_two_point", 0.004, 1.0, delta=0.5)
    assert (a.beta, a.value) == (b.beta, b.value)


def test_search_infinite_returns_admissible_pair():
    rep = search_beta("infinite", 0.05, r=0.0)
    assert rep.feasible
    chk = infinite_condition(rep.beta, rep.epsilon, 0.05, 0.0)
    assert chk.ok and chk.slack_beta > 0 and chk.slack_eps > 0


def test_search_infinite_infeasible_for_large_constant():
    rep = search_beta("infinite", 1.0, r=0.0)
    assert not rep.feasible and rep.value > 1

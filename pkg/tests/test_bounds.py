import decimal
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lossy_pushsum.bounds import (
    POWER_CAP,
    bound_set,
    gamma,
    high_p_term,
    highp_ratios,
    lower_bound_closed,
    lower_bound_series,
    r_term,
    region,
    t_pmf,
    upper_bound_general,
    upper_bound_highp,
    write_bounds_csv,
)
from lossy_pushsum.protocol import AgentState, EdgeEvent, ProtocolParams, SystemState, push_sum_step

P_GRID = [round(0.05 * k, 2) for k in range(1, 20)]
P_TENTHS = [round(0.1 * k, 1) for k in range(1, 10)]


# --- independent oracles ----------------------------------------------------

def series_oracle(p, terms=400):
    g = (1 - math.sqrt(1 - p * p)) / p if p > 0 else 0.0
    return g - 4 * (1 - g) * math.fsum((2 * g) ** i / (2**i + 1) ** 2 for i in range(1, terms))


def t_pmf_oracle(p, a):
    # P(t = a) as a sum over the number of halvings in the slower direction
    a = abs(a)
    terms = []
    for l in range(0, 5000):
        m = 2 * l + a
        log_term = (math.log1p(-p) + m * math.log(p) + math.lgamma(m + 1) - math.lgamma(l + 1)
                    - math.lgamma(l + a + 1) - m * math.log(2))
        terms.append(math.exp(log_term))
        if l > 10 and terms[-1] < 1e-30:
            break
    return math.fsum(terms)


def ratios_by_simulation(k1, l1, k2, l2):
    params = ProtocolParams(2, 0.5)
    s = SystemState((AgentState(-1.0, 1.0), AgentState(1.0, 1.0)))
    script = ([EdgeEvent(0, 1, False)] * k1 + [EdgeEvent(1, 0, False)] * l1 + [EdgeEvent(0, 1, True)]
              + [EdgeEvent(0, 1, False)] * k2 + [EdgeEvent(1, 0, False)] * l2 + [EdgeEvent(1, 0, True)])
    for ev in script:
        s = push_sum_step(s, params, ev)
    return s.ratios()


# --- gamma ------------------------------------------------------------------

def test_gamma_examples():
    assert gamma(0.6) == 1 / 3
    assert gamma(1.0) == 1.0
    assert gamma(0.0) == 0.0
    assert gamma(1e-3) == pytest.approx(5e-4, rel=1e-3)


@given(st.floats(1e-9, 1.0))
def test_gamma_matches_defining_formula(p):
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        d = decimal.Decimal(p)
        ref = float((1 - (1 - d * d).sqrt()) / d)
    assert gamma(p) == pytest.approx(ref, rel=1e-14)


def test_gamma_strictly_increasing():
    g = [gamma(p) for p in np.linspace(0, 1, 2001)]
    assert np.all(np.diff(g) > 0)


@pytest.mark.parametrize("p", [-0.1, 1.1, float("nan")])
def test_bad_p_rejected(p):
    with pytest.raises(ValueError):
        gamma(p)


# --- lower bounds -----------------------------------------------------------

@pytest.mark.parametrize("p", P_GRID)
def test_series_is_below_and_close_to_full_sum(p):
    val, ref = lower_bound_series(p), series_oracle(p)
    assert val <= ref + 1e-15
    assert val == pytest.approx(ref, abs=1e-12)


def test_series_examples():
    assert lower_bound_series(0.6) == pytest.approx(0.0765, rel=2e-3)
    assert lower_bound_series(0.6) == pytest.approx(0.0764286424685, abs=1e-12)
    assert lower_bound_series(0.0) == 0.0
    assert lower_bound_series(1.0) == 1.0


def test_series_monotone_in_terms():
    vals = [lower_bound_series(0.9, t) for t in (1, 2, 5, 10, 40, 100)]
    assert np.all(np.diff(vals) >= 0)


def test_closed_examples():
    assert lower_bound_closed(0.6) == pytest.approx(1 / 3 - 16 / 81 - 12 / 135, abs=1e-15)
    assert lower_bound_closed(1.0) == pytest.approx(1.0, abs=1e-12)
    assert lower_bound_closed(0.0) == 0.0


@pytest.mark.parametrize("p", [1e-3, 1e-4])
def test_lower_bounds_asymptote(p):
    assert lower_bound_series(p) / (p / 18) == pytest.approx(1, rel=0.02 if p == 1e-3 else 0.002)
    assert lower_bound_closed(p) / (p / 18) == pytest.approx(1, rel=0.02)


# --- general upper bound ----------------------------------------------------

def test_general_upper_examples():
    assert upper_bound_general(0.0) == 0.0
    assert upper_bound_general(1.0) == 1.0
    p = 0.5
    assert upper_bound_general(p) == pytest.approx(
        p * (1 - p) ** 2 / (3 + p) + p * (18 + 23 * p + 50 * p**2 - 41 * p**3) / (25 * (1 + p * p)),
        rel=1e-15)
    assert upper_bound_general(0.5) >= lower_bound_series(0.5)


# --- t distribution ---------------------------------------------------------

@pytest.mark.parametrize("p", [0.1, 0.3, 0.6, 0.9])
@pytest.mark.parametrize("a", [0, 1, 2, 5, -3])
def test_t_pmf_matches_binomial_series(p, a):
    assert t_pmf(p, a) == pytest.approx(t_pmf_oracle(p, a), rel=1e-10)


def test_t_pmf_examples():
    assert t_pmf(0.6, 0) == 0.5
    assert t_pmf(0.6, 1) == pytest.approx(1 / 6, rel=1e-15)
    assert t_pmf(0.6, -1) == t_pmf(0.6, 1)
    assert list(t_pmf(0.0, np.array([-1, 0, 2]))) == [0.0, 1.0, 0.0]
    with pytest.raises(ValueError):
        t_pmf(1.0, 0)


@pytest.mark.parametrize("p", P_TENTHS)
def test_t_pmf_normalized(p):
    a = np.arange(-40, 41)
    g = gamma(p)
    tail = 2 * t_pmf(p, 0) * g**41 / (1 - g)
    assert abs(math.fsum(t_pmf(p, a)) + tail - 1) <= 1e-12


# --- high-p ratios and regions ----------------------------------------------

def test_ratio_examples():
    assert highp_ratios(0, 0) == pytest.approx((-1 / 5, 1 / 3), abs=1e-16)
    assert highp_ratios(-1, 0)[0] == -0.5
    assert highp_ratios(60, 3)[1] == pytest.approx(1, abs=1e-15)
    with pytest.raises(ValueError):
        highp_ratios(POWER_CAP + 1, 0)


@given(*[st.integers(0, 12)] * 4)
def test_ratios_match_direct_simulation(k1, l1, k2, l2):
    direct = ratios_by_simulation(k1, l1, k2, l2)
    np.testing.assert_allclose(highp_ratios(k1 - l1, l2 - k2), direct, rtol=1e-12, atol=1e-15)


def test_region_examples():
    assert region(0, 0) == "c" and r_term(0, 0) == pytest.approx(1 / 9, abs=1e-16)
    assert region(-1, 0) == "a" and r_term(-1, 0) == 0.25
    assert region(0, 1) == "d" and r_term(0, 1) == highp_ratios(0, 1)[0] ** 2
    assert region(3, 1) == "b"
    assert high_p_term(0, 0).r == r_term(0, 0)


def test_regions_partition_and_pick_worse_ratio():
    a = np.arange(-50, 51)
    a1, a2 = np.meshgrid(a, a, indexing="ij")
    labels = np.vectorize(region)(a1, a2)  # asserts exactly one predicate each
    assert set(np.unique(labels)) == set("abcd")
    r1, r2 = highp_ratios(a1, a2)
    np.testing.assert_array_equal(r_term(a1, a2), np.maximum(r1**2, r2**2))
    assert np.all((0 <= r_term(a1, a2)) & (r_term(a1, a2) <= 1))


# --- high-p bound -----------------------------------------------------------

def test_highp_against_brute_force_sum():
    p, cutoff = 0.5, 40
    g = gamma(p)
    total = 0.0
    for a1 in range(-cutoff, cutoff + 1):
        for a2 in range(-cutoff, cutoff + 1):
            r1, r2 = highp_ratios(a1, a2)
            total += g ** (abs(a1) + abs(a2)) * max(r1 * r1, r2 * r2)
    brute = 0.5 + (1 - p) / (2 * (1 + p)) * total
    val = upper_bound_highp(p, cutoff)
    # the difference is exactly the tail allowance, which is tiny here
    assert brute <= val <= brute + 1e-20 + 1e-12


def test_highp_monotone_in_cutoff_and_converges():
    for p in (0.3, 0.8):
        vals = [upper_bound_highp(p, c) for c in (2, 5, 10, 40, 80)]
        assert np.all(np.diff(vals) <= 1e-15)
        assert vals[-1] == pytest.approx(upper_bound_highp(p), abs=1e-9)


def test_highp_examples():
    assert upper_bound_highp(0.999) <= 1.0
    assert upper_bound_highp(0.9) < upper_bound_general(0.9)
    for p in (0.0, 1.0):
        with pytest.raises(ValueError):
            upper_bound_highp(p)
    with pytest.raises(ValueError):
        upper_bound_highp(0.5, 0)


# --- sandwich ---------------------------------------------------------------

@pytest.mark.parametrize("p", P_GRID)
def test_sandwich(p):
    bs = bound_set(p)
    assert 0 <= bs.lower_closed <= bs.lower_series <= bs.upper <= 1
    assert bs.upper_highp is not None and 0 <= bs.upper_highp <= 1


def test_bounds_csv():
    buf = io.StringIO()
    rows = write_bounds_csv(buf, [round(0.05 * k, 2) for k in range(21)])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "p,gamma,lower_closed,lower_series,upper_general,upper_highp"
    assert len(lines) == 22 and len(rows) == 21
    assert lines[1] == "0.0,0.0,0.0,0.0,0.0,"
    last = lines[-1].split(",")
    assert last[0] == "1.0" and float(last[2]) == pytest.approx(1, abs=1e-12)
    assert last[3:5] == ["1.0", "1.0"] and last[5] == ""

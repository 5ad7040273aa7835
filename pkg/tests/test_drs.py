import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairsynth.drs import DRSAbort, DrsConfig, acceptance_log_prob, drs_filter, l_from_ratios, rejection_sample


def discrete_proposal(q, seed):
    """Deterministic proposal: candidate i is the i-th draw of a fixed categorical stream."""
    def propose(k, start):
        rng = np.random.default_rng([seed, start])
        return rng.choice(len(q), size=k, p=q)
    return propose


def tv(a, b):
    return 0.5 * np.abs(np.asarray(a) - np.asarray(b)).sum()


def test_l_of_constant_ratios():
    assert l_from_ratios(np.ones(5000), 0.999) == 1.0


def test_l_of_spread_ratios():
    ratios = np.linspace(1, 1000, 100_000)
    assert l_from_ratios(ratios, 0.999) == pytest.approx(999.0, abs=0.5)


def test_l_at_clamp_ceiling_is_the_ceiling():
    assert l_from_ratios(np.full(100, 1e3), 0.999) == 1e3


def test_l_rejects_empty():
    with pytest.raises(ValueError):
        l_from_ratios([], 0.999)


def test_config_validation():
    with pytest.raises(ValueError):
        DrsConfig(l_constant_percentile=0)
    with pytest.raises(ValueError):
        DrsConfig(burn_in=10)
    with pytest.raises(ValueError):
        DrsConfig(max_attempts_factor=0)


def test_acceptance_probability():
    p = np.exp(acceptance_log_prob([0.5, 1.0, 2.0, 0.0], 1.0, 0.0))
    np.testing.assert_allclose(p, [0.5, 1.0, 1.0, 0.0])
    shifted = np.exp(acceptance_log_prob([1.0], 1.0, math.log(4)))
    assert shifted[0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        acceptance_log_prob([1.0], 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(-3, 3))
def test_acceptance_is_a_probability_and_monotone(r, l_const, gamma):
    lo, hi = acceptance_log_prob([r, 2 * r], l_const, gamma)
    assert lo <= 0 and hi <= 0 and lo <= hi


def test_unit_ratios_accept_everything():
    propose = discrete_proposal([0.5, 0.5], 0)
    chunks, attempts = rejection_sample(propose, lambda c: np.ones(len(c)), 1000, 1.0, 0.0, 10_000, 0, 256)
    assert attempts == 1024 and sum(len(c) for c in chunks) == 1000


def test_exact_target_and_determinism():
    p, q = np.array([0.2, 0.8]), np.array([0.5, 0.5])
    ratio = lambda c: (p / q)[c]
    args = (discrete_proposal(q, 1), ratio, 777, 1.6, 0.0, 100_000, 5, 100)
    a, _ = rejection_sample(*args)
    b, _ = rejection_sample(*args)
    a, b = np.concatenate(a), np.concatenate(b)
    assert len(a) == 777
    np.testing.assert_array_equal(a, b)


def test_oracle_ratios_recover_the_target():
    p, q = np.array([0.2, 0.8]), np.array([0.5, 0.5])
    chunks, _ = rejection_sample(discrete_proposal(q, 2), lambda c: (p / q)[c], 50_000,
                                 l_from_ratios((p / q)[np.random.default_rng(0).choice(2, 10_000, p=q)], 0.999),
                                 0.0, 1_000_000, 9)
    got = np.bincount(np.concatenate(chunks), minlength=2) / 50_000
    assert tv(got, p) < 0.02


def test_large_gamma_aborts():
    with pytest.raises(DRSAbort) as err:
        rejection_sample(discrete_proposal([0.5, 0.5], 0), lambda c: np.ones(len(c)), 100, 1.0, 30.0, 2000, 0)
    assert err.value.attempts == 2000
    assert "acceptance rate" in str(err.value)


def test_bad_target():
    with pytest.raises(ValueError):
        rejection_sample(discrete_proposal([1.0], 0), lambda c: np.ones(len(c)), 0, 1.0, 0.0, 10, 0)


def test_drs_filter_on_bundle(tiny_bundle):
    cfg = DrsConfig(burn_in=500)
    b1 = drs_filter(tiny_bundle, 300, cfg, seed=3)
    b2 = drs_filter(tiny_bundle, 300, cfg, seed=3)
    assert len(b1.x_prime) == 300 and b1.stage == "drs_filtered"
    assert 0 < b1.acceptance_rate <= 1
    np.testing.assert_array_equal(b1.x_prime, b2.x_prime)


def test_drs_filter_with_unit_ratio_keeps_proposals(tiny_bundle):
    b = drs_filter(tiny_bundle, 200, DrsConfig(burn_in=500, chunk=200), seed=1,
                   ratio_fn=lambda x, y: np.ones(len(x)))
    assert b.acceptance_rate == 1.0

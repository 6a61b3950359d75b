import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relayalloc.fbl_rate import (LinkBudget, PayloadTooLargeError, backoff_bits, dispersion,
                                 invert_power, perspective_rate, q_func, q_inv, rate_approx,
                                 rate_exact, required_snr)

# Frozen from 50-digit mpmath bisections; tests/oracles.py regenerates them.
Q_INV_1E5 = 4.2648907939228246285
Q_INV_1E9 = 5.9978070150076868716
Q_INV_5E6 = 4.4171734134690221067
# 180 channel uses, eps 1e-5, SNR 63, evaluated at 50 digits
RATE_APPROX_SNR63 = 997.44969034610623629
RATE_EXACT_SNR63 = 997.45976790332548477
# B=1000, 0.5 ms x 360 kHz, eps 1e-5, h=1: bisection on the approximate rate
POWER_B1000_H1 = 63.631626212307033117


def budget(gain=1.0, eps=1e-5, duration=0.5e-3, bandwidth=360e3):
    return LinkBudget(gain, duration, bandwidth, eps)


gains = st.floats(1e-3, 1e6)
probs = st.floats(1e-12, 0.5)
powers = st.floats(0.0, 1e3)


class TestLinkBudget:
    def test_blocklength(self):
        assert budget().blocklength == pytest.approx(180.0)

    @pytest.mark.parametrize("kw", [
        {"gain": 0.0}, {"gain": -1.0}, {"eps": 0.0}, {"eps": 1.0},
        {"duration": 0.0}, {"bandwidth": -5.0}, {"duration": 1e-9},
    ])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            budget(**kw)


class TestQInv:
    def test_half_is_zero(self):
        assert q_inv(0.5) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("eps, expected", [
        (1e-5, Q_INV_1E5), (1e-9, Q_INV_1E9), (5e-6, Q_INV_5E6)])
    def test_against_high_precision_bisection(self, eps, expected):
        assert q_inv(eps) == pytest.approx(expected, rel=1e-13)

    def test_round_trip_at_two(self):
        assert q_inv(q_func(2.0)) == pytest.approx(2.0, abs=1e-10)

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5, np.nan])
    def test_domain(self, eps):
        with pytest.raises(ValueError):
            q_inv(eps)

    def test_vectorized(self):
        e = np.array([1e-9, 1e-5, 0.5])
        np.testing.assert_allclose(q_inv(e), [Q_INV_1E9, Q_INV_1E5, 0.0], atol=1e-12)

    # below -3 the tail is within 1e-3 of one and a single ulp moves x by >1e-12
    @given(st.floats(-3.0, 30.0))
    def test_round_trip_property(self, x):
        e = float(q_func(x))
        if 0.0 < e < 1.0:
            assert q_inv(e) == pytest.approx(x, abs=1e-10, rel=1e-10)

    @given(st.floats(1e-300, 0.999))
    def test_deep_tail_relative_accuracy(self, eps):
        assert float(q_func(q_inv(eps))) == pytest.approx(eps, rel=1e-9)


class TestRates:
    def test_zero_power(self):
        assert rate_exact(budget(), 0.0) == 0.0

    def test_shannon_only_at_half(self):
        lb = budget(eps=0.5)
        for p in (0.0, 0.3, 7.0):
            shannon = 180.0 * math.log2(1.0 + p)
            assert rate_exact(lb, p) == pytest.approx(shannon, rel=1e-14, abs=1e-12)
            assert rate_approx(lb, p) == pytest.approx(shannon, rel=1e-14, abs=1e-12)

    def test_high_precision_reference(self):
        lb = budget()
        assert rate_approx(lb, 63.0) == pytest.approx(RATE_APPROX_SNR63, rel=1e-13)
        assert rate_exact(lb, 63.0) == pytest.approx(RATE_EXACT_SNR63, rel=1e-13)

    def test_negative_values_are_returned(self):
        assert rate_approx(budget(), 1e-3) < 0

    def test_rejects_negative_power(self):
        with pytest.raises(ValueError):
            rate_exact(budget(), -1.0)
        with pytest.raises(ValueError):
            rate_approx(budget(), -1.0)

    def test_dispersion_range(self):
        s = np.logspace(-6, 6, 200)
        v = dispersion(s)
        assert np.all((v >= 0) & (v < 1))
        assert dispersion(0.0) == 0.0

    @given(gains, probs, powers)
    def test_approx_below_exact(self, g, eps, p):
        lb = budget(g, eps)
        assert rate_approx(lb, p) <= rate_exact(lb, p) + 1e-9

    def test_monotone_in_power_on_grid(self):
        p = np.logspace(-6, 3, 2000)
        for g, eps in [(1.0, 1e-5), (50.0, 1e-9), (0.2, 0.3)]:
            lb = budget(g, eps)
            assert np.all(np.diff(rate_approx(lb, p)) > 0)
            ex = rate_exact(lb, p)
            # the exact-dispersion rate dips just above p = 0; check where it is non-negative
            live = ex >= 0
            assert np.all(np.diff(ex[live]) > 0)

    def test_exact_rate_dips_near_zero(self):
        lb = budget(1.0, 1e-5)
        assert rate_exact(lb, 1e-4) < rate_exact(lb, 0.0)

    def test_monotone_in_eps(self):
        eps = np.logspace(-12, np.log10(0.5), 500)
        for p in (0.5, 10.0, 300.0):
            vals = [rate_approx(budget(2.0, e), p) for e in eps]
            assert np.all(np.diff(vals) > 0)
            vals = [rate_exact(budget(2.0, e), p) for e in eps]
            assert np.all(np.diff(vals) > 0)

    def test_concave_midpoint(self):
        rng = np.random.default_rng(11)
        lb = budget(3.0, 1e-6)
        x, y = rng.uniform(0, 100, (2, 1000))
        lhs = rate_approx(lb, 0.5 * (x + y))
        rhs = 0.5 * (rate_approx(lb, x) + rate_approx(lb, y))
        assert np.all(lhs >= rhs - 1e-9)


class TestInvertPower:
    def test_bisection_reference(self):
        assert invert_power(budget(), 1000.0) == pytest.approx(POWER_B1000_H1, rel=1e-12)

    def test_half_error_one_bit_per_use(self):
        lb = budget(gain=4.0, eps=0.5)
        assert invert_power(lb, lb.blocklength) == pytest.approx(0.25, rel=1e-14)

    @given(st.floats(1e-4, 1e4), st.floats(1.0, 4000.0), st.floats(1e-10, 0.4))
    def test_round_trip(self, g, bits, eps):
        lb = budget(g, eps)
        p = invert_power(lb, bits)
        assert rate_approx(lb, p) == pytest.approx(bits, rel=1e-9)

    def test_scales_inversely_with_gain(self):
        assert invert_power(budget(2.0), 800.0) == pytest.approx(
            0.5 * invert_power(budget(1.0), 800.0), rel=1e-14)

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValueError):
            invert_power(budget(), 0.0)

    def test_payload_too_large(self):
        with pytest.raises(PayloadTooLargeError):
            invert_power(budget(), 180.0 * 1100)

    def test_required_snr_vectorized(self):
        s = required_snr(np.array([100.0, 1000.0]), 180.0, 1e-5)
        assert s.shape == (2,) and np.all(np.diff(s) > 0)

    def test_backoff(self):
        assert backoff_bits(budget()) == pytest.approx(Q_INV_1E5 / (math.sqrt(180.0) * math.log(2)))


class TestPerspective:
    def test_zero_indicator(self):
        assert perspective_rate(0.0, 5.0, budget()) == 0.0

    def test_clamp_threshold(self):
        assert perspective_rate(1e-13, 1.0, budget()) == 0.0
        assert perspective_rate(1e-11, 1.0, budget()) != 0.0

    def test_unit_indicator(self):
        lb = budget(7.0, 1e-7)
        for p in (0.0, 0.01, 4.0):
            assert perspective_rate(1.0, p, lb) == pytest.approx(rate_approx(lb, p), rel=1e-14, abs=1e-12)

    @given(st.floats(1e-6, 1.0), st.floats(0.0, 100.0), gains)
    def test_identity(self, phi, p, g):
        lb = budget(g)
        assert perspective_rate(phi, phi * p, lb) == pytest.approx(
            phi * rate_approx(lb, p), rel=1e-9, abs=1e-9)

    def test_joint_midpoint_concavity(self):
        rng = np.random.default_rng(5)
        lb = budget(2.0, 1e-5)
        a = np.column_stack([rng.uniform(0, 1, 1000), rng.uniform(0, 50, 1000)])
        b = np.column_stack([rng.uniform(0, 1, 1000), rng.uniform(0, 50, 1000)])
        mid = 0.5 * (a + b)
        lhs = perspective_rate(mid[:, 0], mid[:, 1], lb)
        rhs = 0.5 * (perspective_rate(a[:, 0], a[:, 1], lb) + perspective_rate(b[:, 0], b[:, 1], lb))
        assert np.all(lhs >= rhs - 1e-9)

    def test_hessian_negative_semidefinite_along_directions(self):
        # second difference of the perspective along random directions
        rng = np.random.default_rng(9)
        lb = budget(5.0, 1e-5)
        h = 1e-4
        for _ in range(300):
            x = np.array([rng.uniform(0.1, 0.9), rng.uniform(0.1, 20.0)])
            d = rng.normal(size=2)
            d /= np.linalg.norm(d)
            f = [perspective_rate(*(x + s * h * d), lb) for s in (-1, 0, 1)]
            assert f[0] - 2 * f[1] + f[2] <= 1e-6

    @pytest.mark.parametrize("phi, p", [(-0.1, 1.0), (1.1, 1.0), (0.5, -1.0)])
    def test_domain(self, phi, p):
        with pytest.raises(ValueError):
            perspective_rate(phi, p, budget())


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_gain_power_symmetry(g, p):
    # only the product g * p matters
    assert rate_approx(budget(g), p) == pytest.approx(rate_approx(budget(g * p), 1.0), rel=1e-12, abs=1e-9)

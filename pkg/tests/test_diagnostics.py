import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeflow.constraints import Constraint, ConstraintSet, cone_constraint, expand, sphere_equality
from safeflow.diagnostics import (
    BarrierTrace,
    barrier_estimate,
    decay_check,
    default_slack,
    divergence_proxy,
)


def value_constraint(values):
    """Constraint whose g returns fixed per-particle values (for oracles)."""
    values = np.asarray(values, dtype=float)

    def g(x):
        x2 = np.atleast_2d(x)
        return values[: x2.shape[0]] if np.asarray(x).ndim > 1 else values[0]

    return Constraint("fixed", g, lambda x: np.zeros_like(np.atleast_2d(x)))


class TestBarrierEstimate:
    def test_all_feasible_gives_zero(self):
        cset = expand([cone_constraint([1.0, 0.0], np.pi / 4)])
        states = np.array([[5.0, 0.0], [4.0, 1.0]])
        np.testing.assert_array_equal(barrier_estimate(states, cset), [0.0])

    def test_direct_sum_example(self):
        # g values {-1, 2, -3} over three particles: -(1/3)(-1 - 3) = 4/3.
        cset = ConstraintSet((value_constraint([-1.0, 2.0, -3.0]),))
        h = barrier_estimate(np.zeros((3, 2)), cset)
        np.testing.assert_allclose(h, [4.0 / 3.0])

    def test_single_violator_among_ten(self):
        values = np.zeros(10)
        values[3] = -0.5
        values[values == 0.0] = 1.0
        cset = ConstraintSet((value_constraint(values),))
        np.testing.assert_allclose(barrier_estimate(np.zeros((10, 2)), cset), [0.05])

    def test_zero_iff_no_violation(self):
        cset = expand([sphere_equality(2.0)])
        # Axis-aligned circle points have exactly zero g in floating point.
        on_circle = np.array([[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]])
        assert np.all(barrier_estimate(on_circle, cset) == 0.0)
        off = on_circle.copy()
        off[2] *= 1.5
        assert np.any(barrier_estimate(off, cset) > 0.0)

    @settings(deadline=None, max_examples=40)
    @given(st.permutations(list(range(8))))
    def test_permutation_invariant(self, perm):
        rng = np.random.default_rng(0)
        states = rng.uniform(-3.0, 3.0, size=(8, 2))
        cset = expand([sphere_equality(2.0)])
        a = barrier_estimate(states, cset)
        b = barrier_estimate(states[list(perm)], cset)
        np.testing.assert_allclose(a, b, rtol=1e-15)


def synthetic_trace(times, h):
    times = np.asarray(times, dtype=float)
    h = np.asarray(h, dtype=float).reshape(len(times), -1)
    return BarrierTrace(
        times=times,
        h=h,
        violation_fraction=np.zeros(len(times)),
        nonzero_control_fraction=np.zeros(len(times)),
    )


class TestDecayCheck:
    def test_zero_trace_passes(self):
        trace = synthetic_trace([0.0, 1.0, 2.0], np.zeros((3, 1)))
        assert decay_check(trace, alpha=1.0, slack=0.0).passed

    def test_exact_exponential_passes_with_zero_slack(self):
        # Built multiplicatively with an exactly representable dt, so the
        # equality case holds bitwise and zero slack suffices.
        times = 0.5 * np.arange(11)
        h = [3.0]
        for _ in range(10):
            h.append(h[-1] * np.exp(-0.7 * 0.5))
        report = decay_check(synthetic_trace(times, np.array(h)), alpha=0.7, slack=0.0)
        assert report.passed

    def test_uptick_fails_and_names_interval(self):
        times = np.array([0.0, 1.0, 2.0, 3.0])
        h = np.array([1.0, np.exp(-1.0), 0.9, np.exp(-3.0)])
        report = decay_check(synthetic_trace(times, h), alpha=1.0, slack=0.01)
        assert not report.passed
        label, t0, t1, *_ = report.failures[0]
        assert (t0, t1) == (1.0, 2.0)
        assert "FAILED" in report.describe()
        assert report.worst_excess > 0.0

    def test_slack_absorbs_small_uptick(self):
        times = np.array([0.0, 1.0])
        h = np.array([1.0, np.exp(-1.0) + 0.05])
        assert not decay_check(synthetic_trace(times, h), 1.0, slack=0.01).passed
        assert decay_check(synthetic_trace(times, h), 1.0, slack=0.06).passed

    def test_default_slack_formula(self):
        trace = synthetic_trace([0.0, 1.0], np.array([[2.0], [0.5]]))
        np.testing.assert_allclose(default_slack(trace), [0.05 * 2.0 + 1e-4])

    def test_empty_trace_rejected(self):
        trace = synthetic_trace([0.0], np.zeros((1, 1)))
        trace.times = np.zeros(0)
        with pytest.raises(ValueError):
            decay_check(trace, 1.0, 0.0)


class TestBarrierTrace:
    def test_negative_h_rejected(self):
        with pytest.raises(ValueError):
            synthetic_trace([0.0, 1.0], np.array([[1.0], [-0.1]]))

    def test_decreasing_times_rejected(self):
        with pytest.raises(ValueError):
            synthetic_trace([1.0, 0.0], np.zeros((2, 1)))


class TestDivergenceProxy:
    def test_self_divergence_near_zero(self, rng):
        sample = rng.multivariate_normal([0.0, 0.0], np.eye(2), size=2400)
        d = divergence_proxy(sample[:1200], sample[1200:])
        assert abs(d) <= 0.1

    def test_gaussian_closed_form(self, rng):
        # KL(N0 || N1) with N0 = N(0, I), N1 = N([1,0], diag(2,1)):
        # 0.5 [tr(S1^-1 S0) + dm' S1^-1 dm - 2 + ln det S1] = 0.5 ln 2 + ...
        cov1 = np.diag([2.0, 1.0])
        mu1 = np.array([1.0, 0.0])
        kl = 0.5 * (
            np.trace(np.linalg.inv(cov1))
            + mu1 @ np.linalg.inv(cov1) @ mu1
            - 2.0
            + np.log(np.linalg.det(cov1))
        )
        x = rng.multivariate_normal([0.0, 0.0], np.eye(2), size=5000)
        y = rng.multivariate_normal(mu1, cov1, size=5000)
        estimate = divergence_proxy(x, y)
        assert abs(estimate - kl) <= 0.25 * kl

    def test_monotone_in_shift(self, rng):
        x = rng.normal(size=(1500, 2))
        estimates = []
        for shift in (2.0, 4.0, 8.0):
            y = rng.normal(size=(1500, 2)) + shift
            estimates.append(divergence_proxy(x, y))
        assert estimates[0] < estimates[1] < estimates[2]
        assert estimates[0] > 1.0

    def test_too_few_points_rejected(self, rng):
        with pytest.raises(ValueError, match="k="):
            divergence_proxy(rng.normal(size=(4, 2)), rng.normal(size=(100, 2)))

"""Density-level barrier estimates, decay certification, and divergence proxy.

The barrier functional h_i(q) = -integral of g_i q over the infeasible
region is estimated with the ensemble as q-samples:

    h_hat_i = -(1/M) sum_j g_i(x_j) [g_i(x_j) < 0]   >= 0.

h_hat_i is zero exactly when no particle violates constraint i, the sample
counterpart of the zero-level-set property of the functional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from safeflow.constraints import ConstraintSet
from safeflow.drift import ParticleEnsemble, _states_of
from safeflow.integrate import FlowRun

# Reported "violating" means g_i < -VIOLATION_TOL: the flow approaches the
# boundary asymptotically from outside, so a strict g < 0 count would flag
# particles that are converged for every practical purpose.
VIOLATION_TOL = 1e-3


def barrier_estimate(ensemble, cset: ConstraintSet) -> np.ndarray:
    """Monte Carlo barrier estimate per expanded constraint, shape (N,)."""
    x = _states_of(ensemble)
    g = cset.evaluate(x)  # (M, N)
    return np.maximum(0.0, -g).mean(axis=0)


@dataclass
class BarrierTrace:
    """Time series of barrier estimates and pointwise violation statistics."""

    times: np.ndarray  # (K,)
    h: np.ndarray  # (K, N)
    violation_fraction: np.ndarray  # (K,)
    nonzero_control_fraction: np.ndarray  # (K,)
    labels: tuple = ()

    def __post_init__(self):
        if np.any(self.h < 0.0):
            raise ValueError("barrier estimates must be nonnegative")
        if not np.all(np.diff(self.times) > 0.0) and self.times.size > 1:
            raise ValueError("trace times must be strictly increasing")


def compute_trace(run: FlowRun, cset: ConstraintSet, violation_tol: float = VIOLATION_TOL) -> BarrierTrace:
    """Trace over the run's snapshots against the given constraint set."""
    times = []
    h = []
    viol = []
    for t, ens in run.snapshots:
        times.append(t)
        g = cset.evaluate(ens.states) if len(cset) else np.zeros((len(ens), 0))
        h.append(np.maximum(0.0, -g).mean(axis=0))
        viol.append(float(np.mean(np.any(g < -violation_tol, axis=1))) if len(cset) else 0.0)
    control = np.array([s.nonzero_fraction for s in run.snapshot_safety])
    return BarrierTrace(
        times=np.asarray(times),
        h=np.asarray(h),
        violation_fraction=np.asarray(viol),
        nonzero_control_fraction=control,
        labels=cset.labels,
    )


@dataclass
class DecayReport:
    """Interval-wise exponential-decay certification of a barrier trace."""

    passed: bool
    alpha: float
    slack: np.ndarray
    failures: list = field(default_factory=list)  # (label, t0, t1, h0, h1, bound)
    worst_excess: float = 0.0

    def describe(self) -> str:
        if self.passed:
            return f"decay check passed (alpha={self.alpha:g})"
        label, t0, t1, h0, h1, bound = self.failures[0]
        return (
            f"decay check FAILED for {label} on [{t0:g}, {t1:g}]: "
            f"h went {h0:.6g} -> {h1:.6g}, bound {bound:.6g}"
        )


def default_slack(trace: BarrierTrace) -> np.ndarray:
    """Slack proportional to the initial barrier level, with an absolute floor."""
    return 0.05 * trace.h[0] + 1e-4


def decay_check(trace: BarrierTrace, alpha: float, slack) -> DecayReport:
    """Flag intervals where h_i(t_{k+1}) > h_i(t_k) e^{-alpha dt} + slack_i."""
    if trace.times.size == 0:
        raise ValueError("trace is empty")
    slack = np.broadcast_to(np.asarray(slack, dtype=float), trace.h.shape[1:]).copy()
    failures = []
    worst = 0.0
    labels = trace.labels or tuple(f"g{i}" for i in range(trace.h.shape[1]))
    for k in range(trace.times.size - 1):
        dt = trace.times[k + 1] - trace.times[k]
        bound = trace.h[k] * np.exp(-alpha * dt) + slack
        excess = trace.h[k + 1] - bound
        for i in np.where(excess > 0.0)[0]:
            failures.append(
                (
                    labels[i],
                    float(trace.times[k]),
                    float(trace.times[k + 1]),
                    float(trace.h[k, i]),
                    float(trace.h[k + 1, i]),
                    float(bound[i]),
                )
            )
            worst = max(worst, float(excess[i]))
    failures.sort(key=lambda f: f[4] - f[5], reverse=True)
    return DecayReport(
        passed=not failures, alpha=alpha, slack=slack, failures=failures, worst_excess=worst
    )


def divergence_proxy(ensemble, reference, k: int = 5) -> float:
    """k-nearest-neighbor divergence estimate between two samples.

    Nearest-neighbor ratio estimator on sample sets; a proxy for the KL
    divergence from the ensemble's distribution to the reference's.  It is
    reported, not asserted, outside of conjugate sanity checks.
    """
    x = _states_of(ensemble)
    y = _states_of(reference)
    n, d = x.shape
    m = y.shape[0]
    if n < k + 1 or m < k + 1:
        raise ValueError(f"divergence proxy needs more than k={k} points in each sample")
    rho = cKDTree(x).query(x, k=k + 1)[0][:, k]  # kth neighbor, self excluded
    nu = cKDTree(y).query(x, k=k)[0][:, k - 1]
    rho = np.maximum(rho, 1e-12)
    nu = np.maximum(nu, 1e-12)
    return float(d * np.mean(np.log(nu / rho)) + np.log(m / (n - 1.0)))

import hashlib
from dataclasses import replace

import numpy as np
import pytest

from safeflow.constraints import EMPTY_SET, expand, sphere_equality
from safeflow.drift import ParticleEnsemble
from safeflow.experiments import cone_only_scenario, conjugate_posterior, conjugate_scenario
from safeflow.integrate import (
    FlowAbort,
    SafeFlowConfig,
    flow_rhs,
    run,
    sample_prior,
)
from safeflow.kernels import RbfKernel
from safeflow.models import GaussianPrior, RangeLikelihood, TargetModel, centered_box


def _hash(run_result):
    h = hashlib.sha256()
    for _, ens in run_result.snapshots:
        h.update(ens.states.tobytes())
    return h.hexdigest()


class TestConfigValidation:
    def test_dt_exceeding_horizon_names_both_keys(self):
        with pytest.raises(ValueError) as info:
            SafeFlowConfig(dt=2.0, horizon=1.0)
        assert "dt" in str(info.value) and "horizon" in str(info.value)

    def test_snapshot_divisibility(self):
        with pytest.raises(ValueError, match="snapshot_every"):
            SafeFlowConfig(dt=0.1, horizon=1.0, snapshot_every=3)

    def test_non_integral_step_count(self):
        with pytest.raises(ValueError, match="integer multiple"):
            SafeFlowConfig(dt=0.3, horizon=1.0)

    def test_integrator_name(self):
        with pytest.raises(ValueError, match="integrator"):
            SafeFlowConfig(integrator="leapfrog")

    def test_zero_horizon_allowed(self):
        cfg = SafeFlowConfig(horizon=0.0, dt=0.1)
        assert cfg.n_steps == 0


class TestFlowRhs:
    def test_zero_gradient_single_particle_no_constraints(self):
        prior = GaussianPrior([0.0, 0.0], np.eye(2), centered_box(10.0, 2))
        model = TargetModel(prior)
        phi, stats = flow_rhs(np.array([[0.0, 0.0]]), model, RbfKernel(1.0), EMPTY_SET, 1.0)
        np.testing.assert_array_equal(phi, [[0.0, 0.0]])
        assert stats.relaxed == 0

    def test_empty_constraints_equal_tangentialized_drift(self, rng):
        from safeflow.drift import stein_drift
        from safeflow.models import tangentialize

        scenario = cone_only_scenario()
        kernel = RbfKernel(3.0)
        states = rng.uniform(-8.0, 8.0, size=(30, 2))
        states = states[np.linalg.norm(states, axis=1) > 1.0]
        phi, _ = flow_rhs(states, scenario.model, kernel, EMPTY_SET, 1.0)
        expected = tangentialize(
            scenario.model.prior.truncation, states, stein_drift(states, scenario.model, kernel)
        )
        np.testing.assert_array_equal(phi, expected)

    def test_finite_on_scenario_start(self):
        scenario = cone_only_scenario()
        cset = expand(scenario.constraints)
        ens = sample_prior(scenario.model.prior, 100, 0)
        phi, _ = flow_rhs(ens.states, scenario.model, scenario.config.kernel(), cset, 1.0)
        assert np.all(np.isfinite(phi))


class TestRun:
    def test_zero_horizon_returns_initial(self):
        scenario = conjugate_scenario()
        cfg = replace(scenario.config, horizon=0.0, particles=20)
        initial = sample_prior(scenario.model.prior, 20, 3)
        result = run(cfg, scenario.model, EMPTY_SET, initial)
        assert len(result.snapshots) == 1
        np.testing.assert_array_equal(result.final.states, initial.states)

    def test_snapshot_times(self):
        scenario = conjugate_scenario()
        cfg = replace(scenario.config, horizon=1.0, dt=0.05, particles=20, snapshot_every=10)
        result = run(cfg, scenario.model, EMPTY_SET)
        times = [t for t, _ in result.snapshots]
        np.testing.assert_allclose(times, [0.0, 0.5, 1.0])
        assert all(np.all(np.diff([t for t, _ in result.snapshots]) > 0) for _ in [0])

    def test_containment_every_snapshot(self):
        scenario = cone_only_scenario()
        cfg = replace(scenario.config, horizon=1.0, dt=0.02, particles=50, snapshot_every=10)
        result = run(cfg, scenario.model, expand(scenario.constraints))
        space = scenario.model.prior.truncation
        for _, ens in result.snapshots:
            assert np.all(space.contains(ens.states))

    def test_determinism_same_seed(self):
        scenario = conjugate_scenario()
        cfg = replace(scenario.config, horizon=0.5, dt=0.05, particles=40, snapshot_every=5)
        a = run(cfg, scenario.model, EMPTY_SET)
        b = run(cfg, scenario.model, EMPTY_SET)
        assert _hash(a) == _hash(b)

    def test_different_seed_differs(self):
        scenario = conjugate_scenario()
        cfg = replace(scenario.config, horizon=0.5, dt=0.05, particles=40, snapshot_every=5)
        a = run(cfg, scenario.model, EMPTY_SET)
        b = run(replace(cfg, seed=1), scenario.model, EMPTY_SET)
        assert _hash(a) != _hash(b)

    def test_rejects_initial_outside_space(self):
        scenario = conjugate_scenario()
        bad = ParticleEnsemble(np.array([[5000.0, 0.0]]))
        with pytest.raises(ValueError, match="inside the state space"):
            run(scenario.config, scenario.model, EMPTY_SET, bad)

    def test_containment_violation_aborts(self):
        # A stiff outward radial drift in a tiny box jumps the face in one
        # step, beyond the boundary tolerance.
        space = centered_box(1.0, 2)
        prior = GaussianPrior([0.0, 0.0], 0.01 * np.eye(2), space)
        model = TargetModel(prior, RangeLikelihood(observation=100.0, noise_variance=1e-6))
        cfg = SafeFlowConfig(
            dt=0.5, horizon=1.0, particles=4, bandwidth=1.0,
            integrator="euler", snapshot_every=1,
        )
        with pytest.raises(FlowAbort) as info:
            run(cfg, model, EMPTY_SET, sample_prior(prior, 4, 0))
        assert info.value.step >= 0 and info.value.particle >= 0

    def test_step_halving_error_decreases(self):
        scenario = conjugate_scenario()
        finals = {}
        for integrator in ("euler", "rk4"):
            errors = []
            for dt in (0.1, 0.05, 0.025):
                coarse = run(
                    replace(scenario.config, integrator=integrator, dt=dt, horizon=2.0,
                            particles=50, snapshot_every=int(round(2.0 / dt))),
                    scenario.model, EMPTY_SET,
                )
                fine = run(
                    replace(scenario.config, integrator=integrator, dt=dt / 2, horizon=2.0,
                            particles=50, snapshot_every=int(round(4.0 / dt))),
                    scenario.model, EMPTY_SET,
                )
                errors.append(float(np.max(np.abs(coarse.final.states - fine.final.states))))
            assert errors[0] > errors[1] > errors[2], (integrator, errors)
            finals[integrator] = errors
        # rk4 is far more accurate than euler at the same step.
        assert finals["rk4"][0] < 0.01 * finals["euler"][0]

    def test_unconstrained_gaussian_converges_to_posterior_mean(self):
        scenario = conjugate_scenario()
        cfg = replace(scenario.config, horizon=15.0, particles=200, snapshot_every=300)
        result = run(cfg, scenario.model, EMPTY_SET)
        mean, _ = conjugate_posterior(scenario.model.prior, scenario.model.likelihood)
        assert np.linalg.norm(result.final.states.mean(axis=0) - mean) < 0.2

    def test_forward_invariance_small_scale(self, rng):
        # Particles starting inside the cone stay inside it.
        scenario = cone_only_scenario()
        cone = scenario.constraints[0]
        pts = []
        while len(pts) < 60:
            x = rng.multivariate_normal(scenario.model.prior.mean, scenario.model.prior.covariance)
            if np.linalg.norm(x) > 0.5 and cone.g(x) >= 0.1:
                pts.append(x)
        initial = ParticleEnsemble(np.array(pts))
        cfg = replace(scenario.config, horizon=2.0, dt=0.02, particles=60, snapshot_every=10)
        result = run(cfg, scenario.model, expand(scenario.constraints), initial)
        for _, ens in result.snapshots:
            assert np.min(cone.g(ens.states)) >= -1e-3


class TestSamplePrior:
    def test_sample_covariance_close(self):
        prior = GaussianPrior([0.0, 0.0], [[15.0, -5.0], [-5.0, 15.0]], centered_box(1e3, 2))
        ens = sample_prior(prior, 10_000, 7)
        sample_cov = np.cov(ens.states.T)
        frob = np.linalg.norm(sample_cov - prior.covariance) / np.linalg.norm(prior.covariance)
        assert frob < 0.10

    def test_same_seed_identical(self):
        prior = GaussianPrior([0.0, 0.0], np.eye(2), centered_box(100.0, 2))
        a = sample_prior(prior, 500, 42)
        b = sample_prior(prior, 500, 42)
        np.testing.assert_array_equal(a.states, b.states)

    def test_wide_box_accepts_everything(self):
        # Box much larger than 5 sigma: the first batch fills the request.
        prior = GaussianPrior([0.0, 0.0], np.eye(2), centered_box(100.0, 2))
        ens = sample_prior(prior, 2000, 0)
        rng = np.random.default_rng(0)
        direct = rng.multivariate_normal(prior.mean, prior.covariance, size=2000, method="cholesky")
        np.testing.assert_array_equal(ens.states, direct)

    def test_degenerate_truncation_errors(self):
        space = centered_box(1.0, 2)
        # Almost all of this prior's mass misses the box.
        wide_prior = GaussianPrior([0.0, 0.0], 1e8 * np.eye(2), space)
        with pytest.raises(ValueError, match="degenerate truncation"):
            sample_prior(wide_prior, 200, 0)

"""Safe particle flow: constrained particle-based variational inference.

Stein particle drift filtered through per-particle minimum-norm barrier
quadratic programs, with diagnostics certifying forward invariance and
exponential decay of the density-level barrier estimates.
"""

__version__ = "0.1.0"

from safeflow.constraints import (
    Constraint,
    ConstraintSet,
    cone_constraint,
    expand,
    halfspace,
    sphere_equality,
)
from safeflow.diagnostics import barrier_estimate, decay_check, divergence_proxy
from safeflow.drift import ParticleEnsemble, compose, stein_drift
from safeflow.integrate import FlowRun, SafeFlowConfig, flow_rhs, run, sample_prior
from safeflow.kernels import RbfKernel
from safeflow.models import (
    GaussianPrior,
    LinearGaussianLikelihood,
    RangeLikelihood,
    StateSpace,
    TargetModel,
    centered_box,
    tangentialize,
)
from safeflow.safety import QpProblem, QpSolution, build_qp, safe_controls, solve_min_norm

__all__ = [
    "Constraint",
    "ConstraintSet",
    "FlowRun",
    "GaussianPrior",
    "LinearGaussianLikelihood",
    "ParticleEnsemble",
    "QpProblem",
    "QpSolution",
    "RangeLikelihood",
    "RbfKernel",
    "SafeFlowConfig",
    "StateSpace",
    "TargetModel",
    "barrier_estimate",
    "build_qp",
    "centered_box",
    "compose",
    "cone_constraint",
    "decay_check",
    "divergence_proxy",
    "expand",
    "flow_rhs",
    "halfspace",
    "run",
    "safe_controls",
    "sample_prior",
    "solve_min_norm",
    "sphere_equality",
    "stein_drift",
    "tangentialize",
]

"""Target models: bounded state space, Gaussian prior, and likelihoods.

The flow only ever needs gradients of the log joint density, so priors and
likelihoods expose ``grad_log`` (and an unnormalized ``log_density`` for
finite-difference checks).  Normalizing constants are never computed; in
particular, truncating the Gaussian prior to the state space leaves its
interior gradient unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Radius below which the range likelihood gradient is undefined.  Inside this
# ball the prior gradient alone is returned (measure-zero singularity).
EPS_RADIUS = 1e-8


class ModelEvaluationError(RuntimeError):
    """A model gradient came out non-finite.  Carries the offending points."""

    def __init__(self, message: str, x=None, indices=None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x, dtype=float)
        self.indices = None if indices is None else tuple(int(i) for i in indices)


@dataclass(frozen=True)
class StateSpace:
    """Axis-aligned box of admissible states, lower < upper componentwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("lower must be strictly below upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def boundary_tol(self) -> np.ndarray:
        # Faces are detected within this distance; boundary tangency has to
        # hold numerically, not just in exact arithmetic.
        return 1e-9 * self.width

    def contains(self, x, slack=0.0):
        """True where lower - slack <= x <= upper + slack componentwise."""
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - slack) & (x <= self.upper + slack), axis=-1)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)


def centered_box(halfwidth: float, dim: int) -> StateSpace:
    """Box {x : |x_i| <= halfwidth} in the given dimension."""
    return StateSpace(np.full(dim, -float(halfwidth)), np.full(dim, float(halfwidth)))


def tangentialize(space: StateSpace, x, v) -> np.ndarray:
    """Zero outward velocity components on box faces.

    Interior points pass through unchanged.  On a face (within the boundary
    tolerance) any component pointing out of the box is set to zero, so the
    returned velocity satisfies <v, n_hat(x)> <= 0 on the boundary.  Works on
    single points ``(n,)`` or batches ``(M, n)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.array(v, dtype=float, copy=True)
    tol = space.boundary_tol
    out[(x >= space.upper - tol) & (out > 0.0)] = 0.0
    out[(x <= space.lower + tol) & (out < 0.0)] = 0.0
    return out


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian prior truncated to a state-space box.

    Only the interior gradient -Sigma^{-1}(x - mean) is used by the flow;
    truncation affects sampling (rejection) but not the gradient.
    """

    mean: np.ndarray
    covariance: np.ndarray
    truncation: StateSpace

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance must be square and match the mean dimension")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        eigvals = np.linalg.eigvalsh(cov)
        if np.min(eigvals) <= 0.0:
            raise ValueError(f"covariance must be positive definite (min eigenvalue {np.min(eigvals):g})")
        if mean.size != self.truncation.dim:
            raise ValueError("mean dimension must match the truncation box")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_precision", np.linalg.inv(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, x) -> np.ndarray:
        """Unnormalized log density (quadratic form only)."""
        diff = np.asarray(x, dtype=float) - self.mean
        return -0.5 * np.einsum("...i,ij,...j->...", diff, self._precision, diff)

    def grad_log(self, x) -> np.ndarray:
        diff = np.asarray(x, dtype=float) - self.mean
        return -diff @ self._precision


@dataclass(frozen=True)
class RangeLikelihood:
    """Gaussian likelihood of a range (Euclidean norm) observation.

    log p(z|x) = -(z - ||x||)^2 / (2 R) up to a constant.  The gradient is
    undefined at the origin; within EPS_RADIUS of it the likelihood term is
    dropped and the caller effectively sees the prior gradient alone.
    """

    observation: float
    noise_variance: float

    def __post_init__(self):
        if self.noise_variance <= 0.0:
            raise ValueError("noise_variance must be positive")

    def log_density(self, x) -> np.ndarray:
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return -((self.observation - r) ** 2) / (2.0 * self.noise_variance)

    def grad_log(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe = r >= EPS_RADIUS
        scale = np.zeros_like(r)
        np.divide(-(r - self.observation) / self.noise_variance, r, out=scale, where=safe)
        return scale[..., None] * x


@dataclass(frozen=True)
class LinearGaussianLikelihood:
    """Gaussian likelihood z = H x + noise, noise ~ N(0, R).

    Conjugate with a Gaussian prior, so the posterior has a closed form and
    the unconstrained flow can be checked against it exactly.
    """

    observation: np.ndarray
    matrix: np.ndarray
    noise_covariance: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.observation, dtype=float))
        h = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        r = np.atleast_2d(np.asarray(self.noise_covariance, dtype=float))
        if h.shape[0] != z.size or r.shape != (z.size, z.size):
            raise ValueError("observation, matrix and noise covariance dimensions disagree")
        if np.min(np.linalg.eigvalsh(r)) <= 0.0:
            raise ValueError("noise covariance must be positive definite")
        object.__setattr__(self, "observation", z)
        object.__setattr__(self, "matrix", h)
        object.__setattr__(self, "noise_covariance", r)
        object.__setattr__(self, "_rinv", np.linalg.inv(r))

    def log_density(self, x) -> np.ndarray:
        resid = self.observation - np.asarray(x, dtype=float) @ self.matrix.T
        return -0.5 * np.einsum("...i,ij,...j->...", resid, self._rinv, resid)

    def grad_log(self, x) -> np.ndarray:
        resid = self.observation - np.asarray(x, dtype=float) @ self.matrix.T
        return resid @ self._rinv @ self.matrix


@dataclass(frozen=True)
class TargetModel:
    """Prior plus optional likelihood, exposing the log joint gradient."""

    prior: GaussianPrior
    likelihood: object = None
    descriptor: str = ""

    @property
    def observation(self):
        return getattr(self.likelihood, "observation", None)

    def log_joint(self, x) -> np.ndarray:
        """Unnormalized log joint, for finite-difference verification."""
        total = self.prior.log_density(x)
        if self.likelihood is not None:
            total = total + self.likelihood.log_density(x)
        return total

    def log_joint_grad(self, x) -> np.ndarray:
        """Gradient of log p(x, z) at x, shape preserved ((n,) or (M, n))."""
        grad = self.prior.grad_log(x)
        if self.likelihood is not None:
            grad = grad + self.likelihood.grad_log(x)
        if not np.all(np.isfinite(grad)):
            bad = [int(i) for i in np.where(~np.all(np.isfinite(np.atleast_2d(grad)), axis=-1))[0]]
            raise ModelEvaluationError(
                f"non-finite log joint gradient at particle index(es) {bad}",
                x=np.atleast_2d(np.asarray(x, dtype=float))[bad],
                indices=bad,
            )
        return grad

"""Differentiable constraint functions defining the safe set.

Each constraint is a scalar function g with analytic gradient; the safe set
is the intersection of the superlevel sets {g_i >= 0}.  Equality constraints
are stored as generators and expanded into the pair (+g, -g) before use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional

import numpy as np

# Cone evaluation is undefined at the origin; points closer than this radius
# raise.  The clamp on the cosine keeps the arccos gradient finite on-axis,
# perturbing g by less than 5e-5 rad.
EPS_RADIUS = 1e-8
EPS_COS = 1e-9

KIND_INEQUALITY = "inequality"
KIND_EQUALITY = "equality-generator"


class ConstraintEvaluationError(RuntimeError):
    """Constraint evaluated inside its declared singular set."""


@dataclass(frozen=True)
class Constraint:
    """Scalar constraint g with gradient; kind marks equality generators.

    ``g`` and ``grad_g`` accept a single point ``(n,)`` or a batch ``(M, n)``.
    ``geometry`` optionally carries plotting/projection metadata.
    """

    label: str
    g: Callable[[np.ndarray], np.ndarray]
    grad_g: Callable[[np.ndarray], np.ndarray]
    kind: str = KIND_INEQUALITY
    geometry: Optional[Mapping] = None

    def __post_init__(self):
        if self.kind not in (KIND_INEQUALITY, KIND_EQUALITY):
            raise ValueError(f"unknown constraint kind {self.kind!r}")


def cone_constraint(direction, half_angle: float, label: str | None = None) -> Constraint:
    """Field-of-view cone around a unit direction.

    g(x) = half_angle - arccos(d.x / ||x||), positive inside the cone.
    The cosine is clamped to [-1 + EPS_COS, 1 - EPS_COS] so the gradient
    stays finite on the cone axis and at the antipode.
    """
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector (within 1e-12)")
    if not 0.0 < half_angle < math.pi / 2.0:
        raise ValueError("half_angle must lie in (0, pi/2)")

    def _cosine(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        if np.any(r < EPS_RADIUS):
            raise ConstraintEvaluationError(
                f"cone constraint undefined within {EPS_RADIUS:g} of the origin"
            )
        c = np.clip((x @ d) / r, -1.0 + EPS_COS, 1.0 - EPS_COS)
        return x, r, c

    def value(x):
        _, _, c = _cosine(x)
        return half_angle - np.arccos(c)

    def gradient(x):
        x, r, c = _cosine(x)
        s = np.sqrt(1.0 - c * c)
        xhat = x / r[..., None]
        return (d - c[..., None] * xhat) / (r * s)[..., None]

    return Constraint(
        label=label or f"cone({half_angle:.4g})",
        g=value,
        grad_g=gradient,
        kind=KIND_INEQUALITY,
        geometry={"type": "cone", "direction": tuple(d), "half_angle": float(half_angle)},
    )


def sphere_equality(radius: float, label: str | None = None) -> Constraint:
    """Equality generator g_e(x) = ||x||^2 - r^2 = 0 (support on a sphere)."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    r2 = float(radius) ** 2

    def value(x):
        x = np.asarray(x, dtype=float)
        return np.sum(x * x, axis=-1) - r2

    def gradient(x):
        return 2.0 * np.asarray(x, dtype=float)

    return Constraint(
        label=label or f"sphere(r={radius:g})",
        g=value,
        grad_g=gradient,
        kind=KIND_EQUALITY,
        geometry={"type": "sphere", "radius": float(radius)},
    )


def halfspace(normal, offset: float, label: str | None = None) -> Constraint:
    """Halfspace g(x) = n.x - offset >= 0."""
    n = np.asarray(normal, dtype=float)

    def value(x):
        return np.asarray(x, dtype=float) @ n - offset

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(n, x.shape).copy()

    return Constraint(
        label=label or f"halfspace({offset:g})",
        g=value,
        grad_g=gradient,
        kind=KIND_INEQUALITY,
        geometry={"type": "halfspace", "normal": tuple(n), "offset": float(offset)},
    )


def finite_difference_constraint(
    label: str,
    g: Callable[[np.ndarray], np.ndarray],
    kind: str = KIND_INEQUALITY,
) -> Constraint:
    """Constraint from a bare g, with a central-difference gradient.

    For user-supplied constraints without an analytic gradient.  Step size
    scales as 1e-6 * (1 + ||x||).
    """

    def gradient(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        step = 1e-6 * (1.0 + np.linalg.norm(x, axis=-1))
        grad = np.empty_like(x)
        for j in range(x.shape[-1]):
            h = np.zeros_like(x)
            h[:, j] = step
            grad[:, j] = (g(x + h) - g(x - h)) / (2.0 * step)
        return grad if np.asarray(x).ndim > 1 else grad[0]

    return Constraint(label=label, g=g, grad_g=gradient, kind=kind)


def _negated(c: Constraint) -> Constraint:
    def gneg(x):
        return -c.g(x)

    def gradneg(x):
        return -c.grad_g(x)

    return Constraint(c.label + "[-]", gneg, gradneg, KIND_INEQUALITY, c.geometry)


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered inequality constraints after equality expansion."""

    constraints: tuple

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for c in self.constraints:
            if c.kind != KIND_INEQUALITY:
                raise ValueError("a ConstraintSet may only hold expanded inequality constraints")

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    @property
    def labels(self) -> tuple:
        return tuple(c.label for c in self.constraints)

    def evaluate(self, x) -> np.ndarray:
        """g_i values, shape (..., N)."""
        x = np.asarray(x, dtype=float)
        if not self.constraints:
            return np.zeros(x.shape[:-1] + (0,))
        return np.stack([c.g(x) for c in self.constraints], axis=-1)

    def gradients(self, x) -> np.ndarray:
        """Gradient rows, shape (..., N, n)."""
        x = np.asarray(x, dtype=float)
        if not self.constraints:
            return np.zeros(x.shape[:-1] + (0, x.shape[-1]))
        return np.stack([c.grad_g(x) for c in self.constraints], axis=-2)

    def violation(self, x) -> np.ndarray:
        """Componentwise max(0, -g_i); the zero vector iff x is feasible."""
        return np.maximum(0.0, -self.evaluate(x))


EMPTY_SET = ConstraintSet(())


def expand(constraints) -> ConstraintSet:
    """Expand equality generators into (+g, -g) pairs, preserving order.

    Inequalities pass through; each generator yields the + constraint then
    the - constraint.  Re-expanding a ConstraintSet is rejected.
    """
    if isinstance(constraints, ConstraintSet):
        raise TypeError("constraint set is already expanded")
    out = []
    for c in constraints:
        if c.kind == KIND_INEQUALITY:
            out.append(c)
        else:
            out.append(replace(c, label=c.label + "[+]", kind=KIND_INEQUALITY))
            out.append(_negated(c))
    return ConstraintSet(tuple(out))

"""Per-particle minimally invasive control via the barrier quadratic program.

For each particle the control u solves

    min ||u||^2   s.t.   a_i . u >= b_i,
    a_i = grad g_i(x),   b_i = -a_i . phi_d - alpha_g g_i(x),

so the composed drift phi_d + u satisfies every pointwise barrier condition.
The solver enumerates candidate active sets (exact for n <= 3 and a handful
of rows, which is the whole regime here): the optimum, when it exists, is a
nonnegative combination of a linearly independent subset of tight rows, so
checking all subsets of size <= n with the KKT conditions is a complete
decision procedure.  No iterative solver, no external dependency.

An infeasible program (the stacked constraints are not a valid vector
barrier at this point) falls back to a two-stage relaxation: the smallest
shared slack that restores feasibility is found by bisection, then the
min-norm control for the relaxed rows is returned with status "relaxed".
Every such event is counted and surfaced.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from safeflow.constraints import ConstraintSet

TOL_QP = 1e-8
_TOL_DUAL = 1e-10
_TOL_SINGULAR = 1e-12
_ZERO_ROW = 1e-12


@dataclass(frozen=True)
class QpProblem:
    """Rows (a_i, b_i) encoding a_i . u >= b_i."""

    rows_a: np.ndarray  # (k, n)
    rows_b: np.ndarray  # (k,)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.rows_a, dtype=float))
        b = np.atleast_1d(np.asarray(self.rows_b, dtype=float))
        if a.shape[0] != b.shape[0]:
            raise ValueError("row count mismatch between rows_a and rows_b")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("QP rows must be finite")
        object.__setattr__(self, "rows_a", a)
        object.__setattr__(self, "rows_b", b)

    @property
    def n_rows(self) -> int:
        return self.rows_b.shape[0]

    @property
    def dim(self) -> int:
        return self.rows_a.shape[1]


@dataclass(frozen=True)
class QpSolution:
    u: np.ndarray
    status: str  # "optimal" | "infeasible" | "relaxed"
    active_set: tuple = ()
    multipliers: tuple = ()
    relaxation: float = 0.0
    note: str = ""


def build_qp(x, phi_d, cset: ConstraintSet, alpha_g: float) -> QpProblem:
    """One row per expanded constraint, in constraint-set order."""
    x = np.asarray(x, dtype=float)
    phi_d = np.asarray(phi_d, dtype=float)
    g = cset.evaluate(x)
    a = cset.gradients(x)
    b = -a @ phi_d - alpha_g * g
    return QpProblem(a, b)


def _subset_order(k: int, n: int):
    for size in range(0, min(k, n) + 1):
        yield from combinations(range(k), size)


def solve_min_norm(qp: QpProblem, tol: float = TOL_QP) -> QpSolution:
    """Exact minimizer of ||u||^2 over {u : a_i . u >= b_i for all i}.

    Returns the unique optimum with its active set and multipliers, or
    status "infeasible" when no subset admits a primal-feasible KKT point.
    Ties among subsets representing the same optimum are broken by smallest
    size, then lexicographic order (deterministic).
    """
    a, b = qp.rows_a, qp.rows_b
    k, n = a.shape
    norms2 = np.einsum("ij,ij->i", a, a)

    degenerate = (norms2 < _ZERO_ROW**2) & (b > tol)
    if np.any(degenerate):
        idx = int(np.where(degenerate)[0][0])
        return QpSolution(
            u=np.zeros(n),
            status="infeasible",
            note=f"degenerate row {idx}: near-zero gradient with positive requirement",
        )

    for subset in _subset_order(k, n):
        if not subset:
            u = np.zeros(n)
            lam = np.zeros(0)
        else:
            rows = a[list(subset)]
            gram = rows @ rows.T
            det = np.linalg.det(gram)
            scale = float(np.prod(norms2[list(subset)]))
            if abs(det) <= _TOL_SINGULAR * max(scale, _TOL_SINGULAR):
                continue
            lam = np.linalg.solve(gram, b[list(subset)])
            if np.any(lam < -_TOL_DUAL):
                continue
            u = lam @ rows
        if np.min(a @ u - b, initial=np.inf) >= -tol:
            return QpSolution(
                u=u,
                status="optimal",
                active_set=tuple(subset),
                multipliers=tuple(np.maximum(lam, 0.0)),
            )
    return QpSolution(u=np.zeros(n), status="infeasible")


def solve_with_relaxation(qp: QpProblem, tol: float = TOL_QP) -> QpSolution:
    """Min-norm solve, falling back to the smallest-shared-slack relaxation.

    Stage one finds (by bisection, using the exact feasibility test) the
    minimal s >= 0 such that a_i . u >= b_i - s is feasible; stage two
    returns the min-norm u for the relaxed rows.
    """
    sol = solve_min_norm(qp, tol)
    if sol.status == "optimal":
        return sol

    hi = max(float(np.max(qp.rows_b, initial=0.0)), 0.0) + tol
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        trial = solve_min_norm(QpProblem(qp.rows_a, qp.rows_b - mid), tol)
        if trial.status == "optimal":
            hi = mid
        else:
            lo = mid
    relaxed = solve_min_norm(QpProblem(qp.rows_a, qp.rows_b - hi), tol)
    if relaxed.status != "optimal":  # pragma: no cover - hi is feasible by construction
        return QpSolution(u=np.zeros(qp.dim), status="infeasible", note="relaxation failed")
    return QpSolution(
        u=relaxed.u,
        status="relaxed",
        active_set=relaxed.active_set,
        multipliers=relaxed.multipliers,
        relaxation=hi,
        note=sol.note,
    )


# Fixed enumeration order for the vectorized two-dimensional path: the empty
# set, singletons, then pairs, lexicographic within each size.  Must match
# _subset_order so both paths select the same candidate.
def _pair_indices(k: int):
    return [(i, j) for i in range(k) for j in range(i + 1, k)]


def _solve_batch_2d(a: np.ndarray, b: np.ndarray, tol: float):
    """Vectorized subset enumeration for n = 2.

    a: (M, k, 2), b: (M, k).  Returns (u (M, 2), solved (M,), nonzero (M,)).
    Mirrors solve_min_norm row for row; used by safe_controls for speed.
    """
    m, k, _ = a.shape
    norms2 = np.einsum("mkn,mkn->mk", a, a)
    u = np.zeros((m, 2))
    solved = np.all(b <= tol, axis=1)

    def try_candidate(u_cand, valid):
        nonlocal solved
        resid = np.einsum("mkn,mn->mk", a, u_cand) - b
        ok = valid & (resid.min(axis=1) >= -tol) & ~solved
        u[ok] = u_cand[ok]
        solved |= ok

    for i in range(k):
        if solved.all():
            break
        ai = a[:, i, :]
        ni = norms2[:, i]
        good = ni > _ZERO_ROW**2
        lam = np.where(good, b[:, i] / np.where(good, ni, 1.0), 0.0)
        try_candidate(lam[:, None] * ai, good & (lam >= -_TOL_DUAL))

    for i, j in _pair_indices(k):
        if solved.all():
            break
        ai, aj = a[:, i, :], a[:, j, :]
        g11, g22 = norms2[:, i], norms2[:, j]
        g12 = np.einsum("mn,mn->m", ai, aj)
        det = g11 * g22 - g12 * g12
        good = np.abs(det) > _TOL_SINGULAR * np.maximum(g11 * g22, _TOL_SINGULAR)
        safe_det = np.where(good, det, 1.0)
        lam1 = (g22 * b[:, i] - g12 * b[:, j]) / safe_det
        lam2 = (g11 * b[:, j] - g12 * b[:, i]) / safe_det
        valid = good & (lam1 >= -_TOL_DUAL) & (lam2 >= -_TOL_DUAL)
        try_candidate(lam1[:, None] * ai + lam2[:, None] * aj, valid)

    nonzero = np.any(u != 0.0, axis=1)
    return u, solved, nonzero


@dataclass
class SafetyStats:
    """Per-evaluation filter activity: how many controls fired, how many
    programs needed relaxation, and the largest slack used."""

    nonzero_controls: int = 0
    relaxed: int = 0
    max_relaxation: float = 0.0
    particles: int = 0

    @property
    def nonzero_fraction(self) -> float:
        return self.nonzero_controls / self.particles if self.particles else 0.0


def safe_controls(
    ensemble,
    desired: np.ndarray,
    cset: ConstraintSet,
    alpha_g: float,
    tol: float = TOL_QP,
) -> tuple[np.ndarray, SafetyStats]:
    """Control field u_j for every particle, plus filter statistics.

    Particles whose program is infeasible get the two-stage relaxed control;
    the event count and worst slack are reported, never raised.
    """
    from safeflow.drift import _states_of

    x = _states_of(ensemble)
    desired = np.asarray(desired, dtype=float)
    m, n = x.shape
    stats = SafetyStats(particles=m)
    if len(cset) == 0:
        return np.zeros_like(desired), stats

    g = cset.evaluate(x)  # (M, N)
    grads = cset.gradients(x)  # (M, N, n)
    b = -np.einsum("mkn,mn->mk", grads, desired) - alpha_g * g

    if n == 2:
        u, solved, nonzero = _solve_batch_2d(grads, b, tol)
        stats.nonzero_controls = int(np.count_nonzero(nonzero & solved))
        pending = np.where(~solved)[0]
    else:
        u = np.zeros((m, n))
        pending_list = []
        for i in range(m):
            sol = solve_min_norm(QpProblem(grads[i], b[i]), tol)
            if sol.status == "optimal":
                u[i] = sol.u
                stats.nonzero_controls += int(np.any(sol.u != 0.0))
            else:
                pending_list.append(i)
        pending = np.asarray(pending_list, dtype=int)

    for i in pending:
        sol = solve_with_relaxation(QpProblem(grads[i], b[i]), tol)
        u[i] = sol.u
        stats.relaxed += 1
        stats.max_relaxation = max(stats.max_relaxation, sol.relaxation)
        stats.nonzero_controls += int(np.any(sol.u != 0.0))
    return u, stats

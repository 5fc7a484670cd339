"""Inner solver for the per-agent proximal subproblems.

Each round every agent minimizes a composite function

    s(x) + w*||x||_1 + indicator(box)

where ``s`` is smooth and strongly convex: the smooth objective part, an
exterior penalty built from the polar-cone projection of the shifted
constraint map, and a quadratic proximal anchor.  Both nonsmooth pieces
have closed-form proximal maps, so the minimization runs Davis-Yin
three-operator splitting with the box resolvent first (the candidate
``x = P_box(z)`` is always box feasible) and soft-thresholding second.

The stopping rule reconstructs an explicit subgradient certificate ``v``
from the coordinate-wise subdifferential interval of the l1-plus-box term:
``v = grad s(x) + clip(-grad s(x), lo, hi)`` lies in the subdifferential of
the full subproblem objective at ``x``, and the solver stops as soon as
``||v||_2`` reaches the requested precision.
"""

from dataclasses import dataclass

import numpy as np

from .functions import (
    interval_gap,
    l1_box_interval,
    project_box,
    project_polar_cone,
    prox_l1,
    select_subgradient,
)


class SubproblemError(RuntimeError):
    """The inner solver exhausted its budget above the requested precision."""

    def __init__(self, message, achieved=None, target=None):
        super().__init__(message)
        self.achieved = achieved
        self.target = target


def matrix_norm_sq_power(A, tol=1e-6, max_iter=500):
    """``||A||_2^2`` (largest squared singular value) by power iteration
    on ``A^T A``, with a deterministic start vector."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    n = A.shape[1]
    v = np.ones(n) + np.linspace(0.0, 0.5, n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_new = float(v @ (A.T @ (A @ v)))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


@dataclass(frozen=True)
class ConstraintCurvature:
    """Static curvature data of one agent's constraint map over its box.

    Computed once per agent and reused every round by the Lipschitz
    estimate: the squared spectral norm of the equality block, and for
    each inequality row a gradient-norm bound, a Hessian-norm bound, and
    the largest attainable row value over the box (infinite boxes give an
    infinite row bound, in which case the estimate falls back to the
    round's local value and relies on step backtracking).
    """

    eq_norm_sq: float
    grad_bounds: np.ndarray
    curve_bounds: np.ndarray
    value_bounds: np.ndarray


def constraint_curvature(local):
    grad_b, curve_b, value_b = [], [], []
    for g in local.inequalities:
        grad_b.append(g.gradient_norm_bound(local.lower, local.upper))
        curve_b.append(g.curvature_bound(local.lower, local.upper))
        value_b.append(g.max_value(local.lower, local.upper))
    return ConstraintCurvature(
        eq_norm_sq=matrix_norm_sq_power(local.A) if local.A.size else 0.0,
        grad_bounds=np.array(grad_b),
        curve_bounds=np.array(curve_b),
        value_bounds=np.array(value_b),
    )


@dataclass
class SubproblemSpec:
    """One agent-round subproblem, ready for the splitting solver.

    ``value``/``gradient`` are the smooth-part oracles; the l1 weight and
    box describe the nonsmooth part; ``target`` is the Euclidean precision
    requested for the certificate norm.
    """

    value: object
    gradient: object
    l1_weight: float
    lower: np.ndarray
    upper: np.ndarray
    target: float
    lipschitz: float
    step_size: float | None = None
    max_iterations: int = 20_000


@dataclass
class SubproblemResult:
    x: np.ndarray
    v: np.ndarray
    residual: float
    iterations: int
    objective: float
    converged: bool


def lipschitz_estimate(local, w, gamma, alpha, curvature=None):
    """Upper bound on the Lipschitz constant of the subproblem's smooth part.

    Adds the objective's own hint, the penalty curvature ``gamma*||A||^2``
    of the equality block plus per-row inequality contributions (squared
    gradient bound scaled by ``gamma`` plus the attainable multiplier value
    times the row's Hessian bound), and the proximal term ``1/alpha``.
    """
    if curvature is None:
        curvature = constraint_curvature(local)
    L = local.smooth.lipschitz_hint + gamma * curvature.eq_norm_sq + 1.0 / alpha
    p = local.cone.p
    for r in range(local.cone.q):
        mult = max(w[p + r] + gamma * curvature.value_bounds[r], 0.0)
        if not np.isfinite(mult):
            # unbounded box with a nonlinear row: local value, backtracking
            # in the solver covers the remainder
            mult = 2.0 * max(w[p + r], 1.0)
        L += gamma * curvature.grad_bounds[r] ** 2 + mult * curvature.curve_bounds[r]
    return float(L)


def local_step_size(local, w, gamma, alpha, anchor, curvature, aggressiveness=1.5):
    """Step size from curvature evaluated at the warm-start anchor.

    The conservative estimate bounds the exterior-penalty multipliers over
    the whole box, which can overshoot the values the iterates actually
    see by an order of magnitude; anchoring them at the previous solution
    gives a much larger (still backtracking-guarded) step.
    """
    L = local.smooth.lipschitz_hint + gamma * curvature.eq_norm_sq + 1.0 / alpha
    p = local.cone.p
    for r, g in enumerate(local.inequalities):
        grad_norm = float(np.linalg.norm(g.gradient(anchor)))
        mult = max(w[p + r] + gamma * g.value(anchor), 0.0)
        L += gamma * grad_norm ** 2 + 1.3 * mult * curvature.curve_bounds[r]
    return aggressiveness / max(float(L), 1e-12)


def build_subproblem(
    local,
    w,
    gamma,
    alpha,
    anchor,
    target,
    curvature=None,
    step_size=None,
    max_iterations=20_000,
):
    """Compose the smooth oracle of one agent-round subproblem.

    The smooth part is ``f_smooth(x) + (1/(2 gamma)) (||P(w + gamma G(x))||^2
    - ||w||^2) + (1/(2 alpha)) ||x - anchor||^2`` with ``P`` the polar-cone
    projection; its gradient is ``grad f_smooth(x) + J_G(x)^T P(w + gamma
    G(x)) + (x - anchor)/alpha``.  The closures are unrolled over the
    equality and inequality blocks: they run once per inner iteration,
    which dominates the whole engine's cost.
    """
    cone = local.cone
    smooth = local.smooth
    p = cone.p
    w = np.asarray(w, dtype=float)
    w_eq = w[:p]
    w_in = w[p:]
    rows = local.inequalities
    A, b = local.A, local.b
    has_eq = bool(A.size)
    anchor = np.array(anchor, dtype=float, copy=True)
    w_norm_sq = float(w @ w)
    inv_alpha = 1.0 / alpha

    def value(x):
        val = smooth.value(x)
        if has_eq:
            t = w_eq + gamma * (A @ x - b)
            val += float(t @ t) / (2.0 * gamma)
        for j, g in enumerate(rows):
            s = w_in[j] + gamma * g.value(x)
            if s > 0.0:
                val += s * s / (2.0 * gamma)
        dx = x - anchor
        return val - w_norm_sq / (2.0 * gamma) + 0.5 * inv_alpha * float(dx @ dx)

    def gradient(x):
        g_out = smooth.gradient(x) + inv_alpha * (x - anchor)
        if has_eq:
            g_out += A.T @ (w_eq + gamma * (A @ x - b))
        for j, g in enumerate(rows):
            s = w_in[j] + gamma * g.value(x)
            if s > 0.0:
                g_out += s * g.gradient(x)
        return g_out

    return SubproblemSpec(
        value=value,
        gradient=gradient,
        l1_weight=local.l1_weight,
        lower=local.lower,
        upper=local.upper,
        target=float(target),
        lipschitz=lipschitz_estimate(local, w, gamma, alpha, curvature),
        step_size=step_size,
        max_iterations=max_iterations,
    )


def certificate(x, grad, weight, lower, upper):
    """Subgradient certificate at ``x`` given the smooth gradient there.

    Picks the interval subgradient nearest to ``-grad`` and returns
    ``v = grad + u``; ``|v_j|`` equals the coordinate gap, so the Euclidean
    and infinity norms of the certificate are the two stopping residuals.
    """
    lo, hi = l1_box_interval(x, weight, lower, upper)
    return grad + select_subgradient(-grad, lo, hi)


def subproblem_residual(x, spec):
    """Infinity-norm distance from ``-grad s(x)`` to the subdifferential
    interval of the l1-plus-box term at ``x``."""
    g = np.asarray(spec.gradient(x), dtype=float)
    lo, hi = l1_box_interval(x, spec.l1_weight, spec.lower, spec.upper)
    gaps = interval_gap(-g, lo, hi)
    return float(gaps.max()) if gaps.size else 0.0


def davis_yin_solve(spec, warm_start):
    """Minimize a subproblem by Davis-Yin three-operator splitting.

    Iterates ``x = P_box(z)``, ``x_a = prox_{t w l1}(2x - z - t grad s(x))``,
    ``z <- z + x_a - x`` with step ``t`` from the Lipschitz estimate, and
    halves the step whenever the composite objective at the candidate
    increases beyond tolerance (guarding a too-optimistic estimate).

    Parameters
    ----------
    spec : SubproblemSpec
    warm_start : ndarray
        Initial shadow point ``z``; the previous round's solution is a
        good choice.

    Returns
    -------
    SubproblemResult
        Box-feasible candidate, its subgradient certificate ``v`` with
        ``||v||_2 = residual``, the iteration count, the final composite
        objective value, and whether the target precision was met.
    """
    lower, upper = spec.lower, spec.upper
    weight = spec.l1_weight
    gradient, value = spec.gradient, spec.value
    target_sq = spec.target ** 2
    z = np.array(warm_start, dtype=float, copy=True)
    t = spec.step_size if spec.step_size is not None else 1.0 / max(spec.lipschitz, 1e-12)
    t_floor = 0.9 / max(spec.lipschitz, 1e-12)
    x = np.clip(z, lower, upper)
    best_obj = np.inf
    obj_tol = 1e-10
    v = None
    iterations = 0
    converged = False
    for iterations in range(spec.max_iterations + 1):
        g = gradient(x)
        v = certificate(x, g, weight, lower, upper)
        if float(v @ v) <= target_sq:
            converged = True
            break
        if iterations == spec.max_iterations:
            break
        obj = value(x) + weight * float(np.abs(x).sum())
        if obj > best_obj + obj_tol * max(1.0, abs(best_obj)) and t > t_floor:
            # the local curvature guess was optimistic: shrink toward the
            # conservative step
            t = max(0.5 * t, t_floor)
        best_obj = min(best_obj, obj)
        x_a = prox_l1(2.0 * x - z - t * g, t * weight)
        z += x_a - x
        x = np.clip(z, lower, upper)
    residual = float(np.linalg.norm(v))
    objective = value(x) + weight * float(np.abs(x).sum())
    return SubproblemResult(
        x=x,
        v=v,
        residual=residual,
        iterations=iterations,
        objective=objective,
        converged=converged,
    )

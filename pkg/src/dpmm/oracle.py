"""Centralized high-accuracy reference solver.

Solves the coupled problem at desk scale with a projected primal-dual
hybrid gradient iteration on the full Lagrangian: one global multiplier
``y`` in the polar cone, forward gradient steps on the smooth parts,
closed-form proxes for the l1-plus-box terms, and an extrapolated
constraint value in the dual ascent.  The candidate is accepted only when
an explicit KKT residual (stationarity through the subdifferential
interval, primal and dual feasibility, complementarity) reaches the
requested tolerance — the iteration is deliberately a different algorithm
from the round engine so the two can cross-validate each other.

Solutions are cached to JSON files keyed by a hash of the problem's
canonical text plus the tolerance.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .functions import (
    interval_gap,
    l1_box_interval,
    project_box,
    project_polar_cone,
    prox_l1,
    sigmoid,
    softplus,
)
from .problems import problem_text
from .subsolver import matrix_norm_sq_power


class OracleError(RuntimeError):
    """The reference solver missed the requested tolerance."""


@dataclass
class OracleSolution:
    """Reference primal-dual pair with its certification.

    ``kkt_residual`` is the maximum of the stationarity, feasibility and
    complementarity residuals at (x_star, y_star).
    """

    x_star: np.ndarray
    y_star: np.ndarray
    f_star: float
    kkt_residual: float
    iterations: int
    tol: float


@dataclass
class KKTReport:
    stationarity: float
    eq_violation: float
    ineq_violation: float
    dual_violation: float
    complementarity: float

    @property
    def max_residual(self):
        return max(
            self.stationarity,
            self.eq_violation,
            self.ineq_violation,
            self.dual_violation,
            self.complementarity,
        )

    def passed(self, tol):
        return self.max_residual <= tol


class StackedOps:
    """Vectorized whole-problem oracles over the stacked decision vector.

    Batches the per-agent smooth parts and inequality rows when all agents
    share a kind and a dimension (the generated instances do); otherwise
    falls back to per-agent loops.
    """

    def __init__(self, problem):
        self.problem = problem
        agents = problem.agents
        cone = problem.cone
        self.p, self.q = cone.p, cone.q
        self.m = problem.m
        self.n = problem.total_dim
        self.offsets = problem.offsets
        self.l1_vec = np.concatenate(
            [np.full(a.dim, a.l1_weight) for a in agents]
        )
        self.lower = np.concatenate([a.lower for a in agents])
        self.upper = np.concatenate([a.upper for a in agents])
        self.A_big = (
            np.hstack([a.A for a in agents])
            if cone.p
            else np.zeros((0, self.n))
        )
        self.b_sum = (
            np.sum([a.b for a in agents], axis=0) if cone.p else np.zeros(0)
        )
        dims = set(problem.dims)
        self.uniform = len(dims) == 1
        self.d = problem.dims[0] if self.uniform else None

        kinds = {a.smooth.kind for a in agents}
        self.smooth_mode = "loop"
        if self.uniform and kinds == {"quadratic"}:
            self.smooth_mode = "quadratic"
            self.Cs = np.stack([a.smooth.C for a in agents])
            self.ds = np.stack([a.smooth.d for a in agents])
        elif self.uniform and kinds == {"logistic"}:
            self.smooth_mode = "logistic"
            self.As = np.stack([a.smooth.a for a in agents])

        self.rows = []
        for j in range(cone.q):
            row_kinds = {a.inequalities[j].kind for a in agents}
            if self.uniform and row_kinds == {"logistic"}:
                a_stack = np.stack([a.inequalities[j].a for a in agents])
                offs = sum(a.inequalities[j].offset for a in agents)
                self.rows.append(("logistic", (a_stack, float(offs))))
            elif self.uniform and row_kinds == {"affine"}:
                cs = np.stack([a.inequalities[j].c for a in agents])
                es = np.array([a.inequalities[j].offset for a in agents])
                self.rows.append(("affine", (cs, float(es.sum()))))
            else:
                self.rows.append(("loop", j))

    def _mat(self, x):
        return x.reshape(self.m, self.d)

    def smooth_value(self, x):
        if self.smooth_mode == "quadratic":
            r = np.einsum("mij,mj->mi", self.Cs, self._mat(x)) - self.ds
            return 0.5 * float(np.tensordot(r, r))
        if self.smooth_mode == "logistic":
            t = np.einsum("mi,mi->m", self.As, self._mat(x))
            return float(softplus(t).sum())
        return float(
            sum(
                a.smooth.value(x[self.offsets[i]: self.offsets[i + 1]])
                for i, a in enumerate(self.problem.agents)
            )
        )

    def smooth_grad(self, x):
        if self.smooth_mode == "quadratic":
            X = self._mat(x)
            r = np.einsum("mij,mj->mi", self.Cs, X) - self.ds
            return np.einsum("mji,mj->mi", self.Cs, r).ravel()
        if self.smooth_mode == "logistic":
            X = self._mat(x)
            t = np.einsum("mi,mi->m", self.As, X)
            return (sigmoid(t)[:, None] * self.As).ravel()
        g = np.empty(self.n)
        for i, a in enumerate(self.problem.agents):
            sl = slice(self.offsets[i], self.offsets[i + 1])
            g[sl] = a.smooth.gradient(x[sl])
        return g

    def constraint_sum(self, x):
        out = np.empty(self.p + self.q)
        out[: self.p] = self.A_big @ x - self.b_sum
        for j, (kind, data) in enumerate(self.rows):
            if kind == "logistic":
                t = np.einsum("mi,mi->m", data[0], self._mat(x))
                out[self.p + j] = float(softplus(t).sum()) - data[1]
            elif kind == "affine":
                cs, e_sum = data
                out[self.p + j] = float(np.tensordot(cs, self._mat(x))) - e_sum
            else:
                total = 0.0
                for i, a in enumerate(self.problem.agents):
                    sl = slice(self.offsets[i], self.offsets[i + 1])
                    total += a.inequalities[data].value(x[sl])
                out[self.p + j] = total
        return out

    def jacobian_T_y(self, x, y):
        out = self.A_big.T @ y[: self.p] if self.p else np.zeros(self.n)
        for j, (kind, data) in enumerate(self.rows):
            yj = y[self.p + j]
            if yj == 0.0:
                continue
            if kind == "logistic":
                t = np.einsum("mi,mi->m", data[0], self._mat(x))
                out = out + (yj * sigmoid(t)[:, None] * data[0]).ravel()
            elif kind == "affine":
                out = out + yj * data[0].ravel()
            else:
                for i, a in enumerate(self.problem.agents):
                    sl = slice(self.offsets[i], self.offsets[i + 1])
                    out[sl] += yj * a.inequalities[data].gradient(x[sl])
        return out

    def jacobian_norm_bound(self):
        """Spectral-norm bound of the summed constraint Jacobian over the
        boxes (used only to size the steps)."""
        total = matrix_norm_sq_power(self.A_big) if self.p else 0.0
        for j in range(self.q):
            row_sq = 0.0
            for a in self.problem.agents:
                row_sq += a.inequalities[j].gradient_norm_bound(a.lower, a.upper) ** 2
            total += row_sq
        return math.sqrt(total)

    def smooth_lipschitz(self):
        return max(a.smooth.lipschitz_hint for a in self.problem.agents)


def kkt_check(problem, x, y, ops=None):
    """KKT residual report of a candidate primal-dual pair.

    Stationarity is the infinity-norm distance from the negative smooth
    gradient (objective plus multiplier-weighted constraint rows) to the
    subdifferential interval of each agent's l1-plus-box term; feasibility
    and complementarity are taken on the summed constraint map.
    """
    if ops is None:
        ops = StackedOps(problem)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = ops.smooth_grad(x) + ops.jacobian_T_y(x, y)
    lo, hi = l1_box_interval(x, ops.l1_vec, ops.lower, ops.upper)
    stat = float(interval_gap(-g, lo, hi).max()) if x.size else 0.0
    c = ops.constraint_sum(x)
    p, q = ops.p, ops.q
    eq = float(np.abs(c[:p]).max()) if p else 0.0
    ineq = float(np.maximum(c[p:], 0.0).max()) if q else 0.0
    dual = float(np.maximum(-y[p:], 0.0).max()) if q else 0.0
    comp = float(np.abs(y[p:] * c[p:]).max()) if q else 0.0
    return KKTReport(
        stationarity=stat,
        eq_violation=eq,
        ineq_violation=ineq,
        dual_violation=dual,
        complementarity=comp,
    )


def solve_reference(
    problem,
    tol=1e-9,
    max_iterations=2_000_000,
    check_every=50,
    sigma_scale=1.0,
    x0=None,
    cache_dir=None,
):
    """Solve the coupled problem centrally to a certified KKT residual.

    Parameters
    ----------
    problem : CoupledProblem
    tol : float
        Target for the maximum KKT residual.
    max_iterations : int
        Iteration budget across all step-size restarts.
    check_every : int
        KKT monitoring stride.
    sigma_scale : float
        Initial dual step relative to the Jacobian-norm heuristic.
    x0 : ndarray, optional
        Starting point; the stored strictly feasible witness is used when
        available, otherwise the box projection of zero.
    cache_dir : str, optional
        Directory of cached solutions keyed by problem hash + tolerance.

    Returns
    -------
    OracleSolution
    """
    if cache_dir is not None:
        cached = load_cached_solution(problem, tol, cache_dir)
        if cached is not None:
            return cached

    ops = StackedOps(problem)
    cone = problem.cone
    if x0 is None:
        x0 = problem.witness if problem.witness is not None else np.zeros(ops.n)
    x = project_box(np.array(x0, dtype=float, copy=True), ops.lower, ops.upper)
    y = np.zeros(cone.total)

    L_f = ops.smooth_lipschitz()
    J = max(ops.jacobian_norm_bound(), 1e-12)
    sigma = sigma_scale / J
    tau = 0.95 / (0.5 * L_f + sigma * J * J)

    best = None
    best_res = np.inf
    since_improvement = 0
    patience = 40_000 // check_every
    c_prev = ops.constraint_sum(x)
    it = 0
    while it < max_iterations:
        it += 1
        grad = ops.smooth_grad(x) + ops.jacobian_T_y(x, y)
        x = project_box(
            prox_l1(x - tau * grad, tau * ops.l1_vec), ops.lower, ops.upper
        )
        c_new = ops.constraint_sum(x)
        y = project_polar_cone(y + sigma * (2.0 * c_new - c_prev), cone)
        c_prev = c_new
        if np.abs(y).max() > 1e10:
            raise OracleError(
                "dual iterate diverging; the problem looks infeasible"
            )
        if it % check_every == 0:
            report = kkt_check(problem, x, y, ops)
            res = report.max_residual
            if res < best_res:
                improved = res < 0.5 * best_res
                best_res = res
                best = (x.copy(), y.copy())
                since_improvement = 0 if improved else since_improvement + 1
            else:
                since_improvement += 1
            if res <= tol:
                break
            if since_improvement >= patience:
                # stall: restart from the best pair with gentler steps
                sigma *= 0.5
                tau = 0.95 / (0.5 * L_f + sigma * J * J)
                x, y = best[0].copy(), best[1].copy()
                c_prev = ops.constraint_sum(x)
                since_improvement = 0

    if best_res > tol:
        raise OracleError(
            f"KKT residual {best_res:.3e} still above {tol:.1e} after "
            f"{it} iterations"
        )
    x, y = best
    solution = OracleSolution(
        x_star=x,
        y_star=y,
        f_star=float(problem.evaluate_objective(x)),
        kkt_residual=float(best_res),
        iterations=it,
        tol=float(tol),
    )
    if cache_dir is not None:
        store_solution(problem, solution, cache_dir)
    return solution


def multiplier_split(problem, x, y):
    """A valid per-agent decomposition of the global multiplier.

    Returns ``(m, p+q)`` auxiliaries with exact zero column sums: each
    agent takes its own constraint-map value, recentered by the agents'
    mean so the rows sum to zero.  At an optimal pair this lies in the
    optimality operator's multiplier block (inactive inequality rows get a
    nonnegative shift, active rows an O(residual) one).
    """
    values = np.stack([a.constraint_map(xi) for a, xi in
                       zip(problem.agents, problem.split(np.asarray(x, float)))])
    return values - values.mean(axis=0)


# ---------------------------------------------------------------------------
# solution cache


def problem_key(problem, tol):
    payload = problem_text(problem) + f"tol={tol!r}"
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def store_solution(problem, solution, cache_dir, name=None):
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(
        cache_dir, (name or problem_key(problem, solution.tol)) + ".json"
    )
    blob = {
        "x_star": solution.x_star.tolist(),
        "y_star": solution.y_star.tolist(),
        "f_star": solution.f_star,
        "kkt_residual": solution.kkt_residual,
        "iterations": solution.iterations,
        "tol": solution.tol,
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)
    return path


def load_cached_solution(problem, tol, cache_dir):
    path = os.path.join(cache_dir, problem_key(problem, tol) + ".json")
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        blob = json.load(fh)
    solution = OracleSolution(
        x_star=np.array(blob["x_star"]),
        y_star=np.array(blob["y_star"]),
        f_star=float(blob["f_star"]),
        kkt_residual=float(blob["kkt_residual"]),
        iterations=int(blob["iterations"]),
        tol=float(blob["tol"]),
    )
    # integrity: a cached pair must still certify at its stored tolerance
    report = kkt_check(problem, solution.x_star, solution.y_star)
    if report.max_residual > max(solution.tol, solution.kkt_residual) * 1.01:
        return None
    return solution

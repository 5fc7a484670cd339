"""Centralized diagnostics observer.

The observer is a simulation-only component: it consumes round snapshots
at the barrier (or offline) and computes every residual, descent-slack and
rate quantity of interest.  Agents never see any of this data.

It is also the only place where the analysis variable ``Z`` exists: the
observer materializes a full row-rank factor ``U`` of the mixing matrix
(``L = U^T U``) and advances ``Z^{k+1} = Z^k + beta U Y_hat^k`` from
``Z^0 = 0``, so that ``U^T Z^k`` reproduces the agents' auxiliaries
``Lambda^k`` exactly.  That makes stacked-metric statements (descent
inequality, distances to a reference point) computable without ever
touching the agents' code path.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .functions import interval_gap, l1_box_interval
from .metrics import (
    dense_metric_constants,
    first_order_residual_sq,
    mixing_factor,
    successive_diff_h,
)

CONSERVATION_TOL = 1e-10
FACTOR_TOL = 1e-10
LAMBDA_RECON_TOL = 1e-8
INCLUSION_TOL = 1e-8


@dataclass
class TraceRow:
    """One round of diagnostics (the CSV row)."""

    round: int
    objective_residual: float
    eq_violation: float
    ineq_violation: float
    consensus_error: float
    foo_residual: float
    successive_diff_h: float
    fejer_slack: float
    epsilon_max: float
    inner_iterations_total: int


CSV_COLUMNS = (
    "round",
    "objective_residual",
    "eq_violation",
    "ineq_violation",
    "consensus_error",
    "foo_residual",
    "successive_diff_h",
    "fejer_slack",
    "epsilon_max",
    "inner_iterations_total",
)


class IterationTrace:
    """Ordered per-round diagnostics with CSV round-tripping."""

    def __init__(self, rows=None):
        self.rows = list(rows) if rows else []

    def append(self, row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for r in self.rows:
                vals = [
                    str(r.round),
                    *(repr(float(getattr(r, c))) for c in CSV_COLUMNS[1:-1]),
                    str(r.inner_iterations_total),
                ]
                fh.write(",".join(vals) + "\n")

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"{path}: unexpected trace columns {header}")
            for ln in fh:
                parts = ln.strip().split(",")
                rows.append(
                    TraceRow(
                        round=int(parts[0]),
                        objective_residual=float(parts[1]),
                        eq_violation=float(parts[2]),
                        ineq_violation=float(parts[3]),
                        consensus_error=float(parts[4]),
                        foo_residual=float(parts[5]),
                        successive_diff_h=float(parts[6]),
                        fejer_slack=float(parts[7]),
                        epsilon_max=float(parts[8]),
                        inner_iterations_total=int(parts[9]),
                    )
                )
        return cls(rows)


class ObserverFactorization:
    """Explicit factor ``U`` of the mixing matrix and the materialized ``Z``.

    ``U`` comes from the eigendecomposition restricted to nonzero
    eigenpairs (``U = S^{1/2} V^T``), so ``U^T U`` reproduces the mixing
    matrix to high accuracy and ``U`` has full row rank ``m - 1`` on a
    connected graph.
    """

    def __init__(self, mixing, block):
        self.U = mixing_factor(mixing.matrix)
        self.block = block
        gap = float(np.abs(self.U.T @ self.U - mixing.matrix).max())
        if gap > FACTOR_TOL:
            raise ValueError(
                f"factorization residual {gap:.3e} exceeds {FACTOR_TOL:.0e}"
            )
        self.rank = self.U.shape[0]
        self.Z = np.zeros((self.rank, block))

    def advance(self, beta, Y_hat):
        self.Z = self.Z + beta * (self.U @ Y_hat)

    def lambda_from_z(self, Z=None):
        Z = self.Z if Z is None else Z
        return self.U.T @ Z

    def reconstruction_gap(self, lam):
        """Largest deviation of ``U^T Z`` from the agents' auxiliaries."""
        if self.rank == 0:
            return float(np.abs(lam).max()) if lam.size else 0.0
        return float(np.abs(self.lambda_from_z() - lam).max())

    def preimage(self, lam):
        """Least-squares ``Z`` with ``U^T Z = Lambda`` (columnwise)."""
        if self.rank == 0:
            return np.zeros((0, self.block))
        sol, *_ = np.linalg.lstsq(self.U.T, lam, rcond=None)
        return sol


@dataclass
class FejerReference:
    """Stacked reference point for the descent inequality.

    ``x_star``/``y_star`` come from the reference oracle; ``lam_star`` is
    the per-agent multiplier decomposition of a long exact run (any zero of
    the optimality operator works); ``z_star`` is its least-squares
    preimage through ``U^T``.
    """

    x_star: np.ndarray
    y_star: np.ndarray
    lam_star: np.ndarray
    z_star: np.ndarray = None

    def finalize(self, factorization):
        if self.z_star is None:
            self.z_star = factorization.preimage(self.lam_star)
        return self


@dataclass
class InvariantReport:
    """Worst-case gaps of the per-round invariant re-checks."""

    conservation: float = 0.0
    polar_cone: float = 0.0
    lambda_reconstruction: float = 0.0
    inclusion_x: float = 0.0
    inclusion_y: float = 0.0
    inclusion_z: float = 0.0
    violations: list = field(default_factory=list)

    def ok(self):
        return not self.violations


class Observer:
    """Consumes round snapshots and accumulates the iteration trace.

    Parameters
    ----------
    problem, mixing, blocks
        The problem, the validated mixing matrix and the block metrics the
        run uses.
    oracle : OracleSolution, optional
        Reference solution; enables the objective-residual column and,
        together with ``fejer``, the descent-slack column.
    fejer : FejerReference, optional
        Stacked reference point for the descent inequality.
    keep_states : bool, optional
        Retain per-round stacked iterates (x, Y, Z) for offline rate fits.
    check_inclusion : bool, optional
        Re-verify the prediction inclusion blockwise every round.
    """

    def __init__(
        self,
        problem,
        mixing,
        blocks,
        oracle=None,
        fejer=None,
        keep_states=False,
        check_inclusion=True,
    ):
        self.problem = problem
        self.mixing = mixing
        self.blocks = blocks
        self.oracle = oracle
        self.keep_states = keep_states
        self.check_inclusion = check_inclusion
        self.trace = IterationTrace()
        self.factorization = ObserverFactorization(mixing, problem.cone.total)
        self.fejer = fejer.finalize(self.factorization) if fejer else None
        self.invariants = InvariantReport()
        self.history = []

    # -- stacked-metric helpers ------------------------------------------

    def h_norm_sq(self, dx, dY, dZ):
        b = self.blocks
        z_term = float(np.tensordot(dZ, dZ)) / b.beta if dZ.size else 0.0
        return b.x_norm_sq_h(dx) + b.y_norm_sq(dY) + z_term

    def d_norm_sq_prediction(self, data):
        """``||xi^k - xi_hat^k||_D^2`` of a round transition."""
        b = self.blocks
        return (
            b.x_norm_sq_d(data.x - data.x_hat)
            + b.y_norm_sq(data.Y - data.Y_hat)
            + b.z_norm_sq_d_from_yhat(self.mixing.matrix, data.Y_hat)
        )

    def first_order_residual(self, data):
        """Stacked first-order optimality residual of one transition."""
        return math.sqrt(
            max(
                first_order_residual_sq(
                    self.blocks,
                    self.mixing.matrix,
                    data.x - data.x_next,
                    data.v,
                    data.Y - data.Y_next,
                    data.Y_hat,
                ),
                0.0,
            )
        )

    def fejer_slack(self, data, z_before):
        """Relative slack of the stacked descent inequality.

        Nonnegative (up to floating point) for any reference point that
        zeroes the optimality operator; the inexactness inner product is
        part of the right-hand side.
        """
        ref = self.fejer
        b = self.blocks
        z_after = z_before + b.beta * (self.factorization.U @ data.Y_hat)
        y_star_rows = np.broadcast_to(ref.y_star, data.Y.shape)
        dist_before = self.h_norm_sq(
            data.x - ref.x_star, data.Y - y_star_rows, z_before - ref.z_star
        )
        dist_after = self.h_norm_sq(
            data.x_next - ref.x_star,
            data.Y_next - y_star_rows,
            z_after - ref.z_star,
        )
        pred = self.d_norm_sq_prediction(data)
        inexact = 2.0 * float((data.x_hat - ref.x_star) @ data.v)
        slack = (dist_before - pred + inexact) - dist_after
        return slack / max(1.0, dist_before), inexact

    def inclusion_check(self, data):
        """Blockwise membership of the prediction in the optimality operator.

        Returns the worst coordinate gaps of the three blocks: the x block
        re-derives the subgradient certificate from the smooth gradients
        and the predicted multipliers, the Y block checks the variational
        inequality of the polar-cone projection, and the Z block is an
        identity of the materialized update.
        """
        problem = self.problem
        cone = problem.cone
        offs = problem.offsets
        inv_alpha = 1.0 / self.blocks.alpha
        gap_x = 0.0
        gap_y = 0.0
        for i, agent in enumerate(problem.agents):
            sl = slice(offs[i], offs[i + 1])
            x_hat = data.x_hat[sl]
            u = (
                inv_alpha[i] * (data.x[sl] - x_hat)
                + data.v[sl]
                - agent.smooth.gradient(x_hat)
                - agent.constraint_jacobian(x_hat).T @ data.Y_hat[i]
            )
            lo, hi = l1_box_interval(x_hat, agent.l1_weight, agent.lower, agent.upper)
            gaps = interval_gap(u, lo, hi)
            if gaps.size:
                gap_x = max(gap_x, float(gaps.max()))
            w = data.Y[i] - self.blocks.gamma[i] * data.lam[i]
            z_pre = w + self.blocks.gamma[i] * agent.constraint_map(x_hat)
            resid = z_pre - data.Y_hat[i]
            if cone.p:
                gap_y = max(gap_y, float(np.abs(resid[: cone.p]).max()))
            if cone.q:
                r_ineq = resid[cone.p:]
                y_ineq = data.Y_hat[i][cone.p:]
                gap_y = max(
                    gap_y,
                    float(np.maximum(-y_ineq, 0.0).max()),
                    float(np.maximum(r_ineq, 0.0).max()),
                    float(np.abs(r_ineq * y_ineq).max()),
                )
        return gap_x, gap_y, 0.0

    # -- per-round entry point -------------------------------------------

    def on_round(self, data):
        problem = self.problem
        cone = problem.cone
        b = self.blocks

        eq, ineq = problem.feasibility_violations(data.x_next)
        y_bar = data.Y_next.mean(axis=0)
        consensus = (
            float(np.linalg.norm(data.Y_next - y_bar, axis=1).max())
            if problem.m > 1
            else 0.0
        )
        foo = self.first_order_residual(data)
        succ = successive_diff_h(
            b,
            self.mixing.matrix,
            data.x - data.x_next,
            data.Y - data.Y_next,
            data.Y_hat,
        )

        if self.oracle is not None:
            f_val = problem.evaluate_objective(data.x_next)
            denom = max(abs(self.oracle.f_star), 1e-300)
            obj_res = abs(f_val - self.oracle.f_star) / denom
        else:
            obj_res = math.nan

        z_before = self.factorization.Z.copy()
        if self.fejer is not None:
            slack, _ = self.fejer_slack(data, z_before)
        else:
            slack = math.nan

        # invariant re-checks, independent of the engine
        inv = self.invariants
        lam_scale = max(1.0, float(np.abs(data.lam_next).max()))
        cons = float(np.abs(data.lam_next.sum(axis=0)).max()) / lam_scale
        inv.conservation = max(inv.conservation, cons)
        if cons > CONSERVATION_TOL:
            inv.violations.append(
                f"round {data.k}: multiplier sum {cons:.3e} exceeds tolerance"
            )
        if cone.q:
            polar = float(np.maximum(-data.Y_hat[:, cone.p:], 0.0).max())
            inv.polar_cone = max(inv.polar_cone, polar)
            if polar > 0.0:
                inv.violations.append(
                    f"round {data.k}: predicted multiplier leaves the polar cone"
                )
        self.factorization.advance(b.beta, data.Y_hat)
        recon = self.factorization.reconstruction_gap(data.lam_next)
        inv.lambda_reconstruction = max(inv.lambda_reconstruction, recon)
        if recon > LAMBDA_RECON_TOL:
            inv.violations.append(
                f"round {data.k}: U^T Z drifted {recon:.3e} from the auxiliaries"
            )
        if self.check_inclusion:
            gx, gy, gz = self.inclusion_check(data)
            inv.inclusion_x = max(inv.inclusion_x, gx)
            inv.inclusion_y = max(inv.inclusion_y, gy)
            inv.inclusion_z = max(inv.inclusion_z, gz)
            if max(gx, gy, gz) > INCLUSION_TOL:
                inv.violations.append(
                    f"round {data.k}: inclusion gaps ({gx:.3e}, {gy:.3e}, {gz:.3e})"
                )

        if self.keep_states:
            self.history.append(
                (data.x_next.copy(), data.Y_next.copy(), self.factorization.Z.copy())
            )

        row = TraceRow(
            round=data.k,
            objective_residual=obj_res,
            eq_violation=eq,
            ineq_violation=ineq,
            consensus_error=consensus,
            foo_residual=foo,
            successive_diff_h=succ,
            fejer_slack=slack,
            epsilon_max=float(data.epsilon.max()),
            inner_iterations_total=int(data.inner_iterations.sum()),
        )
        self.trace.append(row)
        return row

    def distances_to(self, x_ref, Y_ref, Z_ref):
        """Stacked-metric distances of the retained history to a reference."""
        if not self.keep_states:
            raise ValueError("observer was not retaining states")
        out = []
        for x, Y, Z in self.history:
            out.append(
                math.sqrt(
                    max(self.h_norm_sq(x - x_ref, Y - Y_ref, Z - Z_ref), 0.0)
                )
            )
        return np.array(out)


# ---------------------------------------------------------------------------
# rate analysis


@dataclass
class RateCertificate:
    """Empirical rate diagnostics plus the computable metric constants.

    ``windowed_successive``/``windowed_foo_sq`` are tail-window maxima of
    ``k * r_k``; decreasing windows support the vanishing-rate claim.
    ``linear_slope``/``linear_r2`` fit ``log`` distance-to-limit against
    the round index when a distance series is supplied.  The subregularity
    constant and the exact contraction factor are not computable from
    data, so only the empirical contraction ``exp(slope)`` is reported.
    """

    windowed_successive: np.ndarray
    windowed_foo_sq: np.ndarray
    successive_decreasing: bool
    foo_decreasing: bool
    linear_slope: float = math.nan
    linear_r2: float = math.nan
    empirical_contraction: float = math.nan
    constants: dict = None

    def summary(self):
        lines = ["rate certificate"]
        lines.append(
            "k*successive_diff_H window maxima: "
            + " ".join(f"{v:.3e}" for v in self.windowed_successive)
            + (" (decreasing)" if self.successive_decreasing else " (NOT decreasing)")
        )
        lines.append(
            "k*foo_residual^2 window maxima:    "
            + " ".join(f"{v:.3e}" for v in self.windowed_foo_sq)
            + (" (decreasing)" if self.foo_decreasing else " (NOT decreasing)")
        )
        if not math.isnan(self.linear_slope):
            lines.append(
                f"log-distance fit: slope {self.linear_slope:.6f} per round, "
                f"R^2 {self.linear_r2:.4f}, empirical contraction "
                f"{self.empirical_contraction:.6f}"
            )
        lines.append(
            "subregularity constant and exact contraction factor: "
            "estimated empirically only"
        )
        if self.constants:
            lines.append(
                "metric constants: "
                + " ".join(f"{k}={v:.6g}" for k, v in self.constants.items())
            )
        return "\n".join(lines) + "\n"


def window_maxima(values, windows=4, window_len=None):
    """Maxima of ``(k+1) * value_k`` over trailing equal windows."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if window_len is None:
        window_len = max(n // (2 * windows), 1)
    need = windows * window_len
    if n < need:
        raise ValueError(f"trace too short: {n} rounds < {need} needed")
    k = np.arange(1, n + 1)
    scaled = k * values
    out = []
    for wi in range(windows):
        start = n - need + wi * window_len
        out.append(float(scaled[start: start + window_len].max()))
    return np.array(out)


def log_linear_fit(distances, fit_range):
    """Least-squares line through ``log distances`` over ``fit_range``.

    Returns (slope, r2).  Nonpositive distances are floored at the
    smallest positive entry to keep the logarithm finite.
    """
    lo, hi = fit_range
    d = np.asarray(distances, dtype=float)[lo:hi]
    positive = d[d > 0.0]
    if positive.size == 0:
        return 0.0, 0.0
    d = np.maximum(d, positive.min())
    y = np.log(d)
    x = np.arange(lo, hi, dtype=float)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(coef[0]), r2


def rate_analysis(
    trace,
    windows=4,
    window_len=None,
    xi_distances=None,
    fit_range=None,
    blocks=None,
    factor=None,
    min_rounds=200,
):
    """Build a rate certificate from a completed trace.

    Parameters
    ----------
    trace : IterationTrace
        At least ``min_rounds`` rounds.
    windows, window_len : int
        Trailing-window layout for the ``k * r_k`` maxima.
    xi_distances : ndarray, optional
        Per-round stacked-metric distances to a high-accuracy limit point;
        enables the log-linear fit.
    fit_range : (int, int), optional
        Round range of the fit (default: second half of the series).
    blocks, factor : optional
        Metric blocks and mixing factor; enables the spectral constants.
    """
    if len(trace) < min_rounds:
        raise ValueError(f"trace too short: {len(trace)} < {min_rounds} rounds")
    succ = window_maxima(trace.column("successive_diff_h"), windows, window_len)
    foo = window_maxima(trace.column("foo_residual") ** 2, windows, window_len)
    cert = RateCertificate(
        windowed_successive=succ,
        windowed_foo_sq=foo,
        successive_decreasing=bool(np.all(np.diff(succ) < 0.0)),
        foo_decreasing=bool(np.all(np.diff(foo) < 0.0)),
    )
    if xi_distances is not None:
        if fit_range is None:
            fit_range = (len(xi_distances) // 2, len(xi_distances))
        slope, r2 = log_linear_fit(xi_distances, fit_range)
        cert.linear_slope = slope
        cert.linear_r2 = r2
        cert.empirical_contraction = math.exp(slope)
    if blocks is not None and factor is not None:
        consts = dense_metric_constants(blocks, factor)
        if not consts["c3"] <= consts["c2"] + 1e-12:
            raise AssertionError("metric constants violate c3 <= c2")
        cert.constants = {
            k: consts[k] for k in ("c1", "c2", "c3", "c4", "omega")
        }
    return cert

"""Synchronous round engine for the decentralized proximal multiplier method.

Every round is bulk-synchronous.  Each agent, in parallel:

1. approximately minimizes its proximal augmented-Lagrangian subproblem at
   the shifted multiplier ``w_i = y_i - gamma_i lambda_i``, to a certified
   subgradient precision ``eps_i^k`` (prediction of ``x``);
2. predicts its multiplier ``y_hat_i = P(w_i + gamma_i G_i(x_hat_i))`` with
   ``P`` the polar-cone projection (exact).

Then one exchange of the ``y_hat`` values happens over the graph, giving
each agent the mixing-weighted aggregate of its neighborhood, and each
agent corrects:

    x_i   <- (1 - theta_i) x_i + theta_i x_hat_i
    lam_i <- lam_i + beta * aggregate_i
    y_i   <- y_hat_i - gamma_i * beta * aggregate_i

The communication round is the only cross-agent data flow; the sum of the
auxiliary multipliers is conserved exactly (zero row sums of the mixing
matrix).  Two runs with identical inputs produce identical traces
regardless of the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .functions import project_box, project_polar_cone
from .metrics import MetricBlocks
from .subsolver import build_subproblem, constraint_curvature, davis_yin_solve

DIVERGENCE_LIMIT = 1e12
EXACT_FLOOR = 1e-12


class ParameterError(ValueError):
    """Algorithm parameters violate their feasible ranges."""


class DivergenceError(RuntimeError):
    """An iterate norm crossed the divergence guard."""


class SubproblemBudgetError(RuntimeError):
    """An agent's inner solver missed its precision within budget."""

    def __init__(self, agent, round_index, achieved, target):
        super().__init__(
            f"agent {agent}, round {round_index}: inner solver reached "
            f"{achieved:.3e} > target {target:.3e} within budget"
        )
        self.agent = agent
        self.round_index = round_index
        self.achieved = achieved
        self.target = target


# ---------------------------------------------------------------------------
# subproblem precision schedules


@dataclass(frozen=True)
class ExactSchedule:
    """Exact subproblems (``eps = 0``); the engine floors the solver target
    at machine-level precision so budgets stay finite."""

    kind = "exact"
    summable = True

    def epsilon(self, agent, k, prev_step):
        return 0.0


@dataclass(frozen=True)
class ConstantSchedule:
    """Constant precision.  Not summable: convergence theory does not
    cover it, so it is flagged and meant for experiments only."""

    value: float
    kind = "constant"
    summable = False

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("constant precision must be nonnegative")

    def epsilon(self, agent, k, prev_step):
        return self.value


@dataclass(frozen=True)
class GeometricSchedule:
    """``eps^k = c * tau^k`` with ``tau`` in (0, 1)."""

    tau: float
    c: float = 1.0
    kind = "geometric"
    summable = True

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("geometric ratio must lie in (0, 1)")
        if self.c < 0:
            raise ValueError("geometric scale must be nonnegative")

    def epsilon(self, agent, k, prev_step):
        return self.c * self.tau ** k

@dataclass(frozen=True)
class PolynomialSchedule:
    """``eps^k = c / (k+1)^s`` with ``s > 1`` (rounds counted from one)."""

    s: float
    c: float = 1.0
    kind = "polynomial"
    summable = True

    def __post_init__(self):
        if self.s <= 1.0:
            raise ValueError("polynomial exponent must exceed 1 for summability")
        if self.c < 0:
            raise ValueError("polynomial scale must be nonnegative")

    def epsilon(self, agent, k, prev_step):
        return self.c / float(k + 1) ** self.s


@dataclass(frozen=True)
class ProportionalSchedule:
    """``eps_i^k = c * rho^k * ||x_i^k - x_i^{k-1}||`` with ``rho`` in (0, 1).

    Uses the previous round's step norm (available before the subproblem is
    solved); the first round uses zero, i.e. a near-exact solve.
    """

    rho: float
    c: float = 1.0
    kind = "proportional"
    summable = True

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("proportional decay must lie in (0, 1)")
        if self.c < 0:
            raise ValueError("proportional scale must be nonnegative")

    def epsilon(self, agent, k, prev_step):
        return self.c * self.rho ** k * prev_step


def parse_schedule(spec):
    """Parse a schedule string.

    Accepted forms: ``exact``, ``const:<eps>``, ``geometric:<tau>[:<c>]``,
    ``poly:<s>[:<c>]``, ``proportional:<rho>[:<c>]``.
    """
    parts = str(spec).split(":")
    name = parts[0].strip().lower()
    args = [float(t) for t in parts[1:]]
    if name == "exact":
        return ExactSchedule()
    if name in ("const", "constant"):
        return ConstantSchedule(args[0])
    if name == "geometric":
        return GeometricSchedule(args[0], args[1] if len(args) > 1 else 1.0)
    if name in ("poly", "polynomial"):
        return PolynomialSchedule(args[0], args[1] if len(args) > 1 else 1.0)
    if name == "proportional":
        return ProportionalSchedule(args[0], args[1] if len(args) > 1 else 1.0)
    raise ValueError(f"unknown schedule spec {spec!r}")


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class AlgorithmParams:
    """Per-agent relaxation/proximal/dual-step parameters plus the shared
    consensus step and the subproblem precision schedule."""

    theta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    beta: float
    schedule: object = field(default_factory=ExactSchedule)

    @classmethod
    def from_scalars(cls, m, theta, alpha, gamma, beta, schedule=None):
        if schedule is None:
            schedule = ExactSchedule()
        elif isinstance(schedule, str):
            schedule = parse_schedule(schedule)
        return cls(
            theta=np.full(m, float(theta)),
            alpha=np.full(m, float(alpha)),
            gamma=np.full(m, float(gamma)),
            beta=float(beta),
            schedule=schedule,
        )


def validate_params(params, mixing, dims=None, block=1):
    """Check the feasible ranges and return the block metric matrices.

    Requires ``theta_i`` strictly inside (0, 2), positive ``alpha_i``,
    ``gamma_i``, ``beta``, and the spectral condition
    ``max_i gamma_i * beta * lambda_max(L) < 1``.  For a scaled mixing
    matrix ``L = (I - W)/nu`` the graph-free sufficient rule
    ``gamma_i * beta <= nu / 2`` is also accepted.  Violations are reported
    together with the offending agent indices.
    """
    problems = []
    theta, alpha, gamma = params.theta, params.alpha, params.gamma
    bad = np.where((theta <= 0.0) | (theta >= 2.0))[0]
    if bad.size:
        problems.append(
            f"theta must lie strictly in (0, 2); offending agents {bad.tolist()} "
            f"with values {theta[bad].tolist()}"
        )
    bad = np.where(alpha <= 0.0)[0]
    if bad.size:
        problems.append(f"alpha must be positive; offending agents {bad.tolist()}")
    bad = np.where(gamma <= 0.0)[0]
    if bad.size:
        problems.append(f"gamma must be positive; offending agents {bad.tolist()}")
    if params.beta <= 0.0:
        problems.append(f"beta must be positive, got {params.beta}")
    if not problems:
        if mixing.node_count > 1:
            mixing.require_consensus_capable()
        lam_max = mixing.exact_lambda_max
        products = gamma * params.beta
        spectral_ok = products.max() * lam_max < 1.0
        sufficient_ok = (
            mixing.kind == "scaled-metropolis"
            and mixing.scaling is not None
            and products.max() <= mixing.scaling / 2.0
        )
        if not (spectral_ok or sufficient_ok):
            bad = np.where(products * lam_max >= 1.0)[0]
            problems.append(
                "spectral condition gamma_i*beta*lambda_max(L) < 1 violated; "
                f"lambda_max = {lam_max:.6g}, offending agents {bad.tolist()} "
                f"with gamma*beta {products[bad].tolist()}"
            )
    if problems:
        raise ParameterError("; ".join(problems))
    if dims is None:
        dims = (1,) * theta.shape[0]
    return MetricBlocks.build(
        theta,
        alpha,
        gamma,
        params.beta,
        dims,
        block=block,
        lambda_max=mixing.exact_lambda_max,
    )


# ---------------------------------------------------------------------------
# state and per-round record


@dataclass
class AgentState:
    """One agent's variables after a round.

    ``x`` is the decision, ``y`` the multiplier estimate, ``lam`` the
    consensus auxiliary (zero-initialized and sum-conserved), ``x_hat`` and
    ``y_hat`` the last predictions, ``last_v_norm`` the certified
    subgradient norm of the last inner solve.
    """

    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    x_hat: np.ndarray
    y_hat: np.ndarray
    last_v_norm: float


@dataclass
class RoundData:
    """Everything the observer needs about one round transition."""

    k: int
    x: np.ndarray          # stacked decisions before the round
    Y: np.ndarray          # (m, p+q) multiplier estimates before
    lam: np.ndarray        # (m, p+q) auxiliaries before
    x_hat: np.ndarray      # stacked predictions
    Y_hat: np.ndarray      # (m, p+q) predicted multipliers
    v: np.ndarray          # stacked subgradient certificates
    x_next: np.ndarray
    Y_next: np.ndarray
    lam_next: np.ndarray
    epsilon: np.ndarray    # per-agent requested precisions
    inner_iterations: np.ndarray


@dataclass
class RunResult:
    states: list
    trace: object
    rounds: int
    converged: bool


def initial_state(problem, x0=None, y0=None):
    """Initial stacked decision (inside the boxes) and multipliers (in the
    polar cone); the auxiliaries always start at zero."""
    cone = problem.cone
    if x0 is None:
        x0 = np.concatenate(
            [project_box(np.zeros(a.dim), a.lower, a.upper) for a in problem.agents]
        )
    else:
        x0 = np.array(x0, dtype=float, copy=True)
        for xi, agent in zip(problem.split(x0), problem.agents):
            if not agent.box_feasible(xi):
                raise ValueError("initial decision violates a box")
    if y0 is None:
        Y0 = np.zeros((problem.m, cone.total))
    else:
        Y0 = np.array(y0, dtype=float, copy=True).reshape(problem.m, cone.total)
        if cone.q and np.any(Y0[:, cone.p:] < 0.0):
            raise ValueError("initial multipliers leave the polar cone")
    return x0, Y0


def run(
    problem,
    mixing,
    params,
    max_rounds,
    residual_tol=0.0,
    observer=None,
    workers=1,
    x0=None,
    y0=None,
    inner_budget=20_000,
    exact_floor=EXACT_FLOOR,
):
    """Execute synchronous rounds until the first-order residual drops
    below ``residual_tol`` or ``max_rounds`` is reached.

    Parameters
    ----------
    problem : CoupledProblem
    mixing : MixingMatrix
        Validated consensus matrix over a connected graph.
    params : AlgorithmParams
    max_rounds : int
    residual_tol : float, optional
        Stop once the stacked first-order residual reaches this value;
        zero runs all rounds.
    observer : Observer, optional
        Centralized diagnostics consumer; a minimal one is created when
        omitted so the trace and the stopping residual always exist.
    workers : int, optional
        Thread count for the parallel prediction phase.  Any value yields
        bit-identical results.
    x0, y0 : ndarray, optional
        Initial decision (stacked) and multiplier estimates ``(m, p+q)``.
    inner_budget : int, optional
        Inner-iteration cap per subproblem.
    exact_floor : float, optional
        Solver target used when the schedule requests higher precision
        than floating point supports (notably the exact schedule).

    Returns
    -------
    RunResult
        Final per-agent states, the iteration trace, the number of rounds
        executed, and whether the residual tolerance was met.
    """
    from .observer import Observer  # local import to avoid a cycle

    cone = problem.cone
    m = problem.m
    dims = problem.dims
    offsets = problem.offsets
    blocks = validate_params(params, mixing, dims=dims, block=cone.total)
    if observer is None:
        observer = Observer(problem, mixing, blocks)
    L = mixing.matrix
    gamma = params.gamma
    theta = params.theta
    beta = params.beta
    schedule = params.schedule

    x, Y = initial_state(problem, x0, y0)
    lam = np.zeros((m, cone.total))
    curvatures = [constraint_curvature(a) for a in problem.agents]
    warm = [np.array(xi, copy=True) for xi in problem.split(x)]
    prev_step = np.zeros(m)

    theta_x = np.repeat(theta, dims)

    def predict(i, k, eps_i):
        agent = problem.agents[i]
        sl = slice(offsets[i], offsets[i + 1])
        w = Y[i] - gamma[i] * lam[i]
        target = max(eps_i, exact_floor)
        spec = build_subproblem(
            agent,
            w,
            gamma[i],
            alpha=params.alpha[i],
            anchor=x[sl],
            target=target,
            curvature=curvatures[i],
            max_iterations=inner_budget,
        )
        res = davis_yin_solve(spec, warm[i])
        if not res.converged and res.residual > target:
            raise SubproblemBudgetError(i, k, res.residual, target)
        y_hat = project_polar_cone(w + gamma[i] * agent.constraint_map(res.x), cone)
        return res, y_hat

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    converged = False
    rounds = 0
    try:
        for k in range(max_rounds):
            eps = np.array(
                [schedule.epsilon(i, k, prev_step[i]) for i in range(m)]
            )
            if pool is not None:
                results = list(pool.map(predict, range(m), [k] * m, eps))
            else:
                results = [predict(i, k, eps[i]) for i in range(m)]

            x_hat = np.empty_like(x)
            Y_hat = np.empty_like(Y)
            v = np.empty_like(x)
            inner = np.empty(m, dtype=int)
            for i, (res, y_hat_i) in enumerate(results):
                sl = slice(offsets[i], offsets[i + 1])
                x_hat[sl] = res.x
                v[sl] = res.v
                Y_hat[i] = y_hat_i
                inner[i] = res.iterations
                warm[i] = res.x

            # barrier: one exchange of the predicted multipliers
            aggregate = L @ Y_hat

            x_next = (1.0 - theta_x) * x + theta_x * x_hat
            lam_next = lam + beta * aggregate
            Y_next = Y_hat - (gamma[:, None] * beta) * aggregate

            scale = max(
                np.abs(x_next).max(),
                np.abs(Y_next).max() if Y_next.size else 0.0,
                np.abs(lam_next).max() if lam_next.size else 0.0,
            )
            if not np.isfinite(scale) or scale > DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"iterate norm {scale:.3e} crossed the divergence guard "
                    f"at round {k}"
                )

            data = RoundData(
                k=k,
                x=x, Y=Y, lam=lam,
                x_hat=x_hat, Y_hat=Y_hat, v=v,
                x_next=x_next, Y_next=Y_next, lam_next=lam_next,
                epsilon=eps,
                inner_iterations=inner,
            )
            row = observer.on_round(data)

            for i in range(m):
                sl = slice(offsets[i], offsets[i + 1])
                prev_step[i] = float(np.linalg.norm(x_next[sl] - x[sl]))
            x, Y, lam = x_next, Y_next, lam_next
            rounds = k + 1
            if residual_tol > 0.0 and row.foo_residual <= residual_tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)

    states = []
    for i in range(m):
        sl = slice(offsets[i], offsets[i + 1])
        states.append(
            AgentState(
                x=x[sl].copy(),
                y=Y[i].copy(),
                lam=lam[i].copy(),
                x_hat=x_hat[sl].copy(),
                y_hat=Y_hat[i].copy(),
                last_v_norm=float(np.linalg.norm(v[sl])),
            )
        )
    return RunResult(
        states=states,
        trace=observer.trace,
        rounds=rounds,
        converged=converged,
    )

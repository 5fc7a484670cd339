"""Seeded experiment families and the end-to-end experiment runner.

Three generators cover the benchmark families:

* ``example1``: linearly coupled, l1-regularized logistic objectives
  (equality rows only),
* ``example2``: a coupled constrained LASSO — strongly convex quadratic
  objectives, equality rows plus one coupled logistic inequality row built
  around a stored strictly feasible witness,
* ``structural``: strongly convex quadratics with affine-only coupling
  (equality plus one affine inequality row), the family on which the
  iteration contracts linearly.

All randomness is drawn from seeded generators with documented
distributions (standard normal data, boxes ``[-5, 5]``, witnesses uniform
in the box); identical seeds give byte-identical problem files and traces.
Default parameters per family were picked by a small sweep over the
feasible ranges (see ``demos/08_parameter_sweep.py``) and are recorded in
``DEFAULTS``.
"""

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine, observer as observer_mod, oracle as oracle_mod
from .engine import AlgorithmParams, parse_schedule, validate_params
from .functions import (
    AffineConstraint,
    ConeSpec,
    LogisticConstraint,
    LogisticLoss,
    QuadraticLoss,
    softplus,
)
from .graphs import (
    build_laplacian,
    build_metropolis_weights,
    build_scaled_mixing,
    random_connected_topology,
    read_topology,
    write_topology,
)
from .observer import FejerReference, Observer, rate_analysis
from .problems import CoupledProblem, LocalProblem, write_problem

BOX_HALF_WIDTH = 5.0

DEFAULTS = {
    "example1": dict(theta=1.6, alpha=8.0, gamma=0.9, beta=1.0),
    "example2": dict(theta=1.6, alpha=8.0, gamma=0.9, beta=1.0),
    "structural": dict(theta=1.6, alpha=8.0, gamma=0.9, beta=1.0),
}
DEFAULT_SCHEDULE = "const:1e-10"


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _box(n):
    return -BOX_HALF_WIDTH * np.ones(n), BOX_HALF_WIDTH * np.ones(n)


def _l1_weights(m):
    # agent i (1-based) carries weight i / m^2
    return [(i + 1) / m ** 2 for i in range(m)]


def generate_example1(m=20, n=3, p=3, seed=0):
    """Coupled logistic regression with l1 terms and equality rows only.

    Per agent: objective ``log(1 + exp(a_i.x_i)) + (i/m^2) ||x_i||_1``,
    box ``[-5, 5]^n``, equality block ``A_i x_i`` with zero offset (so the
    zero vector is feasible and interior to every box).  ``a_i`` and
    ``A_i`` have standard normal entries.
    """
    rng = np.random.default_rng(seed)
    cone = ConeSpec(p, 0)
    weights = _l1_weights(m)
    agents = []
    for i in range(m):
        a = rng.standard_normal(n)
        A = rng.standard_normal((p, n))
        lower, upper = _box(n)
        agents.append(
            LocalProblem(
                smooth=LogisticLoss(a),
                l1_weight=weights[i],
                lower=lower,
                upper=upper,
                A=A,
                b=np.zeros(p),
                inequalities=(),
                cone=cone,
            )
        )
    return CoupledProblem(agents=tuple(agents), witness=np.zeros(m * n))


def generate_example2(m=20, n=3, p=3, q=1, seed=0):
    """Coupled constrained LASSO with one logistic inequality row.

    Per agent: objective ``0.5 ||C_i x_i - d_i||^2 + (i/m^2) ||x_i||_1``
    with ``C_i = I + R R^T`` (eigenvalues at least one, so the smooth part
    is strongly convex), box ``[-5, 5]^n``.  The coupled rows are
    ``sum A_i x_i = b`` and ``sum log(1+exp(a_i.x_i)) <= f`` where ``b``
    and ``f`` are built from a witness drawn uniformly inside the boxes,
    with a margin of one on the inequality; the witness is stored.
    """
    rng = np.random.default_rng(seed)
    cone = ConeSpec(p, q)
    weights = _l1_weights(m)
    agents = []
    xi_parts = []
    rows_a = []
    for i in range(m):
        R = rng.standard_normal((n, n)) / math.sqrt(n)
        C = np.eye(n) + R @ R.T
        d = rng.standard_normal(n)
        a = rng.standard_normal(n)
        A = rng.standard_normal((p, n))
        lower, upper = _box(n)
        xi = rng.uniform(lower, upper)
        xi_parts.append(xi)
        rows_a.append(a)
        agents.append(
            LocalProblem(
                smooth=QuadraticLoss(C, d),
                l1_weight=weights[i],
                lower=lower,
                upper=upper,
                A=A,
                b=np.zeros(p),  # placeholder, replaced below
                inequalities=tuple(LogisticConstraint(a) for _ in range(q)),
                cone=cone,
            )
        )
    witness = np.concatenate(xi_parts)
    b_total = np.sum(
        [agents[i].A @ xi_parts[i] for i in range(m)], axis=0
    )
    f_bound = sum(
        float(softplus(rows_a[i] @ xi_parts[i])) for i in range(m)
    ) + 1.0
    rebuilt = []
    for i, agent in enumerate(agents):
        # spread the offsets evenly so the coupled rows read
        # sum(A_i x_i - b_i) = 0 and sum(log1p(exp(a_i.x_i)) - f_i) <= 0
        rows = tuple(
            LogisticConstraint(rows_a[i], f_bound / m) for _ in range(q)
        )
        rebuilt.append(replace(agent, b=b_total / m, inequalities=rows))
    return CoupledProblem(agents=tuple(rebuilt), witness=witness)


def generate_structural(m=10, n=3, p=3, seed=0):
    """Strongly convex quadratics with affine-only coupled rows.

    Same quadratic construction as the constrained-LASSO family, but the
    single inequality row is affine, so every block of the optimality
    system is polyhedral-plus-strongly-convex and the iteration contracts
    linearly once near the solution.
    """
    rng = np.random.default_rng(seed)
    cone = ConeSpec(p, 1)
    weights = _l1_weights(m)
    agents = []
    xi_parts = []
    rows_c = []
    for i in range(m):
        R = rng.standard_normal((n, n)) / math.sqrt(n)
        C = np.eye(n) + R @ R.T
        d = rng.standard_normal(n)
        c = rng.standard_normal(n)
        A = rng.standard_normal((p, n))
        lower, upper = _box(n)
        xi = rng.uniform(lower, upper)
        xi_parts.append(xi)
        rows_c.append(c)
        agents.append(
            LocalProblem(
                smooth=QuadraticLoss(C, d),
                l1_weight=weights[i],
                lower=lower,
                upper=upper,
                A=A,
                b=np.zeros(p),
                inequalities=(AffineConstraint(c, 0.0),),
                cone=cone,
            )
        )
    witness = np.concatenate(xi_parts)
    b_total = np.sum([agents[i].A @ xi_parts[i] for i in range(m)], axis=0)
    e_total = sum(float(rows_c[i] @ xi_parts[i]) for i in range(m)) + 1.0
    rebuilt = [
        replace(
            agent,
            b=b_total / m,
            inequalities=(AffineConstraint(rows_c[i], e_total / m),),
        )
        for i, agent in enumerate(agents)
    ]
    return CoupledProblem(agents=tuple(rebuilt), witness=witness)


GENERATORS = {
    "example1": generate_example1,
    "example2": generate_example2,
    "structural": generate_structural,
}


def generate(kind, m, n, p, q, seed):
    if kind == "example1":
        return generate_example1(m=m, n=n, p=p, seed=seed)
    if kind == "example2":
        return generate_example2(m=m, n=n, p=p, q=q, seed=seed)
    if kind == "structural":
        return generate_structural(m=m, n=n, p=p, seed=seed)
    raise ValueError(f"unknown example kind {kind!r}")


def build_network(m, edges=None, seed=0, mixing_kind="scaled-metropolis", nu=2.0,
                  topology=None):
    """Seeded random connected network plus its mixing matrix."""
    if topology is None:
        topology = random_connected_topology(m, edges if edges else m, seed=seed)
    if mixing_kind == "laplacian":
        return topology, build_laplacian(topology)
    if mixing_kind == "scaled-metropolis":
        W = build_metropolis_weights(topology)
        return topology, build_scaled_mixing(W, nu, topology)
    raise ValueError(f"unknown mixing kind {mixing_kind!r}")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment run."""

    kind: str = "example2"
    m: int = 20
    n: int = 3
    p: int = 3
    q: int = 1
    seed: int = 0
    edges: int | None = None
    graph_file: str | None = None
    mixing_kind: str = "scaled-metropolis"
    nu: float = 2.0
    theta: float | None = None
    alpha: float | None = None
    gamma: float | None = None
    beta: float | None = None
    schedule: str = DEFAULT_SCHEDULE
    rounds: int = 1000
    tol: float = 0.0
    oracle_tol: float = 1e-9
    workers: int = 1
    out: str | None = None
    fejer: bool = False
    fejer_rounds: int = 3000
    keep_states: bool = False

    def __post_init__(self):
        if self.kind == "example1":
            self.q = 0
        elif self.kind in ("example2", "structural"):
            self.q = 1

    def resolved_params(self):
        base = DEFAULTS.get(self.kind, DEFAULTS["example2"]).copy()
        for name in ("theta", "alpha", "gamma", "beta"):
            val = getattr(self, name)
            if val is not None:
                base[name] = float(val)
        return base

    def make_params(self, schedule=None):
        vals = self.resolved_params()
        return AlgorithmParams.from_scalars(
            self.m,
            vals["theta"],
            vals["alpha"],
            vals["gamma"],
            vals["beta"],
            schedule if schedule is not None else self.schedule,
        )

    def text(self):
        vals = self.resolved_params()
        lines = ["run v1"]
        for key in ("kind", "m", "n", "p", "q", "seed", "mixing_kind"):
            lines.append(f"{key} {getattr(self, key)}")
        lines.append(f"edges {self.edges if self.edges is not None else self.m}")
        lines.append(f"nu {self.nu!r}")
        for key in ("theta", "alpha", "gamma", "beta"):
            lines.append(f"{key} {vals[key]!r}")
        lines.append(f"schedule {self.schedule}")
        lines.append(f"rounds {self.rounds}")
        lines.append(f"tol {self.tol!r}")
        lines.append(f"workers {self.workers}")
        return "\n".join(lines) + "\n"


def read_config(path):
    """Parse a run-configuration file written by ``ExperimentConfig.text``."""
    fields = {}
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#") or ln.startswith("run "):
                continue
            key, _, val = ln.partition(" ")
            fields[key] = val.strip()
    cfg = ExperimentConfig(kind=fields.get("kind", "example2"))
    for key in ("m", "n", "p", "q", "seed", "edges", "rounds", "workers"):
        if key in fields:
            setattr(cfg, key, int(fields[key]))
    for key in ("nu", "theta", "alpha", "gamma", "beta", "tol"):
        if key in fields:
            setattr(cfg, key, float(fields[key]))
    for key in ("mixing_kind", "schedule", "graph_file"):
        if key in fields:
            setattr(cfg, key, fields[key])
    return cfg


@dataclass
class ExperimentResult:
    status: int
    problem: object
    topology: object
    mixing: object
    solution: object
    run: object
    certificate: object
    messages: list = field(default_factory=list)


def build_fejer_reference(problem, mixing, config, solution, exact_rounds=None):
    """Reference point for the descent inequality: oracle primal-dual pair
    plus the auxiliary multipliers of a long exact run."""
    params = config.make_params(schedule="exact")
    ref_run = engine.run(
        problem,
        mixing,
        params,
        max_rounds=exact_rounds or config.fejer_rounds,
        residual_tol=0.0,
        workers=config.workers,
    )
    lam_star = np.stack([s.lam for s in ref_run.states])
    return FejerReference(
        x_star=solution.x_star,
        y_star=solution.y_star,
        lam_star=lam_star,
    )


def run_experiment(config):
    """Generate, solve centrally, run the engine, and report.

    Stages are tagged; the result's ``status`` is zero only when every
    stage finished, the invariant re-checks are clean, and (when a
    positive residual tolerance was requested) the run converged.
    """
    messages = []
    try:
        topology = (
            read_topology(config.graph_file) if config.graph_file else None
        )
        topology, mixing = build_network(
            config.m,
            edges=config.edges,
            seed=config.seed,
            mixing_kind=config.mixing_kind,
            nu=config.nu,
            topology=topology,
        )
    except Exception as exc:
        raise StageError("network", exc) from exc
    try:
        problem = generate(
            config.kind, config.m, config.n, config.p, config.q, config.seed
        )
    except Exception as exc:
        raise StageError("generate", exc) from exc
    try:
        cache = os.path.join(config.out, "oracle-cache") if config.out else None
        solution = oracle_mod.solve_reference(
            problem, tol=config.oracle_tol, cache_dir=cache
        )
    except Exception as exc:
        raise StageError("oracle", exc) from exc
    try:
        params = config.make_params()
        blocks = validate_params(
            params, mixing, dims=problem.dims, block=problem.cone.total
        )
        fejer = (
            build_fejer_reference(problem, mixing, config, solution)
            if config.fejer
            else None
        )
        obs = Observer(
            problem,
            mixing,
            blocks,
            oracle=solution,
            fejer=fejer,
            keep_states=config.keep_states,
        )
        run_result = engine.run(
            problem,
            mixing,
            params,
            max_rounds=config.rounds,
            residual_tol=config.tol,
            observer=obs,
            workers=config.workers,
        )
    except Exception as exc:
        raise StageError("engine", exc) from exc

    certificate = None
    if len(run_result.trace) >= 200:
        try:
            certificate = rate_analysis(
                run_result.trace,
                blocks=blocks,
                factor=obs.factorization.U,
            )
        except Exception as exc:
            messages.append(f"rate analysis skipped: {exc}")

    status = 0
    if not obs.invariants.ok():
        status = 2
        messages.extend(obs.invariants.violations[:10])
    if config.tol > 0.0 and not run_result.converged:
        status = max(status, 3)
        messages.append(
            f"residual tolerance {config.tol:g} not reached in "
            f"{run_result.rounds} rounds"
        )

    if config.out:
        try:
            os.makedirs(config.out, exist_ok=True)
            write_problem(problem, os.path.join(config.out, "problem.txt"))
            write_topology(topology, os.path.join(config.out, "topology.txt"))
            oracle_mod.store_solution(
                problem, solution, config.out, name="oracle-solution"
            )
            run_result.trace.to_csv(os.path.join(config.out, "trace.csv"))
            with open(os.path.join(config.out, "config.txt"), "w") as fh:
                fh.write(config.text())
            if certificate is not None:
                with open(os.path.join(config.out, "rates.txt"), "w") as fh:
                    fh.write(certificate.summary())
        except Exception as exc:
            raise StageError("write", exc) from exc

    return ExperimentResult(
        status=status,
        problem=problem,
        topology=topology,
        mixing=mixing,
        solution=solution,
        run=run_result,
        certificate=certificate,
        messages=messages,
    )

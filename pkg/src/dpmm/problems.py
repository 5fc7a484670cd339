"""Coupled constrained problems and their per-agent pieces.

Each of the ``m`` agents owns a composite objective (a smooth part plus a
weighted l1 term plus a box), an affine equality block ``A x - b`` and a
tuple of smooth convex scalar inequality rows.  The coupled constraint is
on the *sum* over agents of the stacked constraint maps: the equality rows
must vanish and the inequality rows must be nonpositive.

Problem files are plain text (see `write_problem` for the exact grammar);
numbers are emitted with full round-trip precision so a file is a
deterministic function of the problem.
"""

from dataclasses import dataclass, field

import numpy as np

from .functions import (
    AffineConstraint,
    ConeSpec,
    LinearLoss,
    LogisticConstraint,
    LogisticLoss,
    QuadraticLoss,
    softplus,
)

BOX_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LocalProblem:
    """One agent's private data.

    Attributes
    ----------
    smooth : object
        Smooth part of the objective (value/gradient oracle).
    l1_weight : float
        Weight of the l1 term; zero disables it.
    lower, upper : ndarray
        Box bounds; entries may be infinite.
    A : ndarray, shape (p, n)
        Equality block matrix.
    b : ndarray, shape (p,)
        Equality block offset.
    inequalities : tuple
        ``q`` smooth convex scalar rows.
    cone : ConeSpec
        Shared cone block sizes.
    """

    smooth: object
    l1_weight: float
    lower: np.ndarray
    upper: np.ndarray
    A: np.ndarray
    b: np.ndarray
    inequalities: tuple
    cone: ConeSpec

    def __post_init__(self):
        n = self.lower.shape[0]
        if self.upper.shape != (n,):
            raise ValueError("box bounds disagree on dimension")
        if np.any(self.lower > self.upper):
            raise ValueError("box is empty: lower > upper somewhere")
        if self.l1_weight < 0:
            raise ValueError("l1 weight must be nonnegative")
        if self.smooth.dim != n:
            raise ValueError("smooth part dimension mismatch")
        if self.A.shape != (self.cone.p, n):
            raise ValueError(
                f"equality block must be {self.cone.p}x{n}, got {self.A.shape}"
            )
        if self.b.shape != (self.cone.p,):
            raise ValueError("equality offset dimension mismatch")
        if len(self.inequalities) != self.cone.q:
            raise ValueError("inequality row count disagrees with the cone")
        for g in self.inequalities:
            if g.dim != n:
                raise ValueError("inequality row dimension mismatch")

    @property
    def dim(self):
        return self.lower.shape[0]

    def objective(self, x):
        """Smooth part plus the weighted l1 term (box not included)."""
        val = self.smooth.value(x)
        if self.l1_weight:
            val += self.l1_weight * float(np.abs(x).sum())
        return val

    def constraint_map(self, x):
        """Stacked ``(p+q)``-vector ``(A x - b, g_1(x), ..., g_q(x))``."""
        out = np.empty(self.cone.total)
        out[: self.cone.p] = self.A @ x - self.b
        for r, g in enumerate(self.inequalities):
            out[self.cone.p + r] = g.value(x)
        return out

    def constraint_jacobian(self, x):
        """``(p+q) x n`` Jacobian of the constraint map at ``x``."""
        J = np.empty((self.cone.total, self.dim))
        J[: self.cone.p] = self.A
        for r, g in enumerate(self.inequalities):
            J[self.cone.p + r] = g.gradient(x)
        return J

    def box_feasible(self, x, tol=BOX_TOLERANCE):
        return bool(
            np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol)
        )


@dataclass(frozen=True)
class CoupledProblem:
    """The full multi-agent problem: ``m`` local pieces sharing one cone."""

    agents: tuple
    witness: np.ndarray | None = None

    def __post_init__(self):
        if not self.agents:
            raise ValueError("a problem needs at least one agent")
        cones = {a.cone for a in self.agents}
        if len(cones) != 1:
            raise ValueError("all agents must share the same cone block sizes")
        if self.witness is not None and self.witness.shape != (self.total_dim,):
            raise ValueError("witness dimension mismatch")

    @property
    def cone(self):
        return self.agents[0].cone

    @property
    def m(self):
        return len(self.agents)

    @property
    def dims(self):
        return tuple(a.dim for a in self.agents)

    @property
    def offsets(self):
        offs = [0]
        for a in self.agents:
            offs.append(offs[-1] + a.dim)
        return tuple(offs)

    @property
    def total_dim(self):
        return sum(self.dims)

    def split(self, x):
        """Per-agent views into a stacked decision vector."""
        x = np.asarray(x)
        if x.shape != (self.total_dim,):
            raise ValueError(
                f"stacked vector must have length {self.total_dim}, got {x.shape}"
            )
        offs = self.offsets
        return [x[offs[i]: offs[i + 1]] for i in range(self.m)]

    def evaluate_objective(self, x):
        """Total objective; ``+inf`` when a box is violated beyond tolerance."""
        total = 0.0
        for xi, agent in zip(self.split(x), self.agents):
            if not agent.box_feasible(xi):
                return np.inf
            total += agent.objective(xi)
        return total

    def constraint_map(self, x):
        """Sum over agents of the stacked constraint maps."""
        out = np.zeros(self.cone.total)
        for xi, agent in zip(self.split(x), self.agents):
            out += agent.constraint_map(xi)
        return out

    def feasibility_violations(self, x):
        """Infinity norms of the equality and inequality residuals."""
        v = self.constraint_map(x)
        p = self.cone.p
        eq = float(np.abs(v[:p]).max()) if p else 0.0
        ineq = float(np.maximum(v[p:], 0.0).max()) if self.cone.q else 0.0
        return eq, ineq


# ---------------------------------------------------------------------------
# file grammar
#
#   problem v1
#   cone <p> <q>
#   agents <m>
#   agent <i>
#   dim <n>
#   smooth quadratic | logistic | linear
#     quadratic: lines "C <n*n row-major floats>" and "d <n floats>"
#     logistic:  line  "a <n floats>"
#     linear:    line  "q <n floats>"
#   l1 <weight>
#   lower <n floats>           (inf / -inf allowed)
#   upper <n floats>
#   A <p*n row-major floats>   (line present even when p = 0)
#   b <p floats>
#   ineq affine <n floats> <offset>     (q lines, in row order)
#   ineq logistic <n floats> <offset>
#   witness <total_dim floats>          (optional, once, after the agents)


def _fmt(x):
    return repr(float(x))


def _fmt_vec(v):
    return " ".join(_fmt(t) for t in np.asarray(v, dtype=float).ravel())


def problem_text(problem):
    """Canonical text form of a problem (also the cache-key payload)."""
    lines = ["problem v1"]
    cone = problem.cone
    lines.append(f"cone {cone.p} {cone.q}")
    lines.append(f"agents {problem.m}")
    for i, a in enumerate(problem.agents):
        lines.append(f"agent {i}")
        lines.append(f"dim {a.dim}")
        s = a.smooth
        if s.kind == "quadratic":
            lines.append("smooth quadratic")
            lines.append(f"C {_fmt_vec(s.C)}")
            lines.append(f"d {_fmt_vec(s.d)}")
        elif s.kind == "logistic":
            lines.append("smooth logistic")
            lines.append(f"a {_fmt_vec(s.a)}")
        elif s.kind == "linear":
            lines.append("smooth linear")
            lines.append(f"q {_fmt_vec(s.q)}")
        else:
            raise ValueError(f"smooth kind {s.kind!r} has no file form")
        lines.append(f"l1 {_fmt(a.l1_weight)}")
        lines.append(f"lower {_fmt_vec(a.lower)}")
        lines.append(f"upper {_fmt_vec(a.upper)}")
        lines.append(f"A {_fmt_vec(a.A)}" if a.A.size else "A")
        lines.append(f"b {_fmt_vec(a.b)}" if a.b.size else "b")
        for g in a.inequalities:
            if g.kind == "affine":
                lines.append(f"ineq affine {_fmt_vec(g.c)} {_fmt(g.offset)}")
            elif g.kind == "logistic":
                lines.append(f"ineq logistic {_fmt_vec(g.a)} {_fmt(g.offset)}")
            else:
                raise ValueError(f"inequality kind {g.kind!r} has no file form")
    if problem.witness is not None:
        lines.append(f"witness {_fmt_vec(problem.witness)}")
    return "\n".join(lines) + "\n"


def write_problem(problem, path):
    with open(path, "w") as fh:
        fh.write(problem_text(problem))


class _Lines:
    def __init__(self, text):
        self.lines = [
            ln.strip()
            for ln in text.splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")
        ]
        self.pos = 0

    def peek(self):
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def take(self, keyword=None):
        ln = self.peek()
        if ln is None:
            raise ValueError("unexpected end of problem file")
        self.pos += 1
        if keyword is not None and not ln.startswith(keyword):
            raise ValueError(f"expected {keyword!r}, got {ln!r}")
        return ln


def _floats(line, keyword, count):
    parts = line.split()
    if parts[0] != keyword:
        raise ValueError(f"expected {keyword!r}, got {line!r}")
    vals = [float(t) for t in parts[1:]]
    if len(vals) != count:
        raise ValueError(
            f"{keyword!r} expects {count} numbers, got {len(vals)}"
        )
    return np.array(vals)


def parse_problem(text):
    src = _Lines(text)
    header = src.take("problem")
    if header.split()[1] != "v1":
        raise ValueError(f"unsupported problem file version: {header!r}")
    p, q = (int(t) for t in src.take("cone").split()[1:])
    cone = ConeSpec(p, q)
    m = int(src.take("agents").split()[1])
    agents = []
    for i in range(m):
        idx = int(src.take("agent").split()[1])
        if idx != i:
            raise ValueError(f"agent blocks out of order: expected {i}, got {idx}")
        n = int(src.take("dim").split()[1])
        kind = src.take("smooth").split()[1]
        if kind == "quadratic":
            C = _floats(src.take("C"), "C", n * n).reshape(n, n)
            d = _floats(src.take("d"), "d", n)
            smooth = QuadraticLoss(C, d)
        elif kind == "logistic":
            smooth = LogisticLoss(_floats(src.take("a"), "a", n))
        elif kind == "linear":
            smooth = LinearLoss(_floats(src.take("q"), "q", n))
        else:
            raise ValueError(f"unknown smooth kind {kind!r}")
        weight = float(src.take("l1").split()[1])
        lower = _floats(src.take("lower"), "lower", n)
        upper = _floats(src.take("upper"), "upper", n)
        A = _floats(src.take("A"), "A", p * n).reshape(p, n)
        b = _floats(src.take("b"), "b", p)
        rows = []
        for _ in range(q):
            parts = src.take("ineq").split()
            if parts[1] == "affine":
                vals = [float(t) for t in parts[2:]]
                if len(vals) != n + 1:
                    raise ValueError("affine row expects n coefficients + offset")
                rows.append(AffineConstraint(np.array(vals[:n]), vals[n]))
            elif parts[1] == "logistic":
                vals = [float(t) for t in parts[2:]]
                if len(vals) != n + 1:
                    raise ValueError("logistic row expects n coefficients + offset")
                rows.append(LogisticConstraint(np.array(vals[:n]), vals[n]))
            else:
                raise ValueError(f"unknown inequality kind {parts[1]!r}")
        agents.append(
            LocalProblem(
                smooth=smooth,
                l1_weight=weight,
                lower=lower,
                upper=upper,
                A=A,
                b=b,
                inequalities=tuple(rows),
                cone=cone,
            )
        )
    witness = None
    nxt = src.peek()
    if nxt is not None and nxt.startswith("witness"):
        total = sum(a.dim for a in agents)
        witness = _floats(src.take("witness"), "witness", total)
    return CoupledProblem(agents=tuple(agents), witness=witness)


def read_problem(path):
    with open(path) as fh:
        return parse_problem(fh.read())

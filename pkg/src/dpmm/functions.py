"""Convex-analysis primitives shared by every solver in the package.

Houses the smooth objective oracles (quadratic, logistic, linear, sums),
the scalar constraint functions used in coupled inequality rows, the
closed-form proximal maps (soft-thresholding, box clamping, polar-cone
projection), and the coordinate-wise subdifferential interval of a
weighted l1 term plus a box indicator.  The interval is the common ground
between the inner solver's stopping rule and the KKT stationarity check.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConeSpec:
    """Block sizes of the coupled constraint cone.

    The first ``p`` rows are equalities (cone ``{0}``), the last ``q`` rows
    are inequalities (cone ``R_-``).  Multiplier estimates live in the polar
    cone ``R^p x R^q_+``.
    """

    p: int
    q: int

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("cone block sizes must be nonnegative")
        if self.p + self.q < 1:
            raise ValueError("cone must have at least one row")

    @property
    def total(self):
        return self.p + self.q


def project_polar_cone(v, cone):
    """Project onto ``R^p x R^q_+``: equality block kept, inequality block
    clamped at zero from below."""
    v = np.asarray(v, dtype=float)
    out = v.copy()
    if cone.q:
        np.maximum(out[..., cone.p:], 0.0, out=out[..., cone.p:])
    return out


def prox_l1(v, weight):
    """Soft-thresholding, the proximal map of ``weight * ||.||_1``.

    ``weight`` may be a scalar or a per-coordinate array.
    """
    if np.any(np.asarray(weight) < 0):
        raise ValueError(f"l1 weight must be nonnegative, got {weight}")
    v = np.asarray(v, dtype=float)
    if np.all(np.asarray(weight) == 0.0):
        return v.copy()
    return np.sign(v) * np.maximum(np.abs(v) - weight, 0.0)


def project_box(v, lower, upper):
    """Componentwise clamp of ``v`` into ``[lower, upper]``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ValueError("box is empty: lower > upper somewhere")
    return np.clip(v, lower, upper)


def l1_box_interval(x, weight, lower, upper):
    """Coordinate intervals ``[lo_j, hi_j]`` of the subdifferential of
    ``weight*|x_j| + indicator([lower_j, upper_j])`` at ``x``.

    At an interior coordinate the interval is ``{weight*sign(x_j)}`` when
    ``x_j != 0`` and ``[-weight, weight]`` at the kink; an active lower
    bound opens the interval to ``-inf`` (normal-cone ray) and an active
    upper bound opens it to ``+inf``.  Activity and the kink are exact
    floating-point comparisons: clamping and soft-thresholding produce
    bound values and zeros exactly.
    """
    x = np.asarray(x, dtype=float)
    sign = np.sign(x)
    lo = np.where(x == 0.0, -weight, weight * sign)
    hi = np.where(x == 0.0, weight, weight * sign)
    at_lower = x == lower
    at_upper = x == upper
    lo = np.where(at_lower, -np.inf, lo)
    hi = np.where(at_upper, np.inf, hi)
    return lo, hi


def interval_gap(g, lo, hi):
    """Componentwise distance from ``g`` to the interval ``[lo, hi]``."""
    return np.maximum(np.maximum(lo - g, g - hi), 0.0)


def select_subgradient(g, lo, hi):
    """Projection of ``g`` onto ``[lo, hi]``, the nearest valid subgradient."""
    return np.clip(g, lo, hi)


def softplus(t):
    """``log(1 + exp(t))`` evaluated stably for large ``|t|``."""
    return np.logaddexp(0.0, t)


def sigmoid(t):
    out = np.empty_like(np.asarray(t, dtype=float))
    t = np.asarray(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _box_linear_max(c, lower, upper):
    # max over the box of c.x; +inf as soon as an unbounded direction pays
    c = np.asarray(c, dtype=float)
    hi = np.where(c >= 0, upper, lower)
    return float(np.sum(c * hi)) if np.all(np.isfinite(c * hi)) else np.inf


# ---------------------------------------------------------------------------
# smooth objective parts


class QuadraticLoss:
    """``0.5 * ||C x - d||^2`` with exact curvature hints."""

    kind = "quadratic"

    def __init__(self, C, d):
        self.C = np.asarray(C, dtype=float)
        self.d = np.asarray(d, dtype=float)
        if self.C.ndim != 2 or self.C.shape[0] != self.d.shape[0]:
            raise ValueError("shape mismatch between C and d")
        sv = np.linalg.svd(self.C, compute_uv=False)
        self.lipschitz_hint = float(sv[0] ** 2) if sv.size else 0.0
        smin = float(sv[-1]) if sv.size and self.C.shape[0] >= self.C.shape[1] else 0.0
        self.strong_convexity_hint = smin ** 2

    @property
    def dim(self):
        return self.C.shape[1]

    def value(self, x):
        r = self.C @ x - self.d
        return 0.5 * float(r @ r)

    def gradient(self, x):
        return self.C.T @ (self.C @ x - self.d)


class LogisticLoss:
    """``log(1 + exp(a.x))``, the single-sample logistic loss."""

    kind = "logistic"

    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)
        self.lipschitz_hint = 0.25 * float(self.a @ self.a)
        self.strong_convexity_hint = 0.0

    @property
    def dim(self):
        return self.a.shape[0]

    def value(self, x):
        return float(softplus(self.a @ x))

    def gradient(self, x):
        return float(sigmoid(self.a @ x)) * self.a


class LinearLoss:
    """``q.x``."""

    kind = "linear"

    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)
        self.lipschitz_hint = 0.0
        self.strong_convexity_hint = 0.0

    @property
    def dim(self):
        return self.q.shape[0]

    def value(self, x):
        return float(self.q @ x)

    def gradient(self, x):
        return self.q.copy()


class SumLoss:
    """Sum of smooth parts sharing one domain."""

    kind = "sum"

    def __init__(self, parts):
        self.parts = tuple(parts)
        if not self.parts:
            raise ValueError("empty sum")
        dims = {p.dim for p in self.parts}
        if len(dims) != 1:
            raise ValueError("summands disagree on dimension")
        self.lipschitz_hint = float(sum(p.lipschitz_hint for p in self.parts))
        self.strong_convexity_hint = float(
            sum(p.strong_convexity_hint for p in self.parts)
        )

    @property
    def dim(self):
        return self.parts[0].dim

    def value(self, x):
        return float(sum(p.value(x) for p in self.parts))

    def gradient(self, x):
        g = self.parts[0].gradient(x)
        for p in self.parts[1:]:
            g = g + p.gradient(x)
        return g


# ---------------------------------------------------------------------------
# scalar constraint functions (rows of the coupled inequality block)


class AffineConstraint:
    """Row ``c.x - offset``."""

    kind = "affine"

    def __init__(self, c, offset):
        self.c = np.asarray(c, dtype=float)
        self.offset = float(offset)

    @property
    def dim(self):
        return self.c.shape[0]

    def value(self, x):
        return float(self.c @ x) - self.offset

    def gradient(self, x):
        return self.c.copy()

    def gradient_norm_bound(self, lower, upper):
        return float(np.linalg.norm(self.c))

    def curvature_bound(self, lower, upper):
        return 0.0

    def max_value(self, lower, upper):
        return _box_linear_max(self.c, lower, upper) - self.offset


class LogisticConstraint:
    """Row ``log(1 + exp(a.x)) - offset``."""

    kind = "logistic"

    def __init__(self, a, offset=0.0):
        self.a = np.asarray(a, dtype=float)
        self.offset = float(offset)

    @property
    def dim(self):
        return self.a.shape[0]

    def value(self, x):
        return float(softplus(self.a @ x)) - self.offset

    def gradient(self, x):
        return float(sigmoid(self.a @ x)) * self.a

    def gradient_norm_bound(self, lower, upper):
        return float(np.linalg.norm(self.a))

    def curvature_bound(self, lower, upper):
        return 0.25 * float(self.a @ self.a)

    def max_value(self, lower, upper):
        t = _box_linear_max(self.a, lower, upper)
        return (float(softplus(t)) if np.isfinite(t) else np.inf) - self.offset


def check_gradient(fn, x0, rel_tol=1e-5, step=1e-6):
    """Central-difference check of ``fn.gradient`` against ``fn.value``.

    Returns the worst relative error over the coordinates of ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    g = np.asarray(fn.gradient(x0), dtype=float)
    num = np.empty_like(g)
    for j in range(x0.size):
        e = np.zeros_like(x0)
        h = step * max(1.0, abs(x0[j]))
        e[j] = h
        num[j] = (fn.value(x0 + e) - fn.value(x0 - e)) / (2 * h)
    scale = max(1.0, float(np.abs(g).max()))
    err = float(np.abs(num - g).max()) / scale
    if err > rel_tol:
        raise AssertionError(
            f"gradient disagrees with finite differences: {err:.3e} > {rel_tol:.1e}"
        )
    return err

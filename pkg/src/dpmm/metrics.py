"""Block forms of the prediction-correction metric matrices.

The analysis of the round iteration lives in the stacked variable
``xi = (x, Y, Z)`` with block matrices

    Q = [[Ua^-1, 0,     0       ],     M = [[Th, 0, 0        ],
         [0,     Ga^-1, -Ub^T   ],          [0,  I, -Ga Ub^T ],
         [0,     0,     (1/b) I ]]          [0,  0,  I       ]]

    H = Q M^-1 = diag(Ua^-1 Th^-1, Ga^-1, (1/b) I)
    D = Q^T + Q - M^T H M
      = diag((2I - Th) Ua^-1, Ga^-1, (1/b) I - Ub Ga Ub^T)

where ``Th``/``Ua``/``Ga`` are the per-agent relaxation/proximal/dual-step
diagonals, ``b`` the consensus step, and ``Ub = U (x) I_{p+q}`` a full
row-rank factor of the mixing matrix (``L = U^T U``).  Agents never form
these matrices: every quantity the engine needs reduces to per-block
weighted sums plus Laplacian quadratic forms of the exchanged multiplier
predictions (the Z rows collapse through ``U^T U = L``).  Dense versions
exist solely for the observer's cross-checks and rate constants.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricBlocks:
    """Validated parameter diagonals plus precomputed block weights.

    ``wx_h``/``wx_d`` are the per-coordinate x-block weights of H and D
    (``1/(alpha_i theta_i)`` and ``(2 - theta_i)/alpha_i``), ``wy`` the
    per-agent Y-block weight ``1/gamma_i`` shared by H and D.
    """

    theta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    beta: float
    dims: tuple
    block: int
    lambda_max: float
    wx_h: np.ndarray
    wx_d: np.ndarray
    wy: np.ndarray

    @classmethod
    def build(cls, theta, alpha, gamma, beta, dims, block, lambda_max):
        theta = np.asarray(theta, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        wx_h = np.repeat(1.0 / (alpha * theta), dims)
        wx_d = np.repeat((2.0 - theta) / alpha, dims)
        return cls(
            theta=theta,
            alpha=alpha,
            gamma=gamma,
            beta=float(beta),
            dims=tuple(int(d) for d in dims),
            block=int(block),
            lambda_max=float(lambda_max),
            wx_h=wx_h,
            wx_d=wx_d,
            wy=1.0 / gamma,
        )

    @property
    def m(self):
        return self.theta.shape[0]

    @property
    def total_x(self):
        return int(sum(self.dims))

    # -- block quadratic forms -------------------------------------------

    def x_norm_sq_h(self, dx):
        return float(self.wx_h @ (dx * dx))

    def x_norm_sq_d(self, dx):
        return float(self.wx_d @ (dx * dx))

    def y_norm_sq(self, dY):
        """Shared H/D Y-block form: sum_i ||dy_i||^2 / gamma_i."""
        return float(self.wy @ np.einsum("ij,ij->i", dY, dY))

    def laplacian_quad(self, L, Yhat):
        """``trace(Yhat^T L Yhat)`` — the consensus quadratic form."""
        return float(np.tensordot(Yhat, L @ Yhat))

    def z_norm_sq_h_from_yhat(self, L, Yhat):
        """H-norm of the Z step ``Z - Z_hat = -beta U Yhat`` without U."""
        return self.beta * self.laplacian_quad(L, Yhat)

    def z_norm_sq_d_from_yhat(self, L, Yhat):
        """D-norm of the Z step: ``beta Y^T L Y - beta^2 Y^T L Ga L Y``."""
        W = L @ Yhat
        return self.beta * float(np.tensordot(Yhat, W)) - self.beta ** 2 * float(
            np.tensordot(W, self.gamma[:, None] * W)
        )


def first_order_residual_sq(blocks, L, x_diff, v, Y_diff, Yhat):
    """Squared stacked residual ``||H (xi^k - xi^{k+1}) + V^k||^2``.

    The x block is ``Ua^-1 Th^-1 (x^k - x^{k+1}) + v^k``, the Y block
    ``Ga^-1 (Y^k - Y^{k+1})``, and the Z block collapses to the Laplacian
    quadratic form of the multiplier predictions.
    """
    xr = blocks.wx_h * x_diff + v
    yr = blocks.wy[:, None] * Y_diff
    return (
        float(xr @ xr)
        + float(np.tensordot(yr, yr))
        + blocks.laplacian_quad(L, Yhat)
    )


def successive_diff_h(blocks, L, x_diff, Y_diff, Yhat):
    """``||xi^k - xi^{k+1}||_H^2`` from the round transition."""
    return (
        blocks.x_norm_sq_h(x_diff)
        + blocks.y_norm_sq(Y_diff)
        + blocks.z_norm_sq_h_from_yhat(L, Yhat)
    )


# ---------------------------------------------------------------------------
# dense constructions (observer cross-checks and rate constants only)


def mixing_factor(L, rel_tol=1e-9):
    """Full row-rank ``U`` with ``U^T U = L`` from the eigendecomposition.

    Keeps the eigenpairs above ``rel_tol`` times the largest eigenvalue;
    for a connected graph that is exactly ``m - 1`` rows.
    """
    L = np.asarray(L, dtype=float)
    if L.shape[0] == 1 or not L.any():
        return np.zeros((0, L.shape[0]))
    vals, vecs = np.linalg.eigh(L)
    cut = rel_tol * max(vals[-1], 1.0)
    keep = vals > cut
    return (np.sqrt(vals[keep])[:, None]) * vecs[:, keep].T


def _expand(U, block):
    return np.kron(U, np.eye(block))


def dense_metrics(blocks, U):
    """Dense ``Q, M, H, D`` for a given mixing factor ``U``.

    Returns a dict with the four matrices; total dimension is
    ``n + m(p+q) + r(p+q)`` with ``r`` the rank of the mixing matrix.
    """
    n = blocks.total_x
    m, pq = blocks.m, blocks.block
    r = U.shape[0]
    ny, nz = m * pq, r * pq
    N = n + ny + nz
    Ub = _expand(U, pq)

    theta_x = np.repeat(blocks.theta, blocks.dims)
    inv_alpha_x = np.repeat(1.0 / blocks.alpha, blocks.dims)
    gamma_y = np.repeat(blocks.gamma, pq)

    Q = np.zeros((N, N))
    Q[:n, :n] = np.diag(inv_alpha_x)
    Q[n: n + ny, n: n + ny] = np.diag(1.0 / gamma_y)
    Q[n: n + ny, n + ny:] = -Ub.T
    Q[n + ny:, n + ny:] = np.eye(nz) / blocks.beta

    M = np.zeros((N, N))
    M[:n, :n] = np.diag(theta_x)
    M[n: n + ny, n: n + ny] = np.eye(ny)
    M[n: n + ny, n + ny:] = -(gamma_y[:, None] * Ub.T)
    M[n + ny:, n + ny:] = np.eye(nz)

    H = Q @ np.linalg.inv(M)
    D = Q.T + Q - M.T @ H @ M
    return {"Q": Q, "M": M, "H": H, "D": D}


def dense_metric_constants(blocks, U):
    """Spectral constants of the dense metric matrices.

    ``c1 = sqrt(lmax(Q^T Q)/lmin(D))``, ``c2 = sqrt(lmax(H))``,
    ``c3 = sqrt(lmin(D))``, ``c4 = sqrt(lmax(M^T H M))/sqrt(lmin(H))`` and
    ``omega = 1 + c2 c4 / c3``.
    """
    mats = dense_metrics(blocks, U)
    Q, M, H, D = mats["Q"], mats["M"], mats["H"], mats["D"]
    h_eigs = np.linalg.eigvalsh(0.5 * (H + H.T))
    d_eigs = np.linalg.eigvalsh(0.5 * (D + D.T))
    qq = np.linalg.eigvalsh(Q.T @ Q)
    mhm = np.linalg.eigvalsh(M.T @ H @ M)
    c1 = float(np.sqrt(qq[-1] / d_eigs[0]))
    c2 = float(np.sqrt(h_eigs[-1]))
    c3 = float(np.sqrt(d_eigs[0]))
    c4 = float(np.sqrt(mhm[-1]) / np.sqrt(h_eigs[0]))
    return {
        "c1": c1,
        "c2": c2,
        "c3": c3,
        "c4": c4,
        "omega": 1.0 + c2 * c4 / c3,
        "lambda_min_H": float(h_eigs[0]),
        "lambda_min_D": float(d_eigs[0]),
    }

"""Undirected communication networks and the mixing matrices built on them.

A network of ``m`` agents is an undirected connected graph.  Consensus
between neighbors is encoded by a symmetric positive semidefinite mixing
matrix ``L`` whose rows sum to zero and whose null space is exactly the
consensus subspace ``span{1}``.  Two constructions are provided:

* the graph Laplacian ``L = D - W`` (degree matrix minus adjacency),
* the scaled matrix ``L = (I - W) / nu`` for a symmetric doubly stochastic
  weight matrix ``W`` (e.g. Metropolis-Hastings weights) and ``nu > 0``.

Topology files are plain text: comment lines start with ``#``, the first
data line is the node count ``m``, and every following line is one edge
``i j`` with 0-based node ids.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GraphError(ValueError):
    """Malformed topology or weight matrix."""


class DisconnectedGraphError(GraphError):
    """The graph is not connected."""


@dataclass(frozen=True)
class NetworkTopology:
    """Simple undirected graph on nodes ``0 .. node_count-1``.

    Edges are stored as a frozenset of ordered pairs ``(i, j)`` with
    ``i < j``; self-loops and duplicates are rejected at construction.
    """

    node_count: int
    edges: frozenset

    def __post_init__(self):
        if self.node_count < 1:
            raise GraphError("node_count must be a positive integer")
        for e in self.edges:
            if len(e) != 2:
                raise GraphError(f"edge {e!r} is not a pair")
            i, j = e
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not (0 <= i < j < self.node_count):
                raise GraphError(f"edge {e!r} out of range or not ordered")

    @classmethod
    def from_edges(cls, node_count, edges):
        """Build a topology, canonicalizing each pair to ``(min, max)``."""
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            canon.add((min(i, j), max(i, j)))
        return cls(node_count=int(node_count), edges=frozenset(canon))

    @cached_property
    def neighbors(self):
        """Tuple of sorted neighbor lists, one per node."""
        nbrs = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(n)) for n in nbrs)

    @cached_property
    def degrees(self):
        return np.array([len(n) for n in self.neighbors])

    @cached_property
    def is_connected(self):
        """Breadth-first reachability of every node from node 0."""
        seen = np.zeros(self.node_count, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = []
            for i in frontier:
                for j in self.neighbors[i]:
                    if not seen[j]:
                        seen[j] = True
                        nxt.append(j)
            frontier = nxt
        return bool(seen.all())

    def require_connected(self):
        if not self.is_connected:
            raise DisconnectedGraphError(
                f"graph with {self.node_count} nodes and {len(self.edges)} "
                "edges is not connected"
            )

    def adjacency(self):
        A = np.zeros((self.node_count, self.node_count))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A


def path_topology(m):
    return NetworkTopology.from_edges(m, [(i, i + 1) for i in range(m - 1)])


def cycle_topology(m):
    edges = [(i, i + 1) for i in range(m - 1)] + [(0, m - 1)]
    return NetworkTopology.from_edges(m, edges)


def star_topology(m):
    return NetworkTopology.from_edges(m, [(0, i) for i in range(1, m)])


def complete_topology(m):
    return NetworkTopology.from_edges(
        m, [(i, j) for i in range(m) for j in range(i + 1, m)]
    )


def random_connected_topology(m, edge_count=None, seed=0):
    """Seeded random connected graph with exactly ``edge_count`` edges.

    A random spanning tree is grown first (each new node attaches to a
    uniformly chosen existing node), then extra edges are sampled uniformly
    from the remaining non-edges.

    Parameters
    ----------
    m : int
        Number of nodes.
    edge_count : int, optional
        Total number of edges; defaults to ``m`` (tree plus one chord).
    seed : int, optional
        Seed for the generator; same seed gives the same graph.
    """
    if edge_count is None:
        edge_count = m
    max_edges = m * (m - 1) // 2
    if m > 1 and edge_count < m - 1:
        raise GraphError(f"{edge_count} edges cannot connect {m} nodes")
    if edge_count > max_edges:
        raise GraphError(f"{edge_count} edges exceed the {max_edges} possible")
    rng = np.random.default_rng(seed)
    edges = set()
    order = rng.permutation(m)
    for t in range(1, m):
        attach = order[rng.integers(0, t)]
        i, j = int(order[t]), int(attach)
        edges.add((min(i, j), max(i, j)))
    pool = [
        (i, j)
        for i in range(m)
        for j in range(i + 1, m)
        if (i, j) not in edges
    ]
    extra = edge_count - len(edges)
    if extra > 0:
        picks = rng.choice(len(pool), size=extra, replace=False)
        for idx in sorted(int(t) for t in picks):
            edges.add(pool[idx])
    topo = NetworkTopology(m, frozenset(edges))
    topo.require_connected()
    return topo


def write_topology(topology, path):
    lines = [f"{topology.node_count}"]
    for i, j in sorted(topology.edges):
        lines.append(f"{i} {j}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_topology(path):
    with open(path) as fh:
        raw = [ln.strip() for ln in fh]
    data = [ln for ln in raw if ln and not ln.startswith("#")]
    if not data:
        raise GraphError(f"{path}: empty topology file")
    m = int(data[0])
    edges = []
    for ln in data[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise GraphError(f"{path}: bad edge line {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return NetworkTopology.from_edges(m, edges)


@dataclass(frozen=True)
class MixingMatrix:
    """Validated consensus matrix ``L`` and its spectral data.

    Attributes
    ----------
    kind : str
        ``"laplacian"`` or ``"scaled-metropolis"``.
    matrix : ndarray
        The dense symmetric PSD matrix.
    scaling : float or None
        The scaling ``nu`` (scaled-metropolis only).
    spectral_bound : float
        An a-priori upper bound on the largest eigenvalue.
    exact_lambda_max : float
        Largest eigenvalue, computed by a full symmetric eigensolve.
    fiedler_value : float
        Second-smallest eigenvalue; positive iff the graph is connected.
    """

    kind: str
    matrix: np.ndarray
    scaling: float | None
    spectral_bound: float
    exact_lambda_max: float
    fiedler_value: float

    @property
    def node_count(self):
        return self.matrix.shape[0]

    def require_consensus_capable(self):
        """Reject matrices whose null space is larger than span{1}."""
        if self.node_count > 1 and self.fiedler_value <= 1e-12:
            raise GraphError(
                "mixing matrix cannot drive consensus: second-smallest "
                f"eigenvalue {self.fiedler_value:.3e} is not positive"
            )


def _validate_mixing_entries(L, topology, tol=1e-12):
    if not np.allclose(L, L.T, atol=tol, rtol=0.0):
        raise GraphError("mixing matrix is not symmetric")
    rows = np.abs(L.sum(axis=1)).max() if L.size else 0.0
    if rows > tol:
        raise GraphError(f"mixing matrix rows do not sum to zero ({rows:.3e})")
    if topology is not None:
        allowed = topology.adjacency() + np.eye(topology.node_count)
        if np.any((np.abs(L) > tol) & (allowed == 0)):
            raise GraphError("mixing matrix has entries outside the graph edges")


def _spectrum(L):
    if L.shape[0] == 1:
        return np.zeros(1)
    return np.linalg.eigvalsh(L)


def _make_mixing(kind, L, topology, scaling, spectral_bound):
    _validate_mixing_entries(L, topology)
    eigs = _spectrum(L)
    if eigs[0] < -1e-10:
        raise GraphError(f"mixing matrix is not PSD (min eigenvalue {eigs[0]:.3e})")
    lam_max = float(eigs[-1])
    fiedler = float(eigs[1]) if L.shape[0] > 1 else 0.0
    return MixingMatrix(
        kind=kind,
        matrix=L,
        scaling=scaling,
        spectral_bound=float(spectral_bound),
        exact_lambda_max=lam_max,
        fiedler_value=fiedler,
    )


def build_metropolis_weights(topology, rule="max-degree"):
    """Symmetric doubly stochastic weights compatible with the graph.

    With ``rule="max-degree"`` (Metropolis-Hastings) the off-diagonal
    weights are ``W_ij = 1 / (max(deg(i), deg(j)) + 1)`` on edges, which is
    symmetric on every graph.  With ``rule="local-degree"`` the weights are
    ``W_ij = 1 / (deg(i) + 1)``; that variant is only valid on graphs where
    it comes out symmetric (both endpoints of every edge have equal degree)
    and is rejected otherwise.  In both cases the diagonal absorbs the
    remaining mass so every row sums to one.

    Parameters
    ----------
    topology : NetworkTopology
        Connected graph.
    rule : str, optional
        ``"max-degree"`` (default) or ``"local-degree"``.

    Returns
    -------
    W : ndarray
        Symmetric doubly stochastic matrix with ``W_ij > 0`` only on edges
        and the diagonal.
    """
    topology.require_connected()
    m = topology.node_count
    deg = topology.degrees
    W = np.zeros((m, m))
    for i, j in topology.edges:
        if rule == "max-degree":
            w = 1.0 / (max(deg[i], deg[j]) + 1.0)
        elif rule == "local-degree":
            w = 1.0 / (deg[i] + 1.0)
        else:
            raise ValueError(f"unknown weight rule {rule!r}")
        W[i, j] = w
        W[j, i] = 1.0 / (deg[j] + 1.0) if rule == "local-degree" else w
    if not np.allclose(W, W.T, atol=1e-12, rtol=0.0):
        raise GraphError(
            "local-degree weights are asymmetric on this graph; use the "
            "max-degree (Metropolis-Hastings) rule instead"
        )
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    if np.any(np.diag(W) < -1e-12):
        raise GraphError("weight construction produced a negative diagonal")
    return W


def build_laplacian(topology):
    """Graph Laplacian ``L = D - W`` as a validated MixingMatrix."""
    topology.require_connected()
    L = np.diag(topology.degrees.astype(float)) - topology.adjacency()
    bound = 2.0 * float(topology.degrees.max()) if topology.node_count > 1 else 0.0
    return _make_mixing("laplacian", L, topology, None, bound)


def build_scaled_mixing(W, nu, topology=None):
    """Mixing matrix ``L = (I - W) / nu`` from doubly stochastic weights.

    The eigenvalues of ``W`` lie in ``[-1, 1]``, so ``2 / nu`` is an upper
    bound on the largest eigenvalue of ``L`` that is available without any
    spectral computation; the exact value is stored alongside it.

    Parameters
    ----------
    W : ndarray
        Symmetric doubly stochastic matrix (tolerance 1e-10).
    nu : float
        Positive scaling.
    topology : NetworkTopology, optional
        When given, the sparsity pattern of ``W`` is checked against it.
    """
    if nu <= 0:
        raise GraphError(f"scaling nu must be positive, got {nu}")
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise GraphError("weight matrix must be square")
    if not np.allclose(W, W.T, atol=1e-10, rtol=0.0):
        raise GraphError("weight matrix is not symmetric")
    ones = np.ones(W.shape[0])
    if np.abs(W @ ones - ones).max() > 1e-10:
        raise GraphError("weight matrix rows do not sum to one")
    L = (np.eye(W.shape[0]) - W) / nu
    L = 0.5 * (L + L.T)
    return _make_mixing("scaled-metropolis", L, topology, float(nu), 2.0 / nu)


def exact_lambda_max(mixing):
    """Largest eigenvalue of a mixing matrix (or raw symmetric array)."""
    if isinstance(mixing, MixingMatrix):
        return mixing.exact_lambda_max
    eigs = _spectrum(np.asarray(mixing, dtype=float))
    return float(eigs[-1])


def lambda_max_power_iteration(L, tol=1e-12, max_iter=10_000):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Deterministic start (normalized ones plus a small ramp to avoid
    orthogonality traps).  Intended for sizes where a full eigensolve is
    too expensive; at desk scale `exact_lambda_max` is preferred.
    """
    L = np.asarray(L, dtype=float)
    m = L.shape[0]
    if m == 1:
        return float(L[0, 0])
    v = np.ones(m) + np.linspace(0.0, 0.5, m)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = L @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_new = w / norm
        lam_new = float(v_new @ (L @ v_new))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam, v = lam_new, v_new
    return lam

"""Undirected weighted communication graph and its Laplacian."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    """Raised when an edge list does not describe a valid undirected graph."""


@dataclass(frozen=True)
class NetworkGraph:
    """Fixed undirected graph over ``n_agents`` nodes.

    ``edges`` holds each undirected edge once as ``(i, j, weight)`` with
    ``i < j``. ``adjacency`` and ``laplacian`` are dense and read-only.
    """

    n_agents: int
    edges: tuple[tuple[int, int, float], ...]
    adjacency: np.ndarray = field(repr=False)
    laplacian: np.ndarray = field(repr=False)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]


def build_graph(n: int, edges) -> NetworkGraph:
    """Validate an edge list and assemble adjacency and Laplacian.

    Raises GraphError naming the offending edge for self-loops, indices out
    of range, nonpositive weights, or duplicates (in either orientation).
    """
    if int(n) != n or n < 1:
        raise GraphError(f"n_agents must be a positive integer, got {n!r}")
    n = int(n)
    adj = np.zeros((n, n))
    seen: set[tuple[int, int]] = set()
    canon = []
    for edge in edges:
        try:
            i, j, w = edge
        except (TypeError, ValueError):
            raise GraphError(f"edge {edge!r} is not an (i, j, weight) triple") from None
        if int(i) != i or int(j) != j:
            raise GraphError(f"edge {edge!r}: node indices must be integers")
        i, j, w = int(i), int(j), float(w)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge {edge!r}: index out of range for n={n}")
        if i == j:
            raise GraphError(f"edge {edge!r}: self-loop")
        if not np.isfinite(w) or w <= 0:
            raise GraphError(f"edge {edge!r}: weight must be positive")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"edge {edge!r}: duplicate edge {key}")
        seen.add(key)
        adj[i, j] = adj[j, i] = w
        canon.append((key[0], key[1], w))
    lap = np.diag(adj.sum(axis=1)) - adj
    adj.setflags(write=False)
    lap.setflags(write=False)
    return NetworkGraph(n, tuple(sorted(canon)), adj, lap)


def line_graph(n: int, weight: float = 1.0) -> NetworkGraph:
    return build_graph(n, [(i, i + 1, weight) for i in range(n - 1)])


def is_connected(g: NetworkGraph) -> bool:
    """Breadth-first reachability from node 0."""
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in g.neighbors(i):
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == g.n_agents


def laplacian_quadratic(g: NetworkGraph, v) -> np.ndarray:
    """Apply ``L ⊗ I_d`` to stacked per-agent blocks.

    ``v`` may be shaped ``(n_agents, d)`` or flat with length divisible by
    ``n_agents``; the result has the same shape as the input. Block ``i`` of
    the result is ``sum_j a_ij (v_i - v_j)``.
    """
    v = np.asarray(v, dtype=float)
    n = g.n_agents
    if v.ndim == 1:
        if v.size % n:
            raise GraphError(f"vector of length {v.size} is not {n} equal blocks")
        return (g.laplacian @ v.reshape(n, -1)).reshape(v.shape)
    if v.ndim == 2 and v.shape[0] == n:
        return g.laplacian @ v
    raise GraphError(f"expected {n} blocks, got array of shape {v.shape}")


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    a = np.array(a, dtype=float)
    m = a.shape[0]
    scale = max(np.abs(a).max(), 1.0)
    mask = ~np.eye(m, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[mask] ** 2))
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                if abs(a[p, q]) <= 1e-15 * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t**2 + 1.0)
                s = t * c
                rot = np.eye(m)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def algebraic_connectivity(g: NetworkGraph) -> float:
    """Second-smallest Laplacian eigenvalue (positive iff connected)."""
    if g.n_agents < 2:
        return 0.0
    return float(jacobi_eigenvalues(g.laplacian)[1])

"""Channel-gain graph construction and spectral partitioning.

Vertices are the K broadcast pairs (located at their transmitters) followed
by the M uplink users. Edge weights take the stronger direction of the two
directed large-scale gains, so blocked links cannot hide behind a lucky
shadowing draw on one side. Partitioning runs the normalized-Laplacian
spectral pipeline: symmetric Laplacian, eigenvectors of the smallest
eigenvalues via cyclic Jacobi rotations, row normalization, then k-means
with k-means++ seeding and multiple restarts.

Each cluster's candidate RB group is the full RB set minus the dedicated
RBs of the uplink users inside that cluster, which is what keeps in-cluster
transmissions orthogonal to in-cluster uplinks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .channel import LargeScaleTable
from .scenario import VehicleTopology


@dataclass
class SimilarityGraph:
    weights: np.ndarray   # symmetric, nonnegative, zero diagonal
    num_pairs: int
    num_ivues: int

    @property
    def num_vertices(self) -> int:
        return self.weights.shape[0]


@dataclass
class ClusterAssignment:
    clusters: list[list[int]]        # vertex ids per cluster
    candidate_rbs: list[list[int]]   # usable RBs per cluster
    num_pairs: int
    num_ivues: int

    def cluster_of(self, vertex: int) -> int:
        for c, members in enumerate(self.clusters):
            if vertex in members:
                return c
        raise KeyError(f"vertex {vertex} not in any cluster")

    def pair_members(self, c: int) -> list[int]:
        return [v for v in self.clusters[c] if v < self.num_pairs]


def build_graph(topology: VehicleTopology, table: LargeScaleTable) -> SimilarityGraph:
    """Worst-case-direction similarity graph from the period's gains."""
    g = table.vertex_gain
    w = np.maximum(g, g.T)
    np.fill_diagonal(w, 0.0)
    return SimilarityGraph(w, topology.num_pairs, topology.num_ivues)


def jacobi_eigen(matrix: np.ndarray, off_tol: float = 1e-10,
                 max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns). Sweeps stop
    once the off-diagonal Frobenius norm falls below ``off_tol``.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be symmetric")
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    for _ in range(max_sweeps):
        off_sq = np.sum(a ** 2) - np.sum(np.diag(a) ** 2)
        if off_sq <= off_tol * off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < off_tol / (n * n):
                    continue
                # Stable rotation angle choice.
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    order = np.argsort(np.diag(a), kind="stable")
    return np.diag(a)[order].copy(), v[:, order].copy()


def _kmeans_once(points: np.ndarray, k: int, rng: np.random.Generator,
                 iters: int = 100) -> tuple[np.ndarray, float]:
    n = points.shape[0]
    # k-means++ seeding.
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(0, n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = points[rng.integers(0, n)]
        else:
            centers[c] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))

    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        dist = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = dist.argmin(axis=1)
        for c in range(k):
            sel = new_labels == c
            if sel.any():
                centers[c] = points[sel].mean(axis=0)
            else:
                # Re-seed an empty cluster at the worst-served point.
                centers[c] = points[dist.min(axis=1).argmax()]
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    sse = float(np.sum((points - centers[labels]) ** 2))
    return labels, sse


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            restarts: int = 20) -> np.ndarray:
    best_labels, best_sse = None, np.inf
    for _ in range(restarts):
        labels, sse = _kmeans_once(points, k, rng)
        if sse < best_sse:
            best_labels, best_sse = labels, sse
    return best_labels


def spectral_partition(graph: SimilarityGraph, n_clusters: int,
                       rng, num_rb: int | None = None,
                       restarts: int = 20) -> ClusterAssignment:
    """Normalized-Laplacian spectral clustering of the similarity graph."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n = graph.num_vertices
    if not 1 <= n_clusters <= n:
        raise ValueError(f"need 1 <= clusters <= {n}, got {n_clusters}")
    w = graph.weights
    # Tiny degree floor keeps isolated vertices from breaking D^(-1/2).
    deg = w.sum(axis=1) + 1e-12
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(n) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    _, vecs = jacobi_eigen(lap)
    emb = vecs[:, :n_clusters]
    norms = np.linalg.norm(emb, axis=1)
    emb = emb / np.maximum(norms, 1e-12)[:, None]
    labels = _kmeans(emb, n_clusters, rng, restarts=restarts)
    clusters = [sorted(int(i) for i in np.flatnonzero(labels == c))
                for c in range(n_clusters)]
    assignment = ClusterAssignment(clusters, [], graph.num_pairs, graph.num_ivues)
    if num_rb is not None:
        assignment.candidate_rbs = candidate_rbs(assignment, graph.num_ivues, num_rb)
    return assignment


def candidate_rbs(assignment: ClusterAssignment, num_ivues: int,
                  num_rb: int) -> list[list[int]]:
    """Per-cluster usable RBs: all RBs minus in-cluster uplink users' RBs."""
    groups = []
    for members in assignment.clusters:
        blocked = {v - assignment.num_pairs for v in members
                   if v >= assignment.num_pairs and v - assignment.num_pairs < num_rb}
        groups.append([f for f in range(num_rb) if f not in blocked])
    return groups


def intra_cluster_weight(weights: np.ndarray, clusters: list[list[int]]) -> float:
    """Sum of edge weights inside clusters (each unordered edge counted twice)."""
    total = 0.0
    for members in clusters:
        idx = np.array(members, dtype=int)
        if idx.size:
            total += float(weights[np.ix_(idx, idx)].sum())
    return total


def dump_edge_list(graph: SimilarityGraph, stream: TextIO) -> None:
    """Debug dump: one `i j weight` line per undirected edge."""
    n = graph.num_vertices
    for i in range(n):
        for j in range(i + 1, n):
            stream.write(f"{i} {j} {graph.weights[i, j]:.9e}\n")

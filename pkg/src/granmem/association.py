"""Association graph construction via 1-D Gaussian mixture clustering.

When a new memory unit arrives, each of its granularity nodes scores
every historical node of the same granularity by cosine similarity. A
two-component 1-D GMM fit on those scores splits them into a high
(accept) and low (reject) cluster; accepted pairs become weighted edges.
This replaces a fixed similarity threshold with a per-insertion adaptive
one. Within a unit, the session node is connected to each of its own
turn, summary, and keyword nodes with weight 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .embedding import cosine
from .errors import DegenerateScores, ParameterError
from .model import Granularity, MemoryBank, MemoryUnit, NodeKey

GMM_MAX_ITER = 100
GMM_TOL = 1e-6
VARIANCE_FLOOR = 1e-6
FALLBACK_THRESHOLD = 0.5   # used when fewer than 2 historical nodes exist
INTRA_UNIT_WEIGHT = 1.0

LINK_MODE_GMM = "gmm"
LINK_MODE_THRESHOLD = "threshold"
LINK_MODE_INTRA_ONLY = "intra-only"
LINK_MODES = (LINK_MODE_GMM, LINK_MODE_THRESHOLD, LINK_MODE_INTRA_ONLY)


class AssociationGraph:
    """Undirected weighted graph over granularity nodes.

    Nodes are NodeKey tuples ``(memory_id, granularity, sub_index)``.
    Insertion order of nodes and edges is preserved, which keeps
    serialization and iteration deterministic.
    """

    def __init__(self):
        self._adjacency: dict[NodeKey, dict[NodeKey, float]] = {}
        self._edge_count = 0

    def add_node(self, node: NodeKey) -> None:
        if node not in self._adjacency:
            self._adjacency[node] = {}

    def has_node(self, node: NodeKey) -> bool:
        return node in self._adjacency

    def nodes(self) -> Iterator[NodeKey]:
        return iter(self._adjacency)

    def node_count(self) -> int:
        return len(self._adjacency)

    def edge_count(self) -> int:
        return self._edge_count

    def neighbors(self, node: NodeKey) -> dict[NodeKey, float]:
        if node not in self._adjacency:
            raise ParameterError(f"unknown node: {node}")
        return dict(self._adjacency[node])

    def degree(self, node: NodeKey) -> int:
        if node not in self._adjacency:
            raise ParameterError(f"unknown node: {node}")
        return len(self._adjacency[node])

    def has_edge(self, a: NodeKey, b: NodeKey) -> bool:
        return a in self._adjacency and b in self._adjacency[a]

    def weight(self, a: NodeKey, b: NodeKey) -> float:
        if not self.has_edge(a, b):
            raise ParameterError(f"no edge between {a} and {b}")
        return self._adjacency[a][b]

    def add_edge(self, a: NodeKey, b: NodeKey, weight: float) -> None:
        if a == b:
            raise ParameterError(f"self-edges are not allowed: {a}")
        if a not in self._adjacency or b not in self._adjacency:
            raise ParameterError("both endpoints must be added before the edge")
        if not math.isfinite(weight) or weight <= 0.0 or weight > 1.0:
            raise ParameterError(f"edge weight must be in (0, 1], got {weight}")
        if b in self._adjacency[a]:
            raise ParameterError(f"edge already exists between {a} and {b}")
        self._adjacency[a][b] = weight
        self._adjacency[b][a] = weight
        self._edge_count += 1

    def edges(self) -> Iterator[tuple[NodeKey, NodeKey, float]]:
        """Each undirected edge exactly once, in node-insertion order."""
        order = {node: i for i, node in enumerate(self._adjacency)}
        for a, neighbors in self._adjacency.items():
            for b, weight in neighbors.items():
                if order[a] < order[b]:
                    yield (a, b, weight)


@dataclass(frozen=True)
class GmmFit:
    """Result of a two-component 1-D EM fit, components sorted by mean."""

    means: tuple[float, float]
    variances: tuple[float, float]
    mixing_weights: tuple[float, float]
    responsibilities: np.ndarray = field(repr=False)  # (n, 2); column 1 = high component
    iterations_run: int = 0
    converged: bool = False


def _log_gaussian(x: np.ndarray, mean: float, variance: float) -> np.ndarray:
    return -0.5 * (np.log(2.0 * math.pi * variance) + (x - mean) ** 2 / variance)


def fit_gmm_1d(scores, max_iter: int = GMM_MAX_ITER, tol: float = GMM_TOL) -> GmmFit:
    """Fit a two-component Gaussian mixture to 1-D scores via EM.

    Initialization: means at the 25th and 75th percentiles, one shared
    variance (floored), equal mixing weights. Convergence is declared
    when the log-likelihood improves by less than ``tol``.

    Raises DegenerateScores when every score is identical; the caller
    decides how to link in that case.
    """
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ParameterError(f"need at least 2 scores, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("scores contain non-finite values")
    if float(x.max()) == float(x.min()):
        raise DegenerateScores(f"all {x.size} scores equal {float(x[0]):.6f}")

    means = np.array([np.percentile(x, 25.0), np.percentile(x, 75.0)])
    if means[0] == means[1]:
        means = np.array([float(x.min()), float(x.max())])
    variances = np.full(2, max(float(np.var(x)), VARIANCE_FLOOR))
    weights = np.array([0.5, 0.5])

    responsibilities = np.full((x.size, 2), 0.5)
    previous_ll = -np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        # E-step in log space
        log_joint = np.stack(
            [np.log(weights[k]) + _log_gaussian(x, means[k], variances[k]) for k in range(2)],
            axis=1,
        )
        log_norm = np.logaddexp(log_joint[:, 0], log_joint[:, 1])
        responsibilities = np.exp(log_joint - log_norm[:, None])
        ll = float(log_norm.sum())

        # M-step
        component_mass = responsibilities.sum(axis=0)
        component_mass = np.maximum(component_mass, 1e-12)
        weights = component_mass / x.size
        means = (responsibilities * x[:, None]).sum(axis=0) / component_mass
        deviations = (x[:, None] - means[None, :]) ** 2
        variances = np.maximum(
            (responsibilities * deviations).sum(axis=0) / component_mass, VARIANCE_FLOOR
        )

        if abs(ll - previous_ll) < tol:
            converged = True
            break
        previous_ll = ll

    if means[0] > means[1]:
        means = means[::-1]
        variances = variances[::-1]
        weights = weights[::-1]
        responsibilities = responsibilities[:, ::-1]

    return GmmFit(
        means=(float(means[0]), float(means[1])),
        variances=(float(variances[0]), float(variances[1])),
        mixing_weights=(float(weights[0]), float(weights[1])),
        responsibilities=np.ascontiguousarray(responsibilities),
        iterations_run=iterations,
        converged=converged,
    )


def assign_accept_reject(fit: GmmFit | None, scores) -> tuple[set[int], set[int]]:
    """Split score indices into accept (high component) and reject sets.

    ``fit=None`` means the scores were degenerate (all identical): every
    index is accepted when the common score clears the fallback
    threshold, otherwise every index is rejected. Responsibility ties at
    exactly 0.5 accept.
    """
    x = np.asarray(scores, dtype=np.float64)
    indices = set(range(x.size))
    if fit is None:
        if x.size and float(x[0]) >= FALLBACK_THRESHOLD:
            return indices, set()
        return set(), indices
    if fit.responsibilities.shape[0] != x.size:
        raise ParameterError(
            f"fit covers {fit.responsibilities.shape[0]} scores, got {x.size}"
        )
    accept = {i for i in range(x.size) if fit.responsibilities[i, 1] >= 0.5}
    return accept, indices - accept


def _accepted_indices(scores: list[float], mode: str) -> set[int]:
    """Which candidate indices to link, given the per-node score vector."""
    if not scores:
        return set()
    if mode == LINK_MODE_THRESHOLD:
        return {i for i, s in enumerate(scores) if s >= FALLBACK_THRESHOLD}
    if len(scores) < 2:
        return {0} if scores[0] >= FALLBACK_THRESHOLD else set()
    try:
        fit = fit_gmm_1d(scores)
    except DegenerateScores:
        fit = None
    accept, _ = assign_accept_reject(fit, scores)
    return accept


def associate_new_memory(bank: MemoryBank, unit: MemoryUnit, mode: str = LINK_MODE_GMM) -> int:
    """Wire a freshly embedded unit into the association graph.

    Cross-unit edges connect nodes of the same granularity only, weighted
    by cosine similarity (clamped to 1.0); non-positive similarities are
    never materialized as edges. Edges are staged first and committed in
    one pass, so a failure mid-computation leaves the graph untouched.
    Returns the number of edges added.
    """
    if mode not in LINK_MODES:
        raise ParameterError(f"unknown link mode: {mode!r}")
    new_nodes = list(bank.node_keys_for(unit))
    for node in new_nodes:
        if node not in bank.embedding_index:
            raise ParameterError(f"unit {unit.memory_id} has unembedded node {node}")

    existing_by_granularity: dict[Granularity, list[NodeKey]] = {g: [] for g in Granularity}
    for node in bank.graph.nodes():
        if node[0] != unit.memory_id:
            existing_by_granularity[node[1]].append(node)

    staged: list[tuple[NodeKey, NodeKey, float]] = []
    if mode != LINK_MODE_INTRA_ONLY:
        for node in new_nodes:
            candidates = existing_by_granularity[node[1]]
            if not candidates:
                continue
            node_embedding = bank.embedding_index[node]
            scores = [cosine(node_embedding, bank.embedding_index[c]) for c in candidates]
            for index in _accepted_indices(scores, mode):
                weight = min(scores[index], 1.0)
                if weight > 0.0:
                    staged.append((node, candidates[index], weight))

    session_node = (unit.memory_id, Granularity.SESSION, 0)
    for node in new_nodes:
        if node != session_node:
            staged.append((session_node, node, INTRA_UNIT_WEIGHT))

    for node in new_nodes:
        bank.graph.add_node(node)
    for a, b, weight in staged:
        bank.graph.add_edge(a, b, weight)
    return len(staged)


def simulate_mislink_rate(
    delta_over_sigma: float,
    n_pairs: int = 10_000,
    seed: int = 0,
    sigma: float = 0.05,
) -> float:
    """Monte-Carlo estimate of the GMM accept/reject mis-assignment rate.

    Draws ``n_pairs`` scores from an equal mixture of two Gaussians whose
    means are ``delta_over_sigma * sigma`` apart, fits the mixture, and
    counts points assigned to the wrong side. Used to check the
    exponential separation bound empirically.
    """
    rng = np.random.default_rng(seed)
    delta = delta_over_sigma * sigma
    low_mean, high_mean = 0.4, 0.4 + delta
    labels = rng.integers(0, 2, size=n_pairs)
    samples = np.where(
        labels == 0,
        rng.normal(low_mean, sigma, size=n_pairs),
        rng.normal(high_mean, sigma, size=n_pairs),
    )
    fit = fit_gmm_1d(samples)
    accept, _ = assign_accept_reject(fit, samples)
    predicted = np.zeros(n_pairs, dtype=int)
    predicted[list(accept)] = 1
    return float(np.mean(predicted != labels))

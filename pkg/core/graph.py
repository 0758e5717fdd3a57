"""
Client Graph
Weighted client relationship graph, its Laplacian L = D - A and spectral norm rho.
The Kronecker form L (x) I_d is never built: every operator here acts on the
stacked parameters W of shape (N, d) one client block at a time.
"""
import json
import logging
import os
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from core.errors import (
    DimensionMismatch, DuplicateEdge, IndexOutOfRange, InvalidConfig,
    MissingLabelSets, NegativeWeight, SelfLoop,
)

# Dense eigensolver is used up to this size, power iteration above it
DENSE_EIG_LIMIT = 1000


@dataclass(frozen=True, eq=False)
class ClientGraph:
    n_clients: int
    adjacency: np.ndarray
    degrees: np.ndarray
    laplacian: np.ndarray
    rho: float
    edges: tuple = ()
    connected: bool = True
    _edge_index: tuple = field(default=(), repr=False, compare=False)

    def neighbors(self, k):
        """Indices l with a_kl > 0, ascending."""
        return np.flatnonzero(self.adjacency[k] > 0)

    def edge_arrays(self):
        """(rows, cols, weights) of the positive-weight edges with k < l."""
        return self._edge_index

    def weights(self):
        """Current weight of every structural edge, in `edges` order."""
        return [float(self.adjacency[k, l]) for k, l in self.edges]


def _freeze(arr):
    arr.setflags(write=False)
    return arr


def power_iteration(matrix, tol=1e-10, max_iter=10000, seed=0):
    """Dominant eigenvalue magnitude of a symmetric matrix via power iteration.

    Uses the residual ||A x - lam x|| as the stopping test.
    """
    A = np.asarray(matrix, dtype=float)
    n = A.shape[0]
    if n == 0 or not np.any(A):
        return 0.0

    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = A @ x
        y_norm = np.linalg.norm(y)
        if y_norm == 0:
            x = rng.normal(size=n)
            x /= np.linalg.norm(x)
            continue
        lam = float(x @ y)
        x_new = y / y_norm
        res = np.linalg.norm(A @ x_new - lam * x_new)
        x = x_new
        if res < tol * max(1.0, abs(lam)):
            break
    return abs(lam)


def _spectral_norm(laplacian):
    n = laplacian.shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_EIG_LIMIT:
        evals = np.linalg.eigvalsh(laplacian)
        return max(0.0, float(evals[-1]))
    return power_iteration(laplacian)


def _assemble(n_clients, adjacency, edges):
    """Computes degrees, Laplacian, rho and connectivity for a validated adjacency."""
    adjacency = np.array(adjacency, dtype=float)
    degrees = adjacency.sum(axis=1)
    laplacian = np.diag(degrees) - adjacency
    rho = _spectral_norm(laplacian)

    rows, cols = np.nonzero(np.triu(adjacency > 0))
    edge_index = (rows, cols, adjacency[rows, cols])

    g = nx.Graph()
    g.add_nodes_from(range(n_clients))
    g.add_edges_from(zip(rows.tolist(), cols.tolist()))
    connected = n_clients <= 1 or nx.is_connected(g)
    if not connected:
        logging.warning(f"⚠️ Client graph is disconnected ({nx.number_connected_components(g)} components); "
                        "training decouples per component.")

    return ClientGraph(
        n_clients=n_clients,
        adjacency=_freeze(adjacency),
        degrees=_freeze(degrees),
        laplacian=_freeze(laplacian),
        rho=rho,
        edges=tuple(edges),
        connected=connected,
        _edge_index=tuple(_freeze(a) for a in edge_index),
    )


def build_graph(n_clients, edges):
    """
    Builds a ClientGraph from (k, l, weight) triples. Each edge is symmetrized.

    Raises IndexOutOfRange, SelfLoop, NegativeWeight or DuplicateEdge on bad input.
    """
    if int(n_clients) < 1:
        raise InvalidConfig(f"n_clients must be positive, got {n_clients}")
    n_clients = int(n_clients)

    adjacency = np.zeros((n_clients, n_clients))
    seen = set()
    structure = []
    for edge in edges:
        k, l, weight = edge
        k, l, weight = int(k), int(l), float(weight)
        if not (0 <= k < n_clients and 0 <= l < n_clients):
            raise IndexOutOfRange(f"Edge ({k}, {l}) outside 0..{n_clients - 1}")
        if k == l:
            raise SelfLoop(f"Self loop on client {k}")
        if not weight >= 0:
            raise NegativeWeight(f"Edge ({k}, {l}) has weight {weight}")
        key = (min(k, l), max(k, l))
        if key in seen:
            raise DuplicateEdge(f"Edge {key} listed more than once")
        seen.add(key)
        structure.append(key)
        adjacency[k, l] = adjacency[l, k] = weight

    graph = _assemble(n_clients, adjacency, sorted(structure))
    logging.info(f"Graph built: N={n_clients}, edges={len(structure)}, rho={graph.rho:.6g}, "
                 f"connected={graph.connected}")
    return graph


def with_weights(graph, weights):
    """Returns a new graph with the same structural edges and new weights (edge order)."""
    if len(weights) != len(graph.edges):
        raise DimensionMismatch(f"Expected {len(graph.edges)} weights, got {len(weights)}")
    triples = [(k, l, w) for (k, l), w in zip(graph.edges, weights)]
    return build_graph(graph.n_clients, triples)


def _check_blocks(graph, W):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != graph.n_clients:
        raise DimensionMismatch(f"Expected {graph.n_clients} parameter blocks, got shape {W.shape}")
    return W


def laplacian_quadratic(graph, W):
    """Returns 1/2 sum_k sum_{l in N_k} a_kl ||w_k - w_l||^2, computed pairwise."""
    W = _check_blocks(graph, W)
    rows, cols, weights = graph.edge_arrays()
    if len(rows) == 0:
        return 0.0
    diff = W[rows] - W[cols]
    return float(np.sum(weights * np.einsum('ij,ij->i', diff, diff)))


def laplacian_apply(graph, W):
    """Blockwise action (L (x) I_d) W, i.e. row k is sum_l a_kl (w_k - w_l)."""
    W = _check_blocks(graph, W)
    return graph.laplacian @ W


def disagreement(graph, W):
    """Largest ||w_k - w_l|| over the positive-weight edges (0 without edges)."""
    W = _check_blocks(graph, W)
    rows, cols, _ = graph.edge_arrays()
    if len(rows) == 0:
        return 0.0
    return float(np.max(np.linalg.norm(W[rows] - W[cols], axis=1)))


# --- Weight scenarios ---
@dataclass(frozen=True)
class RandomWeights:
    """a_kl = min(|x|, 1) with x ~ N(0, 1)."""
    seed: int = 0


@dataclass(frozen=True)
class EqualWeights:
    value: float = 0.5


@dataclass(frozen=True)
class SizeWeights:
    """Weights by data size: small-small c_small, small-large c_mixed, large-large c_full."""
    small_set: frozenset = frozenset()
    c_small: float = 0.0
    c_mixed: float = 0.5
    c_full: float = 1.0


@dataclass(frozen=True)
class SimilarLabelWeights:
    """0 / 0.5 / 1 for 0 / 1 / 2+ shared labels."""
    label_sets: tuple = None


def assign_weights(graph, scenario):
    """Returns a new graph whose structural edges carry the scenario's weights."""
    edges = graph.edges

    if isinstance(scenario, RandomWeights):
        rng = np.random.default_rng(scenario.seed)
        weights = np.minimum(np.abs(rng.standard_normal(len(edges))), 1.0).tolist()
    elif isinstance(scenario, EqualWeights):
        weights = [float(scenario.value)] * len(edges)
    elif isinstance(scenario, SizeWeights):
        small = set(int(k) for k in scenario.small_set)
        if not small.issubset(range(graph.n_clients)):
            raise IndexOutOfRange(f"small_set {sorted(small)} not within 0..{graph.n_clients - 1}")
        weights = []
        for k, l in edges:
            n_small = (k in small) + (l in small)
            weights.append({2: scenario.c_small, 1: scenario.c_mixed, 0: scenario.c_full}[n_small])
    elif isinstance(scenario, SimilarLabelWeights):
        label_sets = scenario.label_sets
        if label_sets is None or len(label_sets) != graph.n_clients:
            raise MissingLabelSets("Similar scenario needs one label set per client")
        sets = [set(s) for s in label_sets]
        weights = [0.5 * min(len(sets[k] & sets[l]), 2) for k, l in edges]
    else:
        raise InvalidConfig(f"Unknown weight scenario: {scenario!r}")

    return with_weights(graph, weights)


# --- Generators ---
def _from_nx(n_clients, g, weight):
    return build_graph(n_clients, [(k, l, weight) for k, l in g.edges()])


def complete_graph(n_clients, weight=1.0):
    return _from_nx(n_clients, nx.complete_graph(n_clients), weight)


def ring_graph(n_clients, weight=1.0):
    if n_clients <= 2:
        return complete_graph(n_clients, weight)
    return _from_nx(n_clients, nx.cycle_graph(n_clients), weight)


def erdos_renyi_graph(n_clients, edge_prob, seed=0, weight=1.0):
    return _from_nx(n_clients, nx.gnp_random_graph(n_clients, edge_prob, seed=seed), weight)


def star_graph(n_clients, weight=1.0):
    """Vertex 0 is the hub, vertices 1..n_clients the leaves."""
    return build_graph(n_clients + 1, [(0, k, weight) for k in range(1, n_clients + 1)])


# --- Graph files ---
def load_graph(path):
    """Loads {"n": N, "edges": [[k, l, w], ...]} with build_graph's validation."""
    if not os.path.exists(path):
        raise InvalidConfig(f"Graph file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"Graph file {path} is not valid JSON: {e}") from e

    if not isinstance(raw, dict) or 'n' not in raw or 'edges' not in raw:
        raise InvalidConfig(f"Graph file {path} must contain 'n' and 'edges'")
    for edge in raw['edges']:
        if len(edge) != 3:
            raise InvalidConfig(f"Graph file {path}: edge {edge} is not [k, l, w]")
    return build_graph(raw['n'], raw['edges'])


def save_graph(graph, path):
    payload = {
        "n": graph.n_clients,
        "edges": [[k, l, w] for (k, l), w in zip(graph.edges, graph.weights())],
    }
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)

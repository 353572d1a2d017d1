"""Network graphs and left-stochastic combination weights.

Nodes are numbered 1..N. The neighborhood of a node always includes the
node itself, matching how the combination step mixes a node's own
intermediate estimate with its neighbors' broadcasts. Combination
matrices are dense (N, N) arrays where entry [l-1, k-1] is the weight
node k applies to node l's estimate, so each column sums to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Absolute tolerance for stochasticity checks: double precision leaves
# plenty of headroom for sums of <= a few hundred weights.
STOCHASTIC_TOL = 1e-12

DEFAULT_RETRY_BUDGET = 200


class InvalidEdge(ValueError):
    """An input edge is out of range or a self-loop."""


class DisconnectedGraph(ValueError):
    """The edge set does not connect all nodes."""


class ConnectivityFailure(RuntimeError):
    """Random placement never produced a connected graph within the retry budget."""


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected connected graph with self-inclusive neighborhoods."""

    n_nodes: int
    edges: frozenset
    neighborhoods: dict

    def neighbors_of(self, k: int) -> frozenset:
        """Neighborhood of node k, including k itself."""
        return self.neighborhoods[k]

    def degree(self, k: int) -> int:
        """Size of the self-inclusive neighborhood of node k."""
        return len(self.neighborhoods[k])


@dataclass(frozen=True)
class CombinationMatrix:
    """Left-stochastic mixing weights; column k belongs to node k."""

    weights: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def column(self, k: int) -> np.ndarray:
        """Mixing weights used by node k (1-based)."""
        return self.weights[:, k - 1]


@dataclass(frozen=True)
class CombinationReport:
    """Outcome of validate_combination, listing every violated invariant."""

    passed: bool
    failures: tuple


def _connected_components(n_nodes, neighborhoods):
    seen = set()
    components = []
    for start in range(1, n_nodes + 1):
        if start in seen:
            continue
        stack = [start]
        comp = set()
        while stack:
            u = stack.pop()
            if u in comp:
                continue
            comp.add(u)
            stack.extend(neighborhoods[u] - comp)
        seen |= comp
        components.append(comp)
    return components


def build_topology(n_nodes: int, edges) -> NetworkTopology:
    """Build and validate an undirected connected topology.

    Edges are (u, v) pairs with 1-based distinct endpoints; duplicates
    and orientation are collapsed. Raises InvalidEdge on malformed input
    and DisconnectedGraph if the graph has more than one component.
    """
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    canonical = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if not (1 <= u <= n_nodes and 1 <= v <= n_nodes):
            raise InvalidEdge(f"edge ({u}, {v}) out of range for N={n_nodes}")
        if u == v:
            raise InvalidEdge(f"self-loop on node {u}")
        canonical.add((min(u, v), max(u, v)))

    neighborhoods = {k: {k} for k in range(1, n_nodes + 1)}
    for u, v in canonical:
        neighborhoods[u].add(v)
        neighborhoods[v].add(u)

    components = _connected_components(n_nodes, neighborhoods)
    if len(components) > 1:
        sizes = sorted(len(c) for c in components)
        raise DisconnectedGraph(
            f"graph has {len(components)} components (sizes {sizes})"
        )
    return NetworkTopology(
        n_nodes=n_nodes,
        edges=frozenset(canonical),
        neighborhoods={k: frozenset(v) for k, v in neighborhoods.items()},
    )


def path_topology(n_nodes: int) -> NetworkTopology:
    """Chain 1-2-...-N."""
    return build_topology(n_nodes, [(k, k + 1) for k in range(1, n_nodes)])


def random_geometric_topology(
    n_nodes: int, radius: float, seed, max_retries: int = DEFAULT_RETRY_BUDGET
) -> NetworkTopology:
    """Seeded random geometric graph on the unit square.

    Nodes are placed uniformly at random; two nodes are linked iff their
    Euclidean distance is at most `radius`. Placement is redrawn until
    the graph is connected, up to `max_retries` attempts. The edge set
    is a pure function of (n_nodes, radius, seed).
    """
    if not 0 < radius <= np.sqrt(2):
        raise ValueError(f"radius must be in (0, sqrt(2)], got {radius}")
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        points = rng.random((n_nodes, 2))
        diff = points[:, None, :] - points[None, :, :]
        dist2 = (diff * diff).sum(axis=2)
        iu, ju = np.triu_indices(n_nodes, k=1)
        close = dist2[iu, ju] <= radius * radius
        edges = [(int(i) + 1, int(j) + 1) for i, j in zip(iu[close], ju[close])]
        try:
            return build_topology(n_nodes, edges)
        except DisconnectedGraph:
            continue
    raise ConnectivityFailure(
        f"no connected placement for N={n_nodes}, radius={radius} "
        f"after {max_retries} attempts"
    )


def metropolis_weights(topology: NetworkTopology) -> CombinationMatrix:
    """Metropolis combination weights for an undirected topology.

    Off-diagonal weight between linked nodes k and l is
    1 / max(|neigh(k)|, |neigh(l)|) with self-inclusive neighborhood
    sizes; the diagonal absorbs the remainder so every column sums to
    one. The result is symmetric, hence doubly stochastic.
    """
    n = topology.n_nodes
    weights = np.zeros((n, n))
    for u, v in topology.edges:
        w = 1.0 / max(topology.degree(u), topology.degree(v))
        weights[u - 1, v - 1] = w
        weights[v - 1, u - 1] = w
    for k in range(n):
        weights[k, k] = 1.0 - (weights[:, k].sum() - weights[k, k])
    return CombinationMatrix(weights)


def identity_weights(n_nodes: int) -> CombinationMatrix:
    """Weights that disable cross-node mixing (each node keeps its own estimate)."""
    return CombinationMatrix(np.eye(n_nodes))


def validate_combination(
    matrix: CombinationMatrix,
    topology: NetworkTopology,
    tol: float = STOCHASTIC_TOL,
) -> CombinationReport:
    """Check nonnegativity, column stochasticity, and neighborhood sparsity.

    Returns a report naming every offending entry; never raises on
    invariant violations (dimension mismatch is a usage error).
    """
    w = matrix.weights
    n = topology.n_nodes
    if w.shape != (n, n):
        raise ValueError(f"weights shape {w.shape} does not match N={n}")
    failures = []
    neg = np.argwhere(w < 0)
    for l, k in neg:
        failures.append(
            f"negative weight a[{l + 1},{k + 1}] = {w[l, k]!r}"
        )
    col_sums = w.sum(axis=0)
    for k in np.flatnonzero(np.abs(col_sums - 1.0) > tol):
        failures.append(f"column {k + 1} sums to {col_sums[k]!r}")
    for k in range(1, n + 1):
        allowed = topology.neighborhoods[k]
        for l in range(1, n + 1):
            if l not in allowed and w[l - 1, k - 1] != 0.0:
                failures.append(
                    f"nonzero weight a[{l},{k}] = {w[l - 1, k - 1]!r} "
                    f"but {l} is not a neighbor of {k}"
                )
    return CombinationReport(passed=not failures, failures=tuple(failures))


def to_edge_list_text(topology: NetworkTopology) -> str:
    """Serialize to the plain-text edge-list format: 'N <count>' then 'u v' lines."""
    lines = [f"N {topology.n_nodes}"]
    lines.extend(f"{u} {v}" for u, v in sorted(topology.edges))
    return "\n".join(lines) + "\n"


def from_edge_list_text(text: str) -> NetworkTopology:
    """Parse the plain-text edge-list format produced by to_edge_list_text."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty edge-list document")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "N":
        raise ValueError(f"first line must be 'N <count>', got {lines[0]!r}")
    n_nodes = int(head[1])
    edges = []
    for idx, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"line {idx}: expected 'u v', got {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return build_topology(n_nodes, edges)


def save_edge_list(topology: NetworkTopology, path) -> None:
    Path(path).write_text(to_edge_list_text(topology), encoding="utf-8")


def load_edge_list(path) -> NetworkTopology:
    return from_edge_list_text(Path(path).read_text(encoding="utf-8"))

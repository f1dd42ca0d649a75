from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from .errors import GraphError

Edge = Tuple[int, int]


@dataclass(frozen=True)
class Graph:
    """Undirected, unweighted simple graph on nodes 0..node_count-1"""

    node_count: int
    edges: FrozenSet[Edge] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.node_count < 0:
            raise GraphError(f"Negative node count {self.node_count}")
        normalized = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphError(f"Self-loop on node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise GraphError(
                    f"Edge ({i}, {j}) references a node outside 0..{self.node_count - 1}"
                )
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[Sequence[int]]) -> "Graph":
        edge_set: Set[Edge] = set()
        for edge in edges:
            i, j = int(edge[0]), int(edge[1])
            edge_set.add((min(i, j), max(i, j)))
        return cls(node_count, frozenset(edge_set))

    @classmethod
    def from_networkx(cls, nx_graph: "nx.Graph") -> "Graph":
        nodes = sorted(nx_graph.nodes())
        index = {node: i for i, node in enumerate(nodes)}
        return cls.from_edges(
            len(nodes), ((index[u], index[v]) for u, v in nx_graph.edges())
        )

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> List[Edge]:
        return sorted(self.edges)

    def degrees(self) -> np.ndarray:
        degrees = np.zeros(self.node_count, dtype=np.int64)
        for i, j in self.edges:
            degrees[i] += 1
            degrees[j] += 1
        return degrees

    def adjacency_matrix(self) -> np.ndarray:
        adjacency = np.zeros((self.node_count, self.node_count), dtype=np.float64)
        for i, j in self.edges:
            adjacency[i, j] = 1.0
            adjacency[j, i] = 1.0
        return adjacency

    def to_networkx(self) -> "nx.Graph":
        nx_graph = nx.Graph()
        nx_graph.add_nodes_from(range(self.node_count))
        nx_graph.add_edges_from(self.sorted_edges())
        return nx_graph


@dataclass(frozen=True)
class ErParams:
    """Sampling distribution of the Poisson (Erdos-Renyi) random graph corpus"""

    n_mean: float = 30.0
    n_std: float = 10.0
    n_min: int = 5
    p_mean: float = 0.3
    p_std: float = 0.12
    p_min: float = 0.05

    def __post_init__(self) -> None:
        if self.n_min < 1:
            raise GraphError(f"n_min must be >= 1, got {self.n_min}")
        if not 0 < self.p_min <= 1:
            raise GraphError(f"p_min must be in (0, 1], got {self.p_min}")
        if self.n_std < 0 or self.p_std < 0:
            raise GraphError("Standard deviations must be nonnegative")


@dataclass(frozen=True)
class BaParams:
    """Sampling distribution of the preferential attachment corpus"""

    n_mean: float = 30.0
    n_std: float = 10.0
    n_min: int = 5
    k_mean: float = 6.0
    k_std: float = 2.0
    k_min: int = 2
    # k is capped at n - k_max_offset
    k_max_offset: int = 3

    def __post_init__(self) -> None:
        if self.n_min < 1:
            raise GraphError(f"n_min must be >= 1, got {self.n_min}")
        if self.k_min < 1:
            raise GraphError(f"k_min must be >= 1, got {self.k_min}")
        if self.k_max_offset < 0:
            raise GraphError(f"k_max_offset must be >= 0, got {self.k_max_offset}")
        if self.n_std < 0 or self.k_std < 0:
            raise GraphError("Standard deviations must be nonnegative")


def density(g: Graph) -> float:
    n = g.node_count
    if n < 2:
        raise GraphError(f"Density is undefined for a graph with {n} node(s)")
    return 2.0 * g.edge_count / (n * (n - 1))


def connected_components(g: Graph) -> List[Set[int]]:
    components = [set(c) for c in nx.connected_components(g.to_networkx())]
    return sorted(components, key=min)


def largest_component(g: Graph) -> Set[int]:
    if g.node_count == 0:
        raise GraphError("Empty graph has no components")
    components = connected_components(g)
    # components are ordered by smallest member, so max() keeps the first on ties
    return max(components, key=len)


def diameter(g: Graph) -> int:
    """
    Longest shortest-path hop count inside the largest connected component.
    Disconnected graphs are measured on their largest component.
    """
    if g.node_count < 1:
        raise GraphError("Diameter is undefined for an empty graph")
    component = largest_component(g)
    if len(component) == 1:
        return 0
    subgraph = g.to_networkx().subgraph(component)
    return int(nx.diameter(subgraph))


def is_connected(g: Graph) -> bool:
    return g.node_count > 0 and len(connected_components(g)) == 1


def permute(g: Graph, perm: Sequence[int]) -> Graph:
    """Relabel node i as perm[i]"""
    n = g.node_count
    perm = [int(p) for p in perm]
    if len(perm) != n or sorted(perm) != list(range(n)):
        raise GraphError(f"Invalid permutation of {n} nodes: {perm}")
    return Graph(n, frozenset((perm[i], perm[j]) for i, j in g.edges))


def _sample_node_count(
    rng: np.random.Generator, mean: float, std: float, minimum: int
) -> int:
    return max(minimum, int(round(rng.normal(mean, std))))


def generate_er(
    params: ErParams,
    rng: np.random.Generator,
    n: Optional[int] = None,
    p: Optional[float] = None,
) -> Graph:
    """
    Poisson random graph: every one of the n(n-1)/2 node pairs is included
    independently with probability p. ``n`` and ``p`` override the sampled
    values, which skips clamping.
    """
    if n is None:
        n = _sample_node_count(rng, params.n_mean, params.n_std, params.n_min)
    if p is None:
        p = min(1.0, max(params.p_min, float(rng.normal(params.p_mean, params.p_std))))
    rows, cols = np.triu_indices(n, k=1)
    keep = rng.random(rows.shape[0]) < p
    return Graph.from_edges(n, zip(rows[keep].tolist(), cols[keep].tolist()))


def generate_ba(
    params: BaParams,
    rng: np.random.Generator,
    n: Optional[int] = None,
    k: Optional[int] = None,
) -> Graph:
    """
    Preferential attachment graph grown from a k-clique. Each new node attaches
    to k distinct existing nodes drawn in turn with probability proportional to
    their current degree. ``n`` and ``k`` override the sampled values; k is
    clamped either way.
    """
    if n is None:
        n = _sample_node_count(rng, params.n_mean, params.n_std, params.n_min)
    if k is None:
        k = int(round(rng.normal(params.k_mean, params.k_std)))
    k = max(params.k_min, min(k, n - params.k_max_offset))
    k = max(1, min(k, n - 1))
    if n < 2:
        return Graph(n)

    edges: List[Edge] = [(i, j) for i in range(k) for j in range(i + 1, k)]
    degrees = np.zeros(n, dtype=np.float64)
    degrees[:k] = k - 1
    for node in range(k, n):
        weights = degrees[:node]
        if weights.sum() == 0:
            # a lone seed node has no degree yet
            weights = np.ones(node)
        targets = rng.choice(node, size=k, replace=False, p=weights / weights.sum())
        for target in sorted(int(t) for t in targets):
            edges.append((target, node))
        degrees[targets] += 1
        degrees[node] = k
    return Graph.from_edges(n, edges)

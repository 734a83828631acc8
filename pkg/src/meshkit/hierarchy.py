"""Hierarchy graph over tree-number positions and the two gold distances.

Nodes are tree-number strings (the prefix closure of every descriptor's tree
numbers), not descriptors: a descriptor with several tree numbers occupies
several positions, and descriptor-level distance is the minimum over position
pairs. Edges are undirected parent/child links, so shortest paths may go up
and back down. Top-level letter categories are not graph nodes, but they do
count as shared ancestors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .thesaurus import Thesaurus, TreeNumber, UnknownDescriptor

DEFAULT_BRANCHES = frozenset("NECDG")

INF = float("inf")


class HierarchyError(Exception):
    pass


class EmptyGraph(HierarchyError):
    pass


class GraphTooLarge(HierarchyError):
    pass


class DescriptorNotInGraph(HierarchyError):
    pass


@dataclass
class HierarchyGraph:
    nodes: tuple[str, ...]  # sorted tree-number strings
    edges: tuple[tuple[str, str], ...]  # (parent, child), parent one segment shorter
    node_to_descriptor: dict[str, str]
    branches: frozenset[str]
    _adjacency: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._adjacency:
            adj: dict[str, list[str]] = {n: [] for n in self.nodes}
            for a, b in self.edges:
                adj[a].append(b)
                adj[b].append(a)
            self._adjacency = {n: tuple(sorted(vs)) for n, vs in adj.items()}

    def __contains__(self, node: str) -> bool:
        return node in self._adjacency

    def neighbors(self, node: str) -> tuple[str, ...]:
        return self._adjacency[node]

    def descriptor_nodes(self, th: Thesaurus, descriptor_id: str) -> list[str]:
        """Graph positions of a descriptor, restricted to this graph's branches."""
        desc = th.get(descriptor_id)
        nodes = [str(tn) for tn in desc.tree_numbers if str(tn) in self._adjacency]
        if not nodes:
            raise DescriptorNotInGraph(
                f"descriptor {descriptor_id!r} has no tree number in branches {sorted(self.branches)}"
            )
        return nodes


def build_graph(th: Thesaurus, branches: frozenset[str] | set[str] | None = None) -> HierarchyGraph:
    """Prefix-closure graph over the tree numbers of the selected branches."""
    chosen = frozenset(branches) if branches is not None else DEFAULT_BRANCHES
    nodes: set[str] = set()
    node_to_descriptor: dict[str, str] = {}
    for desc_id in sorted(th.descriptors):
        for tn in th.descriptors[desc_id].tree_numbers:
            if tn.letter not in chosen:
                continue
            nodes.add(str(tn))
            for prefix in tn.prefixes():
                nodes.add(str(prefix))
    if not nodes:
        raise EmptyGraph(f"no descriptor falls in branches {sorted(chosen)}")
    for node in nodes:
        owner = th.descriptor_at(node)
        if owner is not None:
            node_to_descriptor[node] = owner
    edges = []
    for node in nodes:
        tn = _parse_node(node)
        parent = tn.parent()
        if parent is not None and str(parent) in nodes:
            edges.append((str(parent), node))
    return HierarchyGraph(
        nodes=tuple(sorted(nodes)),
        edges=tuple(sorted(edges)),
        node_to_descriptor=node_to_descriptor,
        branches=chosen,
    )


def _parse_node(node: str) -> TreeNumber:
    return TreeNumber(tuple(node.split(".")))


@dataclass
class DistanceOracle:
    nodes: tuple[str, ...]
    matrix: np.ndarray  # float64, hops; np.inf for disconnected pairs
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._index:
            self._index = {n: i for i, n in enumerate(self.nodes)}

    def distance(self, a: str, b: str) -> float:
        return float(self.matrix[self._index[a], self._index[b]])


DEFAULT_NODE_CAP = 8192


def shortest_path_matrix(g: HierarchyGraph, node_cap: int = DEFAULT_NODE_CAP) -> DistanceOracle:
    """All-pairs hop counts by Floyd-Warshall over the undirected edge set."""
    n = len(g.nodes)
    if n == 0:
        raise EmptyGraph("cannot build a distance oracle for an empty graph")
    if n > node_cap:
        raise GraphTooLarge(f"{n} nodes exceeds cap {node_cap}; the matrix is O(n^2)")
    index = {node: i for i, node in enumerate(g.nodes)}
    dist = np.full((n, n), INF)
    np.fill_diagonal(dist, 0.0)
    for a, b in g.edges:
        i, j = index[a], index[b]
        dist[i, j] = 1.0
        dist[j, i] = 1.0
    for k in range(n):
        # relax every pair through k in one vectorized sweep
        np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :], out=dist)
    return DistanceOracle(nodes=g.nodes, matrix=dist)


def descriptor_distance(
    g: HierarchyGraph, oracle: DistanceOracle, th: Thesaurus, a: str, b: str
) -> float:
    """Minimum hop distance over all position pairs of the two descriptors."""
    nodes_a = g.descriptor_nodes(th, a)
    nodes_b = g.descriptor_nodes(th, b)
    return min(oracle.distance(x, y) for x in nodes_a for y in nodes_b)


def ancestor_nodes(th: Thesaurus, descriptor_id: str) -> frozenset[str]:
    """Ancestor positions of a descriptor: top-level letters plus all proper
    prefixes of its tree numbers. The descriptor's own positions are excluded."""
    desc = th.get(descriptor_id)
    own = {str(tn) for tn in desc.tree_numbers}
    nodes: set[str] = set()
    for tn in desc.tree_numbers:
        nodes.add(tn.letter)
        nodes.update(str(p) for p in tn.prefixes())
    return frozenset(nodes - own)


def common_ancestor_count(th: Thesaurus, a: str, b: str) -> int:
    """Number of distinct ancestor positions shared by two descriptors."""
    if a not in th:
        raise UnknownDescriptor(f"unknown descriptor {a!r}")
    if b not in th:
        raise UnknownDescriptor(f"unknown descriptor {b!r}")
    return len(ancestor_nodes(th, a) & ancestor_nodes(th, b))


def siblings(th: Thesaurus, g: HierarchyGraph, a: str) -> set[str]:
    """Descriptors sharing a tree-number parent with `a`.

    Depth-1 positions are siblings of other depth-1 positions under the same
    letter category.
    """
    own_nodes = g.descriptor_nodes(th, a)
    parents = {_parent_key(node) for node in own_nodes}
    out: set[str] = set()
    for desc_id in th.descriptors:
        if desc_id == a:
            continue
        for tn in th.descriptors[desc_id].tree_numbers:
            if str(tn) in g and _parent_key(str(tn)) in parents:
                out.add(desc_id)
                break
    return out


def _parent_key(node: str) -> str:
    # parent prefix, or the letter category for depth-1 positions
    head, _, _ = node.rpartition(".")
    return head if head else node[0]


def ancestors(th: Thesaurus, g: HierarchyGraph, a: str) -> set[str]:
    """Descriptors owning any proper-prefix position of `a`'s tree numbers."""
    own_nodes = g.descriptor_nodes(th, a)
    out: set[str] = set()
    for node in own_nodes:
        for prefix in _parse_node(node).prefixes():
            owner = th.descriptor_at(str(prefix))
            if owner is not None and owner != a:
                out.add(owner)
    return out


def depth(th: Thesaurus, a: str) -> float:
    """Mean segment count over the descriptor's tree numbers."""
    desc = th.get(a)
    return sum(tn.depth for tn in desc.tree_numbers) / len(desc.tree_numbers)


# Distance-matrix disk cache. Header "DST1", u32 node count, length-prefixed
# node names (u16 byte length + UTF-8), then row-major u16 hop counts with
# 0xFFFF meaning unreachable. Everything little-endian.

_DST_MAGIC = b"DST1"
_DST_INF = 0xFFFF


def write_distance_cache(oracle: DistanceOracle, path: str) -> None:
    n = len(oracle.nodes)
    finite = oracle.matrix[np.isfinite(oracle.matrix)]
    if finite.size and finite.max() >= _DST_INF:
        raise ValueError("distance exceeds u16 cache range")
    with open(path, "wb") as fh:
        fh.write(_DST_MAGIC)
        fh.write(struct.pack("<I", n))
        for node in oracle.nodes:
            raw = node.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        cells = np.where(np.isfinite(oracle.matrix), oracle.matrix, _DST_INF)
        fh.write(cells.astype("<u2").tobytes(order="C"))


def read_distance_cache(path: str) -> DistanceOracle:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _DST_MAGIC:
        raise HierarchyError(f"bad magic in {path!r}")
    (n,) = struct.unpack_from("<I", data, 4)
    offset = 8
    nodes = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, offset)
        offset += 2
        nodes.append(data[offset : offset + ln].decode("utf-8"))
        offset += ln
    if len(data) != offset + 2 * n * n:
        raise HierarchyError(f"truncated or oversized cache file {path!r}")
    cells = np.frombuffer(data, dtype="<u2", count=n * n, offset=offset).reshape(n, n)
    matrix = np.where(cells == _DST_INF, INF, cells.astype(np.float64))
    return DistanceOracle(nodes=tuple(nodes), matrix=matrix)

from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from synth import make_tree_thesaurus, thesaurus_from_nodes

from meshkit import hierarchy as hi
from meshkit import thesaurus as ts


def bfs_distances(g: hi.HierarchyGraph, source: str) -> dict[str, float]:
    """Independent per-source BFS oracle."""
    dist = {source: 0.0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for nxt in g.neighbors(node):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1.0
                queue.append(nxt)
    return dist


def prefix_closure(th: ts.Thesaurus, branches: set[str]) -> set[str]:
    """Independent node-set oracle built by string slicing."""
    nodes = set()
    for desc in th.descriptors.values():
        for tn in desc.tree_numbers:
            s = str(tn)
            if s[0] not in branches:
                continue
            parts = s.split(".")
            for d in range(1, len(parts) + 1):
                nodes.add(".".join(parts[:d]))
    return nodes


def test_build_graph_prefix_closure_example():
    th, _ = ts.load_thesaurus(
        ["A\tcovid\td\tC01.748.214\n", "B\trespiratory\td\tC01.748\n"]
    )
    g = hi.build_graph(th, branches={"C"})
    assert set(g.nodes) == {"C01", "C01.748", "C01.748.214"}
    assert len(g.edges) == 2


def test_build_graph_branch_filter():
    th, _ = ts.load_thesaurus(["A\ta\td\tC01\n", "B\tb\td\tD05.123\n"])
    g = hi.build_graph(th, branches={"C"})
    assert all(n.startswith("C") for n in g.nodes)


def test_build_graph_empty():
    th, _ = ts.load_thesaurus(["A\ta\td\tC01\n"])
    with pytest.raises(hi.EmptyGraph):
        hi.build_graph(th, branches={"Z"})


def test_build_graph_matches_prefix_oracle(small_thesaurus, small_graph):
    expected = prefix_closure(small_thesaurus, {"C", "D"})
    assert set(small_graph.nodes) == expected
    # every non-depth-1 node contributes exactly one parent edge
    expected_edges = sum(1 for n in expected if "." in n and n.rsplit(".", 1)[0] in expected)
    assert len(small_graph.edges) == expected_edges


def test_components_never_span_letters(small_graph):
    for start in small_graph.nodes:
        reach = bfs_distances(small_graph, start)
        assert {n[0] for n in reach} == {start[0]}


def test_shortest_path_trivial_path_graph():
    th, _ = ts.load_thesaurus(["A\ta\td\tC01.001.001\n"])
    g = hi.build_graph(th, branches={"C"})
    oracle = hi.shortest_path_matrix(g)
    assert oracle.distance("C01", "C01.001.001") == 2.0
    for node in g.nodes:
        assert oracle.distance(node, node) == 0.0


def test_floyd_warshall_matches_bfs(small_graph):
    oracle = hi.shortest_path_matrix(small_graph)
    for source in small_graph.nodes:
        expected = bfs_distances(small_graph, source)
        for target in small_graph.nodes:
            assert oracle.distance(source, target) == expected.get(target, hi.INF)


def test_floyd_warshall_random_graphs_match_bfs():
    for seed in range(5):
        th = make_tree_thesaurus(seed=seed + 100, n_nodes=60, roots=("C01", "C02"), multi_tn=4)
        g = hi.build_graph(th, branches={"C"})
        oracle = hi.shortest_path_matrix(g)
        for source in g.nodes[:: max(1, len(g.nodes) // 10)]:
            expected = bfs_distances(g, source)
            for target in g.nodes:
                assert oracle.distance(source, target) == expected.get(target, hi.INF)


def test_oracle_invariants(small_graph):
    oracle = hi.shortest_path_matrix(small_graph)
    m = oracle.matrix
    assert np.all(np.diagonal(m) == 0.0)
    assert np.array_equal(m, m.T)
    rng = np.random.default_rng(0)
    n = len(oracle.nodes)
    for _ in range(500):
        i, j, k = rng.integers(n, size=3)
        if np.isfinite(m[i, j]) and np.isfinite(m[j, k]):
            assert m[i, k] <= m[i, j] + m[j, k]


def test_graph_too_large():
    th = make_tree_thesaurus(seed=1, n_nodes=30)
    g = hi.build_graph(th, branches={"C"})
    with pytest.raises(hi.GraphTooLarge):
        hi.shortest_path_matrix(g, node_cap=10)


def test_descriptor_distance_identity_and_siblings():
    th, _ = ts.load_thesaurus(
        [
            "P\tparent\td\tC01.748\n",
            "A\tcovid\td\tC01.748.214\n",
            "B\tbronchitis\td\tC01.748.100\n",
        ]
    )
    g = hi.build_graph(th, branches={"C"})
    oracle = hi.shortest_path_matrix(g)
    assert hi.descriptor_distance(g, oracle, th, "A", "A") == 0.0
    assert hi.descriptor_distance(g, oracle, th, "A", "B") == 2.0


def test_descriptor_distance_multi_tn_matches_brute_force(small_thesaurus, small_graph):
    oracle = hi.shortest_path_matrix(small_graph)
    ids = small_thesaurus.ids()
    rng = np.random.default_rng(5)
    for _ in range(60):
        a, b = (ids[int(i)] for i in rng.integers(len(ids), size=2))
        expected = min(
            bfs_distances(small_graph, x).get(y, hi.INF)
            for x in small_graph.descriptor_nodes(small_thesaurus, a)
            for y in small_graph.descriptor_nodes(small_thesaurus, b)
        )
        assert hi.descriptor_distance(small_graph, oracle, small_thesaurus, a, b) == expected


def ancestor_set_oracle(th: ts.Thesaurus, desc_id: str) -> set[str]:
    out: set[str] = set()
    own = set()
    for tn in th.get(desc_id).tree_numbers:
        s = str(tn)
        own.add(s)
        parts = s.split(".")
        out.add(parts[0][0])
        for d in range(1, len(parts)):
            out.add(".".join(parts[:d]))
    return out - own


def test_common_ancestors_fig2_style():
    th, _ = ts.load_thesaurus(
        [
            "INF\tinfections\td\tC01\n",
            "RTI\trespiratory tract infections\td\tC01.748\n",
            "COV\tcovid\td\tC01.748.214\n",
            "BRO\tbronchitis\td\tC01.748.100\n",
        ]
    )
    # shared: the C category, C01, and C01.748
    assert hi.common_ancestor_count(th, "COV", "BRO") == 3


def test_common_ancestors_cross_branch_zero():
    th, _ = ts.load_thesaurus(["A\ta\td\tC01.001\n", "B\tb\td\tD01.001\n"])
    assert hi.common_ancestor_count(th, "A", "B") == 0


def test_common_ancestors_matches_set_oracle(small_thesaurus):
    ids = small_thesaurus.ids()
    rng = np.random.default_rng(9)
    for _ in range(80):
        a, b = (ids[int(i)] for i in rng.integers(len(ids), size=2))
        expected = len(ancestor_set_oracle(small_thesaurus, a) & ancestor_set_oracle(small_thesaurus, b))
        assert hi.common_ancestor_count(small_thesaurus, a, b) == expected


def test_common_ancestors_unknown_descriptor(small_thesaurus):
    with pytest.raises(ts.UnknownDescriptor):
        hi.common_ancestor_count(small_thesaurus, "NOPE", small_thesaurus.ids()[0])


def test_siblings_shared_parent():
    th, _ = ts.load_thesaurus(
        ["A\ta\td\tC01.748.214\n", "B\tb\td\tC01.748.100\n", "C\tc\td\tC01.748\n"]
    )
    g = hi.build_graph(th, branches={"C"})
    assert hi.siblings(th, g, "A") == {"B"}
    assert hi.siblings(th, g, "B") == {"A"}


def test_siblings_at_branch_root():
    th, _ = ts.load_thesaurus(["A\ta\td\tC01\n", "B\tb\td\tC02\n", "D\td\td\tD01\n"])
    g = hi.build_graph(th, branches={"C", "D"})
    assert hi.siblings(th, g, "A") == {"B"}


def test_siblings_matches_scan_oracle(small_thesaurus, small_graph):
    def oracle(a: str) -> set[str]:
        parents = set()
        for tn in small_thesaurus.get(a).tree_numbers:
            s = str(tn)
            if s not in small_graph._adjacency:
                continue
            parents.add(s.rsplit(".", 1)[0] if "." in s else s[0])
        out = set()
        for other in small_thesaurus.descriptors:
            if other == a:
                continue
            for tn in small_thesaurus.get(other).tree_numbers:
                s = str(tn)
                if s not in small_graph._adjacency:
                    continue
                key = s.rsplit(".", 1)[0] if "." in s else s[0]
                if key in parents:
                    out.add(other)
        return out

    for a in small_thesaurus.ids():
        assert hi.siblings(small_thesaurus, small_graph, a) == oracle(a)


def test_siblings_never_contains_self(small_thesaurus, small_graph):
    for a in small_thesaurus.ids():
        assert a not in hi.siblings(small_thesaurus, small_graph, a)


def test_ancestors_example():
    th, _ = ts.load_thesaurus(
        ["INF\ti\td\tC01\n", "RTI\tr\td\tC01.748\n", "COV\tc\td\tC01.748.214\n"]
    )
    g = hi.build_graph(th, branches={"C"})
    assert hi.ancestors(th, g, "COV") == {"INF", "RTI"}


def test_ancestors_depth1_empty():
    th, _ = ts.load_thesaurus(["A\ta\td\tC01\n", "B\tb\td\tC02.001\n"])
    g = hi.build_graph(th, branches={"C"})
    assert hi.ancestors(th, g, "A") == set()


def test_ancestors_matches_prefix_oracle(small_thesaurus, small_graph):
    for a in small_thesaurus.ids():
        expected = set()
        for tn in small_thesaurus.get(a).tree_numbers:
            s = str(tn)
            if s not in small_graph._adjacency:
                continue
            parts = s.split(".")
            for d in range(1, len(parts)):
                owner = small_thesaurus.descriptor_at(".".join(parts[:d]))
                if owner is not None and owner != a:
                    expected.add(owner)
        got = hi.ancestors(small_thesaurus, small_graph, a)
        assert got == expected
        assert a not in got


def test_depth_examples():
    th, _ = ts.load_thesaurus(
        ["A\ta\td\tC01.748.214\n", "B\tb\td\tC01.001;C02.001.001.001\n"]
    )
    assert hi.depth(th, "A") == 3.0
    assert hi.depth(th, "B") == 3.0


def test_depth_matches_recompute(small_thesaurus):
    for a in small_thesaurus.ids():
        tns = small_thesaurus.get(a).tree_numbers
        assert hi.depth(small_thesaurus, a) == sum(len(t.segments) for t in tns) / len(tns)


def test_sibling_pairs_distance_two_and_ancestor_floor(small_thesaurus, small_graph):
    oracle = hi.shortest_path_matrix(small_graph)
    for a in small_thesaurus.ids():
        for b in hi.siblings(small_thesaurus, small_graph, a):
            shared_parent = None
            for tn_a in small_thesaurus.get(a).tree_numbers:
                for tn_b in small_thesaurus.get(b).tree_numbers:
                    pa = hi._parent_key(str(tn_a))
                    if pa == hi._parent_key(str(tn_b)):
                        shared_parent = pa
            assert shared_parent is not None
            d = hi.descriptor_distance(small_graph, oracle, small_thesaurus, a, b)
            single_position = (
                len(small_thesaurus.get(a).tree_numbers) == 1
                and len(small_thesaurus.get(b).tree_numbers) == 1
            )
            assert d == 2.0 if single_position else d <= 2.0
            # shared ancestors cover the letter plus every prefix of the parent
            if len(shared_parent) == 1:
                floor = 1
            else:
                floor = shared_parent.count(".") + 2
            assert hi.common_ancestor_count(small_thesaurus, a, b) >= floor


def test_distance_cache_round_trip(tmp_path, small_graph):
    oracle = hi.shortest_path_matrix(small_graph)
    path = str(tmp_path / "dist.dst1")
    hi.write_distance_cache(oracle, path)
    loaded = hi.read_distance_cache(path)
    assert loaded.nodes == oracle.nodes
    assert np.array_equal(loaded.matrix, oracle.matrix)


def test_distance_cache_bad_magic(tmp_path):
    path = tmp_path / "junk.dst1"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(hi.HierarchyError):
        hi.read_distance_cache(str(path))


def test_distance_cache_truncated(tmp_path, small_graph):
    oracle = hi.shortest_path_matrix(small_graph)
    path = str(tmp_path / "dist.dst1")
    hi.write_distance_cache(oracle, path)
    data = open(path, "rb").read()
    open(path, "wb").write(data[:-7])
    with pytest.raises(hi.HierarchyError):
        hi.read_distance_cache(path)

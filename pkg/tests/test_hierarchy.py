import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shade.dc_core import DcTree, MstEdge, build_dc_tree, dc_tree_from_data
from shade.hierarchy import (
    NOISE,
    ClusterAssignment,
    StructureTree,
    assign_noise_1nn,
    build_structure_tree,
    cut_at_epsilon,
    extract_clusters,
    read_labels,
    stability,
    write_labels,
    write_structure_tree,
)

from oracles import antichain_max, naive_nearest_labels


def tree_from_merges(n, merges):
    """DcTree from ``(left, right, height)`` merges listed bottom-up."""
    m = 2 * n - 1
    left = np.full(m, -1)
    right = np.full(m, -1)
    height = np.zeros(m)
    count = np.ones(m, dtype=np.int64)
    parent = np.full(m, -1)
    for k, (a, b, h) in enumerate(merges):
        node = n + k
        left[node], right[node], height[node] = a, b, h
        count[node] = count[a] + count[b]
        parent[a] = parent[b] = node
    return DcTree(n, left, right, height, count, parent)


def appendix_tree():
    # Leaves l1..l12 are points 0..11; internal ids 12.. in the order below.
    n7, n8, n9, n6, n0, n4, n5, n3, n2, n1, nr = range(12, 23)
    merges = [
        (2, 3, 1.0),  # n7 = (l3, l4)
        (4, 5, 1.0),  # n8 = (l5, l6)
        (6, 7, 1.0),  # n9 = (l7, l8)
        (10, 11, 1.0),  # n6 = (l11, l12)
        (0, 1, 1.5),  # n0 = (l1, l2)
        (n7, n8, 2.0),  # n4
        (n9, 8, 2.0),  # n5 = (n9, l9)
        (9, n6, 2.5),  # n3 = (l10, n6)
        (n4, n5, 3.0),  # n2
        (n2, n3, 4.0),  # n1
        (n0, n1, 5.0),  # nr
    ]
    return tree_from_merges(12, merges), {"n1": n1, "n2": n2, "n3": n3, "n4": n4, "n5": n5}


def test_appendix_example_splits_only():
    tree, ids = appendix_tree()
    st_ = build_structure_tree(tree, 3, leaf_sides=False)
    assert st_.td_node == [ids["n1"], ids["n2"]]
    assert st_.parent == [-1, 0]
    # l10..l12 hang off n1; l1, l2 are shed above n1 and land there too.
    assert st_.bordering[0].tolist() == [0, 1, 9, 10, 11]
    assert st_.bordering[1].tolist() == list(range(2, 9))
    assert st_.leaf_count.tolist() == [12, 7]
    assert st_.height.tolist() == [4.0, 3.0]


def test_appendix_example_with_leaf_sides():
    tree, ids = appendix_tree()
    st_ = build_structure_tree(tree, 3)
    assert st_.td_node == [ids[k] for k in ("n1", "n2", "n4", "n5", "n3")]
    assert st_.parent == [-1, 0, 1, 1, 0]
    assert [b.tolist() for b in st_.bordering] == [[0, 1], [], [2, 3, 4, 5], [6, 7, 8], [9, 10, 11]]
    assert st_.height.tolist() == [4.0, 3.0, 2.0, 2.0, 2.5]
    assert st_.leaf_count.tolist() == [12, 7, 4, 3, 3]


def test_two_mu_sized_halves():
    mu = 3
    merges = [(0, 1, 1.0), (6, 2, 1.0), (3, 4, 1.0), (8, 5, 1.0), (7, 9, 4.0)]
    tree = tree_from_merges(6, merges)
    st_ = build_structure_tree(tree, mu)
    assert st_.parent == [-1, 0, 0]
    assert [b.tolist() for b in st_.bordering] == [[], [0, 1, 2], [3, 4, 5]]
    # Without leaf sides only the root split is left.
    st_ = build_structure_tree(tree, mu, leaf_sides=False)
    assert st_.n_nodes == 1 and st_.children == [[]]
    assert st_.bordering[0].tolist() == list(range(6))


def test_no_qualifying_node():
    tree = build_dc_tree(3, [MstEdge(0, 1, 1.0), MstEdge(1, 2, 2.0)])
    st_ = build_structure_tree(tree, 2)
    assert st_.n_nodes == 1 and st_.leaf_count[0] == 3
    labels = extract_clusters(st_)
    assert labels.k == 1 and labels.noise_ratio == 0.0


@pytest.mark.parametrize("leaf_sides", [True, False])
@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("mu", [2, 3, 5])
def test_structure_tree_recount(seed, mu, leaf_sides):
    x = np.random.default_rng(seed).normal(size=(60, 2))
    tree, _ = dc_tree_from_data(x, 2)
    st_ = build_structure_tree(tree, mu, leaf_sides)
    everything = np.concatenate(st_.bordering)
    assert sorted(everything.tolist()) == list(range(60))
    for a in range(st_.n_nodes):
        for c in st_.children[a]:
            assert st_.leaf_count[c] >= mu
            assert st_.height[c] <= st_.height[a]
            assert set(st_.members(c)) <= set(st_.members(a))
        if a:
            assert st_.leaf_count[a] >= mu
        v = st_.td_node[a]
        is_split = v >= tree.n and min(tree.leaf_count[list(tree.children(v))]) >= mu
        if st_.children[a] or not leaf_sides:
            assert is_split or st_.n_nodes == 1
        else:
            # a leaf side: exactly the dc-tree node's leaves, nothing splits below
            assert st_.members(a).tolist() == sorted(tree.leaves(v).tolist())
            inner = [u for u in range(tree.n, 2 * tree.n - 1) if tree.leaf_count[u] <= tree.leaf_count[v]
                     and set(tree.leaves(u)) <= set(tree.leaves(v))]
            assert not any(min(tree.leaf_count[list(tree.children(u))]) >= mu for u in inner)
        assert st_.leaf_count[a] == len(st_.members(a))
    assert st_.leaf_count[0] == 60


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("leaf_sides", [True, False])
def test_raising_mu_never_adds_nodes(seed, leaf_sides):
    x = np.random.default_rng(seed).normal(size=(80, 2))
    tree, _ = dc_tree_from_data(x, 3)
    counts = [build_structure_tree(tree, mu, leaf_sides).n_nodes for mu in range(2, 12)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_stability_values():
    st_ = StructureTree.from_parents([-1, 0], [2.0, 0.5], [range(6), range(6, 10)])
    assert stability(st_, 1) == pytest.approx(6.0)
    assert stability(st_, 0) == pytest.approx(5.0)
    flat = StructureTree.from_parents([-1, 0], [2.0, 2.0], [range(6), range(6, 10)])
    assert stability(flat, 1) == 0.0
    zero = StructureTree.from_parents([-1, 0], [1.0, 0.0], [range(6), range(6, 10)])
    assert stability(zero, 1) == math.inf


def test_extract_two_children_beat_root():
    # Root at 10, two tight children; root-attached points become noise.
    st_ = StructureTree.from_parents([-1, 0, 0], [10.0, 1.0, 1.0], [[0, 1], range(2, 8), range(8, 14)])
    out = extract_clusters(st_)
    assert out.k == 2
    assert out.labels[:2].tolist() == [NOISE, NOISE]
    assert set(out.labels[2:8]) == {0} and set(out.labels[8:]) == {1}
    assert out.nodes == (1, 2)


def test_extract_single_root():
    st_ = StructureTree.from_parents([-1], [1.0], [range(7)])
    out = extract_clusters(st_)
    assert out.k == 1 and out.noise_ratio == 0.0


def test_extract_tie_prefers_children():
    # Root stability 12/2 = 6 equals the children's 3 + 3.
    st_ = StructureTree.from_parents([-1, 0, 0], [2.0, 1.0, 1.0], [[], range(6), range(6, 12)])
    assert stability(st_, 0) == 6.0
    assert stability(st_, 1) + stability(st_, 2) == 6.0
    assert extract_clusters(st_).k == 2


def random_structure_tree(rng, max_nodes=12):
    m = int(rng.integers(1, max_nodes + 1))
    parent = [-1] + [int(rng.integers(0, a)) for a in range(1, m)]
    height = np.empty(m)
    height[0] = rng.uniform(1.0, 10.0)
    for a in range(1, m):
        height[a] = height[parent[a]] * rng.uniform(0.05, 1.0)
    sizes = rng.integers(1, 6, size=m)
    start = np.concatenate([[0], np.cumsum(sizes)])
    bordering = [range(start[a], start[a + 1]) for a in range(m)]
    return StructureTree.from_parents(parent, height, bordering)


def emitted_total(st_, out):
    s = st_.stabilities()
    return math.fsum(s[a] for a in sorted(out.nodes))


@pytest.mark.parametrize("seed", range(40))
def test_extraction_is_optimal(seed):
    rng = np.random.default_rng(seed)
    st_ = random_structure_tree(rng)
    out = extract_clusters(st_)
    assert emitted_total(st_, out) == antichain_max(st_.parent, st_.stabilities())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_extraction_partition_and_flags(seed):
    rng = np.random.default_rng(seed)
    st_ = random_structure_tree(rng)
    out = extract_clusters(st_)
    # Emitted nodes form an antichain and clusters are exactly their members.
    for a in out.nodes:
        p = st_.parent[a]
        while p != -1:
            assert p not in out.nodes
            p = st_.parent[p]
    for lab, a in enumerate(out.nodes):
        assert np.flatnonzero(out.labels == lab).tolist() == st_.members(a).tolist()
    assert out.k == len(out.nodes)


def test_cut_at_epsilon_line_example():
    edges = [MstEdge(0, 1, 1.0), MstEdge(1, 2, 2.0), MstEdge(2, 3, 4.0)]
    tree = build_dc_tree(4, edges)
    out = cut_at_epsilon(tree, 2.5, 2)
    assert out.labels.tolist() == [0, 0, 0, NOISE]
    assert cut_at_epsilon(tree, 10.0, 2).labels.tolist() == [0, 0, 0, 0]
    assert cut_at_epsilon(tree, 0.5, 2).labels.tolist() == [NOISE] * 4
    with pytest.raises(ValueError):
        cut_at_epsilon(tree, 0.0, 2)


@pytest.mark.parametrize("seed", range(5))
def test_cut_just_below_root_gives_root_split(seed):
    x = np.random.default_rng(seed).normal(size=(40, 2))
    tree, _ = dc_tree_from_data(x, 2)
    heights = np.unique(tree.height[tree.n :])
    eps = (heights[-1] + heights[-2]) / 2 if len(heights) > 1 else heights[-1] / 2
    out = cut_at_epsilon(tree, eps, 1)
    lft, rgt = tree.children(tree.root)
    assert out.k == 2
    assert len(set(out.labels[tree.leaves(lft)])) == 1
    assert len(set(out.labels[tree.leaves(rgt)])) == 1


def test_assign_noise_identity_and_tie():
    x = np.array([[0.0], [1.0], [2.0]])
    same = ClusterAssignment([0, 1, 1])
    assert assign_noise_1nn(x, same).labels.tolist() == [0, 1, 1]
    tie = ClusterAssignment([0, NOISE, 1])
    assert assign_noise_1nn(x, tie).labels.tolist() == [0, 0, 1]
    with pytest.raises(ValueError, match="no clusters"):
        assign_noise_1nn(x, ClusterAssignment([NOISE] * 3))


@pytest.mark.parametrize("seed", range(5))
def test_assign_noise_matches_scan(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 3))
    labels = rng.integers(-1, 3, size=30)
    labels[0] = 0
    out = assign_noise_1nn(x, ClusterAssignment(labels), chunk=7)
    assert out.labels.tolist() == naive_nearest_labels(x, labels.tolist())
    assert out.noise_ratio == 0.0


def test_label_and_tree_files(tmp_path):
    write_labels([0, -1, 2], tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text() == "point_index,label\n0,0\n1,-1\n2,2\n"
    assert read_labels(tmp_path / "l.csv").tolist() == [0, -1, 2]
    tree, _ = appendix_tree()
    write_structure_tree(build_structure_tree(tree, 3), tmp_path / "s.txt")
    lines = (tmp_path / "s.txt").read_text().splitlines()
    assert lines[1].split() == ["0", "-1", "4.0", "12", "3.0"]

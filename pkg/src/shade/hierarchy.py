"""Structure tree, cluster stability and flat cluster extraction.

The structure tree keeps the dc-tree nodes at which the data splits into two
parts of at least ``mu`` points each, plus (by default) the sides of those
splits that never split again. Chains of smaller splits in between are
path-compressed into the kept node below them; the points they shed become
bordering points of that node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .dc_core import DcTree

__all__ = [
    "NOISE",
    "StructureTree",
    "ClusterAssignment",
    "build_structure_tree",
    "stability",
    "extract_clusters",
    "cut_at_epsilon",
    "assign_noise_1nn",
    "write_structure_tree",
    "write_labels",
    "read_labels",
]

NOISE = -1


@dataclass
class StructureTree:
    """Condensed cluster hierarchy.

    Node 0 is the root and every parent id is smaller than its children's.
    ``bordering[a]`` holds the points attached directly at node ``a``;
    ``leaf_count[a]`` counts those plus everything attached below ``a``.
    ``td_node[a]`` is the dc-tree node that defines ``a`` (its height).
    """

    n: int
    mu: int
    parent: list[int]
    children: list[list[int]]
    height: np.ndarray
    leaf_count: np.ndarray
    bordering: list[np.ndarray]
    td_node: list[int] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    def members(self, node: int) -> np.ndarray:
        out = []
        stack = [node]
        while stack:
            a = stack.pop()
            out.append(self.bordering[a])
            stack.extend(self.children[a])
        return np.sort(np.concatenate(out)) if out else np.empty(0, dtype=np.int64)

    def stabilities(self) -> np.ndarray:
        return np.array([stability(self, a) for a in range(self.n_nodes)])

    @classmethod
    def from_parents(cls, parent, height, bordering, mu: int = 2) -> "StructureTree":
        """Assemble a tree from a parent array (root has parent -1, listed first)."""
        m = len(parent)
        children: list[list[int]] = [[] for _ in range(m)]
        for a, p in enumerate(parent):
            if p != -1:
                if p >= a:
                    raise ValueError("parents must precede their children")
                children[p].append(a)
        bordering = [np.asarray(b, dtype=np.int64) for b in bordering]
        count = np.array([len(b) for b in bordering], dtype=np.int64)
        for a in range(m - 1, 0, -1):
            count[parent[a]] += count[a]
        n = int(sum(len(b) for b in bordering))
        return cls(n, mu, list(parent), children, np.asarray(height, float), count, bordering, [-1] * m)


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    nodes: tuple[int, ...] = ()  # structure-tree node of each cluster, when known

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def k(self) -> int:
        return len(np.unique(self.labels[self.labels != NOISE]))

    @property
    def noise_ratio(self) -> float:
        if len(self.labels) == 0:
            return 0.0
        return float(np.count_nonzero(self.labels == NOISE)) / len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)


def build_structure_tree(tree: DcTree, mu: int, leaf_sides: bool = True) -> StructureTree:
    """Condense a dc-tree to its splits into two parts of at least `mu` points.

    With `leaf_sides` (the default) each side of a split that holds at least
    `mu` points but never splits again becomes a leaf cluster at the height of
    its own dc-tree node, the level at which the whole side is connected.
    Without it such sides dissolve into bordering points of the split above,
    so only split nodes are kept.
    """
    if mu < 2:
        raise ValueError(f"mu must be >= 2 for the structure tree, got {mu}")
    n = tree.n
    count = tree.leaf_count

    def is_split(a: int) -> bool:
        return a >= n and count[tree.left[a]] >= mu and count[tree.right[a]] >= mu

    parent: list[int] = []
    height: list[float] = []
    td_node: list[int] = []
    bordering: list[list[np.ndarray]] = []

    # Each work item is the top of one side of a split (or the dc-tree root)
    # together with the structure node it hangs from (-1 for none yet).
    stack = [(tree.root, -1)]
    while stack:
        v, sparent = stack.pop()
        top = v
        shed: list[np.ndarray] = []
        # Follow the only branch that can still contain a split. A non-split
        # node has at most one child with >= mu leaves.
        while True:
            if v < n:
                shed.append(np.array([v]))
                v = -1
                break
            if is_split(v):
                break
            a, b = int(tree.left[v]), int(tree.right[v])
            big = a if count[a] >= mu else b if count[b] >= mu else -1
            if big == -1:
                shed.append(tree.leaves(v))
                v = -1
                break
            shed.append(tree.leaves(b if big == a else a))
            v = big
        if v == -1:
            if sparent == -1:
                # Nothing qualifies: the root alone holds every point.
                parent.append(-1)
                height.append(float(tree.height[tree.root]))
                td_node.append(tree.root)
                bordering.append(shed)
            elif leaf_sides and count[top] >= mu:
                parent.append(sparent)
                height.append(float(tree.height[top]))
                td_node.append(top)
                bordering.append(shed)
            else:
                bordering[sparent].extend(shed)
            continue
        node = len(parent)
        parent.append(sparent)
        height.append(float(tree.height[v]))
        td_node.append(v)
        bordering.append(shed)
        stack.append((int(tree.right[v]), node))
        stack.append((int(tree.left[v]), node))

    m = len(parent)
    children: list[list[int]] = [[] for _ in range(m)]
    for a in range(1, m):
        children[parent[a]].append(a)
    flat = [
        np.sort(np.concatenate(b)).astype(np.int64) if b else np.empty(0, dtype=np.int64)
        for b in bordering
    ]
    leaf_count = np.array([len(b) for b in flat], dtype=np.int64)
    for a in range(m - 1, 0, -1):
        leaf_count[parent[a]] += leaf_count[a]
    return StructureTree(n, mu, parent, children, np.array(height), leaf_count, flat, td_node)


def stability(stree: StructureTree, node: int) -> float:
    """Density range of the cluster at `node` times its size.

    The root's parent is taken to sit at infinite distance. A node at height
    zero (coincident points) gets ``inf``.
    """
    h = float(stree.height[node])
    if h == 0.0:
        return math.inf
    p = stree.parent[node]
    outer = 0.0 if p == -1 else 1.0 / float(stree.height[p])
    return (1.0 / h - outer) * int(stree.leaf_count[node])


def extract_clusters(stree: StructureTree) -> ClusterAssignment:
    """Most stable flat clustering: bottom-up flagging, then top-down selection."""
    m = stree.n_nodes
    score = stree.stabilities()
    flagged = np.zeros(m, dtype=bool)
    for a in range(m - 1, -1, -1):  # children always have larger ids
        kids = stree.children[a]
        if not kids:
            flagged[a] = True
            continue
        below = math.fsum(score[b] for b in kids)
        if score[a] > below:
            flagged[a] = True
        else:
            score[a] = below

    labels = np.full(stree.n, NOISE, dtype=np.int64)
    chosen: list[int] = []
    stack = [0] if m else []
    while stack:
        a = stack.pop()
        if flagged[a]:
            labels[stree.members(a)] = len(chosen)
            chosen.append(a)
            continue
        stack.extend(reversed(stree.children[a]))
    return ClusterAssignment(labels, tuple(chosen))


def cut_at_epsilon(tree: DcTree, epsilon: float, mu: int) -> ClusterAssignment:
    """Components of the dc-tree joined at heights <= `epsilon`; small ones are noise."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    n = tree.n
    comp = np.arange(tree.n_nodes)
    for a in range(n, tree.n_nodes):
        if tree.height[a] <= epsilon:
            comp[a] = a
            comp[tree.left[a]] = a
            comp[tree.right[a]] = a
    # Resolve each leaf to its highest ancestor reachable through kept merges.
    top = comp.copy()
    for a in range(tree.n_nodes - 1, -1, -1):
        if comp[a] != a:
            top[a] = top[comp[a]]
    roots = top[:n]
    labels = np.full(n, NOISE, dtype=np.int64)
    next_label = 0
    seen: dict[int, int] = {}
    sizes = np.bincount(roots, minlength=tree.n_nodes)
    for i in range(n):
        r = int(roots[i])
        if sizes[r] < mu:
            continue
        if r not in seen:
            seen[r] = next_label
            next_label += 1
        labels[i] = seen[r]
    return ClusterAssignment(labels)


def assign_noise_1nn(embedding, assignment: ClusterAssignment, chunk: int = 1024) -> ClusterAssignment:
    """Give each noise point the label of its nearest non-noise point.

    Ties go to the non-noise point with the lower index.
    """
    x = np.asarray(embedding, dtype=np.float64)
    labels = assignment.labels
    if len(x) != len(labels):
        raise ValueError(f"embedding has {len(x)} rows but {len(labels)} labels")
    clustered = np.flatnonzero(labels != NOISE)
    if len(clustered) == 0:
        raise ValueError("no clusters to assign to: every point is noise")
    noise = np.flatnonzero(labels == NOISE)
    out = labels.copy()
    for s in range(0, len(noise), chunk):
        rows = noise[s : s + chunk]
        d = cdist(x[rows], x[clustered])
        out[rows] = labels[clustered[np.argmin(d, axis=1)]]
    return ClusterAssignment(out, assignment.nodes)


def write_structure_tree(stree: StructureTree, path) -> None:
    """Node-per-line dump: ``node_id parent_id height leaf_count stability``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# node_id parent_id height leaf_count stability\n")
        for a in range(stree.n_nodes):
            fh.write(
                f"{a} {stree.parent[a]} {float(stree.height[a])!r} "
                f"{int(stree.leaf_count[a])} {stability(stree, a)!r}\n"
            )


def write_labels(labels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("point_index,label\n")
        for i, lab in enumerate(np.asarray(labels, dtype=np.int64)):
            fh.write(f"{i},{lab}\n")


def read_labels(path) -> np.ndarray:
    """Read a ``point_index,label`` CSV; rows may come in any order."""
    index, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or (lineno == 1 and not line.replace(",", "").lstrip("-").isdigit()):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'point_index,label', got {line!r}")
            try:
                index.append(int(parts[0]))
                labels.append(int(parts[1]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer value in {line!r}") from None
    out = np.full(len(index), NOISE, dtype=np.int64)
    if sorted(index) != list(range(len(index))):
        raise ValueError(f"{path}: point indices must cover 0..{len(index) - 1} exactly once")
    out[index] = labels
    return out

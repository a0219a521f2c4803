"""Density-connectivity distance: core distances, mutual reachability,
the mutual-reachability MST and the ultrametric dendrogram built from it.

Core distances exclude the query point: ``core_dist[i]`` is the distance to
the ``mu``-th nearest *other* point. Implementations that count the point
itself are off by one in ``mu``.

Node numbering of :class:`DcTree` follows the usual linkage convention:
leaves are ``0..n-1`` (the point indices), internal nodes are
``n..2n-2`` in merge order, and the root is ``2n-2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

__all__ = [
    "MstEdge",
    "DcTree",
    "pairwise_euclidean",
    "core_distances",
    "mutual_reachability",
    "mutual_reachability_matrix",
    "build_mst",
    "build_dc_tree",
    "dc_distance",
    "dc_distance_submatrix",
    "dc_tree_from_data",
    "write_tree",
    "read_tree",
]

DEFAULT_DENSE_CACHE_THRESHOLD = 2048


def _as_finite_matrix(data) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d data matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise ValueError(f"non-finite value at row {bad[0]}, column {bad[1]}")
    return x


def pairwise_euclidean(data) -> np.ndarray:
    """Dense symmetric matrix of Euclidean distances between the rows of `data`."""
    x = _as_finite_matrix(data)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 points")
    return squareform(pdist(x))


def core_distances(distances: np.ndarray, mu: int) -> np.ndarray:
    """Distance from each point to its `mu`-th nearest other point.

    Parameters
    ----------
    distances : ndarray of shape (n, n)
        Symmetric distance matrix with zero diagonal.
    mu : int
        Neighbourhood size, ``1 <= mu <= n - 1``.
    """
    d = np.asarray(distances, dtype=np.float64)
    n = d.shape[0]
    if mu < 1:
        raise ValueError(f"mu must be >= 1, got {mu}")
    if mu >= n:
        raise ValueError(f"insufficient points for mu={mu}: n={n}, need n >= mu + 1")
    # The diagonal zero sits at rank 0 only if no off-diagonal zero precedes it;
    # masking it with +inf makes the selection independent of that.
    work = d.copy()
    np.fill_diagonal(work, np.inf)
    return np.partition(work, mu - 1, axis=1)[:, mu - 1]


def mutual_reachability(d_e: float, core_i: float, core_j: float) -> float:
    """``max(d_e, core_i, core_j)``."""
    for v in (d_e, core_i, core_j):
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"mutual reachability inputs must be finite and >= 0, got {v}")
    return max(d_e, core_i, core_j)


def mutual_reachability_matrix(distances: np.ndarray, core: np.ndarray) -> np.ndarray:
    mr = np.maximum(distances, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


@dataclass(frozen=True)
class MstEdge:
    u: int
    v: int
    weight: float

    def key(self) -> tuple[float, int, int]:
        """Total order used for tie-breaking: weight, then sorted endpoints."""
        return (self.weight, min(self.u, self.v), max(self.u, self.v))


def build_mst(n: int, weight: np.ndarray | Callable[[int], np.ndarray]) -> list[MstEdge]:
    """Dense Prim's algorithm under the total order ``(w, min(u,v), max(u,v))``.

    `weight` is either an ``(n, n)`` symmetric matrix or a callable returning
    the row of weights from one vertex to all vertices. With a strict total
    order on edges the MST is unique, so the edge set does not depend on the
    start vertex.
    """
    if n < 2:
        raise ValueError(f"need at least 2 points for an MST, got {n}")
    if callable(weight):
        row = weight
    else:
        w = np.asarray(weight, dtype=np.float64)
        if w.shape != (n, n):
            raise ValueError(f"weight matrix has shape {w.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(w)):
            raise ValueError("MST weights must be finite")
        row = w.__getitem__

    idx = np.arange(n)
    in_tree = np.zeros(n, dtype=bool)
    key = np.full(n, np.inf)
    lo = np.full(n, n, dtype=np.int64)  # sorted endpoints of the best edge
    hi = np.full(n, n, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)

    edges: list[MstEdge] = []
    current = 0
    for _ in range(n - 1):
        in_tree[current] = True
        r = np.asarray(row(current), dtype=np.float64)
        if not np.all(np.isfinite(r)):
            raise ValueError(f"MST weights from vertex {current} are not finite")
        c_lo = np.minimum(idx, current)
        c_hi = np.maximum(idx, current)
        better = (r < key) | (
            (r == key) & ((c_lo < lo) | ((c_lo == lo) & (c_hi < hi)))
        )
        better &= ~in_tree
        key[better] = r[better]
        lo[better] = c_lo[better]
        hi[better] = c_hi[better]
        parent[better] = current

        cand = np.flatnonzero(~in_tree)
        kmin = key[cand].min()
        tied = cand[key[cand] == kmin]
        if len(tied) > 1:
            order = np.lexsort((hi[tied], lo[tied]))
            nxt = int(tied[order[0]])
        else:
            nxt = int(tied[0])
        edges.append(MstEdge(int(parent[nxt]), nxt, float(key[nxt])))
        current = nxt
    return edges


@dataclass
class DcTree:
    """Binary ultrametric dendrogram over ``n`` points.

    Arrays are indexed by node id (``2n - 1`` nodes). Leaves have height 0,
    children ``-1`` and leaf count 1. ``parent[root] == -1``.
    """

    n: int
    left: np.ndarray
    right: np.ndarray
    height: np.ndarray
    leaf_count: np.ndarray
    parent: np.ndarray
    dense_cache_threshold: int = DEFAULT_DENSE_CACHE_THRESHOLD
    _order: np.ndarray | None = field(default=None, init=False, repr=False)
    _gap_table: list[np.ndarray] | None = field(default=None, init=False, repr=False)
    _dense: np.ndarray | None = field(default=None, init=False, repr=False)

    @property
    def root(self) -> int:
        return 2 * self.n - 2

    @property
    def n_nodes(self) -> int:
        return 2 * self.n - 1

    def is_leaf(self, node: int) -> bool:
        return node < self.n

    def children(self, node: int) -> tuple[int, int] | tuple[()]:
        if node < self.n:
            return ()
        return int(self.left[node]), int(self.right[node])

    def leaves(self, node: int) -> np.ndarray:
        """Point indices under `node`, in dendrogram order."""
        out = []
        stack = [node]
        while stack:
            a = stack.pop()
            if a < self.n:
                out.append(a)
            else:
                stack.append(int(self.right[a]))
                stack.append(int(self.left[a]))
        return np.asarray(out, dtype=np.int64)

    def _accelerate(self) -> None:
        # Leaves in dendrogram order; the merge height between consecutive
        # leaves is the height of their LCA, and d_dc(i, j) is the maximum
        # gap height between their positions. A sparse table answers that
        # range maximum in O(1).
        if self._order is not None:
            return
        order = self.leaves(self.root)
        pos = np.empty(self.n, dtype=np.int64)
        pos[order] = np.arange(self.n)
        gaps = np.zeros(max(self.n - 1, 1))
        # Each internal node separates the last leaf of its left subtree from
        # the first leaf of its right subtree.
        first = np.empty(self.n_nodes, dtype=np.int64)
        last = np.empty(self.n_nodes, dtype=np.int64)
        first[: self.n] = pos
        last[: self.n] = pos
        for a in range(self.n, self.n_nodes):
            lft, rgt = self.left[a], self.right[a]
            first[a] = first[lft]
            last[a] = last[rgt]
            gaps[last[lft]] = self.height[a]
        # Row k holds the max over gaps[i : i + 2**k]; the ragged tail of each
        # row is padding that queries never touch.
        levels = max(1, int(len(gaps)).bit_length())
        table = np.zeros((levels, len(gaps)))
        table[0] = gaps
        span = 1
        for k in range(1, levels):
            table[k, : len(gaps) - 2 * span + 1] = np.maximum(
                table[k - 1, : len(gaps) - 2 * span + 1], table[k - 1, span : len(gaps) - span + 1]
            )
            span *= 2
        self._order = pos
        self._gap_table = table

    def _range_distance(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        self._accelerate()
        pi = self._order[i]
        pj = self._order[j]
        a = np.minimum(pi, pj)
        b = np.maximum(pi, pj)  # gaps a .. b-1
        length = b - a
        out = np.zeros(np.broadcast(a, b).shape)
        nz = length > 0
        if np.any(nz):
            ln = length[nz]
            lvl = np.frexp(ln.astype(np.float64))[1] - 1  # floor(log2(ln))
            t = self._gap_table
            out[nz] = np.maximum(t[lvl, a[nz]], t[lvl, b[nz] - (1 << lvl)])
        return out

    def dense_matrix(self) -> np.ndarray:
        """Full ``n x n`` matrix of d_dc values."""
        if self._dense is not None:
            return self._dense
        ii, jj = np.meshgrid(np.arange(self.n), np.arange(self.n), indexing="ij")
        dense = self._range_distance(ii.ravel(), jj.ravel()).reshape(self.n, self.n)
        if self.n <= self.dense_cache_threshold:
            self._dense = dense
        return dense


def build_dc_tree(
    n: int,
    edges: Sequence[MstEdge],
    dense_cache_threshold: int = DEFAULT_DENSE_CACHE_THRESHOLD,
) -> DcTree:
    """Kruskal-style union-find pass over MST edges in ascending key order."""
    if n < 1:
        raise ValueError("need at least one point")
    if len(edges) != n - 1:
        raise ValueError(f"spanning tree over {n} points needs {n - 1} edges, got {len(edges)}")
    m = 2 * n - 1
    left = np.full(m, -1, dtype=np.int64)
    right = np.full(m, -1, dtype=np.int64)
    height = np.zeros(m)
    leaf_count = np.ones(m, dtype=np.int64)
    parent = np.full(m, -1, dtype=np.int64)

    uf = np.arange(n)
    top = np.arange(n)  # tree node currently representing each component root

    def find(x: int) -> int:
        r = x
        while uf[r] != r:
            r = uf[r]
        while uf[x] != r:
            uf[x], x = r, uf[x]
        return r

    nxt = n
    for e in sorted(edges, key=MstEdge.key):
        if not (0 <= e.u < n and 0 <= e.v < n) or e.u == e.v:
            raise ValueError(f"invalid edge ({e.u}, {e.v}) for {n} points")
        ru, rv = find(e.u), find(e.v)
        if ru == rv:
            raise ValueError(f"edge ({e.u}, {e.v}) closes a cycle; edges are not a spanning tree")
        a, b = int(top[ru]), int(top[rv])
        if a > b:
            a, b = b, a
        left[nxt], right[nxt] = a, b
        height[nxt] = e.weight
        leaf_count[nxt] = leaf_count[a] + leaf_count[b]
        parent[a] = parent[b] = nxt
        uf[rv] = ru
        top[ru] = nxt
        nxt += 1
    return DcTree(n, left, right, height, leaf_count, parent, dense_cache_threshold)


def dc_distance(tree: DcTree, i: int, j: int) -> float:
    """Height of the lowest common ancestor of leaves `i` and `j`."""
    for v in (i, j):
        if not 0 <= v < tree.n:
            raise IndexError(f"point index {v} out of range for {tree.n} points")
    if i == j:
        return 0.0
    seen = set()
    a = i
    while a != -1:
        seen.add(a)
        a = int(tree.parent[a])
    b = j
    while b not in seen:
        b = int(tree.parent[b])
    return float(tree.height[b])


def dc_distance_submatrix(tree: DcTree, indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= tree.n):
        raise IndexError(f"batch indices out of range for {tree.n} points")
    if tree.n <= tree.dense_cache_threshold:
        return tree.dense_matrix()[np.ix_(idx, idx)]
    # symmetric with a zero diagonal: query the upper triangle only
    m = len(idx)
    iu, ju = np.triu_indices(m, k=1)
    out = np.zeros((m, m))
    out[iu, ju] = tree._range_distance(idx[iu], idx[ju])
    out[ju, iu] = out[iu, ju]
    return out


def dc_tree_from_data(
    data, mu: int, dense_cache_threshold: int = DEFAULT_DENSE_CACHE_THRESHOLD
) -> tuple[DcTree, np.ndarray]:
    """Core distances, mutual-reachability MST and dc-tree in one go.

    Returns the tree and the core distances.
    """
    x = _as_finite_matrix(data)
    n = x.shape[0]
    dist = pairwise_euclidean(x)
    core = core_distances(dist, mu)
    mr = mutual_reachability_matrix(dist, core)
    del dist
    edges = build_mst(n, mr)
    return build_dc_tree(n, edges, dense_cache_threshold), core


def write_tree(tree: DcTree, path, extra: dict[str, Sequence[float]] | None = None) -> None:
    """Write ``node_id parent_id height leaf_count`` lines, leaves first.

    Leaf ids are the point indices. `extra` adds named columns (one value
    per node), written after the four fixed ones with a header line.
    """
    cols = ["node_id", "parent_id", "height", "leaf_count"]
    extra = extra or {}
    cols += list(extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(cols) + "\n")
        for a in range(tree.n_nodes):
            row = [str(a), str(int(tree.parent[a])), repr(float(tree.height[a])), str(int(tree.leaf_count[a]))]
            row += [repr(float(extra[c][a])) for c in extra]
            fh.write(" ".join(row) + "\n")


def read_tree(path, dense_cache_threshold: int = DEFAULT_DENSE_CACHE_THRESHOLD) -> DcTree:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])))
    m = len(rows)
    if m % 2 == 0:
        raise ValueError(f"{path}: a binary tree over n leaves has 2n-1 nodes, got {m}")
    n = (m + 1) // 2
    parent = np.full(m, -1, dtype=np.int64)
    height = np.zeros(m)
    leaf_count = np.ones(m, dtype=np.int64)
    for node, par, h, cnt in rows:
        if not 0 <= node < m:
            raise ValueError(f"{path}: node id {node} out of range")
        parent[node], height[node], leaf_count[node] = par, h, cnt
    left = np.full(m, -1, dtype=np.int64)
    right = np.full(m, -1, dtype=np.int64)
    for node in range(m):
        p = parent[node]
        if p == -1:
            continue
        if left[p] == -1:
            left[p] = node
        elif right[p] == -1:
            right[p] = node
        else:
            raise ValueError(f"{path}: node {p} has more than two children")
    return DcTree(n, left, right, height, leaf_count, parent, dense_cache_threshold)

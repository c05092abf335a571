"""Finite and lazily enumerated graphs, balls, BFS distances and clusters.

Vertices are canonical integer tuples. An infinite transitive graph is given
as a :class:`RootedGraphOracle` (a root plus a pure neighbour function); every
finite computation happens on a :class:`FiniteGraph`, usually a ball cut out
of an oracle by :func:`ball`.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

VertexId = tuple

DEFAULT_BALL_CAP = 5_000_000


class ResourceLimitError(RuntimeError):
    """Raised when a computation would exceed a configured size guard."""


class UnknownVertexError(KeyError):
    pass


@dataclass(frozen=True)
class RootedGraphOracle:
    """Lazily enumerable graph: a root and a deterministic neighbour function."""

    root: VertexId
    neighbors: Callable[[VertexId], list] = field(repr=False)
    label: str = ""

    def __str__(self):
        return self.label or repr(self.root)


@dataclass(frozen=True, eq=False)
class FiniteGraph:
    """Undirected simple graph on an ordered vertex list, stored as CSR.

    ``dist`` holds BFS distances from ``root`` when the graph is rooted.
    """

    vertices: tuple
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    root: VertexId | None = None
    dist: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_edges(cls, vertices: Sequence[VertexId], edges: Iterable[tuple[int, int]],
                   root: VertexId | None = None, dist=None) -> "FiniteGraph":
        vertices = tuple(vertices)
        n = len(vertices)
        pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise ValueError("self-loops are not allowed")
            lo = np.minimum(pairs[:, 0], pairs[:, 1])
            hi = np.maximum(pairs[:, 0], pairs[:, 1])
            key = np.unique(lo * n + hi)
            lo, hi = key // n, key % n
        else:
            lo = hi = np.zeros(0, dtype=np.int64)
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        mat = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n)).tocsr()
        mat.sort_indices()
        g = cls(vertices, mat.indptr.astype(np.int64), mat.indices.astype(np.int64), root)
        if root is not None:
            if dist is None:
                dist = bfs_distances(g, g.index[root])
            object.__setattr__(g, "dist", np.asarray(dist, dtype=np.int64))
        return g

    def __len__(self):
        return len(self.vertices)

    @cached_property
    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.vertices)}

    @property
    def root_index(self) -> int | None:
        return None if self.root is None else self.index[self.root]

    @cached_property
    def csr(self) -> csr_matrix:
        n = len(self.vertices)
        data = np.ones(len(self.indices), dtype=np.int8)
        return csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    @cached_property
    def adj(self) -> list:
        ptr, idx = self.indptr.tolist(), self.indices.tolist()
        return [idx[ptr[i]:ptr[i + 1]] for i in range(len(self.vertices))]

    @cached_property
    def edges(self) -> np.ndarray:
        """Edge array of shape (m, 2) with ``u < v``, lexicographically sorted."""
        rows = np.repeat(np.arange(len(self.vertices)), np.diff(self.indptr))
        mask = rows < self.indices
        return np.stack([rows[mask], self.indices[mask]], axis=1)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def radius(self) -> int | None:
        return None if self.dist is None else int(self.dist.max())

    def has_vertex(self, v: VertexId) -> bool:
        return v in self.index

    def idx(self, v: VertexId) -> int:
        try:
            return self.index[v]
        except KeyError:
            raise UnknownVertexError(v) from None

    def subgraph(self, keep: np.ndarray, root: VertexId | None = None) -> "FiniteGraph":
        """Induced subgraph on the vertices selected by a boolean mask (order kept)."""
        keep = np.asarray(keep, dtype=bool)
        new_index = np.full(len(self.vertices), -1, dtype=np.int64)
        new_index[keep] = np.arange(int(keep.sum()))
        e = self.edges
        both = keep[e[:, 0]] & keep[e[:, 1]]
        verts = [v for v, k in zip(self.vertices, keep) if k]
        return FiniteGraph.from_edges(verts, new_index[e[both]], root=root)


def ball(oracle: RootedGraphOracle, center: VertexId | None = None, r: int = 0,
         cap: int = DEFAULT_BALL_CAP, sphere_edges: bool = True) -> FiniteGraph:
    """The r-ball of ``oracle`` around ``center`` as a rooted finite graph.

    Vertices come in BFS discovery order, neighbours iterated in oracle order.
    With ``sphere_edges=False`` edges joining two vertices at distance exactly
    ``r`` are dropped, leaving only edges that lie on paths of length <= r
    from the centre.
    """
    if r < 0:
        raise ValueError("radius must be nonnegative")
    center = oracle.root if center is None else center
    nbrs = oracle.neighbors
    index = {center: 0}
    order = [center]
    dist = [0]
    src: list[int] = []
    dst: list[int] = []
    head = 0
    while head < len(order):
        v = order[head]
        dv = dist[head]
        if dv == r:
            break
        for w in nbrs(v):
            j = index.get(w)
            if j is None:
                j = len(order)
                if j >= cap:
                    raise ResourceLimitError(f"ball of radius {r} exceeds {cap} vertices")
                index[w] = j
                order.append(w)
                dist.append(dv + 1)
            src.append(head)
            dst.append(j)
        head += 1
    if sphere_edges:
        for i in range(head, len(order)):
            for w in nbrs(order[i]):
                j = index.get(w)
                if j is not None and dist[j] == r:
                    src.append(i)
                    dst.append(j)
    pairs = np.stack([np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)], axis=1)
    return FiniteGraph.from_edges(order, pairs, root=center, dist=dist)


def bfs_distances(graph: FiniteGraph, source, limit: int | None = None) -> np.ndarray:
    """Hop distances from one source index (or several, taking the minimum).

    Unreached vertices (or those beyond ``limit``) get -1.
    """
    multi = not np.isscalar(source)
    d = dijkstra(graph.csr, directed=False, indices=source, unweighted=True,
                 limit=np.inf if limit is None else limit + 0.5, min_only=multi)
    out = np.full(d.shape, -1, dtype=np.int64)
    finite = np.isfinite(d)
    out[finite] = d[finite].astype(np.int64)
    return out


def bfs_rows(graph: FiniteGraph, sources: Sequence[int], limit: int | None = None,
             chunk: int = 256):
    """Yield ``(source_chunk, distance_rows)`` for many sources, chunked to bound memory."""
    sources = np.asarray(sources, dtype=np.int64)
    for s in range(0, len(sources), chunk):
        part = sources[s:s + chunk]
        d = dijkstra(graph.csr, directed=False, indices=part, unweighted=True,
                     limit=np.inf if limit is None else limit + 0.5)
        out = np.full(d.shape, -1, dtype=np.int64)
        finite = np.isfinite(d)
        out[finite] = d[finite].astype(np.int64)
        yield part, out


def local_ball(graph: FiniteGraph, i: int, limit: int) -> dict:
    """Plain-Python bounded BFS from index ``i``: ``{index: distance}``."""
    adj = graph.adj
    seen = {i: 0}
    frontier = [i]
    for d in range(1, limit + 1):
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if y not in seen:
                    seen[y] = d
                    nxt.append(y)
        if not nxt:
            break
        frontier = nxt
    return seen


def distance(graph: FiniteGraph, u: VertexId, v: VertexId) -> int | None:
    """Shortest-path distance inside ``graph``; ``None`` when unreachable."""
    iu, iv = graph.idx(u), graph.idx(v)
    if iu == iv:
        return 0
    seen = {iu}
    frontier = deque([(iu, 0)])
    adj = graph.adj
    while frontier:
        x, d = frontier.popleft()
        for y in adj[x]:
            if y == iv:
                return d + 1
            if y not in seen:
                seen.add(y)
                frontier.append((y, d + 1))
    return None


def cluster_labels(graph: FiniteGraph, open_, mode: str = "site") -> np.ndarray:
    """Component label per vertex; closed sites get -1 in site mode.

    Labels are canonical: components are numbered by their smallest vertex.
    """
    n = len(graph.vertices)
    e = graph.edges
    open_ = np.asarray(open_, dtype=bool)
    if mode == "site":
        if len(open_) != n:
            raise ValueError("site predicate length does not match vertex count")
        keep = open_[e[:, 0]] & open_[e[:, 1]]
    elif mode == "bond":
        if len(open_) != len(e):
            raise ValueError("bond predicate length does not match edge count")
        keep = open_
    else:
        raise ValueError(f"unknown mode {mode!r}")
    ek = e[keep]
    mat = coo_matrix((np.ones(len(ek), dtype=np.int8), (ek[:, 0], ek[:, 1])), shape=(n, n))
    _, raw = connected_components(mat, directed=False)
    # renumber by first occurrence so labels do not depend on scipy internals
    _, first = np.unique(raw, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    labels = rank[raw]
    if mode == "site":
        labels = np.where(open_, labels, -1)
    return labels


def clusters(graph: FiniteGraph, open_, mode: str = "site") -> list[np.ndarray]:
    """Open clusters as sorted index arrays, ordered by smallest member.

    Site mode keeps only open vertices; bond mode keeps every vertex, so
    isolated vertices show up as singleton components.
    """
    labels = cluster_labels(graph, open_, mode)
    valid = labels >= 0
    idx = np.flatnonzero(valid)
    lab = labels[valid]
    order = np.argsort(lab, kind="stable")
    lab, idx = lab[order], idx[order]
    cuts = np.flatnonzero(np.diff(lab)) + 1
    return [np.sort(part) for part in np.split(idx, cuts)] if len(idx) else []


# -- small fixture graphs -------------------------------------------------------

def path_graph(n: int, root: int | None = None) -> FiniteGraph:
    verts = [(i,) for i in range(n)]
    return FiniteGraph.from_edges(verts, [(i, i + 1) for i in range(n - 1)],
                                  root=None if root is None else (root,))


def cycle_graph(n: int) -> FiniteGraph:
    verts = [(i,) for i in range(n)]
    return FiniteGraph.from_edges(verts, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n: int) -> FiniteGraph:
    verts = [(i,) for i in range(n)]
    return FiniteGraph.from_edges(verts, [(i, j) for i in range(n) for j in range(i + 1, n)])


def oracle_from_graph(graph: FiniteGraph, root: VertexId | None = None, label: str = "") -> RootedGraphOracle:
    adj = graph.adj
    verts = graph.vertices
    index = graph.index
    root = graph.root if root is None else root
    if root is None:
        root = verts[0]
    return RootedGraphOracle(root, lambda v: [verts[j] for j in adj[index[v]]], label)


# -- text edge-list fixture format ----------------------------------------------

def dumps_edge_list(graph: FiniteGraph) -> str:
    root = -1 if graph.root is None else graph.root_index
    lines = [f"vertices {len(graph.vertices)} root {root}"]
    lines += ["V " + " ".join(str(c) for c in v) for v in graph.vertices]
    lines += [f"E {i} {j}" for i, j in graph.edges.tolist()]
    return "\n".join(lines) + "\n"


def loads_edge_list(text: str) -> FiniteGraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 4 or head[0] != "vertices" or head[2] != "root":
        raise ValueError(f"bad header line: {lines[0]!r}")
    n, root = int(head[1]), int(head[3])
    verts, edges = [], []
    for ln in lines[1:]:
        tag, *rest = ln.split()
        if tag == "V":
            verts.append(tuple(int(c) for c in rest))
        elif tag == "E":
            edges.append((int(rest[0]), int(rest[1])))
        else:
            raise ValueError(f"unknown record {tag!r}")
    if len(verts) != n:
        raise ValueError(f"header announces {n} vertices, found {len(verts)}")
    return FiniteGraph.from_edges(verts, edges, root=None if root < 0 else verts[root])

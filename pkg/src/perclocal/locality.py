"""Rooted ball isomorphism, the local-convergence radius R(G, H), growth fits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .graph import FiniteGraph, ResourceLimitError, RootedGraphOracle, ball

ISO_SIZE_GUARD = 100_000


class NonPolynomialGrowthError(ValueError):
    pass


def sub_ball(B: FiniteGraph, k: int, sphere_edges: bool = False) -> FiniteGraph:
    """The k-ball inside a larger rooted ball ``B`` (same centre)."""
    keep = B.dist <= k
    g = B.subgraph(keep, root=B.root)
    if sphere_edges:
        return g
    e = g.edges
    inner = (g.dist[e[:, 0]] < k) | (g.dist[e[:, 1]] < k)
    return FiniteGraph.from_edges(g.vertices, e[inner], root=g.root, dist=g.dist)


def _refine(graphs: list[FiniteGraph]) -> list[np.ndarray]:
    """Joint colour refinement seeded by (distance from root, degree).

    Colours are shared between the graphs, so unequal colour histograms prove
    non-isomorphism. The stable colouring is invariant under root-preserving
    isomorphisms, hence it never rules out a genuine one.
    """
    colors = [list(zip(g.dist.tolist(), g.degrees.tolist())) for g in graphs]
    n_colors = -1
    while True:
        palette: dict = {}
        new = []
        for g, col in zip(graphs, colors):
            adj = g.adj
            sig = [(col[i], tuple(sorted(col[j] for j in adj[i]))) for i in range(len(col))]
            new.append([palette.setdefault(s, len(palette)) for s in sig])
        if len(palette) == n_colors:
            return [np.asarray(c) for c in new]
        n_colors = len(palette)
        colors = new


def find_rooted_isomorphism(B1: FiniteGraph, B2: FiniteGraph) -> dict | None:
    """Root-preserving isomorphism ``B1 -> B2`` as an index map, or ``None``.

    Exact: colour refinement only prunes, the search is a full backtracking
    over BFS order with adjacency consistency checks.
    """
    if B1.root is None or B2.root is None or B1.dist is None or B2.dist is None:
        raise ValueError("both graphs must be rooted with distances")
    if max(len(B1), len(B2)) > ISO_SIZE_GUARD:
        raise ResourceLimitError(f"ball isomorphism limited to {ISO_SIZE_GUARD} vertices")
    if len(B1) != len(B2) or len(B1.edges) != len(B2.edges):
        return None
    if not np.array_equal(np.bincount(B1.dist), np.bincount(B2.dist)):
        return None
    c1, c2 = _refine([B1, B2])
    if not np.array_equal(np.sort(c1), np.sort(c2)):
        return None
    r1, r2 = B1.root_index, B2.root_index
    if c1[r1] != c2[r2]:
        return None

    adj1, adj2 = B1.adj, [set(a) for a in B2.adj]
    order = sorted(range(len(B1)), key=lambda i: (B1.dist[i], i))
    pos = {v: k for k, v in enumerate(order)}
    # earlier-placed neighbours of each vertex, and one anchor among them
    back = [[u for u in adj1[v] if pos[u] < pos[v]] for v in order]
    by_color: dict = {}
    for w in range(len(B2)):
        by_color.setdefault(int(c2[w]), []).append(w)

    fwd = [-1] * len(B1)
    used = [False] * len(B2)

    def candidates(k):
        v = order[k]
        if k == 0:
            return [r2]
        nb = back[k]
        if nb:
            pool = B2.adj[fwd[nb[0]]]
        else:
            pool = by_color[int(c1[v])]
        out = []
        for w in pool:
            if used[w] or c2[w] != c1[v]:
                continue
            aw = adj2[w]
            if all(fwd[u] in aw for u in nb):
                # no extra edges towards already-mapped vertices
                if sum(1 for x in B2.adj[w] if used[x]) == len(nb):
                    out.append(w)
        return out

    stack = [candidates(0)]
    k = 0
    while stack:
        cands = stack[-1]
        if fwd[order[k]] >= 0:
            used[fwd[order[k]]] = False
            fwd[order[k]] = -1
        if not cands:
            stack.pop()
            k -= 1
            continue
        w = cands.pop()
        fwd[order[k]] = w
        used[w] = True
        if k + 1 == len(order):
            return {i: fwd[i] for i in range(len(B1))}
        k += 1
        stack.append(candidates(k))
    return None


def rooted_ball_isomorphic(B1: FiniteGraph, B2: FiniteGraph) -> bool:
    return find_rooted_isomorphism(B1, B2) is not None


def check_isomorphism(B1: FiniteGraph, B2: FiniteGraph, mapping: dict) -> bool:
    """Independent audit of a certificate: bijective, root to root, edges to edges."""
    if sorted(mapping) != list(range(len(B1))) or sorted(mapping.values()) != list(range(len(B2))):
        return False
    if mapping[B1.root_index] != B2.root_index:
        return False
    e1 = {tuple(sorted((mapping[a], mapping[b]))) for a, b in B1.edges.tolist()}
    e2 = {tuple(e) for e in B2.edges.tolist()}
    return e1 == e2


class LocalityRadius(NamedTuple):
    radius: int
    saturated: bool
    rows: list

    def __str__(self):
        return f">= {self.radius}" if self.saturated else str(self.radius)


def locality_radius(G: RootedGraphOracle, H: RootedGraphOracle, r_max: int) -> LocalityRadius:
    """Largest k <= r_max with B_G(k) ~ B_H(k) (balls without sphere-sphere edges).

    ``saturated`` is set when every tested radius matched. ``rows`` holds
    ``(k, |B_G(k)|, |B_H(k)|, isomorphic)`` for each radius tried.
    """
    if r_max < 0:
        raise ValueError("r_max must be nonnegative")
    BG = ball(G, None, r_max, sphere_edges=True)
    BH = ball(H, None, r_max, sphere_edges=True)
    rows = []
    for k in range(r_max + 1):
        g, h = sub_ball(BG, k), sub_ball(BH, k)
        iso = rooted_ball_isomorphic(g, h)
        rows.append((k, len(g), len(h), iso))
        if not iso:
            return LocalityRadius(k - 1, False, rows)
    return LocalityRadius(r_max, True, rows)


@dataclass(frozen=True)
class GrowthEstimate:
    d: int
    c: Fraction
    r_max: int
    slope: float


def ball_sizes(G: RootedGraphOracle, r_max: int) -> np.ndarray:
    """|B_r| for r = 0..r_max."""
    B = ball(G, None, r_max)
    return np.cumsum(np.bincount(B.dist, minlength=r_max + 1))


def _slope(sizes, lo, hi) -> float:
    r = np.arange(lo, hi + 1)
    return float(np.polyfit(np.log(r), np.log(sizes[lo:hi + 1]), 1)[0])


def growth_fit(G: RootedGraphOracle, r_max: int, sizes=None) -> GrowthEstimate:
    """Fit (1/c) r^d <= |B_r| <= c r^d on 1 <= r <= r_max.

    d is the rounded log-log slope over [r_max/2, r_max]; c is the smallest
    multiple of 1/100 that makes both bounds hold on the window.
    """
    if r_max < 4:
        raise ValueError("r_max must be at least 4")
    sizes = ball_sizes(G, r_max) if sizes is None else np.asarray(sizes)
    lo = r_max // 2
    mid = (lo + r_max) // 2
    slope = _slope(sizes, lo, r_max)
    drift = abs(_slope(sizes, lo, mid) - _slope(sizes, mid, r_max))
    if drift > 0.5:
        raise NonPolynomialGrowthError(f"log-log slope drifts by {drift:.2f} across the window")
    d = max(0, int(round(slope)))
    worst = Fraction(1)
    for r in range(1, r_max + 1):
        ratio = Fraction(int(sizes[r]), r ** d)
        worst = max(worst, ratio, 1 / ratio)
    c = Fraction(math.ceil(worst * 100), 100)
    return GrowthEstimate(d, c, r_max, slope)


def check_growth(est: GrowthEstimate, sizes) -> bool:
    """Re-validate (1/c) r^d <= |B_r| <= c r^d on the window, in exact arithmetic."""
    for r in range(1, est.r_max + 1):
        b = int(sizes[r])
        if not (b * est.c >= r ** est.d and b <= est.c * r ** est.d):
            return False
    return est.c >= 1

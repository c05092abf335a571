"""Exact laws of site processes on tiny graphs and exact stochastic domination.

Configurations are bitmasks: bit ``i`` set means vertex ``i`` is open. A law
stores one probability per configuration, either as ``Fraction`` objects
(exact) or as float64.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .graph import FiniteGraph, ResourceLimitError, bfs_distances

MAX_LAW_VERTICES = 20
MAX_DOMINATION_VERTICES = 12
EXACT_CONFIG_LIMIT = 2 ** 10
MAX_FACTOR_STATES = 2 ** 21
FLOW_TOL = 1e-9
FACTOR_TOL = 1e-10


class CertificationError(ValueError):
    pass


# -- graphs ---------------------------------------------------------------------

def distance_matrix(H: FiniteGraph) -> np.ndarray:
    if not len(H):
        return np.zeros((0, 0), dtype=np.int64)
    return np.stack([bfs_distances(H, i) for i in range(len(H))])


def graph_power(H: FiniteGraph, k: int) -> FiniteGraph:
    """Same vertices, adjacency iff 1 <= d_H(x, y) <= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    D = distance_matrix(H)
    i, j = np.nonzero((D >= 1) & (D <= k))
    keep = i < j
    return FiniteGraph.from_edges(H.vertices, np.stack([i[keep], j[keep]], axis=1), root=H.root)


def bipartition(H: FiniteGraph) -> np.ndarray:
    """Parity of BFS depth from the lowest vertex of each component."""
    side = -np.ones(len(H), dtype=np.int64)
    for s in range(len(H)):
        if side[s] < 0:
            d = bfs_distances(H, s)
            comp = d >= 0
            side[comp] = d[comp] % 2
    return side


# -- laws -----------------------------------------------------------------------

@dataclass(eq=False)
class SiteLaw:
    graph: FiniteGraph
    prob: np.ndarray        # length 2**n; object dtype of Fractions, or float64

    def __post_init__(self):
        n = len(self.graph)
        if n > MAX_LAW_VERTICES:
            raise ResourceLimitError(f"site laws are limited to {MAX_LAW_VERTICES} vertices")
        if len(self.prob) != 1 << n:
            raise ValueError("prob must have 2**n entries")
        if self.exact:
            if any(x < 0 for x in self.prob) or sum(self.prob) != 1:
                raise ValueError("probabilities must be nonnegative and sum to 1")
        elif np.any(self.prob < 0) or abs(self.prob.sum() - 1) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")

    @property
    def n(self) -> int:
        return len(self.graph)

    @property
    def exact(self) -> bool:
        return self.prob.dtype == object

    def with_graph(self, graph: FiniteGraph) -> "SiteLaw":
        if len(graph) != self.n:
            raise ValueError("vertex count mismatch")
        return SiteLaw(graph, self.prob)

    def tensor(self) -> np.ndarray:
        """Probabilities as an n-dimensional array indexed (x_0, ..., x_{n-1})."""
        # bitmask bit i is axis n-1-i in C order, so reverse the axes
        return self.prob.reshape((2,) * self.n).transpose(tuple(range(self.n))[::-1]) if self.n else self.prob

    def marginal(self, U: Sequence[int]) -> np.ndarray:
        """Joint law of (x_u)_{u in U} as a tensor with axes in U's order."""
        t = self.tensor()
        drop = tuple(i for i in range(self.n) if i not in set(U))
        m = t.sum(axis=drop) if drop else t
        rest = [i for i in range(self.n) if i in set(U)]
        return np.transpose(m, [rest.index(u) for u in U])

    def marginals(self) -> list:
        return [self.marginal([i])[1] for i in range(self.n)]

    def event_prob(self, masks) -> object:
        return sum(self.prob[m] for m in masks)

    def to_records(self) -> tuple:
        """(vertex count, [(bitmask, numerator, denominator), ...]) for nonzero masses."""
        recs = []
        for m, x in enumerate(self.prob):
            x = Fraction(x)
            if x:
                recs.append((m, x.numerator, x.denominator))
        return self.n, recs

    @classmethod
    def from_records(cls, graph: FiniteGraph, records) -> "SiteLaw":
        n, recs = records
        if n != len(graph):
            raise ValueError("vertex count mismatch")
        prob = np.array([Fraction(0)] * (1 << n), dtype=object)
        for m, a, b in recs:
            prob[m] = Fraction(a, b)
        return cls(graph, prob)


def _as_exact(x) -> bool:
    return isinstance(x, (Fraction, int))


# -- process specifications ------------------------------------------------------

@dataclass(frozen=True)
class Product:
    p: object


@dataclass(frozen=True)
class FullyCorrelated:
    """All sites equal one Bernoulli(p) bit."""
    p: object


@dataclass(frozen=True)
class BlockFactor:
    """Bernoulli(t) bits on vertices; a site applies ``rule`` to the bits of its
    radius-r ball. Sites at distance > 2r read disjoint bits."""
    t: object
    radius: int
    rule: str = "min"     # min | majority (ties closed)


@dataclass(frozen=True)
class EdgeFactor:
    """Bernoulli(t) bits on edges; a site applies ``rule`` to its incident edge
    bits (isolated sites read a private bit). Non-adjacent sites share nothing."""
    t: object
    rule: str = "min"


@dataclass(frozen=True)
class Antagonistic:
    """Each edge independently fires with probability e and then closes one
    endpoint: the even side of a checkerboard colouring or the odd side, with
    equal chance. Closures pile up on alternating sites."""
    e: object


@dataclass(frozen=True)
class Table:
    prob: tuple


def _rule(bits: np.ndarray, rule: str) -> np.ndarray:
    if rule == "min":
        return bits.all(axis=1)
    if rule == "majority":
        return 2 * bits.sum(axis=1) > bits.shape[1]
    raise ValueError(f"unknown rule {rule!r}")


def _factor_law(n: int, cells: list, site_fn: Callable, exact: bool) -> np.ndarray:
    """Push forward a product law on cells. ``cells`` is a list of lists of
    (state, prob); ``site_fn(states)`` maps an (m, n_cells) state array to an
    (m, n) boolean site array."""
    total = math.prod(len(c) for c in cells)
    if total > MAX_FACTOR_STATES:
        raise ResourceLimitError(f"factor process has {total} cell states")
    grids = np.array(list(itertools.product(*[range(len(c)) for c in cells])), dtype=np.int64).reshape(total, len(cells))
    states = np.stack([np.array([s for s, _ in c])[grids[:, j]] for j, c in enumerate(cells)], axis=1) if cells else grids
    sites = site_fn(states).astype(np.int64)
    masks = (sites << np.arange(n)).sum(axis=1) if n else np.zeros(total, dtype=np.int64)
    if exact:
        out = np.array([Fraction(0)] * (1 << n), dtype=object)
        for row, m in zip(grids, masks):
            w = Fraction(1)
            for j, s in enumerate(row):
                w *= cells[j][s][1]
            out[m] += w
        return out
    w = np.ones(total)
    for j, c in enumerate(cells):
        w *= np.array([float(q) for _, q in c])[grids[:, j]]
    return np.bincount(masks, weights=w, minlength=1 << n)


def _bern(t):
    return [(0, 1 - t), (1, t)]


def exact_law(spec, graph: FiniteGraph) -> SiteLaw:
    """Exact distribution of a site process on a small graph.

    Parameters given as ``Fraction``/``int`` yield exact laws; floats yield
    float64 laws.
    """
    n = len(graph)
    if n > MAX_LAW_VERTICES:
        raise ResourceLimitError(f"site laws are limited to {MAX_LAW_VERTICES} vertices")
    if isinstance(spec, Table):
        prob = np.array(spec.prob, dtype=object if all(_as_exact(x) for x in spec.prob) else float)
        return SiteLaw(graph, prob)
    if isinstance(spec, Product):
        p = spec.p
        exact = _as_exact(p)
        pop = np.array([bin(m).count("1") for m in range(1 << n)])
        if exact:
            p = Fraction(p)
            prob = np.array([p ** int(k) * (1 - p) ** int(n - k) for k in pop], dtype=object)
        else:
            prob = p ** pop * (1 - p) ** (n - pop)
        return SiteLaw(graph, prob)
    if isinstance(spec, FullyCorrelated):
        p = spec.p
        exact = _as_exact(p)
        zero = Fraction(0) if exact else 0.0
        prob = np.array([zero] * (1 << n), dtype=object if exact else float)
        prob[0] += 1 - p
        prob[(1 << n) - 1] += p
        return SiteLaw(graph, prob)
    if isinstance(spec, BlockFactor):
        D = distance_matrix(graph)
        hoods = [np.flatnonzero(D[v] <= spec.radius) for v in range(n)]

        def fn(states):
            return np.stack([_rule(states[:, h], spec.rule) for h in hoods], axis=1)
        return SiteLaw(graph, _factor_law(n, [_bern(spec.t)] * n, fn, _as_exact(spec.t)))
    if isinstance(spec, EdgeFactor):
        E = graph.edges
        inc = [[] for _ in range(n)]
        for j, (u, v) in enumerate(E.tolist()):
            inc[u].append(j)
            inc[v].append(j)
        extra = len(E)
        hoods = []
        for v in range(n):
            if inc[v]:
                hoods.append(np.array(inc[v]))
            else:
                hoods.append(np.array([extra]))
                extra += 1

        def fn(states):
            return np.stack([_rule(states[:, h], spec.rule) for h in hoods], axis=1)
        return SiteLaw(graph, _factor_law(n, [_bern(spec.t)] * extra, fn, _as_exact(spec.t)))
    if isinstance(spec, Antagonistic):
        e = spec.e
        E = graph.edges.tolist()
        side = bipartition(graph)
        half = e / 2
        cells = [[(0, 1 - e), (1, half), (2, half)] for _ in E]

        def fn(states):
            closed = np.zeros((len(states), n), dtype=bool)
            for j, (u, v) in enumerate(E):
                even, odd = (u, v) if side[u] == 0 else (v, u)
                closed[:, even] |= states[:, j] == 1
                closed[:, odd] |= states[:, j] == 2
            return ~closed
        return SiteLaw(graph, _factor_law(n, cells, fn, _as_exact(e)))
    raise TypeError(f"unsupported process spec {spec!r}")


def spec_name(spec) -> str:
    if isinstance(spec, Product):
        return f"product({spec.p})"
    if isinstance(spec, FullyCorrelated):
        return f"correlated({spec.p})"
    if isinstance(spec, BlockFactor):
        return f"block-{spec.rule}(r={spec.radius},t={spec.t})"
    if isinstance(spec, EdgeFactor):
        return f"edge-{spec.rule}(t={spec.t})"
    if isinstance(spec, Antagonistic):
        return f"antagonistic(e={spec.e})"
    return "table"


# -- dependency certificates ----------------------------------------------------

@dataclass(frozen=True)
class DependencyCertificate:
    k: int
    verified: bool
    pairs_checked: int = 0
    witness: tuple | None = None


def _close(a, b, exact) -> bool:
    if exact:
        return a == b
    return abs(float(a) - float(b)) <= FACTOR_TOL


def certify_dependence(law: SiteLaw, k: int) -> DependencyCertificate:
    """Check that restrictions to vertex sets at mutual distance > k are independent.

    Every pair (U1, U2) sits inside a closed pair (U1*, W) with W the sites
    farther than k from U1* and U1* the sites farther than k from W, and
    factorization passes to sub-pairs by marginalising, so closed pairs suffice.
    """
    n = law.n
    D = distance_matrix(law.graph)
    D = np.where(D < 0, np.iinfo(np.int64).max, D)
    far = D > k
    seen = set()
    checked = 0
    for mask in range(1, 1 << n):
        U = [i for i in range(n) if mask >> i & 1]
        W = tuple(int(j) for j in np.flatnonzero(far[U].all(axis=0)))
        if not W:
            continue
        U1 = tuple(int(j) for j in np.flatnonzero(far[list(W)].all(axis=0)))
        if (U1, W) in seen:
            continue
        seen.add((U1, W))
        checked += 1
        joint = law.marginal(list(U1) + list(W))
        a = law.marginal(list(U1))
        b = law.marginal(list(W))
        outer = np.multiply.outer(a, b)
        if not all(_close(x, y, law.exact) for x, y in zip(joint.ravel(), outer.ravel())):
            return DependencyCertificate(k, False, checked, (U1, W))
    return DependencyCertificate(k, True, checked)


# -- maximum flow -----------------------------------------------------------------

class _Dinic:
    def __init__(self, n, zero):
        self.n = n
        self.zero = zero
        self.head = [[] for _ in range(n)]
        self.to, self.cap = [], []

    def add(self, u, v, c):
        self.head[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(c)
        self.head[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(self.zero)

    def _positive(self, c):
        return c > self.eps

    def run(self, s, t, eps=0):
        self.eps = eps
        flow = self.zero
        while True:
            level = [-1] * self.n
            level[s] = 0
            q = deque([s])
            while q:
                u = q.popleft()
                for e in self.head[u]:
                    if level[self.to[e]] < 0 and self.cap[e] > eps:
                        level[self.to[e]] = level[u] + 1
                        q.append(self.to[e])
            if level[t] < 0:
                self.level = level
                return flow
            it = [0] * self.n
            while True:
                f = self._augment(s, t, level, it)
                if f is None:
                    break
                flow += f

    def _augment(self, s, t, level, it):
        """One blocking-flow augmenting path found by iterative DFS."""
        path = []
        u = s
        while u != t:
            advanced = False
            while it[u] < len(self.head[u]):
                e = self.head[u][it[u]]
                v = self.to[e]
                if self.cap[e] > self.eps and level[v] == level[u] + 1:
                    path.append(e)
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if u == s:
                    return None
                level[u] = -1           # dead end
                e = path.pop()
                u = self.to[e ^ 1]
                it[u] += 1
        f = min(self.cap[e] for e in path)
        for e in path:
            self.cap[e] -= f
            self.cap[e ^ 1] += f
        return f


@dataclass
class DominationResult:
    dominates: bool
    flow: object
    witness: frozenset | None     # an up-set A with law1(A) < law2(A)
    gap: object = None            # law2(A) - law1(A)

    def __bool__(self):
        return self.dominates


def _check_pair(law1: SiteLaw, law2: SiteLaw):
    if law1.n != law2.n or law1.graph.vertices != law2.graph.vertices:
        raise ValueError("laws live on different vertex sets")
    if law1.n > MAX_DOMINATION_VERTICES:
        raise ResourceLimitError(f"domination is limited to {MAX_DOMINATION_VERTICES} vertices")


def domination(law1: SiteLaw, law2: SiteLaw) -> DominationResult:
    """Strassen: law1 dominates law2 iff the Boolean-lattice network carrying
    law2's mass upward to law1's mass admits a flow of value 1.

    Network: source -> c (capacity law2(c)), c -> c + {i} (unbounded),
    c -> sink (capacity law1(c)). Any source-side min cut is an up-set A with
    capacity 1 - law2(A) + law1(A), so a deficit comes with its witness.
    """
    _check_pair(law1, law2)
    n = law1.n
    N = 1 << n
    exact = N <= EXACT_CONFIG_LIMIT
    if exact:
        p1 = [Fraction(x) for x in law1.prob]
        p2 = [Fraction(x) for x in law2.prob]
        zero, big, eps = Fraction(0), Fraction(2), 0
    else:
        p1 = [float(x) for x in law1.prob]
        p2 = [float(x) for x in law2.prob]
        zero, big, eps = 0.0, 2.0, 1e-15
    s, t = N, N + 1
    g = _Dinic(N + 2, zero)
    for c in range(N):
        if p2[c] > 0:
            g.add(s, c, p2[c])
        for i in range(n):
            if not c >> i & 1:
                g.add(c, c | 1 << i, big)
        if p1[c] > 0:
            g.add(c, t, p1[c])
    flow = g.run(s, t, eps)
    ok = flow == 1 if exact else flow >= 1 - FLOW_TOL
    if ok:
        return DominationResult(True, flow, None)
    A = frozenset(c for c in range(N) if g.level[c] >= 0)
    gap = sum(p2[c] for c in A) - sum(p1[c] for c in A)
    return DominationResult(False, flow, A, gap)


def dominates_exact(law1: SiteLaw, law2: SiteLaw) -> bool:
    """True iff a coupling with X1 >= X2 coordinatewise exists."""
    return domination(law1, law2).dominates


def is_up_set(A, n: int) -> bool:
    return all((c | 1 << i) in A for c in A for i in range(n))


def up_sets(n: int):
    """All increasing events on {0,1}^n (use only for n <= 5)."""
    if n > 5:
        raise ResourceLimitError("up-set enumeration is limited to n <= 5")
    N = 1 << n
    order = sorted(range(N), key=lambda c: -bin(c).count("1"))

    def rec(k, chosen):
        if k == N:
            yield frozenset(chosen)
            return
        c = order[k]
        yield from rec(k + 1, chosen)
        if all((c | 1 << i) in chosen for i in range(n) if not c >> i & 1):
            chosen.add(c)
            yield from rec(k + 1, chosen)
            chosen.discard(c)
    yield from rec(0, set())


def dominates_by_events(law1: SiteLaw, law2: SiteLaw) -> DominationResult:
    """The increasing-event criterion: law1(A) >= law2(A) for every up-set A.

    Exhaustive over up-sets for n <= 5. For 6 <= n <= 8 the worst event is
    found by the linear program min sum_c (law1(c) - law2(c)) z_c over
    0 <= z <= 1 with z_c <= z_{c+i}, whose vertices are exactly the up-set
    indicators; the optimal up-set is then re-evaluated exactly.
    """
    _check_pair(law1, law2)
    n = law1.n
    p1 = [Fraction(x) for x in law1.prob]
    p2 = [Fraction(x) for x in law2.prob]
    if n <= 5:
        worst, arg = Fraction(0), None
        for A in up_sets(n):
            gap = sum(p2[c] for c in A) - sum(p1[c] for c in A)
            if gap > worst:
                worst, arg = gap, A
        return DominationResult(arg is None, None, arg, worst if arg else None)
    if n > 8:
        raise ResourceLimitError("event criterion is limited to n <= 8")
    N = 1 << n
    rows, cols, vals = [], [], []
    r = 0
    for c in range(N):
        for i in range(n):
            if not c >> i & 1:
                rows += [r, r]
                cols += [c, c | 1 << i]
                vals += [1.0, -1.0]
                r += 1
    A_ub = np.zeros((r, N))
    A_ub[rows, cols] = vals
    cost = np.array([float(a - b) for a, b in zip(p1, p2)])
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(r), bounds=(0, 1), method="highs")
    A = frozenset(int(c) for c in np.flatnonzero(res.x > 0.5))
    gap = sum(p2[c] for c in A) - sum(p1[c] for c in A)
    if gap > 0:
        return DominationResult(False, None, A, gap)
    if res.fun < -1e-9:
        raise RuntimeError("LP optimum did not round to a violating up-set")
    return DominationResult(True, None, None)


# -- q(k, D) thresholds -----------------------------------------------------------

Q_GRID = 128
T_GRID = 4096


def _smallest_level(make, q, graph, grid=T_GRID):
    """Smallest t in (1/grid)Z with every marginal of make(t) at least q."""
    lo, hi = 0, grid
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if min(exact_law(make(Fraction(mid, grid)), graph).marginals()) >= q:
            hi = mid
        else:
            lo = mid
    return make(Fraction(hi, grid))


def adversary_family(k: int) -> list[tuple[str, Callable]]:
    """k-dependent adversaries, each a builder ``(q, graph) -> spec`` whose
    marginals are all at least q."""
    fam = [("product", lambda q, g: Product(q))]
    if k >= 1:
        fam += [
            ("edge-min", lambda q, g: _smallest_level(lambda t: EdgeFactor(t, "min"), q, g)),
            ("edge-majority", lambda q, g: _smallest_level(lambda t: EdgeFactor(t, "majority"), q, g)),
            ("antagonistic", lambda q, g: _smallest_level(lambda t: Antagonistic(1 - t), q, g)),
        ]
    if k >= 2:
        r = k // 2
        fam += [
            ("block-min", lambda q, g: _smallest_level(lambda t: BlockFactor(t, r, "min"), q, g)),
            ("block-majority", lambda q, g: _smallest_level(lambda t: BlockFactor(t, r, "majority"), q, g)),
        ]
    return fam


def correlated_family():
    return [("correlated", lambda q, g: FullyCorrelated(q))]


@dataclass
class QThreshold:
    q: Fraction
    rows: list          # (graph index, adversary, q level, dominates)
    reduction_ok: bool


def estimate_q_threshold(k: int, D: int, family, graphs: Sequence[FiniteGraph],
                         target=Fraction(3, 4), grid: int = Q_GRID) -> QThreshold:
    """Smallest q on the 1/grid lattice such that, at every level from q up to 1,
    every adversary with marginals >= that level dominates product(target) on
    every graph. Each adversary law is certified k-dependent and, for k >= 1,
    1-dependent on the k-th graph power.
    """
    if not family:
        raise ValueError("adversary family is empty")
    for g in graphs:
        if len(g) and g.degrees.max() > D:
            raise ValueError(f"graph has degree {g.degrees.max()} > D={D}")
    targets = [exact_law(Product(target), g) for g in graphs]
    powers = [graph_power(g, k) if k >= 1 else None for g in graphs]
    rows = []
    reduction_ok = True
    q = Fraction(1)
    for j in range(grid, -1, -1):
        level = Fraction(j, grid)
        good = True
        for gi, g in enumerate(graphs):
            for name, build in family:
                law = exact_law(build(level, g), g)
                cert = certify_dependence(law, k)
                if not cert.verified:
                    raise CertificationError(f"{name} at q={level} is not {k}-dependent on graph {gi}")
                if powers[gi] is not None:
                    reduction_ok &= certify_dependence(law.with_graph(powers[gi]), 1).verified
                dom = dominates_exact(law, targets[gi])
                rows.append((gi, name, level, dom))
                good &= dom
        if not good:
            break
        q = level
    return QThreshold(q, rows, reduction_ok)


def reduction_check(law: SiteLaw, k: int) -> bool:
    """A certified k-dependent law is 1-dependent on the k-th graph power."""
    if not certify_dependence(law, k).verified:
        raise CertificationError(f"law is not {k}-dependent")
    return certify_dependence(law.with_graph(graph_power(law.graph, k)), 1).verified


def _graph(n, edges):
    return FiniteGraph.from_edges([(i,) for i in range(n)], edges)


FIXTURES = {
    "K1": lambda: _graph(1, []),
    "K2": lambda: _graph(2, [(0, 1)]),
    "P3": lambda: _graph(3, [(0, 1), (1, 2)]),
    "P4": lambda: _graph(4, [(0, 1), (1, 2), (2, 3)]),
    "K3": lambda: _graph(3, [(0, 1), (1, 2), (0, 2)]),
    "C4": lambda: _graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)]),
    "S3": lambda: _graph(4, [(0, 1), (0, 2), (0, 3)]),
    "C5": lambda: _graph(5, [(i, (i + 1) % 5) for i in range(5)]),
    "S4": lambda: _graph(5, [(0, 1), (0, 2), (0, 3), (0, 4)]),
    "G2x3": lambda: _graph(6, [(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)]),
    "C6": lambda: _graph(6, [(i, (i + 1) % 6) for i in range(6)]),
    "P7": lambda: _graph(7, [(i, i + 1) for i in range(6)]),
    "C8": lambda: _graph(8, [(i, (i + 1) % 8) for i in range(8)]),
}


def fixture_graph(name: str) -> FiniteGraph:
    return FIXTURES[name]()

"""Bernoulli percolation on finite windows, the good-block event E_n and the
renormalised site process it induces on a net.

Randomness is counter based: the configuration for ``(seed, stream)`` is the
first ``N`` outputs of a Philox generator keyed by that pair, element ``i``
getting the ``i``-th uniform. Nothing depends on evaluation order or thread
count, and sharing uniforms across ``p`` gives the standard monotone coupling.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import binomtest

from .graph import FiniteGraph, RootedGraphOracle, ball, bfs_distances, bfs_rows
from .nets import Net

MASK64 = (1 << 64) - 1


class MarginError(ValueError):
    """A ball needed by the computation pokes out of the finite window."""


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, curve):
        super().__init__(msg)
        self.curve = curve


class GluingError(RuntimeError):
    pass


def uniforms(seed: int, stream: int, size: int) -> np.ndarray:
    key = np.array([seed & MASK64, stream & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).random(size)


def _pmap(fn, items, threads: int = 1) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(eq=False)
class PercolationConfig:
    region: FiniteGraph
    mode: str
    p: float
    seed: int
    stream: int = 0
    open: np.ndarray = field(default=None, repr=False)

    def regenerate(self) -> np.ndarray:
        n = len(self.region) if self.mode == "site" else len(self.region.edges)
        return uniforms(self.seed, self.stream, n) < self.p


def sample(region: FiniteGraph, mode: str, p: float, seed: int, stream: int = 0) -> PercolationConfig:
    """Each site (or edge, in bond mode) open independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if mode not in ("site", "bond"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = PercolationConfig(region, mode, p, seed, stream)
    cfg.open = cfg.regenerate()
    return cfg


def _labels(n: int, edges: np.ndarray, keep: np.ndarray, site_open: np.ndarray | None) -> np.ndarray:
    ek = edges[keep]
    mat = coo_matrix((np.ones(len(ek), dtype=np.int8), (ek[:, 0], ek[:, 1])), shape=(n, n))
    _, lab = connected_components(mat, directed=False)
    if site_open is not None:
        lab = np.where(site_open, lab, -1)
    return lab


class _Restriction:
    """A ball around ``center`` cut out of the region, with local edge ids."""

    def __init__(self, region: FiniteGraph, dist_local: np.ndarray, radius: int):
        self.vidx = np.flatnonzero((dist_local >= 0) & (dist_local <= radius))
        self.dist = dist_local[self.vidx]
        local = np.full(len(region), -1, dtype=np.int64)
        local[self.vidx] = np.arange(len(self.vidx))
        e = region.edges
        inside = (local[e[:, 0]] >= 0) & (local[e[:, 1]] >= 0)
        self.eidx = np.flatnonzero(inside)
        self.edges = local[e[inside]]

    def labels(self, open_, mode: str) -> np.ndarray:
        if mode == "site":
            so = open_[self.vidx]
            keep = so[self.edges[:, 0]] & so[self.edges[:, 1]]
            return _labels(len(self.vidx), self.edges, keep, so)
        return _labels(len(self.vidx), self.edges, open_[self.eidx], None)


class EventEvaluator:
    """E_n(v) for one centre ``v`` of a region, reusable across configurations.

    E_n(v) holds when (i) some cluster of the configuration restricted to
    B_10n(v) meets B_n(v) and contains a vertex at distance exactly 10n, and
    (ii) among clusters of the restriction to B_5n(v), at most one meets
    B_2n(v) and also reaches distance exactly 5n.
    """

    def __init__(self, region: FiniteGraph, v, n: int, mode: str = "site"):
        if n < 1:
            raise ValueError("n must be positive")
        vi = region.idx(v) if isinstance(v, tuple) else int(v)
        if region.dist is None:
            raise MarginError("region must be a rooted ball")
        if region.dist[vi] + 10 * n > region.radius:
            raise MarginError(
                f"B_{10 * n}({region.vertices[vi]}) leaves the region of radius {region.radius}")
        self.n, self.mode, self.center = n, mode, vi
        d = bfs_distances(region, vi, limit=10 * n)
        self.big = _Restriction(region, d, 10 * n)
        self.mid = _Restriction(region, d, 5 * n)

    def cluster_i(self, open_) -> tuple[np.ndarray, set]:
        """Labels on B_10n and the set of labels meeting B_n and the 10n-sphere."""
        n, big = self.n, self.big
        lab = big.labels(open_, self.mode)
        inner = lab[(big.dist <= n) & (lab >= 0)]
        if not len(inner):
            return lab, set()
        outer = lab[(big.dist == 10 * n) & (lab >= 0)]
        return lab, set(np.intersect1d(inner, outer).tolist())

    def clause_ii(self, open_) -> bool:
        n, mid = self.n, self.mid
        lab = mid.labels(open_, self.mode)
        a = lab[(mid.dist <= 2 * n) & (lab >= 0)]
        b = lab[(mid.dist == 5 * n) & (lab >= 0)]
        return len(np.intersect1d(a, b)) <= 1

    def __call__(self, open_) -> bool:
        _, good = self.cluster_i(open_)
        return bool(good) and self.clause_ii(open_)


def event_En(config: PercolationConfig, v, n: int) -> bool:
    return EventEvaluator(config.region, v, n, config.mode)(config.open)


@dataclass
class ProportionEstimate:
    hits: int
    samples: int
    p_hat: float
    ci_lo: float
    ci_hi: float


def wilson(hits: int, samples: int) -> ProportionEstimate:
    ci = binomtest(hits, samples).proportion_ci(confidence_level=0.95, method="wilson")
    return ProportionEstimate(hits, samples, hits / samples, float(ci.low), float(ci.high))


def estimate_event_prob(oracle: RootedGraphOracle, p: float, n: int, samples: int, seed: int,
                        mode: str = "site", threads: int = 1, region: FiniteGraph | None = None) -> ProportionEstimate:
    """Monte Carlo P(E_n) at the root; sample ``i`` uses stream ``i`` of ``seed``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    region = ball(oracle, None, 10 * n) if region is None else region
    ev = EventEvaluator(region, region.root_index, n, mode)
    size = len(region) if mode == "site" else len(region.edges)

    def one(i):
        return ev(uniforms(seed, i, size) < p)

    hits = sum(_pmap(one, range(samples), threads))
    return wilson(int(hits), samples)


# -- renormalisation --------------------------------------------------------------

@dataclass(eq=False)
class RenormalizedProcess:
    net: Net
    n: int
    eta: np.ndarray            # per net point: 1 open, 0 closed, -1 indeterminate (near the boundary)
    config: PercolationConfig = field(repr=False, default=None)
    evaluators: dict = field(repr=False, default_factory=dict)

    @property
    def determinate(self) -> np.ndarray:
        return self.eta >= 0

    def open_clusters(self) -> list[np.ndarray]:
        """Clusters (as positions in ``net.points``) of determinate open points in the net graph."""
        g = self.net.graph
        is_open = self.eta == 1
        lab = _labels(len(g), g.edges, is_open[g.edges[:, 0]] & is_open[g.edges[:, 1]], is_open)
        out = {}
        for i in np.flatnonzero(is_open):
            out.setdefault(int(lab[i]), []).append(i)
        return [np.asarray(v) for v in sorted(out.values(), key=lambda c: c[0])]


def block_margin_mask(net: Net, n: int) -> np.ndarray:
    """Net points whose 10n-ball lies inside the window."""
    host = net.host
    return host.dist[net.points] + 10 * n <= host.radius


def block_evaluators(net: Net, n: int, mode: str = "site") -> dict:
    """E_n evaluators for every net point with a 10n-margin, keyed by position.

    They depend on the window only, so one set serves every configuration.
    """
    return {int(k): EventEvaluator(net.host, int(net.points[k]), n, mode)
            for k in np.flatnonzero(block_margin_mask(net, n))}


def renormalize(config: PercolationConfig, net: Net, n: int, C: int = 1,
                evaluators: dict | None = None) -> RenormalizedProcess:
    """eta(v) = 1 iff E_n(v) holds, for net points at distance >= 10n from the
    window boundary; other points are marked indeterminate (-1)."""
    if config.region is not net.host:
        raise ValueError("configuration and net must live on the same window")
    if net.a != math.ceil(n / (4 * C)):
        raise ValueError(f"net parameter a={net.a} does not match ceil(n/4C) = {math.ceil(n / (4 * C))}")
    if not block_margin_mask(net, n).any():
        raise MarginError(f"no net point has a {10 * n}-margin inside the window")
    evs = block_evaluators(net, n, config.mode) if evaluators is None else evaluators
    eta = np.full(len(net.points), -1, dtype=np.int8)
    for k, ev in evs.items():
        eta[k] = 1 if ev(config.open) else 0
    return RenormalizedProcess(net, n, eta, config, evs)


def independence_violations(net: Net, n: int, k: int = 80) -> list[tuple]:
    """Pairs of margin-interior net points at net distance > k whose host
    10n-balls intersect (host distance <= 20n)."""
    inside = block_margin_mask(net, n)
    ipos = np.flatnonzero(inside)
    ihost = net.points[ipos]
    bad = []
    rows_net = bfs_rows(net.graph, ipos)
    for (part, dh), (_, dn) in zip(bfs_rows(net.host, ihost, limit=20 * n), rows_net):
        dh = dh[:, ihost]
        dn = dn[:, ipos]
        far = (dn > k) | (dn < 0)
        overlap = dh >= 0
        for r, c in zip(*np.nonzero(far & overlap)):
            bad.append((net.host.vertices[part[r]], net.host.vertices[ihost[c]], int(dh[r, c]), int(dn[r, c])))
    return bad


def independence_radius_check(net: Net, n: int, k: int = 80) -> bool:
    """True iff every pair of interior net points at net-graph distance > k has
    disjoint host balls B_10n, so eta on such sets depends on disjoint sites."""
    return not independence_violations(net, n, k)


def extract_host_path(proc: RenormalizedProcess, net_path: Sequence[int]) -> list[int]:
    """Open host path glued along an eta-open net path (positions in net.points).

    For each block the clause-(i) crossing cluster C_i is taken; consecutive
    clusters are joined by an open path inside B_5n(v_i), which exists when
    E_n(v_i) holds. The result runs from B_n(v_0) to B_n(v_L).
    """
    cfg, net, n = proc.config, proc.net, proc.n
    if cfg.mode != "site":
        raise ValueError("gluing is implemented for site percolation")
    host, open_ = net.host, cfg.open
    clusters = []
    for k in net_path:
        if proc.eta[k] != 1:
            raise GluingError(f"net point {k} is not eta-open")
        ev = proc.evaluators[int(k)]
        lab, good = ev.cluster_i(open_)
        c = min(good)
        clusters.append(set(ev.big.vidx[lab == c].tolist()))
    union = set().union(*clusters)
    adj = host.adj
    for i in range(len(net_path) - 1):
        ev = proc.evaluators[int(net_path[i])]
        zone = set(ev.mid.vidx.tolist())
        src = clusters[i] & zone
        dst = clusters[i + 1] & zone
        join = _bfs_path(adj, src, dst, lambda x: x in zone and open_[x])
        if join is None:
            raise GluingError(f"no open path in B_5n around block {i} joins consecutive crossings")
        union.update(join)
    ev0, evL = proc.evaluators[int(net_path[0])], proc.evaluators[int(net_path[-1])]
    start = clusters[0] & set(ev0.big.vidx[ev0.big.dist <= n].tolist())
    end = clusters[-1] & set(evL.big.vidx[evL.big.dist <= n].tolist())
    path = _bfs_path(adj, start, end, lambda x: x in union)
    if path is None:
        raise GluingError("glued blocks do not connect the end blocks")
    return path


def _bfs_path(adj, sources: set, targets: set, allowed) -> list | None:
    if not sources or not targets:
        return None
    parent = {s: None for s in sources}
    frontier = sorted(sources)
    for s in frontier:
        if s in targets:
            return [s]
    while frontier:
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if y not in parent and allowed(y):
                    parent[y] = x
                    if y in targets:
                        path = [y]
                        while parent[path[-1]] is not None:
                            path.append(parent[path[-1]])
                        return path[::-1]
                    nxt.append(y)
        frontier = nxt
    return None


def check_host_path(proc: RenormalizedProcess, net_path: Sequence[int], path: list[int]) -> bool:
    """Independent audit: open, consecutive vertices adjacent, correct end blocks."""
    host, n = proc.net.host, proc.n
    open_ = proc.config.open
    adj = host.adj
    if not path or not all(open_[x] for x in path):
        return False
    if any(path[i + 1] not in adj[path[i]] for i in range(len(path) - 1)):
        return False
    d0 = bfs_distances(host, int(proc.net.points[net_path[0]]), limit=n)
    dL = bfs_distances(host, int(proc.net.points[net_path[-1]]), limit=n)
    return d0[path[0]] >= 0 and dL[path[-1]] >= 0


# -- p_c estimation -----------------------------------------------------------------

class SpanEvaluator:
    """Does an open cluster join the r-ball of the root to the 2r-sphere?"""

    def __init__(self, region: FiniteGraph, r: int, mode: str = "site"):
        if region.radius < 2 * r:
            raise MarginError("region must contain the 2r-ball")
        self.r, self.mode, self.region = r, mode, region
        d = region.dist
        self.keep = _Restriction(region, d, 2 * r)
        self.inner = self.keep.dist <= r
        self.outer = self.keep.dist == 2 * r

    def __call__(self, open_) -> bool:
        lab = self.keep.labels(open_, self.mode)
        a = lab[self.inner & (lab >= 0)]
        b = lab[self.outer & (lab >= 0)]
        return len(np.intersect1d(a, b)) > 0


def spanning_probability(oracle: RootedGraphOracle, p: float, r: int, trials: int, seed: int,
                         mode: str = "site", threads: int = 1, region: FiniteGraph | None = None) -> ProportionEstimate:
    region = ball(oracle, None, 2 * r) if region is None else region
    span = SpanEvaluator(region, r, mode)
    size = len(region) if mode == "site" else len(region.edges)
    hits = _pmap(lambda i: span(uniforms(seed, i, size) < p), range(trials), threads)
    return wilson(int(sum(hits)), trials)


@dataclass
class PcEstimate:
    p_c_hat: float
    ci_lo: float
    ci_hi: float
    curve: list          # (p, spanning fraction) in evaluation order
    bracket: tuple


def _crossing_point(ps: np.ndarray, frac: np.ndarray) -> float:
    """Linear interpolation of the first 1/2 crossing of a nondecreasing curve."""
    above = np.flatnonzero(frac >= 0.5)
    j = int(above[0])
    if j == 0:
        return float(ps[0])
    p0, p1, f0, f1 = ps[j - 1], ps[j], frac[j - 1], frac[j]
    return float(p0 + (0.5 - f0) * (p1 - p0) / (f1 - f0))


def estimate_pc(oracle: RootedGraphOracle, n_trials: int, region_scale: int, seed: int,
                mode: str = "site", tol: float = 0.01, n_boot: int = 1000, threads: int = 1) -> PcEstimate:
    """Bisection for the p at which the r-ball-to-2r-sphere spanning probability is 1/2.

    Trial ``i`` uses the same uniforms at every p, so each trial's spanning
    indicator is monotone in p. The point estimate interpolates the 1/2
    crossing inside the final bracket; the CI is a percentile bootstrap over trials of
    the interpolated 1/2 crossing of the recorded curve.
    """
    r = region_scale
    region = ball(oracle, None, 2 * r)
    span = SpanEvaluator(region, r, mode)
    size = len(region) if mode == "site" else len(region.edges)
    results: dict = {}

    def indicators(p):
        ind = np.asarray(_pmap(lambda i: span(uniforms(seed, i, size) < p), range(n_trials), threads))
        results[p] = ind
        return ind.mean()

    curve = [(0.0, indicators(0.0)), (1.0, indicators(1.0))]
    if not curve[0][1] < 0.5 <= curve[1][1]:
        raise NonConvergenceError("spanning probability does not bracket 1/2 on [0, 1]", curve)
    lo, hi = 0.0, 1.0
    while hi - lo >= tol:
        mid = (lo + hi) / 2
        f = indicators(mid)
        curve.append((mid, f))
        if f >= 0.5:
            hi = mid
        else:
            lo = mid
    ps = np.array(sorted(results))
    mat = np.stack([results[p] for p in ps], axis=1).astype(float)   # trials x p
    frac = mat.mean(axis=0)
    if np.any(np.diff(frac) < 0):
        raise NonConvergenceError("spanning curve is not monotone", curve)
    est = _crossing_point(ps, frac)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed & MASK64, MASK64], dtype=np.uint64)))
    boots = []
    for _ in range(n_boot):
        pick = rng.integers(0, n_trials, n_trials)
        boots.append(_crossing_point(ps, mat[pick].mean(axis=0)))
    lo_ci, hi_ci = np.percentile(boots, [2.5, 97.5])
    return PcEstimate(est, float(lo_ci), float(hi_ci), curve, (lo, hi))


def _farthest(adj, members: set, src: int):
    parent = {src: None}
    frontier, last = [src], src
    while frontier:
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if y in members and y not in parent:
                    parent[y] = x
                    nxt.append(y)
        if nxt:
            last = nxt[-1]
        frontier = nxt
    path = [last]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def eta_paths(proc: RenormalizedProcess) -> list[list[int]]:
    """One long net-graph geodesic per eta-open cluster, found by a double
    sweep (farthest point from the first point, then farthest from that).
    Single-point clusters are skipped."""
    adj = proc.net.graph.adj
    paths = []
    for cl in proc.open_clusters():
        if len(cl) < 2:
            continue
        members = set(cl.tolist())
        end = _farthest(adj, members, int(cl[0]))[-1]
        paths.append(_farthest(adj, members, end))
    return paths


@dataclass
class GluingReport:
    paths: int
    steps: int
    failures: list


def glue_all(proc: RenormalizedProcess) -> GluingReport:
    """Extract and audit a host path for every path returned by :func:`eta_paths`."""
    failures, steps = [], 0
    paths = eta_paths(proc)
    for path in paths:
        steps += len(path) - 1
        try:
            host_path = extract_host_path(proc, path)
            ok = check_host_path(proc, path, host_path)
        except GluingError as exc:
            ok, host_path = False, str(exc)
        if not ok:
            failures.append((path, host_path))
    return GluingReport(len(paths), steps, failures)


def eta_crosses(proc: RenormalizedProcess) -> bool:
    """Does one eta-open cluster join the innermost net points (host distance
    <= 4b from the root) to the outermost determinate layer (within 4b of the
    largest determinate distance)?"""
    net = proc.net
    d = net.host.dist[net.points]
    det = proc.determinate
    if not det.any():
        return False
    reach = 4 * net.b
    inner = det & (d <= reach)
    outer = det & (d >= d[det].max() - reach)
    for cl in proc.open_clusters():
        if inner[cl].any() and outer[cl].any():
            return True
    return False

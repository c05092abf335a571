"""(a, b)-nets of finite windows of Cayley graphs.

Three constructions: the lattice net of a Cayley graph of Z^2, the fibre net
of a group with a Z^2 quotient, and the push-forward of a net along a
quasi-isometry. All distances are measured in the window graph; claims about
the infinite host are only checked on the window interior, where the two
metrics agree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .cayley import GroupSpec, make_oracle, quotient_map, select_uv
from .graph import FiniteGraph, ball, bfs_distances, bfs_rows, local_ball

MAX_WITNESSES = 50


class SeedNotSeparatedError(ValueError):
    pass


class EmptyFiberError(ValueError):
    pass


class QIWitnessError(ValueError):
    pass


def _sep_limit(a) -> int:
    """Largest distance that violates a-separation."""
    return math.ceil(a) - 1


@dataclass(eq=False)
class Net:
    host: FiniteGraph
    points: np.ndarray
    a: float
    b: float
    interior_margin: float | None = None
    lattice: dict | None = None
    base: "Net | None" = None
    projection: Callable | None = field(default=None, repr=False)
    embedding: dict | None = None

    def __post_init__(self):
        self.points = np.asarray(sorted(int(p) for p in self.points), dtype=np.int64)
        if self.interior_margin is None:
            self.interior_margin = self.b

    @cached_property
    def interior(self) -> np.ndarray:
        """Host vertices at distance >= margin from the window boundary."""
        host = self.host
        if host.dist is None:
            return np.ones(len(host), dtype=bool)
        return host.dist <= host.radius - self.interior_margin

    @cached_property
    def point_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.host), dtype=bool)
        mask[self.points] = True
        return mask

    @cached_property
    def point_pos(self) -> np.ndarray:
        """Host index -> position in ``points`` (or -1)."""
        pos = np.full(len(self.host), -1, dtype=np.int64)
        pos[self.points] = np.arange(len(self.points))
        return pos

    @cached_property
    def graph(self) -> FiniteGraph:
        """The net-graph: distinct points adjacent iff window distance <= 4b."""
        limit = math.floor(4 * self.b)
        edges = []
        pos = self.point_pos
        for part, rows in bfs_rows(self.host, self.points, limit=limit):
            sub = rows[:, self.points]
            src, dst = np.nonzero(sub > 0)
            src = pos[part[src]]
            keep = src < dst
            edges.append(np.stack([src[keep], dst[keep]], axis=1))
        edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
        verts = [self.host.vertices[i] for i in self.points]
        return FiniteGraph.from_edges(verts, edges)

    @property
    def interior_points(self) -> np.ndarray:
        return self.points[self.interior[self.points]]

    def vertex_points(self) -> list:
        return [self.host.vertices[i] for i in self.points]


def _as_indices(host: FiniteGraph, pts) -> list[int]:
    out = []
    for p in pts:
        out.append(host.idx(p) if isinstance(p, tuple) else int(p))
    return out


def extend_maximal_separated(host: FiniteGraph, seed, a) -> np.ndarray:
    """Greedy maximal a-separated superset of ``seed`` in host index order."""
    seed = _as_indices(host, seed)
    lim = _sep_limit(a)
    blocked = np.zeros(len(host), dtype=bool)
    chosen = np.zeros(len(host), dtype=bool)
    chosen[seed] = True
    for s in seed:
        near = local_ball(host, s, lim)
        for j in near:
            if j != s and chosen[j]:
                raise SeedNotSeparatedError(
                    f"seed points {host.vertices[s]} and {host.vertices[j]} are closer than {a}")
            blocked[j] = True
    for i in range(len(host)):
        if not blocked[i]:
            chosen[i] = True
            for j in local_ball(host, i, lim):
                blocked[j] = True
    return np.flatnonzero(chosen)


def z2_lattice_net(S, a: int, window: FiniteGraph) -> Net:
    """Net of a Cayley graph of Z^2 seeded by the sublattice generated by 3a*u, 3a*v.

    ``window`` must be a ball of Cay(Z^2, S) centred at the origin. The
    sublattice map (k, l) -> k*m*u + l*m*v is kept in ``net.lattice``.
    """
    gens = list(S.generators) if isinstance(S, GroupSpec) else [tuple(s) for s in S]
    u, v = select_uv(gens)
    m = math.ceil(3 * a)
    R = window.radius
    bound = 3 * R // m + 1
    lattice = {}
    for k in range(-bound, bound + 1):
        for l in range(-(bound - abs(k)), bound - abs(k) + 1):
            x = (m * (k * u[0] + l * v[0]), m * (k * u[1] + l * v[1]))
            i = window.index.get(x)
            if i is not None:
                lattice[(k, l)] = i
    points = extend_maximal_separated(window, list(lattice.values()), a)
    return Net(window, points, a, a, lattice=lattice)


def lattice_embedding_failures(net: Net) -> list[tuple]:
    """Square-lattice edges (within the interior) not mapped to net-graph edges."""
    lat = net.lattice or {}
    g = net.graph
    pos = net.point_pos
    adj = [set(x) for x in g.adj]
    interior = net.interior
    bad = []
    for (k, l), i in lat.items():
        for nb in ((k + 1, l), (k, l + 1)):
            j = lat.get(nb)
            if j is None or not (interior[i] and interior[j]):
                continue
            if pos[j] not in adj[pos[i]]:
                bad.append(((k, l), nb))
    return bad


def fiber_net(spec: GroupSpec, a: int, window: FiniteGraph) -> Net:
    """Union over x in a lattice net V1 of Z^2 of maximal a-separated subsets of the fibre over x.

    ``window`` is a ball of Cay(G, S) at the identity; V1 lives on the ball of
    the same radius in Cay(Z^2, pi(S)). Separation inside a fibre uses the
    window metric, so paths may leave the fibre. Density is 2a.
    """
    target, pi = quotient_map(spec)
    proj_window = ball(make_oracle(target), None, window.radius)
    base = z2_lattice_net(target, a, proj_window)
    base_pts = {proj_window.vertices[i] for i in base.points}
    fibers: dict = {x: [] for x in base_pts}
    for i, g in enumerate(window.vertices):
        x = pi(g)
        if x in fibers:
            fibers[x].append(i)
    empty = [x for x, f in fibers.items() if not f]
    if empty:
        raise EmptyFiberError(f"window holds no point over base points {sorted(empty)[:5]}")
    lim = _sep_limit(a)
    blocked = np.zeros(len(window), dtype=bool)
    points = []
    # a point blocking g lies over a base point within a-1 of pi(g), i.e. over pi(g) itself
    for x in sorted(fibers, key=lambda x: fibers[x][0]):
        for i in fibers[x]:
            if not blocked[i]:
                points.append(i)
                for j in local_ball(window, i, lim):
                    blocked[j] = True
    return Net(window, points, a, 2 * a, base=base, projection=pi)


def projection_failures(net: Net) -> list:
    """Fibre-net points whose projection is not a base-net point."""
    base = net.base
    base_pts = {base.host.vertices[i] for i in base.points}
    return [net.host.vertices[i] for i in net.points if net.projection(net.host.vertices[i]) not in base_pts]


@dataclass
class QIReport:
    pairs_checked: int
    violations: list
    undense: list

    @property
    def ok(self) -> bool:
        return not self.violations and not self.undense


def check_quasi_isometry(H_window: FiniteGraph, phi: Callable, A: float, G_window: FiniteGraph,
                         margin: float | None = None) -> QIReport:
    """All-pairs check of (1/A) d(phi g, phi h) - A <= d(g, h) <= A d(phi g, phi h) + A,
    plus A-density of the image on the G-window interior."""
    img = []
    for g in H_window.vertices:
        y = phi(g)
        if y not in G_window.index:
            raise QIWitnessError(f"image {y} of {g} falls outside the target window")
        img.append(G_window.index[y])
    img = np.asarray(img)
    violations = []
    pairs = 0
    for part, dh in bfs_rows(H_window, np.arange(len(H_window))):
        _, dg_rows = next(bfs_rows(G_window, img[part], chunk=len(part)))
        dg = dg_rows[:, img]
        lo = dg / A - A
        hi = A * dg + A
        bad = (dh < lo) | (dh > hi) | (dh < 0) | (dg < 0)
        pairs += dh.size
        for r, c in zip(*np.nonzero(bad)):
            if len(violations) < MAX_WITNESSES:
                violations.append((H_window.vertices[part[r]], H_window.vertices[c], int(dh[r, c]), int(dg[r, c])))
    margin = A if margin is None else margin
    near = bfs_distances(G_window, np.unique(img))
    interior = G_window.dist <= G_window.radius - margin if G_window.dist is not None else np.ones(len(G_window), bool)
    undense = [G_window.vertices[i] for i in np.flatnonzero(interior & ((near < 0) | (near > A)))]
    return QIReport(pairs, violations, undense[:MAX_WITNESSES])


def transport_net(net: Net, phi: Callable, A: float, G_window: FiniteGraph, check: bool = True) -> Net:
    """Push an (a', 2a')-net forward along an A-quasi-isometry.

    The image is declared an (a, 2a'A + A)-net with a' = aA + A^2. The point
    map is kept in ``embedding`` (input point index -> output host index).
    """
    if check:
        rep = check_quasi_isometry(net.host, phi, A, G_window)
        if not rep.ok:
            raise QIWitnessError(f"A={A} quasi-isometry fails: {rep.violations[:3]} {rep.undense[:3]}")
    a_in = net.a
    a_out = (a_in - A * A) / A
    b_out = 2 * a_in * A + A
    emb = {}
    for i in net.points:
        emb[int(i)] = G_window.idx(phi(net.host.vertices[i]))
    return Net(G_window, list(emb.values()), a_out, b_out, embedding=emb)


def homomorphism_failures(src: Net, dst: Net) -> list:
    """Net-graph edges of ``src`` whose images under ``dst.embedding`` are not adjacent."""
    emb = dst.embedding
    sg, dg = src.graph, dst.graph
    dadj = [set(x) for x in dg.adj]
    bad = []
    for i, j in sg.edges.tolist():
        x, y = int(src.points[i]), int(src.points[j])
        pi_, pj_ = dst.point_pos[emb[x]], dst.point_pos[emb[y]]
        if pj_ not in dadj[pi_]:
            bad.append((src.host.vertices[x], src.host.vertices[y]))
    return bad


@dataclass
class NetReport:
    a: float
    b: float
    n_points: int
    separated: bool
    dense_on_interior: bool
    max_degree: int
    distance_bound_violations: list
    n_violations: int
    unguarded_violations: int
    unguarded_witnesses: list
    pairs_checked: int

    def row(self) -> dict:
        return {"a": self.a, "b": self.b, "n_points": self.n_points, "max_degree": self.max_degree,
                "separated": self.separated, "dense": self.dense_on_interior,
                "violations": self.n_violations}


EXPLICIT_EDGE_BUDGET = 20_000_000


def _scan_net_graph(net: Net):
    """One streamed pass over all points: net-graph degrees, plus the edge list
    when it fits in EXPLICIT_EDGE_BUDGET (else ``None``)."""
    limit = math.floor(4 * net.b)
    pts, pos = net.points, net.point_pos
    degree = np.zeros(len(pts), dtype=np.int64)
    edges, n_edges = [], 0
    for part, rows in bfs_rows(net.host, pts, limit=limit, chunk=128):
        adj = rows[:, pts] > 0
        degree[pos[part]] = adj.sum(axis=1)
        if edges is not None:
            src, dst = np.nonzero(adj)
            src = pos[part[src]]
            keep = src < dst
            n_edges += int(keep.sum())
            if n_edges > EXPLICIT_EDGE_BUDGET:
                edges = None
            else:
                edges.append(np.stack([src[keep], dst[keep]], axis=1))
    if edges is not None:
        e = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
        net.__dict__["graph"] = FiniteGraph.from_edges([net.host.vertices[i] for i in pts], e)
    return degree, edges is not None


def _implicit_net_rows(net: Net, sources, targets, max_level: int):
    """Net-graph distances from each source point to the target points without
    building the net graph: level k+1 is every point within 4b (host) of level k.
    Unreached targets (beyond ``max_level``) get -1."""
    limit = math.floor(4 * net.b)
    host, pts = net.host, net.points
    for s in sources:
        out = np.full(len(targets), -1, dtype=np.int64)
        level = np.zeros(len(host), dtype=bool)
        level[s] = True
        reached = level.copy()
        k = 0
        while k < max_level:
            k += 1
            near = bfs_distances(host, np.flatnonzero(level), limit=limit)
            new = (near >= 0) & net.point_mask & ~reached
            if not new.any():
                break
            reached |= new
            hit = new[targets] & (out < 0)
            out[hit] = k
            if np.all((out >= 0) | (targets == s)):
                break
            level = new
        out[targets == s] = 0
        yield s, out


def verify_net(net: Net, distance_bound: bool = True) -> NetReport:
    """Exhaustive separation / interior density / degree / net-distance check.

    The net-distance bound is tested as d_net <= max(1, d_host / b) over all
    pairs of interior points; pairs breaking only the bare d_net <= d_host / b
    are counted separately with a few witnesses.
    """
    host = net.host
    pts = net.points
    lim = _sep_limit(net.a)
    separated = True
    if lim >= 1 and len(pts) > 1:
        for part, rows in bfs_rows(host, pts, limit=lim):
            if np.count_nonzero(rows[:, pts] > 0):
                separated = False
                break
    near = bfs_distances(host, pts) if len(pts) else np.full(len(host), -1)
    inside = net.interior
    dense = bool(np.all((near[inside] >= 0) & (near[inside] <= math.floor(net.b))))
    degree, explicit = _scan_net_graph(net) if len(pts) else (np.zeros(1, dtype=np.int64), True)
    max_degree = int(degree.max())

    guarded, unguarded, witnesses, pairs, n_guarded = [], 0, [], 0, 0
    if distance_bound and len(pts):
        b = net.b
        ipos = np.flatnonzero(inside[pts])        # positions within points
        ihost = pts[ipos]
        host_rows = bfs_rows(host, ihost)
        if explicit:
            net_rows = (dn[:, ipos] for _, dn in bfs_rows(net.graph, ipos))
        else:
            cap = int(np.ceil(2 * host.radius / b)) + 1
            net_rows = (row[None, :] for _, row in _implicit_net_rows(net, ihost, ihost, cap))
        buf = []
        for part_h, dh in host_rows:
            dh = dh[:, ihost]
            if explicit:
                dn = next(net_rows)
            else:
                dn = np.concatenate([next(net_rows) for _ in part_h])
            off = dh > 0
            pairs += int(off.sum())
            unreachable = off & (dn < 0)
            bad_g = off & ((dn * b > np.maximum(b, dh)) | unreachable)
            bad_u = off & ((dn * b > dh) | unreachable)
            n_guarded += int(bad_g.sum())
            unguarded += int(bad_u.sum())
            for bad, sink in ((bad_g, guarded), (bad_u, witnesses)):
                for r, c in zip(*np.nonzero(bad)):
                    if len(sink) >= MAX_WITNESSES:
                        break
                    sink.append((host.vertices[part_h[r]], host.vertices[ihost[c]], int(dh[r, c]), int(dn[r, c])))
    return NetReport(net.a, net.b, len(pts), separated, dense, max_degree, guarded, n_guarded,
                     unguarded, witnesses, pairs)


def maximality_failures(net: Net) -> list:
    """Interior non-points with no point within distance < a (would have been added)."""
    near = bfs_distances(net.host, net.points)
    lim = _sep_limit(net.a)
    bad = net.interior & ~net.point_mask & ((near < 0) | (near > lim))
    return [net.host.vertices[i] for i in np.flatnonzero(bad)]


def net_from_points(host: FiniteGraph, points, a, b, **kw) -> Net:
    return Net(host, _as_indices(host, points), a, b, **kw)

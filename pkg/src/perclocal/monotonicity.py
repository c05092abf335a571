"""Coupled site exploration along a neighbour-lifting map.

The base exploration runs on the target graph; every step is shadowed on the
source graph by a lift of the newly revealed vertex, using the same bit. Both
sides reveal each vertex once, so both are honest Bernoulli(p) explorations,
and the lifted open set is connected with the same size as the base cluster
seen so far.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .graph import FiniteGraph, RootedGraphOracle
from .percolation import MASK64

MAX_HORIZON = 12
RULES = ("index", "recent")


class LiftError(AssertionError):
    pass


@dataclass(frozen=True)
class LiftMap:
    source: RootedGraphOracle
    target: RootedGraphOracle
    pi: Callable


@dataclass
class LiftReport:
    ok: bool
    checked: int
    failures: list
    surjective: bool
    missing: list

    def __bool__(self):
        return self.ok


def check_lift_property(lift: LiftMap, source_window: FiniteGraph, target_window: FiniteGraph,
                        max_witnesses: int = 20) -> LiftReport:
    """Every target neighbour y of pi(u) has a source neighbour v of u with pi(v) = y.

    Checked for source-window vertices at least one step inside the window.
    Surjectivity is reported for target-window vertices one step inside.
    """
    failures = []
    checked = 0
    R = source_window.radius
    for i, u in enumerate(source_window.vertices):
        if source_window.dist is not None and source_window.dist[i] > R - 1:
            continue
        checked += 1
        images = {lift.pi(v) for v in lift.source.neighbors(u)}
        for y in lift.target.neighbors(lift.pi(u)):
            if y not in images:
                failures.append((u, y))
                if len(failures) >= max_witnesses:
                    break
        if len(failures) >= max_witnesses:
            break
    hit = {lift.pi(u) for u in source_window.vertices}
    Rt = target_window.radius
    missing = [y for j, y in enumerate(target_window.vertices)
               if (target_window.dist is None or target_window.dist[j] <= Rt - 1) and y not in hit]
    return LiftReport(not failures, checked, failures, not missing, missing[:max_witnesses])


@dataclass
class ExplorationState:
    open_set: list = field(default_factory=list)
    closed_set: list = field(default_factory=list)
    step: int = 0

    def revealed(self) -> set:
        return set(self.open_set) | set(self.closed_set)


@dataclass
class CoupledRun:
    base_state: ExplorationState
    lifted_state: ExplorationState
    terminated: bool
    history: list          # (step, base_open, base_closed, lifted_open, lifted_closed, sizes_equal)
    bits: list


class BitStream:
    """Bernoulli(p) bits from Philox keyed by (seed, 0), drawn in blocks."""

    def __init__(self, p: float, seed: int, block: int = 1024):
        key = np.array([seed & MASK64, 0], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))
        self.p, self.block, self.buf, self.pos = p, block, np.empty(0), 0

    def __call__(self) -> bool:
        if self.pos == len(self.buf):
            self.buf, self.pos = self.gen.random(self.block), 0
        self.pos += 1
        return bool(self.buf[self.pos - 1] < self.p)


def _next_edge(G: RootedGraphOracle, state: ExplorationState, revealed: set, rule: str, cursor: list):
    if rule == "index":
        opens = state.open_set
        while cursor[0] < len(opens):
            x = opens[cursor[0]]
            for y in G.neighbors(x):
                if y not in revealed:
                    return x, y
            cursor[0] += 1
        return None
    for x in reversed(state.open_set):
        for y in G.neighbors(x):
            if y not in revealed:
                return x, y
    return None


def coupled_exploration(lift: LiftMap, base_root, lifted_root, p: float | None = None, seed: int = 0,
                        max_steps: int = 100, bits=None, rule: str = "index") -> CoupledRun:
    """Explore the base cluster of ``base_root`` and its lift from ``lifted_root``.

    Step 0 reveals both roots. Every later step takes the base frontier edge
    (x, y) with x earliest in the open list (``rule="index"``) or most recent
    (``rule="recent"``), y first in neighbour order; the lifted side reveals the
    first neighbour of lift(x) mapping to y. ``bits`` may be a finite sequence
    replacing the seeded stream. ``max_steps`` caps the number of reveals,
    the root included.
    """
    if rule not in RULES:
        raise ValueError(f"unknown frontier rule {rule!r}")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if lift.pi(lifted_root) != base_root:
        raise ValueError("pi(lifted_root) must equal base_root")
    if bits is None:
        if p is None:
            raise ValueError("p is required when no bit sequence is given")
        draw = BitStream(p, seed)
    else:
        it = iter(bits)
        draw = lambda: next(it)  # noqa: E731
    G, S = lift.target, lift.source
    base, lifted = ExplorationState(), ExplorationState()
    seen_b, seen_l = set(), set()
    lift_of = {}
    used = []
    history = []
    cursor = [0]

    def reveal(y, v):
        b = bool(draw())
        used.append(b)
        seen_b.add(y)
        seen_l.add(v)
        (base.open_set if b else base.closed_set).append(y)
        (lifted.open_set if b else lifted.closed_set).append(v)
        if b:
            lift_of[y] = v

    def record():
        eq = len(base.open_set) == len(lifted.open_set) and len(base.closed_set) == len(lifted.closed_set)
        if not eq:
            raise LiftError("coupled sizes diverged")
        history.append((base.step, len(base.open_set), len(base.closed_set),
                        len(lifted.open_set), len(lifted.closed_set), eq))

    reveal(base_root, lifted_root)
    record()
    terminated = False
    while True:
        edge = _next_edge(G, base, seen_b, rule, cursor)
        if edge is None:
            terminated = True
            break
        if base.step + 1 >= max_steps:
            break
        x, y = edge
        xt = lift_of[x]
        v = next((w for w in S.neighbors(xt) if lift.pi(w) == y and w not in seen_l), None)
        if v is None:
            raise LiftError(f"no lift of {y} next to {xt}")
        base.step += 1
        lifted.step += 1
        reveal(y, v)
        record()
    return CoupledRun(base, lifted, terminated, history, used)


def lifted_connected(lift: LiftMap, run: CoupledRun) -> bool:
    """Independent audit: the lifted open set is connected in the source graph
    and pi maps it bijectively onto the base open set."""
    opens = run.lifted_state.open_set
    if not opens:
        return not run.base_state.open_set
    if sorted(map(lift.pi, opens)) != sorted(run.base_state.open_set) or len(set(opens)) != len(opens):
        return False
    pool = set(opens)
    seen = {opens[0]}
    stack = [opens[0]]
    while stack:
        u = stack.pop()
        for w in lift.source.neighbors(u):
            if w in pool and w not in seen:
                seen.add(w)
                stack.append(w)
    return seen == pool


@dataclass
class MarginalReport:
    base_iid: bool
    lifted_iid: bool
    sizes_equal: bool
    base_tail: list        # P(base cluster >= s), s = 1..horizon
    lifted_tail: list
    rules: tuple

    @property
    def dominance(self) -> bool:
        return all(a >= b for a, b in zip(self.lifted_tail, self.base_tail))

    @property
    def ok(self) -> bool:
        return self.base_iid and self.lifted_iid and self.sizes_equal and self.dominance

    def __bool__(self):
        return self.ok


def _iid(law: dict, p: Fraction) -> bool:
    # adaptive exploration: each revealed configuration must carry exactly its product weight
    for conf, mass in law.items():
        k = sum(b for _, b in conf)
        if mass != p ** k * (1 - p) ** (len(conf) - k):
            return False
    return sum(law.values()) == 1


def marginal_law_check(lift: LiftMap, p, horizon: int, base_root=None, lifted_root=None,
                       rules=RULES) -> MarginalReport:
    """Exhaustive check over all 2**horizon bit streams in exact arithmetic.

    The exploration reveals at most ``horizon`` vertices. For every frontier
    rule the revealed configurations on both sides must carry exactly their
    i.i.d. Bernoulli(p) weight, and the open-set sizes must agree stream by
    stream; the returned tails are for the first rule.
    """
    if not 1 <= horizon <= MAX_HORIZON:
        raise ValueError(f"horizon must lie in [1, {MAX_HORIZON}]")
    p = Fraction(p)
    base_root = lift.target.root if base_root is None else base_root
    lifted_root = lift.source.root if lifted_root is None else lifted_root
    base_iid = lifted_iid = sizes_equal = True
    tails = None
    for rule in rules:
        law_b, law_l = {}, {}
        size_b = [Fraction(0)] * (horizon + 1)
        size_l = [Fraction(0)] * (horizon + 1)
        for stream in itertools.product((False, True), repeat=horizon):
            k = sum(stream)
            w = p ** k * (1 - p) ** (horizon - k)
            if not w:
                continue
            run = coupled_exploration(lift, base_root, lifted_root, bits=stream,
                                      max_steps=horizon, rule=rule)
            cb = frozenset([(v, True) for v in run.base_state.open_set] + [(v, False) for v in run.base_state.closed_set])
            cl = frozenset([(v, True) for v in run.lifted_state.open_set] + [(v, False) for v in run.lifted_state.closed_set])
            law_b[cb] = law_b.get(cb, 0) + w
            law_l[cl] = law_l.get(cl, 0) + w
            nb, nl = len(run.base_state.open_set), len(run.lifted_state.open_set)
            sizes_equal &= nb == nl and lifted_connected(lift, run)
            size_b[nb] += w
            size_l[nl] += w
        base_iid &= _iid(law_b, p)
        lifted_iid &= _iid(law_l, p)
        if tails is None:
            tails = ([sum(size_b[s:]) for s in range(1, horizon + 1)],
                     [sum(size_l[s:]) for s in range(1, horizon + 1)])
    return MarginalReport(base_iid, lifted_iid, sizes_equal, tails[0], tails[1], tuple(rules))

"""Cayley graphs of the concrete group families used in the experiments.

A :class:`GroupSpec` is a direct product of factors, each one of ``"Z"``
(infinite cyclic), ``"H"`` (discrete Heisenberg group, coordinates
``(x, y, z)`` with ``(x,y,z)(x',y',z') = (x+x', y+y', z+z'+x*y')``) or a
positive integer ``k`` (cyclic group of order k). Elements are flat integer
tuples, one coordinate per Z/cyclic factor and three per Heisenberg factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .graph import RootedGraphOracle

WITNESS_RADIUS = 32
WITNESS_CAP = 2_000_000


class GenerationError(ValueError):
    """The declared generators could not be shown to generate the group."""


class DegenerateSetError(ValueError):
    pass


class NoQuotientError(ValueError):
    pass


class CapExceededError(RuntimeError):
    pass


def _factor_dim(f) -> int:
    return 3 if f == "H" else 1


def _factor_name(f) -> str:
    return {"Z": "Z", "H": "heisenberg"}.get(f, f"cyclic({f})")


@dataclass(frozen=True)
class GroupSpec:
    factors: tuple
    generators: tuple

    def __post_init__(self):
        for f in self.factors:
            if f not in ("Z", "H") and not (isinstance(f, int) and f >= 1):
                raise ValueError(f"unknown factor {f!r}")
        dim = self.dim
        for s in self.generators:
            if len(s) != dim:
                raise ValueError(f"generator {s} has {len(s)} coordinates, expected {dim}")

    @property
    def dim(self) -> int:
        return sum(_factor_dim(f) for f in self.factors)

    @property
    def family(self) -> str:
        if all(f == "Z" for f in self.factors):
            return f"free-abelian({len(self.factors)})"
        if self.factors == ("H",):
            return "heisenberg"
        if len(self.factors) == 1:
            return _factor_name(self.factors[0])
        parts, run = [], 0
        for f in self.factors + (None,):
            if f == "Z":
                run += 1
                continue
            if run:
                parts.append(f"free-abelian({run})")
                run = 0
            if f is not None:
                parts.append(_factor_name(f))
        return "product(" + ",".join(parts) + ")"

    @property
    def mods(self) -> tuple:
        out = []
        for f in self.factors:
            out += [0, 0, 0] if f == "H" else [0 if f == "Z" else f]
        return tuple(out)

    @property
    def identity(self) -> tuple:
        return (0,) * self.dim

    def normalize(self, g) -> tuple:
        return tuple(c % m if m else c for c, m in zip(g, self.mods))

    def mul(self, g, h) -> tuple:
        out, i = [], 0
        for f in self.factors:
            if f == "H":
                x, y, z = g[i:i + 3]
                x2, y2, z2 = h[i:i + 3]
                out += [x + x2, y + y2, z + z2 + x * y2]
                i += 3
            elif f == "Z":
                out.append(g[i] + h[i])
                i += 1
            else:
                out.append((g[i] + h[i]) % f)
                i += 1
        return tuple(out)

    def inverse(self, g) -> tuple:
        out, i = [], 0
        for f in self.factors:
            if f == "H":
                x, y, z = g[i:i + 3]
                out += [-x, -y, x * y - z]
                i += 3
            elif f == "Z":
                out.append(-g[i])
                i += 1
            else:
                out.append((-g[i]) % f)
                i += 1
        return tuple(out)

    @property
    def is_abelian(self) -> bool:
        return "H" not in self.factors


def make_spec(factors: Sequence, generators: Iterable[Sequence[int]]) -> GroupSpec:
    """Build a spec, reducing mod cyclic orders and closing under inversion.

    Declared order is kept; missing inverses are appended after the declared
    generators, identity and duplicates are dropped.
    """
    proto = GroupSpec(tuple(factors), ())
    ident = proto.identity
    out: list[tuple] = []
    seen = set()
    declared = [proto.normalize(tuple(int(c) for c in s)) for s in generators]
    for s in declared + [proto.inverse(s) for s in declared]:
        if s != ident and s not in seen:
            seen.add(s)
            out.append(s)
    return GroupSpec(proto.factors, tuple(out))


def free_abelian(d: int, generators=None) -> GroupSpec:
    if generators is None:
        generators = [tuple(int(i == j) for j in range(d)) for i in range(d)]
    return make_spec(("Z",) * d, generators)


def heisenberg(generators=None) -> GroupSpec:
    if generators is None:
        generators = [(1, 0, 0), (0, 1, 0)]
    return make_spec(("H",), generators)


def cyclic(k: int, generators=None) -> GroupSpec:
    return make_spec((k,), [(1,)] if generators is None else generators)


def product(*specs: GroupSpec) -> GroupSpec:
    factors = tuple(f for s in specs for f in s.factors)
    gens, offset, total = [], 0, sum(s.dim for s in specs)
    for s in specs:
        for g in s.generators:
            gens.append((0,) * offset + tuple(g) + (0,) * (total - offset - s.dim))
        offset += s.dim
    return make_spec(factors, gens)


def _basis(spec: GroupSpec) -> list[tuple]:
    out, i = [], 0
    for f in spec.factors:
        width = _factor_dim(f)
        if f != 1:
            for j in range(width):
                e = [0] * spec.dim
                e[i + j] = 1
                out.append(tuple(e))
        i += width
    return out


def _neighbor_fn(spec: GroupSpec) -> Callable:
    S = spec.generators
    if spec.is_abelian:
        mods = spec.mods
        if not any(mods):
            if spec.dim == 1:
                steps = [s[0] for s in S]
                return lambda g: [(g[0] + a,) for a in steps]
            if spec.dim == 2:
                return lambda g: [(g[0] + a, g[1] + b) for a, b in S]
            if spec.dim == 3:
                return lambda g: [(g[0] + a, g[1] + b, g[2] + c) for a, b, c in S]
            return lambda g: [tuple(x + y for x, y in zip(g, s)) for s in S]
        return lambda g: [tuple((x + y) % m if m else x + y for x, y, m in zip(g, s, mods)) for s in S]
    mul = spec.mul
    return lambda g: [mul(g, s) for s in S]


def witness_generation(spec: GroupSpec, radius: int = WITNESS_RADIUS, cap: int = WITNESS_CAP) -> int:
    """Return the radius at which every standard basis element has been reached.

    Raises GenerationError if that does not happen within ``radius`` (or the
    BFS hits ``cap`` vertices first).
    """
    targets = set(_basis(spec))
    nbrs = _neighbor_fn(spec)
    ident = spec.identity
    targets.discard(ident)
    seen = {ident}
    frontier = [ident]
    for r in range(1, radius + 1):
        if not targets:
            return r - 1
        nxt = []
        for g in frontier:
            for h in nbrs(g):
                if h not in seen:
                    seen.add(h)
                    nxt.append(h)
                    targets.discard(h)
        if len(seen) > cap:
            break
        frontier = nxt
    if targets:
        raise GenerationError(
            f"generators {list(spec.generators)} of {spec.family} do not reach "
            f"{sorted(targets)} within radius {radius}")
    return radius


def make_oracle(spec: GroupSpec, check: bool = True, label: str | None = None) -> RootedGraphOracle:
    """Cay(G, S) rooted at the identity; neighbours are ``g*s`` in generator order."""
    if check:
        witness_generation(spec)
    return RootedGraphOracle(spec.identity, _neighbor_fn(spec), label or spec.family)


# -- Z^2 word norms and the (u, v) selection -------------------------------------

class SelectedPair(NamedTuple):
    u: tuple
    v: tuple


def _det(u, v) -> int:
    return u[0] * v[1] - u[1] * v[0]


def generates_z2(S: Sequence[tuple]) -> bool:
    """Exact test: integer vectors generate Z^2 iff their 2x2 minors have gcd 1."""
    g = 0
    for i in range(len(S)):
        for j in range(i + 1, len(S)):
            g = math.gcd(g, abs(_det(S[i], S[j])))
    return g == 1


def _gens(S) -> list[tuple]:
    """Generators of a spec, or a raw Z^2 list closed under inversion."""
    if isinstance(S, GroupSpec):
        return list(S.generators)
    return list(make_spec(("Z", "Z"), S).generators)


def word_norm(S, target, radius_cap: int = 256) -> int:
    """BFS distance from 0 to ``target`` in Cay(Z^2, S)."""
    gens = _gens(S)
    target = tuple(target)
    if target == (0, 0):
        return 0
    seen = {(0, 0)}
    frontier = [(0, 0)]
    for r in range(1, radius_cap + 1):
        nxt = []
        for x, y in frontier:
            for a, b in gens:
                h = (x + a, y + b)
                if h == target:
                    return r
                if h not in seen:
                    seen.add(h)
                    nxt.append(h)
        frontier = nxt
    raise CapExceededError(f"{target} not reached within radius {radius_cap}")


def word_norm_table(S, radius: int):
    """Word norms of every point of Z^2 within word distance ``radius``.

    Vectorised BFS on a box of half-width ``radius * max|s|_inf`` (no path of
    length <= radius can leave it). Returns ``(dist, half_width)``; entries are
    -1 beyond ``radius``; point (x, y) sits at ``dist[x + L, y + L]``.
    """
    gens = _gens(S)
    L = radius * max(max(abs(a), abs(b)) for a, b in gens)
    size = 2 * L + 1
    dist = np.full((size, size), -1, dtype=np.int32)
    frontier = np.zeros((size, size), dtype=bool)
    frontier[L, L] = True
    dist[L, L] = 0
    for r in range(1, radius + 1):
        nxt = np.zeros_like(frontier)
        for a, b in gens:
            # nxt[x+a, y+b] |= frontier[x, y]
            xs = slice(max(a, 0), size + min(a, 0))
            xd = slice(max(-a, 0), size + min(-a, 0))
            ys = slice(max(b, 0), size + min(b, 0))
            yd = slice(max(-b, 0), size + min(-b, 0))
            nxt[xs, ys] |= frontier[xd, yd]
        nxt &= dist < 0
        dist[nxt] = r
        frontier = nxt
    return dist, L


def select_uv(S) -> SelectedPair:
    """Pick u of maximal Euclidean norm, then v maximising |proj of v orthogonal to u|.

    All comparisons are in exact integers (squared norms, |det(u, v)|); ties go
    to the lexicographically largest tuple.
    """
    gens = _gens(S)
    if not gens:
        raise DegenerateSetError("empty generating set")
    u = max(gens, key=lambda s: (s[0] ** 2 + s[1] ** 2, s))
    v = max(gens, key=lambda s: (abs(_det(u, s)), s))
    if _det(u, v) == 0:
        raise DegenerateSetError(f"all generators are collinear with {u}")
    return SelectedPair(u, v)


def verify_uv(S, pair: SelectedPair, window: int = 25) -> list[tuple]:
    """Check (|m|+|n|)/3 <= ||mu+nv||_S <= |m|+|n| for |m|,|n| <= window.

    Norms come from an independent grid BFS. Returns the violating
    ``(m, n, norm)`` triples (empty when the bounds hold).
    """
    u, v = pair
    table, L = word_norm_table(S, 2 * window)
    bad = []
    for m in range(-window, window + 1):
        for n in range(-window, window + 1):
            x, y = m * u[0] + n * v[0], m * u[1] + n * v[1]
            norm = int(table[x + L, y + L])
            l1 = abs(m) + abs(n)
            if norm < 0 or 3 * norm < l1 or norm > l1:
                bad.append((m, n, norm))
    return bad


def random_generating_set(rng: np.random.Generator, entry_bound: int = 5, max_size: int = 4) -> list[tuple]:
    """Random symmetric generating set of Z^2 with entries in [-bound, bound]."""
    while True:
        k = int(rng.integers(2, max_size + 1))
        raw = [tuple(int(c) for c in rng.integers(-entry_bound, entry_bound + 1, size=2)) for _ in range(k)]
        raw = [s for s in raw if s != (0, 0)]
        if len(raw) >= 2 and generates_z2(raw):
            return list(free_abelian(2, raw).generators)


# -- quotient onto Z^2 -------------------------------------------------------------

def quotient_map(spec: GroupSpec):
    """Surjective homomorphism onto Z^2 by projecting onto two free coordinates.

    Free coordinates are Z factors and the (x, y) pair of a Heisenberg factor
    (its abelianisation). Returns ``(target_spec, pi)``.
    """
    free, i = [], 0
    for f in spec.factors:
        if f == "H":
            free += [i, i + 1]
        elif f == "Z":
            free.append(i)
        i += _factor_dim(f)
    if len(free) < 2:
        raise NoQuotientError(f"{spec.family} has no Z^2 quotient by coordinate projection")
    a, b = free[0], free[1]

    def pi(g):
        return (g[a], g[b])

    images = [pi(s) for s in spec.generators]
    if not generates_z2([s for s in images if s != (0, 0)]):
        raise NoQuotientError(f"projection of {spec.family} generators does not generate Z^2")
    target = make_spec(("Z", "Z"), images)
    return target, pi


def projection_norm_sq(u, v) -> Fraction:
    """Squared Euclidean norm of v projected orthogonally to u, exactly."""
    return Fraction(_det(u, v) ** 2, u[0] ** 2 + u[1] ** 2)


def parse_group(text: str, generators=None) -> GroupSpec:
    """Parse ``"Z^2"``, ``"H"``, ``"Z/7^2"``, ``"Z^2xZ/8"`` and similar.

    Factors are separated by ``x``; ``^k`` repeats a factor. Without explicit
    generators every factor gets its standard ones.
    """
    specs = []
    for part in text.replace(" ", "").split("x"):
        base, _, power = part.partition("^")
        reps = int(power) if power else 1
        if base == "Z":
            one = free_abelian(1)
        elif base == "H":
            one = heisenberg()
        elif base.startswith("Z/") and base[2:].isdigit():
            one = cyclic(int(base[2:]))
        else:
            raise ValueError(f"cannot parse group factor {part!r} in {text!r}")
        if reps < 1:
            raise ValueError(f"bad exponent in {part!r}")
        specs += [one] * reps
    if not specs:
        raise ValueError("empty group description")
    spec = product(*specs) if len(specs) > 1 else specs[0]
    if generators is not None:
        spec = make_spec(spec.factors, generators)
    return spec

"""Command-line experiment runner.

Every subcommand reads a TOML config (``--config``), validates it against a
per-kind schema (unknown keys are errors), writes CSV + SVG artifacts and a
``manifest.json`` into ``--out``. Flags beat ``PERCLOCAL_*`` environment
variables, which beat config values.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import cayley, domination, locality, monotonicity, nets, percolation, report
from .graph import ResourceLimitError, ball, dumps_edge_list

log = logging.getLogger("perclocal")

CONFIG_VERSION = 1
ENV_PREFIX = "PERCLOCAL_"
KINDS = ("ball", "locality", "net", "en-scan", "renorm", "dominate", "couple", "pc-estimate", "pipeline")


class ConfigError(ValueError):
    pass


class InvariantFailure(RuntimeError):
    pass


# field -> (types, required, default)
_COMMON = {
    "version": (int, True, None),
    "kind": (str, False, None),
    "seed": (int, True, None),
    "threads": (int, False, 1),
    "out": (str, False, None),
}
_NUM = (int, float)
SCHEMAS = {
    "ball": {"graph": (str, True, None), "generators": (list, False, None), "radius": (int, True, None)},
    "locality": {"graph": (str, True, None), "target": (str, True, None), "r_max": (int, True, None),
                 "growth_r_max": (int, False, None)},
    "net": {"graph": (str, True, None), "generators": (list, False, None), "a": ((int, list), True, None),
            "window": (int, True, None), "construction": (str, False, "auto"),
            "distance_bound": (bool, False, True)},
    "en-scan": {"graph": (str, True, None), "p": ((*_NUM, list), True, None), "n": ((int, list), True, None),
                "samples": (int, True, None), "mode": (str, False, "site")},
    "renorm": {"graph": (str, True, None), "p": (_NUM, True, None), "n": (int, True, None),
               "C": (int, False, 1), "interior": (int, True, None), "runs": (int, True, None),
               "k_indep": (int, False, 80)},
    "dominate": {"k": (int, True, None), "D": (int, True, None),
                 "graphs": (list, False, ["K2", "P3", "P4", "C4"]), "target_p": (_NUM, False, 0.75),
                 "family": (str, False, "standard")},
    "couple": {"source": (str, True, None), "target": (str, True, None), "p": (_NUM, True, None),
               "max_steps": (int, True, None), "runs": (int, False, 1), "horizon": (int, False, None)},
    "pc-estimate": {"graphs": (list, True, None), "r": (int, True, None), "trials": (int, True, None),
                    "mode": (str, False, "site"), "tol": (float, False, 0.01), "bootstrap": (int, False, 1000)},
    "pipeline": {"graph": (str, True, None), "generators": (list, False, None), "p": (_NUM, True, None),
                 "C": (int, False, 1), "q": (_NUM, True, None), "n": ((int, list), True, None),
                 "samples": (int, True, None), "interior": (int, True, None), "k_indep": (int, False, 80)},
}
ENV_FIELDS = {"SEED": ("seed", int), "THREADS": ("threads", int), "OUT": ("out", str)}


def validate(kind: str, raw: dict) -> dict:
    """Fill defaults and type-check; raises ConfigError naming the field."""
    if kind not in SCHEMAS:
        raise ConfigError(f"kind: unknown experiment kind {kind!r}")
    schema = {**_COMMON, **SCHEMAS[kind]}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key for kind {kind!r}")
    cfg = {}
    for key, (types, required, default) in schema.items():
        if key not in raw:
            if required:
                raise ConfigError(f"{key}: required field missing")
            cfg[key] = default
            continue
        val = raw[key]
        if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
            raise ConfigError(f"{key}: expected {types}, got bool")
        if not isinstance(val, types):
            raise ConfigError(f"{key}: expected {types}, got {type(val).__name__}")
        cfg[key] = val
    if cfg["version"] != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {cfg['version']}")
    if cfg["kind"] not in (None, kind):
        raise ConfigError(f"kind: config is for {cfg['kind']!r}, not {kind!r}")
    cfg["kind"] = kind
    if cfg["threads"] < 1:
        raise ConfigError("threads: must be >= 1")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    for key in ("p", "q", "target_p"):
        vals = cfg.get(key)
        for v in vals if isinstance(vals, list) else ([vals] if vals is not None else []):
            if not isinstance(v, _NUM) or not 0 <= v <= 1:
                raise ConfigError(f"{key}: probabilities must lie in [0, 1]")
    return cfg


def load_config(kind: str, path: str | None, overrides: dict, environ=os.environ) -> dict:
    raw = {}
    if path:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: {exc}") from exc
    for env, (key, cast) in ENV_FIELDS.items():
        if ENV_PREFIX + env in environ:
            try:
                raw[key] = cast(environ[ENV_PREFIX + env])
            except ValueError as exc:
                raise ConfigError(f"{key}: bad value in ${ENV_PREFIX}{env}") from exc
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate(kind, raw)


def _as_list(x):
    return x if isinstance(x, list) else [x]


def _spec(cfg, key="graph"):
    try:
        return cayley.parse_group(cfg[key], cfg.get("generators") if key == "graph" else None)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _oracle(spec):
    return cayley.make_oracle(spec)


def build_net(spec, a: int, window, construction: str = "auto"):
    """Lattice net for rank-2 free abelian groups, fibre net for Heisenberg,
    greedy maximal a-separated set otherwise."""
    if construction == "auto":
        if spec.factors == ("Z", "Z"):
            construction = "lattice"
        elif spec.factors == ("H",):
            construction = "fiber"
        else:
            construction = "greedy"
    if construction == "lattice":
        return nets.z2_lattice_net(spec.generators, a, window)
    if construction == "fiber":
        return nets.fiber_net(spec, a, window)
    if construction == "greedy":
        pts = nets.extend_maximal_separated(window, [window.root_index], a)
        return nets.net_from_points(window, pts, a, a)
    raise ConfigError(f"construction: unknown net construction {construction!r}")


# -- runners: each returns (artifact paths, failures) ---------------------------------

@dataclass
class Ctx:
    cfg: dict
    out: Path

    def path(self, name):
        return self.out / name


def run_ball(ctx):
    cfg = ctx.cfg
    B = ball(_oracle(_spec(cfg)), None, cfg["radius"])
    sph = np.bincount(B.dist, minlength=cfg["radius"] + 1)
    rows = [(r, int(sph[r]), int(sph[: r + 1].sum())) for r in range(cfg["radius"] + 1)]
    csv = report.emit_csv(rows, report.SCHEMAS["ball"], ctx.path("ball.csv"))
    edges = ctx.path("ball.edges")
    edges.write_text(dumps_edge_list(B))
    return [csv, edges], []


def run_locality(ctx):
    cfg = ctx.cfg
    G, H = _oracle(_spec(cfg)), _oracle(_spec(cfg, "target"))
    R = locality.locality_radius(G, H, cfg["r_max"])
    csv = report.emit_csv(R.rows, report.SCHEMAS["locality"], ctx.path("locality.csv"))
    log.info("R(%s, %s) = %s", cfg["graph"], cfg["target"], R)
    arts = [csv]
    if cfg["growth_r_max"]:
        rows = []
        for key in ("graph", "target"):
            est = locality.growth_fit(_oracle(_spec(cfg, key)), cfg["growth_r_max"])
            rows.append((cfg[key], est.r_max, est.d, est.c, est.slope))
        arts.append(report.emit_csv(rows, report.SCHEMAS["growth"], ctx.path("growth.csv")))
    return arts, []


def run_net(ctx):
    cfg = ctx.cfg
    spec = _spec(cfg)
    W = ball(_oracle(spec), None, cfg["window"])
    rows, failures = [], []
    for a in _as_list(cfg["a"]):
        net = build_net(spec, a, W, cfg["construction"])
        rep = nets.verify_net(net, distance_bound=cfg["distance_bound"])
        rows.append((rep.a, rep.b, rep.n_points, len(net.interior_points), rep.separated,
                     rep.dense_on_interior, rep.max_degree, rep.n_violations, rep.unguarded_violations))
        if not (rep.separated and rep.dense_on_interior) or rep.n_violations:
            failures.append(f"net a={a} failed verification")
        for w in rep.unguarded_witnesses[:5]:
            log.info("a=%s unguarded bound fails at %s", a, w)
    return [report.emit_csv(rows, report.SCHEMAS["net"], ctx.path("net.csv"))], failures


def run_en_scan(ctx):
    cfg = ctx.cfg
    G = _oracle(_spec(cfg))
    ns = sorted(_as_list(cfg["n"]))
    rows = []
    regions = {n: ball(G, None, 10 * n) for n in ns}
    for p in _as_list(cfg["p"]):
        for n in ns:
            est = percolation.estimate_event_prob(G, p, n, cfg["samples"], cfg["seed"], cfg["mode"],
                                                  cfg["threads"], region=regions[n])
            rows.append((p, n, est.samples, est.hits, est.p_hat, est.ci_lo, est.ci_hi))
            log.info("p=%s n=%s P(E_n)=%.4f", p, n, est.p_hat)
    csv = report.emit_csv(rows, report.SCHEMAS["en-scan"], ctx.path("en_scan.csv"))
    svg = report.emit_plot(csv, "line", "n", "p_hat", "p", title="P(E_n)")
    return [csv, svg], []


def _renorm_setup(spec, n, C, interior, construction="auto"):
    a = math.ceil(n / (4 * C))
    W = ball(_oracle(spec), None, interior + 10 * n)
    net = build_net(spec, a, W, construction)
    if net.b > C * a:
        raise InvariantFailure(f"net is only ({net.a}, {net.b})-dense, needs b <= C*a = {C * a}")
    return W, net


def run_renorm(ctx):
    cfg = ctx.cfg
    n, C = cfg["n"], cfg["C"]
    W, net = _renorm_setup(_spec(cfg), n, C, cfg["interior"])
    failures = []
    if not percolation.independence_radius_check(net, n, cfg["k_indep"]):
        failures.append("independence radius certificate failed")
    evs = percolation.block_evaluators(net, n)
    rows = []
    for run in range(cfg["runs"]):
        proc = percolation.renormalize(percolation.sample(W, "site", cfg["p"], cfg["seed"], run), net, n, C, evs)
        glue = percolation.glue_all(proc)
        clusters = proc.open_clusters()
        rows.append((run, int(proc.determinate.sum()), int((proc.eta == 1).sum()),
                     max((len(c) for c in clusters), default=0), glue.paths, len(glue.failures)))
        if glue.failures:
            failures.append(f"run {run}: {len(glue.failures)} gluing failures")
    return [report.emit_csv(rows, report.SCHEMAS["renorm"], ctx.path("renorm.csv"))], failures


def run_dominate(ctx):
    cfg = ctx.cfg
    try:
        graphs = [domination.fixture_graph(g) for g in cfg["graphs"]]
    except KeyError as exc:
        raise ConfigError(f"graphs: unknown fixture graph {exc}") from exc
    fam = domination.correlated_family() if cfg["family"] == "correlated" else domination.adversary_family(cfg["k"])
    target = Fraction(cfg["target_p"]).limit_denominator(1 << 20)
    res = domination.estimate_q_threshold(cfg["k"], cfg["D"], fam, graphs, target)
    rows = [(cfg["graphs"][gi], name, cfg["k"], level, dom) for gi, name, level, dom in res.rows]
    log.info("q(k=%s, D=%s) = %s (%.6f)", cfg["k"], cfg["D"], res.q, float(res.q))
    failures = [] if res.reduction_ok else ["graph-power reduction check failed"]
    return [report.emit_csv(rows, report.SCHEMAS["dominate"], ctx.path("dominate.csv"))], failures


def make_lift(source: str, target: str) -> monotonicity.LiftMap:
    """Coordinate truncation (zero padding if needed) reduced into the target group."""
    S, T = cayley.parse_group(source), cayley.parse_group(target)
    dt = T.dim

    def pi(v):
        w = tuple(v[:dt]) + (0,) * max(0, dt - len(v))
        return T.normalize(w)
    return monotonicity.LiftMap(cayley.make_oracle(S), cayley.make_oracle(T), pi)


def run_couple(ctx):
    cfg = ctx.cfg
    try:
        lift = make_lift(cfg["source"], cfg["target"])
    except ValueError as exc:
        raise ConfigError(f"source/target: {exc}") from exc
    R = 3
    chk = monotonicity.check_lift_property(lift, ball(lift.source, None, R + 1), ball(lift.target, None, R))
    if not chk.ok:
        raise InvariantFailure(f"{cfg['source']} -> {cfg['target']} is not neighbour-lifting: {chk.failures[:3]}")
    failures, rows = [], []
    for run in range(cfg["runs"]):
        res = monotonicity.coupled_exploration(lift, lift.target.root, lift.source.root, cfg["p"],
                                               cfg["seed"] + run, cfg["max_steps"])
        if not monotonicity.lifted_connected(lift, res):
            failures.append(f"run {run}: lifted open set not connected")
        if run == 0:
            rows = res.history
    arts = [report.emit_csv(rows, report.SCHEMAS["couple"], ctx.path("couple.csv"))]
    if cfg["horizon"]:
        rep = monotonicity.marginal_law_check(lift, Fraction(cfg["p"]).limit_denominator(1 << 20), cfg["horizon"])
        if not rep.ok:
            failures.append("exact marginal law check failed")
        tail = [(s + 1, "base", float(b)) for s, b in enumerate(rep.base_tail)]
        tail += [(s + 1, "lifted", float(b)) for s, b in enumerate(rep.lifted_tail)]
        arts.append(report.emit_csv(tail, ("s", "side", "tail"), ctx.path("couple_tail.csv")))
    return arts, failures


def run_pc_estimate(ctx):
    cfg = ctx.cfg
    rows, curve = [], []
    for g in cfg["graphs"]:
        try:
            spec = cayley.parse_group(g)
        except ValueError as exc:
            raise ConfigError(f"graphs: {exc}") from exc
        est = percolation.estimate_pc(_oracle(spec), cfg["trials"], cfg["r"], cfg["seed"], cfg["mode"],
                                      cfg["tol"], cfg["bootstrap"], cfg["threads"])
        rows.append((g, cfg["r"], cfg["trials"], est.p_c_hat, est.ci_lo, est.ci_hi))
        curve += [(g, p, f) for p, f in sorted(est.curve)]
        log.info("p_c(%s) ~ %.4f [%.4f, %.4f]", g, est.p_c_hat, est.ci_lo, est.ci_hi)
    csv = report.emit_csv(rows, report.SCHEMAS["pc-estimate"], ctx.path("pc_estimate.csv"))
    ccsv = report.emit_csv(curve, report.SCHEMAS["pc-curve"], ctx.path("pc_curve.csv"))
    svg = report.emit_plot(ccsv, "line", "p", "spanning", "graph", title="spanning probability")
    return [csv, ccsv, svg], []


def run_pipeline(ctx):
    """Net, good-block scale n, renormalised process, certificates, crossing."""
    cfg = ctx.cfg
    spec = _spec(cfg)
    G = _oracle(spec)
    p, q, C = cfg["p"], cfg["q"], cfg["C"]
    chosen = None
    for n in sorted(_as_list(cfg["n"])):
        est = percolation.estimate_event_prob(G, p, n, cfg["samples"], cfg["seed"], threads=cfg["threads"])
        log.info("n=%s P(E_n)=%.4f", n, est.p_hat)
        if est.p_hat >= q:
            chosen = (n, est)
            break
    if chosen is None:
        raise InvariantFailure(f"no candidate n reaches P(E_n) >= q={q}")
    n, est = chosen
    W, net = _renorm_setup(spec, n, C, cfg["interior"])
    rep = nets.verify_net(net, distance_bound=False)
    net_ok = rep.separated and rep.dense_on_interior
    indep_ok = percolation.independence_radius_check(net, n, cfg["k_indep"])
    proc = percolation.renormalize(percolation.sample(W, "site", p, cfg["seed"], 0), net, n, C)
    certified = net_ok and indep_ok and proc.determinate.any()
    crosses = percolation.eta_crosses(proc) if certified else "refused"
    row = (n, est.p_hat, q, net.a, len(net.points), int(proc.determinate.sum()), int((proc.eta == 1).sum()),
           indep_ok, net_ok, crosses)
    arts = [report.emit_csv([row], report.SCHEMAS["pipeline"], ctx.path("pipeline.csv"))]
    failures = [] if certified else ["structural certificate failed; no percolation conclusion reported"]
    return arts, failures


HELP = {
    "ball": "ball and sphere sizes of a Cayley graph",
    "locality": "largest radius with isomorphic rooted balls",
    "net": "build and verify (a, b)-nets",
    "en-scan": "estimate P(E_n) over a grid of p and n",
    "renorm": "renormalize and glue eta-open paths",
    "dominate": "domination threshold q(k, D) on fixture graphs",
    "couple": "coupled exploration along a lift",
    "pc-estimate": "bisection estimate of p_c",
    "pipeline": "end-to-end percolation certificate",
}

RUNNERS = {
    "ball": run_ball, "locality": run_locality, "net": run_net, "en-scan": run_en_scan,
    "renorm": run_renorm, "dominate": run_dominate, "couple": run_couple,
    "pc-estimate": run_pc_estimate, "pipeline": run_pipeline,
}


def run_experiment(kind: str, cfg: dict, out_dir) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    status, failures, arts = 0, [], []
    try:
        arts, failures = RUNNERS[kind](Ctx(cfg, out))
    except (InvariantFailure, percolation.MarginError, percolation.NonConvergenceError,
            ResourceLimitError, monotonicity.LiftError) as exc:
        failures = [str(exc)]
    for f in failures:
        log.error("%s", f)
    if failures:
        status = 3
    report.write_manifest(out, kind, cfg, arts, status, {"failures": failures})
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perclocal", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=HELP[kind])
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--seed", type=int, help="u64 seed (overrides config)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads for sample farms")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.kind, args.config, {"seed": args.seed, "threads": args.threads, "out": args.out})
    except ConfigError as exc:
        print(f"perclocal {args.kind}: invalid config: {exc}", file=sys.stderr)
        return 2
    out = cfg["out"] or f"out/{args.kind}"
    status = run_experiment(args.kind, cfg, out)
    print(f"perclocal {args.kind}: {'ok' if status == 0 else 'FAILED'} -> {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())

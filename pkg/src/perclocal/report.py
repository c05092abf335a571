"""CSV, SVG and manifest output for experiment runs."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCHEMAS = {
    "ball": ("distance", "sphere_size", "ball_size"),
    "locality": ("k", "size_g", "size_h", "isomorphic"),
    "growth": ("graph", "r_max", "d", "c", "slope"),
    "net": ("a", "b", "n_points", "interior_points", "separated", "dense_on_interior",
            "max_degree", "distance_violations", "unguarded_violations"),
    "en-scan": ("p", "n", "samples", "hits", "p_hat", "ci_lo", "ci_hi"),
    "renorm": ("run", "determinate", "eta_open", "largest_cluster", "paths", "gluing_failures"),
    "dominate": ("graph", "spec", "k_cert", "marginal", "dominates_3_4"),
    "couple": ("step", "base_open", "base_closed", "lifted_open", "lifted_closed", "sizes_equal"),
    "pc-estimate": ("graph", "r", "trials", "p_c_hat", "ci_lo", "ci_hi"),
    "pc-curve": ("graph", "p", "spanning"),
    "pipeline": ("n", "p_hat", "q", "a", "net_points", "determinate", "eta_open",
                 "independence_ok", "net_ok", "percolates"),
}


class SchemaError(ValueError):
    pass


def fmt(x) -> str:
    """Six significant digits for reals, plain text otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating, Fraction)):
        return f"{float(x):.6g}"
    return str(x)


def emit_csv(rows: Iterable, schema: Sequence[str], path) -> Path:
    """Write rows (dicts keyed by schema names, or sequences in schema order)."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(schema)
    for row in rows:
        if isinstance(row, dict):
            extra = set(row) - set(schema)
            if extra:
                raise SchemaError(f"row has columns outside the schema: {sorted(extra)}")
            row = [row[k] for k in schema]
        elif len(row) != len(schema):
            raise SchemaError(f"row has {len(row)} fields, schema has {len(schema)}")
        w.writerow([fmt(x) for x in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return list(r.fieldnames or []), list(r)


def emit_plot(csv_path, kind: str, x: str, y: str, series: str | None = None, out=None,
              title: str | None = None) -> Path:
    """Render a CSV as a static SVG: one line (or marker set) per ``series`` value.

    Output bytes depend only on the input: the SVG hash salt and metadata are pinned.
    """
    if kind not in ("line", "scatter"):
        raise ValueError(f"unknown plot kind {kind!r}")
    cols, rows = read_csv(csv_path)
    need = [c for c in (x, y, series) if c is not None]
    missing = [c for c in need if c not in cols]
    if missing:
        raise SchemaError(f"{csv_path}: missing columns {missing}")
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[series] if series else y, []).append((float(r[x]), float(r[y])))
    out = Path(out) if out else Path(csv_path).with_suffix(".svg")
    with plt.rc_context({"svg.hashsalt": "perclocal", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, pts in groups.items():
            pts.sort()
            xs, ys = zip(*pts)
            label = f"{series}={name}" if series else name
            if kind == "line" and len(pts) > 1:
                ax.plot(xs, ys, marker="o", ms=3, label=label)
            else:
                ax.scatter(xs, ys, s=16, label=label)
        ax.set_xlabel(x)
        ax.set_ylabel(y)
        if title:
            ax.set_title(title)
        if groups:
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return out


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir, kind: str, config: dict, artifacts: Sequence, status: int, extra=None) -> Path:
    import scipy

    from . import __version__
    man = {
        "kind": kind,
        "config": config,
        "config_sha256": config_hash(config),
        "seed": config.get("seed"),
        "status": status,
        "artifacts": sorted(str(Path(a).name) for a in artifacts),
        "versions": {
            "perclocal": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
    }
    if extra:
        man.update(extra)
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")
    return path

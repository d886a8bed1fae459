"""Experiment orchestration: plain-text configs, deterministic seeding,
parallel ensembles, and persistence.

Configs are flat ``section.key = value`` lines.  A run executes one named
diagnostic over an ensemble, writes the row output (CSV or JSON) plus a
``summary.json``, and records a ``manifest.json`` with the config echo,
the master seed and the seed-derivation rule.  All aggregation happens
on arrays indexed by realization, so results are bit-identical across
worker counts and repeated runs.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .topology import BoxRegion, build_bethe, build_delone, build_lattice
from .operators import (DisorderSpec, assemble_hamiltonian, eigendecompose,
                        extreme_eigenvalues, sample_potential, spectrum_hull)

SCHEMA = "andlab.run.v1"

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "derive_seed",
    "ensemble_map",
    "run",
    "sweep",
    "replay",
    "DIAGNOSTICS",
]


def _parse_value(raw):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    if "," in raw:
        return [_parse_value(p) for p in raw.split(",")]
    return raw


def parse_config(text):
    """Parse ``section.key = value`` lines into a nested dict; ``#``
    starts a comment."""
    tree = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key = value")
        key, raw = line.split("=", 1)
        parts = [p.strip() for p in key.strip().split(".")]
        if any(not p for p in parts):
            raise ValidationError(f"config line {lineno}: bad dotted key {key!r}")
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError(f"config line {lineno}: {key!r} clashes")
        node[parts[-1]] = _parse_value(raw)
    return tree


@dataclass
class ExperimentConfig:
    """Validated run description: topology, disorder, diagnostic and
    execution blocks."""

    topology: dict
    disorder: dict
    diagnostic: dict
    execution: dict = field(default_factory=dict)

    @staticmethod
    def from_tree(tree):
        for section in ("topology", "disorder", "diagnostic"):
            if section not in tree:
                raise ValidationError(f"config is missing the [{section}] block")
        cfg = ExperimentConfig(
            topology=dict(tree["topology"]),
            disorder=dict(tree["disorder"]),
            diagnostic=dict(tree["diagnostic"]),
            execution=dict(tree.get("execution", {})),
        )
        cfg.validate()
        return cfg

    def validate(self):
        name = self.diagnostic.get("name")
        if name not in DIAGNOSTICS:
            raise ValidationError(
                f"diagnostic.name = {name!r} is unknown; available: "
                + ", ".join(sorted(DIAGNOSTICS)))
        kind = self.topology.get("kind")
        if kind not in ("lattice", "bethe", "delone", "none"):
            raise ValidationError(
                f"topology.kind = {kind!r} must be lattice|bethe|delone|none")
        fam = self.disorder.get("family")
        if fam not in ("uniform", "bernoulli", "discrete"):
            raise ValidationError(
                f"disorder.family = {fam!r} must be uniform|bernoulli|discrete")
        if "seed" not in self.disorder:
            raise ValidationError("disorder.seed is required")
        n = self.execution.get("n_samples", 2)
        if not isinstance(n, int) or n < 1:
            raise ValidationError("execution.n_samples must be a positive integer")

    def tree(self):
        return {
            "topology": self.topology,
            "disorder": self.disorder,
            "diagnostic": self.diagnostic,
            "execution": self.execution,
        }

    def text(self):
        lines = []
        for section, block in sorted(self.tree().items()):
            for key, val in sorted(block.items()):
                if isinstance(val, list):
                    val = json.dumps(val)
                lines.append(f"{section}.{key} = {val}")
        return "\n".join(lines) + "\n"


def load_config(path):
    return ExperimentConfig.from_tree(parse_config(Path(path).read_text()))


def build_topology(cfg):
    t = cfg.topology
    kind = t.get("kind")
    if kind == "lattice":
        sides = t["sides"]
        sides = sides if isinstance(sides, list) else [sides]
        return build_lattice(sides, t.get("boundary", "open"))
    if kind == "bethe":
        return build_bethe(t["branching"], t["depth"])
    if kind == "delone":
        sides = t["sides"]
        sides = sides if isinstance(sides, list) else [sides]
        return build_delone(sides, t["window_radius"], t.get("seed", 0))
    return None


def build_spec(cfg):
    d = dict(cfg.disorder)
    fam = d.pop("family")
    kwargs = {"family": fam, "lam": float(d.pop("lam", 1.0)),
              "seed": int(d.pop("seed"))}
    for key in ("a", "b", "p"):
        if key in d:
            kwargs[key] = float(d.pop(key))
    if "values" in d:
        kwargs["values"] = tuple(d.pop("values"))
    if "probs" in d:
        kwargs["probs"] = tuple(d.pop("probs"))
    if d:
        raise ValidationError(f"unknown disorder keys: {sorted(d)}")
    return DisorderSpec(**kwargs)


def derive_seed(*parts):
    """Stable 64-bit seed from arbitrary labeled parts (blake2b)."""
    h = hashlib.blake2b(repr(tuple(parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def ensemble_map(fn, n, workers=1):
    """Evaluate ``fn(i)`` for i in range(n), optionally on a thread pool.

    Results are collected in index order, so any later reduction is
    independent of worker count and completion order.
    """
    if workers is None or workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(fn, range(n)))


def _mean_stderr(values):
    a = np.asarray(values, dtype=float)
    mean = float(a.mean())
    stderr = float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0
    return mean, stderr


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, complex):
        return f"{v.real:.17g}{v.imag:+.17g}j"
    return str(v)


def _write_rows(path, rows, fmt):
    if not rows:
        header = []
    else:
        header = list(rows[0].keys())
    if fmt == "json":
        payload = [{k: (_fmt(v) if isinstance(v, (float, complex)) else v)
                    for k, v in row.items()} for row in rows]
        path = path.with_suffix(".json")
        path.write_text(json.dumps({"schema": SCHEMA, "rows": payload},
                                   indent=2, sort_keys=True) + "\n")
    else:
        path = path.with_suffix(".csv")
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(row[k]) for k in header))
        path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# diagnostics


def _diag_spectrum(cfg, workers):
    topo = build_topology(cfg)
    spec = build_spec(cfg)
    n = int(cfg.diagnostic.get("n_realizations",
                               cfg.execution.get("n_samples", 1)))

    def one(i):
        pot = sample_potential(spec, topo, i)
        H = assemble_hamiltonian(topo, pot, spec.lam, "adjacency")
        return extreme_eigenvalues(H)

    extremes = ensemble_map(one, n, workers)
    hull = spectrum_hull(spec, topo, 1)  # theory endpoints only
    rows = [{"realization": i, "min_eig": lo, "max_eig": hi}
            for i, (lo, hi) in enumerate(extremes)]
    summary = {
        "empirical_min": min(e[0] for e in extremes),
        "empirical_max": max(e[1] for e in extremes),
        "theory_min": hull.theory_min,
        "theory_max": hull.theory_max,
        "n_realizations": n,
    }
    return rows, summary


def _z_of(diag):
    return complex(float(diag.get("E", 0.0)), float(diag.get("eps", 1e-3)))


def _diag_green(cfg, workers):
    from .green import green_column
    from .topology import graph_distance
    topo = build_topology(cfg)
    spec = build_spec(cfg)
    z = _z_of(cfg.diagnostic)
    src = int(cfg.diagnostic.get("source", topo.vertex_count // 2))
    r = int(cfg.diagnostic.get("realization", 0))
    pot = sample_potential(spec, topo, r)
    H = assemble_hamiltonian(topo, pot, spec.lam,
                             cfg.diagnostic.get("convention", "adjacency"))
    col = green_column(H, z, src)
    rows = [{"vertex": v, "re_g": float(col[v].real), "im_g": float(col[v].imag),
             "abs_g": float(abs(col[v])),
             "distance": graph_distance(topo, src, v)}
            for v in range(topo.vertex_count)]
    summary = {"z": _fmt(z), "source": src, "realization": r,
               "sum_abs_sq": float(np.sum(np.abs(col) ** 2))}
    return rows, summary


def _diag_saw(cfg, workers):
    from .green import green_entry, saw_expansion
    topo = build_topology(cfg)
    spec = build_spec(cfg)
    z = _z_of(cfg.diagnostic)
    x = int(cfg.diagnostic.get("x", 0))
    y = int(cfg.diagnostic.get("y", topo.vertex_count - 1))
    r = int(cfg.diagnostic.get("realization", 0))
    pot = sample_potential(spec, topo, r)
    H = assemble_hamiltonian(topo, pot, spec.lam,
                             cfg.diagnostic.get("convention", "adjacency"))
    left = saw_expansion(H, z, x, y)
    right = green_entry(H, z, x, y)
    rel = abs(left - right) / max(abs(right), 1e-300)
    rows = [{"x": x, "y": y, "saw_sum": left, "direct": right,
             "rel_error": float(rel)}]
    return rows, {"rel_error": float(rel), "z": _fmt(z)}


def _diag_tree(cfg, workers):
    from .green import tree_green_recursive, green_column
    topo = build_topology(cfg)
    if topo is None or topo.kind != "bethe":
        raise ValidationError("tree diagnostic requires topology.kind = bethe")
    spec = build_spec(cfg)
    z = _z_of(cfg.diagnostic)
    r = int(cfg.diagnostic.get("realization", 0))
    pot = sample_potential(spec, topo, r)
    H = assemble_hamiltonian(topo, pot, spec.lam,
                             cfg.diagnostic.get("convention", "adjacency"))
    tg = tree_green_recursive(H, z)
    col = green_column(H, z, 0)
    rel = np.abs(tg.off_diagonal - col) / np.maximum(np.abs(col), 1e-300)
    rows = [{"vertex": v, "recursion": tg.off_diagonal[v], "direct": col[v],
             "rel_error": float(rel[v])} for v in range(topo.vertex_count)]
    return rows, {"root_value": _fmt(tg.root_value),
                  "max_rel_error": float(rel.max())}


def _diag_popdyn(cfg, workers):
    from .green import population_dynamics
    spec = build_spec(cfg)
    d = cfg.diagnostic
    stats = population_dynamics(
        int(d.get("branching", 2)), spec, _z_of(d),
        pool_size=int(d.get("pool_size", 10_000)),
        sweeps=int(d.get("sweeps", 50)),
        s=float(d.get("s", 0.5)))
    counts, edges = np.histogram(stats.pool.imag, bins=int(d.get("bins", 64)))
    rows = [{"bin_lo": float(edges[i]), "bin_hi": float(edges[i + 1]),
             "count": int(counts[i])} for i in range(counts.size)]
    summary = {"mean_im_g": stats.mean_im_g, "mean_abs_s": stats.mean_abs_s,
               "mean_abs_sq": stats.mean_abs_sq, "s": stats.s,
               "sweeps": stats.sweeps, "converged": stats.converged,
               "drift": stats.drift}
    return rows, summary


def _center_box(cfg, topo, side):
    center = cfg.diagnostic.get("center")
    if center is None:
        sides = topo.params["sides"]
        center = topo.vertex_at([s // 2 for s in sides])
    return BoxRegion(int(center), int(side))


def _diag_wegner(cfg, workers):
    from .criteria import wegner_estimate
    topo = build_topology(cfg)
    spec = build_spec(cfg)
    d = cfg.diagnostic
    region = _center_box(cfg, topo, d.get("region_side", 3))
    est = wegner_estimate(spec, topo, region, float(d["E"]), float(d["eta"]),
                          int(cfg.execution.get("n_samples", 100)),
                          d.get("convention", "adjacency"))
    rows = [est.__dict__]
    return rows, dict(est.__dict__)


def _diag_goodbox(cfg, workers):
    from .criteria import GoodBoxParams, good_box_probability
    topo = build_topology(cfg)
    spec = build_spec(cfg)
    d = cfg.diagnostic
    box = _center_box(cfg, topo, d["L"])
    params = GoodBoxParams(E=float(d["E"]), L=int(d["L"]), m=float(d["m"]),
                           u=box.center)
    est = good_box_probability(spec, topo, params,
                               int(cfg.execution.get("n_samples", 100)),
                               d.get("convention", "adjacency"))
    rows = [est.__dict__]
    return rows, dict(est.__dict__)


def _diag_msa(cfg, workers):
    from .criteria import MsaParams, msa_scale_run
    spec = build_spec(cfg)
    d = cfg.diagnostic
    params = MsaParams(L0=int(d.get("L0", 5)), alpha=float(d.get("alpha", 1.5)),
                       beta=float(d.get("beta", 2.5)),
                       k_max=int(d.get("k_max", 2)))
    run_ = msa_scale_run(spec, params, float(d.get("m", 0.2)),
                         float(d.get("E", 0.0)),
                         int(cfg.execution.get("n_samples", 100)),
                         d=int(d.get("d", 1)),
                         convention=d.get("convention", "adjacency"),
                         volume_budget=int(d.get("volume_budget", 2048)))
    rows = [{"L": L, "p_hat": est.mean, "stderr": est.stderr,
             "threshold": thr, "verdict": v}
            for L, est, thr, v in zip(run_.scales, run_.estimates,
                                      run_.thresholds, run_.verdicts)]
    summary = {"truncated": run_.truncated, "scales": list(run_.scales),
               "verdicts": list(run_.verdicts)}
    return rows, summary


def _diag_fmm(cfg, workers):
    from .criteria import FractionalMomentParams, decay_rate_fit
    from .green import green_column
    from .topology import graph_distance
    topo = build_topology(cfg)
    spec = build_spec(cfg)
    d = cfg.diagnostic
    params = FractionalMomentParams(s=float(d.get("s", 0.5)), z=_z_of(d))
    x = int(d.get("source", topo.vertex_count // 2))
    max_dist = int(d.get("max_distance", 10))
    targets, dists = [], []
    for v in range(topo.vertex_count):
        dv = graph_distance(topo, x, v)
        if 1 <= dv <= max_dist:
            targets.append(v)
            dists.append(dv)
    n = int(cfg.execution.get("n_samples", 100))

    def one(i):
        pot = sample_potential(spec, topo, i)
        H = assemble_hamiltonian(topo, pot, spec.lam,
                                 d.get("convention", "adjacency"))
        col = green_column(H, complex(params.z), x)
        return np.abs(col[targets]) ** params.s

    samples = np.array(ensemble_map(one, n, workers))
    by_dist = {}
    for j, dv in enumerate(dists):
        by_dist.setdefault(dv, []).append(j)
    rows = []
    for dv in sorted(by_dist):
        cols = by_dist[dv]
        mean, stderr = _mean_stderr(samples[:, cols].mean(axis=1))
        rows.append({"distance": dv, "mean": mean, "stderr": stderr, "n": n})
    fit = decay_rate_fit([r["distance"] for r in rows],
                         [r["mean"] for r in rows])
    summary = {"rate": fit.rate, "intercept": fit.intercept,
               "r_squared": fit.r_squared, "s": params.s, "z": _fmt(params.z)}
    return rows, summary


def _diag_dynamics(cfg, workers):
    from .dynamics import (EnergyWindow, correlator_row, transport_moment)
    topo = build_topology(cfg)
    spec = build_spec(cfg)
    d = cfg.diagnostic
    mode = d.get("mode", "transport")
    r = int(d.get("realization", 0))
    pot = sample_potential(spec, topo, r)
    H = assemble_hamiltonian(topo, pot, spec.lam,
                             d.get("convention", "adjacency"))
    dec = eigendecompose(H)
    window = EnergyWindow.full(dec)
    if "window_lo" in d or "window_hi" in d:
        window = EnergyWindow(float(d.get("window_lo", -np.inf)),
                              float(d.get("window_hi", np.inf)))
    origin = int(d.get("origin", topo.vertex_count // 2))
    if mode == "kernel":
        q = correlator_row(dec, window, origin)
        rows = [{"vertex": v, "correlator": float(q[v])}
                for v in range(topo.vertex_count)]
        return rows, {"origin": origin, "q_max": float(q.max())}
    t_grid = np.linspace(0.0, float(d.get("t_max", 10.0)),
                         int(d.get("n_t", 33)))
    initial = np.zeros(topo.vertex_count, dtype=complex)
    initial[origin] = 1.0
    series = transport_moment(dec, window, topo, initial,
                              float(d.get("p", 2.0)), t_grid, origin)
    rows = [{"t": float(t), "moment": float(v), "beyond_horizon": bool(fl)}
            for t, v, fl in zip(series.t_grid, series.values,
                                series.beyond_horizon)]
    return rows, {"horizon": series.horizon, "sup": float(series.values.max()),
                  "p": float(d.get("p", 2.0))}


DIAGNOSTICS = {
    "spectrum": _diag_spectrum,
    "green": _diag_green,
    "saw": _diag_saw,
    "tree": _diag_tree,
    "popdyn": _diag_popdyn,
    "wegner": _diag_wegner,
    "goodbox": _diag_goodbox,
    "msa": _diag_msa,
    "fmm": _diag_fmm,
    "dynamics": _diag_dynamics,
}


def run(cfg, out_dir=None, workers=None, fmt=None):
    """Execute the configured diagnostic; write rows, summary and manifest.

    Returns the manifest dict.  Identical (config, seed) runs produce
    byte-identical row and summary files for any worker count.
    """
    cfg.validate()
    name = cfg.diagnostic["name"]
    out = Path(out_dir if out_dir is not None
               else cfg.execution.get("out", "runs/" + name))
    out.mkdir(parents=True, exist_ok=True)
    workers = int(workers if workers is not None
                  else cfg.execution.get("workers", 1))
    fmt = fmt or cfg.execution.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ValidationError(f"format must be csv or json, got {fmt!r}")
    t0 = time.monotonic()
    rows, summary = DIAGNOSTICS[name](cfg, workers)
    wall = time.monotonic() - t0
    rows_path = _write_rows(out / name, rows, fmt)
    summary_doc = {"schema": SCHEMA, "diagnostic": name, "summary": {
        k: (_fmt(v) if isinstance(v, (float, complex)) else v)
        for k, v in summary.items()}}
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary_doc, indent=2, sort_keys=True)
                            + "\n")
    manifest = {
        "schema": SCHEMA,
        "version": __version__,
        "config": cfg.tree(),
        "diagnostic": name,
        "master_seed": int(cfg.disorder["seed"]),
        "seed_rule": "philox key = (master seed, realization index); "
                     "sweep sub-run seed = blake2b(master seed, sweep index)",
        "workers": workers,
        "format": fmt,
        "wall_clock_s": wall,
        "outputs": [rows_path.name, summary_path.name],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")
    return manifest


def _resolve_path(cfg_tree, path):
    parts = path.split(".")
    node = cfg_tree
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ValidationError(f"sweep path {path!r} does not resolve")
        node = node[p]
    leaf = parts[-1]
    if leaf in node and isinstance(node[leaf], (dict, list)):
        raise ValidationError(f"sweep path {path!r} is not a scalar field")
    return node, leaf


def sweep(cfg, path, values, out_dir, workers=None, fmt=None):
    """Independent sub-runs with one overridden scalar per value; each
    sub-run gets a seed derived from (master seed, sweep index)."""
    if not values:
        raise ValidationError("sweep needs a nonempty list of values")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    master = int(cfg.disorder["seed"])
    manifests, rows = [], []
    for k, value in enumerate(values):
        tree = json.loads(json.dumps(cfg.tree()))
        node, leaf = _resolve_path(tree, path)
        node[leaf] = value
        tree["disorder"]["seed"] = derive_seed(master, k)
        sub = ExperimentConfig.from_tree(tree)
        man = run(sub, out / f"sweep_{k:03d}", workers, fmt)
        manifests.append(man)
        summary = json.loads((out / f"sweep_{k:03d}" / "summary.json")
                             .read_text())["summary"]
        row = {"index": k, "value": value}
        row.update({f"summary.{kk}": vv for kk, vv in summary.items()
                    if not isinstance(vv, (list, dict))})
        rows.append(row)
    _write_rows(out / "sweep_summary", rows, fmt or "csv")
    (out / "sweep_manifest.json").write_text(json.dumps({
        "schema": SCHEMA, "path": path,
        "values": list(values),
        "master_seed": master,
        "sub_runs": [f"sweep_{k:03d}" for k in range(len(values))],
    }, indent=2, sort_keys=True) + "\n")
    return manifests, rows


def replay(manifest_path):
    """Re-run a manifest into a scratch directory and byte-compare every
    output file; returns {filename: identical} and raises NumericalError
    on any mismatch."""
    manifest_path = Path(manifest_path)
    man = json.loads(manifest_path.read_text())
    cfg = ExperimentConfig.from_tree(man["config"])
    src = manifest_path.parent
    dst = src / "replay"
    run(cfg, dst, man.get("workers", 1), man.get("format", "csv"))
    report = {}
    for name in man["outputs"]:
        report[name] = (src / name).read_bytes() == (dst / name).read_bytes()
    if not all(report.values()):
        bad = [k for k, v in report.items() if not v]
        raise NumericalError(f"replay mismatch in {bad}")
    return report

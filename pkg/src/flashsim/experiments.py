"""Experiment driver: single runs and one-parameter sweeps.

A sweep varies one dotted config key across a list of values, runs each
(value, seed) cell in a fresh simulation, and leaves this layout behind:

    <out>/<name>/<param>=<value>/seed=<s>/trace.csv
    <out>/<name>/<param>=<value>/seed=<s>/metrics.csv
    <out>/<name>/<param>=<value>/seed=<s>/config_resolved
    <out>/<name>/sweep.csv

sweep.csv holds one row per cell with headline numbers pooled across all
measured threads, which is the file plotting scripts want. A cell that
dies with a simulation error is recorded as FAILED and the sweep keeps
going; a parameter path that does not validate kills the sweep before
any run starts.
"""

from pathlib import Path

from . import config as cfgmod
from .errors import ConfigError
from .metrics import (compute_metrics, nearest_rank, write_metrics_csv,
                      write_trace_csv)
from .sim import run_config

SWEEP_COLUMNS = (
    "param", "value", "seed", "status", "ios", "throughput_iops",
    "lat_mean_ns", "lat_p50_ns", "lat_p99_ns", "write_amplification",
    "gc_migrations", "wl_migrations",
)


def _copy_cfg(cfg):
    return {sec: dict(kv) for sec, kv in cfg.items()}


def summarize(res):
    """Headline numbers for one run, pooled over measured threads."""
    lats = []
    ws = end = None
    for r in res.trace:
        if not r.source.startswith("APP:"):
            continue
        if not res.measured.get(r.source[4:], False):
            continue
        lats.append(r.completed - r.created)
        if ws is None or r.created < ws:
            ws = r.created
        if end is None or r.completed > end:
            end = r.completed
    lats.sort()
    n = len(lats)
    out = {"ios": str(n)}
    if n:
        span = end - ws
        tp = n / (span / 1e9) if span > 0 else 0.0
        out["throughput_iops"] = f"{tp:.6f}"
        out["lat_mean_ns"] = f"{sum(lats) / n:.6f}"
        out["lat_p50_ns"] = str(nearest_rank(lats, 0.50))
        out["lat_p99_ns"] = str(nearest_rank(lats, 0.99))
    else:
        out["throughput_iops"] = ""
        out["lat_mean_ns"] = ""
        out["lat_p50_ns"] = ""
        out["lat_p99_ns"] = ""

    device = {}
    for scope, idx, metric, value in res.metric_rows:
        if scope == "device" and idx == "-":
            device[metric] = value
    out["write_amplification"] = device.get("write_amplification", "")
    out["gc_migrations"] = device.get("gc_migrations", "")
    out["wl_migrations"] = device.get("wl_migrations", "")
    return out


def run_single(cfg, seed, out_dir):
    """Run one simulation and write its three artifacts into out_dir.
    Returns the RunResult with .metric_rows attached."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    res = run_config(cfg, seed)
    rows = compute_metrics(res.trace, cfg, res.measured)
    res.metric_rows = rows
    write_trace_csv(out_dir / "trace.csv", res.trace)
    write_metrics_csv(out_dir / "metrics.csv", rows)
    resolved = cfgmod.resolved_text(cfgmod.materialize_threads(cfg))
    (out_dir / "config_resolved").write_text(resolved)
    return res


def _parse_values(text):
    vals = [v.strip() for v in str(text).split(",") if v.strip()]
    if not vals:
        raise ConfigError("experiment.values: no values to sweep")
    return vals


def run_sweep(cfg, out_root, param=None, values=None, seeds=None,
              log=print):
    """Execute the sweep described by cfg[experiment], with optional
    overrides. Returns the path of the sweep.csv it wrote."""
    exp = cfg["experiment"]
    name = exp["name"]
    param = param if param is not None else exp["param"]
    if not param:
        raise ConfigError("experiment.param: nothing to sweep")
    values = _parse_values(values if values is not None else exp["values"])
    reps = int(seeds) if seeds is not None else exp["seeds"]
    if reps < 1:
        raise ConfigError("experiment.seeds: must be at least 1")

    # fail on a bad path or value before spending time on any cell
    for v in values:
        probe = _copy_cfg(cfg)
        cfgmod.set_path(probe, param, v)

    exp_dir = Path(out_root) / name
    exp_dir.mkdir(parents=True, exist_ok=True)
    lines = [",".join(SWEEP_COLUMNS)]
    for v in values:
        for seed in range(reps):
            cell = _copy_cfg(cfg)
            cfgmod.set_path(cell, param, v)
            cell_dir = exp_dir / f"{param}={v}" / f"seed={seed}"
            try:
                res = run_single(cell, seed, cell_dir)
            except ConfigError:
                raise
            except Exception as exc:  # record the cell, keep sweeping
                log(f"{param}={v} seed={seed}: FAILED: {exc}")
                row = {c: "" for c in SWEEP_COLUMNS}
                row.update(param=param, value=v, seed=str(seed),
                           status="FAILED")
                lines.append(",".join(row[c] for c in SWEEP_COLUMNS))
                continue
            summary = summarize(res)
            summary.update(param=param, value=v, seed=str(seed), status="OK")
            lines.append(",".join(summary[c] for c in SWEEP_COLUMNS))
            log(f"{param}={v} seed={seed}: {summary['ios']} IOs, "
                f"tp={summary['throughput_iops']}")

    sweep_path = exp_dir / "sweep.csv"
    sweep_path.write_text("\n".join(lines) + "\n")
    return sweep_path

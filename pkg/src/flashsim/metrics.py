"""Metrics distilled from a finished run's IO trace.

Every metrics.csv value is a pure function of the trace rows plus the
resolved config, so an auditor can recompute the entire table offline
from the emitted files. rederive.py does exactly that, deliberately
without importing anything from this module.

Window convention: the measurement window opens at the earliest `created`
among measured-thread rows and closes at their latest `completed`.
Per-thread statistics cover measured rows only. Device-wide counters
(write amplification, migrations, erases) count commands that started at
or after the window opened, which is what "counters reset at measurement
start" means in trace terms. Busy fractions are interval unions clamped
to the window.
"""

import math
from collections import Counter

TRACE_COLUMNS = (
    "id", "source", "kind", "lpn", "ppa", "priority", "deadline",
    "created", "os_dispatched", "ssd_enqueued", "exec_started",
    "completed", "preds",
)

METRICS_COLUMNS = ("scope", "index", "metric", "value")

_KIND_ORDER = {"READ": 0, "WRITE": 1, "TRIM": 2, "ERASE": 3, "COPYBACK": 4}


def _cell(v):
    return "" if v is None else str(v)


def trace_csv_lines(trace):
    yield ",".join(TRACE_COLUMNS)
    for r in trace:
        yield ",".join((
            str(r.id), r.source, r.kind, _cell(r.lpn), _cell(r.ppa),
            str(r.priority), _cell(r.deadline), str(r.created),
            _cell(r.os_dispatched), str(r.ssd_enqueued),
            str(r.exec_started), str(r.completed),
            ";".join(str(p) for p in r.pred_ids),
        ))


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        for line in trace_csv_lines(trace):
            fh.write(line)
            fh.write("\n")


def nearest_rank(sorted_vals, q):
    """Lower nearest-rank percentile: element ceil(q*n)-1 of the sorted
    sample. Chosen over interpolation so CSVs stay bit-reproducible."""
    i = math.ceil(q * len(sorted_vals)) - 1
    return sorted_vals[i if i > 0 else 0]


def _fmt6(x):
    return f"{x:.6f}"


def _chan_intervals(kind, s, comp, t_cmd, t_data, interleaving):
    """Bus time a command occupies, reconstructed from its trace row.
    Mirrors the hardware phase shapes; with interleaving off the bus is
    held for the whole command."""
    if not interleaving:
        return ((s, comp),)
    if kind == "READ":
        return ((s, s + t_cmd), (comp - t_data, comp))
    if kind == "WRITE":
        return ((s, s + t_cmd + t_data),)
    if kind == "ERASE" or kind == "COPYBACK":
        return ((s, s + t_cmd),)
    return ((s, comp),)  # TRIM holds the bus for its whole command


def _union_len(ivs):
    """Total length covered by a list of [s, e) intervals."""
    ivs.sort()
    total = 0
    cur_s = cur_e = None
    for s, e in ivs:
        if s >= e:
            continue
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        elif e > cur_e:
            cur_e = e
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def compute_metrics(trace, cfg, measured):
    """Build the metrics table: a list of (scope, index, metric, value)
    string tuples in canonical order. `measured` maps thread id -> bool."""
    hwc = cfg["hardware"]
    interleaving = cfg["controller"]["interleaving"]
    t_cmd = hwc["t_cmd"]
    t_data = hwc["t_data"]
    ppb = hwc["pages_per_block"]
    ppl = ppb * hwc["blocks_per_lun"]
    ppc = ppl * hwc["luns_per_channel"]
    n_chan = hwc["channels"]
    n_lun = n_chan * hwc["luns_per_channel"]
    total_blocks = n_lun * hwc["blocks_per_lun"]

    groups = {}  # (tid, kind) -> [latency...]
    group_end = {}
    ws = we = None
    for r in trace:
        if not r.source.startswith("APP:"):
            continue
        tid = r.source[4:]
        if not measured.get(tid, False):
            continue
        key = (tid, r.kind)
        groups.setdefault(key, []).append(r.completed - r.created)
        if key not in group_end or r.completed > group_end[key]:
            group_end[key] = r.completed
        if ws is None or r.created < ws:
            ws = r.created
        if we is None or r.completed > we:
            we = r.completed
    if ws is None:
        ws = 0
        we = max((r.completed for r in trace), default=0)

    rows = []
    for tid, kind in sorted(groups, key=lambda k: (k[0], _KIND_ORDER[k[1]])):
        lats = groups[(tid, kind)]
        lats.sort()
        n = len(lats)
        sx = sum(lats)
        sxx = sum(x * x for x in lats)
        mean = sx / n
        var = sxx / n - (sx / n) ** 2
        if var < 0.0:
            var = 0.0
        span = group_end[(tid, kind)] - ws
        tp = n / (span / 1e9) if span > 0 else 0.0
        idx = f"{tid}/{kind}"
        rows.append(("thread", idx, "count", str(n)))
        rows.append(("thread", idx, "throughput_iops", _fmt6(tp)))
        rows.append(("thread", idx, "lat_mean_ns", _fmt6(mean)))
        rows.append(("thread", idx, "lat_std_ns", _fmt6(math.sqrt(var))))
        rows.append(("thread", idx, "lat_p50_ns",
                     str(nearest_rank(lats, 0.50))))
        rows.append(("thread", idx, "lat_p99_ns",
                     str(nearest_rank(lats, 0.99))))

    app_writes = 0
    data_programs = 0
    gc_migrations = 0
    wl_migrations = 0
    erases = Counter()
    for r in trace:
        if r.exec_started < ws:
            continue
        if r.kind == "WRITE" or r.kind == "COPYBACK":
            if r.lpn is not None:
                data_programs += 1
            if r.source == "GC":
                gc_migrations += 1
            elif r.source == "WL":
                wl_migrations += 1
            if r.kind == "WRITE" and r.source.startswith("APP:"):
                app_writes += 1
        elif r.kind == "ERASE":
            erases[r.ppa // ppb] += 1

    rows.append(("device", "-", "window_start_ns", str(ws)))
    rows.append(("device", "-", "window_end_ns", str(we)))
    wa = _fmt6(data_programs / app_writes) if app_writes else ""
    rows.append(("device", "-", "write_amplification", wa))
    rows.append(("device", "-", "gc_migrations", str(gc_migrations)))
    rows.append(("device", "-", "wl_migrations", str(wl_migrations)))
    hist = Counter(erases.values())
    hist[0] = total_blocks - len(erases)
    for k in sorted(hist):
        rows.append(("device", str(k), "erase_blocks", str(hist[k])))

    chan_ivs = [[] for _ in range(n_chan)]
    lun_ivs = [[] for _ in range(n_lun)]
    for r in trace:
        s = r.exec_started
        comp = r.completed
        if r.kind == "TRIM":
            ch = r.ppa // ppc if r.ppa is not None else 0
        else:
            ch = r.ppa // ppc
            lun_ivs[r.ppa // ppl].append((s, comp))
        chan_ivs[ch].extend(
            _chan_intervals(r.kind, s, comp, t_cmd, t_data, interleaving))

    wlen = we - ws
    for c in range(n_chan):
        clamped = [(max(s, ws), min(e, we)) for s, e in chan_ivs[c]]
        frac = _union_len(clamped) / wlen if wlen > 0 else 0.0
        rows.append(("channel", str(c), "busy_fraction", _fmt6(frac)))
    for gl in range(n_lun):
        clamped = [(max(s, ws), min(e, we)) for s, e in lun_ivs[gl]]
        frac = _union_len(clamped) / wlen if wlen > 0 else 0.0
        rows.append(("lun", str(gl), "busy_fraction", _fmt6(frac)))
    return rows


def metrics_csv_lines(rows):
    yield ",".join(METRICS_COLUMNS)
    for row in rows:
        yield ",".join(row)


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        for line in metrics_csv_lines(rows):
            fh.write(line)
            fh.write("\n")

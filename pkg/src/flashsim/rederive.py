"""Offline re-derivation of metrics.csv from trace.csv.

This is the audit half of a dual-route check: the simulator writes
metrics from its in-memory rows, and this module recomputes every value
from the CSV files a run leaves behind, then compares byte for byte.
The formulas are duplicated from the metrics writer on purpose; sharing
code would turn the comparison into a tautology. Only the resolved
config is consulted beyond the trace, and only for static shape: the
geometry divisors, the two bus timings, and which threads are measured.
"""

import configparser
import csv
import math
from collections import Counter

_EXPECTED_TRACE_HEADER = [
    "id", "source", "kind", "lpn", "ppa", "priority", "deadline",
    "created", "os_dispatched", "ssd_enqueued", "exec_started",
    "completed", "preds",
]

_KIND_RANK = {"READ": 0, "WRITE": 1, "TRIM": 2, "ERASE": 3, "COPYBACK": 4}


class TraceRow:
    __slots__ = ("source", "kind", "lpn", "ppa", "created", "exec_started",
                 "completed")

    def __init__(self, source, kind, lpn, ppa, created, exec_started,
                 completed):
        self.source = source
        self.kind = kind
        self.lpn = lpn
        self.ppa = ppa
        self.created = created
        self.exec_started = exec_started
        self.completed = completed


def read_trace(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _EXPECTED_TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header}")
        for rec in reader:
            rows.append(TraceRow(
                rec[1], rec[2],
                int(rec[3]) if rec[3] else None,
                int(rec[4]) if rec[4] else None,
                int(rec[7]), int(rec[10]), int(rec[11]),
            ))
    return rows


class Shape:
    """The handful of config facts the checker needs."""

    __slots__ = ("t_cmd", "t_data", "interleaving", "channels",
                 "pages_per_block", "pages_per_lun", "pages_per_channel",
                 "total_luns", "total_blocks", "measured")

    def __init__(self, t_cmd, t_data, interleaving, channels,
                 luns_per_channel, blocks_per_lun, pages_per_block,
                 measured):
        self.t_cmd = t_cmd
        self.t_data = t_data
        self.interleaving = interleaving
        self.channels = channels
        self.pages_per_block = pages_per_block
        self.pages_per_lun = pages_per_block * blocks_per_lun
        self.pages_per_channel = self.pages_per_lun * luns_per_channel
        self.total_luns = channels * luns_per_channel
        self.total_blocks = self.total_luns * blocks_per_lun
        self.measured = measured


def read_shape(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path) as fh:
        parser.read_string(fh.read())
    hwc = parser["hardware"]
    wl = parser["workload"] if parser.has_section("workload") else {}
    names = [n.strip() for n in wl.get("threads", "").split(",") if n.strip()]
    measured = {}
    for name in names:
        measured[name] = wl.get(f"{name}.measured", "true").lower() in (
            "true", "1", "yes", "on")
    return Shape(
        t_cmd=int(hwc["t_cmd"]),
        t_data=int(hwc["t_data"]),
        interleaving=parser["controller"]["interleaving"].lower() in (
            "true", "1", "yes", "on"),
        channels=int(hwc["channels"]),
        luns_per_channel=int(hwc["luns_per_channel"]),
        blocks_per_lun=int(hwc["blocks_per_lun"]),
        pages_per_block=int(hwc["pages_per_block"]),
        measured=measured,
    )


def _percentile(sorted_vals, q):
    pos = math.ceil(q * len(sorted_vals)) - 1
    if pos < 0:
        pos = 0
    return sorted_vals[pos]


def _bus_spans(row, shape):
    s = row.exec_started
    comp = row.completed
    if not shape.interleaving:
        return [(s, comp)]
    k = row.kind
    if k == "READ":
        return [(s, s + shape.t_cmd), (comp - shape.t_data, comp)]
    if k == "WRITE":
        return [(s, s + shape.t_cmd + shape.t_data)]
    if k == "ERASE" or k == "COPYBACK":
        return [(s, s + shape.t_cmd)]
    return [(s, comp)]


def _covered(spans, lo, hi):
    """Length of [lo, hi) covered by the union of the given spans."""
    clipped = []
    for s, e in spans:
        if s < lo:
            s = lo
        if e > hi:
            e = hi
        if s < e:
            clipped.append((s, e))
    clipped.sort()
    total = 0
    open_s = open_e = None
    for s, e in clipped:
        if open_e is None or s > open_e:
            if open_e is not None:
                total += open_e - open_s
            open_s, open_e = s, e
        elif e > open_e:
            open_e = e
    if open_e is not None:
        total += open_e - open_s
    return total


def recompute(trace_path, config_path):
    """Rebuild the full metrics table from the emitted files. Returns a
    list of (scope, index, metric, value) string tuples."""
    shape = read_shape(config_path)
    trace = read_trace(trace_path)

    lats = {}
    ends = {}
    ws = we = None
    for row in trace:
        if not row.source.startswith("APP:"):
            continue
        tid = row.source[4:]
        if not shape.measured.get(tid, False):
            continue
        key = (tid, row.kind)
        lats.setdefault(key, []).append(row.completed - row.created)
        if key not in ends or row.completed > ends[key]:
            ends[key] = row.completed
        if ws is None or row.created < ws:
            ws = row.created
        if we is None or row.completed > we:
            we = row.completed
    if ws is None:
        ws = 0
        we = max((row.completed for row in trace), default=0)

    out = []
    for key in sorted(lats, key=lambda k: (k[0], _KIND_RANK[k[1]])):
        sample = sorted(lats[key])
        n = len(sample)
        sx = 0
        sxx = 0
        for x in sample:
            sx += x
            sxx += x * x
        mean = sx / n
        var = sxx / n - (sx / n) ** 2
        if var < 0.0:
            var = 0.0
        span = ends[key] - ws
        tp = n / (span / 1e9) if span > 0 else 0.0
        idx = f"{key[0]}/{key[1]}"
        out.append(("thread", idx, "count", str(n)))
        out.append(("thread", idx, "throughput_iops", f"{tp:.6f}"))
        out.append(("thread", idx, "lat_mean_ns", f"{mean:.6f}"))
        out.append(("thread", idx, "lat_std_ns", f"{math.sqrt(var):.6f}"))
        out.append(("thread", idx, "lat_p50_ns",
                    str(_percentile(sample, 0.50))))
        out.append(("thread", idx, "lat_p99_ns",
                    str(_percentile(sample, 0.99))))

    logical_writes = 0
    programs = 0
    gc_moves = 0
    wl_moves = 0
    per_block = Counter()
    for row in trace:
        if row.exec_started < ws:
            continue
        k = row.kind
        if k == "WRITE" or k == "COPYBACK":
            if row.lpn is not None:
                programs += 1
            if row.source == "GC":
                gc_moves += 1
            elif row.source == "WL":
                wl_moves += 1
            if k == "WRITE" and row.source.startswith("APP:"):
                logical_writes += 1
        elif k == "ERASE":
            per_block[row.ppa // shape.pages_per_block] += 1

    out.append(("device", "-", "window_start_ns", str(ws)))
    out.append(("device", "-", "window_end_ns", str(we)))
    if logical_writes:
        out.append(("device", "-", "write_amplification",
                    f"{programs / logical_writes:.6f}"))
    else:
        out.append(("device", "-", "write_amplification", ""))
    out.append(("device", "-", "gc_migrations", str(gc_moves)))
    out.append(("device", "-", "wl_migrations", str(wl_moves)))
    histogram = Counter(per_block.values())
    histogram[0] = shape.total_blocks - len(per_block)
    for count in sorted(histogram):
        out.append(("device", str(count), "erase_blocks",
                    str(histogram[count])))

    by_chan = [[] for _ in range(shape.channels)]
    by_lun = [[] for _ in range(shape.total_luns)]
    for row in trace:
        if row.kind == "TRIM":
            ch = row.ppa // shape.pages_per_channel if row.ppa is not None \
                else 0
        else:
            ch = row.ppa // shape.pages_per_channel
            by_lun[row.ppa // shape.pages_per_lun].append(
                (row.exec_started, row.completed))
        by_chan[ch].extend(_bus_spans(row, shape))

    wlen = we - ws
    for c in range(shape.channels):
        frac = _covered(by_chan[c], ws, we) / wlen if wlen > 0 else 0.0
        out.append(("channel", str(c), "busy_fraction", f"{frac:.6f}"))
    for gl in range(shape.total_luns):
        frac = _covered(by_lun[gl], ws, we) / wlen if wlen > 0 else 0.0
        out.append(("lun", str(gl), "busy_fraction", f"{frac:.6f}"))
    return out


def check(trace_path, config_path, metrics_path, max_report=20):
    """Compare the emitted metrics.csv against a recomputation from the
    trace. Returns a list of discrepancy strings; empty means the files
    agree bit for bit."""
    want = ["scope,index,metric,value"]
    want.extend(",".join(row) for row in recompute(trace_path, config_path))
    with open(metrics_path, newline="") as fh:
        got = fh.read().split("\n")
    if got and got[-1] == "":
        got.pop()
    problems = []
    for i in range(max(len(want), len(got))):
        w = want[i] if i < len(want) else "<missing line>"
        g = got[i] if i < len(got) else "<missing line>"
        if w != g:
            problems.append(f"line {i + 1}: emitted {g!r}, rederived {w!r}")
            if len(problems) >= max_report:
                problems.append("... (further mismatches suppressed)")
                break
    return problems

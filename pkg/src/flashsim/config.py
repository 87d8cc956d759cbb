"""Config schema, INI parsing, presets, and dotted-path access.

The file format is flat key=value INI sections. Every key is validated
against the schema below and unknown keys are hard errors, which is what
catches typos in sweep parameter paths. Thread definitions live inside
[workload] as `<name>.<param>` keys, where <name> must appear in the
`threads` list.
"""

import configparser
import io
import os
from pathlib import Path

from .errors import ConfigError

SECTIONS = ("hardware", "controller", "os", "workload", "experiment")

# spec of one key: (type, default[, extra])
#   ("int", default, lo, hi)   hi=None for unbounded
#   ("float", default, lo, hi)
#   ("bool", default)
#   ("str", default)
#   ("enum", default, choices)
SCHEMA = {
    "hardware": {
        "channels": ("int", 4, 1, None),
        "luns_per_channel": ("int", 2, 1, None),
        "blocks_per_lun": ("int", 128, 2, None),
        "pages_per_block": ("int", 64, 1, None),
        "page_size": ("int", 4096, 64, None),
        "cell_type": ("enum", "slc", ("slc", "mlc")),
        "t_cmd": ("int", 2000, 1, None),
        "t_data": ("int", 100000, 1, None),
        "t_read": ("int", 25000, 1, None),
        "t_prog_fast": ("int", 200000, 1, None),
        "t_prog_slow": ("int", 700000, 1, None),
        "t_erase": ("int", 1500000, 1, None),
        "copyback": ("bool", True),
        "pipelined_program": ("bool", False),
        "ram_bytes": ("int", 16 * 2**20, 1, None),
        "bbram_bytes": ("int", 1 * 2**20, 0, None),
    },
    "controller": {
        "mapping": ("enum", "pagemap", ("pagemap", "dftl")),
        "cmt_capacity": ("int", 4096, 1, None),
        "overprovision": ("float", 0.10, 0.0, 0.9),
        "gc_greediness": ("int", 2, 1, None),
        "gc_copyback": ("bool", False),
        "wl_enabled": ("bool", True),
        "staleness_factor": ("int", 4, 1, None),
        "temp_detector": ("bool", True),
        "temp_filters": ("int", 4, 1, None),
        "temp_filter_bits": ("int", 16384, 8, None),
        "temp_hashes": ("int", 2, 1, None),
        "temp_window": ("int", 4096, 1, None),
        "temp_hot_threshold": ("int", 2, 1, None),
        "priority_mapping": ("int", 3, None, None),
        "priority_app": ("int", 2, None, None),
        "priority_gc": ("int", 1, None, None),
        "priority_wl": ("int", 0, None, None),
        "reads_over_writes": ("bool", True),
        "deadline_boost": ("bool", True),
        "interleaving": ("bool", True),
        "greedy_lookahead": ("bool", True),
    },
    "os": {
        # 0 selects the default: 2 x total LUN count
        "queue_depth": ("int", 0, 0, None),
        "policy": ("enum", "fifo", ("fifo", "priority", "fair_share")),
        "open_interface": ("bool", True),
    },
    "workload": {
        "precondition": (
            "enum",
            "none",
            ("none", "sequential", "random", "seq_then_random"),
        ),
        "threads": ("str", ""),
    },
    "experiment": {
        "name": ("str", "experiment"),
        "param": ("str", ""),
        "values": ("str", ""),
        "seeds": ("int", 1, 1, None),
    },
}

THREAD_KINDS = (
    "seq_writer",
    "random_writer",
    "random_reader",
    "grace_join",
    "extent_alloc",
)

# params accepted by every thread definition
THREAD_COMMON = {
    "kind": ("enum", None, THREAD_KINDS),
    "depends_on": ("str", ""),
    "measured": ("bool", True),
    "window": ("int", 16, 1, None),
    "priority": ("int", 0, None, None),
    "deadline_ns": ("int", 0, 0, None),
}

THREAD_PARAMS = {
    "seq_writer": {
        "lpn_start": ("int", 0, 0, None),
        "lpn_end": ("int", -1, -1, None),  # -1 = logical page count
        "passes": ("int", 1, 1, None),
    },
    "random_writer": {
        "lpn_start": ("int", 0, 0, None),
        "lpn_end": ("int", -1, -1, None),
        "io_count": ("int", 1000, 0, None),
        "hot_fraction": ("float", 0.0, 0.0, 1.0),
        "hot_write_fraction": ("float", 0.0, 0.0, 1.0),
        "tag_temperature": ("bool", False),
    },
    "random_reader": {
        "lpn_start": ("int", 0, 0, None),
        "lpn_end": ("int", -1, -1, None),
        "io_count": ("int", 1000, 0, None),
    },
    "grace_join": {
        "r_pages": ("int", 64, 1, None),
        "s_pages": ("int", 64, 1, None),
        "partitions": ("int", 4, 1, None),
        "region_start": ("int", 0, 0, None),
        "locality_tags": ("bool", True),
    },
    "extent_alloc": {
        "region_start": ("int", 0, 0, None),
        "region_end": ("int", -1, -1, None),
        "extent_pages": ("int", 16, 1, None),
        "op_count": ("int", 300, 0, None),
    },
}

_PRESET_DIR = Path(__file__).parent / "presets"


def _parse_scalar(spec, key, text):
    kind = spec[0]
    text = text.strip()
    try:
        if kind == "int":
            val = int(text)
            _, _, lo, hi = spec
            if lo is not None and val < lo:
                raise ConfigError(f"{key}: {val} below minimum {lo}")
            if hi is not None and val > hi:
                raise ConfigError(f"{key}: {val} above maximum {hi}")
            return val
        if kind == "float":
            val = float(text)
            _, _, lo, hi = spec
            if lo is not None and val < lo:
                raise ConfigError(f"{key}: {val} below minimum {lo}")
            if hi is not None and val > hi:
                raise ConfigError(f"{key}: {val} above maximum {hi}")
            return val
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {text!r}")
        if kind == "enum":
            if text not in spec[2]:
                raise ConfigError(
                    f"{key}: {text!r} not one of {', '.join(spec[2])}"
                )
            return text
        return text  # str
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None


def default_config():
    cfg = {}
    for sec, keys in SCHEMA.items():
        cfg[sec] = {k: spec[1] for k, spec in keys.items()}
    return cfg


def _thread_names(cfg):
    raw = cfg["workload"].get("threads", "")
    return [n.strip() for n in raw.split(",") if n.strip()]


def _validate_thread_key(cfg, key, text):
    """Validate a [workload] `<name>.<param>` entry against the schema."""
    name, _, param = key.partition(".")
    if name not in _thread_names(cfg):
        raise ConfigError(
            f"workload.{key}: thread {name!r} is not listed in workload.threads"
        )
    if param in THREAD_COMMON:
        return _parse_scalar(THREAD_COMMON[param], f"workload.{key}", text)
    kind_key = f"{name}.kind"
    kind = cfg["workload"].get(kind_key)
    if kind is None:
        raise ConfigError(
            f"workload.{key}: define workload.{name}.kind before other params"
        )
    params = THREAD_PARAMS[kind]
    if param not in params:
        raise ConfigError(
            f"workload.{key}: unknown parameter {param!r} for kind {kind!r}"
        )
    return _parse_scalar(params[param], f"workload.{key}", text)


def validate_raw(raw):
    """Turn a {section: {key: str}} dict into a typed config, or raise."""
    cfg = default_config()
    for sec in raw:
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
    # workload needs threads/kind seen before dependent keys; order the pass
    for sec in SECTIONS:
        if sec not in raw:
            continue
        items = raw[sec]
        if sec == "workload":
            fixed = [
                (k, v) for k, v in items.items() if k in SCHEMA["workload"]
            ]
            kinds = [
                (k, v) for k, v in items.items() if k.endswith(".kind")
            ]
            rest = [
                (k, v)
                for k, v in items.items()
                if k not in SCHEMA["workload"] and not k.endswith(".kind")
            ]
            for key, text in fixed:
                cfg[sec][key] = _parse_scalar(
                    SCHEMA[sec][key], f"{sec}.{key}", text
                )
            for key, text in kinds + rest:
                if "." not in key:
                    raise ConfigError(f"unknown key workload.{key}")
                cfg[sec][key] = _validate_thread_key(cfg, key, text)
        else:
            for key, text in items.items():
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {sec}.{key}")
                cfg[sec][key] = _parse_scalar(
                    SCHEMA[sec][key], f"{sec}.{key}", text
                )
    # every thread must at least have a kind
    for name in _thread_names(cfg):
        if f"{name}.kind" not in cfg["workload"]:
            raise ConfigError(f"workload.{name}.kind is missing")
    return cfg


def parse_ini_text(text):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case and dots intact
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"INI parse error: {exc}") from None
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def preset_names():
    return sorted(p.stem for p in _PRESET_DIR.glob("*.ini"))


def load_config(path_or_name):
    """Load and validate a config from a file path or a preset name."""
    p = Path(path_or_name)
    if p.is_file():
        text = p.read_text()
    else:
        preset = _PRESET_DIR / f"{path_or_name}.ini"
        if preset.is_file():
            text = preset.read_text()
        else:
            raise ConfigError(
                f"config {path_or_name!r}: no such file and not a preset "
                f"(presets: {', '.join(preset_names())})"
            )
    return validate_raw(parse_ini_text(text))


def split_path(path):
    """'section.key' -> (section, key); the key part may contain dots."""
    sec, _, key = path.partition(".")
    if not sec or not key:
        raise ConfigError(f"parameter path {path!r} is not section.key")
    return sec, key


def get_path(cfg, path):
    sec, key = split_path(path)
    if sec not in cfg or key not in cfg[sec]:
        raise ConfigError(f"parameter path {path!r} does not resolve")
    return cfg[sec][key]


def set_path(cfg, path, text):
    """Assign a string value to a dotted path, with schema validation."""
    sec, key = split_path(path)
    if sec not in SCHEMA:
        raise ConfigError(f"parameter path {path!r}: unknown section")
    if sec == "workload" and key not in SCHEMA["workload"]:
        if key not in cfg["workload"] and "." not in key:
            raise ConfigError(f"parameter path {path!r} does not resolve")
        cfg[sec][key] = _validate_thread_key(cfg, key, text)
        return
    if key not in SCHEMA[sec]:
        raise ConfigError(f"parameter path {path!r} does not resolve")
    cfg[sec][key] = _parse_scalar(SCHEMA[sec][key], path, text)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def resolved_text(cfg):
    """Deterministic INI dump of a config (canonical section order,
    sorted keys). Re-reading this text reproduces the config exactly."""
    out = io.StringIO()
    for sec in SECTIONS:
        out.write(f"[{sec}]\n")
        for key in sorted(cfg[sec]):
            out.write(f"{key} = {_fmt(cfg[sec][key])}\n")
        out.write("\n")
    return out.getvalue()


def thread_specs(cfg):
    """Expand [workload] into a list of per-thread param dicts."""
    specs = []
    for name in _thread_names(cfg):
        spec = {"name": name}
        kind = cfg["workload"][f"{name}.kind"]
        spec["kind"] = kind
        for param, pspec in THREAD_COMMON.items():
            if param == "kind":
                continue
            spec[param] = cfg["workload"].get(f"{name}.{param}", pspec[1])
        for param, pspec in THREAD_PARAMS[kind].items():
            spec[param] = cfg["workload"].get(f"{name}.{param}", pspec[1])
        specs.append(spec)
    return specs


def materialize_threads(cfg):
    """Copy of cfg with every thread parameter default filled in, so the
    resolved dump lists the full effective workload rather than just the
    keys the source file happened to set."""
    out = {sec: dict(kv) for sec, kv in cfg.items()}
    for spec in thread_specs(cfg):
        name = spec["name"]
        for param, value in spec.items():
            if param != "name":
                out["workload"][f"{name}.{param}"] = value
    return out


def default_out_dir(explicit=None):
    if explicit:
        return Path(explicit)
    env = os.environ.get("FLASHSIM_OUT")
    return Path(env) if env else Path("out")

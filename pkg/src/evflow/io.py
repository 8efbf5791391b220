"""File formats and run configuration.

Event files are CSV with header "t_us,x,y,p" (or packed little-endian
binary records u64/u16/u16/i8 when the path ends in .bin). Ground-truth
sidecars and flow files are CSV with the headers below. Floats are written
with shortest round-trip repr so identical runs produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .baselines import LocalPlaneFlow, LucasKanadeFlow
from .errors import ConfigError, DataError
from .events import EVENT_DTYPE, FLOW_DTYPE, GT_DTYPE, SensorGeometry, validate_events
from .filtering import EventStreamFilter
from .pca import PcaFlow

EVENT_HEADER = "t_us,x,y,p"
GT_HEADER = "t_us,x,y,p,gt_vx,gt_vy,gt_lifetime_ms,is_noise"
FLOW_HEADER = "t_us,x,y,p,vx_px_ms,vy_px_ms,lifetime_ms,valid"

# status codes for events removed by the filter (estimator codes are < 10)
STATUS_FILTER_REFRACTORY = 11
STATUS_FILTER_ACTIVITY = 12


def _fmt(v):
    return repr(float(v))


def is_binary_path(path):
    return str(path).endswith(".bin")


def write_events(path, events):
    """Write an event array as CSV, or packed binary for .bin paths."""
    if is_binary_path(path):
        np.ascontiguousarray(events, dtype=EVENT_DTYPE).tofile(path)
        return
    with open(path, "w", newline="\n") as fh:
        fh.write(EVENT_HEADER + "\n")
        for r in events:
            fh.write(f"{r['t']},{r['x']},{r['y']},{r['p']}\n")


def _parse_error(path, line_no, line):
    return DataError(f"{path}:{line_no}: cannot parse event row {line!r}")


def iter_event_chunks(path, chunk_size=65536, geometry=None):
    """Yield event chunks in file order with bounded memory.

    Sortedness is enforced across chunk boundaries; violations report the
    1-based line number (binary files report the record index).
    """
    last_t = -1
    row = 0
    if is_binary_path(path):
        with open(path, "rb") as fh:
            while True:
                arr = np.fromfile(fh, dtype=EVENT_DTYPE, count=chunk_size)
                if arr.size == 0:
                    break
                _check_chunk(arr, last_t, row, path, header_lines=0)
                last_t = int(arr["t"][-1])
                row += len(arr)
                yield arr
        return
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header != EVENT_HEADER:
            raise DataError(f"{path}:1: expected header '{EVENT_HEADER}', got '{header}'")
        while True:
            rows = []
            for line in fh:
                row += 1
                parts = line.strip().split(",")
                if len(parts) != 4:
                    raise _parse_error(path, row + 1, line.strip())
                try:
                    rows.append((int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])))
                except ValueError:
                    raise _parse_error(path, row + 1, line.strip())
                if len(rows) >= chunk_size:
                    break
            if not rows:
                break
            arr = np.array(rows, dtype=EVENT_DTYPE)
            _check_chunk(arr, last_t, row - len(arr), path, header_lines=1)
            last_t = int(arr["t"][-1])
            yield arr


def _check_chunk(arr, last_t, row0, path, header_lines):
    t = arr["t"].astype(np.int64)
    prev = np.concatenate([[last_t], t[:-1]])
    bad = np.flatnonzero(t < prev)
    if bad.size:
        i = int(bad[0])
        where = row0 + i + 1 + header_lines
        raise DataError(f"{path}:{where}: timestamps not sorted ({t[i]} after {prev[i]})")
    p = arr["p"]
    badp = np.flatnonzero((p != 1) & (p != -1))
    if badp.size:
        i = int(badp[0])
        raise DataError(f"{path}:{row0 + i + 1 + header_lines}: polarity {p[i]} not in {{+1,-1}}")


def read_events(path, geometry=None):
    """Read a whole event file; validates ordering and polarity."""
    chunks = list(iter_event_chunks(path))
    events = np.concatenate(chunks) if chunks else np.empty(0, dtype=EVENT_DTYPE)
    if geometry is not None and len(events):
        validate_events(events, geometry, check_sorted=False)
    return events


def write_ground_truth(path, gt):
    with open(path, "w", newline="\n") as fh:
        fh.write(GT_HEADER + "\n")
        for r in gt:
            fh.write(
                f"{r['t']},{r['x']},{r['y']},{r['p']},{_fmt(r['gt_vx'])},"
                f"{_fmt(r['gt_vy'])},{_fmt(r['gt_lifetime_ms'])},{int(r['is_noise'])}\n"
            )


def read_ground_truth(path):
    out = []
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header != GT_HEADER:
            raise DataError(f"{path}:1: expected header '{GT_HEADER}', got '{header}'")
        for i, line in enumerate(fh):
            parts = line.strip().split(",")
            if len(parts) != 8:
                raise DataError(f"{path}:{i + 2}: cannot parse ground-truth row")
            out.append(
                (int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]),
                 float(parts[4]), float(parts[5]), float(parts[6]), parts[7] == "1")
            )
    return np.array(out, dtype=GT_DTYPE)


def write_flow_header(fh):
    fh.write(FLOW_HEADER + "\n")


def write_flow_rows(fh, flow):
    for r in flow:
        if r["valid"]:
            fh.write(
                f"{r['t']},{r['x']},{r['y']},{r['p']},{_fmt(r['vx'])},"
                f"{_fmt(r['vy'])},{_fmt(r['lifetime_ms'])},1\n"
            )
        else:
            fh.write(f"{r['t']},{r['x']},{r['y']},{r['p']},{_fmt(0.0)},{_fmt(0.0)},,0\n")


def write_flow(path, flow):
    with open(path, "w", newline="\n") as fh:
        write_flow_header(fh)
        write_flow_rows(fh, flow)


def read_flow(path):
    out = np.empty(0, dtype=FLOW_DTYPE)
    rows = []
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header != FLOW_HEADER:
            raise DataError(f"{path}:1: expected header '{FLOW_HEADER}', got '{header}'")
        for i, line in enumerate(fh):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 8:
                raise DataError(f"{path}:{i + 2}: cannot parse flow row")
            lifetime = float(parts[6]) if parts[6] else math.nan
            rows.append(
                (int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]),
                 float(parts[4]), float(parts[5]), lifetime, parts[7] == "1", 0)
            )
    if rows:
        out = np.array(rows, dtype=FLOW_DTYPE)
    return out


_AUTO_FLOATS = ("consensus_delta_us", "adaptive_alpha_min", "adaptive_alpha_max",
                "plane_reject_threshold_us")


@dataclass
class RunConfig:
    """Every pipeline tunable, flat, as read from a key=value config file.

    Fields holding None accept the literal "auto" in config files and pick
    their value at run time (consensus threshold from the neighborhood's
    temporal extent, alpha bounds from the 100 Hz..10 MHz rate range).
    """

    width: int = 480
    height: int = 360
    seed: int = 0
    estimator: str = "pca"
    regularizer: str = "none"
    n: int = 7
    min_neighbors: int = 4
    planarity_eps: float = 0.05
    consensus_delta_us: float | None = None
    outlier_ratio_eps: float = 0.5
    consensus_denominator: str = "window"
    max_age_us: int = 30_000
    refractory_same_us: int = 20_000
    refractory_opp_us: int = 1_000
    adaptive_k: float = 1.0
    adaptive_alpha_min: float | None = None
    adaptive_alpha_max: float | None = None
    adaptive_t_min_us: float = 1_000.0
    adaptive_t_max_us: float = 20_000.0
    min_support: int = 3
    rate_window_us: int = 10_000
    weight_window: int = 5
    weight_min_dt_us: float = 1.0
    weight_function: str = "inverse"
    weight_tau_ms: float = 1.0
    weight_max_age_us: int = 30_000
    levels: tuple = (7, 5, 3)
    plane_reject_threshold_us: float | None = None
    plane_max_iters: int = 10
    lk_delta_t_us: int = 10_000
    lk_window: int = 5
    lk_cond_ratio: float = 1e-6
    lk_history_depth: int = 32
    bin_width_ms: float = 0.1

    def geometry(self):
        return SensorGeometry(self.width, self.height)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key, raw):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key '{key}'")
    raw = raw.strip()
    if key in _AUTO_FLOATS:
        if raw.lower() in ("auto", "none"):
            return None
        return float(raw)
    if key == "levels":
        try:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"cannot parse levels '{raw}'")
    target = _FIELD_TYPES[key]
    try:
        if target == "int":
            return int(raw)
        if target == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse config value {key}={raw!r}")
    return raw


def load_config(path=None, overrides=()):
    """RunConfig from an optional key=value file plus key=value overrides.

    Unknown keys are a hard error; later overrides win.
    """
    values = {}
    if path is not None:
        with open(path) as fh:
            for i, line in enumerate(fh):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{i + 1}: expected key=value, got '{line}'")
                key, raw = line.split("=", 1)
                values[key.strip()] = _parse_value(key.strip(), raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, raw = item.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw)
    return RunConfig(**values)


def build_filter(cfg: RunConfig):
    return EventStreamFilter(
        width=cfg.width, height=cfg.height, t_same_us=cfg.refractory_same_us,
        t_opp_us=cfg.refractory_opp_us, k=cfg.adaptive_k,
        alpha_min=cfg.adaptive_alpha_min, alpha_max=cfg.adaptive_alpha_max,
        t_min_us=cfg.adaptive_t_min_us, t_max_us=cfg.adaptive_t_max_us,
        min_support=cfg.min_support, rate_window_us=cfg.rate_window_us,
    )


def build_estimator(cfg: RunConfig, estimator=None, regularizer=None):
    """Estimator instance for an estimator/regularizer selection.

    Regularizers apply to the plane-normal path only.
    """
    est = cfg.estimator if estimator is None else estimator
    reg = cfg.regularizer if regularizer is None else regularizer
    if est not in ("pca", "plane", "lk"):
        raise ConfigError(f"unknown estimator '{est}'")
    if reg not in ("none", "weighted", "leveled"):
        raise ConfigError(f"unknown regularizer '{reg}'")
    if est != "pca" and reg != "none":
        raise ConfigError(f"regularizer '{reg}' applies to the pca estimator only")
    if est == "pca":
        return PcaFlow(
            width=cfg.width, height=cfg.height, n=cfg.n,
            min_neighbors=cfg.min_neighbors, planarity_eps=cfg.planarity_eps,
            consensus_delta_us=cfg.consensus_delta_us,
            outlier_ratio_eps=cfg.outlier_ratio_eps,
            consensus_denominator=cfg.consensus_denominator,
            max_age_us=cfg.max_age_us, regularizer=reg,
            weight_window=cfg.weight_window, weight_min_dt_us=cfg.weight_min_dt_us,
            weight_function=cfg.weight_function, weight_tau_ms=cfg.weight_tau_ms,
            weight_max_age_us=cfg.weight_max_age_us, levels=cfg.levels,
        )
    if est == "plane":
        return LocalPlaneFlow(
            width=cfg.width, height=cfg.height, n=cfg.n,
            reject_threshold_us=cfg.plane_reject_threshold_us,
            max_iters=cfg.plane_max_iters, max_age_us=cfg.max_age_us,
        )
    return LucasKanadeFlow(
        width=cfg.width, height=cfg.height, delta_t_us=cfg.lk_delta_t_us,
        window=cfg.lk_window, cond_ratio=cfg.lk_cond_ratio,
        history_depth=cfg.lk_history_depth,
    )

"""Core event types, sensor geometry, and per-polarity state grids.

Timestamps are integer microseconds throughout; flow values are px/ms.
Polarity is +1 (brighter) or -1 (darker); grids index polarity as
0 = negative, 1 = positive. Empty grid cells hold the EMPTY sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import ConfigError, DataError

EMPTY = K.EMPTY

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])

GT_DTYPE = np.dtype(
    [
        ("t", "<u8"),
        ("x", "<u2"),
        ("y", "<u2"),
        ("p", "<i1"),
        ("gt_vx", "<f8"),
        ("gt_vy", "<f8"),
        ("gt_lifetime_ms", "<f8"),
        ("is_noise", "?"),
    ]
)

FLOW_DTYPE = np.dtype(
    [
        ("t", "<u8"),
        ("x", "<u2"),
        ("y", "<u2"),
        ("p", "<i1"),
        ("vx", "<f8"),
        ("vy", "<f8"),
        ("lifetime_ms", "<f8"),
        ("valid", "?"),
        ("status", "u1"),
    ]
)


@dataclass(frozen=True)
class SensorGeometry:
    """Pixel array dimensions. Must admit at least a 3x3 neighborhood."""

    width: int = 480
    height: int = 360

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ConfigError(f"sensor geometry {self.width}x{self.height} too small (min 3x3)")

    def contains(self, x, y):
        return 0 <= x < self.width and 0 <= y < self.height


@dataclass(frozen=True)
class Event:
    """A single polarized camera event."""

    x: int
    y: int
    t: int
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise DataError(f"polarity must be +1 or -1, got {self.p}")
        if self.t < 0:
            raise DataError(f"timestamp must be non-negative, got {self.t}")

    @property
    def polarity_index(self):
        return (self.p + 1) >> 1


@dataclass
class FlowEvent:
    """An event augmented with its estimated flow.

    A rejected estimate carries valid=False, zero flow, and NaN lifetime;
    a valid one satisfies lifetime_ms == 1 / hypot(vx, vy).
    """

    event: Event
    vx: float = 0.0
    vy: float = 0.0
    lifetime_ms: float = float("nan")
    valid: bool = False
    status: int = K.ST_NO_DATA

    @property
    def speed(self):
        return math.hypot(self.vx, self.vy)


def events_from_arrays(t_us, x, y, p):
    """Assemble an event record array from column arrays."""
    t_us = np.asarray(t_us)
    out = np.empty(len(t_us), dtype=EVENT_DTYPE)
    out["t"] = t_us
    out["x"] = x
    out["y"] = y
    out["p"] = p
    return out


def events_view(records):
    """Project records that carry at least t/x/y/p down to the event dtype."""
    out = np.empty(len(records), dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        out[name] = records[name]
    return out


def validate_events(events, geometry=None, check_sorted=True):
    """Check dtype fields, polarity values, bounds, and time ordering.

    Raises DataError naming the first offending record. Returns the input.
    """
    fields = events.dtype.names or ()
    for name in ("t", "x", "y", "p"):
        if name not in fields:
            raise DataError(f"event array is missing field '{name}'")
    p = events["p"]
    bad = np.flatnonzero((p != 1) & (p != -1))
    if bad.size:
        raise DataError(f"event {bad[0]}: polarity {p[bad[0]]} not in {{+1,-1}}")
    if geometry is not None:
        oob = np.flatnonzero((events["x"] >= geometry.width) | (events["y"] >= geometry.height))
        if oob.size:
            i = oob[0]
            raise DataError(
                f"event {i}: pixel ({events['x'][i]},{events['y'][i]}) outside "
                f"{geometry.width}x{geometry.height}"
            )
    if check_sorted and len(events) > 1:
        t = events["t"]
        drops = np.flatnonzero(t[1:] < t[:-1])
        if drops.size:
            i = drops[0] + 1
            raise DataError(f"event {i}: timestamp {t[i]} decreases (previous {t[i - 1]})")
    return events


def split_columns(events):
    """Return (t_us, x, y, polarity_index) as int64 arrays for the kernels."""
    t = events["t"].astype(np.int64)
    x = events["x"].astype(np.int64)
    y = events["y"].astype(np.int64)
    pidx = ((events["p"].astype(np.int64)) + 1) >> 1
    return t, x, y, pidx


class ActiveSurface:
    """Per-polarity grid of the most recent event timestamp at each pixel.

    Single-writer: one owner mutates it in stream order; reads are safe to
    share. grid has shape (2, height, width), int64 microseconds, EMPTY when
    never written.
    """

    def __init__(self, geometry: SensorGeometry):
        self.geometry = geometry
        self.grid = np.full((2, geometry.height, geometry.width), EMPTY, dtype=np.int64)

    def last(self, x, y, p):
        """Timestamp of the last stored event at (x, y) for polarity p, or None."""
        v = self.grid[(p + 1) >> 1, y, x]
        return None if v == EMPTY else int(v)

    def update(self, event: Event):
        surface_update(self, event)

    def neighborhood(self, event: Event, n: int, max_age_us: int):
        return surface_neighborhood(self, event, n, max_age_us)


class ActiveFlowBuffer:
    """Per-polarity grid of the most recent valid flow estimate per pixel."""

    def __init__(self, geometry: SensorGeometry):
        self.geometry = geometry
        shape = (2, geometry.height, geometry.width)
        self.vx = np.zeros(shape, dtype=np.float64)
        self.vy = np.zeros(shape, dtype=np.float64)
        self.t = np.full(shape, EMPTY, dtype=np.int64)

    def update(self, x, y, p, vx, vy, t_us):
        pi = (p + 1) >> 1
        if self.t[pi, y, x] > t_us:
            return
        self.vx[pi, y, x] = vx
        self.vy[pi, y, x] = vy
        self.t[pi, y, x] = t_us

    def get(self, x, y, p):
        pi = (p + 1) >> 1
        if self.t[pi, y, x] == EMPTY:
            return None
        return (self.vx[pi, y, x], self.vy[pi, y, x], int(self.t[pi, y, x]))


def surface_update(surface: ActiveSurface, event: Event):
    """Store the event's timestamp at its (pixel, polarity) cell.

    Out-of-bounds events are rejected; a cell never moves backwards in time.
    """
    g = surface.geometry
    if not g.contains(event.x, event.y):
        raise DataError(f"event pixel ({event.x},{event.y}) outside {g.width}x{g.height}")
    pi = event.polarity_index
    if surface.grid[pi, event.y, event.x] > event.t:
        return
    surface.grid[pi, event.y, event.x] = event.t


def surface_neighborhood(surface: ActiveSurface, event: Event, n: int, max_age_us: int):
    """Fresh same-polarity cells in the n x n window around the event.

    Returns an (m, 3) int64 array of (x, y, t_us) with the center cell
    excluded and event.t - t <= max_age_us; the window clips at the borders.
    """
    if n < 3 or n % 2 == 0:
        raise DataError(f"window size must be odd and >= 3, got {n}")
    g = surface.geometry
    if not g.contains(event.x, event.y):
        raise DataError(f"event pixel ({event.x},{event.y}) outside {g.width}x{g.height}")
    xs = np.empty(n * n, dtype=np.int64)
    ys = np.empty(n * n, dtype=np.int64)
    ts = np.empty(n * n, dtype=np.int64)
    m = K._gather_abs(
        surface.grid[event.polarity_index],
        event.x,
        event.y,
        event.t,
        n // 2,
        int(max_age_us),
        xs,
        ys,
        ts,
    )
    out = np.empty((m, 3), dtype=np.int64)
    out[:, 0] = xs[:m]
    out[:, 1] = ys[:m]
    out[:, 2] = ts[:m]
    return out

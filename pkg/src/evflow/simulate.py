"""Synthetic event streams with exact per-event ground-truth flow.

Patterns are ideal moving edges: an event fires when an edge crosses a pixel
center, with polarity +1 for dark-to-bright and -1 for bright-to-dark.
Crossing times are computed analytically and quantized to 1 us; ground truth
is the pattern's instantaneous velocity at the crossing. Uniform noise
events and Gaussian timestamp jitter are optional adversarial inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .events import GT_DTYPE, SensorGeometry


@dataclass(frozen=True)
class TranslatingEdge:
    """A single straight front sweeping the sensor at (vx, vy) px/ms."""

    vx: float = 2.0
    vy: float = 0.0

    def __post_init__(self):
        if math.hypot(self.vx, self.vy) <= 0:
            raise ConfigError("edge velocity must be nonzero")


@dataclass(frozen=True)
class VerticalStripes:
    """Equal-width vertical bands, one stripe pattern per band.

    Band i scrolls horizontally at speeds[i] px/ms; edges alternate polarity
    every spacing/2 pixels, so a pixel re-fires with the same polarity every
    spacing/|speed| ms (keep that above the refractory dead time).
    """

    speeds: tuple = (1.0 / 6.0, 1.0 / 12.0)
    spacing: int = 16

    def __post_init__(self):
        if not self.speeds:
            raise ConfigError("at least one stripe speed is required")
        if any(s == 0 for s in self.speeds):
            raise ConfigError("stripe speeds must be nonzero")
        if self.spacing < 2:
            raise ConfigError("stripe spacing must be >= 2 px")


@dataclass(frozen=True)
class RotatingBar:
    """A half-plane boundary through `center` rotating at omega rad/s."""

    omega_rad_s: float = math.pi
    center: tuple = None

    def __post_init__(self):
        if self.omega_rad_s == 0:
            raise ConfigError("angular velocity must be nonzero")


@dataclass(frozen=True)
class GradedStripes:
    """Stripes flowing through a linear horizontal speed profile.

    Edge fronts enter at x = 0 every period_us and sweep right with the
    local speed s(x), interpolated from speed_left at x = 0 to speed_right
    at the last column. The translation direction is constant while the
    magnitude varies smoothly, like a camera translating over a tilted
    surface; every pixel re-fires with period_us exactly.
    """

    speed_left: float = 0.5
    speed_right: float = 0.9
    period_us: int = 40_000

    def __post_init__(self):
        if self.speed_left <= 0 or self.speed_right <= 0:
            raise ConfigError("profile speeds must be positive")
        if self.period_us <= 0:
            raise ConfigError("stripe period must be positive")


@dataclass(frozen=True)
class SceneSpec:
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    pattern: object = field(default_factory=TranslatingEdge)
    duration_us: int = 100_000
    contrast_threshold: int = 1
    noise_rate_hz: float = 0.0
    jitter_std_us: float = 0.0

    def __post_init__(self):
        if self.duration_us <= 0:
            raise ConfigError("duration must be positive")
        if self.contrast_threshold < 1:
            raise ConfigError("contrast threshold must be >= 1")
        if self.noise_rate_hz < 0:
            raise ConfigError("noise rate must be >= 0")
        if self.jitter_std_us < 0:
            raise ConfigError("timestamp jitter must be >= 0")


def _edge_crossings(geom: SensorGeometry, vx, vy, dur_ms):
    speed = math.hypot(vx, vy)
    nx, ny = vx / speed, vy / speed
    xs, ys = np.meshgrid(np.arange(geom.width), np.arange(geom.height))
    xs = xs.ravel()
    ys = ys.ravel()
    proj = xs * nx + ys * ny
    t_ms = (proj - proj.min()) / speed
    keep = t_ms <= dur_ms
    m = int(keep.sum())
    return (
        xs[keep],
        ys[keep],
        t_ms[keep],
        np.ones(m, dtype=np.int8),
        np.full(m, vx),
        np.full(m, vy),
    )


def _stripe_crossings(geom: SensorGeometry, speeds, spacing, dur_ms):
    hs = spacing / 2.0
    nbands = len(speeds)
    rows = np.arange(geom.height)
    out_x, out_y, out_t, out_p, out_vx = [], [], [], [], []
    for b, s in enumerate(speeds):
        x_lo = b * geom.width // nbands
        x_hi = (b + 1) * geom.width // nbands
        xs = np.arange(x_lo, x_hi)
        ends = np.array([x_lo - s * dur_ms, x_hi - s * dur_ms, x_lo, x_hi]) / hs
        j_lo = int(math.floor(ends.min())) - 1
        j_hi = int(math.ceil(ends.max())) + 1
        for j in range(j_lo, j_hi + 1):
            t_col = (xs - j * hs) / s
            ok = (t_col >= 0) & (t_col <= dur_ms)
            if not ok.any():
                continue
            xv = xs[ok]
            tv = t_col[ok]
            p = 1 if j % 2 == 0 else -1
            out_x.append(np.repeat(xv, geom.height))
            out_y.append(np.tile(rows, len(xv)))
            out_t.append(np.repeat(tv, geom.height))
            out_p.append(np.full(len(xv) * geom.height, p, dtype=np.int8))
            out_vx.append(np.full(len(xv) * geom.height, float(s)))
    if not out_x:
        z = np.array([], dtype=np.int64)
        return z, z, np.array([]), np.array([], dtype=np.int8), np.array([]), np.array([])
    x = np.concatenate(out_x)
    vx = np.concatenate(out_vx)
    return (
        x,
        np.concatenate(out_y),
        np.concatenate(out_t),
        np.concatenate(out_p),
        vx,
        np.zeros(len(x)),
    )


def _graded_crossings(geom: SensorGeometry, speed_left, speed_right, period_us, dur_ms):
    w = geom.width
    g = (speed_right - speed_left) / max(w - 1, 1)
    xs = np.arange(w, dtype=np.float64)
    speeds = speed_left + g * xs
    if abs(g) < 1e-12:
        travel_ms = xs / speed_left
    else:
        travel_ms = np.log1p(g * xs / speed_left) / g
    period_ms = period_us * 1e-3
    rows = np.arange(geom.height)
    out_x, out_y, out_t, out_p, out_vx = [], [], [], [], []
    j_lo = int(math.floor(-travel_ms.max() / period_ms)) - 1
    j_hi = int(math.ceil(dur_ms / period_ms)) + 1
    for j in range(j_lo, j_hi + 1):
        t_col = j * period_ms + travel_ms
        ok = (t_col >= 0) & (t_col <= dur_ms)
        if not ok.any():
            continue
        xv = np.flatnonzero(ok)
        p = 1 if j % 2 == 0 else -1
        out_x.append(np.repeat(xv, geom.height))
        out_y.append(np.tile(rows, len(xv)))
        out_t.append(np.repeat(t_col[ok], geom.height))
        out_p.append(np.full(len(xv) * geom.height, p, dtype=np.int8))
        out_vx.append(np.repeat(speeds[ok], geom.height))
    if not out_x:
        z = np.array([], dtype=np.int64)
        return z, z, np.array([]), np.array([], dtype=np.int8), np.array([]), np.array([])
    x = np.concatenate(out_x)
    return (
        x,
        np.concatenate(out_y),
        np.concatenate(out_t),
        np.concatenate(out_p),
        np.concatenate(out_vx),
        np.zeros(len(x)),
    )


def _rotor_crossings(geom: SensorGeometry, omega_rad_s, center, dur_ms):
    w_ms = omega_rad_s / 1000.0
    cx, cy = center if center is not None else ((geom.width - 1) / 2.0, (geom.height - 1) / 2.0)
    xs, ys = np.meshgrid(np.arange(geom.width), np.arange(geom.height))
    xs = xs.ravel().astype(np.float64)
    ys = ys.ravel().astype(np.float64)
    dx = xs - cx
    dy = ys - cy
    rho = np.hypot(dx, dy)
    far = rho >= 1.0
    xs, ys, dx, dy, rho = xs[far], ys[far], dx[far], dy[far], rho[far]
    phi = np.arctan2(dy, dx)
    out_x, out_y, out_t, out_p, out_vx, out_vy = [], [], [], [], [], []
    two_pi = 2.0 * math.pi
    for family, p in ((0.0, 1), (math.pi, -1)):
        k_ends = (np.array([0.0, w_ms * dur_ms])[:, None] - (phi + family)[None, :]) / two_pi
        k_lo = int(math.floor(k_ends.min())) - 1
        k_hi = int(math.ceil(k_ends.max())) + 1
        for k in range(k_lo, k_hi + 1):
            t = (phi + family + two_pi * k) / w_ms
            ok = (t >= 0) & (t <= dur_ms)
            if not ok.any():
                continue
            out_x.append(xs[ok])
            out_y.append(ys[ok])
            out_t.append(t[ok])
            out_p.append(np.full(int(ok.sum()), p, dtype=np.int8))
            out_vx.append(-w_ms * dy[ok])
            out_vy.append(w_ms * dx[ok])
    x = np.concatenate(out_x)
    return (
        x.astype(np.int64),
        np.concatenate(out_y).astype(np.int64),
        np.concatenate(out_t),
        np.concatenate(out_p),
        np.concatenate(out_vx),
        np.concatenate(out_vy),
    )


def generate(spec: SceneSpec, seed: int = 0):
    """Time-sorted ground-truth event stream for a scene; deterministic in seed."""
    geom = spec.geometry
    dur_ms = spec.duration_us * 1e-3
    if isinstance(spec.pattern, TranslatingEdge):
        x, y, t_ms, p, gvx, gvy = _edge_crossings(geom, spec.pattern.vx, spec.pattern.vy, dur_ms)
    elif isinstance(spec.pattern, VerticalStripes):
        x, y, t_ms, p, gvx, gvy = _stripe_crossings(
            geom, spec.pattern.speeds, spec.pattern.spacing, dur_ms
        )
    elif isinstance(spec.pattern, RotatingBar):
        x, y, t_ms, p, gvx, gvy = _rotor_crossings(
            geom, spec.pattern.omega_rad_s, spec.pattern.center, dur_ms
        )
    elif isinstance(spec.pattern, GradedStripes):
        x, y, t_ms, p, gvx, gvy = _graded_crossings(
            geom, spec.pattern.speed_left, spec.pattern.speed_right,
            spec.pattern.period_us, dur_ms
        )
    else:
        raise ConfigError(f"unknown pattern {type(spec.pattern).__name__}")

    if spec.contrast_threshold > 1:
        k = spec.contrast_threshold
        x, y, t_ms, p = (np.repeat(a, k) for a in (x, y, t_ms, p))
        gvx, gvy = np.repeat(gvx, k), np.repeat(gvy, k)

    rng = np.random.default_rng(seed)
    t_us = np.rint(t_ms * 1000.0).astype(np.int64)
    if spec.jitter_std_us > 0 and len(t_us):
        t_us = t_us + np.rint(rng.normal(0.0, spec.jitter_std_us, len(t_us))).astype(np.int64)
        np.clip(t_us, 0, spec.duration_us, out=t_us)

    n_noise = 0
    if spec.noise_rate_hz > 0:
        n_noise = int(rng.poisson(spec.noise_rate_hz * spec.duration_us * 1e-6))
    speed = np.hypot(gvx, gvy)
    parts = {
        "t": np.concatenate([t_us, rng.integers(0, spec.duration_us + 1, n_noise)]),
        "x": np.concatenate([x, rng.integers(0, geom.width, n_noise)]),
        "y": np.concatenate([y, rng.integers(0, geom.height, n_noise)]),
        "p": np.concatenate([p, rng.choice(np.array([-1, 1], dtype=np.int8), n_noise)]),
        "gt_vx": np.concatenate([gvx, np.full(n_noise, np.nan)]),
        "gt_vy": np.concatenate([gvy, np.full(n_noise, np.nan)]),
        "gt_lifetime_ms": np.concatenate([1.0 / speed, np.full(n_noise, np.nan)]),
        "is_noise": np.concatenate(
            [np.zeros(len(t_us), dtype=bool), np.ones(n_noise, dtype=bool)]
        ),
    }
    out = np.empty(len(parts["t"]), dtype=GT_DTYPE)
    for name in parts:
        out[name] = parts[name]
    order = np.lexsort((out["p"], out["y"], out["x"], out["t"]))
    return out[order]


def two_speed_stripes(slow, fast, geometry: SensorGeometry = SensorGeometry(),
                      duration_us: int = 200_000, spacing: int = 16, seed: int = 0,
                      noise_rate_hz: float = 0.0, jitter_std_us: float = 0.0):
    """Left half of the sensor scrolls at `slow` px/ms, the right at `fast`.

    Ground-truth lifetimes are exactly 1/slow and 1/fast ms.
    """
    if slow == fast:
        raise ConfigError("the two stripe speeds must differ")
    if slow <= 0 or fast <= 0:
        raise ConfigError("stripe speeds must be positive")
    spec = SceneSpec(
        geometry=geometry,
        pattern=VerticalStripes(speeds=(slow, fast), spacing=spacing),
        duration_us=duration_us,
        noise_rate_hz=noise_rate_hz,
        jitter_std_us=jitter_std_us,
    )
    return generate(spec, seed)

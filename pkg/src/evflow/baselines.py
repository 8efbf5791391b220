"""Comparison estimators: iterative local plane fitting and event-based
Lucas-Kanade on per-pixel event counts.

Both share the plane-normal estimator's stream contract (one record per
accepted event, estimation read-only on the per-stream state). The plane
fitter solves t = p*x + q*y + r by least squares and iteratively drops far
points; Lucas-Kanade integrates event counts over two consecutive delta_t
slices and solves the 2x2 normal equations over a small window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._base import EventTransformerBase, columns, empty_flow_records
from .errors import ConfigError, DataError
from .events import EMPTY, ActiveSurface, Event, FlowEvent, SensorGeometry


@dataclass(frozen=True)
class LocalPlaneConfig:
    """reject_threshold_us=None adapts per neighborhood exactly like the
    plane-normal estimator's consensus threshold, for comparability."""

    n: int = 7
    reject_threshold_us: float | None = None
    max_iters: int = 10
    max_age_us: int = 30_000

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ConfigError(f"window size must be odd and >= 3, got {self.n}")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.reject_threshold_us is not None and self.reject_threshold_us <= 0:
            raise ConfigError("reject_threshold_us must be positive")

    def reject_us_or_auto(self):
        return -1.0 if self.reject_threshold_us is None else float(self.reject_threshold_us)


@dataclass(frozen=True)
class EventLkConfig:
    delta_t_us: int = 10_000
    window: int = 5
    cond_ratio: float = 1e-6
    history_depth: int = 32

    def __post_init__(self):
        if self.delta_t_us <= 0:
            raise ConfigError("delta_t_us must be positive")
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 3, got {self.window}")
        if self.history_depth < 1:
            raise ConfigError("history_depth must be >= 1")


def plane_fit_flow(event: Event, surface: ActiveSurface,
                   cfg: LocalPlaneConfig = LocalPlaneConfig()):
    """Least-squares plane flow for one event against the surface snapshot.

    Invalid on rank deficiency or when fewer than 3 points survive rejection.
    """
    g = surface.geometry
    if not g.contains(event.x, event.y):
        raise DataError(f"event pixel ({event.x},{event.y}) outside {g.width}x{g.height}")
    nmax = cfg.n * cfg.n
    fx = np.empty(nmax, dtype=np.float64)
    fy = np.empty(nmax, dtype=np.float64)
    ft = np.empty(nmax, dtype=np.float64)
    active = np.empty(nmax, dtype=np.bool_)
    st, vx, vy, lt, nact = K._plane_fit_estimate(
        surface.grid[event.polarity_index], event.x, event.y, event.t,
        cfg.n, cfg.reject_us_or_auto(), cfg.max_iters, cfg.max_age_us,
        fx, fy, ft, active
    )
    if st == K.ST_OK:
        return FlowEvent(event, float(vx), float(vy), float(lt), True, st)
    return FlowEvent(event, 0.0, 0.0, float("nan"), False, st)


class EventHistory:
    """Per-pixel ring buffers of recent event timestamps, per polarity."""

    def __init__(self, geometry: SensorGeometry, depth=32):
        self.geometry = geometry
        self.depth = depth
        self.t = np.full((2, geometry.height, geometry.width, depth), EMPTY, dtype=np.int64)
        self.pos = np.zeros((2, geometry.height, geometry.width), dtype=np.int64)

    def add(self, event: Event):
        K._history_add(self.t, self.pos, event.polarity_index, event.x, event.y, event.t)


def lucas_kanade_flow(event: Event, history: EventHistory,
                      cfg: EventLkConfig = EventLkConfig()):
    """Lucas-Kanade flow for one event from count images over the history.

    The history must cover [event.t - 2*delta_t, event.t]; it is not
    modified. Invalid when the window is empty or the structure tensor is
    ill-conditioned (aperture-dominated or zero-gradient neighborhoods).
    """
    g = history.geometry
    if not g.contains(event.x, event.y):
        raise DataError(f"event pixel ({event.x},{event.y}) outside {g.width}x{g.height}")
    side = cfg.window + 2
    imA = np.empty((side, side), dtype=np.float64)
    imB = np.empty((side, side), dtype=np.float64)
    st, vx, vy, lt, _ = K._lk_estimate(
        history.t[event.polarity_index], event.x, event.y, event.t,
        cfg.delta_t_us, cfg.window, cfg.cond_ratio, imA, imB
    )
    if st == K.ST_OK:
        return FlowEvent(event, float(vx), float(vy), float(lt), True, st)
    return FlowEvent(event, 0.0, 0.0, float("nan"), False, st)


class PlaneState:
    def __init__(self, geometry: SensorGeometry):
        self.surfaces = np.full((2, geometry.height, geometry.width), EMPTY, dtype=np.int64)


class LocalPlaneFlow(EventTransformerBase):
    """Iterative least-squares plane fitting over a stream, sklearn style."""

    def __init__(self, width=480, height=360, n=7, reject_threshold_us=None,
                 max_iters=10, max_age_us=30_000):
        self.width = width
        self.height = height
        self.n = n
        self.reject_threshold_us = reject_threshold_us
        self.max_iters = max_iters
        self.max_age_us = max_age_us

    def _resolve(self):
        self._cfg = LocalPlaneConfig(
            self.n, self.reject_threshold_us, self.max_iters, self.max_age_us
        )

    def stream_state(self):
        return PlaneState(self._geometry())

    def stream_chunk(self, events, state: PlaneState):
        out = empty_flow_records(events)
        if not len(events):
            return out
        t, x, y, pidx = columns(events)
        vx = np.empty(len(t))
        vy = np.empty(len(t))
        lt = np.empty(len(t))
        valid = np.empty(len(t), dtype=np.bool_)
        status = np.empty(len(t), dtype=np.uint8)
        inliers = np.empty(len(t), dtype=np.int64)
        K._plane_stream(
            t, x, y, pidx, state.surfaces, self._cfg.n,
            self._cfg.reject_us_or_auto(), self._cfg.max_iters,
            self._cfg.max_age_us, vx, vy, lt, valid, status, inliers
        )
        out["vx"] = vx
        out["vy"] = vy
        out["lifetime_ms"] = lt
        out["valid"] = valid
        out["status"] = status
        return out

    def _bench_callables(self, state: PlaneState):
        cfg = self._cfg
        icfg = np.array([cfg.n, cfg.max_iters], dtype=np.int64)
        fcfg = np.array([cfg.reject_us_or_auto(), float(cfg.max_age_us)], dtype=np.float64)
        nmax = cfg.n * cfg.n
        fx = np.empty(nmax, dtype=np.float64)
        fy = np.empty(nmax, dtype=np.float64)
        ft = np.empty(nmax, dtype=np.float64)
        active = np.empty(nmax, dtype=np.bool_)
        surf = state.surfaces

        def est(pi, x, y, t):
            K._plane_single(surf, pi, x, y, t, icfg, fcfg, fx, fy, ft, active)

        def post(pi, x, y, t):
            K._surface_write(surf, pi, x, y, t)

        return None, est, post


class LkState:
    def __init__(self, geometry: SensorGeometry, depth):
        self.history = EventHistory(geometry, depth)


class LucasKanadeFlow(EventTransformerBase):
    """Event-count Lucas-Kanade over a stream, sklearn style."""

    def __init__(self, width=480, height=360, delta_t_us=10_000, window=5,
                 cond_ratio=1e-6, history_depth=32):
        self.width = width
        self.height = height
        self.delta_t_us = delta_t_us
        self.window = window
        self.cond_ratio = cond_ratio
        self.history_depth = history_depth

    def _resolve(self):
        self._cfg = EventLkConfig(
            self.delta_t_us, self.window, self.cond_ratio, self.history_depth
        )

    def stream_state(self):
        return LkState(self._geometry(), self.history_depth)

    def stream_chunk(self, events, state: LkState):
        out = empty_flow_records(events)
        if not len(events):
            return out
        t, x, y, pidx = columns(events)
        vx = np.empty(len(t))
        vy = np.empty(len(t))
        lt = np.empty(len(t))
        valid = np.empty(len(t), dtype=np.bool_)
        status = np.empty(len(t), dtype=np.uint8)
        inliers = np.empty(len(t), dtype=np.int64)
        K._lk_stream(
            t, x, y, pidx, state.history.t, state.history.pos,
            self._cfg.delta_t_us, self._cfg.window, self._cfg.cond_ratio,
            vx, vy, lt, valid, status, inliers
        )
        out["vx"] = vx
        out["vy"] = vy
        out["lifetime_ms"] = lt
        out["valid"] = valid
        out["status"] = status
        return out

    def _bench_callables(self, state: LkState):
        cfg = self._cfg
        icfg = np.array([cfg.delta_t_us, cfg.window], dtype=np.int64)
        fcfg = np.array([cfg.cond_ratio], dtype=np.float64)
        side = cfg.window + 2
        imA = np.empty((side, side), dtype=np.float64)
        imB = np.empty((side, side), dtype=np.float64)
        hist = state.history.t
        pos = state.history.pos

        def pre(pi, x, y, t):
            K._history_add(hist, pos, pi, x, y, t)

        def est(pi, x, y, t):
            K._lk_single(hist, pos, pi, x, y, t, icfg, fcfg, imA, imB)

        return pre, est, None

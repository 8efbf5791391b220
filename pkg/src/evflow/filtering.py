"""Event conditioning: refractory suppression and the adaptive activity gate.

Positive and negative events keep separate activity state; only the
refractory check looks across polarities. Two grids are maintained per
polarity: a candidate surface written by every incoming event (the activity
check needs raw arrivals to accumulate support) and an accepted surface
written only by events that pass, which feeds the refractory windows and is
the state estimators should see.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._base import EventTransformerBase, columns
from .errors import ConfigError, DataError
from .events import EMPTY, ActiveSurface, Event, SensorGeometry, validate_events

FR_ACCEPT = K.FR_ACCEPT
FR_REFRACTORY = K.FR_REFRACTORY
FR_ACTIVITY = K.FR_ACTIVITY


@dataclass(frozen=True)
class RefractoryConfig:
    """Dead times after an accepted event at the same pixel, in microseconds."""

    t_same_us: int = 20_000
    t_opp_us: int = 1_000

    def __post_init__(self):
        if self.t_same_us <= 0 or self.t_opp_us <= 0:
            raise ConfigError("refractory windows must be positive")


@dataclass(frozen=True)
class AdaptiveConfig:
    """Adaptive activity filter constants.

    alpha = k / ln(f_e) is clamped to [alpha_min, alpha_max] and mapped
    linearly onto [t_min_us, t_max_us]. The alpha bounds default to the values
    of k / ln(f) at f = 1e7 Hz and f = 1e2 Hz respectively, so out of the box
    the support time spans the full range over event rates of 100 Hz..10 MHz.
    """

    k: float = 1.0
    alpha_min: float | None = None
    alpha_max: float | None = None
    t_min_us: float = 1_000.0
    t_max_us: float = 20_000.0
    min_support: int = 3
    rate_window_us: int = 10_000

    def __post_init__(self):
        if self.t_min_us >= self.t_max_us:
            raise ConfigError("t_min_us must be below t_max_us")
        if self.min_support < 1:
            raise ConfigError("min_support must be >= 1")
        if self.rate_window_us <= 0:
            raise ConfigError("rate_window_us must be positive")
        a_min, a_max = self.alpha_bounds()
        if a_min >= a_max:
            raise ConfigError("alpha_min must be below alpha_max")

    def alpha_bounds(self):
        a_min = self.k / math.log(1e7) if self.alpha_min is None else self.alpha_min
        a_max = self.k / math.log(1e2) if self.alpha_max is None else self.alpha_max
        return a_min, a_max


def adaptive_support_time(event_rate_hz, cfg: AdaptiveConfig = AdaptiveConfig()):
    """Support time T_f in microseconds for a given global event rate.

    Monotone non-increasing in the rate; rates at or below 1 Hz clamp to the
    maximal support time.
    """
    a_min, a_max = cfg.alpha_bounds()
    return float(
        K._support_time(float(event_rate_hz), cfg.k, a_min, a_max, cfg.t_min_us, cfg.t_max_us)
    )


def refractory_pass(event: Event, surface: ActiveSurface, cfg: RefractoryConfig = RefractoryConfig()):
    """True unless an accepted event of the same polarity sits at this pixel
    within t_same_us, or one of opposite polarity within t_opp_us."""
    t_same = surface.last(event.x, event.y, event.p)
    if t_same is not None and event.t - t_same < cfg.t_same_us:
        return False
    t_opp = surface.last(event.x, event.y, -event.p)
    if t_opp is not None and event.t - t_opp < cfg.t_opp_us:
        return False
    return True


def activity_pass(event: Event, surface: ActiveSurface, t_f_us, cfg: AdaptiveConfig = AdaptiveConfig()):
    """True iff at least min_support of the same-polarity 8-neighborhood
    cells hold timestamps within t_f_us of the event."""
    support = K._activity_support(
        surface.grid[event.polarity_index], event.x, event.y, event.t, float(t_f_us)
    )
    return bool(support >= cfg.min_support)


class FilterState:
    """Mutable per-stream filter state (single writer, stream order)."""

    def __init__(self, geometry: SensorGeometry):
        shape = (2, geometry.height, geometry.width)
        self.candidate = np.full(shape, EMPTY, dtype=np.int64)
        self.accepted = np.full(shape, EMPTY, dtype=np.int64)
        self.tail = np.empty(0, dtype=np.int64)
        self.last_t = -1

    def candidate_surface(self, geometry):
        s = ActiveSurface(geometry)
        s.grid = self.candidate
        return s

    def accepted_surface(self, geometry):
        s = ActiveSurface(geometry)
        s.grid = self.accepted
        return s


class EventStreamFilter(EventTransformerBase):
    """Refractory + adaptive activity filter, sklearn style.

    transform(events) returns the accepted subset; the boolean accept mask,
    rejection reasons, and per-event support times for the last processed
    stream are kept on mask_, reasons_, and support_time_us_.
    """

    def __init__(self, width=480, height=360, t_same_us=20_000, t_opp_us=1_000,
                 k=1.0, alpha_min=None, alpha_max=None, t_min_us=1_000.0,
                 t_max_us=20_000.0, min_support=3, rate_window_us=10_000):
        self.width = width
        self.height = height
        self.t_same_us = t_same_us
        self.t_opp_us = t_opp_us
        self.k = k
        self.alpha_min = alpha_min
        self.alpha_max = alpha_max
        self.t_min_us = t_min_us
        self.t_max_us = t_max_us
        self.min_support = min_support
        self.rate_window_us = rate_window_us

    def _resolve(self):
        self._refractory = RefractoryConfig(self.t_same_us, self.t_opp_us)
        self._adaptive = AdaptiveConfig(
            self.k, self.alpha_min, self.alpha_max, self.t_min_us, self.t_max_us,
            self.min_support, self.rate_window_us
        )

    def stream_state(self):
        return FilterState(self._geometry())

    def filter_chunk(self, events, state: FilterState):
        """Advance the filter over one chunk; returns (reasons, support_us)."""
        t, x, y, pidx = columns(events)
        if len(t) and t[0] < state.last_t:
            raise DataError("chunk starts before the previously processed timestamp")
        reasons = np.empty(len(t), dtype=np.uint8)
        tf = np.empty(len(t), dtype=np.float64)
        if len(t):
            tcat = np.concatenate([state.tail, t])
            a_min, a_max = self._adaptive.alpha_bounds()
            K._filter_chunk(
                t, x, y, pidx, tcat, len(state.tail), state.candidate,
                state.accepted, self._refractory.t_same_us, self._refractory.t_opp_us,
                self._adaptive.k, a_min, a_max, self._adaptive.t_min_us,
                self._adaptive.t_max_us, self._adaptive.min_support,
                self._adaptive.rate_window_us, reasons, tf
            )
            state.tail = tcat[tcat >= t[-1] - self._adaptive.rate_window_us]
            state.last_t = int(t[-1])
        return reasons, tf

    def stream_chunk(self, events, state):
        reasons, tf = self.filter_chunk(events, state)
        self.mask_ = reasons == FR_ACCEPT
        self.reasons_ = reasons
        self.support_time_us_ = tf
        return events[self.mask_]


def filter_stream(events, geometry: SensorGeometry = SensorGeometry(),
                  refractory: RefractoryConfig = RefractoryConfig(),
                  adaptive: AdaptiveConfig = AdaptiveConfig()):
    """Partition a sorted stream into (accepted, rejected), order-preserving."""
    validate_events(events, geometry)
    f = EventStreamFilter(
        geometry.width, geometry.height, refractory.t_same_us, refractory.t_opp_us,
        adaptive.k, adaptive.alpha_min, adaptive.alpha_max, adaptive.t_min_us,
        adaptive.t_max_us, adaptive.min_support, adaptive.rate_window_us
    )
    accepted = f.fit().transform(X=events)
    return accepted, events[~f.mask_]

"""Post-estimation regularizers: time-weighted fusion and multi-level averaging.

The weighted scheme fuses a fresh estimate with recent valid flow stored in
the active optical flow buffer, weighting neighbors inversely to their
timestamp difference (inverse-exponential and inverse-logarithmic variants
exist for comparison but decay too sharply / too flatly to be the default).
The leveled scheme reruns the plane-normal estimate over several window
sizes and averages the valid results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import ConfigError
from .events import ActiveFlowBuffer, ActiveSurface, Event, FlowEvent

WEIGHT_FUNCTIONS = {
    "inverse": K.WF_INVERSE,
    "inverse_exponential": K.WF_INV_EXP,
    "inverse_logarithmic": K.WF_INV_LOG,
}


@dataclass(frozen=True)
class WeightedConfig:
    """Fusion window and weight shape.

    m is the (odd) fusion window, smaller than the estimation window;
    min_dt_us floors timestamp differences so ties cannot divide by zero,
    and it is the difference the raw estimate itself participates with.
    """

    m: int = 5
    min_dt_us: float = 1.0
    max_age_us: int = 30_000
    weight: str = "inverse"
    tau_ms: float = 1.0
    estimation_n: int | None = None

    def __post_init__(self):
        if self.m < 3 or self.m % 2 == 0:
            raise ConfigError(f"fusion window must be odd and >= 3, got {self.m}")
        if self.estimation_n is not None and self.m > self.estimation_n - 2:
            raise ConfigError(
                f"fusion window {self.m} must be at most estimation window - 2 "
                f"({self.estimation_n - 2})"
            )
        if self.min_dt_us <= 0:
            raise ConfigError("min_dt_us must be positive")
        if self.weight not in WEIGHT_FUNCTIONS:
            raise ConfigError(f"unknown weight function '{self.weight}'")
        if self.tau_ms <= 0:
            raise ConfigError("tau_ms must be positive")

    def function_code(self):
        return WEIGHT_FUNCTIONS[self.weight]


@dataclass(frozen=True)
class LeveledConfig:
    """Window sizes for multi-level averaging, odd and strictly decreasing."""

    levels: tuple = (7, 5, 3)

    def __post_init__(self):
        if not self.levels:
            raise ConfigError("at least one level is required")
        for n in self.levels:
            if n < 3 or n % 2 == 0:
                raise ConfigError(f"level window sizes must be odd and >= 3, got {n}")
        if any(a <= b for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError("level window sizes must be strictly decreasing")


def weight_values(dt_us, cfg: WeightedConfig = WeightedConfig()):
    """Un-normalized weights for timestamp differences in microseconds."""
    dt = np.atleast_1d(np.asarray(dt_us, dtype=np.float64))
    code = cfg.function_code()
    out = np.array([K._weight(v, cfg.min_dt_us, code, cfg.tau_ms) for v in dt])
    return out


def weighted_regularize(raw: FlowEvent, buffer: ActiveFlowBuffer,
                        cfg: WeightedConfig = WeightedConfig()):
    """Fuse a raw valid estimate with buffered neighborhood flow.

    Weights are normalized to sum to one, so the output is a convex
    combination of the raw flow and the buffered flows; the buffer is then
    updated with the fused flow at the event's pixel. Invalid estimates pass
    through unchanged and leave the buffer untouched.
    """
    if not raw.valid:
        return raw
    e = raw.event
    pi = e.polarity_index
    fvx, fvy = K._fuse_flow(
        buffer.vx[pi], buffer.vy[pi], buffer.t[pi], e.x, e.y, e.t,
        raw.vx, raw.vy, cfg.m // 2, cfg.min_dt_us, cfg.function_code(),
        cfg.tau_ms, float(cfg.max_age_us)
    )
    speed = math.hypot(fvx, fvy)
    if speed <= 1e-12:
        return FlowEvent(e, 0.0, 0.0, float("nan"), False, K.ST_UNDEFINED_FLOW)
    buffer.update(e.x, e.y, e.p, fvx, fvy, e.t)
    return FlowEvent(e, float(fvx), float(fvy), 1.0 / speed, True, K.ST_OK)


def leveled_regularize(event: Event, surface: ActiveSurface,
                       cfg: LeveledConfig = LeveledConfig(), pca_cfg=None):
    """Mean of the valid per-level estimates; invalid when no level passes.

    With a single level this reduces exactly to plain estimation.
    """
    from .pca import PcaConfig

    if pca_cfg is None:
        pca_cfg = PcaConfig()
    nmax = max(cfg.levels) ** 2
    fx = np.empty(nmax, dtype=np.float64)
    fy = np.empty(nmax, dtype=np.float64)
    ft = np.empty(nmax, dtype=np.float64)
    icfg = np.array([pca_cfg.n, pca_cfg.min_neighbors,
                     1 if pca_cfg.denom_window() else 0], dtype=np.int64)
    fcfg = np.array([pca_cfg.planarity_eps, pca_cfg.delta_us_or_auto(),
                     pca_cfg.outlier_ratio_eps, float(pca_cfg.max_age_us)],
                    dtype=np.float64)
    levels = np.asarray(cfg.levels, dtype=np.int64)
    st, vx, vy, lt, _, nvalid = K._leveled_single(
        surface.grid, event.polarity_index, event.x, event.y,
        event.t, levels, icfg, fcfg, fx, fy, ft
    )
    if st == K.ST_OK:
        return FlowEvent(event, float(vx), float(vy), float(lt), True, st)
    return FlowEvent(event, 0.0, 0.0, float("nan"), False, st)

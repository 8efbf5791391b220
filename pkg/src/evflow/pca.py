"""Per-event optical flow from the local spatio-temporal plane normal.

The neighborhood of an accepted event traces a plane on the active events
surface; the unit eigenvector of the smallest covariance eigenvalue is that
plane's normal (a, b, c). Flow is -c/(a^2+b^2) * (a, b) in px/ms and the
event lifetime is the reciprocal of the flow magnitude.

Fits run in (px, px, ms) with time relative to the event under test, which
itself is part of the fitted set; the plane offset d is anchored at the
event so consensus residuals are trigger-time errors at the fitted pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._base import EventTransformerBase, columns, empty_flow_records
from .errors import ConfigError, DataError, NumericError
from .events import EMPTY, ActiveSurface, Event, FlowEvent, SensorGeometry
from .regularize import LeveledConfig, WeightedConfig

ST_OK = K.ST_OK
ST_TOO_FEW_NEIGHBORS = K.ST_TOO_FEW_NEIGHBORS
ST_NON_PLANAR = K.ST_NON_PLANAR
ST_DEGENERATE = K.ST_DEGENERATE
ST_VERTICAL_PLANE = K.ST_VERTICAL_PLANE
ST_CONSENSUS_REJECT = K.ST_CONSENSUS_REJECT
ST_UNDEFINED_FLOW = K.ST_UNDEFINED_FLOW
ST_ILL_CONDITIONED = K.ST_ILL_CONDITIONED
ST_NO_DATA = K.ST_NO_DATA

STATUS_LABELS = {
    ST_OK: "ok",
    ST_TOO_FEW_NEIGHBORS: "too_few_neighbors",
    ST_NON_PLANAR: "non_planar",
    ST_DEGENERATE: "degenerate",
    ST_VERTICAL_PLANE: "vertical_plane",
    ST_CONSENSUS_REJECT: "consensus_reject",
    ST_UNDEFINED_FLOW: "undefined_flow",
    ST_ILL_CONDITIONED: "ill_conditioned",
    ST_NO_DATA: "no_data",
}


@dataclass(frozen=True)
class PcaConfig:
    """Estimation window and gate thresholds.

    consensus_delta_us=None picks the threshold per neighborhood: a quarter
    of the fitted set's temporal extent, floored at 100 us. The consensus
    denominator counts the full window (n^2) by default; "support" switches
    it to the number of fitted points.
    """

    n: int = 7
    min_neighbors: int = 4
    planarity_eps: float = 0.05
    consensus_delta_us: float | None = None
    outlier_ratio_eps: float = 0.5
    consensus_denominator: str = "window"
    max_age_us: int = 30_000

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ConfigError(f"window size must be odd and >= 3, got {self.n}")
        if not 0.0 < self.outlier_ratio_eps < 1.0:
            raise ConfigError("outlier_ratio_eps must be in (0, 1)")
        if self.consensus_delta_us is not None and self.consensus_delta_us <= 0:
            raise ConfigError("consensus_delta_us must be positive")
        if self.consensus_denominator not in ("window", "support"):
            raise ConfigError("consensus_denominator must be 'window' or 'support'")
        if self.min_neighbors < 2:
            raise ConfigError("min_neighbors must be >= 2")
        if self.max_age_us <= 0:
            raise ConfigError("max_age_us must be positive")

    def delta_us_or_auto(self):
        return -1.0 if self.consensus_delta_us is None else float(self.consensus_delta_us)

    def denom_window(self):
        return self.consensus_denominator == "window"


@dataclass
class PlaneFit:
    """Eigen-decomposition of a neighborhood plus the anchored plane."""

    mean: np.ndarray
    eigenvalues: np.ndarray  # descending, lambda3 clamped at 0
    normal: np.ndarray  # unit, time component >= 0
    plane: tuple  # (a, b, c, d), anchored at the event under test
    inliers: int = 0
    support: int = 0
    degenerate: bool = False


def covariance(points):
    """Mean and summed-outer-product covariance of (x, y, t_ms) points.

    The matrix is not normalized by the count; eigenvectors are unaffected.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"points must be (m, 3), got {pts.shape}")
    if pts.shape[0] < 3:
        raise DataError(f"plane fitting needs at least 3 points, got {pts.shape[0]}")
    mean = pts.mean(axis=0)
    centered = pts - mean
    return mean, centered.T @ centered


def smallest_eigenvector(sigma):
    """Eigenvalues (descending) and the unit eigenvector of the smallest one.

    The vector is oriented so its time component is >= 0. The degeneracy flag
    is set when the two smallest eigenvalues coincide and the direction is
    therefore arbitrary within a plane.
    """
    s = np.asarray(sigma, dtype=np.float64)
    if s.shape != (3, 3):
        raise DataError(f"expected a 3x3 matrix, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NumericError("covariance matrix has non-finite entries")
    l1, l2, l3, vx, vy, vt, degen = K.eig3_smallest(
        s[0, 0], s[0, 1], s[0, 2], s[1, 1], s[1, 2], s[2, 2]
    )
    return np.array([l1, l2, l3]), np.array([vx, vy, vt]), bool(degen)


def fit_plane(points, anchor):
    """PlaneFit for a point set, with d chosen so the plane passes through
    anchor = (x0, y0, t0_ms)."""
    mean, sigma = covariance(points)
    eigvals, normal, degen = smallest_eigenvector(sigma)
    a, b, c = normal
    d = -(a * anchor[0] + b * anchor[1] + c * anchor[2])
    return PlaneFit(
        mean=mean,
        eigenvalues=eigvals,
        normal=normal,
        plane=(float(a), float(b), float(c), float(d)),
        support=len(points),
        degenerate=degen,
    )


def plane_time_residuals(fit: PlaneFit, points):
    """|t_est - t| per point, in ms, where t_est = -(a*x + b*y + d)/c."""
    a, b, c, d = fit.plane
    if abs(c) <= 1e-12:
        raise NumericError("plane contains the time axis; trigger times undefined")
    pts = np.asarray(points, dtype=np.float64)
    t_est = -(a * pts[:, 0] + b * pts[:, 1] + d) / c
    return np.abs(t_est - pts[:, 2])


def consensus_check(fit: PlaneFit, points, delta_us, eps, n, denominator="window"):
    """Count inliers |t_est - t| <= delta and test the consensus inequality.

    Returns (inlier_count, accepted) with accepted iff
    inliers > (1 - eps) * base / 2, base = n^2 for the "window" reading or
    the number of points for "support".
    """
    res = plane_time_residuals(fit, points)
    inliers = int(np.count_nonzero(res <= delta_us * 1e-3))
    base = n * n if denominator == "window" else len(res)
    accepted = inliers > (1.0 - eps) * base / 2.0
    fit.inliers = inliers
    return inliers, bool(accepted)


def flow_from_normal(normal):
    """Flow (vx, vy) in px/ms from a unit plane normal with time in ms."""
    a, b, c = np.asarray(normal, dtype=np.float64)
    s2 = a * a + b * b
    if s2 <= 1e-12:
        raise NumericError("plane normal has no spatial component; flow undefined")
    g = -c / s2
    return float(g * a), float(g * b)


def lifetime_from_normal(normal):
    """Event lifetime in ms: the time the edge needs to cross one pixel.

    Equals the reciprocal of the flow magnitude.
    """
    a, b, c = np.asarray(normal, dtype=np.float64)
    if abs(c) <= 1e-12:
        raise NumericError("plane normal has no time component; lifetime undefined")
    return float(np.sqrt(a * a + b * b) / abs(c))


def estimate_event(event: Event, surface: ActiveSurface, cfg: PcaConfig = PcaConfig()):
    """Run the full per-event pipeline against the surface snapshot.

    Any gate failure (too few neighbors, non-planar, degenerate, vertical
    plane, consensus, undefined flow) yields valid=False with zero flow.
    The surface is not modified.
    """
    g = surface.geometry
    if not g.contains(event.x, event.y):
        raise DataError(f"event pixel ({event.x},{event.y}) outside {g.width}x{g.height}")
    nmax = cfg.n * cfg.n
    fx = np.empty(nmax, dtype=np.float64)
    fy = np.empty(nmax, dtype=np.float64)
    ft = np.empty(nmax, dtype=np.float64)
    st, vx, vy, lt, inliers, support = K._pca_estimate(
        surface.grid[event.polarity_index], event.x, event.y, event.t,
        cfg.n, cfg.min_neighbors, cfg.planarity_eps, cfg.delta_us_or_auto(),
        cfg.outlier_ratio_eps, cfg.denom_window(), cfg.max_age_us, fx, fy, ft
    )
    if st == ST_OK:
        return FlowEvent(event, float(vx), float(vy), float(lt), True, st)
    return FlowEvent(event, 0.0, 0.0, float("nan"), False, st)


class FlowState:
    """Per-stream estimator state: the accepted-events surface plus, for the
    weighted regularizer, the active optical flow buffer."""

    def __init__(self, geometry: SensorGeometry, weighted=False):
        shape = (2, geometry.height, geometry.width)
        self.surfaces = np.full(shape, EMPTY, dtype=np.int64)
        if weighted:
            self.buf_vx = np.zeros(shape, dtype=np.float64)
            self.buf_vy = np.zeros(shape, dtype=np.float64)
            self.buf_t = np.full(shape, EMPTY, dtype=np.int64)


class PcaFlow(EventTransformerBase):
    """Plane-normal flow estimator over a stream of accepted events.

    transform(events) returns one flow record per input event. Estimation is
    read-only on the surface; each event is written to it afterwards, so the
    input is expected to be the filtered (accepted) stream. regularizer is
    one of "none", "weighted" (time-weighted fusion with the active flow
    buffer), or "leveled" (mean over the level window sizes).
    """

    def __init__(self, width=480, height=360, n=7, min_neighbors=4,
                 planarity_eps=0.05, consensus_delta_us=None,
                 outlier_ratio_eps=0.5, consensus_denominator="window",
                 max_age_us=30_000, regularizer="none", weight_window=5,
                 weight_min_dt_us=1.0, weight_function="inverse",
                 weight_tau_ms=1.0, weight_max_age_us=30_000, levels=(7, 5, 3)):
        self.width = width
        self.height = height
        self.n = n
        self.min_neighbors = min_neighbors
        self.planarity_eps = planarity_eps
        self.consensus_delta_us = consensus_delta_us
        self.outlier_ratio_eps = outlier_ratio_eps
        self.consensus_denominator = consensus_denominator
        self.max_age_us = max_age_us
        self.regularizer = regularizer
        self.weight_window = weight_window
        self.weight_min_dt_us = weight_min_dt_us
        self.weight_function = weight_function
        self.weight_tau_ms = weight_tau_ms
        self.weight_max_age_us = weight_max_age_us
        self.levels = levels

    def _resolve(self):
        if self.regularizer not in ("none", "weighted", "leveled"):
            raise ConfigError(f"unknown regularizer '{self.regularizer}'")
        self._pca = PcaConfig(
            self.n, self.min_neighbors, self.planarity_eps, self.consensus_delta_us,
            self.outlier_ratio_eps, self.consensus_denominator, self.max_age_us
        )
        self._weighted = WeightedConfig(
            self.weight_window, self.weight_min_dt_us, self.weight_max_age_us,
            self.weight_function, self.weight_tau_ms, estimation_n=self.n
        ) if self.regularizer == "weighted" else None
        self._leveled = LeveledConfig(tuple(self.levels)) if self.regularizer == "leveled" else None

    def _icfg_fcfg(self):
        icfg = np.array([self._pca.n, self._pca.min_neighbors,
                         1 if self._pca.denom_window() else 0], dtype=np.int64)
        fcfg = np.array([self._pca.planarity_eps, self._pca.delta_us_or_auto(),
                         self._pca.outlier_ratio_eps, float(self._pca.max_age_us)],
                        dtype=np.float64)
        return icfg, fcfg

    def stream_state(self):
        return FlowState(self._geometry(), weighted=self.regularizer == "weighted")

    def stream_chunk(self, events, state: FlowState):
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
        cfg = self._pca
        if self.regularizer == "none":
            K._pca_stream(
                t, x, y, pidx, state.surfaces, cfg.n, cfg.min_neighbors,
                cfg.planarity_eps, cfg.delta_us_or_auto(), cfg.outlier_ratio_eps,
                cfg.denom_window(), cfg.max_age_us, vx, vy, lt, valid, status, inliers
            )
        elif self.regularizer == "weighted":
            icfg, fcfg = self._icfg_fcfg()
            w = self._weighted
            wicfg = np.array([w.m, w.function_code()], dtype=np.int64)
            wfcfg = np.array([w.min_dt_us, w.tau_ms, float(w.max_age_us)], dtype=np.float64)
            K._weighted_stream(
                t, x, y, pidx, state.surfaces, state.buf_vx, state.buf_vy,
                state.buf_t, icfg, fcfg, wicfg, wfcfg, vx, vy, lt, valid,
                status, inliers
            )
        else:
            icfg, fcfg = self._icfg_fcfg()
            levels = np.asarray(self._leveled.levels, dtype=np.int64)
            K._leveled_stream(
                t, x, y, pidx, state.surfaces, levels, icfg, fcfg,
                vx, vy, lt, valid, status, inliers
            )
        out["vx"] = vx
        out["vy"] = vy
        out["lifetime_ms"] = lt
        out["valid"] = valid
        out["status"] = status
        return out

    def _bench_callables(self, state: FlowState):
        """(pre, estimate, post) per-event hooks for the timing harness."""
        icfg, fcfg = self._icfg_fcfg()
        surf = state.surfaces
        if self.regularizer == "leveled":
            levels = np.asarray(self._leveled.levels, dtype=np.int64)
            nmax = int(levels.max()) ** 2
        else:
            nmax = self._pca.n * self._pca.n
        fx = np.empty(nmax, dtype=np.float64)
        fy = np.empty(nmax, dtype=np.float64)
        ft = np.empty(nmax, dtype=np.float64)
        if self.regularizer == "none":
            def est(pi, x, y, t):
                K._pca_single(surf, pi, x, y, t, icfg, fcfg, fx, fy, ft)
        elif self.regularizer == "weighted":
            w = self._weighted
            wicfg = np.array([w.m, w.function_code()], dtype=np.int64)
            wfcfg = np.array([w.min_dt_us, w.tau_ms, float(w.max_age_us)], dtype=np.float64)
            bvx, bvy, bt = state.buf_vx, state.buf_vy, state.buf_t

            def est(pi, x, y, t):
                K._weighted_single(surf, bvx, bvy, bt, pi, x, y, t, icfg, fcfg,
                                   wicfg, wfcfg, fx, fy, ft)
        else:
            def est(pi, x, y, t):
                K._leveled_single(surf, pi, x, y, t, levels, icfg, fcfg, fx, fy, ft)

        def post(pi, x, y, t):
            K._surface_write(surf, pi, x, y, t)

        return None, est, post

"""Flow-error metrics, lifetime histograms, and the per-event timing harness."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._base import columns
from .errors import ConfigError, DataError


@dataclass
class EndpointError:
    """Euclidean flow error, absolute (px/ms) and relative to ground truth."""

    abs_mean: float
    abs_std: float
    rel_mean: float
    rel_std: float
    count: int


@dataclass
class AngularError:
    """Mean angle between estimated and true flow, in degrees."""

    deg_mean: float
    deg_std: float
    count: int
    skipped_zero: int


@dataclass
class FlowErrorStats:
    aepe_abs_mean: float
    aepe_abs_std: float
    aepe_rel_mean: float
    aepe_rel_std: float
    aae_deg_mean: float
    aae_deg_std: float
    count: int
    skipped_zero: int

    def as_dict(self):
        return {
            "aepe_abs_px_ms": {"mean": self.aepe_abs_mean, "std": self.aepe_abs_std},
            "aepe_rel": {"mean": self.aepe_rel_mean, "std": self.aepe_rel_std},
            "aae_deg": {"mean": self.aae_deg_mean, "std": self.aae_deg_std},
            "count": self.count,
            "skipped_zero": self.skipped_zero,
        }


@dataclass
class LifetimeHistogram:
    """Fixed-width histogram of estimated lifetimes, binned from zero.

    fractions are relative to the number of valid estimates; modes are local
    maxima by count, largest first, as (bin_center_ms, fraction) pairs.
    """

    bin_width_ms: float
    centers: np.ndarray
    counts: np.ndarray
    fractions: np.ndarray
    modes: list
    total: int

    @property
    def bins(self):
        """Populated bins as {center_ms: (count, fraction)}."""
        nz = np.flatnonzero(self.counts)
        return {float(self.centers[i]): (int(self.counts[i]), float(self.fractions[i]))
                for i in nz}

    @property
    def max_bin(self):
        if self.total == 0:
            return (float("nan"), 0.0)
        i = int(np.argmax(self.counts))
        return (float(self.centers[i]), float(self.fractions[i]))

    def top_modes(self, k):
        return self.modes[:k]

    def as_dict(self):
        return {
            "bin_width_ms": self.bin_width_ms,
            "total": self.total,
            "max_bin_center_ms": self.max_bin[0],
            "max_bin_fraction": self.max_bin[1],
            "modes": [[c, f] for c, f in self.modes],
        }


@dataclass
class TimingStats:
    per_event_us_mean: float
    per_event_us_std: float
    events_measured: int
    warmup_events: int
    mode: str = "per_event"

    def as_dict(self):
        return {
            "per_event_us": {"mean": self.per_event_us_mean, "std": self.per_event_us_std},
            "events_measured": self.events_measured,
            "warmup_events": self.warmup_events,
            "mode": self.mode,
        }


def _pair_arrays(u, u_hat):
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    u_hat = np.atleast_2d(np.asarray(u_hat, dtype=np.float64))
    if u.shape != u_hat.shape or u.ndim != 2 or u.shape[1] != 2:
        raise DataError(f"estimate/truth shapes must match as (n, 2), got {u.shape} vs {u_hat.shape}")
    if u.shape[0] == 0:
        raise DataError("no matched flow pairs to evaluate")
    return u, u_hat


def compute_aepe(u, u_hat):
    """Average endpoint error of matched flow pairs.

    abs is the mean Euclidean difference in px/ms; rel divides each pair's
    difference by its ground-truth magnitude (zero-magnitude truths are
    excluded from the relative figure).
    """
    u, u_hat = _pair_arrays(u, u_hat)
    d = np.linalg.norm(u - u_hat, axis=1)
    gt_mag = np.linalg.norm(u_hat, axis=1)
    nz = gt_mag > 0
    rel = d[nz] / gt_mag[nz]
    if rel.size == 0:
        raise DataError("all ground-truth magnitudes are zero; relative error undefined")
    return EndpointError(
        abs_mean=float(d.mean()),
        abs_std=float(d.std()),
        rel_mean=float(rel.mean()),
        rel_std=float(rel.std()),
        count=int(d.size),
    )


def compute_aae(u, u_hat):
    """Average angular error in degrees over pairs where both vectors are
    nonzero; zero-magnitude pairs are skipped and counted."""
    u, u_hat = _pair_arrays(u, u_hat)
    nu = np.linalg.norm(u, axis=1)
    nh = np.linalg.norm(u_hat, axis=1)
    ok = (nu > 0) & (nh > 0)
    skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        raise DataError("no nonzero flow pairs for angular error")
    cosang = np.sum(u[ok] * u_hat[ok], axis=1) / (nu[ok] * nh[ok])
    ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return AngularError(
        deg_mean=float(ang.mean()),
        deg_std=float(ang.std()),
        count=int(ang.size),
        skipped_zero=skipped,
    )


def match_flow_to_truth(flow, truth):
    """Validate the 1:1 row alignment of flow records and ground truth.

    Both arrays must agree on (t, x, y, p) row by row; the first mismatched
    key is reported. Returns the boolean mask of evaluable pairs: valid
    estimates of non-noise events.
    """
    if len(flow) != len(truth):
        raise DataError(f"flow has {len(flow)} rows but ground truth has {len(truth)}")
    if len(flow) == 0:
        raise DataError("no rows to evaluate")
    for name in ("t", "x", "y", "p"):
        bad = np.flatnonzero(flow[name] != truth[name])
        if bad.size:
            i = bad[0]
            key = (int(flow["t"][i]), int(flow["x"][i]), int(flow["y"][i]), int(flow["p"][i]))
            raise DataError(f"row {i}: flow key {key} does not match ground truth")
    return flow["valid"] & ~truth["is_noise"]


def flow_error_stats(flow, truth):
    """Endpoint and angular errors of valid estimates against ground truth."""
    mask = match_flow_to_truth(flow, truth)
    if not mask.any():
        raise DataError("no valid non-noise pairs to evaluate")
    u = np.stack([flow["vx"][mask], flow["vy"][mask]], axis=1)
    u_hat = np.stack([truth["gt_vx"][mask], truth["gt_vy"][mask]], axis=1)
    epe = compute_aepe(u, u_hat)
    aae = compute_aae(u, u_hat)
    return FlowErrorStats(
        aepe_abs_mean=epe.abs_mean,
        aepe_abs_std=epe.abs_std,
        aepe_rel_mean=epe.rel_mean,
        aepe_rel_std=epe.rel_std,
        aae_deg_mean=aae.deg_mean,
        aae_deg_std=aae.deg_std,
        count=epe.count,
        skipped_zero=aae.skipped_zero,
    )


def lifetime_histogram(lifetimes_ms, bin_width_ms=0.1):
    """Histogram of valid lifetimes with fixed-width bins starting at zero."""
    if bin_width_ms <= 0:
        raise ConfigError("bin width must be positive")
    lt = np.asarray(lifetimes_ms, dtype=np.float64)
    lt = lt[np.isfinite(lt)]
    total = int(lt.size)
    if total == 0:
        return LifetimeHistogram(bin_width_ms, np.empty(0), np.empty(0, dtype=np.int64),
                                 np.empty(0), [], 0)
    idx = np.floor(lt / bin_width_ms).astype(np.int64)
    counts = np.bincount(idx)
    centers = (np.arange(len(counts)) + 0.5) * bin_width_ms
    fractions = counts / total
    padded = np.concatenate([[0], counts, [0]])
    is_peak = (padded[1:-1] > padded[:-2]) & (padded[1:-1] >= padded[2:]) & (padded[1:-1] > 0)
    peaks = np.flatnonzero(is_peak)
    order = peaks[np.argsort(-counts[peaks], kind="stable")]
    modes = [(float(centers[i]), float(fractions[i])) for i in order]
    return LifetimeHistogram(bin_width_ms, centers, counts, fractions, modes, total)


def benchmark(estimator, events, warmup=1000, mode="per_event"):
    """Wall-clock cost of the per-event estimation call, after warm-up.

    The stream is expected to be pre-filtered: filtering cost is excluded by
    construction, state bookkeeping (surface/history writes) happens outside
    the timed section, and both valid and invalid estimates are timed. In
    "per_event" mode every estimation call is timed individually (the figure
    includes the per-call dispatch overhead a deployment would also pay);
    "chunked" amortizes dispatch by timing blocks of calls and reports the
    spread over per-block means.
    """
    if warmup < 0 or warmup >= len(events):
        raise ConfigError(f"warmup {warmup} must be in [0, {len(events)})")
    estimator._resolve()
    state = estimator.stream_state()
    if mode == "per_event":
        pre, est, post = estimator._bench_callables(state)
        t, x, y, pidx = columns(events)
        n = len(t)
        times = np.empty(n - warmup, dtype=np.float64)
        pcn = time.perf_counter_ns
        for i in range(n):
            pi = pidx[i]
            xi = x[i]
            yi = y[i]
            ti = t[i]
            if pre is not None:
                pre(pi, xi, yi, ti)
            if i >= warmup:
                t0 = pcn()
                est(pi, xi, yi, ti)
                t1 = pcn()
                times[i - warmup] = t1 - t0
            else:
                est(pi, xi, yi, ti)
            if post is not None:
                post(pi, xi, yi, ti)
        us = times * 1e-3
        return TimingStats(float(us.mean()), float(us.std()), len(us), warmup, mode)
    if mode == "chunked":
        chunk = 256
        estimator.stream_chunk(events[:warmup], state)
        spans = []
        weights = []
        pcn = time.perf_counter_ns
        for lo in range(warmup, len(events), chunk):
            part = events[lo:lo + chunk]
            t0 = pcn()
            estimator.stream_chunk(part, state)
            t1 = pcn()
            spans.append((t1 - t0) / len(part))
            weights.append(len(part))
        spans = np.asarray(spans) * 1e-3
        weights = np.asarray(weights, dtype=np.float64)
        mean = float(np.average(spans, weights=weights))
        std = float(np.sqrt(np.average((spans - mean) ** 2, weights=weights)))
        return TimingStats(mean, std, int(weights.sum()), warmup, mode)
    raise ConfigError(f"unknown benchmark mode '{mode}'")

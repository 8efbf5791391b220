import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import evflow as ev
from evflow.errors import ConfigError, DataError
from evflow.filtering import FR_ACCEPT, FR_ACTIVITY, FR_REFRACTORY

from conftest import surface_from_cells

GEO = ev.SensorGeometry(64, 48)


def test_refractory_same_polarity_suppression():
    s = ev.ActiveSurface(GEO)
    s.update(ev.Event(x=5, y=5, t=0, p=1))
    assert not ev.refractory_pass(ev.Event(x=5, y=5, t=10_000, p=1), s)
    assert ev.refractory_pass(ev.Event(x=5, y=5, t=20_000, p=1), s)


def test_refractory_opposite_polarity_window():
    s = ev.ActiveSurface(GEO)
    s.update(ev.Event(x=5, y=5, t=0, p=-1))
    assert ev.refractory_pass(ev.Event(x=5, y=5, t=1_500, p=1), s)
    assert not ev.refractory_pass(ev.Event(x=5, y=5, t=800, p=1), s)


def test_refractory_first_event_passes():
    s = ev.ActiveSurface(GEO)
    assert ev.refractory_pass(ev.Event(x=5, y=5, t=123, p=1), s)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 63), st.integers(0, 47), st.integers(0, 40_000))
def test_refractory_depends_only_on_own_cell(x, y, t_other):
    s1 = ev.ActiveSurface(GEO)
    s2 = ev.ActiveSurface(GEO)
    for s in (s1, s2):
        s.update(ev.Event(x=10, y=10, t=5_000, p=1))
    if (x, y) != (10, 10):
        s2.update(ev.Event(x=x, y=y, t=t_other, p=1))
    e = ev.Event(x=10, y=10, t=26_000, p=1)
    assert ev.refractory_pass(e, s1) == ev.refractory_pass(e, s2)


def test_adaptive_support_time_endpoints_and_midpoint():
    cfg = ev.AdaptiveConfig()
    a_min, a_max = cfg.alpha_bounds()
    # rates that land alpha exactly on its bounds and in the middle
    f_min_alpha = math.exp(cfg.k / a_min)
    f_max_alpha = math.exp(cfg.k / a_max)
    f_mid = math.exp(cfg.k / ((a_min + a_max) / 2.0))
    assert ev.adaptive_support_time(f_min_alpha, cfg) == pytest.approx(cfg.t_min_us)
    assert ev.adaptive_support_time(f_max_alpha, cfg) == pytest.approx(cfg.t_max_us)
    assert ev.adaptive_support_time(f_mid, cfg) == pytest.approx(
        (cfg.t_min_us + cfg.t_max_us) / 2.0
    )


def test_adaptive_support_time_low_rate_clamps_to_max():
    cfg = ev.AdaptiveConfig()
    assert ev.adaptive_support_time(0.5, cfg) == pytest.approx(cfg.t_max_us)


@settings(max_examples=80, deadline=None)
@given(st.floats(1.5, 1e8), st.floats(1.5, 1e8))
def test_adaptive_support_time_monotone(f1, f2):
    cfg = ev.AdaptiveConfig()
    lo, hi = sorted((f1, f2))
    assert ev.adaptive_support_time(lo, cfg) >= ev.adaptive_support_time(hi, cfg)


def test_activity_pass_thresholds():
    cfg = ev.AdaptiveConfig()
    e = ev.Event(x=10, y=10, t=50_000, p=1)
    empty = ev.ActiveSurface(GEO)
    assert not ev.activity_pass(e, empty, 5_000, cfg)
    # exactly three fresh neighbors: boundary inclusive
    s = surface_from_cells(GEO, [(9, 10, 46_000), (11, 10, 47_000), (10, 9, 45_000)])
    assert ev.activity_pass(e, s, 5_000, cfg)
    s2 = surface_from_cells(GEO, [(9, 10, 46_000), (11, 10, 47_000)])
    assert not ev.activity_pass(e, s2, 5_000, cfg)


def test_activity_pass_ignores_stale_and_other_polarity():
    cfg = ev.AdaptiveConfig()
    e = ev.Event(x=10, y=10, t=50_000, p=1)
    s = surface_from_cells(GEO, [(9, 10, 10_000), (11, 10, 10_000), (10, 9, 10_000)])
    assert not ev.activity_pass(e, s, 5_000, cfg)
    s_opp = surface_from_cells(GEO, [(9, 10, 49_000), (11, 10, 49_000), (10, 9, 49_000)], p=-1)
    assert not ev.activity_pass(e, s_opp, 5_000, cfg)


def test_filter_stream_empty():
    accepted, rejected = ev.filter_stream(np.empty(0, dtype=ev.EVENT_DTYPE), GEO)
    assert len(accepted) == 0 and len(rejected) == 0


def test_filter_stream_unsorted_rejected():
    events = ev.events_from_arrays([100, 50], [1, 2], [1, 2], [1, 1])
    with pytest.raises(DataError):
        ev.filter_stream(events, GEO)


def test_filter_stream_partition_is_order_preserving():
    spec = ev.SceneSpec(geometry=GEO, pattern=ev.TranslatingEdge(2.0, 0.0),
                        duration_us=30_000)
    events = ev.events_view(ev.generate(spec, 0))
    accepted, rejected = ev.filter_stream(events, GEO)
    assert len(accepted) + len(rejected) == len(events)
    assert np.all(np.diff(accepted["t"].astype(np.int64)) >= 0)
    assert np.all(np.diff(rejected["t"].astype(np.int64)) >= 0)


def test_filter_stream_accepts_noiseless_edge():
    # derived from the simulator: only events without an established
    # neighborhood (warm-up) lack support
    spec = ev.SceneSpec(geometry=GEO, pattern=ev.TranslatingEdge(2.0, 0.0),
                        duration_us=30_000)
    events = ev.events_view(ev.generate(spec, 0))
    f = ev.EventStreamFilter(width=GEO.width, height=GEO.height).fit()
    f.transform(events)
    warm = events["t"] > 5_000
    assert f.mask_[warm].mean() >= 0.95


def test_filter_stream_rejects_pure_noise():
    spec = ev.SceneSpec(geometry=ev.SensorGeometry(480, 360),
                        pattern=ev.TranslatingEdge(2.0, 0.0), duration_us=1_000_000,
                        noise_rate_hz=1000.0)
    gt = ev.generate(spec, 5)
    noise = gt[gt["is_noise"]]
    f = ev.EventStreamFilter(width=480, height=360).fit()
    f.transform(ev.events_view(noise))
    assert f.mask_.mean() <= 0.05


def test_filter_determinism():
    spec = ev.SceneSpec(geometry=GEO, pattern=ev.TranslatingEdge(2.0, 0.0),
                        duration_us=30_000, noise_rate_hz=2000.0)
    events = ev.events_view(ev.generate(spec, 1))
    f = ev.EventStreamFilter(width=GEO.width, height=GEO.height).fit()
    f.transform(events)
    m1 = f.mask_.copy()
    f.transform(events)
    assert np.array_equal(m1, f.mask_)


def test_filter_reasons_and_surfaces():
    # a rapid repeat after an accepted same-pixel event is tagged refractory,
    # an isolated event activity; only accepted events reach the accepted grid
    rows = [(1000, 6, 5, 1), (1100, 5, 6, 1), (1200, 6, 6, 1), (1300, 5, 5, 1),
            (2500, 5, 5, 1), (9000, 30, 30, 1)]
    events = ev.events_from_arrays(*(np.array(c) for c in zip(*rows)))
    f = ev.EventStreamFilter(width=GEO.width, height=GEO.height).fit()
    state = f.stream_state()
    reasons, tf = f.filter_chunk(events, state)
    assert reasons[3] == FR_ACCEPT  # three fresh neighbors
    assert reasons[4] == FR_REFRACTORY  # 1.2 ms after an accepted same-pixel event
    assert reasons[5] == FR_ACTIVITY  # isolated
    assert state.candidate[1, 30, 30] == 9000  # every event reaches the candidate grid
    assert state.accepted[1, 30, 30] == ev.events.EMPTY


def test_filter_stream_cross_polarity_refractory():
    # an accepted positive event shields the pixel from negative events for
    # 1 ms but not beyond
    rows = [(1000, 6, 5, 1), (1100, 5, 6, 1), (1200, 6, 6, 1), (1300, 5, 5, 1),
            (1800, 5, 5, -1), (2600, 6, 5, -1)]
    events = ev.events_from_arrays(*(np.array(c) for c in zip(*rows)))
    f = ev.EventStreamFilter(width=GEO.width, height=GEO.height).fit()
    reasons, _ = f.filter_chunk(events, f.stream_state())
    assert reasons[3] == FR_ACCEPT
    assert reasons[4] == FR_REFRACTORY  # 0.5 ms after the accepted + event
    assert reasons[5] != FR_REFRACTORY  # 1.6 ms after: outside the window


def test_filter_chunking_equivalence():
    spec = ev.SceneSpec(geometry=GEO, pattern=ev.TranslatingEdge(2.0, 0.0),
                        duration_us=30_000, noise_rate_hz=5000.0)
    events = ev.events_view(ev.generate(spec, 2))
    f = ev.EventStreamFilter(width=GEO.width, height=GEO.height).fit()
    f.transform(events)
    whole = f.mask_.copy()
    state = f.stream_state()
    parts = []
    for lo in range(0, len(events), 997):
        reasons, _ = f.filter_chunk(events[lo:lo + 997], state)
        parts.append(reasons == FR_ACCEPT)
    assert np.array_equal(whole, np.concatenate(parts))


def test_adaptive_config_validation():
    with pytest.raises(ConfigError):
        ev.AdaptiveConfig(t_min_us=5_000, t_max_us=1_000)
    with pytest.raises(ConfigError):
        ev.AdaptiveConfig(min_support=0)
    with pytest.raises(ConfigError):
        ev.RefractoryConfig(t_same_us=0)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

import evflow as ev
from evflow.errors import DataError, NumericError

from conftest import surface_from_cells

GEO = ev.SensorGeometry(32, 24)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def brute_covariance(points):
    """Double-loop covariance, the slow way."""
    pts = np.asarray(points, dtype=np.float64)
    mean = pts.sum(axis=0) / len(pts)
    sigma = np.zeros((3, 3))
    for p in pts:
        d = p - mean
        for i in range(3):
            for j in range(3):
                sigma[i, j] += d[i] * d[j]
    return mean, sigma


def tls_normal_oracle(points):
    """Total-least-squares plane normal by direct minimization on the sphere.

    Coarse grid over (theta, phi) followed by Nelder-Mead; never touches an
    eigensolver, so it is independent of the code under test.
    """
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)

    def cost(angles):
        th, ph = angles
        n = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph),
                      math.cos(th)])
        return float(np.sum((centered @ n) ** 2))

    best, best_c = None, np.inf
    for th in np.linspace(0.0, math.pi, 25):
        for ph in np.linspace(0.0, 2 * math.pi, 49):
            c = cost((th, ph))
            if c < best_c:
                best, best_c = (th, ph), c
    res = minimize(cost, best, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-24, "maxiter": 4000})
    th, ph = res.x
    n = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
    return n / np.linalg.norm(n)


def angle_between(a, b):
    c = abs(float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.acos(min(c, 1.0))


def random_neighborhood(rng, npts):
    # distinct pixels, as a gathered surface window always provides; slope
    # magnitudes match edges moving at 0.5..3 px/ms
    cells = rng.choice(49, size=npts, replace=False)
    xy = np.column_stack([cells % 7 - 3, cells // 7 - 3]).astype(np.float64)
    ang = rng.uniform(0.0, 2.0 * math.pi)
    mag = rng.uniform(1.0 / 3.0, 2.0)
    slope = mag * np.array([math.cos(ang), math.sin(ang)])
    t = xy @ slope + rng.normal(0.0, 0.05, npts)
    return np.column_stack([xy, t])


# ---------------------------------------------------------------------------
# covariance
# ---------------------------------------------------------------------------

def test_covariance_exact_plane_rank2():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    _, sigma = ev.covariance(pts)
    vals, _, _ = ev.smallest_eigenvector(sigma)
    assert vals[2] == pytest.approx(0.0, abs=1e-12)
    assert vals[1] > 1e-6


def test_covariance_identical_points_zero():
    pts = np.ones((5, 3))
    _, sigma = ev.covariance(pts)
    assert np.allclose(sigma, 0.0)


def test_covariance_matches_bruteforce():
    rng = np.random.default_rng(42)
    pts = rng.normal(size=(10, 3)) * [3.0, 3.0, 2.0]
    mean, sigma = ev.covariance(pts)
    bmean, bsigma = brute_covariance(pts)
    assert np.allclose(mean, bmean, rtol=1e-12)
    scale = np.abs(bsigma).max()
    assert np.allclose(sigma, bsigma, atol=1e-12 * scale)


def test_covariance_needs_three_points():
    with pytest.raises(DataError):
        ev.covariance(np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# smallest eigenvector
# ---------------------------------------------------------------------------

def test_eigen_diagonal_case():
    vals, normal, degen = ev.smallest_eigenvector(np.diag([4.0, 1.0, 0.01]))
    assert np.allclose(vals, [4.0, 1.0, 0.01])
    assert abs(normal @ [0, 0, 1]) == pytest.approx(1.0, abs=1e-12)
    assert not degen


def test_eigen_plane_normal_orientation():
    # points on the plane x = 2t (an edge at +2 px/ms); expected normal is
    # (1, 0, -2)/sqrt(5) up to sign, reoriented to non-negative time component
    ts = np.linspace(0.0, 3.0, 7)
    pts = [(2 * t, y, t) for t in ts for y in range(-3, 4)]
    _, sigma = ev.covariance(pts)
    _, normal, degen = ev.smallest_eigenvector(sigma)
    expected = np.array([-1.0, 0.0, 2.0]) / math.sqrt(5.0)
    assert np.allclose(normal, expected, atol=1e-9)
    assert not degen


def test_eigen_degenerate_flag_on_line():
    pts = [(i, 0.0, 0.0) for i in range(6)]
    _, sigma = ev.covariance(pts)
    _, _, degen = ev.smallest_eigenvector(sigma)
    assert degen


def test_eigen_nonfinite_rejected():
    m = np.eye(3)
    m[0, 0] = np.nan
    with pytest.raises(NumericError):
        ev.smallest_eigenvector(m)


def test_eigen_residual_on_random_psd():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(2000):
        a = rng.normal(size=(3, 3))
        sigma = a @ a.T
        vals, normal, _ = ev.smallest_eigenvector(sigma)
        res = np.linalg.norm(sigma @ normal - vals[2] * normal)
        worst = max(worst, res / vals[0])
    assert worst <= 1e-9


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_eigen_vs_numpy_eigh(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3))
    sigma = a @ a.T
    vals, normal, degen = ev.smallest_eigenvector(sigma)
    ref_vals, ref_vecs = np.linalg.eigh(sigma)
    assert np.allclose(vals, ref_vals[::-1], rtol=1e-9, atol=1e-12 * ref_vals[-1])
    if not degen:
        assert angle_between(normal, ref_vecs[:, 0]) < 1e-7


# ---------------------------------------------------------------------------
# consensus, flow, lifetime
# ---------------------------------------------------------------------------

def plane_points(v=2.0, rows=(-1, 0, 1), cols=(-1, 0, 1)):
    return np.array([(x, y, x / v) for x in cols for y in rows], dtype=np.float64)


def test_consensus_all_inliers_on_exact_plane():
    pts = plane_points()
    fit = ev.fit_plane(pts, anchor=(0.0, 0.0, 0.0))
    inliers, accepted = ev.consensus_check(fit, pts, delta_us=100.0, eps=0.5, n=3)
    assert inliers == len(pts)
    assert accepted
    assert fit.inliers == len(pts)


def test_consensus_outlier_excluded_and_threshold():
    # 3x3 exact plane plus one point displaced by 10*delta in t:
    # the outlier misses, and acceptance needs more than 2.25 inliers
    delta_us = 200.0
    pts = plane_points()
    out = np.vstack([pts, [2.0, 2.0, 2.0 / 2.0 + 10 * delta_us * 1e-3]])
    fit = ev.fit_plane(pts, anchor=(0.0, 0.0, 0.0))
    inliers, accepted = ev.consensus_check(fit, out, delta_us=delta_us, eps=0.5, n=3)
    assert inliers == len(pts)
    assert accepted


def test_consensus_vertical_plane_error():
    fit = ev.PlaneFit(mean=np.zeros(3), eigenvalues=np.array([1.0, 0.5, 0.0]),
                      normal=np.array([1.0, 0.0, 0.0]), plane=(1.0, 0.0, 0.0, 0.0))
    with pytest.raises(NumericError):
        ev.consensus_check(fit, plane_points(), delta_us=100.0, eps=0.5, n=3)


def test_consensus_support_denominator_mode():
    pts = plane_points()
    fit = ev.fit_plane(pts, anchor=(0.0, 0.0, 0.0))
    inl_w, acc_w = ev.consensus_check(fit, pts, 100.0, 0.5, 9, denominator="window")
    inl_s, acc_s = ev.consensus_check(fit, pts, 100.0, 0.5, 9, denominator="support")
    assert inl_w == inl_s == 9
    assert not acc_w  # 9 inliers <= 0.5 * 81 / 2
    assert acc_s  # 9 inliers > 0.5 * 9 / 2


def test_flow_from_normal_examples():
    assert ev.flow_from_normal(np.array([-1.0, 0.0, 2.0]) / math.sqrt(5)) == \
        pytest.approx((2.0, 0.0))
    assert ev.flow_from_normal(np.array([-1.0, -1.0, 1.0]) / math.sqrt(3)) == \
        pytest.approx((0.5, 0.5))
    with pytest.raises(NumericError):
        ev.flow_from_normal(np.array([0.0, 0.0, 1.0]))


def test_lifetime_from_normal_examples():
    n = np.array([-1.0, 0.0, 2.0]) / math.sqrt(5)
    assert ev.lifetime_from_normal(n) == pytest.approx(0.5)
    with pytest.raises(NumericError):
        ev.lifetime_from_normal(np.array([1.0, 0.0, 0.0]))


@settings(max_examples=100, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(0.05, 1.0))
def test_lifetime_is_reciprocal_speed(a, b, c):
    n = np.array([a, b, c])
    n /= np.linalg.norm(n)
    if n[0] ** 2 + n[1] ** 2 <= 1e-9:
        return
    vx, vy = ev.flow_from_normal(n)
    lt = ev.lifetime_from_normal(n)
    assert lt * math.hypot(vx, vy) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# oracle equivalence: closed-form path vs grid+simplex TLS
# ---------------------------------------------------------------------------

def test_pca_normal_matches_tls_oracle():
    rng = np.random.default_rng(11)
    for _ in range(60):
        pts = random_neighborhood(rng, rng.integers(5, 11))
        _, sigma = ev.covariance(pts)
        _, normal, degen = ev.smallest_eigenvector(sigma)
        if degen:
            continue
        oracle = tls_normal_oracle(pts)
        assert angle_between(normal, oracle) < 1e-6


def test_pca_normal_matches_tls_after_consensus_removal():
    # exhaustive consensus as the removal oracle: the point whose exclusion
    # leaves the thinnest plane is the one the majority disagrees with
    rng = np.random.default_rng(12)
    for _ in range(30):
        both = random_neighborhood(rng, 11)
        pts = both[:-1]
        outlier = both[-1].copy()
        extent = pts[:, 2].max() - pts[:, 2].min()
        outlier[2] += 2.5 * extent
        noisy = np.vstack([pts, outlier])
        thickness = []
        for i in range(len(noisy)):
            subset = np.delete(noisy, i, axis=0)
            _, sigma = ev.covariance(subset)
            vals, _, _ = ev.smallest_eigenvector(sigma)
            thickness.append(vals[2])
        assert int(np.argmin(thickness)) == len(noisy) - 1
        keep = noisy[:-1]
        # the cleaned set passes the consensus inequality with every inlier
        fit = ev.fit_plane(keep, anchor=keep.mean(axis=0))
        delta_us = 250.0 * extent  # a quarter extent, in us
        inliers, accepted = ev.consensus_check(fit, keep, delta_us, 0.5, 4,
                                               denominator="support")
        assert inliers == len(keep) and accepted
        oracle = tls_normal_oracle(keep)
        assert angle_between(fit.normal, oracle) < 1e-6


# ---------------------------------------------------------------------------
# estimate_event end to end
# ---------------------------------------------------------------------------

def edge_surface(v=2.0, t0_us=100_000, width=GEO.width, height=GEO.height):
    """Surface of a rightward edge at v px/ms that has swept the whole frame,
    most recent crossing at x = width - 1."""
    cells = []
    for x in range(width):
        t = t0_us - round((width - 1 - x) / v * 1000.0)
        for y in range(height):
            cells.append((x, y, t))
    return surface_from_cells(GEO, cells)


def test_estimate_event_exact_edge():
    s = edge_surface(v=2.0)
    e = ev.Event(x=GEO.width - 1, y=12, t=100_000, p=1)
    fe = ev.estimate_event(e, s)
    assert fe.valid
    assert fe.vx == pytest.approx(2.0, abs=1e-9)
    assert fe.vy == pytest.approx(0.0, abs=1e-9)
    assert fe.lifetime_ms == pytest.approx(0.5, abs=1e-9)


def test_estimate_event_readonly_surface():
    s = edge_surface(v=2.0)
    before = s.grid.copy()
    ev.estimate_event(ev.Event(x=20, y=12, t=100_000, p=1), s)
    assert np.array_equal(s.grid, before)


def test_estimate_event_too_few_neighbors():
    s = ev.ActiveSurface(GEO)
    for dx in range(1, 4):
        s.update(ev.Event(x=10 + dx, y=10, t=90_000, p=1))
    fe = ev.estimate_event(ev.Event(x=10, y=10, t=100_000, p=1), s)
    assert not fe.valid
    assert fe.status == ev.pca.ST_TOO_FEW_NEIGHBORS
    assert (fe.vx, fe.vy) == (0.0, 0.0)
    assert math.isnan(fe.lifetime_ms)


def test_estimate_event_crossing_planes_rejected():
    # two edges crossing: t grows away from the center column in both
    # directions, a ridge rather than a plane
    cells = []
    for x in range(GEO.width):
        t = 100_000 - abs(x - 16) * 700
        for y in range(GEO.height):
            cells.append((x, y, t))
    s = surface_from_cells(GEO, cells)
    fe = ev.estimate_event(ev.Event(x=16, y=12, t=100_000, p=1), s)
    assert not fe.valid
    assert fe.status in (ev.pca.ST_NON_PLANAR, ev.pca.ST_CONSENSUS_REJECT)


def test_estimate_event_scale_invariance():
    # multiplying all timestamps, delta, and max_age by s rescales flow by 1/s
    scale = 3
    cells = [(x, y, 60_000 + x * 500) for x in range(GEO.width) for y in range(GEO.height)]
    s1 = surface_from_cells(GEO, cells)
    s2 = surface_from_cells(GEO, [(x, y, t * scale) for x, y, t in cells])
    e1 = ev.Event(x=GEO.width - 1, y=12, t=60_000 + (GEO.width - 1) * 500, p=1)
    e2 = ev.Event(x=e1.x, y=e1.y, t=e1.t * scale, p=1)
    cfg1 = ev.PcaConfig(consensus_delta_us=400.0, max_age_us=30_000)
    cfg2 = ev.PcaConfig(consensus_delta_us=400.0 * scale, max_age_us=30_000 * scale)
    f1 = ev.estimate_event(e1, s1, cfg1)
    f2 = ev.estimate_event(e2, s2, cfg2)
    assert f1.valid and f2.valid
    assert f2.vx == pytest.approx(f1.vx / scale, rel=1e-9)
    assert f2.vy == pytest.approx(f1.vy / scale, abs=1e-12)


def test_estimate_event_translation_invariance():
    cells = [(x, y, 60_000 + x * 500) for x in range(14) for y in range(14)]
    s1 = surface_from_cells(GEO, cells)
    s2 = surface_from_cells(GEO, [(x + 9, y + 7, t) for x, y, t in cells])
    e1 = ev.Event(x=7, y=7, t=60_000 + 7 * 500, p=1)
    e2 = ev.Event(x=16, y=14, t=e1.t, p=1)
    f1 = ev.estimate_event(e1, s1)
    f2 = ev.estimate_event(e2, s2)
    assert f1.valid and f2.valid
    assert f2.vx == f1.vx
    assert f2.vy == f1.vy


def test_estimate_event_flow_lifetime_identity_on_stream(edge_accepted, small_geometry):
    est = ev.PcaFlow(width=small_geometry.width, height=small_geometry.height)
    flow = est.fit().transform(edge_accepted)
    v = flow[flow["valid"]]
    speeds = np.hypot(v["vx"], v["vy"])
    assert np.all(np.abs(v["lifetime_ms"] * speeds - 1.0) <= 1e-9)


def test_pca_config_validation():
    with pytest.raises(ev.ConfigError):
        ev.PcaConfig(n=4)
    with pytest.raises(ev.ConfigError):
        ev.PcaConfig(outlier_ratio_eps=1.5)
    with pytest.raises(ev.ConfigError):
        ev.PcaConfig(consensus_denominator="nope")

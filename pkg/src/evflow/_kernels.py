"""Numba kernels for the per-event hot paths.

Shared conventions:
  - timestamps int64 microseconds, with the EMPTY sentinel for unwritten cells;
  - plane fitting in (px, px, ms) with time relative to the event under test;
  - polarity index 0 = negative, 1 = positive;
  - surfaces are (2, H, W) int64 grids, flow buffers (2, H, W) float64 + t grid.
"""

import math

import numpy as np
from numba import njit

# far enough in the past that a single age comparison also rejects empty
# cells (timestamps are non-negative, ages stay far below 2**62)
EMPTY = -(2 ** 62)

# estimation status codes
ST_OK = 0
ST_TOO_FEW_NEIGHBORS = 1
ST_NON_PLANAR = 2
ST_DEGENERATE = 3
ST_VERTICAL_PLANE = 4
ST_CONSENSUS_REJECT = 5
ST_UNDEFINED_FLOW = 6
ST_ILL_CONDITIONED = 7
ST_NO_DATA = 8

# filter outcomes
FR_ACCEPT = 0
FR_REFRACTORY = 1
FR_ACTIVITY = 2

# weight function codes
WF_INVERSE = 0
WF_INV_EXP = 1
WF_INV_LOG = 2


# ---------------------------------------------------------------------------
# 3x3 symmetric eigen-decomposition: closed form with a Jacobi fallback
# ---------------------------------------------------------------------------

@njit(cache=True)
def _eig3_values(a00, a01, a02, a11, a12, a22):
    """Eigenvalues of a symmetric 3x3, descending, via the trigonometric form."""
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    q = (a00 + a11 + a22) / 3.0
    if p1 == 0.0:
        l1, l2, l3 = a00, a11, a22
        if l1 < l2:
            l1, l2 = l2, l1
        if l2 < l3:
            l2, l3 = l3, l2
        if l1 < l2:
            l1, l2 = l2, l1
        return l1, l2, l3
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    b00 = (a00 - q) / p
    b01 = a01 / p
    b02 = a02 / p
    b11 = (a11 - q) / p
    b12 = a12 / p
    b22 = (a22 - q) / p
    detb = (
        b00 * (b11 * b22 - b12 * b12)
        - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02)
    )
    r = detb / 2.0
    if r <= -1.0:
        phi = math.pi / 3.0
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = math.acos(r) / 3.0
    # phi lies in [0, pi/3], so sin(phi) >= 0 and the second cosine comes
    # from the angle-addition identity instead of another trig call
    c = math.cos(phi)
    s = math.sqrt(max(1.0 - c * c, 0.0))
    l1 = q + 2.0 * p * c
    l3 = q + 2.0 * p * (-0.5 * c - 0.8660254037844386 * s)
    l2 = 3.0 * q - l1 - l3
    return l1, l2, l3


@njit(cache=True)
def _eigvec_for(a00, a01, a02, a11, a12, a22, lam):
    """Eigenvector for eigenvalue lam from cross products of rows of A - lam*I.

    Returns (vx, vy, vz, norm2) un-normalized; norm2 ~ 0 flags a degenerate
    (repeated-eigenvalue) extraction.
    """
    r0x, r0y, r0z = a00 - lam, a01, a02
    r1x, r1y, r1z = a01, a11 - lam, a12
    r2x, r2y, r2z = a02, a12, a22 - lam

    c0x = r0y * r1z - r0z * r1y
    c0y = r0z * r1x - r0x * r1z
    c0z = r0x * r1y - r0y * r1x
    n0 = c0x * c0x + c0y * c0y + c0z * c0z

    c1x = r0y * r2z - r0z * r2y
    c1y = r0z * r2x - r0x * r2z
    c1z = r0x * r2y - r0y * r2x
    n1 = c1x * c1x + c1y * c1y + c1z * c1z

    c2x = r1y * r2z - r1z * r2y
    c2y = r1z * r2x - r1x * r2z
    c2z = r1x * r2y - r1y * r2x
    n2 = c2x * c2x + c2y * c2y + c2z * c2z

    if n0 >= n1 and n0 >= n2:
        return c0x, c0y, c0z, n0
    if n1 >= n2:
        return c1x, c1y, c1z, n1
    return c2x, c2y, c2z, n2


@njit(cache=True)
def _jacobi3(a00, a01, a02, a11, a12, a22):
    """Cyclic Jacobi on a symmetric 3x3. Returns eigenvalues descending and
    the eigenvector of the smallest one."""
    a = np.empty((3, 3), dtype=np.float64)
    a[0, 0] = a00
    a[0, 1] = a01
    a[0, 2] = a02
    a[1, 0] = a01
    a[1, 1] = a11
    a[1, 2] = a12
    a[2, 0] = a02
    a[2, 1] = a12
    a[2, 2] = a22
    v = np.eye(3)
    fro2 = a00 * a00 + a11 * a11 + a22 * a22 + 2.0 * (a01 * a01 + a02 * a02 + a12 * a12)
    tol = 1e-30 * fro2
    for _ in range(64):
        off = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        if off <= tol:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(3):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(3):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(3):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    i1, i2, i3 = 0, 1, 2
    # selection-sort the three eigenpairs, descending
    if a[i1, i1] < a[i2, i2]:
        i1, i2 = i2, i1
    if a[i2, i2] < a[i3, i3]:
        i2, i3 = i3, i2
    if a[i1, i1] < a[i2, i2]:
        i1, i2 = i2, i1
    return a[i1, i1], a[i2, i2], a[i3, i3], v[0, i3], v[1, i3], v[2, i3]


@njit(cache=True)
def eig3_smallest(a00, a01, a02, a11, a12, a22):
    """Smallest-eigenvalue decomposition of a symmetric PSD 3x3.

    Returns (l1, l2, l3, vx, vy, vt, degenerate): eigenvalues descending with
    l3 clamped to >= 0, unit eigenvector of l3 oriented so vt >= 0, and a flag
    set when l2 ~ l3 leaves the normal direction undetermined.
    """
    scale = max(abs(a00), abs(a01), abs(a02), abs(a11), abs(a12), abs(a22))
    if scale == 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, True
    l1, l2, l3 = _eig3_values(a00, a01, a02, a11, a12, a22)
    vx, vy, vt, n2 = _eigvec_for(a00, a01, a02, a11, a12, a22, l3)
    ok = n2 > (1e-14 * scale * scale) ** 2
    if ok:
        inv = 1.0 / math.sqrt(n2)
        vx *= inv
        vy *= inv
        vt *= inv
        rx = a00 * vx + a01 * vy + a02 * vt - l3 * vx
        ry = a01 * vx + a11 * vy + a12 * vt - l3 * vy
        rz = a02 * vx + a12 * vy + a22 * vt - l3 * vt
        res2 = rx * rx + ry * ry + rz * rz
        if res2 > (1e-10 * l1) ** 2:
            ok = False
    if not ok:
        l1, l2, l3, vx, vy, vt = _jacobi3(a00, a01, a02, a11, a12, a22)
        norm = math.sqrt(vx * vx + vy * vy + vt * vt)
        if norm > 0.0:
            vx /= norm
            vy /= norm
            vt /= norm
    if l3 < 0.0:
        l3 = 0.0
    if vt < 0.0:
        vx = -vx
        vy = -vy
        vt = -vt
    degenerate = (l2 - l3) <= 1e-9 * l1
    return l1, l2, l3, vx, vy, vt, degenerate


# ---------------------------------------------------------------------------
# neighborhood gathering
# ---------------------------------------------------------------------------

@njit(cache=True)
def _gather_abs(tsurf, x, y, t_us, half, max_age_us, xs, ys, ts):
    """Fresh cells in the window, center excluded, absolute int64 timestamps."""
    H, W = tsurf.shape
    xlo = x - half if x - half > 0 else 0
    xhi = x + half if x + half < W - 1 else W - 1
    ylo = y - half if y - half > 0 else 0
    yhi = y + half if y + half < H - 1 else H - 1
    m = 0
    for yy in range(ylo, yhi + 1):
        for xx in range(xlo, xhi + 1):
            if xx == x and yy == y:
                continue
            tv = tsurf[yy, xx]
            if t_us - tv <= max_age_us:
                xs[m] = xx
                ys[m] = yy
                ts[m] = tv
                m += 1
    return m


@njit(cache=True)
def _gather_rel(tsurf, x, y, t_us, half, max_age_us, fx, fy, ft):
    """Same as _gather_abs but event-relative: (px, px, ms) offsets from
    (x, y, t_us). The event under test itself would sit at the origin."""
    H, W = tsurf.shape
    xlo = x - half if x - half > 0 else 0
    xhi = x + half if x + half < W - 1 else W - 1
    ylo = y - half if y - half > 0 else 0
    yhi = y + half if y + half < H - 1 else H - 1
    m = 0
    for yy in range(ylo, yhi + 1):
        for xx in range(xlo, xhi + 1):
            if xx == x and yy == y:
                continue
            tv = tsurf[yy, xx]
            if t_us - tv <= max_age_us:
                fx[m] = float(xx - x)
                fy[m] = float(yy - y)
                ft[m] = (tv - t_us) * 1e-3
                m += 1
    return m


# ---------------------------------------------------------------------------
# plane-normal flow estimation on one event
# ---------------------------------------------------------------------------

@njit(cache=True)
def _pca_estimate(tsurf, x, y, t_us, n, min_neighbors, planarity_eps, delta_us,
                  outlier_eps, denom_window, max_age_us, fx, fy, ft):
    """Full per-event estimation: gather, fit, gate. Returns
    (status, vx, vy, lifetime_ms, inliers, support).

    Runs in event-relative coordinates, the event under test at the origin
    and part of the fitted set; the covariance is accumulated incrementally
    in the gather pass (offsets are small, so raw-moment centralization is
    safe), and the plane is anchored at the event, i.e. d = 0 here.
    """
    H, W = tsurf.shape
    half = n // 2
    xlo = x - half if x - half > 0 else 0
    xhi = x + half if x + half < W - 1 else W - 1
    ylo = y - half if y - half > 0 else 0
    yhi = y + half if y + half < H - 1 else H - 1
    m = 0
    sx = 0.0
    sy = 0.0
    st = 0.0
    sxx = 0.0
    sxy = 0.0
    sxt = 0.0
    syy = 0.0
    syt = 0.0
    stt = 0.0
    tmin = 0.0
    tmax = 0.0
    for yy in range(ylo, yhi + 1):
        for xx in range(xlo, xhi + 1):
            if xx == x and yy == y:
                continue
            tv = tsurf[yy, xx]
            if t_us - tv > max_age_us:
                continue
            xi = float(xx - x)
            yi = float(yy - y)
            ti = (tv - t_us) * 1e-3
            fx[m] = xi
            fy[m] = yi
            ft[m] = ti
            m += 1
            sx += xi
            sy += yi
            st += ti
            sxx += xi * xi
            sxy += xi * yi
            sxt += xi * ti
            syy += yi * yi
            syt += yi * ti
            stt += ti * ti
            if ti < tmin:
                tmin = ti
            elif ti > tmax:
                tmax = ti
    if m < min_neighbors:
        return ST_TOO_FEW_NEIGHBORS, 0.0, 0.0, np.nan, 0, m + 1
    # the event under test joins the set at the origin: moments unchanged
    fx[m] = 0.0
    fy[m] = 0.0
    ft[m] = 0.0
    mm = m + 1
    inv = 1.0 / mm
    s00 = sxx - sx * sx * inv
    s01 = sxy - sx * sy * inv
    s02 = sxt - sx * st * inv
    s11 = syy - sy * sy * inv
    s12 = syt - sy * st * inv
    s22 = stt - st * st * inv
    l1, l2, l3, a, b, c, degenerate = eig3_smallest(s00, s01, s02, s11, s12, s22)
    tr = l1 + l2 + l3
    if tr <= 0.0 or degenerate:
        return ST_DEGENERATE, 0.0, 0.0, np.nan, 0, mm
    if l3 / tr >= planarity_eps:
        return ST_NON_PLANAR, 0.0, 0.0, np.nan, 0, mm
    if abs(c) <= 1e-12:
        return ST_VERTICAL_PLANE, 0.0, 0.0, np.nan, 0, mm
    if delta_us >= 0.0:
        delta_ms = delta_us * 1e-3
    else:
        delta_ms = 0.25 * (tmax - tmin)
        if delta_ms < 0.1:
            delta_ms = 0.1
    inliers = 0
    for i in range(mm):
        t_est = -(a * fx[i] + b * fy[i]) / c
        if abs(t_est - ft[i]) <= delta_ms:
            inliers += 1
    base = float(n * n) if denom_window else float(mm)
    if inliers <= (1.0 - outlier_eps) * base / 2.0:
        return ST_CONSENSUS_REJECT, 0.0, 0.0, np.nan, inliers, mm
    s2 = a * a + b * b
    if s2 <= 1e-12:
        return ST_UNDEFINED_FLOW, 0.0, 0.0, np.nan, inliers, mm
    g = -c / s2
    vx = g * a
    vy = g * b
    lifetime_ms = math.sqrt(s2) / c
    return ST_OK, vx, vy, lifetime_ms, inliers, mm


@njit(cache=True)
def _pca_single(surfaces, pidx, x, y, t_us, icfg, fcfg, fx, fy, ft):
    """Single-event entry. icfg = (n, min_neighbors, denom_window);
    fcfg = (planarity_eps, delta_us, outlier_eps, max_age_us)."""
    return _pca_estimate(
        surfaces[pidx], x, y, t_us, icfg[0], icfg[1], fcfg[0], fcfg[1], fcfg[2],
        icfg[2] != 0, fcfg[3], fx, fy, ft
    )


@njit(cache=True)
def _surface_write(surfaces, pidx, x, y, t_us):
    if surfaces[pidx, y, x] <= t_us:
        surfaces[pidx, y, x] = t_us


@njit(cache=True)
def _pca_stream(t, x, y, pidx, surfaces, n, min_neighbors, planarity_eps,
                delta_us, outlier_eps, denom_window, max_age_us,
                out_vx, out_vy, out_lt, out_valid, out_status, out_inliers):
    nmax = n * n
    fx = np.empty(nmax, dtype=np.float64)
    fy = np.empty(nmax, dtype=np.float64)
    ft = np.empty(nmax, dtype=np.float64)
    for i in range(t.shape[0]):
        st, vx, vy, lt, inl, _ = _pca_estimate(
            surfaces[pidx[i]], x[i], y[i], t[i], n, min_neighbors, planarity_eps,
            delta_us, outlier_eps, denom_window, max_age_us, fx, fy, ft
        )
        out_status[i] = st
        out_inliers[i] = inl
        if st == ST_OK:
            out_vx[i] = vx
            out_vy[i] = vy
            out_lt[i] = lt
            out_valid[i] = True
        else:
            out_vx[i] = 0.0
            out_vy[i] = 0.0
            out_lt[i] = np.nan
            out_valid[i] = False
        _surface_write(surfaces, pidx[i], x[i], y[i], t[i])


# ---------------------------------------------------------------------------
# regularization
# ---------------------------------------------------------------------------

@njit(cache=True)
def _weight(dt_us, min_dt_us, wfunc, tau_ms):
    """Monotone non-increasing weight of the timestamp difference."""
    dt = dt_us if dt_us > min_dt_us else min_dt_us
    dt_ms = dt * 1e-3
    if wfunc == WF_INVERSE:
        return 1.0 / dt_ms
    if wfunc == WF_INV_EXP:
        return math.exp(-dt_ms / tau_ms)
    return 1.0 / math.log(math.e + dt_ms / tau_ms)


@njit(cache=True)
def _fuse_flow(bvx, bvy, bt, x, y, t_us, raw_vx, raw_vy, half, min_dt_us,
               wfunc, tau_ms, max_age_us):
    """Convex fusion of the raw estimate with buffered neighborhood flow.

    The raw estimate participates at the floor time difference; buffered
    entries (center cell included: it holds the previous estimate here)
    weigh in by their age.
    """
    H, W = bt.shape
    xlo = x - half if x - half > 0 else 0
    xhi = x + half if x + half < W - 1 else W - 1
    ylo = y - half if y - half > 0 else 0
    yhi = y + half if y + half < H - 1 else H - 1
    w = _weight(min_dt_us, min_dt_us, wfunc, tau_ms)
    wsum = w
    ax = w * raw_vx
    ay = w * raw_vy
    for yy in range(ylo, yhi + 1):
        for xx in range(xlo, xhi + 1):
            dt = t_us - bt[yy, xx]
            if dt < 0 or dt > max_age_us:
                continue
            wi = _weight(float(dt), min_dt_us, wfunc, tau_ms)
            ax += wi * bvx[yy, xx]
            ay += wi * bvy[yy, xx]
            wsum += wi
    return ax / wsum, ay / wsum


@njit(cache=True)
def _weighted_single(surfaces, bvx, bvy, bt, pidx, x, y, t_us, icfg, fcfg,
                     wicfg, wfcfg, fx, fy, ft):
    """PCA estimate fused with the flow buffer; the buffer is updated here.

    wicfg = (m_window, weight_func); wfcfg = (min_dt_us, tau_ms, w_max_age_us).
    """
    st, vx, vy, lt, inl, sup = _pca_single(surfaces, pidx, x, y, t_us, icfg, fcfg, fx, fy, ft)
    if st != ST_OK:
        return st, 0.0, 0.0, np.nan, inl, sup
    fvx, fvy = _fuse_flow(
        bvx[pidx], bvy[pidx], bt[pidx], x, y, t_us, vx, vy, wicfg[0] // 2,
        wfcfg[0], wicfg[1], wfcfg[1], wfcfg[2]
    )
    speed = math.hypot(fvx, fvy)
    if speed <= 1e-12:
        return ST_UNDEFINED_FLOW, 0.0, 0.0, np.nan, inl, sup
    bvx[pidx, y, x] = fvx
    bvy[pidx, y, x] = fvy
    bt[pidx, y, x] = t_us
    return ST_OK, fvx, fvy, 1.0 / speed, inl, sup


@njit(cache=True)
def _weighted_stream(t, x, y, pidx, surfaces, bvx, bvy, bt, icfg, fcfg,
                     wicfg, wfcfg, out_vx, out_vy, out_lt, out_valid,
                     out_status, out_inliers):
    nmax = icfg[0] * icfg[0]
    fx = np.empty(nmax, dtype=np.float64)
    fy = np.empty(nmax, dtype=np.float64)
    ft = np.empty(nmax, dtype=np.float64)
    for i in range(t.shape[0]):
        st, vx, vy, lt, inl, _ = _weighted_single(
            surfaces, bvx, bvy, bt, pidx[i], x[i], y[i], t[i], icfg, fcfg,
            wicfg, wfcfg, fx, fy, ft
        )
        out_status[i] = st
        out_inliers[i] = inl
        out_valid[i] = st == ST_OK
        out_vx[i] = vx
        out_vy[i] = vy
        out_lt[i] = lt
        _surface_write(surfaces, pidx[i], x[i], y[i], t[i])


@njit(cache=True)
def _leveled_single(surfaces, pidx, x, y, t_us, levels, icfg, fcfg, fx, fy, ft):
    """Mean of the valid per-level estimates, gated on the base level.

    The first (largest) level is the estimation window proper: when it
    rejects, the event stays invalid; smaller levels only refine a valid
    base estimate, so they cannot turn rejected events into estimates.
    """
    acc_x = 0.0
    acc_y = 0.0
    nvalid = 0
    base_inl = 0
    for li in range(levels.shape[0]):
        n = levels[li]
        st, vx, vy, lt, inl, sup = _pca_estimate(
            surfaces[pidx], x, y, t_us, n, icfg[1], fcfg[0], fcfg[1], fcfg[2],
            icfg[2] != 0, fcfg[3], fx, fy, ft
        )
        if li == 0:
            if st != ST_OK:
                return st, 0.0, 0.0, np.nan, inl, sup
            base_inl = inl
        if st == ST_OK:
            acc_x += vx
            acc_y += vy
            nvalid += 1
    vx = acc_x / nvalid
    vy = acc_y / nvalid
    speed = math.hypot(vx, vy)
    if speed <= 1e-12:
        return ST_UNDEFINED_FLOW, 0.0, 0.0, np.nan, base_inl, nvalid
    return ST_OK, vx, vy, 1.0 / speed, base_inl, nvalid


@njit(cache=True)
def _leveled_stream(t, x, y, pidx, surfaces, levels, icfg, fcfg,
                    out_vx, out_vy, out_lt, out_valid, out_status, out_inliers):
    nmax = 0
    for li in range(levels.shape[0]):
        if levels[li] * levels[li] > nmax:
            nmax = levels[li] * levels[li]
    fx = np.empty(nmax, dtype=np.float64)
    fy = np.empty(nmax, dtype=np.float64)
    ft = np.empty(nmax, dtype=np.float64)
    for i in range(t.shape[0]):
        st, vx, vy, lt, inl, _ = _leveled_single(
            surfaces, pidx[i], x[i], y[i], t[i], levels, icfg, fcfg, fx, fy, ft
        )
        out_status[i] = st
        out_inliers[i] = inl
        out_valid[i] = st == ST_OK
        out_vx[i] = vx
        out_vy[i] = vy
        out_lt[i] = lt
        _surface_write(surfaces, pidx[i], x[i], y[i], t[i])


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

@njit(cache=True)
def _support_time(f_e, kgain, a_min, a_max, tf_min, tf_max):
    """Adaptive support time in us: alpha = k/ln(f), clamped, mapped linearly."""
    if f_e <= 1.0:
        alpha = a_max
    else:
        alpha = kgain / math.log(f_e)
        if alpha < a_min:
            alpha = a_min
        elif alpha > a_max:
            alpha = a_max
    return (tf_max - tf_min) / (a_max - a_min) * (alpha - a_min) + tf_min


@njit(cache=True)
def _filter_chunk(t, x, y, pidx, tcat, offset, cand, acc, t_same, t_opp,
                  kgain, a_min, a_max, tf_min, tf_max, min_support,
                  rate_window_us, out_reason, out_tf):
    """Refractory + adaptive activity gate over one chunk of a sorted stream.

    tcat holds candidate timestamps: the carried tail of the previous chunk
    followed by this chunk (offset = tail length). The candidate surface
    `cand` is written by every event, the accepted surface `acc` only by
    events that pass; `acc` is what the refractory windows compare against.
    """
    H = cand.shape[1]
    W = cand.shape[2]
    lo = 0
    for i in range(t.shape[0]):
        ti = t[i]
        xi = x[i]
        yi = y[i]
        pi = pidx[i]
        j = offset + i
        while tcat[lo] < ti - rate_window_us:
            lo += 1
        f_e = (j - lo + 1) / (rate_window_us * 1e-6)
        tf = _support_time(f_e, kgain, a_min, a_max, tf_min, tf_max)
        out_tf[i] = tf
        reason = FR_ACCEPT
        t_prev = acc[pi, yi, xi]
        if ti - t_prev < t_same:
            reason = FR_REFRACTORY
        else:
            t_prev = acc[1 - pi, yi, xi]
            if ti - t_prev < t_opp:
                reason = FR_REFRACTORY
            else:
                support = 0
                for dy in range(-1, 2):
                    yy = yi + dy
                    if yy < 0 or yy >= H:
                        continue
                    for dx in range(-1, 2):
                        if dx == 0 and dy == 0:
                            continue
                        xx = xi + dx
                        if xx < 0 or xx >= W:
                            continue
                        tv = cand[pi, yy, xx]
                        if ti - tv <= tf:
                            support += 1
                if support < min_support:
                    reason = FR_ACTIVITY
        out_reason[i] = reason
        cand[pi, yi, xi] = ti
        if reason == FR_ACCEPT:
            acc[pi, yi, xi] = ti


@njit(cache=True)
def _activity_support(cand_p, x, y, t_us, tf_us):
    """Count of 8-neighborhood cells holding timestamps within tf_us."""
    H, W = cand_p.shape
    support = 0
    for dy in range(-1, 2):
        yy = y + dy
        if yy < 0 or yy >= H:
            continue
        for dx in range(-1, 2):
            if dx == 0 and dy == 0:
                continue
            xx = x + dx
            if xx < 0 or xx >= W:
                continue
            tv = cand_p[yy, xx]
            if t_us - tv <= tf_us:
                support += 1
    return support


# ---------------------------------------------------------------------------
# local plane-fitting baseline (iterative least squares)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _lstsq_plane_qr(fx, fy, ft, active, mm):
    """Least-squares t = p*x + q*y + r over the active points via modified
    Gram-Schmidt QR of the (count x 3) design matrix.

    QR rather than normal equations: textbook formulations of this fit go
    through the pseudoinverse, and normal equations would square the
    condition number. Returns (ok, p, q, r); ok is False when the design
    matrix is rank deficient (collinear pixels).
    """
    # Q columns built from (x, y, 1); R is 3x3 upper triangular.
    r00 = 0.0
    for i in range(mm):
        if active[i]:
            r00 += fx[i] * fx[i]
    r00 = math.sqrt(r00)
    if r00 <= 1e-12:
        return False, 0.0, 0.0, 0.0
    r01 = 0.0
    r02 = 0.0
    qtb0 = 0.0
    inv0 = 1.0 / r00
    for i in range(mm):
        if active[i]:
            q0 = fx[i] * inv0
            r01 += q0 * fy[i]
            r02 += q0
            qtb0 += q0 * ft[i]
    r11 = 0.0
    for i in range(mm):
        if active[i]:
            v1 = fy[i] - fx[i] * inv0 * r01
            r11 += v1 * v1
    r11 = math.sqrt(r11)
    if r11 <= 1e-10 * max(r00, 1.0):
        return False, 0.0, 0.0, 0.0
    r12 = 0.0
    qtb1 = 0.0
    inv1 = 1.0 / r11
    for i in range(mm):
        if active[i]:
            q1 = (fy[i] - fx[i] * inv0 * r01) * inv1
            r12 += q1
            qtb1 += q1 * ft[i]
    r22 = 0.0
    qtb2 = 0.0
    for i in range(mm):
        if active[i]:
            v2 = 1.0 - fx[i] * inv0 * r02 - (fy[i] - fx[i] * inv0 * r01) * inv1 * r12
            r22 += v2 * v2
    r22 = math.sqrt(r22)
    if r22 <= 1e-10 * max(r00, 1.0):
        return False, 0.0, 0.0, 0.0
    inv2 = 1.0 / r22
    for i in range(mm):
        if active[i]:
            v2 = 1.0 - fx[i] * inv0 * r02 - (fy[i] - fx[i] * inv0 * r01) * inv1 * r12
            qtb2 += v2 * inv2 * ft[i]
    # back substitution
    r_coef = qtb2 * inv2
    q_coef = (qtb1 - r12 * r_coef) * inv1
    p_coef = (qtb0 - r01 * q_coef - r02 * r_coef) * inv0
    return True, p_coef, q_coef, r_coef


@njit(cache=True)
def _plane_fit_estimate(tsurf, x, y, t_us, n, reject_us, max_iters, max_age_us,
                        fx, fy, ft, active):
    """Iterative least-squares plane fit: solve, drop far points, refit until
    the surviving set stops changing or max_iters is reached."""
    m = _gather_rel(tsurf, x, y, t_us, n // 2, max_age_us, fx, fy, ft)
    if m < 2:
        return ST_TOO_FEW_NEIGHBORS, 0.0, 0.0, np.nan, m + 1
    fx[m] = 0.0
    fy[m] = 0.0
    ft[m] = 0.0
    mm = m + 1
    tmin = ft[0]
    tmax = ft[0]
    for i in range(mm):
        active[i] = True
        if ft[i] < tmin:
            tmin = ft[i]
        if ft[i] > tmax:
            tmax = ft[i]
    if reject_us >= 0.0:
        thr_ms = reject_us * 1e-3
    else:
        thr_ms = 0.25 * (tmax - tmin)
        if thr_ms < 0.1:
            thr_ms = 0.1
    nact = mm
    ok, p, q, r = _lstsq_plane_qr(fx, fy, ft, active, mm)
    if not ok:
        return ST_DEGENERATE, 0.0, 0.0, np.nan, nact
    # reject-and-refit until the plane stabilizes: each round drops far
    # points, refits, and compares the parameters against the previous fit
    for _ in range(max_iters):
        ndrop = 0
        for i in range(mm):
            if not active[i]:
                continue
            res = abs(p * fx[i] + q * fy[i] + r - ft[i])
            if res > thr_ms:
                active[i] = False
                ndrop += 1
        nact -= ndrop
        if nact < 3:
            return ST_TOO_FEW_NEIGHBORS, 0.0, 0.0, np.nan, nact
        ok, p2, q2, r2 = _lstsq_plane_qr(fx, fy, ft, active, mm)
        if not ok:
            return ST_DEGENERATE, 0.0, 0.0, np.nan, nact
        dchange = abs(p2 - p) + abs(q2 - q) + abs(r2 - r)
        p = p2
        q = q2
        r = r2
        if ndrop == 0 and dchange <= 1e-12:
            break
    s2 = p * p + q * q
    if s2 <= 1e-12:
        return ST_UNDEFINED_FLOW, 0.0, 0.0, np.nan, nact
    vx = p / s2
    vy = q / s2
    lifetime_ms = math.sqrt(s2)
    return ST_OK, vx, vy, lifetime_ms, nact


@njit(cache=True)
def _plane_single(surfaces, pidx, x, y, t_us, icfg, fcfg, fx, fy, ft, active):
    """icfg = (n, max_iters); fcfg = (reject_us, max_age_us)."""
    return _plane_fit_estimate(
        surfaces[pidx], x, y, t_us, icfg[0], fcfg[0], icfg[1], fcfg[1],
        fx, fy, ft, active
    )


@njit(cache=True)
def _plane_stream(t, x, y, pidx, surfaces, n, reject_us, max_iters, max_age_us,
                  out_vx, out_vy, out_lt, out_valid, out_status, out_inliers):
    nmax = n * n
    fx = np.empty(nmax, dtype=np.float64)
    fy = np.empty(nmax, dtype=np.float64)
    ft = np.empty(nmax, dtype=np.float64)
    active = np.empty(nmax, dtype=np.bool_)
    for i in range(t.shape[0]):
        st, vx, vy, lt, nact = _plane_fit_estimate(
            surfaces[pidx[i]], x[i], y[i], t[i], n, reject_us, max_iters,
            max_age_us, fx, fy, ft, active
        )
        out_status[i] = st
        out_inliers[i] = nact
        out_valid[i] = st == ST_OK
        out_vx[i] = vx
        out_vy[i] = vy
        out_lt[i] = lt
        _surface_write(surfaces, pidx[i], x[i], y[i], t[i])


# ---------------------------------------------------------------------------
# event-based Lucas-Kanade baseline (count images over two time slices)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _history_add(hist, hpos, pidx, x, y, t_us):
    K = hist.shape[3]
    pos = hpos[pidx, y, x]
    hist[pidx, y, x, pos] = t_us
    hpos[pidx, y, x] = (pos + 1) % K


@njit(cache=True)
def _lk_estimate(hist_p, x, y, t_us, delta_t_us, win, cond_ratio, imA, imB):
    """Lucas-Kanade on per-pixel event counts over two delta_t slices.

    imA/imB are (win+2, win+2) scratch images; gradients use central
    differences on the recent slice, the temporal derivative is the slice
    difference. Flow is solved from the 2x2 structure tensor.
    """
    H = hist_p.shape[0]
    W = hist_p.shape[1]
    K = hist_p.shape[2]
    side = win + 2
    r = side // 2
    total = 0
    for iy in range(side):
        for ix in range(side):
            xx = x + ix - r
            yy = y + iy - r
            ca = 0
            cb = 0
            if 0 <= xx < W and 0 <= yy < H:
                for k in range(K):
                    # the current instant is excluded: simultaneous events
                    # are only partially visible in stream order and would
                    # skew the recent slice; empty slots fail both ranges
                    dt = t_us - hist_p[yy, xx, k]
                    if 0 < dt <= delta_t_us:
                        cb += 1
                    elif delta_t_us < dt <= 2 * delta_t_us:
                        ca += 1
            imA[iy, ix] = float(ca)
            imB[iy, ix] = float(cb)
            total += ca + cb
    if total == 0:
        return ST_NO_DATA, 0.0, 0.0, np.nan, 0
    gxx = 0.0
    gxy = 0.0
    gyy = 0.0
    bx = 0.0
    by = 0.0
    for iy in range(1, side - 1):
        for ix in range(1, side - 1):
            gx = 0.5 * (imB[iy, ix + 1] - imB[iy, ix - 1])
            gy = 0.5 * (imB[iy + 1, ix] - imB[iy - 1, ix])
            gt = imB[iy, ix] - imA[iy, ix]
            gxx += gx * gx
            gxy += gx * gy
            gyy += gy * gy
            bx += gx * gt
            by += gy * gt
    tr = gxx + gyy
    det = gxx * gyy - gxy * gxy
    disc = tr * tr * 0.25 - det
    if disc < 0.0:
        disc = 0.0
    root = math.sqrt(disc)
    lmax = tr * 0.5 + root
    lmin = tr * 0.5 - root
    if lmax <= 0.0 or lmin <= cond_ratio * lmax:
        return ST_ILL_CONDITIONED, 0.0, 0.0, np.nan, total
    ux = (-bx * gyy + by * gxy) / det
    uy = (-by * gxx + bx * gxy) / det
    dt_ms = delta_t_us * 1e-3
    vx = ux / dt_ms
    vy = uy / dt_ms
    speed = math.hypot(vx, vy)
    if speed <= 1e-12:
        return ST_UNDEFINED_FLOW, 0.0, 0.0, np.nan, total
    return ST_OK, vx, vy, 1.0 / speed, total


@njit(cache=True)
def _lk_single(hist, hpos, pidx, x, y, t_us, icfg, fcfg, imA, imB):
    """icfg = (delta_t_us, win); fcfg = (cond_ratio,)."""
    return _lk_estimate(hist[pidx], x, y, t_us, icfg[0], icfg[1], fcfg[0], imA, imB)


@njit(cache=True)
def _lk_stream(t, x, y, pidx, hist, hpos, delta_t_us, win, cond_ratio,
               out_vx, out_vy, out_lt, out_valid, out_status, out_inliers):
    side = win + 2
    imA = np.empty((side, side), dtype=np.float64)
    imB = np.empty((side, side), dtype=np.float64)
    for i in range(t.shape[0]):
        _history_add(hist, hpos, pidx[i], x[i], y[i], t[i])
        st, vx, vy, lt, total = _lk_estimate(
            hist[pidx[i]], x[i], y[i], t[i], delta_t_us, win, cond_ratio, imA, imB
        )
        out_status[i] = st
        out_inliers[i] = total
        out_valid[i] = st == ST_OK
        out_vx[i] = vx
        out_vy[i] = vy
        out_lt[i] = lt

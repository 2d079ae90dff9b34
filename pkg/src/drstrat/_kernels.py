"""Compiled inner loops for the moment-set projection.

``moment_project`` is the exact projection; ``moment_dykstra`` is its
fallback for degenerate geometry.  The tests check the former against a
general-purpose constrained solver.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def project_simplex(v):
    n = v.size
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for j in range(n):
        css += u[j]
        t = (css - 1.0) / (j + 1)
        if u[j] - t > 0:
            theta = t
    out = np.empty(n)
    for i in range(n):
        out[i] = max(v[i] - theta, 0.0)
    return out


@njit(cache=True)
def _proj_slab(y, a, aa, mu, r):
    u = y @ a - mu
    if abs(u) <= r:
        return y.copy()
    edge = r if u > 0 else -r
    return y - (u - edge) / aa * a


@njit(cache=True)
def _proj_upper(y, b, bb, cap):
    excess = y @ b - cap
    if excess <= 0:
        return y.copy()
    return y - excess / bb * b


@njit(cache=True)
def _lower_point(y, a, b, mu, lam, A, AB, ap):
    u = (ap + lam * AB + 4.0 * lam * mu * A) / (1.0 + 4.0 * lam * A)
    return y + lam * (b - 4.0 * (u - mu) * a)


@njit(cache=True)
def _h(y, a, b, mu, target):
    s = y @ a - mu
    return y @ b - 2.0 * s * s - target


@njit(cache=True)
def _proj_lower(y, a, b, mu, target, bb):
    if _h(y, a, b, mu, target) >= 0:
        return y.copy()
    A = a @ a
    AB = a @ b
    ap = a @ y
    lo = 0.0
    hi = 1.0 / max(bb, 1e-300)
    while _h(_lower_point(y, a, b, mu, hi, A, AB, ap), a, b, mu, target) < 0:
        lo = hi
        hi *= 2.0
        if hi > 1e12:
            return y.copy()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _h(_lower_point(y, a, b, mu, mid, A, AB, ap), a, b, mu, target) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return _lower_point(y, a, b, mu, hi, A, AB, ap)


@njit(cache=True)
def moment_dykstra(y0, a, b, mu, r, cap, target, max_sweeps, tol):
    """Dykstra over simplex, mean slab, upper and lower second-moment sets.

    Returns the latest simplex iterate and a convergence flag.
    """
    aa = a @ a
    bb = b @ b
    x = y0.copy()
    n = x.size
    i0 = np.zeros(n)
    i1 = np.zeros(n)
    i2 = np.zeros(n)
    i3 = np.zeros(n)
    ys = x.copy()
    for _ in range(max_sweeps):
        prev = x.copy()
        y = project_simplex(x + i0)
        i0 = x + i0 - y
        x = y
        ys = y
        y = _proj_slab(x + i1, a, aa, mu, r)
        i1 = x + i1 - y
        x = y
        y = _proj_upper(x + i2, b, bb, cap)
        i2 = x + i2 - y
        x = y
        y = _proj_lower(x + i3, a, b, mu, target, bb)
        i3 = x + i3 - y
        x = y
        d = 0.0
        for i in range(n):
            d += (x[i] - prev[i]) ** 2
        if np.sqrt(d) < tol:
            return ys, True
    return ys, False


# ---------------------------------------------------------------------------
# Exact projection onto {y in simplex : (a.y, b.y) in C}, where
#   C = {(s, t) : |s| <= r, t <= U, t >= L + kappa s^2}.
# For a multiplier lam in R^2, y(lam) = proj_simplex(v - lam[0] a - lam[1] b)
# minimizes the Lagrangian; the dual is a concave function of lam.  The
# active pieces of C are enumerated (none, one edge, one corner) and the first
# candidate satisfying its optimality conditions is returned.
# ---------------------------------------------------------------------------

NEWTON_ITERS = 100


@njit(cache=True)
def _y_of(v, a, b, l0, l1):
    return project_simplex(v - l0 * a - l1 * b)


@njit(cache=True)
def _phi(v, a, b, l0, l1, y):
    d = 0.0
    for i in range(v.size):
        d += (y[i] - v[i]) ** 2
    return 0.5 * d + l0 * (a @ y) + l1 * (b @ y)


@njit(cache=True)
def _support_hessian(a, b, y):
    """A_S (I - 11'/|S|) A_S' on the support S of y (a 2x2 PSD matrix)."""
    n = 0
    sa = 0.0
    sb = 0.0
    saa = 0.0
    sab = 0.0
    sbb = 0.0
    for i in range(y.size):
        if y[i] > 0.0:
            n += 1
            sa += a[i]
            sb += b[i]
            saa += a[i] * a[i]
            sab += a[i] * b[i]
            sbb += b[i] * b[i]
    m = np.zeros((2, 2))
    if n > 0:
        m[0, 0] = saa - sa * sa / n
        m[0, 1] = sab - sa * sb / n
        m[1, 0] = m[0, 1]
        m[1, 1] = sbb - sb * sb / n
    return m


@njit(cache=True)
def _sigma(kind, l0, l1, z0, z1, L, kappa):
    """Support function of the piece of C a candidate keeps, with gradient and
    Hessian.  kind 0: the point z; kind 1: the region above the parabola."""
    g = np.zeros(2)
    h = np.zeros((2, 2))
    if kind == 0:
        g[0] = z0
        g[1] = z1
        return l0 * z0 + l1 * z1, g, h
    s = -l0 / (2.0 * kappa * l1)
    g[0] = s
    g[1] = L + kappa * s * s
    ds0 = -1.0 / (2.0 * kappa * l1)
    ds1 = -s / l1  # = l0 / (2 kappa l1^2) without underflow in l1^2
    h[0, 0] = ds0
    h[0, 1] = ds1
    h[1, 0] = 2.0 * kappa * s * ds0
    h[1, 1] = 2.0 * kappa * s * ds1
    return l1 * L - l0 * l0 / (4.0 * kappa * l1), g, h


@njit(cache=True)
def _dual_newton(v, a, b, kind, z0, z1, L, kappa, l0, l1, tol):
    """Damped Newton ascent on phi(lam) - sigma(lam).

    Returns (y, lam0, lam1, converged).  kind 1 keeps lam1 < 0.
    """
    y = _y_of(v, a, b, l0, l1)
    sig, gs, hs = _sigma(kind, l0, l1, z0, z1, L, kappa)
    f = _phi(v, a, b, l0, l1, y) - sig
    for _ in range(NEWTON_ITERS):
        g0 = a @ y - gs[0]
        g1 = b @ y - gs[1]
        if abs(g0) <= tol and abs(g1) <= tol:
            return y, l0, l1, True
        m = _support_hessian(a, b, y) + hs
        ridge = 1e-12 * (m[0, 0] + m[1, 1]) + 1e-300
        m[0, 0] += ridge
        m[1, 1] += ridge
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if det > 0.0:
            d0 = (m[1, 1] * g0 - m[0, 1] * g1) / det
            d1 = (m[0, 0] * g1 - m[1, 0] * g0) / det
            slope = g0 * d0 + g1 * d1
        else:
            slope = 0.0
        steepest = not slope > 0.0
        if steepest:
            d0, d1, slope = g0, g1, g0 * g0 + g1 * g1
        step = 1.0
        moved = False
        for _ in range(60):
            n0 = l0 + step * d0
            n1 = l1 + step * d1
            if kind == 1 and n1 >= 0.0:
                step *= 0.5
                continue
            yn = _y_of(v, a, b, n0, n1)
            sn, gn, hn = _sigma(kind, n0, n1, z0, z1, L, kappa)
            fn = _phi(v, a, b, n0, n1, yn) - sn
            # near the optimum the dual gain drops below float resolution of
            # the dual value, so a step that halves the residual also counts
            r0 = a @ yn - gn[0]
            r1 = b @ yn - gn[1]
            if fn >= f + 1e-4 * step * slope or r0 * r0 + r1 * r1 <= 0.25 * (g0 * g0 + g1 * g1):
                l0, l1, y, f, gs, hs = n0, n1, yn, fn, gn, hn
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        if steepest and step == 1.0:
            # no curvature on the current support (e.g. a single vertex):
            # the unit gradient step can be far too short, so keep doubling
            for _ in range(60):
                step *= 2.0
                n0 = l0 + step * d0
                n1 = l1 + step * d1
                if kind == 1 and n1 >= 0.0:
                    break
                yn = _y_of(v, a, b, n0, n1)
                sn, gn, hn = _sigma(kind, n0, n1, z0, z1, L, kappa)
                fn = _phi(v, a, b, n0, n1, yn) - sn
                if fn <= f:
                    break
                l0, l1, y, f, gs, hs = n0, n1, yn, fn, gn, hn
    g0 = a @ y - gs[0]
    g1 = b @ y - gs[1]
    return y, l0, l1, abs(g0) <= tol and abs(g1) <= tol


@njit(cache=True)
def _halfspace(v, c, d, tol):
    """Projection onto {y in simplex : c.y <= d} with the constraint active.

    c.y(theta) for y(theta) = proj(v - theta c) is nonincreasing and
    piecewise linear; Newton steps on the current piece, kept inside a
    bisection bracket, land on the root.  Returns (y, theta, ok); ok is False
    when the constraint is not active at the plain simplex projection.
    """
    y = project_simplex(v)
    if c @ y <= d:
        return y, 0.0, False
    lo = 0.0
    hi = 1.0
    y = project_simplex(v - hi * c)
    while c @ y > d:
        lo = hi
        hi *= 2.0
        if hi > 1e30:
            return y, hi, False
        y = project_simplex(v - hi * c)
    theta = hi
    for _ in range(200):
        res = c @ y - d
        if abs(res) <= tol:
            return y, theta, True
        if res > 0:
            lo = theta
        else:
            hi = theta
        n = 0
        sc = 0.0
        scc = 0.0
        for i in range(y.size):
            if y[i] > 0.0:
                n += 1
                sc += c[i]
                scc += c[i] * c[i]
        slope = scc - sc * sc / n if n > 0 else 0.0
        nxt = theta + res / slope if slope > 0 else 0.5 * (lo + hi)
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        theta = nxt
        y = project_simplex(v - theta * c)
        if hi - lo <= 1e-16 * hi:
            break
    return y, theta, abs(c @ y - d) <= tol


@njit(cache=True)
def _parabola(v, a, b, L, kappa, y0, tol):
    """Projection onto {y in simplex : b.y >= L + kappa (a.y)^2}, active.

    Warm start from projections onto tangent halfspaces of the parabola (a
    few rounds of sequential linearization), which fixes the multiplier's
    direction and scale, then Newton on the dual.
    """
    s = a @ y0
    theta = 0.0
    for _ in range(3):
        c = 2.0 * kappa * s * a - b
        y, th, ok = _halfspace(v, c, kappa * s * s - L, tol)
        if not ok:
            break
        theta = th
        s = a @ y
    if theta <= 0.0:
        return _dual_newton(v, a, b, 1, 0.0, 0.0, L, kappa, 0.0, -1.0, tol)
    return _dual_newton(v, a, b, 1, 0.0, 0.0, L, kappa, 2.0 * kappa * s * theta, -theta, tol)


@njit(cache=True)
def _inside(y, a, b, r, U, L, kappa, tol):
    s = a @ y
    t = b @ y
    return abs(s) <= r + tol and t <= U + tol and t >= L + kappa * s * s - tol


@njit(cache=True)
def _in_cone(l0, l1, n0, n1, m0, m1, tol):
    """Is lam a nonnegative combination of normals n and m?"""
    det = n0 * m1 - n1 * m0
    if abs(det) < 1e-14:
        return False
    al = (l0 * m1 - l1 * m0) / det
    be = (n0 * l1 - n1 * l0) / det
    scale = abs(l0) + abs(l1) + 1e-300
    return al >= -tol * scale and be >= -tol * scale


@njit(cache=True)
def _fixed_image(v, a, b, z0, z1, L, kappa, w0, w1, tol):
    """Projection onto {y : (a.y, b.y) = z}, warm-started at lam = w, with a
    cold restart if that fails."""
    y, l0, l1, ok = _dual_newton(v, a, b, 0, z0, z1, L, kappa, w0, w1, tol)
    if not ok and (w0 != 0.0 or w1 != 0.0):
        y, l0, l1, ok = _dual_newton(v, a, b, 0, z0, z1, L, kappa, 0.0, 0.0, tol)
    return y, l0, l1, ok


@njit(cache=True)
def moment_project(v, a, b, r, U, L, kappa, tol):
    """Projection of v onto the moment set (a, b scaled to unit size).

    Returns (y, ok); ok is False only if no active-set candidate qualified.
    Multipliers from the single-edge solves warm-start the corner solves,
    which matters when v is far from the set.
    """
    y0 = project_simplex(v)
    if _inside(y0, a, b, r, U, L, kappa, tol):
        return y0, True
    w = np.sqrt(max(U - L, 0.0) / kappa)
    m = min(r, w)
    yt, tht, okt = _halfspace(v, b, U, tol)
    if not okt:
        tht = 0.0
    if m <= 0.0:
        # C is the segment {0} x [L, U] (r = 0) or the point (0, U) (w = 0)
        if w > 0.0:
            # an interior point of the segment is the projection onto a.y = 0
            yl, okl = _line(v, a, tol)
            if okl and _inside(yl, a, b, r, U, L, kappa, tol):
                return yl, True
            y, l0, l1, ok = _fixed_image(v, a, b, 0.0, U, L, kappa, 0.0, tht, tol)
            if ok and l1 >= -tol * (abs(l0) + abs(l1)):
                return y, True
            y, l0, l1, ok = _fixed_image(v, a, b, 0.0, L, L, kappa, 0.0, 0.0, tol)
            if ok and l1 <= tol * (abs(l0) + abs(l1)):
                return y, True
            return y, False
        y, l0, l1, ok = _fixed_image(v, a, b, 0.0, U, L, kappa, 0.0, tht, tol)
        return y, ok
    # one active edge
    ths = np.zeros(2)
    if r < w:
        for k in range(2):
            sgn = 1.0 - 2.0 * k
            y, th, ok = _halfspace(v, sgn * a, r, tol)
            if ok:
                ths[k] = th
                if _inside(y, a, b, r, U, L, kappa, tol):
                    return y, True
    if okt and _inside(yt, a, b, r, U, L, kappa, tol):
        return yt, True
    pl0 = 0.0
    pl1 = 0.0
    s0 = a @ y0
    if b @ y0 < L + kappa * s0 * s0:
        y, l0, l1, ok = _parabola(v, a, b, L, kappa, y0, tol)
        if ok:
            pl0 = l0
            pl1 = l1
            if _inside(y, a, b, r, U, L, kappa, tol):
                return y, True
    # one active corner: solve with the image point fixed, check the multiplier
    y = y0
    for k in range(2):
        sgn = 1.0 - 2.0 * k
        s = sgn * m
        if r < w:
            y, l0, l1, ok = _fixed_image(v, a, b, s, U, L, kappa, sgn * ths[k], tht, tol)
            if ok and _in_cone(l0, l1, sgn, 0.0, 0.0, 1.0, 1e-9):
                return y, True
            y, l0, l1, ok = _fixed_image(v, a, b, s, L + kappa * r * r, L, kappa, sgn * ths[k] + pl0, pl1, tol)
            if ok and _in_cone(l0, l1, sgn, 0.0, 2.0 * kappa * s, -1.0, 1e-9):
                return y, True
        else:
            y, l0, l1, ok = _fixed_image(v, a, b, s, U, L, kappa, pl0, tht + pl1, tol)
            if ok and _in_cone(l0, l1, 0.0, 1.0, 2.0 * kappa * s, -1.0, 1e-9):
                return y, True
    return y, False


@njit(cache=True)
def _line(v, c, tol):
    """Projection onto {y in simplex : c.y = 0}."""
    y = project_simplex(v)
    if abs(c @ y) <= tol:
        return y, True
    if c @ y > 0:
        y, th, ok = _halfspace(v, c, 0.0, tol)
    else:
        y, th, ok = _halfspace(v, -c, 0.0, tol)
    return y, ok

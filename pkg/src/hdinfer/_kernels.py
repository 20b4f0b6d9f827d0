"""Coordinate-descent inner loops.

Two kernels carry almost all of the runtime:

``cd_wls``
    weighted least squares with a coordinate-wise L1 penalty (the lasso
    fit and the inner step of the logistic IRLS loop).
``cd_dual``
    the L1-penalised quadratic dual of the projection-direction program.

plus ``box_slab``, the Euclidean projection used by the primal
splitting fallback of the projection solver.

Each has a numba loop version (``*_nb``) and a numpy version (``*_np``).
The unsuffixed names dispatch according to ``HDINFER_NO_JIT``.
"""
import numpy as np

from ._jit import JIT_ENABLED, njit

STATUS_CONVERGED = 0
STATUS_MAX_SWEEPS = 1
STATUS_UNBOUNDED = 2

_UNBOUNDED = 1e12


@njit
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit
def _wls_coord(X, w, pen, beta, r, xwx, j, n):
    if xwx[j] <= 0.0:
        old = beta[j]
        if old != 0.0:
            for i in range(n):
                r[i] += X[i, j] * old
            beta[j] = 0.0
        return abs(old)
    g = 0.0
    for i in range(n):
        g += w[i] * X[i, j] * r[i]
    g = g / n + xwx[j] * beta[j]
    new = _soft(g, pen[j]) / xwx[j]
    delta = new - beta[j]
    if delta != 0.0:
        for i in range(n):
            r[i] -= X[i, j] * delta
        beta[j] = new
    return abs(delta)


@njit
def cd_wls_nb(X, w, pen, beta, r, xwx, mask, tol, max_sweeps):
    n, d = X.shape
    sweeps = 0
    dmax = np.inf
    while sweeps < max_sweeps:
        dmax = 0.0
        for j in range(d):
            if not mask[j]:
                continue
            dj = _wls_coord(X, w, pen, beta, r, xwx, j, n)
            if dj > dmax:
                dmax = dj
        sweeps += 1
        if dmax < tol:
            return sweeps, dmax
        while sweeps < max_sweeps:
            dact = 0.0
            for j in range(d):
                if beta[j] != 0.0:
                    dj = _wls_coord(X, w, pen, beta, r, xwx, j, n)
                    if dj > dact:
                        dact = dj
            sweeps += 1
            if dact < tol:
                break
    return sweeps, dmax


def cd_wls_np(X, w, pen, beta, r, xwx, mask, tol, max_sweeps):
    n, d = X.shape
    Xw = X * w[:, None]
    screened = np.flatnonzero(mask)
    sweeps = 0
    dmax = np.inf

    def coord(j):
        if xwx[j] <= 0.0:
            old = beta[j]
            if old != 0.0:
                r[:] += X[:, j] * old
                beta[j] = 0.0
            return abs(old)
        g = Xw[:, j] @ r / n + xwx[j] * beta[j]
        new = np.sign(g) * max(abs(g) - pen[j], 0.0) / xwx[j]
        delta = new - beta[j]
        if delta != 0.0:
            r[:] -= X[:, j] * delta
            beta[j] = new
        return abs(delta)

    while sweeps < max_sweeps:
        dmax = max((coord(j) for j in screened), default=0.0)
        sweeps += 1
        if dmax < tol:
            return sweeps, dmax
        while sweeps < max_sweeps:
            active = np.flatnonzero(beta)
            dact = max((coord(j) for j in active), default=0.0)
            sweeps += 1
            if dact < tol:
                break
    return sweeps, dmax


@njit
def _dual_coord(Q, b, radius, v, Qv, k, m):
    qkk = Q[k, k]
    c = 0.5 * (Qv[k] - qkk * v[k]) + b[k]
    if qkk <= 1e-14:
        if abs(c) > radius:
            return np.inf
        new = 0.0
    else:
        new = -2.0 * _soft(c, radius) / qkk
    delta = new - v[k]
    if delta != 0.0:
        for i in range(m):
            Qv[i] += Q[i, k] * delta
        v[k] = new
    return abs(delta)


@njit
def cd_dual_nb(Q, b, radius, v, Qv, tol, max_sweeps):
    m = Q.shape[0]
    sweeps = 0
    dmax = np.inf
    while sweeps < max_sweeps:
        dmax = 0.0
        for k in range(m):
            dk = _dual_coord(Q, b, radius, v, Qv, k, m)
            if dk > dmax:
                dmax = dk
        sweeps += 1
        if dmax == np.inf or np.max(np.abs(v)) > _UNBOUNDED:
            return sweeps, dmax, STATUS_UNBOUNDED
        if dmax < tol:
            return sweeps, dmax, STATUS_CONVERGED
        while sweeps < max_sweeps:
            dact = 0.0
            for k in range(m):
                if v[k] != 0.0:
                    dk = _dual_coord(Q, b, radius, v, Qv, k, m)
                    if dk > dact:
                        dact = dk
            sweeps += 1
            if dact == np.inf or np.max(np.abs(v)) > _UNBOUNDED:
                return sweeps, dact, STATUS_UNBOUNDED
            if dact < tol:
                break
    return sweeps, dmax, STATUS_MAX_SWEEPS


def cd_dual_np(Q, b, radius, v, Qv, tol, max_sweeps):
    m = Q.shape[0]
    sweeps = 0
    dmax = np.inf

    def coord(k):
        qkk = Q[k, k]
        c = 0.5 * (Qv[k] - qkk * v[k]) + b[k]
        if qkk <= 1e-14:
            if abs(c) > radius:
                return np.inf
            new = 0.0
        else:
            new = -2.0 * np.sign(c) * max(abs(c) - radius, 0.0) / qkk
        delta = new - v[k]
        if delta != 0.0:
            Qv[:] += Q[:, k] * delta
            v[k] = new
        return abs(delta)

    while sweeps < max_sweeps:
        dmax = max(coord(k) for k in range(m))
        sweeps += 1
        if dmax == np.inf or np.max(np.abs(v)) > _UNBOUNDED:
            return sweeps, dmax, STATUS_UNBOUNDED
        if dmax < tol:
            return sweeps, dmax, STATUS_CONVERGED
        while sweeps < max_sweeps:
            active = np.flatnonzero(v)
            dact = max((coord(k) for k in active), default=0.0)
            sweeps += 1
            if dact == np.inf or np.max(np.abs(v)) > _UNBOUNDED:
                return sweeps, dact, STATUS_UNBOUNDED
            if dact < tol:
                break
    return sweeps, dmax, STATUS_MAX_SWEEPS


@njit
def _clipped_dot(z, x, lo, hi, theta):
    s = 0.0
    for j in range(z.size):
        v = z[j] - theta * x[j]
        if v < lo[j]:
            v = lo[j]
        elif v > hi[j]:
            v = hi[j]
        s += x[j] * v
    return s


@njit
def box_slab_nb(z, x, lo, hi, a, b, out):
    # out = clip(z - theta x, lo, hi) with theta chosen so a <= x'out <= b
    g = _clipped_dot(z, x, lo, hi, 0.0)
    theta = 0.0
    if g > b or g < a:
        target = b if g > b else a
        t0 = 0.0
        t1 = 1.0 if g > b else -1.0
        while (_clipped_dot(z, x, lo, hi, t1) > target) == (g > b):
            t0 = t1
            t1 *= 2.0
            if abs(t1) > 1e300:
                break
        for _ in range(200):
            mid = 0.5 * (t0 + t1)
            if mid == t0 or mid == t1:
                break
            if (_clipped_dot(z, x, lo, hi, mid) > target) == (g > b):
                t0 = mid
            else:
                t1 = mid
        theta = t1
    for j in range(z.size):
        v = z[j] - theta * x[j]
        out[j] = min(max(v, lo[j]), hi[j])


def box_slab_np(z, x, lo, hi, a, b, out):
    def dot(theta):
        return float(x @ np.clip(z - theta * x, lo, hi))

    g = dot(0.0)
    theta = 0.0
    if g > b or g < a:
        up = g > b
        target = b if up else a
        t0, t1 = 0.0, (1.0 if up else -1.0)
        while (dot(t1) > target) == up and abs(t1) < 1e300:
            t0, t1 = t1, 2.0 * t1
        for _ in range(200):
            mid = 0.5 * (t0 + t1)
            if mid == t0 or mid == t1:
                break
            if (dot(mid) > target) == up:
                t0 = mid
            else:
                t1 = mid
        theta = t1
    out[:] = np.clip(z - theta * x, lo, hi)


if JIT_ENABLED:
    _cd_wls_impl, _cd_dual_impl, _box_slab_impl = cd_wls_nb, cd_dual_nb, box_slab_nb
else:
    _cd_wls_impl, _cd_dual_impl, _box_slab_impl = cd_wls_np, cd_dual_np, box_slab_np


def cd_wls(X, w, pen, beta, r, xwx, tol, max_sweeps, mask=None):
    """Minimise (1/2n) sum_i w_i (z_i - X_i b)^2 + sum_j pen_j |b_j| in place.

    ``r`` must hold the current residual ``z - X @ beta`` and ``xwx`` the
    weighted column scales ``(1/n) sum_i w_i X_ij^2``. Coordinates with
    ``mask[j]`` false are left untouched. Returns ``(sweeps, max_update)``
    where ``max_update`` comes from the last full sweep.
    """
    if mask is None:
        mask = np.ones(X.shape[1], dtype=np.bool_)
    sweeps, dmax = _cd_wls_impl(X, w, pen, beta, r, xwx, mask, float(tol), int(max_sweeps))
    return int(sweeps), float(dmax)


def cd_dual(Q, b, radius, v, Qv, tol, max_sweeps):
    """Minimise v'Qv/4 + b'v + radius*||v||_1 in place; ``Qv`` tracks ``Q @ v``.

    Returns ``(sweeps, max_update, status)``.
    """
    sweeps, dmax, status = _cd_dual_impl(Q, b, float(radius), v, Qv, float(tol), int(max_sweeps))
    return int(sweeps), float(dmax), int(status)


def box_slab(z, x, lo, hi, a, b, out=None):
    """Euclidean projection of ``z`` onto {lo <= w <= hi, a <= x'w <= b}.

    The slab multiplier theta is found by bisection on the monotone map
    theta -> x' clip(z - theta x). The endpoint on the feasible side of
    the bracket is used, so the slab constraint holds exactly.
    """
    if out is None:
        out = np.empty_like(z)
    _box_slab_impl(z, x, lo, hi, float(a), float(b), out)
    return out

"""Flat-torus geometry and periodic interpolation helpers.

Base coordinates live on the unit torus (period 1 per dimension).  Sampled
curves keep an unwrapped lift of the base coordinate so winding is explicit;
wrapping happens only at interfaces that need a fundamental-domain value.
"""

import numpy as np


def wrap(q):
    """Reduce base coordinates to [0, 1)."""
    return np.mod(q, 1.0)


def torus_dist(q0, q1):
    """Flat-torus distance, componentwise shortest representative.

    Accepts scalars or arrays of matching (broadcastable) shape; the last
    axis is treated as the coordinate axis when ndim matches.
    """
    d = np.abs(np.asarray(q0, dtype=float) - np.asarray(q1, dtype=float))
    d = np.minimum(d, 1.0 - d)
    if d.ndim == 0:
        return float(d)
    if d.shape[-1:] == (1,) or d.ndim == 1:
        return d if d.ndim == 1 else d[..., 0]
    return np.sqrt(np.sum(d * d, axis=-1))


def unwrap_closed(q, winding=None):
    """Continuous lift of a sampled closed curve on the torus.

    ``q`` is a 1-d array of wrapped samples; consecutive jumps are resolved
    to the nearest integer shift.  Returns the lift and the winding number
    implied by the closure jump (or the supplied one).
    """
    q = np.asarray(q, dtype=float)
    dq = np.diff(q)
    dq -= np.round(dq)
    lift = np.concatenate([[q[0]], q[0] + np.cumsum(dq)])
    if winding is None:
        closure = (q[0] - lift[-1]) % 1.0
        # shortest closing jump, then total displacement fixes the winding
        closing = closure if closure <= 0.5 else closure - 1.0
        winding = int(np.round(lift[-1] + closing - q[0]))
    return lift, winding


def cumtrapz_closed(y, x):
    """Cumulative trapezoid of y dx starting at 0 (open curve portion)."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    inc = 0.5 * (y[1:] + y[:-1]) * np.diff(x)
    return np.concatenate([[0.0], np.cumsum(inc)])


class PeriodicCubic:
    """Periodic Catmull-Rom interpolant on a non-uniform closed grid.

    ``t`` are strictly increasing parameters in [0, period), ``y`` the
    samples; closure wraps with the given period in ``t`` and ``jump`` in
    ``y`` (so lifted curves with winding are supported).
    """

    def __init__(self, t, y, period=1.0, jump=0.0):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if t.ndim != 1 or t.size < 4:
            raise ValueError("need at least 4 samples")
        self.t = t
        self.y = y
        self.period = float(period)
        self.jump = float(jump)
        # extended arrays: two ghost points each side
        self._te = np.concatenate([t[-2:] - period, t, t[:2] + period])
        self._ye = np.concatenate([y[-2:] - jump, y, y[:2] + jump])
        # finite-difference slopes at the extended nodes (3-pt, non-uniform)
        te, ye = self._te, self._ye
        dm = np.empty_like(te)
        dm[1:-1] = self._three_point_slope(te, ye)
        dm[0] = (ye[1] - ye[0]) / (te[1] - te[0])
        dm[-1] = (ye[-1] - ye[-2]) / (te[-1] - te[-2])
        self._me = dm

    @staticmethod
    def _three_point_slope(t, y):
        h0 = t[1:-1] - t[:-2]
        h1 = t[2:] - t[1:-1]
        return (y[2:] * h0 / h1 + y[1:-1] * (h1 / h0 - h0 / h1)
                - y[:-2] * h1 / h0) / (h0 + h1)

    def _locate(self, s):
        s = np.mod(np.asarray(s, dtype=float) - self.t[0], self.period) + self.t[0]
        k = np.searchsorted(self._te, s, side="right") - 1
        k = np.clip(k, 0, self._te.size - 2)
        return s, k

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        wind = np.floor((s - self.t[0]) / self.period)
        sm, k = self._locate(s)
        t0, t1 = self._te[k], self._te[k + 1]
        y0, y1 = self._ye[k], self._ye[k + 1]
        m0, m1 = self._me[k], self._me[k + 1]
        h = t1 - t0
        u = (sm - t0) / h
        h00 = (1 + 2 * u) * (1 - u) ** 2
        h10 = u * (1 - u) ** 2
        h01 = u * u * (3 - 2 * u)
        h11 = u * u * (u - 1)
        val = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1
        return val + wind * self.jump

    def derivative(self, s):
        sm, k = self._locate(s)
        t0, t1 = self._te[k], self._te[k + 1]
        y0, y1 = self._ye[k], self._ye[k + 1]
        m0, m1 = self._me[k], self._me[k + 1]
        h = t1 - t0
        u = (sm - t0) / h
        d00 = 6 * u * (u - 1) / h
        d10 = (1 - u) * (1 - 3 * u)
        d01 = -d00
        d11 = u * (3 * u - 2)
        return d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1


def bisect_root(fun, lo, hi, iters=80):
    """Plain bisection for a scalar sign change; returns the midpoint."""
    flo = fun(lo)
    if flo == 0.0:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if fm == 0.0:
            return mid
        if (flo < 0) == (fm < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def hausdorff(a, b, q_cols):
    """Hausdorff distance between point sets in T*M (torus metric in q).

    ``a``, ``b`` are (k, m) arrays whose first ``q_cols`` columns are base
    coordinates; the rest are momenta (Euclidean).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        return np.inf

    def one_sided(x, y):
        dq = np.abs(x[:, None, :q_cols] - y[None, :, :q_cols])
        dq = np.minimum(dq, 1.0 - dq)
        dp = x[:, None, q_cols:] - y[None, :, q_cols:]
        d2 = np.sum(dq * dq, axis=-1) + np.sum(dp * dp, axis=-1)
        return np.max(np.min(np.sqrt(d2), axis=1))

    return max(one_sided(a, b), one_sided(b, a))

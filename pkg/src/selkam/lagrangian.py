"""Exact Lagrangian representations with Liouville primitives.

A dim-1 Lagrangian is a closed sampled curve t -> (q(t), p(t)) in T*T^1 with
an unwrapped base lift and a primitive S satisfying dS = p dq along the
curve; dim-2 objects are restricted to graphs dv over a periodic grid.  The
stored primitive is anchored to S = 0 at the first sample; ``s_offset``
records the raw (transport or potential) value there so selector pipelines
can undo the normalization.
"""

from dataclasses import dataclass, field

import numpy as np

from . import hamcore
from .torus import PeriodicCubic, cumtrapz_closed, unwrap_closed, wrap

__all__ = [
    "ExactLagrangian",
    "ApproxSequence",
    "ExactnessReport",
    "ExactnessError",
    "SpectralFun",
    "from_graph",
    "from_flow",
    "from_parametric",
    "verify_exactness",
    "mollify_sequence",
    "line_integral_check",
    "resample_uniform_speed",
    "save_lagrangian",
    "load_lagrangian",
]

MIN_GRID = 64
EXACTNESS_TOL = 1e-6          # scaled by arc length
LOOP_TOL = 1e-8               # scaled by arc length, for closed-loop theta integral
EPS_ARC_FRACTION = 1.0 / 1024
RESAMPLE_MAX_ROUNDS = 48
RESAMPLE_BUDGET = 400_000


class ExactnessError(ValueError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class SpectralFun:
    """Trigonometric interpolant of a smooth periodic function from samples."""

    def __init__(self, samples):
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        c = np.fft.rfft(samples) / n
        keep = np.abs(c) > 1e-14 * max(1.0, np.max(np.abs(c)))
        keep[0] = True
        self.k = np.nonzero(keep)[0]
        self.c = c[self.k]
        # real-series weights: interior modes count twice, Nyquist once
        w = np.full(self.k.shape, 2.0)
        w[self.k == 0] = 1.0
        if n % 2 == 0:
            w[self.k == n // 2] = 1.0
        self.w = w
        self.n = n

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        ph = 2 * np.pi * np.multiply.outer(x, self.k)
        return (np.cos(ph) @ (self.w * self.c.real)
                - np.sin(ph) @ (self.w * self.c.imag))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        ph = 2 * np.pi * np.multiply.outer(x, self.k)
        fac = 2 * np.pi * self.k
        return (-np.sin(ph) @ (fac * self.w * self.c.real)
                - np.cos(ph) @ (fac * self.w * self.c.imag))


@dataclass
class ExactLagrangian:
    """Sampled exact Lagrangian with anchored Liouville primitive."""

    dim: int
    kind: str                     # graph | parametric | flowed
    t: np.ndarray                 # (m,) parameters in [0, 1)
    q: np.ndarray                 # (m,) unwrapped lift (dim 1) or (m, 2) grid
    p: np.ndarray
    S: np.ndarray                 # anchored: S[0] = 0
    s_offset: float
    winding: int
    lipschitz_bound: float
    pmax: float
    grid_shape: tuple = None
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def interp_q(self):
        if "q" not in self._cache:
            self._cache["q"] = PeriodicCubic(self.t, self.q, jump=float(self.winding))
        return self._cache["q"]

    def interp_p(self):
        if "p" not in self._cache:
            self._cache["p"] = PeriodicCubic(self.t, self.p)
        return self._cache["p"]

    def interp_S(self):
        if "S" not in self._cache:
            self._cache["S"] = PeriodicCubic(self.t, self.S)
        return self._cache["S"]

    def arc_length(self):
        dq = np.diff(np.append(self.q, self.q[0] + self.winding))
        dp = np.diff(np.append(self.p, self.p[0]))
        return float(np.sum(np.hypot(dq, dp)))

    def primitive_at(self, s):
        """Primitive at arbitrary parameters, quadrature-consistent with S.

        Integrates p dq from the nearest sample node on the left, so values
        at the nodes reproduce the stored S exactly.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        smod = np.mod(s, 1.0)
        idx = np.searchsorted(self.t, smod, side="right") - 1
        idx = np.clip(idx, 0, self.t.size - 1)
        fq, fp = self.interp_q(), self.interp_p()
        nodes = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
        wts = np.array([5.0, 8.0, 5.0]) / 9.0
        t0 = self.t[idx]
        h = smod - t0
        out = self.S[idx].copy()
        for x, w in zip(nodes, wts):
            u = 0.5 * (t0 + smod) + 0.5 * h * x
            out += 0.5 * h * w * fp(u) * fq.derivative(u)
        return out if out.size > 1 else float(out[0])

    def phase_points(self):
        """Samples as an (m, 2n) array [q (wrapped), p]."""
        if self.dim == 1:
            return np.column_stack([wrap(self.q), self.p])
        return np.column_stack([wrap(self.q), self.p])


@dataclass
class ApproxSequence:
    """Equi-Lipschitz approximating sequence converging to a Lipschitz target."""

    entries: list
    equilip_const: float
    limit: dict                   # arrays t, q, p, S of the target
    sup_dists: np.ndarray         # per level, distance to the limit
    consecutive_dists: np.ndarray
    widths: np.ndarray


@dataclass
class ExactnessReport:
    max_interval_residual: float
    loop_residual: float
    arc_length: float
    ok: bool

    def __bool__(self):
        return self.ok


# ---------------------------------------------------------------------------
# helpers


def _gauss3_segment_integral(fq, fp, t):
    """Integral of p dq per parameter interval, 3-point Gauss on interpolants."""
    nodes = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
    wts = np.array([5.0, 8.0, 5.0]) / 9.0
    t0 = t[:-1]
    t1 = t[1:]
    out = np.zeros(t.size)  # includes the closing interval at the end
    h = t1 - t0
    for x, w in zip(nodes, wts):
        s = 0.5 * (t0 + t1) + 0.5 * h * x
        out[:-1] += 0.5 * h * w * fp(s) * fq.derivative(s)
    hc = (t[0] + 1.0) - t[-1]
    for x, w in zip(nodes, wts):
        s = 0.5 * (t[-1] + t[0] + 1.0) + 0.5 * hc * x
        out[-1] += 0.5 * hc * w * fp(s) * fq.derivative(s)
    return out


def _integrate_primitive(t, q, p, winding):
    """Anchored primitive S(t) = int p dq along the curve, cubic quadrature."""
    fq = PeriodicCubic(t, q, jump=float(winding))
    fp = PeriodicCubic(t, p)
    seg = _gauss3_segment_integral(fq, fp, t)
    S = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    loop = float(np.sum(seg))
    return S, loop


def _loop_integral_trapz(q, p, winding):
    dq = np.diff(np.append(q, q[0] + winding))
    pm = 0.5 * (p + np.roll(p, -1))
    return float(np.sum(pm * dq))


def _lipschitz_of_samples(t, arrays, winding_jumps):
    """Max difference quotient over consecutive samples (closed)."""
    dt = np.diff(np.append(t, t[0] + 1.0))
    worst = 0.0
    for arr, jump in zip(arrays, winding_jumps):
        d = np.diff(np.append(arr, arr[0] + jump))
        worst = max(worst, float(np.max(np.abs(d) / dt)))
    return worst


def _as_curve_arrays(target):
    if isinstance(target, ExactLagrangian):
        return target.t, target.q, target.p, target.S, target.winding
    t, q, p, S = (np.asarray(a, dtype=float) for a in target)
    lift, winding = unwrap_closed(q)
    return t, lift, p, S, winding


# ---------------------------------------------------------------------------
# constructors


def from_graph(v, dim=1):
    """Graph of dv over the torus with primitive v (anchored).

    ``v`` is a uniform periodic sample array: (N,) for dim 1 (N >= 64) or
    (N1, N2) for dim 2.
    """
    v = np.asarray(v, dtype=float)
    if dim == 1:
        if v.ndim != 1 or v.size < MIN_GRID:
            raise ValueError(f"need at least {MIN_GRID} samples per dimension")
        n = v.size
        t = np.arange(n) / n
        vf = SpectralFun(v)
        p = vf.derivative(t)
        lip = _lipschitz_of_samples(t, [t, p], [1.0, 0.0])
        return ExactLagrangian(
            dim=1, kind="graph", t=t, q=t.copy(), p=p, S=v - v[0],
            s_offset=float(v[0]), winding=1, lipschitz_bound=lip,
            pmax=float(np.max(np.abs(p))), meta={"v_samples": v.copy()})
    if v.ndim != 2 or min(v.shape) < MIN_GRID:
        raise ValueError(f"need at least {MIN_GRID} samples per dimension")
    n1, n2 = v.shape
    g1 = np.arange(n1) / n1
    g2 = np.arange(n2) / n2
    k1 = np.fft.fftfreq(n1, d=1.0 / n1)
    k2 = np.fft.fftfreq(n2, d=1.0 / n2)
    vh = np.fft.fft2(v)
    p1 = np.real(np.fft.ifft2(vh * (2j * np.pi * k1)[:, None]))
    p2 = np.real(np.fft.ifft2(vh * (2j * np.pi * k2)[None, :]))
    Q = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
    P = np.stack([p1, p2], axis=-1).reshape(-1, 2)
    S = (v - v[0, 0]).reshape(-1)
    lip = max(float(np.max(np.abs(np.diff(p1, axis=0)))) * n1,
              float(np.max(np.abs(np.diff(p2, axis=1)))) * n2, 1.0)
    return ExactLagrangian(
        dim=2, kind="graph", t=np.arange(Q.shape[0], dtype=float) / Q.shape[0],
        q=Q, p=P, S=S, s_offset=float(v[0, 0]), winding=0,
        lipschitz_bound=lip, pmax=float(np.max(np.hypot(P[:, 0], P[:, 1]))),
        grid_shape=(n1, n2), meta={"v_samples": v.copy()})


def from_flow(v, H, T, steps, initial_samples=4096):
    """Image of the graph of dv under the time-T Hamiltonian flow (dim 1).

    The primitive is transported along trajectories by accumulating
    p . H_p - H and cross-checked against re-integration of p dq along the
    final curve; the stored S is the curve integral (anchored), with the
    transported value at the anchor kept as ``s_offset``.  Sampling is
    refined adaptively until consecutive phase-space gaps are below
    1/1024 of the total length.
    """
    if H.dim != 1:
        raise NotImplementedError("flowed Lagrangians are built over T^1 only")
    if T < 0:
        raise ValueError("T must be >= 0")
    v = np.asarray(v, dtype=float)
    if v.size < MIN_GRID:
        raise ValueError(f"need at least {MIN_GRID} samples")
    vf = SpectralFun(v)

    if T == 0:
        n = max(v.size, 1024)
        t = np.arange(n) / n
        p = vf.derivative(t)
        lip = _lipschitz_of_samples(t, [t, p], [1.0, 0.0])
        return ExactLagrangian(
            dim=1, kind="flowed", t=t, q=t.copy(), p=p, S=vf(t) - vf(0.0),
            s_offset=float(vf(np.array([0.0]))[0]), winding=1,
            lipschitz_bound=lip, pmax=float(np.max(np.abs(p))),
            meta={"H_source": H.source, "T": 0.0, "steps": 0,
                  "v_samples": v.copy(), "transport_consistency": 0.0})

    dt = T / steps

    def shoot(params):
        x0 = params
        p0 = vf.derivative(params)
        Q, P, act = hamcore.integrate(H, x0, p0, dt, steps, accumulate_action=True)
        return Q, P, vf(params) + act

    t = np.arange(initial_samples) / initial_samples
    Q, P, raw = shoot(t)

    def refine(t, Q, P, raw, bad):
        tc = np.append(t, t[0] + 1.0)
        widths = tc[bad + 1] - tc[bad]
        splittable = widths > 4e-16
        if not np.all(splittable):
            # the hyperbolic stretching has outrun double precision: the
            # offending parameter intervals cannot be subdivided further
            raise RuntimeError(
                "flowed curve cannot be resolved in double precision "
                f"(exp stretching ~ e^(lambda T) too large for T = {T})")
        mids = 0.5 * (tc[bad] + tc[bad + 1])
        Qm, Pm, rawm = shoot(np.mod(mids, 1.0))
        # lift continuity: a start wrapped past 1 shifts the branch by the winding
        Qm += np.floor(mids)
        t = np.concatenate([t, np.mod(mids, 1.0)])
        order = np.argsort(t)
        if t.size > RESAMPLE_BUDGET:
            raise RuntimeError("resampling budget exceeded while resolving the flowed curve")
        return (t[order], np.concatenate([Q, Qm])[order],
                np.concatenate([P, Pm])[order], np.concatenate([raw, rawm])[order])

    # pass 1: uniform phase-space density at the arc-length bound
    for _ in range(RESAMPLE_MAX_ROUNDS):
        dq = np.diff(np.append(Q, Q[0] + 1.0))
        dp = np.diff(np.append(P, P[0]))
        ds = np.hypot(dq, dp)
        eps = EPS_ARC_FRACTION * float(np.sum(ds))
        bad = np.nonzero(ds > eps)[0]
        if bad.size == 0:
            break
        t, Q, P, raw = refine(t, Q, P, raw, bad)
    else:
        raise RuntimeError("resampling budget exceeded while resolving the flowed curve")

    # pass 2: curvature control so the exactness budget holds per interval
    for _ in range(RESAMPLE_MAX_ROUNDS):
        length = float(np.sum(np.hypot(np.diff(np.append(Q, Q[0] + 1.0)),
                                       np.diff(np.append(P, P[0])))))
        budget = 0.25 * EXACTNESS_TOL * max(length, 1.0)
        fq = PeriodicCubic(t, Q, jump=1.0)
        fp = PeriodicCubic(t, P)
        seg = _gauss3_segment_integral(fq, fp, t)
        qc = np.append(Q, Q[0] + 1.0)
        pc = np.append(P, P[0])
        trap = 0.5 * (pc[1:] + pc[:-1]) * np.diff(qc)
        bad = np.nonzero(np.abs(seg - trap) > budget)[0]
        bad = bad[bad < t.size - 1]  # closing interval handled by density pass
        if bad.size == 0:
            break
        t, Q, P, raw = refine(t, Q, P, raw, bad)
    else:
        raise RuntimeError("resampling budget exceeded while resolving the flowed curve")

    S, loop = _integrate_primitive(t, Q, P, winding=1)
    raw_anchored = raw - raw[0]
    consistency = float(np.max(np.abs(S - raw_anchored)))
    lip = _lipschitz_of_samples(t, [Q, P], [1.0, 0.0])
    return ExactLagrangian(
        dim=1, kind="flowed", t=t, q=Q, p=P, S=S, s_offset=float(raw[0]),
        winding=1, lipschitz_bound=lip, pmax=float(np.max(np.abs(P))),
        meta={"H_source": H.source, "T": float(T), "steps": steps,
              "v_samples": v.copy(), "loop_residual": loop,
              "transport_consistency": consistency})


def from_parametric(t, q, p):
    """Closed sampled curve (t, q(t), p(t)); primitive by line integration.

    Rejects curves whose loop integral of p dq exceeds the exactness
    tolerance (they carry no primitive).
    """
    t = np.asarray(t, dtype=float)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    lift, winding = unwrap_closed(q)
    dq = np.diff(np.append(lift, lift[0] + winding))
    dp = np.diff(np.append(p, p[0]))
    length = float(np.sum(np.hypot(dq, dp)))
    loop = _loop_integral_trapz(lift, p, winding)
    if abs(loop) > max(EXACTNESS_TOL * length, 1e-12):
        raise ExactnessError("curve is not exact: nonzero loop integral of p dq", abs(loop))
    S, _ = _integrate_primitive(t, lift, p, winding)
    lip = _lipschitz_of_samples(t, [lift, p], [float(winding), 0.0])
    return ExactLagrangian(
        dim=1, kind="parametric", t=t, q=lift, p=p, S=S, s_offset=0.0,
        winding=winding, lipschitz_bound=lip,
        pmax=float(np.max(np.abs(p))), meta={})


# ---------------------------------------------------------------------------
# verification


def verify_exactness(L):
    """Residuals of dS = p dq on the samples.

    Per-interval: |Delta S - trapz(p dq)| maximized over consecutive sample
    pairs (including the closing pair); plus the full loop integral of
    p dq.  The report passes when both are below the exactness budget
    scaled by arc length.
    """
    if L.dim == 2:
        return _verify_exactness_grid(L)
    qc = np.append(L.q, L.q[0] + L.winding)
    pc = np.append(L.p, L.p[0])
    Sc = np.append(L.S, L.S[0])
    seg = 0.5 * (pc[1:] + pc[:-1]) * np.diff(qc)
    resid = float(np.max(np.abs(np.diff(Sc) - seg)))
    # loop residual from the interpolated curve (same quadrature order as S)
    loop = abs(_integrate_primitive(L.t, L.q, L.p, L.winding)[1])
    length = L.arc_length()
    ok = resid <= EXACTNESS_TOL * max(length, 1.0) and loop <= max(LOOP_TOL * length, 1e-12)
    return ExactnessReport(max_interval_residual=resid, loop_residual=loop,
                           arc_length=length, ok=ok)


def _verify_exactness_grid(L):
    n1, n2 = L.grid_shape
    P = L.p.reshape(n1, n2, 2)
    S = L.S.reshape(n1, n2)
    h1, h2 = 1.0 / n1, 1.0 / n2
    # dS vs p dq along both grid directions, periodic closure included
    d1 = np.roll(S, -1, axis=0) - S
    d2 = np.roll(S, -1, axis=1) - S
    m1 = 0.5 * (P[..., 0] + np.roll(P[..., 0], -1, axis=0)) * h1
    m2 = 0.5 * (P[..., 1] + np.roll(P[..., 1], -1, axis=1)) * h2
    resid = max(float(np.max(np.abs(d1 - m1))), float(np.max(np.abs(d2 - m2))))
    loop = max(float(np.max(np.abs(np.sum(P[..., 0], axis=0) * h1))),
               float(np.max(np.abs(np.sum(P[..., 1], axis=1) * h2))))
    length = float(n1 * h1 + n2 * h2)
    ok = resid <= EXACTNESS_TOL * max(length, 1.0) and loop <= 1e-8
    return ExactnessReport(max_interval_residual=resid, loop_residual=loop,
                           arc_length=length, ok=ok)


def _theta_integral(L, a, b):
    """int p dq over the parameter range [a, b], knot-aligned Gauss-2.

    The sample knots carry the adaptive resolution of the curve, so the
    quadrature is split at every knot; Gauss-2 keeps this independent of
    the Gauss-3 rule that defines the stored primitive.
    """
    fq, fp = L.interp_q(), L.interp_p()
    # split points: a, every interior knot (tiled across windings), b
    lo, hi = (a, b) if a <= b else (b, a)
    knots = []
    base = np.floor(lo)
    k = base
    while k <= np.ceil(hi):
        knots.append(L.t + k)
        k += 1
    knots = np.concatenate(knots)
    knots = knots[(knots > lo) & (knots < hi)]
    pts = np.concatenate([[lo], knots, [hi]])
    s0, s1 = pts[:-1], pts[1:]
    h = s1 - s0
    nodes = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    total = 0.0
    for x in nodes:
        s = 0.5 * (s0 + s1) + 0.5 * h * x
        total += float(np.sum(0.5 * h * fp(s) * fq.derivative(s)))
    return total if a <= b else -total


def line_integral_check(L, curve):
    """|int_{iota(c)} p dq - (S(c_1) - S(c_0))| for a parameter-space path.

    ``curve`` is an array of parameter waypoints (dim 1, piecewise linear
    path, possibly non-monotone) or base points (dim 2, graphs).
    """
    if L.dim == 2:
        return _line_integral_check_grid(L, curve)
    c = np.asarray(curve, dtype=float)
    theta = sum(_theta_integral(L, c[i], c[i + 1]) for i in range(c.size - 1))
    dS = float(L.primitive_at(c[-1]) - L.primitive_at(c[0]))
    return abs(theta - dS)


def _line_integral_check_grid(L, curve):
    c = np.asarray(curve, dtype=float)
    v = L.meta["v_samples"]
    n1, n2 = v.shape
    # spectral evaluation of v and its gradient along the path
    k1 = np.fft.fftfreq(n1, d=1.0 / n1)
    k2 = np.fft.fftfreq(n2, d=1.0 / n2)
    vh = np.fft.fft2(v) / (n1 * n2)
    s = np.linspace(0.0, 1.0, 128 * (c.shape[0] - 1) + 1)
    path = np.stack([np.interp(s, np.linspace(0, 1, c.shape[0]), c[:, j])
                     for j in range(2)], axis=-1)
    ph = np.exp(2j * np.pi * (np.multiply.outer(path[:, 0], k1)[:, :, None]
                              + np.multiply.outer(path[:, 1], k2)[:, None, :]))
    vv = np.real(np.tensordot(ph, vh, axes=([1, 2], [0, 1])))
    g1 = np.real(np.tensordot(ph, vh * (2j * np.pi * k1)[:, None], axes=([1, 2], [0, 1])))
    g2 = np.real(np.tensordot(ph, vh * (2j * np.pi * k2)[None, :], axes=([1, 2], [0, 1])))
    dq = np.diff(path, axis=0)
    theta = float(np.sum(0.5 * ((g1[1:] + g1[:-1]) * dq[:, 0] + (g2[1:] + g2[:-1]) * dq[:, 1])))
    dS = float(vv[-1] - vv[0])
    return abs(theta - dS)


# ---------------------------------------------------------------------------
# approximating sequences


def _smooth_periodic(values, width):
    """Convolve with a wrapped Gaussian of the given width (unit period)."""
    n = values.size
    k = np.fft.rfftfreq(n, d=1.0 / n)
    damp = np.exp(-0.5 * (2 * np.pi * k * width) ** 2)
    return np.fft.irfft(np.fft.rfft(values) * damp, n)


def mollify_sequence(target, levels=4, base_width=1.0 / 16, resample=4096):
    """Equi-Lipschitz smoothings of a Lipschitz curve, widths halving per level.

    Each level smooths the parametrization with a periodic kernel, restores
    exactness with an O(width^2) momentum correction, and re-integrates the
    primitive.  Certification fails if the per-level Lipschitz constants
    grow by more than a factor 2 over the target's.
    """
    t, q, p, S, winding = _as_curve_arrays(target)
    dq = np.diff(np.append(q, q[0] + winding))
    dp = np.diff(np.append(p, p[0]))
    length = float(np.sum(np.hypot(dq, dp)))
    loop = _loop_integral_trapz(q, p, winding)
    if abs(loop) > max(EXACTNESS_TOL * length, 1e-12):
        raise ExactnessError("mollification target is not exact", abs(loop))

    # resample at uniform phase-space speed: kernel widths then have a
    # parametrization-independent meaning and the Lipschitz constant is tame
    s = np.concatenate([[0.0], np.cumsum(np.hypot(dq, dp))])
    s /= s[-1]
    tu = np.arange(resample) / resample
    tsrc = np.interp(tu, s, np.append(t, t[0] + 1.0))
    fq = PeriodicCubic(t, q, jump=float(winding))
    fp = PeriodicCubic(t, p)
    fS = PeriodicCubic(t, S)
    qu = fq(tsrc)
    pu = fp(tsrc)
    Su = fS(tsrc)
    qper = qu - winding * tu

    lip0 = _lipschitz_of_samples(tu, [qu, pu, Su], [float(winding), 0.0, 0.0])
    entries = []
    widths = base_width * 0.5 ** np.arange(levels)
    sup_dists = []
    for w in widths:
        qk = winding * tu + _smooth_periodic(qper, w)
        pk = _smooth_periodic(pu, w)
        # exactness correction: remove the loop residual along dq
        dqk = PeriodicCubic(tu, qk, jump=float(winding))
        resid = _loop_integral_trapz(qk, pk, winding)
        slope = dqk.derivative(tu)
        denom = float(np.mean(slope * slope))
        if denom > 1e-12:
            pk = pk - resid * slope / denom
        Sk, _ = _integrate_primitive(tu, qk, pk, winding)
        Sk = Sk - Sk[0]
        lipk = _lipschitz_of_samples(tu, [qk, pk, Sk], [float(winding), 0.0, 0.0])
        if lipk > 2.0 * max(lip0, 1e-12):
            raise RuntimeError(
                f"equi-Lipschitz certification failed: level constant {lipk:.3g} "
                f"exceeds twice the target's {lip0:.3g}")
        entry = ExactLagrangian(
            dim=1, kind="parametric", t=tu, q=qk, p=pk, S=Sk, s_offset=0.0,
            winding=winding, lipschitz_bound=lipk,
            pmax=float(np.max(np.abs(pk))), meta={"width": float(w)})
        entries.append(entry)
        sup_dists.append(max(float(np.max(np.abs(qk - qu))),
                             float(np.max(np.abs(pk - pu))),
                             float(np.max(np.abs(Sk - (Su - Su[0]))))))

    consec = [max(float(np.max(np.abs(entries[i + 1].q - entries[i].q))),
                  float(np.max(np.abs(entries[i + 1].p - entries[i].p))))
              for i in range(len(entries) - 1)]
    lips = [e.lipschitz_bound for e in entries]
    return ApproxSequence(
        entries=entries, equilip_const=float(max(lips + [lip0])),
        limit={"t": tu, "q": qu, "p": pu, "S": Su - Su[0], "winding": winding},
        sup_dists=np.asarray(sup_dists), consecutive_dists=np.asarray(consec),
        widths=widths)


def resample_uniform_speed(L, m=None):
    """Reparametrize a dim-1 Lagrangian to uniform phase-space speed."""
    m = m or L.t.size
    dq = np.diff(np.append(L.q, L.q[0] + L.winding))
    dp = np.diff(np.append(L.p, L.p[0]))
    s = np.concatenate([[0.0], np.cumsum(np.hypot(dq, dp))])
    s /= s[-1]
    tc = np.append(L.t, L.t[0] + 1.0)
    tnew = np.interp(np.arange(m) / m, s, tc)
    fq, fp = L.interp_q(), L.interp_p()
    q = fq(tnew)
    p = fp(tnew)
    S = np.atleast_1d(L.primitive_at(tnew))
    tt = np.arange(m) / m
    return ExactLagrangian(
        dim=1, kind=L.kind, t=tt, q=q, p=p, S=S - S[0], s_offset=L.s_offset + float(S[0]),
        winding=L.winding, lipschitz_bound=_lipschitz_of_samples(tt, [q, p], [float(L.winding), 0.0]),
        pmax=L.pmax, meta=dict(L.meta))


# ---------------------------------------------------------------------------
# file format: header `dim n kind K`, rows `t q1 [q2] p1 [p2] S`


def save_lagrangian(L, path):
    with open(path, "w") as fh:
        fh.write(f"dim {L.dim} kind {L.kind}\n")
        if L.dim == 1:
            for row in zip(L.t, wrap(L.q), L.p, L.S):
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        else:
            for row in zip(L.t, L.q[:, 0], L.q[:, 1], L.p[:, 0], L.p[:, 1], L.S):
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_lagrangian(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "dim" or header[2] != "kind":
            raise ValueError("malformed Lagrangian file header")
        dim = int(header[1])
        kind = header[3]
        data = np.loadtxt(fh, ndmin=2)
    if dim == 1:
        t, q, p, S = data.T
        lift, winding = unwrap_closed(q)
        return ExactLagrangian(
            dim=1, kind=kind, t=t, q=lift, p=p, S=S, s_offset=0.0,
            winding=winding,
            lipschitz_bound=_lipschitz_of_samples(t, [lift, p], [float(winding), 0.0]),
            pmax=float(np.max(np.abs(p))), meta={})
    t = data[:, 0]
    Q = data[:, 1:3]
    P = data[:, 3:5]
    S = data[:, 5]
    side = int(round(np.sqrt(t.size)))
    return ExactLagrangian(
        dim=2, kind=kind, t=t, q=Q, p=P, S=S, s_offset=0.0, winding=0,
        lipschitz_bound=1.0, pmax=float(np.max(np.hypot(P[:, 0], P[:, 1]))),
        grid_shape=(side, side), meta={})

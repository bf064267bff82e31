"""Weak-KAM solver: Lax-Oleinik iteration, critical value, Aubry/Mane sets.

The descending operator

    (T u)(q) = min_{q'} [ u(q') + dt * l((q - q')/dt, q) ]

with l the fiberwise Legendre transform of H drives grid functions to the
critical solution up to a linear drift; the drift rate is the critical
value.  The ascending operator runs the reversed cost.  Aubry and Mane
sets are assembled from maximal invariant sets of the graphs of the
computed family of critical subsolutions (an outer approximation: any
finite run samples finitely many subsolutions, which every report notes).
"""

from dataclasses import dataclass, field

import numpy as np

from .torus import wrap

__all__ = [
    "WeakKamSolution",
    "LegendreTable",
    "lax_oleinik_step",
    "critical_value",
    "critical_value_infmax",
    "subsolution_check",
    "aubry_set",
    "mane_set",
    "weak_kam_family",
    "smooth_subsolution",
]

FP_TOL = 1e-10
NUM_TOL = 1e-3


class LegendreTable:
    """Cached fiberwise Legendre transform l(v, q) on a velocity grid.

    Mechanical Hamiltonians use the closed form |v|^2/2 - V(q); otherwise
    the supremum over p is solved by a safeguarded Newton iteration per
    (velocity, base) pair and tabulated.
    """

    def __init__(self, H, velocities, q_grid):
        self.H = H
        self.velocities = np.asarray(velocities, dtype=float)
        self.q_grid = np.asarray(q_grid, dtype=float)
        if H.is_mechanical:
            V = H.potential(self.q_grid)
            self.table = 0.5 * self.velocities[:, None] ** 2 - V[None, :]
        else:
            self.table = self._solve_table()

    def _solve_table(self):
        V, Q = np.meshgrid(self.velocities, self.q_grid, indexing="ij")
        P = V.copy()      # mechanical-like initial guess
        for _ in range(80):
            g = self.H.grad_p(Q, P) - V
            hpp = np.maximum(self.H.hess_pp(Q, P)[..., 0, 0], 1e-9)
            step = g / hpp
            P = P - np.clip(step, -1.0, 1.0)
            if np.max(np.abs(g)) < 1e-12:
                break
        else:
            resid = float(np.max(np.abs(self.H.grad_p(Q, P) - V)))
            if resid > 1e-8:
                raise RuntimeError(
                    f"Legendre transform did not converge (residual {resid:.2e}); "
                    "is the Hamiltonian fiberwise convex?")
        return P * V - self.H.value(Q, P)


def _velocity_bound(H, margin=1.5):
    """Speed bound for descent minimizers from the Hamiltonian's slope."""
    q = np.linspace(0.0, 1.0, 64, endpoint=False)
    if H.dim == 1:
        if H.is_mechanical:
            Vg = H.potential(q)
            return float(np.sqrt(2.0 * max(Vg.max() - Vg.min(), 0.0) + 1.0) + margin)
        p = np.linspace(-4, 4, 33)
        return float(np.max(np.abs(H.grad_p(*np.meshgrid(q, p, indexing="ij")))) + margin)
    Vg = H.potential(np.stack(np.meshgrid(q, q, indexing="ij"), axis=-1))
    return float(np.sqrt(2.0 * max(Vg.max() - Vg.min(), 0.0) + 1.0) + margin)


def lax_oleinik_step(u, H, dt, direction="descending", v_max=None, table=None):
    """One Lax-Oleinik step on a periodic grid function.

    dim 1: any Tonelli H (tabulated Legendre transform); dim 2: mechanical
    H only, where the quadratic cost separates into per-axis passes.
    """
    u = np.asarray(u, dtype=float)
    if not 0 < dt <= 0.5:
        raise ValueError("dt must lie in (0, 0.5]")
    v_max = v_max or _velocity_bound(H)
    if u.ndim == 2:
        return _lo_step_2d(u, H, dt, direction, v_max)
    n = u.size
    h = 1.0 / n
    K = min(int(np.ceil(v_max * dt / h)), n // 2)
    shifts = np.arange(-K, K + 1)
    q = np.arange(n) / n
    if H.is_mechanical:
        quad = (shifts * h) ** 2 / (2 * dt)
        stack = np.empty((shifts.size, n))
        for i, k in enumerate(shifts):
            stack[i] = np.roll(u, k) + quad[i]
        env = np.min(stack, axis=0) if direction == "descending" else None
        if direction == "descending":
            return env - dt * H.potential(q)
        stack = np.empty((shifts.size, n))
        for i, k in enumerate(shifts):
            stack[i] = np.roll(u, k) - quad[i]
        return np.max(stack, axis=0) + dt * H.potential(q)
    tab = table
    if tab is None:
        tab = LegendreTable(H, shifts * h / dt, q)
    stack = np.empty((shifts.size, n))
    if direction == "descending":
        # u(q - k h) + dt*l(k h / dt, q)
        for i, k in enumerate(shifts):
            stack[i] = np.roll(u, k) + dt * tab.table[i]
        return np.min(stack, axis=0)
    for i, k in enumerate(shifts):
        stack[i] = np.roll(u, -k) - dt * tab.table[i]
    return np.max(stack, axis=0)


def _lo_step_2d(u, H, dt, direction, v_max):
    if not H.is_mechanical:
        raise NotImplementedError("dim-2 steps need a mechanical Hamiltonian")
    n1, n2 = u.shape
    out = u.copy()
    sign = 1.0 if direction == "descending" else -1.0
    for axis, n in ((0, n1), (1, n2)):
        h = 1.0 / n
        K = min(int(np.ceil(v_max * dt / h)), n // 2)
        shifts = np.arange(-K, K + 1)
        quad = (shifts * h) ** 2 / (2 * dt)
        stack = np.empty((shifts.size,) + u.shape)
        for i, k in enumerate(shifts):
            stack[i] = np.roll(out, k, axis=axis) + sign * quad[i]
        out = np.min(stack, axis=0) if direction == "descending" else np.max(stack, axis=0)
    g1 = np.arange(n1) / n1
    g2 = np.arange(n2) / n2
    Vg = H.potential(np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1))
    return out - sign * dt * Vg


@dataclass
class WeakKamSolution:
    u: np.ndarray
    alpha: float
    residual: float
    grid: np.ndarray
    dt: float
    iterations: int
    aubry_pts: np.ndarray = None
    mane_pts: np.ndarray = None
    meta: dict = field(default_factory=dict)


def critical_value(H, grid=1024, dt=0.1, max_iters=4000, fp_tol=FP_TOL,
                   u0=None, direction="descending", seed=None):
    """Critical value by iterating the Lax-Oleinik operator to its fixed point.

    The per-step decrement converges to dt * alpha; alpha averages the
    last quarter of the decrements after the transient and the certificate
    carries the critical solution and the fixed-point residual.
    """
    if H.dim == 1:
        q = np.arange(grid) / grid
        u = np.zeros(grid) if u0 is None else np.asarray(u0, dtype=float).copy()
    else:
        q = np.arange(grid) / grid
        u = np.zeros((grid, grid)) if u0 is None else np.asarray(u0, dtype=float).copy()
    if seed is not None:
        u = u + np.random.default_rng(seed).uniform(-0.5, 0.5, size=u.shape)
    v_max = _velocity_bound(H)
    table = None
    if not H.is_mechanical and H.dim == 1:
        h = 1.0 / grid
        K = min(int(np.ceil(v_max * dt / h)), grid // 2)
        table = LegendreTable(H, np.arange(-K, K + 1) * h / dt, q)
    sign = 1.0 if direction == "descending" else -1.0
    alphas = []
    resid = np.inf
    for it in range(1, max_iters + 1):
        u_new = lax_oleinik_step(u, H, dt, direction=direction, v_max=v_max,
                                 table=table)
        dec = sign * (u - u_new)
        c = float(np.mean(dec))
        resid = float(np.max(np.abs(dec - c)))
        alphas.append(c / dt)
        u = u_new - u_new.min()
        if resid <= fp_tol and it > 8:
            break
    else:
        raise RuntimeError(
            f"Lax-Oleinik iteration did not reach residual {fp_tol} in "
            f"{max_iters} steps (residual {resid:.2e})")
    tail = alphas[-max(1, len(alphas) // 4):]
    return WeakKamSolution(u=u, alpha=float(np.mean(tail)), residual=resid,
                           grid=q, dt=dt, iterations=it,
                           meta={"direction": direction, "v_max": v_max})


def critical_value_infmax(H, n_params=7, grid=1024, restarts=4, sweeps=12,
                          seed=0, radius=2.0):
    """Upper critical bound: minimize over graph families the max of H.

    The family is the set of exact graphs with truncated-trigonometric
    derivative (zero mean); coordinate descent with golden-section line
    searches plus seeded random restarts.  Returns the smallest max seen,
    an upper bound for the critical value by construction.
    """
    q = np.arange(grid) / grid
    modes = [(k, trig) for k in range(1, n_params) for trig in ("c", "s")][:n_params]
    basis = np.stack([np.cos(2 * np.pi * k * q) if trig == "c"
                      else np.sin(2 * np.pi * k * q) for k, trig in modes])

    def objective(theta):
        dv = theta @ basis
        if H.dim == 1:
            return float(np.max(H.value(q, dv)))
        raise NotImplementedError("inf-max families are one-dimensional")

    rng = np.random.default_rng(seed)
    gr = (np.sqrt(5.0) - 1) / 2
    best = (objective(np.zeros(n_params)), np.zeros(n_params))
    for r in range(restarts):
        theta = np.zeros(n_params) if r == 0 else rng.uniform(-0.5, 0.5, n_params)
        val = objective(theta)
        span = radius
        for _ in range(sweeps):
            for i in range(n_params):
                a, b = theta[i] - span, theta[i] + span
                x1 = b - gr * (b - a)
                x2 = a + gr * (b - a)
                t1 = theta.copy(); t1[i] = x1
                t2 = theta.copy(); t2[i] = x2
                f1, f2 = objective(t1), objective(t2)
                best = min(best, (f1, t1), (f2, t2), key=lambda z: z[0])
                for _ in range(40):
                    if f1 < f2:
                        b, x2, f2 = x2, x1, f1
                        x1 = b - gr * (b - a)
                        t1 = theta.copy(); t1[i] = x1
                        f1 = objective(t1)
                        best = min(best, (f1, t1), key=lambda z: z[0])
                    else:
                        a, x1, f1 = x1, x2, f2
                        x2 = a + gr * (b - a)
                        t2 = theta.copy(); t2[i] = x2
                        f2 = objective(t2)
                        best = min(best, (f2, t2), key=lambda z: z[0])
                theta[i] = x1 if f1 < f2 else x2
                val = min(f1, f2)
            span *= 0.5
    dv_best = best[1] @ basis
    return best[0], {"theta": best[1], "dv": dv_best, "modes": modes}


def critical_subsolution(H, grid=1024, dt=0.05, max_iters=8000):
    """Symmetrized critical subsolution: mean of the descending and
    ascending fixed points.

    Convexity of H in p makes any convex combination of critical
    subsolutions a critical subsolution; numerically the two fixed points
    carry opposite O(dt) derivative biases, so the mean is accurate to a
    much smaller margin than either.  Returns (u, alpha).
    """
    sm = critical_value(H, grid=grid, dt=dt, max_iters=max_iters)
    sp = critical_value(H, grid=grid, dt=dt, max_iters=max_iters,
                        direction="ascending")
    u = 0.5 * (sm.u + (sp.u - sp.u.min()))
    return u - u.min(), 0.5 * (sm.alpha + sp.alpha)


def subsolution_check(v, H, a, tol=1e-2):
    """Check H(q, dv(q)) <= a + tol at all grid points (centered differences).

    Returns (flag, violating indices, margin array H(q, dv) - a).
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        n = v.size
        h = 1.0 / n
        dv = (np.roll(v, -1) - np.roll(v, 1)) / (2 * h)
        vals = H.value(np.arange(n) / n, dv)
    else:
        n1, n2 = v.shape
        dv1 = (np.roll(v, -1, 0) - np.roll(v, 1, 0)) * (n1 / 2.0)
        dv2 = (np.roll(v, -1, 1) - np.roll(v, 1, 1)) * (n2 / 2.0)
        g1 = np.arange(n1) / n1
        g2 = np.arange(n2) / n2
        Q = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1)
        vals = H.value(Q, np.stack([dv1, dv2], axis=-1))
    margin = vals - a
    bad = np.nonzero(margin.reshape(-1) > tol)[0]
    return bad.size == 0, bad, margin


def smooth_subsolution(u, H, s=0.05, dt=0.01):
    """Double Lax-Oleinik smoothing (descend then ascend for time s).

    A C^{1,1}-grade surrogate for variational regularization: preserves
    subsolutions and the maximal invariant set of the critical graph.
    """
    out = np.asarray(u, dtype=float).copy()
    steps = max(1, int(round(s / dt)))
    for _ in range(steps):
        out = lax_oleinik_step(out, H, dt, direction="descending")
    for _ in range(steps):
        out = lax_oleinik_step(out, H, dt, direction="ascending")
    return out


def _calibrated_solutions(H, alpha, grid):
    """One-sided calibrated subsolutions of a 1-d mechanical Hamiltonian.

    For H = p^2/2 + V at the critical level, du = +/- sqrt(2(alpha - V));
    the distance-like solution based at each contact point a follows the
    branch outward from a with the balance kink at the antipodal cut.
    """
    q = np.arange(grid) / grid
    V = H.potential(q)
    P = np.sqrt(np.maximum(2.0 * (alpha - V), 0.0))
    C = np.concatenate([[0.0], np.cumsum(0.5 * (P[1:] + P[:-1]) * np.diff(q))])
    C_tot = C[-1] + 0.5 * (P[-1] + P[0]) / grid
    contacts = np.nonzero(V >= alpha - 1e-6 * max(1.0, abs(alpha)))[0]
    # cluster adjacent contact indices (wrap-aware)
    classes = []
    if contacts.size:
        start = prev = contacts[0]
        for i in contacts[1:]:
            if i == prev + 1:
                prev = i
            else:
                classes.append((start + prev) // 2)
                start = prev = i
        classes.append((start + prev) // 2)
        if len(classes) > 1 and contacts[0] == 0 and contacts[-1] == grid - 1:
            classes[0] = classes.pop()  # merge the wrap cluster
    sols = []
    for a_idx in classes:
        d = np.abs(C - C[a_idx])
        sols.append(np.minimum(d, C_tot - d))
    return [s - s.min() for s in sols], [q[i] for i in classes]


def _equilibria(H, grid=8192):
    """Newton-refined hyperbolic equilibria (q*, 0) at maxima of V (1-d)."""
    q = np.arange(grid) / grid
    V = H.potential(q)
    cand = np.nonzero((V >= np.roll(V, 1)) & (V > np.roll(V, -1)))[0]
    out = []
    for i in cand:
        x = q[i]
        for _ in range(60):
            h = 1e-6
            g = float(H.grad_potential(np.array([wrap(x)]))[0])
            gpp = float((H.grad_potential(np.array([wrap(x + h)]))[0]
                         - H.grad_potential(np.array([wrap(x - h)]))[0]) / (2 * h))
            if abs(gpp) < 1e-9 or abs(g) < 1e-15:
                break
            x = x - g / gpp
        out.append(wrap(x))
    return np.asarray(sorted(out))


def weak_kam_family(H, grid=1024, dt=0.1, max_iters=4000, num_tol=NUM_TOL,
                    horizon=50.0, dedupe_tol=1e-3):
    """Critical value plus Aubry and Mane sets from a subsolution family.

    The family contains the descending and ascending fixed points and, for
    mechanical Hamiltonians, the calibrated one-sided solutions based at
    each contact point of the critical level.  Aubry = intersection of the
    maximal invariant sets of the family graphs, Mane = union; both live
    on the critical energy shell.  Finite families make both outer
    approximations.
    """
    from . import dynamics

    if H.dim != 1:
        raise NotImplementedError("Aubry/Mane assembly works over T^1; "
                                  "critical_value itself supports dim 2")
    sol_minus = critical_value(H, grid=grid, dt=dt, max_iters=max_iters)
    alpha = sol_minus.alpha
    sol_plus = critical_value(H, grid=grid, dt=dt, max_iters=max_iters,
                              direction="ascending")
    family = [sol_minus.u, sol_plus.u,
              0.5 * (sol_minus.u + (sol_plus.u - sol_plus.u.min()))]
    equil = np.empty((0, 2))
    if H.is_mechanical and H.dim == 1:
        cal, _ = _calibrated_solutions(H, alpha, grid)
        family.extend(cal)
        qs = _equilibria(H)
        if qs.size:
            keep = np.abs(H.value(qs, np.zeros_like(qs)) - alpha) <= num_tol
            equil = np.column_stack([qs[keep], np.zeros(int(keep.sum()))])
    # dedupe near-identical members
    kept = []
    for u in family:
        if all(np.max(np.abs(u - w)) > dedupe_tol for w in kept):
            kept.append(u)
    q = np.arange(grid) / grid
    h = 1.0 / grid
    inv_sets = []
    for u in kept:
        du = (np.roll(u, -1) - np.roll(u, 1)) / (2 * h)
        pts = np.column_stack([q, du])
        if equil.size:
            # candidate equilibria lie on (the closure of) every critical
            # graph; include them explicitly so exact fixed points seed the
            # trimming rather than their one-ulp neighbours
            pts = np.vstack([pts, equil])
        est = dynamics.maximal_invariant_set(pts, H, alpha, horizon=horizon,
                                             e_tol=num_tol)
        inv_sets.append(est.samples)
    bin_r = 2.0 * h
    aubry = inv_sets[0]
    for s in inv_sets[1:]:
        aubry = _intersect_points(aubry, s, bin_r)
    aubry = _dedupe_points(np.atleast_2d(aubry), bin_r) if aubry.size else aubry
    mane = np.vstack([s for s in inv_sets if s.size]) if any(s.size for s in inv_sets) \
        else np.empty((0, 2))
    mane = _dedupe_points(mane, 0.5 * h)
    # clip to the critical shell
    def on_shell(pts):
        if pts.size == 0:
            return pts
        vals = H.value(pts[:, 0], pts[:, 1])
        return pts[np.abs(vals - alpha) <= num_tol]

    aubry = on_shell(np.atleast_2d(aubry)) if aubry.size else aubry
    mane = on_shell(mane)
    sol_minus.aubry_pts = aubry
    sol_minus.mane_pts = mane
    sol_minus.meta.update({
        "family_size": len(kept),
        "single_subsolution": len(kept) == 1,
        "alpha_ascending": sol_plus.alpha,
        "outer_approximation": "family and horizon are finite; sets are outer estimates",
        "horizon": horizon})
    return sol_minus


def _intersect_points(a, b, radius):
    if a.size == 0 or b.size == 0:
        return np.empty((0, 2))
    keep = []
    for x in np.atleast_2d(a):
        dq = np.abs(b[:, 0] - x[0])
        dq = np.minimum(dq, 1.0 - dq)
        d = np.hypot(dq, b[:, 1] - x[1])
        if np.min(d) <= radius:
            keep.append(x)
    return np.asarray(keep) if keep else np.empty((0, 2))


def _dedupe_points(pts, radius):
    if pts.size == 0:
        return pts
    kept = []
    for x in np.atleast_2d(pts):
        ok = True
        for y in kept:
            dq = min(abs(x[0] - y[0]), 1.0 - abs(x[0] - y[0]))
            if np.hypot(dq, x[1] - y[1]) <= radius:
                ok = False
                break
        if ok:
            kept.append(x)
    return np.asarray(kept)


def aubry_set(H, grid=1024, **kwargs):
    """Aubry point set (intersection of family invariant sets); see
    weak_kam_family for the approximation caveats."""
    return weak_kam_family(H, grid=grid, **kwargs).aubry_pts


def mane_set(H, grid=1024, **kwargs):
    """Mane point set (union of family invariant sets)."""
    return weak_kam_family(H, grid=grid, **kwargs).mane_pts

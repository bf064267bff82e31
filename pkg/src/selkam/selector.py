"""Graph selector construction via discrete-action minimax.

The generating object is a two-point minimal-action kernel K_tau(a, b):
the least action of Hamiltonian trajectories from base point a to base
point b in time tau, built by integrating a momentum fan forward (no
boundary-value solves) and inverting the endpoint map row by row.  Longer
times compose kernels in the min-plus algebra; the composed kernel plus
the initial potential is the lattice function whose sublevel-set
persistence selects the spectral value at every base point.  The selected
class is the component class surviving to the full (connected) lattice,
whose birth level realizes the minimax.

Selector values are snapped to the front's spectrum (tightness) and their
provenance (selected sheet) recorded per grid point.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.spatial import ConvexHull

from . import hamcore
from .front import fiber_sweep, fiber_intersections, caustics
from .lagrangian import ExactLagrangian, SpectralFun
from .persistence import sublevel_persistence
from .torus import wrap

__all__ = [
    "ActionKernel",
    "DiscreteAction",
    "SelectorFunction",
    "FiberHull",
    "SelectorReport",
    "SpectralStabilityError",
    "build_discrete_action",
    "spectral_value",
    "graph_selector",
    "selector_from_front",
    "verify_selector",
    "convexify_fiber",
    "generalized_selector",
    "dump_selector",
]

TAU_MAX = 0.25            # single-fan horizon: below the first conjugate time
SNAP_TOL = 1e-4           # ambiguity scale for coinciding spectrum values
SNAP_RADIUS = 5e-4        # acceptance radius for snapping minimax to spectrum
CONV_TOL = 1e-3
C_TOL = 1e-3
COLLAR = 2                # grid steps excluded around caustics/Maxwell points
DIST_TOL = 1e-3
EDGE_FRACTION = 0.97      # momentum-fan edge flag threshold
LARGE = 1e30


class SpectralStabilityError(RuntimeError):
    def __init__(self, message, bracket):
        super().__init__(f"{message}; values seen: {bracket}")
        self.bracket = bracket


# ---------------------------------------------------------------------------
# minimal-action kernels


@dataclass
class ActionKernel:
    """Two-point minimal action on the torus, tabulated on a periodic grid.

    K[i, j] is the least trajectory action from a_i to a_j in time tau;
    p_start and p_end are the momenta of the minimizing trajectory, which
    are also the partial derivatives -dK/da and dK/db.  ``edge`` marks
    entries whose minimizer ran into the momentum-fan boundary.
    """

    tau: float
    grid: np.ndarray
    K: np.ndarray
    p_start: np.ndarray
    p_end: np.ndarray
    edge: np.ndarray
    p_bound: float
    _splines: dict = field(default_factory=dict, repr=False)

    def spline(self, name="K"):
        if name not in self._splines:
            arr = {"K": self.K, "p_start": self.p_start, "p_end": self.p_end}[name]
            n = self.grid.size
            pad = 4
            idx = np.arange(-pad, n + pad) % n
            ax = np.arange(-pad, n + pad) / n
            self._splines[name] = RectBivariateSpline(ax, ax, arr[np.ix_(idx, idx)],
                                                      kx=3, ky=3)
        return self._splines[name]

    def eval(self, a, b, dx=0, dy=0):
        return self.spline("K").ev(np.mod(a, 1.0), np.mod(b, 1.0), dx=dx, dy=dy)


def _fan_kernel(H, tau, n_grid, p_bound, dt_target):
    """Single-fan kernel: forward-integrate a momentum fan from every node.

    Requires the endpoint map p0 -> b to be monotone (tau below the first
    conjugate time); returns None in that case so the caller can shorten
    tau and compose.
    """
    a = np.arange(n_grid) / n_grid
    # fan spacing fine enough that consecutive endpoints straddle ~1 cell
    n_p = int(max(513, 1.2 * p_bound * tau * n_grid + 1) // 2 * 2 + 1)
    p0 = np.linspace(-p_bound, p_bound, n_p)
    Q0 = np.broadcast_to(a[:, None], (n_grid, n_p)).copy()
    P0 = np.broadcast_to(p0[None, :], (n_grid, n_p)).copy()
    steps = max(8, int(np.ceil(tau / dt_target)))
    B, Pend, ACT = hamcore.integrate(H, Q0, P0, tau / steps, steps,
                                     accumulate_action=True)
    if np.any(np.diff(B, axis=1) <= 0):
        return None

    kmin = int(np.floor(B.min())) - 1
    kmax = int(np.ceil(B.max())) + 1
    winds = np.arange(kmin, kmax + 1)
    targets = (a[None, :] + winds[:, None]).reshape(-1)     # (nw * n)
    K = np.full((n_grid, n_grid), LARGE)
    PS = np.zeros((n_grid, n_grid))
    PE = np.zeros((n_grid, n_grid))
    ED = np.zeros((n_grid, n_grid), dtype=bool)
    nw = winds.size
    for i in range(n_grid):
        Bi = B[i]
        idx = np.searchsorted(Bi, targets)
        valid = (idx >= 1) & (idx <= n_p - 1)
        j = np.clip(idx, 1, n_p - 1)
        b0 = Bi[j - 1]
        b1 = Bi[j]
        u = np.where(valid, (targets - b0) / (b1 - b0), 0.5)
        # Hermite in b: dA/db along the fan is the endpoint momentum
        h = b1 - b0
        A0, A1 = ACT[i, j - 1], ACT[i, j]
        m0, m1 = Pend[i, j - 1] * h, Pend[i, j] * h
        h00 = (1 + 2 * u) * (1 - u) ** 2
        h10 = u * (1 - u) ** 2
        h01 = u * u * (3 - 2 * u)
        h11 = u * u * (u - 1)
        Av = h00 * A0 + h10 * m0 + h01 * A1 + h11 * m1
        psv = p0[j - 1] * (1 - u) + p0[j] * u
        pev = Pend[i, j - 1] * (1 - u) + Pend[i, j] * u
        Av = np.where(valid, Av, LARGE)
        cover = Av.reshape(nw, n_grid)
        pick = np.argmin(cover, axis=0)
        cols = np.arange(n_grid)
        K[i] = cover[pick, cols]
        PS[i] = psv.reshape(nw, n_grid)[pick, cols]
        PE[i] = pev.reshape(nw, n_grid)[pick, cols]
        jw = j.reshape(nw, n_grid)[pick, cols]
        ED[i] = (jw < (1 - EDGE_FRACTION) * n_p + 2) | (jw > EDGE_FRACTION * n_p - 2)
    return ActionKernel(tau=tau, grid=a, K=K, p_start=PS, p_end=PE,
                        edge=ED, p_bound=p_bound)


def _compose(k1, k2):
    """Min-plus composition of two kernels on the same grid."""
    n = k1.grid.size
    K = np.full((n, n), np.inf)
    ARG = np.zeros((n, n), dtype=np.int32)
    for c in range(n):
        cand = k1.K[:, c][:, None] + k2.K[c, :][None, :]
        upd = cand < K
        K[upd] = cand[upd]
        ARG[upd] = c
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    PS = k1.p_start[rows, ARG]
    PE = k2.p_end[ARG, cols]
    ED = k1.edge[rows, ARG] | k2.edge[ARG, cols]
    return ActionKernel(tau=k1.tau + k2.tau, grid=k1.grid, K=K,
                        p_start=PS, p_end=PE, edge=ED,
                        p_bound=max(k1.p_bound, k2.p_bound))


_KERNEL_CACHE = {}


def _build_kernel(H, T, n_grid, p_bound, n_steps):
    """Composed minimal-action kernel for horizon T (T > 0); memoized."""
    key = (H.source, round(float(T), 12), n_grid, round(p_bound, 3), n_steps)
    if key in _KERNEL_CACHE:
        return _KERNEL_CACHE[key]
    out = _build_kernel_impl(H, T, n_grid, p_bound, n_steps)
    if len(_KERNEL_CACHE) > 8:
        _KERNEL_CACHE.pop(next(iter(_KERNEL_CACHE)))
    _KERNEL_CACHE[key] = out
    return out


def _build_kernel_impl(H, T, n_grid, p_bound, n_steps):
    m = max(1, int(np.ceil(T / TAU_MAX)))
    for _ in range(4):
        tau = T / m
        dt_target = min(T / max(n_steps, 8), 1e-3)
        base = None
        for _ in range(3):
            base = _fan_kernel(H, tau, n_grid, p_bound, dt_target)
            if base is not None and not np.any(base.K >= LARGE):
                break
            if base is not None:
                p_bound *= 1.6      # unreachable cells: widen the fan
            else:
                break
        if base is not None and not np.any(base.K >= LARGE):
            kernel = base
            for _ in range(m - 1):
                kernel = _compose(kernel, base)
            return kernel, m
        m *= 2                      # endpoint map folded: shorten segments
    raise RuntimeError("could not build a monotone short-time action kernel")


# ---------------------------------------------------------------------------
# discrete action over a xi-lattice


@dataclass
class DiscreteAction:
    """Discrete action G(q; xi) over a periodic xi-lattice.

    xi collects the free breakpoints of a broken trajectory ending at q:
    the initial point (weighted by the potential v) plus interior junction
    points, one per composed kernel segment.  The lattice is the product
    torus grid; critical points correspond to broken trajectories whose
    junction momenta match, and critical values land in the fiber spectrum
    up to the discretization error of the kernel.
    """

    q: float
    H: object
    v_fun: object
    T: float
    N_steps: int
    xi_dim: int
    lattice_shape: tuple
    kernel: object                 # None when T == 0
    s_offset: float = 0.0
    meta: dict = field(default_factory=dict)

    def lattice_values(self, n=None):
        n = n or self.lattice_shape[0]
        x = np.arange(n) / n
        if self.T == 0:
            stiff = 100.0 * (1.0 + np.max(np.abs(self.v_fun.derivative(x)))) ** 2
            G = self.v_fun(x) + stiff * _circ(x - self.q) ** 2
            for _ in range(self.xi_dim - 1):
                G = G[..., None] + stiff * _circ(x - x[0]) ** 2  # inert chain
            return G
        d = self.xi_dim
        if n == self.kernel.grid.size:
            Kseg = [self.kernel.K] * max(d - 1, 0)
            Klast = None
        else:
            sp = self.kernel.spline()
            Ksub = sp(x, x)
            Kseg = [Ksub] * max(d - 1, 0)
            Klast = None
        lastcol = self.kernel.eval(x, np.full(n, self.q))
        G = self.v_fun(x)
        for Kmat in Kseg:
            G = G[..., None] + (Kmat if Kmat.shape[0] == n else Kmat)
        G = G + lastcol if d == 1 else G + lastcol[(None,) * (d - 1)]
        return G

    def value(self, q, xi):
        """Continuum extension of G at arbitrary (q, xi)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if self.T == 0:
            x = np.arange(self.lattice_shape[0]) / self.lattice_shape[0]
            stiff = 100.0 * (1.0 + np.max(np.abs(self.v_fun.derivative(x)))) ** 2
            out = self.v_fun(xi[:1])[0] + stiff * _circ(xi[-1] - q) ** 2
            for k in range(xi.size - 1):
                out += stiff * _circ(xi[k + 1] - xi[k]) ** 2
            return float(out)
        total = self.v_fun(xi[:1])[0]
        for k in range(xi.size - 1):
            total += float(self.kernel.eval(xi[k], xi[k + 1]))
        total += float(self.kernel.eval(xi[-1], q))
        return float(total)

    def gradient(self, q, xi):
        """Analytic gradient of the continuum G with respect to xi."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        g = np.zeros(xi.size)
        if self.T == 0:
            x = np.arange(self.lattice_shape[0]) / self.lattice_shape[0]
            stiff = 100.0 * (1.0 + np.max(np.abs(self.v_fun.derivative(x)))) ** 2
            g[0] = self.v_fun.derivative(xi[:1])[0]
            for k in range(xi.size - 1):
                d = _circ(xi[k + 1] - xi[k])
                g[k] += -2 * stiff * d
                g[k + 1] += 2 * stiff * d
            g[-1] += 2 * stiff * _circ(xi[-1] - q)
            return g
        g[0] = self.v_fun.derivative(xi[:1])[0]
        for k in range(xi.size - 1):
            g[k] += float(self.kernel.eval(xi[k], xi[k + 1], dx=1))
            g[k + 1] += float(self.kernel.eval(xi[k], xi[k + 1], dy=1))
        g[-1] += float(self.kernel.eval(xi[-1], q, dx=1))
        return g


def _circ(d):
    """Signed circular displacement in (-1/2, 1/2]."""
    return np.mod(np.asarray(d, dtype=float) + 0.5, 1.0) - 0.5


def build_discrete_action(H, v, T, N_steps, q, xi_dim=1, lattice_size=None,
                          p_bound=None):
    """Discrete action for the flowed graph of dv, targeted at base point q.

    ``N_steps`` is the number of integration segments along a trajectory
    (at least 8); ``xi_dim`` the number of free breakpoints (<= 3 for grid
    evaluation).  The kernel fan auto-widens once if the minimizing
    momenta hit its boundary.
    """
    if N_steps < 8 and T > 0:
        raise ValueError("need at least 8 trajectory segments")
    if xi_dim < 1 or xi_dim > 3:
        raise ValueError("xi lattice evaluation supports 1 to 3 breakpoints")
    v = np.asarray(v, dtype=float)
    vf = SpectralFun(v)
    n = lattice_size or (512 if xi_dim == 1 else (64 if xi_dim == 2 else 32))
    if T == 0:
        return DiscreteAction(q=float(q), H=H, v_fun=vf, T=0.0, N_steps=0,
                              xi_dim=xi_dim, lattice_shape=(n,) * xi_dim,
                              kernel=None, s_offset=0.0)
    if p_bound is None:
        pv = float(np.max(np.abs(vf.derivative(np.arange(512) / 512))))
        if H.is_mechanical:
            Vg = H.potential(np.arange(512) / 512)
            swing = float(np.sqrt(2.0 * max(Vg.max() - Vg.min(), 0.0) + 2.0 * pv ** 2))
        else:
            swing = 2.0
        p_bound = max(3.0, pv + swing + 1.5, 0.8 / (T / max(1, int(np.ceil(T / TAU_MAX)))))
        p_bound = 0.5 * np.ceil(2.0 * p_bound)   # quantize for kernel reuse
    kernel_grid = max(n, 256) if xi_dim == 1 else 256
    kernel, m = _build_kernel(H, T, kernel_grid, p_bound, N_steps)
    return DiscreteAction(q=float(q), H=H, v_fun=vf, T=float(T),
                          N_steps=N_steps, xi_dim=xi_dim,
                          lattice_shape=(n,) * xi_dim, kernel=kernel,
                          meta={"segments": m, "p_bound": p_bound})


def spectral_value(DA, validate=True, return_diagram=False):
    """Minimax level of the discrete action: birth of the essential class.

    Computed by union-find persistence over the periodic xi-lattice; with
    ``validate`` the lattice is refined (x2, then x4) and the selected
    value must move by no more than a grid-scale bound.
    """
    G = DA.lattice_values()
    diag = sublevel_persistence(G)
    lam = diag.selected
    if DA.kernel is not None:
        arg = np.unravel_index(diag.argmin_index, G.shape)
        if _argmin_on_edge(DA, arg):
            if DA.meta.get("expanded"):
                raise RuntimeError("minimizing trajectories exit the momentum "
                                   "box even after expansion")
            # auto-expand once: rebuild the kernel with a wider fan
            vg = DA.v_fun(np.arange(512) / 512)
            wider = build_discrete_action(DA.H, vg, DA.T, DA.N_steps, DA.q,
                                          DA.xi_dim, DA.lattice_shape[0],
                                          p_bound=2.0 * DA.meta["p_bound"])
            DA.kernel = wider.kernel
            DA.meta.update(wider.meta)
            DA.meta["expanded"] = True
            return spectral_value(DA, validate=validate,
                                  return_diagram=return_diagram)
    if validate:
        n = DA.lattice_shape[0]
        seen = [lam]
        for factor in (2, 4):
            lam_f = sublevel_persistence(DA.lattice_values(n=factor * n)).selected
            seen.append(lam_f)
            scale = _grad_scale(DA) / (factor * n)
            if abs(lam_f - lam) <= max(4.0 * scale, 1e-9):
                break
        else:
            raise SpectralStabilityError(
                "spectral value did not stabilize under lattice refinement", seen)
    return (lam, diag) if return_diagram else lam


def _argmin_on_edge(DA, arg):
    if DA.kernel is None:
        return False
    n = DA.lattice_shape[0]
    x = np.arange(n) / n
    idx = (np.abs(DA.kernel.grid[:, None] - x[None, :])).argmin(axis=0)
    cells = [idx[a] for a in arg]
    flags = [DA.kernel.edge[cells[k], cells[k + 1]] for k in range(len(cells) - 1)]
    qcell = int(np.abs(DA.kernel.grid - DA.q).argmin())
    flags.append(DA.kernel.edge[cells[-1], qcell])
    return bool(np.any(flags))


def _grad_scale(DA):
    x = np.arange(256) / 256
    s = float(np.max(np.abs(DA.v_fun.derivative(x))))
    if DA.kernel is not None:
        s += float(np.percentile(np.abs(DA.kernel.p_start), 95))
        s += float(np.percentile(np.abs(DA.kernel.p_end), 95))
    return max(s, 1.0)


# ---------------------------------------------------------------------------
# selector assembly


@dataclass
class SelectorFunction:
    """Grid-sampled Lipschitz selector with per-point provenance.

    ``provenance[j]`` is the index of the selected spectrum sheet at grid
    point j (sorted by primitive value), or -1 where the raw minimax value
    was retained (snap ambiguity at a Cerf-irregular point).
    """

    q_grid: np.ndarray
    values: np.ndarray
    provenance: np.ndarray
    lipschitz_const: float
    anchor: dict
    flags: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.q_grid.size != self.values.size:
            raise ValueError("grid/value size mismatch")


def _lipschitz_all_pairs(q_grid, values):
    dq = np.abs(q_grid[:, None] - q_grid[None, :])
    dq = np.minimum(dq, 1.0 - dq)
    df = np.abs(values[:, None] - values[None, :])
    mask = dq > 0
    return float(np.max(df[mask] / dq[mask]))


def _snap_values(raw, spectra, snap_radius, snap_tol):
    """Snap raw minimax values to the nearest spectrum member per point."""
    n = raw.size
    values = raw.copy()
    provenance = np.full(n, -1, dtype=int)
    flags = np.zeros(n, dtype=bool)
    for j in range(n):
        spec = spectra[j]
        if spec.size == 0:
            flags[j] = True
            continue
        d = np.abs(spec - raw[j])
        order = np.argsort(d)
        best = order[0]
        if d[best] > snap_radius:
            flags[j] = True
            continue
        if order.size > 1:
            second = order[1]
            if d[second] <= snap_radius and abs(spec[second] - spec[best]) <= snap_tol:
                # two sheets coincide here (Maxwell/Cerf-irregular): keep raw
                flags[j] = True
                continue
        values[j] = spec[best]
        provenance[j] = int(best)
    return values, provenance, flags


def graph_selector(L, grid_size=512, snap_radius=SNAP_RADIUS, snap_tol=SNAP_TOL,
                   n_steps=None):
    """Selector for a flowed graph: per-point minimax over the action lattice.

    Every grid point runs the sublevel persistence of its own discrete
    action; the selected level, shifted back to the anchored primitive
    frame, is snapped to the fiber spectrum and the selected sheet
    recorded.  The certified Lipschitz constant is the max over all grid
    pairs in the flat-torus metric.
    """
    if L.kind != "flowed" or "H_source" not in L.meta:
        raise ValueError("graph selector needs a flow presentation (from_flow output)")
    if grid_size < 256:
        raise ValueError("selector grid must have at least 256 points per dimension")
    H = hamcore.parse_hamiltonian(L.meta["H_source"], 1)
    v = L.meta["v_samples"]
    T = L.meta["T"]
    vf = SpectralFun(v)
    q_grid = np.arange(grid_size) / grid_size

    if T == 0:
        raw = vf(q_grid)
    else:
        n_steps = n_steps or max(8, int(np.ceil(T / 5e-4)))
        DA0 = build_discrete_action(H, v, T, n_steps, 0.0, xi_dim=1,
                                    lattice_size=grid_size)
        kernel = DA0.kernel
        GM = vf(kernel.grid)[:, None] + kernel.K     # G columns per target q
        raw = np.empty(grid_size)
        for j in range(grid_size):
            raw[j] = sublevel_persistence(GM[:, j]).selected
    f_raw = raw - L.s_offset

    fibers = fiber_sweep(L, q_grid)
    spectra = [fd.h for fd in fibers]
    values, provenance, flags = _snap_values(f_raw, spectra, snap_radius, snap_tol)
    # provenance as geometric sheet identity: rank in curve-parameter order,
    # which is stable between folds (h-rank is not: the minimum is always 0)
    for j in range(grid_size):
        if provenance[j] >= 0:
            t_order = np.argsort(np.argsort(fibers[j].t))
            provenance[j] = int(t_order[provenance[j]])
    lip = _lipschitz_all_pairs(q_grid, values)
    return SelectorFunction(
        q_grid=q_grid, values=values, provenance=provenance,
        lipschitz_const=lip,
        anchor={"s_offset": L.s_offset, "frame": "anchored primitive (S=0 at t=0)"},
        flags=flags,
        meta={"raw": f_raw, "pmax": L.pmax, "T": T, "snapped": int(np.sum(~flags)),
              "momenta": [fd.p for fd in fibers]})


# ---------------------------------------------------------------------------
# verification


@dataclass
class SelectorReport:
    max_graph_distance: float
    max_value_mismatch: float
    lipschitz_const: float
    lipschitz_bound: float
    checked_points: int
    excluded_points: int
    ok: bool

    def __bool__(self):
        return self.ok


def verify_selector(f, L, c_tol=C_TOL, collar=COLLAR, lip_margin=1e-2):
    """Check the defining selector properties on the grid.

    At grid points outside collars around caustics, provenance changes and
    flagged points: (q, df(q)) must lie on L (fiber-vertical distance) and
    f(q) must equal the primitive at that point; the global Lipschitz
    constant must not exceed max |p| plus a small margin.
    """
    q = f.q_grid
    n = q.size
    h = 1.0 / n
    vals = f.values
    df = (np.roll(vals, -1) - np.roll(vals, 1)) / (2 * h)

    mask = np.ones(n, dtype=bool)
    if L.dim == 1 and L.kind != "graph":
        ca = caustics(L)
        for qc in ca.q:
            j = int(np.round(qc * n)) % n
            for k in range(-collar, collar + 1):
                mask[(j + k) % n] = False
    switches = np.nonzero(np.roll(f.provenance, -1) != f.provenance)[0]
    for j in switches:
        for k in range(-collar, collar + 1):
            mask[(j + k) % n] = False
            mask[(j + 1 + k) % n] = False
    # derivative kinks (value crossings the provenance may have missed)
    kink = np.abs(np.roll(vals, -1) + np.roll(vals, 1) - 2 * vals) / h
    kink_pts = np.nonzero(kink > 0.1 * max(1.0, L.pmax))[0]
    for j in kink_pts:
        for k in range(-collar, collar + 1):
            mask[(j + k) % n] = False
    mask &= ~f.flags

    fibers = fiber_sweep(L, q[mask])
    gd = []
    vm = []
    for fd, dfj, fj in zip(fibers, df[mask], vals[mask]):
        if len(fd) == 0:
            continue
        dp = np.abs(fd.p - dfj)
        best = float(np.min(dp))
        gd.append(best)
        # sheets can nearly coincide in momentum; the value must match one of
        # the momentum-compatible points, not necessarily the very nearest
        window = dp <= max(3.0 * best, c_tol)
        vm.append(float(np.min(np.abs(fd.h[window] - fj))))
    gd = float(np.max(gd)) if gd else np.inf
    vm = float(np.max(vm)) if vm else np.inf
    lip = _lipschitz_all_pairs(q, vals)
    bound = L.pmax + lip_margin
    ok = gd <= c_tol and vm <= c_tol and lip <= bound
    return SelectorReport(max_graph_distance=gd, max_value_mismatch=vm,
                          lipschitz_const=lip, lipschitz_bound=bound,
                          checked_points=int(np.sum(mask)),
                          excluded_points=int(np.sum(~mask)), ok=ok)


# ---------------------------------------------------------------------------
# front-based assembly


def selector_from_front(L, grid_size=512, calibrate=None):
    """Assemble continuous selector candidates from the wavefront.

    The canonical section is the lower envelope of the front (pointwise
    minimal primitive), which on flowed graphs agrees with the minimax
    selector.  When the sheet count is constant over the whole torus (no
    folds) every global sheet is a candidate and all are reported; a
    discontinuous envelope with no alternative raises.
    """
    if L.dim != 1:
        raise NotImplementedError("front-based assembly is one-dimensional")
    q_grid = np.arange(grid_size) / grid_size
    fibers = fiber_sweep(L, q_grid)
    counts = np.array([len(fd) for fd in fibers])
    if np.any(counts == 0):
        raise ValueError("front has empty fibers; not a closed front over the torus")

    env = np.array([fd.h[0] for fd in fibers])
    env_prov = np.zeros(grid_size, dtype=int)
    candidates = []
    if np.all(counts == counts[0]) and counts[0] > 1:
        # fold-free front: every continuity-tracked global sheet is a section
        k = int(counts[0])
        tracks_t = np.empty((k, grid_size))
        tracks_h = np.empty((k, grid_size))
        order0 = np.argsort(fibers[0].t)
        tracks_t[:, 0] = fibers[0].t[order0]
        tracks_h[:, 0] = fibers[0].h[order0]
        good = True
        for j in range(1, grid_size):
            cand = fibers[j].t
            d = np.abs(cand[None, :] - tracks_t[:, j - 1][:, None])
            d = np.minimum(d, 1.0 - d)
            choice = np.argmin(d, axis=1)
            if len(set(choice.tolist())) != k:
                good = False
                break
            tracks_t[:, j] = cand[choice]
            tracks_h[:, j] = fibers[j].h[choice]
        if good:
            for i in range(k):
                candidates.append(tracks_h[i])
    # the envelope is always proposed; validate its continuity
    lipb = L.pmax + 1.0
    jumps = np.abs(np.diff(np.append(env, env[0])))
    if np.max(jumps) > 3.0 * lipb / grid_size:
        if not candidates:
            raise RuntimeError("no continuous section through the computed front")
    else:
        for j in range(grid_size):
            env_prov[j] = 0
        candidates.insert(0, env)

    chosen = candidates[0]
    prov = np.array([int(np.argmin(np.abs(fd.h - c))) for fd, c in zip(fibers, chosen)])
    sf = SelectorFunction(
        q_grid=q_grid, values=chosen, provenance=prov,
        lipschitz_const=_lipschitz_all_pairs(q_grid, chosen),
        anchor={"s_offset": L.s_offset, "frame": "anchored primitive (S=0 at t=0)"},
        flags=np.zeros(grid_size, dtype=bool),
        meta={"candidates": candidates, "n_candidates": len(candidates),
              "pmax": L.pmax, "momenta": [fd.p for fd in fibers]})
    return sf


# ---------------------------------------------------------------------------
# fiberwise convexification and generalized selectors


@dataclass
class FiberHull:
    q: object
    hull: np.ndarray          # 1-d: [lo, hi]; 2-d: (k, 2) vertices (ccw)
    extremal: np.ndarray      # flag per input point
    points: np.ndarray

    def distance(self, p):
        """Distance from a momentum to the hull (0 inside)."""
        if self.hull.ndim == 1:
            lo, hi = self.hull
            return float(max(0.0, lo - p, p - hi))
        return _dist_to_polygon(np.asarray(p, dtype=float), self.hull)

    def extremal_distance(self, p):
        """Distance from a momentum to the nearest extremal point."""
        pts = self.points[self.extremal]
        if pts.ndim == 1:
            return float(np.min(np.abs(pts - p)))
        return float(np.min(np.hypot(*(pts - p).T)))


def convexify_fiber(points, q=None):
    """Convex hull of fiber momenta with extremal-point flags.

    1-d: the hull is the interval [min, max] and the extremal points are
    its endpoints.  2-d: planar hull (degenerate configurations reduce to
    a point or a segment); a point is extremal iff it is a hull vertex.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("empty fiber")
    if pts.ndim == 1:
        lo, hi = float(np.min(pts)), float(np.max(pts))
        extremal = (pts == lo) | (pts == hi)
        return FiberHull(q=q, hull=np.array([lo, hi]), extremal=extremal, points=pts)
    center = pts.mean(axis=0)
    spread = pts - center
    if pts.shape[0] == 1 or np.max(np.abs(spread)) < 1e-14:
        return FiberHull(q=q, hull=pts[:1].copy(),
                         extremal=np.ones(pts.shape[0], dtype=bool), points=pts)
    _, sv, vt = np.linalg.svd(spread, full_matrices=False)
    if sv[-1] < 1e-12 * max(sv[0], 1.0):
        # collinear: hull is a segment along the principal direction
        proj = spread @ vt[0]
        lo, hi = np.min(proj), np.max(proj)
        extremal = (np.abs(proj - lo) < 1e-12) | (np.abs(proj - hi) < 1e-12)
        hull = np.stack([center + lo * vt[0], center + hi * vt[0]])
        return FiberHull(q=q, hull=hull, extremal=extremal, points=pts)
    ch = ConvexHull(pts)
    extremal = np.zeros(pts.shape[0], dtype=bool)
    extremal[ch.vertices] = True
    return FiberHull(q=q, hull=pts[ch.vertices], extremal=extremal, points=pts)


def _dist_to_polygon(p, verts):
    d = np.inf
    k = verts.shape[0]
    inside = True
    for i in range(k):
        a, b = verts[i], verts[(i + 1) % k]
        e = b - a
        w = p - a
        cross = e[0] * w[1] - e[1] * w[0]
        if cross < 0:
            inside = False
        t = np.clip(np.dot(w, e) / max(np.dot(e, e), 1e-300), 0.0, 1.0)
        d = min(d, float(np.hypot(*(w - t * e))))
    return 0.0 if inside else d


@dataclass
class GeneralizedReport:
    consecutive_sup: np.ndarray
    hull_distance_max: float
    extremal_value_gap_max: float
    n_extremal_checked: int
    ok: bool

    def __bool__(self):
        return self.ok


def generalized_selector(seq, grid_size=512, conv_tol=CONV_TOL,
                         dist_tol=DIST_TOL, c_tol=C_TOL):
    """Limit of per-level selectors of an approximating sequence.

    Each level contributes its front-based (or minimax) selector; the
    sequence must be Cauchy at ``conv_tol``.  The limit is verified
    against the fiberwise convexification of the limit Lagrangian: the
    selector's differential lies in the fiber hull at differentiability
    points, and wherever it is extremal the selector value matches the
    primitive there.
    """
    sels = []
    for entry in seq.entries:
        if entry.kind == "flowed" and "H_source" in entry.meta:
            sels.append(graph_selector(entry, grid_size))
        else:
            sels.append(selector_from_front(entry, grid_size))
    sups = np.array([float(np.max(np.abs(sels[i + 1].values - sels[i].values)))
                     for i in range(len(sels) - 1)])
    if sups.size and sups[-1] > conv_tol:
        raise RuntimeError(
            f"selector sequence is not Cauchy at {conv_tol}: gaps {sups}")

    f = sels[-1]
    limit = ExactLagrangian(
        dim=1, kind="parametric", t=seq.limit["t"], q=seq.limit["q"],
        p=seq.limit["p"], S=seq.limit["S"], s_offset=0.0,
        winding=int(seq.limit["winding"]),
        lipschitz_bound=seq.equilip_const,
        pmax=float(np.max(np.abs(seq.limit["p"]))), meta={})
    fibers = fiber_sweep(limit, f.q_grid)

    n = f.q_grid.size
    h = 1.0 / n
    vals = f.values
    df = (np.roll(vals, -1) - np.roll(vals, 1)) / (2 * h)
    # differentiability points: exclude kinks, seen as second-difference spikes
    d2 = np.abs(np.roll(vals, -1) + np.roll(vals, 1) - 2 * vals) / h ** 2
    smooth = d2 < 10.0 * np.median(d2) + 1e3 * h
    hull_d = 0.0
    gap = 0.0
    n_ext = 0
    for j in range(n):
        if not smooth[j] or len(fibers[j]) == 0:
            continue
        fh = convexify_fiber(fibers[j].p, q=f.q_grid[j])
        hull_d = max(hull_d, fh.distance(df[j]))
        if fh.extremal_distance(df[j]) <= dist_tol:
            i = int(np.argmin(np.abs(fibers[j].p - df[j])))
            gap = max(gap, abs(vals[j] - fibers[j].h[i]))
            n_ext += 1
    report = GeneralizedReport(consecutive_sup=sups, hull_distance_max=hull_d,
                               extremal_value_gap_max=gap,
                               n_extremal_checked=n_ext,
                               ok=hull_d <= dist_tol and gap <= c_tol)
    f.meta["generalized_report"] = report
    return f, report


def dump_selector(f, path):
    """Write rows `q f provenance lip_local` as decimal text."""
    n = f.q_grid.size
    h = 1.0 / n
    lip_local = np.abs(np.roll(f.values, -1) - f.values) / h
    with open(path, "w") as fh:
        fh.write("# q f provenance lip_local\n")
        for j in range(n):
            fh.write(f"{f.q_grid[j]:.12g} {f.values[j]:.17g} "
                     f"{f.provenance[j]} {lip_local[j]:.12g}\n")

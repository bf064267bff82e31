import numpy as np
import pytest

from selkam.front import fiber_sweep, sheet_decomposition
from selkam.lagrangian import SpectralFun, from_flow, from_graph, mollify_sequence
from selkam.persistence import connectivity_oracle, sublevel_persistence
from selkam.selector import (build_discrete_action, convexify_fiber,
                             generalized_selector, graph_selector,
                             selector_from_front, spectral_value,
                             verify_selector, dump_selector)

GRID = np.arange(256) / 256


def circ(d):
    return np.mod(np.asarray(d) + 0.5, 1.0) - 0.5


@pytest.fixture(scope="module")
def rand_v():
    rng = np.random.default_rng(11)
    v = np.zeros(256)
    for k in range(1, 4):
        a, b = rng.uniform(-0.05, 0.05, 2) / k
        v += a * np.cos(2 * np.pi * k * GRID) + b * np.sin(2 * np.pi * k * GRID)
    return v


def test_time_zero_reduces_to_potential(free, rand_v):
    q = 96 / 512.0  # on the lattice, so the constraint is met exactly
    DA = build_discrete_action(free, rand_v, 0.0, 0, q, xi_dim=1)
    lam = spectral_value(DA)
    vf = SpectralFun(rand_v)
    assert lam == pytest.approx(float(vf(np.array([q]))[0]), abs=1e-12)


def test_free_particle_spectral_value_scan_oracle(free, rand_v):
    DA = build_discrete_action(free, rand_v, 1.0, 2000, 0.3, xi_dim=1)
    lam = spectral_value(DA)
    vf = SpectralFun(rand_v)
    xs = np.arange(200001) / 200001
    oracle = float(np.min(vf(xs) + circ(0.3 - xs) ** 2 / 2.0))
    assert lam == pytest.approx(oracle, abs=5e-5)


def test_free_particle_zero_potential(free):
    # unique critical point: the straight (constant) trajectory, zero action
    # (the floor is the breakpoint quantization of the composed kernel)
    DA = build_discrete_action(free, np.zeros(256), 1.0, 2000, 0.3, xi_dim=1)
    assert spectral_value(DA) == pytest.approx(0.0, abs=5e-6)


def test_discrete_action_gradient_fd(pendulum, rand_v):
    rng = np.random.default_rng(0)
    worst = 0.0
    for d in (1, 2, 3):
        DA = build_discrete_action(pendulum, rand_v, 1.5, 1500, 0.3, xi_dim=d)
        for _ in range(60):
            q = rng.uniform(0, 1)
            xi = rng.uniform(0, 1, d)
            g = DA.gradient(q, xi)
            fd = np.zeros(d)
            h = 1e-6
            for k in range(d):
                e = np.zeros(d)
                e[k] = h
                fd[k] = (DA.value(q, xi + e) - DA.value(q, xi - e)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(g - fd) / (1 + np.abs(fd)))))
    assert worst <= 1e-6


def test_spectral_value_matches_oracle_exactly(pendulum, rand_v):
    DA = build_discrete_action(pendulum, rand_v, 1.5, 1500, 0.25, xi_dim=1,
                               lattice_size=512)
    G = DA.lattice_values()
    assert sublevel_persistence(G).selected == connectivity_oracle(G).selected
    DA2 = build_discrete_action(pendulum, rand_v, 1.5, 1500, 0.25, xi_dim=2,
                                lattice_size=64)
    G2 = DA2.lattice_values()
    assert sublevel_persistence(G2).selected == connectivity_oracle(G2).selected


def test_spectral_refinement_validation(pendulum, rand_v):
    DA = build_discrete_action(pendulum, rand_v, 0.5, 500, 0.7, xi_dim=1)
    lam = spectral_value(DA, validate=True)
    assert np.isfinite(lam)


def test_graph_selector_trivial_graph(pendulum):
    v = 0.1 * np.sin(2 * np.pi * GRID)
    L = from_flow(v, pendulum, 0.0, steps=1)
    sf = graph_selector(L, 512)
    vf = SpectralFun(v)
    expected = vf(sf.q_grid) - vf(np.array([0.0]))[0]
    assert np.max(np.abs(sf.values - expected)) <= 1e-6
    assert verify_selector(sf, L).ok


def test_whorl_selector_properties(whorl):
    sf = graph_selector(whorl, 512)
    # tightness: every value sits on the fiber spectrum
    fibers = fiber_sweep(whorl, sf.q_grid)
    worst = max(float(np.min(np.abs(fd.h - val))) if fd.h.size else np.inf
                for fd, val in zip(fibers, sf.values))
    assert worst <= 1e-4
    # Lipschitz certificate
    assert sf.lipschitz_const <= whorl.pmax + 1e-2
    # transitions only at Maxwell points: genuine sheet switches show up as
    # derivative kinks (provenance ranks also relabel at folds, value-smoothly)
    n = sf.q_grid.size
    df = (np.roll(sf.values, -1) - np.roll(sf.values, 1)) * n / 2
    kinks = np.nonzero(np.abs(np.roll(df, -1) - df) > 0.25)[0]
    assert kinks.size > 0
    chart = sheet_decomposition(whorl, (0.42, 0.58), n_grid=513)
    cross_q = sorted({q for _, _, q, _ in chart.crossings})
    for j in kinks:
        qj = sf.q_grid[j]
        d = min(min(abs(qj - c), 1 - abs(qj - c)) for c in cross_q)
        assert d <= 2.0 / 512
    rep = verify_selector(sf, whorl)
    assert rep.ok
    assert rep.max_graph_distance <= 1e-3
    assert rep.max_value_mismatch <= 1e-3


def test_selector_refinement_stability(whorl):
    # doubling the base grid moves the selector by at most a grid-step scale
    f256 = graph_selector(whorl, 256)
    f512 = graph_selector(whorl, 512)
    diff = float(np.max(np.abs(f512.values[::2] - f256.values)))
    assert diff <= 4.0 * whorl.pmax / 256


def test_selector_smooth_sheet_locality(whorl):
    # on a caustic-free, crossing-free interval the provenance is constant
    sf = graph_selector(whorl, 512)
    window = (sf.q_grid > 0.425) & (sf.q_grid < 0.49)
    assert len(set(sf.provenance[window].tolist())) == 1


def test_verify_selector_flags_corruption(whorl):
    sf = graph_selector(whorl, 512)
    bad = np.array(sf.values)
    bad[150:200] += 0.1
    from dataclasses import replace
    sf_bad = replace(sf, values=bad,
                     lipschitz_const=sf.lipschitz_const)
    rep = verify_selector(sf_bad, whorl)
    assert not rep.ok
    assert rep.max_value_mismatch >= 0.05 or rep.lipschitz_const > rep.lipschitz_bound


def test_selector_from_front_graph():
    v = 0.1 * np.sin(2 * np.pi * GRID)
    L = from_graph(v)
    sf = selector_from_front(L, 512)
    vf = SpectralFun(v)
    expected = vf(sf.q_grid) - vf(np.array([0.0]))[0]
    assert np.max(np.abs(sf.values - expected)) <= 1e-6


def test_selector_from_front_matches_minimax(whorl):
    sf = graph_selector(whorl, 512)
    sff = selector_from_front(whorl, 512)
    assert np.max(np.abs(sf.values - sff.values)) <= 1e-4


def test_convexify_fiber_interval():
    fh = convexify_fiber(np.array([-1.0, 0.0, 2.0]))
    assert np.allclose(fh.hull, [-1.0, 2.0])
    assert fh.extremal.tolist() == [True, False, True]
    single = convexify_fiber(np.array([0.5]))
    assert single.extremal.all()


def test_convexify_fiber_planar_oracle():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.2, 0.2]])
    fh = convexify_fiber(pts)
    assert fh.extremal.tolist() == [True, True, True, False]
    # brute-force pairwise-segment oracle on random sets
    rng = np.random.default_rng(4)
    for _ in range(20):
        pts = rng.uniform(-1, 1, size=(rng.integers(3, 9), 2))
        fh = convexify_fiber(pts)
        for i, x in enumerate(pts):
            interior = False
            for a in range(len(pts)):
                for b in range(len(pts)):
                    if a == b or i in (a, b):
                        continue
                    e = pts[b] - pts[a]
                    w = x - pts[a]
                    L2 = float(e @ e)
                    if L2 < 1e-14:
                        continue
                    t = float(w @ e) / L2
                    if 1e-9 < t < 1 - 1e-9 and np.hypot(*(w - t * e)) < 1e-12:
                        interior = True
            if interior:
                assert not fh.extremal[i]


def test_generalized_selector_graph_sequence(pendulum):
    v = 0.1 * np.sin(2 * np.pi * GRID)
    L = from_graph(v)
    seq = mollify_sequence(L, levels=4, base_width=1.0 / 64)
    f, rep = generalized_selector(seq, 512)
    vf = SpectralFun(v)
    expected = vf(f.q_grid) - vf(np.array([0.0]))[0]
    assert np.max(np.abs(f.values - expected)) <= 5e-3
    assert rep.ok


def test_generalized_selector_mollified_whorl(whorl_mid):
    seq = mollify_sequence(whorl_mid, levels=5, base_width=1.0 / 128,
                           resample=8192)
    f, rep = generalized_selector(seq, 512)
    assert rep.ok
    assert rep.hull_distance_max <= 1e-3
    assert rep.extremal_value_gap_max <= 1e-3
    sf = graph_selector(whorl_mid, 512)
    assert np.max(np.abs(f.values - sf.values)) <= 1e-3


def test_dump_selector(tmp_path, pendulum):
    L = from_flow(0.05 * np.sin(2 * np.pi * GRID), pendulum, 0.0, steps=1)
    sf = graph_selector(L, 512)
    path = tmp_path / "sel.txt"
    dump_selector(sf, path)
    data = np.loadtxt(path, ndmin=2)
    assert data.shape == (512, 4)

import numpy as np
import pytest

from selkam.dynamics import (energy_level_check, equivariance_check,
                             graph_test, maximal_invariant_set,
                             verify_theorem_1_5, verify_theorem_6_3,
                             dump_invariant_set)
from selkam.lagrangian import from_graph
from selkam.weakkam import critical_value

GRID = np.arange(256) / 256


def test_zero_section_free_all_fixed(free):
    L = from_graph(np.zeros(512))
    est = maximal_invariant_set(L, free, 0.0, horizon=10.0)
    assert len(est) == est.n_seeds == 512
    assert est.converged


def test_zero_section_pendulum_level_one(pendulum):
    L = from_graph(np.zeros(512))
    est = maximal_invariant_set(L, pendulum, 1.0, horizon=50.0)
    assert len(est) == 1
    assert np.allclose(est.samples[0], [0.0, 0.0])


def test_empty_level_raises(pendulum):
    L = from_graph(np.zeros(512))
    with pytest.raises(ValueError, match="does not meet"):
        maximal_invariant_set(L, pendulum, 3.0, horizon=1.0)


def test_whorl_invariant_core(whorl, pendulum):
    alpha = critical_value(pendulum, grid=1024, dt=0.1).alpha
    est = maximal_invariant_set(whorl, pendulum, alpha, horizon=100.0,
                                recurrence_filter=True)
    assert est.converged
    assert len(est) >= 1
    d = np.hypot(np.minimum(np.abs(est.samples[:, 0]), 1 - np.abs(est.samples[:, 0])),
                 est.samples[:, 1])
    assert np.max(d) <= 2.0 / 512


def test_horizon_monotonicity(whorl, pendulum):
    alpha = critical_value(pendulum, grid=1024, dt=0.1).alpha
    e1 = maximal_invariant_set(whorl, pendulum, alpha, horizon=5.0,
                               double_horizon=False)
    e2 = maximal_invariant_set(whorl, pendulum, alpha, horizon=10.0,
                               double_horizon=False)
    # survivors at the longer horizon form a subset (same seed order)
    s1 = {tuple(x) for x in np.round(e1.samples, 12)}
    s2 = {tuple(x) for x in np.round(e2.samples, 12)}
    assert s2 <= s1


def test_energy_level_check_examples(free, pendulum):
    L0 = from_graph(np.zeros(256))
    e, dev = energy_level_check(L0, free)
    assert e == 0.0 and dev == 0.0
    e2, dev2 = energy_level_check(L0, pendulum)
    assert e2 is None and dev2 == pytest.approx(1.0, abs=1e-6)


def test_graph_test_examples(whorl):
    L0 = from_graph(np.zeros(256))
    ok, quot = graph_test(np.column_stack([L0.q, L0.p]))
    assert ok and quot == 0.0
    ok2, _ = graph_test(whorl.phase_points())
    assert not ok2
    v = 0.1 * np.sin(2 * np.pi * GRID)
    Lv = from_graph(v)
    ok3, quot3 = graph_test(np.column_stack([Lv.q, Lv.p]))
    assert ok3
    assert quot3 <= 1.3 * 0.1 * (2 * np.pi) ** 2  # ~ max |v''|


def test_theorem_6_3_whorl(whorl, pendulum):
    alpha = critical_value(pendulum, grid=1024, dt=0.1).alpha
    rep = verify_theorem_6_3(whorl, pendulum, alpha, grid=512, horizon=100.0)
    assert rep.subsolution_ok
    assert rep.hausdorff_distance <= 2.0 * rep.grid_step
    assert rep.inv_L.converged and rep.inv_graph.converged
    assert rep.ok


def test_theorem_6_3_trivial_graph(pendulum):
    L = from_graph(0.02 * np.sin(2 * np.pi * GRID))
    rep = verify_theorem_6_3(L, pendulum, 1.05, grid=512, horizon=25.0)
    assert rep.ok and rep.hausdorff_distance == 0.0


def test_theorem_6_3_precondition(whorl, pendulum):
    with pytest.raises(ValueError, match="sublevel"):
        verify_theorem_6_3(whorl, pendulum, 0.5, grid=512)


def test_theorem_1_5_invariant_zero_section(free):
    L = from_graph(np.zeros(512))
    rep = verify_theorem_1_5(L, free, horizon=5.0)
    assert rep.invariant and rep.ok
    assert rep.energy == 0.0 and rep.is_graph


def test_theorem_1_5_non_invariant_cases(free, pendulum, whorl):
    Lv = from_graph(0.1 * np.sin(2 * np.pi * GRID))
    rep = verify_theorem_1_5(Lv, free, horizon=5.0)
    assert not rep.invariant and rep.ok  # reported, no claim
    rep2 = verify_theorem_1_5(whorl, pendulum, horizon=5.0)
    assert not rep2.invariant
    assert rep2.invariance_defect > 1e-2


def test_equivariance_smoke(pendulum):
    w = 0.12 * np.sin(2 * np.pi * GRID) / (2 * np.pi)
    hd, i1, i2 = equivariance_check(np.zeros(256), w, "0.12*cos(2*pi*q)",
                                    pendulum, a=1.0, horizon=50.0)
    assert len(i1) >= 1 and len(i2) >= 1
    assert hd <= 2.0 / 512


def test_dump_invariant_set(tmp_path, free):
    L = from_graph(np.zeros(256))
    est = maximal_invariant_set(L, free, 0.0, horizon=2.0)
    path = tmp_path / "inv.txt"
    dump_invariant_set(est, path)
    data = np.loadtxt(path, ndmin=2)
    assert data.shape == (256, 3)

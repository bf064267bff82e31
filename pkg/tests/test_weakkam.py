import numpy as np
import pytest

from selkam.hamcore import parse_hamiltonian
from selkam.weakkam import (critical_subsolution, critical_value,
                            critical_value_infmax, lax_oleinik_step,
                            subsolution_check, weak_kam_family)


def test_free_step_fixes_constants(free):
    u = np.zeros(256)
    assert np.max(np.abs(lax_oleinik_step(u, free, 0.1))) == 0.0


def test_step_monotone_nonexpansive_constants(free, pendulum):
    rng = np.random.default_rng(1)
    for H in (free, pendulum):
        a = rng.normal(size=256)
        b = a + np.abs(rng.normal(size=256))
        sa = lax_oleinik_step(a, H, 0.1)
        sb = lax_oleinik_step(b, H, 0.1)
        assert np.all(sa <= sb + 1e-12)                        # monotone
        assert np.max(np.abs(sa - sb)) <= np.max(np.abs(a - b)) + 1e-12
        sc = lax_oleinik_step(a + 0.7, H, 0.1)
        assert np.max(np.abs(sc - (sa + 0.7))) <= 1e-12        # exact shift


def test_step_rejects_bad_dt(free):
    with pytest.raises(ValueError):
        lax_oleinik_step(np.zeros(64), free, 0.7)


def test_critical_value_free(free):
    sol = critical_value(free, grid=256, dt=0.1)
    assert sol.alpha == pytest.approx(0.0, abs=1e-12)


def test_critical_value_pendulum(pendulum):
    sol = critical_value(pendulum, grid=1024, dt=0.1)
    assert abs(sol.alpha - 1.0) <= 1e-3
    assert sol.residual <= 1e-9
    # Lipschitz bound: max |p| on {H <= alpha + 1}
    n = sol.u.size
    du = (np.roll(sol.u, -1) - np.roll(sol.u, 1)) * n / 2
    p_bound = np.sqrt(2.0 * (sol.alpha + 1.0 + 1.0))
    assert np.max(np.abs(du)) <= p_bound


def test_critical_value_two_term():
    H = parse_hamiltonian("p^2/2 + cos(2*pi*q) + 0.3*cos(4*pi*q)", 1)
    sol = critical_value(H, grid=1024, dt=0.1)
    vmax = float(np.max(H.potential(np.arange(8192) / 8192)))
    assert abs(sol.alpha - vmax) <= 1e-3


def test_alpha_independent_of_initialization(pendulum):
    a1 = critical_value(pendulum, grid=512, dt=0.1).alpha
    a2 = critical_value(pendulum, grid=512, dt=0.1, seed=123).alpha
    assert abs(a1 - a2) <= 1e-3


def test_infmax_free(free):
    a_hat, info = critical_value_infmax(free, grid=512, restarts=2, sweeps=4)
    assert a_hat == pytest.approx(0.0, abs=1e-9)


def test_infmax_pendulum_bracket(pendulum):
    alpha = critical_value(pendulum, grid=1024, dt=0.1).alpha
    a_hat, _ = critical_value_infmax(pendulum, grid=1024, seed=5)
    assert alpha - 1e-3 <= a_hat <= alpha + 1e-2


def test_infmax_restricted_to_zero_section(pendulum):
    # with the zero graph alone the inf-max is max_q H(q, 0)
    q = np.arange(1024) / 1024
    single = float(np.max(pendulum.value(q, np.zeros_like(q))))
    a_hat, _ = critical_value_infmax(pendulum, grid=1024, restarts=1, sweeps=1)
    assert a_hat <= single + 1e-12


def test_subsolution_checks(free, pendulum):
    ok, bad, _ = subsolution_check(np.zeros(512), free, 0.0)
    assert ok and bad.size == 0
    big = 0.5 * np.sin(2 * np.pi * np.arange(512) / 512)
    ok2, bad2, _ = subsolution_check(big, free, 0.0)
    assert not ok2 and bad2.size > 0
    # the symmetrized critical solution is a subsolution away from kinks
    u, alpha = critical_subsolution(pendulum, grid=1024, dt=0.05)
    ok3, bad3, margin = subsolution_check(u, pendulum, alpha, tol=1e-2)
    n = 1024
    du = (np.roll(u, -1) - np.roll(u, 1)) * n / 2
    kink = np.abs(np.roll(du, -1) - du) > 0.5
    collar = np.zeros(n, dtype=bool)
    for j in np.nonzero(kink)[0]:
        for k in range(-2, 3):
            collar[(j + k) % n] = True
    assert all(collar[j] for j in bad3)
    assert np.max(margin[~collar]) <= 1e-2


def test_pendulum_aubry_and_mane(pendulum):
    sol = weak_kam_family(pendulum, grid=1024, dt=0.1, horizon=50.0)
    assert sol.aubry_pts.shape == (1, 2)
    assert np.hypot(sol.aubry_pts[0, 0], sol.aubry_pts[0, 1]) <= 2.0 / 1024
    assert len(sol.mane_pts) >= 1
    assert sol.meta["family_size"] >= 2


def test_double_well_structure(double_well):
    sol = weak_kam_family(double_well, grid=1024, dt=0.1, horizon=50.0)
    qs = np.sort(sol.aubry_pts[:, 0])
    assert sol.aubry_pts.shape[0] == 2
    assert abs(qs[0] - 0.0) <= 2.0 / 1024 and abs(qs[1] - 0.5) <= 2.0 / 1024
    # heteroclinics appear in the Mane set
    m = sol.mane_pts
    assert np.sum(np.abs(m[:, 1]) > 0.5) > 100
    # Aubry subset of Mane subset of the critical shell
    for a in sol.aubry_pts:
        dq = np.abs(m[:, 0] - a[0])
        dq = np.minimum(dq, 1 - dq)
        assert np.min(np.hypot(dq, m[:, 1] - a[1])) <= 2.0 / 1024
    vals = double_well.value(m[:, 0], m[:, 1])
    assert np.max(np.abs(vals - sol.alpha)) <= 1e-3


def test_dim2_critical_value():
    H = parse_hamiltonian("(p1^2 + p2^2)/2 + 0.3*cos(2*pi*q1) + 0.2*cos(2*pi*q2)", 2)
    sol = critical_value(H, grid=128, dt=0.1, max_iters=2000)
    assert abs(sol.alpha - 0.5) <= 1e-3

import numpy as np
import pytest

from selkam.hamcore import integrate
from selkam.lagrangian import (ExactnessError, from_flow, from_graph,
                               from_parametric, line_integral_check,
                               load_lagrangian, mollify_sequence,
                               resample_uniform_speed, save_lagrangian,
                               verify_exactness)

GRID = np.arange(256) / 256


def scan_multiplicity(L, q, n=4096):
    """Independent fiber-count oracle: dense arc-length-uniform scan.

    Scanning uniformly in the raw parameter is blind where the flow
    compresses it; uniform phase-space speed resolves every crossing.
    """
    dq = np.diff(np.append(L.q, L.q[0] + L.winding))
    dp = np.diff(np.append(L.p, L.p[0]))
    s = np.concatenate([[0.0], np.cumsum(np.hypot(dq, dp))])
    s /= s[-1]
    ts = np.interp(np.arange(n) / n, s, np.append(L.t, L.t[0] + 1.0))
    Q = L.interp_q()(ts)
    count = 0
    for k in range(int(np.floor(Q.min() - q)) - 1, int(np.ceil(Q.max() - q)) + 1):
        d = Q - (q + k)
        count += int(np.sum(d[:-1] * d[1:] < 0))
    return count


def test_from_graph_zero_section():
    L = from_graph(np.zeros(128))
    assert L.pmax == 0.0 and np.all(L.S == 0.0)
    assert verify_exactness(L).ok


def test_from_graph_sine():
    v = 0.1 * np.sin(2 * np.pi * GRID)
    L = from_graph(v)
    assert L.p[0] == pytest.approx(0.2 * np.pi, abs=1e-10)
    rep = verify_exactness(L)
    assert rep.loop_residual <= 1e-10 and rep.ok
    # h at (q=0.25, p=0) is v(0.25) - v(0) = 0.1 in the anchored frame
    idx = np.argmin(np.abs(L.t - 0.25))
    assert L.S[idx] == pytest.approx(0.1, abs=1e-9)


def test_from_graph_too_coarse():
    with pytest.raises(ValueError, match="64"):
        from_graph(np.zeros(32))


def test_from_parametric_antiderivative_oracle():
    t = np.arange(512) / 512
    L = from_parametric(t, t, np.sin(2 * np.pi * t))
    oracle = (1 - np.cos(2 * np.pi * t)) / (2 * np.pi)
    assert np.max(np.abs(L.S - oracle)) <= 1e-8


def test_from_parametric_rejects_nonexact():
    t = np.arange(512) / 512
    with pytest.raises(ExactnessError) as exc:
        from_parametric(t, t, np.ones_like(t))
    assert exc.value.residual == pytest.approx(1.0, abs=1e-12)


def test_from_parametric_zero_loop():
    t = np.arange(512) / 512
    L = from_parametric(t, t, np.zeros_like(t))
    assert np.all(L.S == 0.0)


def test_from_flow_time_zero_is_graph(pendulum):
    v = 0.1 * np.sin(2 * np.pi * GRID)
    L = from_flow(v, pendulum, 0.0, steps=1)
    assert L.kind == "flowed" and L.meta["T"] == 0.0
    assert np.max(np.abs(L.q - L.t)) <= 1e-12
    assert L.s_offset == pytest.approx(v[0], abs=1e-9)


def test_from_flow_short_time_still_graph(pendulum):
    L = from_flow(np.zeros(256), pendulum, 0.2, steps=200, initial_samples=1024)
    counts = [scan_multiplicity(L, q) for q in np.linspace(0, 1, 17)]
    assert max(counts) == 1


def test_from_flow_whorl_multiplicity(whorl):
    # dense scan oracle at 2^16 parameters: some fibers meet L in >= 3 points
    counts = [scan_multiplicity(whorl, q, n=2 ** 16) for q in (0.5, 0.99, 0.25)]
    assert counts[1] == 3
    assert max(counts) >= 3 and all(c % 2 == 1 for c in counts)


def test_whorl_exactness(whorl):
    rep = verify_exactness(whorl)
    assert rep.ok
    assert rep.max_interval_residual <= 1e-6 * max(rep.arc_length, 1.0)
    assert rep.loop_residual <= 1e-8 * rep.arc_length


def test_exactness_flags_corrupted_primitive(whorl):
    import copy
    L = copy.copy(whorl)
    S = whorl.S.copy()
    S[len(S) // 2] += 0.1
    L.S = S
    rep = verify_exactness(L)
    assert not rep.ok
    assert rep.max_interval_residual == pytest.approx(0.1, rel=0.05)


def test_transport_consistency_scales_with_dt(pendulum):
    v = 0.05 * np.sin(2 * np.pi * GRID)
    c1 = from_flow(v, pendulum, 0.5, steps=250, initial_samples=1024).meta[
        "transport_consistency"]
    c2 = from_flow(v, pendulum, 0.5, steps=500, initial_samples=1024).meta[
        "transport_consistency"]
    assert c2 <= c1 / 2.5  # second-order transport accumulation


def test_flow_composition(pendulum):
    # T = T1 + T2 equals composing the two flows, states and action alike
    params = np.arange(64) / 64
    p0 = 0.1 * np.cos(2 * np.pi * params)
    Q1, P1, A1 = integrate(pendulum, params, p0, 1e-3, 500, accumulate_action=True)
    Q2, P2, A2 = integrate(pendulum, Q1, P1, 1e-3, 500, accumulate_action=True)
    Qf, Pf, Af = integrate(pendulum, params, p0, 1e-3, 1000, accumulate_action=True)
    assert np.max(np.abs(Q2 - Qf)) <= 1e-12
    assert np.max(np.abs(P2 - Pf)) <= 1e-12
    assert np.max(np.abs((A1 + A2) - Af)) <= 1e-12


def test_mollify_tent_halves_per_level():
    n = 4096
    g = np.arange(n) / n
    p = np.where(g < 0.5, 0.2, -0.2)
    S = np.concatenate([[0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(g))])
    seq = mollify_sequence((g, g, p, S), levels=4)
    ratios = seq.sup_dists[1:] / seq.sup_dists[:-1]
    assert np.all(np.abs(ratios - 0.5) <= 0.05)
    assert np.all(np.diff(seq.sup_dists) < 0)
    for entry in seq.entries:
        assert verify_exactness(entry).ok


def test_mollify_smooth_target_stays_close():
    v = 0.1 * np.sin(2 * np.pi * GRID)
    L = from_graph(v)
    seq = mollify_sequence(L, levels=3, base_width=1.0 / 64)
    assert seq.sup_dists[-1] <= 5e-3
    assert seq.equilip_const <= 2.0 * max(L.lipschitz_bound, 1.0)


def test_mollify_rejects_nonexact():
    n = 2048
    g = np.arange(n) / n
    with pytest.raises(ExactnessError):
        mollify_sequence((g, g, np.ones(n), np.zeros(n)), levels=2)


def test_line_integral_examples(whorl_mid):
    assert line_integral_check(whorl_mid, np.array([0.3, 0.3])) == 0.0
    assert line_integral_check(whorl_mid, np.array([0.0, 1.0])) <= 1e-8
    rng = np.random.default_rng(5)
    worst = max(line_integral_check(whorl_mid, np.sort(rng.uniform(0, 1, 4)))
                for _ in range(30))
    assert worst <= 1e-6
    # non-monotone parameter path
    assert line_integral_check(whorl_mid, np.array([0.1, 0.6, 0.3, 0.8])) <= 1e-6


def test_reparametrization_invariance(whorl_mid):
    L2 = resample_uniform_speed(whorl_mid, 4096)
    # geometric points must carry the same primitive value; the matching
    # parameter on the uniform-speed curve is the arc-length fraction
    dq = np.diff(np.append(whorl_mid.q, whorl_mid.q[0] + whorl_mid.winding))
    dp = np.diff(np.append(whorl_mid.p, whorl_mid.p[0]))
    s = np.concatenate([[0.0], np.cumsum(np.hypot(dq, dp))])
    s /= s[-1]
    tc = np.append(whorl_mid.t, whorl_mid.t[0] + 1.0)
    t_match = np.interp(L2.t, s, tc)          # original params of L2's nodes
    h1 = np.atleast_1d(whorl_mid.primitive_at(t_match))
    shift = L2.s_offset - whorl_mid.s_offset
    assert np.max(np.abs((L2.S + shift) - h1)) <= 1e-9
    # between nodes the two discretizations agree to interpolation accuracy
    mids = (L2.t[:-1] + L2.t[1:]) / 2
    h2m = np.atleast_1d(L2.primitive_at(mids[::64]))
    h1m = np.atleast_1d(whorl_mid.primitive_at(np.interp(mids[::64], s, tc)))
    assert np.max(np.abs((h2m + shift) - h1m)) <= 1e-4


def test_save_load_roundtrip(tmp_path, whorl_mid):
    path = tmp_path / "L.dat"
    save_lagrangian(whorl_mid, path)
    L2 = load_lagrangian(path)
    assert L2.winding == 1 and L2.dim == 1
    assert np.max(np.abs(L2.q - whorl_mid.q)) <= 1e-12
    assert np.max(np.abs(L2.S - whorl_mid.S)) <= 1e-12


def test_dim2_graph_exactness():
    g = np.arange(128) / 128
    v = 0.02 * np.outer(np.sin(2 * np.pi * g), np.cos(2 * np.pi * g))
    L = from_graph(v, dim=2)
    rep = verify_exactness(L)
    assert rep.ok
    r = line_integral_check(L, np.array([[0.1, 0.2], [0.4, 0.7], [0.8, 0.3]]))
    assert r <= 1e-5

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deeprelay.linear import (
    LinearOptConfig, analyze_linear, balance_zeta, linear_ber, log_snr_and_grad, optimize_balanced, optimize_linear,
    project,
)
from deeprelay.modem import ModulationScheme, estimate_ber
from deeprelay.network import LayeredNetwork, NoiseModel, RelayParams, forward_batch
from deeprelay.topology import build_fig3, build_fig4, build_random

ES = 5 / 9
SCHEME = ModulationScheme()


def single(h=1.0, g=1.0, M=1):
    return LayeredNetwork(h=(np.array([h]),), g=(np.full((1, M), g),))


def test_single_relay_hand_propagation():
    a = analyze_linear(single(), [1.0], 0.1, ES)
    assert a.gain[0] == pytest.approx(1.0)
    assert a.noise_var[0] == pytest.approx(0.2)
    assert a.snr[0] == pytest.approx(ES / 0.2) and a.snr[0] == pytest.approx(2.778, abs=1e-3)
    assert a.relay_power[0] == pytest.approx(ES + 0.1)


def test_zero_gains():
    a = analyze_linear(build_fig4(), np.zeros(6), 0.3, ES)
    assert np.all(a.snr == 0) and np.all(a.relay_power == 0) and np.allclose(a.noise_var, 0.3)


def test_two_layer_by_hand():
    # relay 1: y1 = 2s + n1, o1 = w1 y1; relay 2: y2 = 3 o1 + n2, o2 = w2 y2; r = o2 + n
    net = LayeredNetwork(h=(np.array([2.0]), np.zeros(1)), g=(np.zeros((1, 1)), np.ones((1, 1))),
                         F={(1, 0): np.array([[3.0]])})
    w1, w2, s2 = 0.5, 0.25, 0.2
    a = analyze_linear(net, [w1, w2], s2, ES)
    assert a.gain[0] == pytest.approx(w2 * 3 * w1 * 2)
    assert a.noise_var[0] == pytest.approx(s2 * ((w2 * 3 * w1) ** 2 + w2 ** 2 + 1))
    assert a.relay_power[1] == pytest.approx(w2 ** 2 * ((3 * w1 * 2) ** 2 * ES + s2 * (9 * w1 ** 2 + 1)))


def mc_linear(net, w, sigma2, trials, seed):
    """Monte-Carlo conditional variance of r given s, and E[o^2], for identity relays."""
    p = RelayParams.from_flat(net, w, np.zeros(net.N))
    rng = np.random.default_rng(seed)
    s = SCHEME.modulate_batch(SCHEME.random_bits(trials, rng))
    tr = forward_batch(net, p, s, NoiseModel(sigma2), rng, linear=True)
    gain = analyze_linear(net, w, sigma2, ES).gain
    resid = tr.R - np.outer(s, gain)
    return resid.var(axis=0), np.mean(tr.O ** 2, axis=0)


def test_analysis_matches_simulation_random_net():
    net = build_random((3, 2, 3), 2, seed=8)
    w = np.random.default_rng(0).uniform(-0.5, 0.5, net.N)
    a = analyze_linear(net, w, 0.2, ES)
    var, power = mc_linear(net, w, 0.2, 200_000, 1)
    assert np.allclose(var, a.noise_var, rtol=0.02)
    assert np.allclose(power, a.relay_power, rtol=0.02)


def test_log_snr_gradient_matches_finite_differences():
    net = build_random((2, 3, 2), 2, seed=1)
    w = np.random.default_rng(3).uniform(0.2, 0.8, net.N)
    _, grad = log_snr_and_grad(net, w, 0.1, ES)
    for k in range(net.N):
        e = np.zeros(net.N)
        e[k] = 1e-6
        num = (log_snr_and_grad(net, w + e, 0.1, ES)[0] - log_snr_and_grad(net, w - e, 0.1, ES)[0]) / 2e-6
        assert np.allclose(grad[:, k], num, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("sigma2", [0.01, 0.1, 1.0])
@pytest.mark.parametrize("p_max", [0.64, 1.0, 2.5])
def test_single_relay_closed_form(sigma2, p_max):
    res = optimize_linear(single(), LinearOptConfig(p_max=p_max, restarts=2), sigma2, ES)
    assert abs(res.w[0]) == pytest.approx(np.sqrt(p_max / (ES + sigma2)), abs=1e-6)
    assert res.analysis.relay_power[0] <= p_max + 1e-9


def test_symmetric_pair_beats_equal_gain_heuristic():
    net = LayeredNetwork(h=(np.array([1.0, 0.5]),), g=(np.array([[1.0], [2.0]]),))
    sigma2 = 0.1
    res = optimize_linear(net, LinearOptConfig(), sigma2, ES)
    # equal gains, scaled until the stronger relay hits the cap
    w_eq = project(net, np.full(2, 1e300), 0.64, sigma2, ES)
    w_eq = np.full(2, np.abs(w_eq).min())
    assert res.objective >= analyze_linear(net, w_eq, sigma2, ES).snr.min()


def test_fig3_objective_stable_across_seeds():
    vals = [optimize_linear(build_fig3(), LinearOptConfig(seed=s, restarts=3), 0.1, ES).objective for s in range(4)]
    assert max(vals) - min(vals) <= 0.01 * max(vals)


def test_trace_is_non_decreasing_per_restart():
    res = optimize_linear(build_fig4(), LinearOptConfig(restarts=3), 0.05, ES)
    for k in range(3):
        obj = [row[2] for row in res.trace if row[0] == k]
        assert np.all(np.diff(obj) >= -1e-9 * max(obj))
        assert max(row[3] for row in res.trace if row[0] == k) <= 1e-9


def test_zeta_scaling_invariance():
    net = build_fig4()
    a = optimize_linear(net, LinearOptConfig(zeta=(1.0, 0.5), restarts=2), 0.05, ES)
    b = optimize_linear(net, LinearOptConfig(zeta=(7.0, 3.5), restarts=2), 0.05, ES)
    assert np.array_equal(a.w, b.w)


nets = st.sampled_from([build_fig3(), build_fig4(), build_random((2, 2, 3), 2, seed=0),
                        build_random((1, 3), 2, seed=6, density=0.5)])


@settings(max_examples=15, deadline=None)
@given(net=nets, p_max=st.floats(0.05, 4), sigma2=st.floats(1e-4, 2), seed=st.integers(0, 1000))
def test_solution_always_feasible(net, p_max, sigma2, seed):
    res = optimize_linear(net, LinearOptConfig(p_max=p_max, restarts=1, max_iter=60, seed=seed), sigma2, ES)
    assert np.all(res.analysis.relay_power <= p_max + 1e-9)


@settings(max_examples=30, deadline=None)
@given(net=nets, sigma2=st.floats(1e-3, 1), seed=st.integers(0, 2**32 - 1))
def test_projection_is_feasible_and_idempotent(net, sigma2, seed):
    w = np.random.default_rng(seed).normal(size=net.N) * 10
    pw = project(net, w, 0.64, sigma2, ES)
    assert np.all(analyze_linear(net, pw, sigma2, ES).relay_power <= 0.64 * (1 + 1e-12))
    assert np.allclose(project(net, pw, 0.64, sigma2, ES), pw, rtol=1e-12, atol=0)


def test_noise_floor_invariant():
    a = analyze_linear(build_fig4(), np.random.default_rng(0).normal(size=6), 0.07, ES)
    assert np.all(a.noise_var >= 0.07)


def test_balance_single_user_is_one():
    assert np.array_equal(balance_zeta(single(), [1.0], 0.1), [1.0])


def test_balance_ratio_follows_decision_distances():
    """At high SNR zeta_2/zeta_1 -> (d_2/d_1)^2, with d_1 = 1/3 (inner point to the sign threshold)
    and d_2 the distance from the nearer point to the normalized threshold sqrt(Es)."""
    d1 = 1 / 3
    d2 = min(np.sqrt(ES) - 1 / 3, 1 - np.sqrt(ES))
    z = balance_zeta(build_fig3(), np.full(7, 0.1), 1e-5, SCHEME, ("bpsk", "pam"))
    assert z[0] == 1.0
    assert z[1] == pytest.approx((d2 / d1) ** 2, rel=0.02)


def test_balance_scale_free():
    net = build_fig3()
    z1 = balance_zeta(net, np.full(7, 0.1), 1e-3, SCHEME, ("bpsk", "pam"))
    z2 = balance_zeta(net, np.full(7, 0.1) * 1.0, 1e-3, SCHEME, ("bpsk", "pam"))
    assert np.array_equal(z1, z2) and z1.max() == 1.0


@pytest.mark.parametrize("seed,sigma2", [(2, 0.1), (1, 0.03)])
def test_balanced_solution_equalizes_ber(seed, sigma2):
    net = build_random((2, 3), 2, seed=seed)
    res = optimize_balanced(net, LinearOptConfig(restarts=2), sigma2, SCHEME, ("bpsk", "pam"))
    ber = linear_ber(res.analysis, SCHEME, ("bpsk", "pam"))
    assert np.ptp(ber) <= 0.01 * ber.max()


@pytest.mark.parametrize("net", [build_fig4(), build_random((2, 3), 2, seed=5)], ids=["fig4", "random"])
def test_balancing_never_hurts_the_worst_user(net):
    cfg = LinearOptConfig(restarts=2)
    plain = linear_ber(optimize_linear(net, cfg, 0.03, ES).analysis, SCHEME, ("bpsk", "pam"))
    res = optimize_balanced(net, cfg, 0.03, SCHEME, ("bpsk", "pam"))
    assert linear_ber(res.analysis, SCHEME, ("bpsk", "pam")).max() <= plain.max()


def test_linear_ber_matches_simulation():
    net = build_fig4()
    res = optimize_linear(net, LinearOptConfig(restarts=2), 0.1, ES)
    p = RelayParams.from_flat(net, res.w, np.zeros(net.N))
    exact = linear_ber(res.analysis, SCHEME, ("bpsk", "pam"))
    est = estimate_ber(net, p, SCHEME, NoiseModel(0.1), ("bpsk", "pam"), 400_000, 2, polarity=res.polarity(),
                       linear=True)
    half = est.confidence_halfwidth(4.0).ravel()
    # the detector normalizes by the batch RMS, the formula by the exact RMS; both agree at this batch size
    assert np.all(np.abs(est.ber.ravel() - exact) <= half + 1e-3 * exact)


def test_errors():
    with pytest.raises(ValueError):
        LinearOptConfig(p_max=0)
    with pytest.raises(ValueError):
        LinearOptConfig(zeta=(1.0, -1.0))
    with pytest.raises(ValueError):
        optimize_linear(build_fig4(), LinearOptConfig(), 0.0, ES)

import itertools

import numpy as np
import pytest

from deeprelay.experiments import (
    BerCurve, crossing_db, decisions_match, detectors_for, evaluate, gap_db, transfer_curve,
)
from deeprelay.modem import ModulationScheme, estimate_ber
from deeprelay.network import NoiseModel, RelayParams
from deeprelay.topology import build_fig3, build_fig4, build_random


def test_crossing_interpolates_in_log_ber():
    grid = [0.0, 10.0, 20.0]
    # log10 BER: -1, -2, -4; target 1e-3 sits halfway between 10 and 20 dB
    assert crossing_db(grid, [1e-1, 1e-2, 1e-4], 1e-3) == pytest.approx(15.0)
    assert crossing_db(grid, [1e-1, 1e-2, 1e-4], 1e-2) == pytest.approx(10.0)
    assert crossing_db(grid, [0.5, 0.4, 0.3], 1e-3) == np.inf
    assert crossing_db(grid, [1e-5, 1e-6, 0.0], 1e-3) == -np.inf


def test_crossing_handles_zero_ber():
    assert crossing_db([0.0, 10.0], [1e-2, 0.0], 1e-3) == pytest.approx(10.0 * 1 / 298, rel=1e-9)


def test_gap_is_reference_minus_improved():
    ref = BerCurve([0, 10, 20], [[0.1], [0.01], [0.001]], 1000)
    better = BerCurve([0, 10, 20], [[0.01], [0.001], [0.0001]], 1000)
    assert gap_db(ref, better, 1e-3) == pytest.approx(10.0)


def test_gap_when_a_curve_never_reaches_the_target():
    ref = BerCurve([0, 10], [[0.1], [0.05]], 1000)
    better = BerCurve([0, 10], [[0.01], [0.0001]], 1000)
    assert gap_db(ref, better, 1e-3) == np.inf
    assert gap_db(better, ref, 1e-3) == -np.inf
    assert np.isnan(gap_db(ref, ref, 1e-3))


def test_curve_worst_and_grid_order():
    c = BerCurve([0, 1], [[0.1, 0.3], [0.2, 0.05]], 10)
    assert c.worst.tolist() == [0.3, 0.2]
    with pytest.raises(ValueError):
        BerCurve([1, 0], [[0.1], [0.1]], 10)


def test_ber_csv_round_trip(tmp_path):
    c = BerCurve([0.0, 2.5, 5.0], np.random.default_rng(0).random((3, 2)) / 3, 12345)
    c.to_csv(tmp_path / "c.csv")
    d = BerCurve.from_csv(tmp_path / "c.csv")
    assert np.array_equal(d.ber, c.ber) and np.array_equal(d.inv_sigma2_db, c.inv_sigma2_db) and d.trials == 12345


def test_evaluate_is_reproducible_and_seeded_per_point():
    net = build_fig4()
    p = RelayParams.from_flat(net, np.full(net.N, 0.8), np.zeros(net.N))
    scheme = ModulationScheme(n_users=2)
    a = evaluate(net, p, None, scheme, ("bpsk", "pam"), [5.0, 10.0], 3000, seed=4)
    b = evaluate(net, p, None, scheme, ("bpsk", "pam"), [5.0, 10.0], 3000, seed=4)
    assert np.array_equal(a.ber, b.ber)
    one = estimate_ber(net, p, scheme, NoiseModel.from_inv_db(10.0), ("bpsk", "pam"), 3000, 4 + 1000)
    assert np.array_equal(a.ber[1], one.ber.ravel())


def test_detectors_for_losses():
    assert detectors_for(("bpsk", "pam")) == ("bpsk", "pam")
    assert detectors_for(("bpsk", None)) == ("bpsk", "bpsk")


def test_transfer_is_odd_without_bias():
    net = build_random((3, 2), 2, seed=9)
    p = RelayParams.from_flat(net, np.random.default_rng(1).normal(size=net.N), np.zeros(net.N))
    tc = transfer_curve(net, p, ModulationScheme(n_users=2), points=101)
    assert np.allclose(tc.r, -tc.r[::-1], rtol=0, atol=1e-15)
    assert tc.s[0] == -1 and tc.s[-1] == 1


def test_transfer_polarity_and_markers():
    net = build_fig4()
    p = RelayParams.from_flat(net, np.full(net.N, 0.5), np.zeros(net.N))
    scheme = ModulationScheme(n_users=2)
    a = transfer_curve(net, p, scheme)
    b = transfer_curve(net, p, scheme, polarity=[-1, 1])
    assert np.array_equal(b.r[:, 0], -a.r[:, 0]) and np.array_equal(b.r[:, 1], a.r[:, 1])
    assert np.allclose(np.mean(a.marker_rt ** 2, axis=0), 1.0)
    assert a.marker_bits.tolist() == [[0, 0], [0, 1], [1, 1], [1, 0]]


def test_decisions_match_linear_user1():
    net = build_fig3()
    p = RelayParams.from_flat(net, np.full(7, 1e-3), np.zeros(7))
    tc = transfer_curve(net, p, ModulationScheme(n_users=2))
    assert decisions_match(tc, 0, "bpsk")
    # a linear map puts the outer points outside the unit circle and the inner ones inside
    assert decisions_match(tc, 1, "pam")
    assert not decisions_match(tc, 1, "bpsk")


def both_sign_bound():
    """Best worst-user error of two sign detectors that both read one noiseless function of the symbol."""
    scheme = ModulationScheme(n_users=2)
    t1, t2 = scheme.labels[:, 0], scheme.labels[:, 1]
    best = 1.0
    for x in itertools.product((0, 1), repeat=4):
        x = np.array(x)
        e1 = min(np.mean(x != t1), np.mean(x == t1))  # either receiver polarity
        e2 = min(np.mean(x != t2), np.mean(x == t2))
        best = min(best, max(e1, e2))
    return best


def test_fig3_both_bpsk_bound_by_enumeration():
    assert both_sign_bound() == 0.25


@pytest.mark.parametrize("seed", range(4))
def test_fig3_both_bpsk_never_beats_a_quarter(seed):
    # identical receiver gains: each user's P(decide 1 | s) is q(s) or 1 - q(s) for one shared q,
    # so err1 + err2 >= 1/2 for any gains and biases, with or without noise
    net = build_fig3()
    rng = np.random.default_rng(seed)
    p = RelayParams.from_flat(net, rng.normal(size=7) * 3, rng.normal(size=7))
    scheme = ModulationScheme(n_users=2)
    trials = 40_000
    for pol in ([1, 1], [1, -1]):
        est = estimate_ber(net, p, scheme, NoiseModel(0.01), ("bpsk", "bpsk"), trials, seed, polarity=pol)
        assert est.ber.ravel().sum() >= 0.5 - 4 * np.sqrt(0.25 / trials)

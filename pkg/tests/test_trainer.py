import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _fd import max_rel_error
from deeprelay.modem import ModulationScheme, detect_bpsk, detect_pam_user2
from deeprelay.network import LayeredNetwork, RelayParams
from deeprelay.topology import build_fig3, build_fig4, build_random
from deeprelay.trainer import (
    DegenerateBatchError, TrainConfig, TrainingDiverged, batch_loss_and_gradient, draw_batch, frozen_loss,
    initialize, loss_and_gradient, loss_bpsk, loss_pam, normalize_batch, preactivation_rms, relay_input_power, train,
)

SCHEME = ModulationScheme()


def test_normalize_examples():
    rt, rms = normalize_batch(np.array([1.0, -1.0]))
    assert rms == 1.0 and np.array_equal(rt, [1.0, -1.0])
    rt, rms = normalize_batch(np.array([2.0, 0.0]))
    assert rms == pytest.approx(np.sqrt(2)) and np.allclose(rt, [np.sqrt(2), 0.0])
    with pytest.raises(DegenerateBatchError):
        normalize_batch(np.zeros(4))
    with pytest.raises(ValueError):
        normalize_batch(np.ones(1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=50).filter(lambda v: any(v)))
def test_normalized_mean_square_is_one(values):
    rt, _ = normalize_batch(np.array(values))
    assert abs(np.mean(rt * rt) - 1.0) < 1e-12


def test_loss_examples():
    assert loss_bpsk(0, 0.0) == pytest.approx(1.0)
    # the vanishing example, stated for the bit the r > 0 detector decodes from rt = +20
    assert loss_bpsk(1, 20.0) == pytest.approx(np.exp(-20) / np.log(2), rel=1e-6)
    assert loss_bpsk(0, -20.0) == pytest.approx(2.97e-9, rel=1e-2)
    assert loss_bpsk(1, 3.0) == loss_bpsk(0, -3.0)
    assert loss_pam(0, 1.0) == pytest.approx(1.0) and loss_pam(0, -1.0) == pytest.approx(1.0)
    outer = 1 / np.sqrt(5 / 9)
    assert outer == pytest.approx(1.342, abs=1e-3)
    assert loss_pam(0, outer) == pytest.approx(np.log2(1 + np.exp(-0.8)), abs=1e-12)
    assert loss_pam(0, outer) == pytest.approx(0.5354, abs=1e-4)
    assert np.isfinite(loss_bpsk(0, 1e6)) and loss_bpsk(1, 1e6) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 1), st.floats(-50, 50, allow_nan=False))
def test_loss_below_one_iff_decoded_correctly(u, rt):
    # within ~1e-16 of a threshold the loss rounds to exactly 1
    if abs(rt) > 1e-12:
        assert (loss_bpsk(u, rt) < 1) == (detect_bpsk(rt) == u)
    if abs(rt * rt - 1) > 1e-12:
        assert (loss_pam(u, rt) < 1) == (detect_pam_user2(rt, 1.0) == u)
    assert loss_pam(u, rt) == loss_pam(u, -rt)
    assert loss_bpsk(u, rt) > 0 or abs(rt) > 30


@pytest.mark.parametrize("net", [build_fig3(), build_fig4(), build_random((2, 3, 2), 2, seed=4)],
                         ids=["fig3", "fig4", "random"])
def test_gradient_matches_finite_differences(net):
    assert max_rel_error(net, seed=1) < 1e-6


def test_gradient_through_normalizer_with_large_perturbation_effect():
    """Tiny batch, so every parameter visibly moves the RMS normalizer."""
    assert max_rel_error(build_fig4(), seed=5, B=3, sigma2=0.5) < 1e-6


def test_gradient_with_polarity_and_bpsk_pair():
    net = build_fig4()
    rng = np.random.default_rng(2)
    w, b = rng.normal(size=6), rng.normal(size=6) * 0.2
    bits, s, relay, recv = draw_batch(net, SCHEME, 32, 0.1, rng)
    pol = np.array([-1.0, 1.0])
    _, _, gw, _ = loss_and_gradient(net, w, b, s, bits, relay, recv, ("bpsk", "bpsk"), polarity=pol)
    k, h = 4, 1e-6
    wp, wm = w.copy(), w.copy()
    wp[k] += h
    wm[k] -= h
    f = lambda ww: loss_and_gradient(net, ww, b, s, bits, relay, recv, ("bpsk", "bpsk"), False, pol)[0]
    assert gw[k] == pytest.approx((f(wp) - f(wm)) / (2 * h), rel=1e-6)


def test_mirror_relays_get_equal_bias_gradients():
    net = LayeredNetwork(h=(np.array([1.5, 1.5]),), g=(np.ones((2, 2)),))
    rng = np.random.default_rng(0)
    bits, s, relay, recv = draw_batch(net, SCHEME, 256, 0.0, rng)
    _, _, gw, gb = loss_and_gradient(net, np.full(2, 0.7), np.zeros(2), s, bits, relay, recv, ("bpsk", "pam"))
    assert gb[0] == pytest.approx(gb[1], rel=1e-12, abs=1e-15)
    assert gw[0] == pytest.approx(gw[1], rel=1e-12, abs=1e-15)


def test_dead_path_has_zero_gradient():
    # relay 0 only reaches receiver 0, relay 1 only receiver 1; receiver 1 has no loss
    net = LayeredNetwork(h=(np.array([1.0, -2.0]),), g=(np.array([[1.0, 0.0], [0.0, 1.0]]),))
    rng = np.random.default_rng(0)
    bits, s, relay, recv = draw_batch(net, SCHEME, 64, 0.1, rng)
    _, per_user, gw, gb = loss_and_gradient(net, np.array([0.5, 0.5]), np.array([0.1, 0.1]), s, bits, relay, recv,
                                            ("bpsk", None))
    assert gw[1] == 0.0 and gb[1] == 0.0 and gw[0] != 0.0
    assert per_user[1] == 0.0


def test_batch_loss_and_gradient_shapes():
    net = build_fig4()
    p = initialize(net, SCHEME, "normalized", 2000, np.random.default_rng(0), 0.05)
    loss, grad = batch_loss_and_gradient(net, p, SCHEME, TrainConfig(), np.random.default_rng(1))
    assert np.isfinite(loss)
    assert [v.shape for v in grad.w] == [v.shape for v in p.w]


def test_zero_learning_rate_keeps_params():
    net = build_fig4()
    start = initialize(net, SCHEME, "normalized", 2000, np.random.default_rng(0), 0.05)
    out, hist = train(net, SCHEME, TrainConfig(eta=0.0, steps=25), params=start)
    assert out == start and len(hist.loss) == 25


def test_training_is_deterministic():
    net = build_fig4()
    cfg = TrainConfig(steps=50, eta=0.5, seed=3)
    a, ha = train(net, SCHEME, cfg)
    b, hb = train(net, SCHEME, cfg)
    assert a == b and ha.loss == hb.loss


def test_training_lowers_the_loss_fig4():
    """Fig.-4 network, B=512, eta=0.1, T=2000, sigma2=0.05 over 20 seeds."""
    net = build_fig4()
    better = 0
    for seed in range(20):
        cfg = TrainConfig(batch_size=512, eta=0.1, steps=2000, sigma2=0.05, seed=seed)
        rng = np.random.default_rng(seed)
        start = initialize(net, SCHEME, cfg.init_mode, cfg.probe_batch, rng, cfg.sigma2)
        params, hist = train(net, SCHEME, cfg, rng=rng, params=start)
        pol = hist.polarity
        before = frozen_loss(net, start, SCHEME, cfg.losses, cfg.sigma2, 20_000, 10_000 + seed, pol)
        after = frozen_loss(net, params, SCHEME, cfg.losses, cfg.sigma2, 20_000, 10_000 + seed, pol)
        better += after < before
    assert better >= 19


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_the_step():
    net = build_fig4()
    with pytest.raises(TrainingDiverged) as err:
        train(net, SCHEME, TrainConfig(eta=np.inf, steps=10))
    assert err.value.step == 1


def test_input_scaled_step_divides_by_input_power():
    net = build_fig4()
    start = initialize(net, SCHEME, "normalized", 2000, np.random.default_rng(0), 0.05)
    cfg = TrainConfig(eta=0.2, steps=1, seed=5, input_scaled=True)
    out, hist = train(net, SCHEME, cfg, params=start)
    # replay the single step by hand
    rng = np.random.default_rng(5)
    bits, s, relay, recv = draw_batch(net, SCHEME, cfg.batch_size, cfg.sigma2, rng)
    _, _, gw, gb = loss_and_gradient(net, start.w_flat, start.b_flat, s, bits, relay, recv, cfg.losses,
                                     polarity=hist.polarity)
    power = relay_input_power(net, start, SCHEME, cfg.sigma2, cfg.probe_batch,
                              np.random.SeedSequence(5, spawn_key=(0x5CA1E,)))
    assert np.allclose(out.w_flat, start.w_flat - 0.2 * gw / power, rtol=1e-12, atol=0)
    assert np.allclose(out.b_flat, start.b_flat - 0.2 * gb, rtol=1e-12, atol=0)


def test_input_scaling_is_invariant_to_source_gain():
    """Scaling every source link by c leaves the input-scaled trajectory unchanged after undoing c in w."""
    net = build_fig3()
    louder = LayeredNetwork(h=(net.h[0] * 1e3,), g=net.g)
    cfg = TrainConfig(eta=0.5, steps=30, sigma2=0.0, seed=2, input_scaled=True)
    start = RelayParams.from_flat(net, np.full(7, 0.3), np.zeros(7))
    a, _ = train(net, SCHEME, cfg, params=start)
    b, _ = train(louder, SCHEME, cfg, params=RelayParams.from_flat(net, start.w_flat / 1e3, np.zeros(7)))
    assert np.allclose(b.w_flat * 1e3, a.w_flat, rtol=1e-8)
    assert np.allclose(b.b_flat, a.b_flat, rtol=1e-8, atol=1e-12)


def test_history_csv_has_one_row_per_step(tmp_path):
    _, hist = train(build_fig3(), SCHEME, TrainConfig(steps=17))
    hist.to_csv(tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["step", "loss", "loss_u1", "loss_u2"] and len(rows) == 18
    assert float(rows[5][1]) == pytest.approx(np.mean([float(rows[5][2]), float(rows[5][3])]))


def test_validation_selection_returns_the_best_checkpoint():
    net = build_fig4()
    cfg = TrainConfig(steps=300, eta=1.0, validate_every=100, validate_batch=5000, sigma2=0.05)
    params, hist = train(net, SCHEME, cfg)
    steps = [t for t, _ in hist.validation]
    assert steps == [0, 100, 200, 300]
    assert hist.best_step in steps
    assert dict(hist.validation)[hist.best_step] == min(v for _, v in hist.validation)


def test_config_validation():
    for bad in (dict(batch_size=1), dict(eta=-1.0), dict(steps=0), dict(init_mode="x"), dict(losses=("bpsk", "l2")),
                dict(losses=(None, None)), dict(sigma2=-1.0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_init_arithmetic():
    """BPSK symbols through h = 2 give p = 4 exactly; paper mode divides by p, normalized by sqrt(p)."""
    net = LayeredNetwork(h=(np.array([2.0]),), g=(np.ones((1, 1)),))
    sch = ModulationScheme(n_users=1)
    paper = initialize(net, sch, "paper", 1000, np.random.default_rng(4), 0.0)
    norm = initialize(net, sch, "normalized", 1000, np.random.default_rng(4), 0.0)
    a = abs(paper.w_flat[0]) * 4
    assert 0.5 <= a <= 1.0
    assert norm.w_flat[0] == pytest.approx(2 * paper.w_flat[0], rel=1e-15)
    if a == 0.5:
        assert abs(paper.w_flat[0]) == 0.125 and abs(norm.w_flat[0]) == 0.25


@pytest.mark.parametrize("net", [build_fig3(), build_fig4(), build_random((3, 3, 3), 2, seed=2)])
def test_normalized_init_does_not_saturate(net):
    p = initialize(net, SCHEME, "normalized", 10_000, np.random.default_rng(0), 0.05)
    assert np.all(p.b_flat == 0)
    rms = preactivation_rms(net, p, SCHEME, 0.05, 10_000, seed=1)
    assert np.all((rms >= 0.45) & (rms <= 1.05))


def test_init_rejects_dead_relay_and_small_probe():
    net = LayeredNetwork(h=(np.array([1.0, 0.0]),), g=(np.ones((2, 2)),))
    with pytest.raises(ValueError):
        initialize(net, SCHEME, "normalized", 2000, np.random.default_rng(0), 0.0)
    with pytest.raises(ValueError):
        initialize(build_fig3(), SCHEME, "normalized", 10, np.random.default_rng(0), 0.1)


def test_linear_baseline_init_has_zero_bias():
    p = initialize(build_fig4(), SCHEME, "linear-baseline", sigma2=0.05)
    assert np.all(p.b_flat == 0) and np.any(p.w_flat != 0)

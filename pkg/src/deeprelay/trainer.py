"""Backpropagation training of relay gains and biases through the noisy cascade.

Each receiver's batch of signals is normalized to unit RMS before the loss.
The gradient is exact for the realized bits and noise, including the
dependence of the RMS normalizer on every sample of the batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .modem import ModulationScheme
from .network import LayeredNetwork, NoiseModel, NonFiniteSignalError, RelayParams, draw_noise, propagate

LN2 = np.log(2.0)
LOSSES = ("bpsk", "pam")
INIT_MODES = ("paper", "normalized", "linear-baseline")
P_FLOOR = 1e-200


class TrainingDiverged(ArithmeticError):
    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step


class DegenerateBatchError(ValueError):
    """A receiver saw an all-zero batch, so its RMS normalizer is undefined."""


@dataclass
class TrainConfig:
    batch_size: int = 512
    eta: float = 0.1
    steps: int = 2000
    losses: tuple = ("bpsk", "pam")
    init_mode: str = "normalized"
    sigma2: float = 0.05
    seed: int = 0
    probe_batch: int = 10_000
    # checkpoint selection: every `validate_every` steps score the iterate by
    # worst-user BER on one frozen validation batch; 0 disables it
    validate_every: int = 0
    validate_batch: int = 50_000
    # train v = w * rms(y) instead of w, with rms(y) measured once at the start:
    # the gain step becomes eta * grad_w / E[y^2], which evens out relays whose
    # inputs differ by orders of magnitude (deep spatial networks)
    input_scaled: bool = False

    def __post_init__(self):
        self.losses = tuple(self.losses)
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        for kind in self.losses:
            if kind is not None and kind not in LOSSES:
                raise ValueError(f"unknown loss {kind!r}; expected one of {LOSSES} or None")
        if all(kind is None for kind in self.losses):
            raise ValueError("at least one receiver must have a loss")
        NoiseModel(self.sigma2)


@dataclass
class LossReport:
    loss: list = field(default_factory=list)
    per_user: list = field(default_factory=list)
    polarity: np.ndarray | None = None
    validation: list = field(default_factory=list)  # (step, worst-user BER)
    best_step: int | None = None

    def append(self, loss, per_user):
        self.loss.append(float(loss))
        self.per_user.append([float(x) for x in per_user])

    def to_csv(self, path):
        n_users = len(self.per_user[0]) if self.per_user else 0
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(["step", "loss"] + [f"loss_u{m + 1}" for m in range(n_users)])
            for t, (loss, parts) in enumerate(zip(self.loss, self.per_user)):
                out.writerow([t, repr(loss)] + [repr(p) for p in parts])


def _log2_1p_exp_neg(a):
    return np.logaddexp(0.0, -a) / LN2


def loss_bpsk(u, rt):
    """``log2(1 + exp(-rt * (2u - 1)))``: small when ``rt`` has the sign the BPSK detector maps to ``u``."""
    return _log2_1p_exp_neg(np.asarray(rt) * (2 * np.asarray(u) - 1))


def loss_pam(u, rt):
    """``log2(1 + exp(-(rt**2 - 1) * (-1)**u))``: outer points carry 0, inner points 1."""
    rt = np.asarray(rt)
    return _log2_1p_exp_neg((rt * rt - 1) * (1 - 2 * np.asarray(u)))


def _loss_and_slope(kind, u, rt):
    """Per-sample loss and its derivative with respect to ``rt``."""
    if kind == "bpsk":
        sign = 2.0 * u - 1.0
        margin = rt * sign
        dmargin = sign
    else:
        sign = 1.0 - 2.0 * u
        margin = (rt * rt - 1.0) * sign
        dmargin = 2.0 * rt * sign
    return _log2_1p_exp_neg(margin), -expit(-margin) / LN2 * dmargin


def normalize_batch(r):
    """Scale a receiver's batch (axis 0) to unit mean square; returns ``(rt, rms)``."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] < 2:
        raise ValueError("normalization needs at least 2 samples")
    # scale by the peak first so tiny signals do not underflow when squared
    peak = np.max(np.abs(r), axis=0)
    if np.any(peak == 0):
        raise DegenerateBatchError("receiver batch is all zero; the network delivers no signal")
    rms = peak * np.sqrt(np.mean((r / peak) ** 2, axis=0))
    return r / rms, rms


def loss_and_gradient(net: LayeredNetwork, w, b, s, bits, relay_noise, recv_noise, losses, want_grad=True,
                      polarity=None):
    """Loss and exact gradient on flat parameters for a frozen batch.

    ``bits`` is ``(B, M)`` (one bit per user); ``losses[m]`` is ``'bpsk'``,
    ``'pam'`` or ``None`` to leave receiver ``m`` out. ``polarity`` (``+-1``
    per receiver) is the sign each receiver applies before detection.
    Returns ``(loss, per_user_loss, grad_w, grad_b)``.
    """
    Y, _, O, R = propagate(net, w, b, s, relay_noise, recv_noise)
    pol = np.ones(net.M) if polarity is None else np.asarray(polarity, dtype=float)
    R = R * pol
    B = R.shape[0]
    active = [m for m, kind in enumerate(losses) if kind is not None]
    Rt, rms = normalize_batch(R)
    scale = 1.0 / (B * len(active))
    dRt = np.zeros_like(R)
    per_user = np.zeros(net.M)
    for m in active:
        vals, slope = _loss_and_slope(losses[m], bits[:, m], Rt[:, m])
        per_user[m] = vals.mean()
        dRt[:, m] = slope * scale
    loss = per_user[active].mean()
    if not want_grad:
        return loss, per_user, None, None

    # rt_b = r_b / rms with rms^2 = mean(r^2)
    dR = dRt / rms - R * (np.sum(dRt * R, axis=0) / (B * rms ** 3))
    dO = (dR * pol) @ net.G_full.T
    F = net.F_full
    gw = np.empty(net.N)
    gb = np.empty(net.N)
    for sl in reversed(net.slices):
        dZ = dO[:, sl] * (1.0 - O[:, sl] ** 2)
        gw[sl] = np.sum(dZ * Y[:, sl], axis=0)
        gb[sl] = np.sum(dZ, axis=0)
        if sl.start:
            dO[:, : sl.start] += (dZ * w[sl]) @ F[sl, : sl.start]
    return loss, per_user, gw, gb


def draw_batch(net, scheme: ModulationScheme, B: int, sigma2: float, rng):
    """Random bits, their symbols and the matching noise for one training batch."""
    bits = scheme.random_bits(B, rng)
    s = scheme.modulate_batch(bits)
    relay, recv = draw_noise(net, B, NoiseModel(sigma2), rng)
    return bits, s, relay, recv


def _check_scheme(net, scheme, losses):
    if scheme.bits_per_user != 1:
        raise ValueError("training losses are defined for one bit per user")
    if scheme.n_users != net.M or len(losses) != net.M:
        raise ValueError("need one loss entry per receiver")


def batch_loss_and_gradient(net, params: RelayParams, scheme: ModulationScheme, cfg: TrainConfig, rng,
                            polarity=None):
    """Draw a fresh batch and return ``(loss, grad)`` with ``grad`` shaped like the parameters."""
    params.check(net)
    _check_scheme(net, scheme, cfg.losses)
    bits, s, relay, recv = draw_batch(net, scheme, cfg.batch_size, cfg.sigma2, rng)
    loss, _, gw, gb = loss_and_gradient(net, params.w_flat, params.b_flat, s, bits, relay, recv, cfg.losses,
                                        polarity=polarity)
    return loss, RelayParams.from_flat(net, gw, gb)


def small_signal_polarity(net, params: RelayParams) -> np.ndarray:
    """Sign of each receiver's gain ``dr/ds`` at ``s = 0`` (``+1`` when that gain is zero)."""
    from .linear import analyze_linear

    slope = 1.0 - np.tanh(params.b_flat) ** 2
    gain = analyze_linear(net, params.w_flat * slope, 1.0, 1.0).gain
    return np.where(gain < 0, -1.0, 1.0)


def train(net, scheme: ModulationScheme, cfg: TrainConfig, rng=None, params: RelayParams | None = None,
          linear_cfg=None, polarity=None):
    """Plain SGD, ``phi <- phi - eta * grad``, with a fresh batch every step.

    Starts from ``params`` if given, otherwise from :func:`initialize` with
    ``cfg.init_mode``. Each receiver detects ``polarity[m] * r_m``; by default
    the polarity is fixed once from the small-signal gain of the starting
    point. Returns ``(params, LossReport)``; the report carries the polarity.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    _check_scheme(net, scheme, cfg.losses)
    if params is None:
        params = initialize(net, scheme, cfg.init_mode, cfg.probe_batch, rng, cfg.sigma2, linear_cfg)
    params.check(net)
    if polarity is None:
        polarity = small_signal_polarity(net, params)
    w, b = params.w_flat.copy(), params.b_flat.copy()
    history = LossReport(polarity=np.asarray(polarity, dtype=float))
    validator = _Validator(net, scheme, cfg, history.polarity) if cfg.validate_every else None
    w_step = cfg.eta
    if cfg.input_scaled:
        power = relay_input_power(net, params, scheme, cfg.sigma2, cfg.probe_batch,
                                  np.random.SeedSequence(cfg.seed, spawn_key=(0x5CA1E,)))
        w_step = cfg.eta / np.maximum(power, P_FLOOR)
    best = None
    for t in range(cfg.steps):
        if validator is not None and t % cfg.validate_every == 0:
            best = validator.check(t, w, b, best, history)
        bits, s, relay, recv = draw_batch(net, scheme, cfg.batch_size, cfg.sigma2, rng)
        try:
            loss, per_user, gw, gb = loss_and_gradient(net, w, b, s, bits, relay, recv, cfg.losses,
                                                       polarity=history.polarity)
        except NonFiniteSignalError:
            raise TrainingDiverged(t, float("nan")) from None
        if not (np.isfinite(loss) and np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise TrainingDiverged(t, loss)
        history.append(loss, per_user)
        w -= w_step * gw
        b -= cfg.eta * gb
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise TrainingDiverged(cfg.steps, float("nan"))
    if validator is not None:
        best = validator.check(cfg.steps, w, b, best, history)
        w, b = best[1], best[2]
    return RelayParams.from_flat(net, w, b), history


class _Validator:
    def __init__(self, net, scheme, cfg, polarity):
        from .modem import decide

        self.decide = decide
        self.net, self.scheme, self.polarity = net, scheme, polarity
        self.detectors = tuple("pam" if kind == "pam" else "bpsk" for kind in cfg.losses)
        self.active = [m for m, kind in enumerate(cfg.losses) if kind is not None]
        # independent of the training stream
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0x5EED,)))
        self.bits, self.s, self.relay, self.recv = draw_batch(net, scheme, cfg.validate_batch, cfg.sigma2, rng)

    def check(self, step, w, b, best, history):
        R = propagate(self.net, w, b, self.s, self.relay, self.recv)[3]
        errors = (self.decide(R, self.detectors, self.scheme, self.polarity) != self.bits)[:, self.active]
        score = float(errors.mean(axis=0).max())
        history.validation.append((step, score))
        if best is None or score < best[0]:
            history.best_step = step
            return score, w.copy(), b.copy()
        return best


def frozen_loss(net, params: RelayParams, scheme, losses, sigma2, B, seed, polarity=None):
    """Loss of ``params`` on a reproducible batch drawn from ``seed``."""
    bits, s, relay, recv = draw_batch(net, scheme, B, sigma2, np.random.default_rng(seed))
    return loss_and_gradient(net, params.w_flat, params.b_flat, s, bits, relay, recv, losses, want_grad=False,
                             polarity=polarity)[0]


def initialize(net, scheme: ModulationScheme, mode: str = "normalized", probe_batch: int = 10_000, rng=None,
               sigma2: float = 0.0, linear_cfg=None) -> RelayParams:
    """Layer-by-layer start that keeps every relay out of saturation.

    For each layer in order, ``p = E[y^2]`` is estimated over a probe batch
    using the already-initialized earlier layers, then ``w = a*s/p``
    (``mode='paper'``) or ``w = a*s/sqrt(p)`` (``mode='normalized'``) with
    ``s`` a random sign and ``a ~ U[0.5, 1]``; biases are zero.
    ``mode='linear-baseline'`` takes the gains of the max-min SNR solver.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"init mode must be one of {INIT_MODES}")
    rng = np.random.default_rng() if rng is None else rng
    if mode == "linear-baseline":
        from .linear import LinearOptConfig, optimize_linear

        linear_cfg = LinearOptConfig() if linear_cfg is None else linear_cfg
        result = optimize_linear(net, linear_cfg, sigma2, scheme.symbol_power)
        return RelayParams.from_flat(net, result.w, np.zeros(net.N))
    if probe_batch < 1000:
        raise ValueError("probe_batch must be >= 1000")

    bits = scheme.random_bits(probe_batch, rng)
    s = scheme.modulate_batch(bits)
    relay, _ = draw_noise(net, probe_batch, NoiseModel(sigma2), rng)
    w = np.zeros(net.N)
    O = np.empty((probe_batch, net.N))
    for sl in net.slices:
        y = np.multiply.outer(s, net.h_flat[sl])
        if sl.start:
            y += O[:, : sl.start] @ net.F_full[sl, : sl.start].T
        if relay is not None:
            y += relay[:, sl]
        p = np.mean(y * y, axis=0)
        if np.any(p <= P_FLOOR):
            dead = np.flatnonzero(p <= P_FLOOR) + sl.start
            raise ValueError(f"relays {dead.tolist()} receive no signal or noise; cannot initialize")
        amp = rng.uniform(0.5, 1.0, size=p.shape)
        sign = rng.choice([-1.0, 1.0], size=p.shape)
        w[sl] = amp * sign / (p if mode == "paper" else np.sqrt(p))
        O[:, sl] = np.tanh(w[sl] * y)
    return RelayParams.from_flat(net, w, np.zeros(net.N))


def relay_input_power(net, params: RelayParams, scheme, sigma2, B=10_000, seed=0) -> np.ndarray:
    """``E[y^2]`` at every relay input, by simulation."""
    rng = np.random.default_rng(seed)
    bits = scheme.random_bits(B, rng)
    relay, recv = draw_noise(net, B, NoiseModel(sigma2), rng)
    Y = propagate(net, params.w_flat, params.b_flat, scheme.modulate_batch(bits), relay, recv)[0]
    return np.mean(Y * Y, axis=0)


def preactivation_rms(net, params: RelayParams, scheme, sigma2, B=10_000, seed=0) -> np.ndarray:
    bits = scheme.random_bits(B, np.random.default_rng(seed))
    relay, recv = draw_noise(net, B, NoiseModel(sigma2), np.random.default_rng(seed + 1))
    Z = propagate(net, params.w_flat, params.b_flat, scheme.modulate_batch(bits), relay, recv)[1]
    return np.sqrt(np.mean(Z * Z, axis=0))

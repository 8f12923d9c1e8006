"""Linear-amplifier model of the cascade and the max-min weighted SNR baseline.

With ``tanh`` replaced by the identity and zero biases the relay inputs obey
``y = T (h s + n)`` with ``T = (I - F W)^{-1}``, ``W = diag(w)``. Because ``F``
is strictly block lower triangular, the rows of ``T`` for layer ``i`` only
need ``T`` and ``w`` of earlier layers, which is how everything here is
computed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from .modem import ModulationScheme
from .network import LayeredNetwork

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearAnalysis:
    gain: np.ndarray  # (M,) effective source -> receiver gain
    noise_var: np.ndarray  # (M,) accumulated noise variance at each receiver
    relay_power: np.ndarray  # (N,) E[o^2] per relay
    snr: np.ndarray  # (M,)
    input_gain: np.ndarray  # (N,) source -> relay input gain
    input_noise: np.ndarray  # (N,) noise variance at each relay input


def transfer_rows(net: LayeredNetwork, w, sigma2=0.0, Es=1.0, cap=None):
    """Build ``T`` layer by layer; with ``cap`` set, clip each layer's gains on the way.

    Clipping uses the exact linear input power ``a^2 Es + sigma2 * |T_n|^2``
    of the layer, which only depends on earlier (already clipped) layers, so
    a single sweep makes every relay satisfy ``E[o^2] <= cap``.
    Returns ``(T, w, limits)`` where ``limits`` holds the per-relay gain caps
    (only filled when ``cap`` is set).
    """
    N = net.N
    w = np.array(w, dtype=float)
    T = np.zeros((N, N))
    limits = np.full(N, np.inf)
    F = net.F_full
    for sl in net.slices:
        rows = np.eye(N)[sl]
        if sl.start:
            rows += F[sl, : sl.start] @ (w[: sl.start, None] * T[: sl.start])
        T[sl] = rows
        if cap is not None:
            p = (rows @ net.h_flat) ** 2 * Es + sigma2 * np.sum(rows * rows, axis=1)
            limits[sl] = np.sqrt(cap / p)
            w[sl] = np.clip(w[sl], -limits[sl], limits[sl])
    return T, w, limits


def analyze_linear(net: LayeredNetwork, w, sigma2: float, Es: float) -> LinearAnalysis:
    w = np.asarray(w, dtype=float)
    if w.shape != (net.N,):
        raise ValueError(f"expected {net.N} gains")
    T = transfer_rows(net, w)[0]
    a = T @ net.h_flat
    d = np.sum(T * T, axis=1)
    WG = w[:, None] * net.G_full
    gain = a @ WG
    V = T.T @ WG
    noise_var = sigma2 * (np.sum(V * V, axis=0) + 1.0)
    in_noise = sigma2 * d
    power = w ** 2 * (a ** 2 * Es + in_noise)
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(noise_var > 0, gain ** 2 * Es / noise_var, np.where(gain != 0, np.inf, 0.0))
    return LinearAnalysis(gain, noise_var, power, snr, a, in_noise)


def log_snr_and_grad(net, w, sigma2, Es):
    """``log SNR_m`` and its gradient with respect to ``w`` (shape ``(M, N)``)."""
    T = transfer_rows(net, w)[0]
    a = T @ net.h_flat
    WG = w[:, None] * net.G_full
    gain = a @ WG
    V = T.T @ WG
    q = np.sum(V * V, axis=0)
    beta = net.G_full + net.F_full.T @ V  # (N, M)
    dgain = a[:, None] * beta
    dq = 2.0 * (T @ V) * beta
    logsnr = np.log(Es) + 2 * np.log(np.abs(gain)) - np.log(sigma2) - np.log1p(q)
    grad = 2 * dgain / gain - dq / (1.0 + q)
    return logsnr, grad.T


@dataclass
class LinearOptConfig:
    p_max: float = 0.64
    zeta: tuple | None = None
    restarts: int = 8
    max_iter: int = 400
    temperatures: tuple = (1.0, 0.3, 0.1, 0.03, 0.01, 0.003)
    tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")
        if self.zeta is not None:
            self.zeta = tuple(float(z) for z in self.zeta)
            if any(not z > 0 for z in self.zeta):
                raise ValueError("SNR weights must be positive")
        if self.restarts < 1:
            raise ValueError("need at least one restart")


@dataclass
class LinearOptResult:
    w: np.ndarray
    objective: float  # min_m zeta_m SNR_m
    analysis: LinearAnalysis
    restart_objectives: list
    trace: list = field(default_factory=list)  # (restart, iteration, objective, max power violation)
    warning: str | None = None

    def polarity(self) -> np.ndarray:
        """Sign of each receiver's effective gain, for sign-aware detection."""
        return np.where(self.analysis.gain < 0, -1.0, 1.0)

    def trace_to_csv(self, path):
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(["restart", "iteration", "objective", "max_power_violation"])
            for row in self.trace:
                out.writerow([row[0], row[1], repr(row[2]), repr(row[3])])


def project(net, w, p_max, sigma2, Es):
    return transfer_rows(net, w, sigma2, Es, cap=p_max)[1]


def gain_caps(net, w, p_max, sigma2, Es):
    return transfer_rows(net, w, sigma2, Es, cap=p_max)[2]


def _objective(net, w, log_zeta, sigma2, Es):
    logsnr, grad = log_snr_and_grad(net, w, sigma2, Es)
    return log_zeta + logsnr, grad


def _soft_min(x, grad, tau):
    weights = np.exp(-(x - x.min()) / tau)
    weights /= weights.sum()
    return -tau * logsumexp(-x / tau), weights @ grad


def _ascend(net, w, log_zeta, cfg, sigma2, Es, restart, trace):
    """Projected soft-min ascent from a feasible ``w``; every accepted iterate keeps the hard min non-decreasing."""
    x, grad = _objective(net, w, log_zeta, sigma2, Es)
    it = 0
    for tau in cfg.temperatures:
        step = 0.1
        fails = 0
        smooth, direction = _soft_min(x, grad, tau)
        while it < cfg.max_iter and fails < 25:
            it += 1
            # precondition by the current per-relay gain caps so all layers move on a common scale
            scale = gain_caps(net, w, cfg.p_max, sigma2, Es)
            cand = project(net, w + step * scale ** 2 * direction, cfg.p_max, sigma2, Es)
            x_new, grad_new = _objective(net, cand, log_zeta, sigma2, Es)
            smooth_new, direction_new = _soft_min(x_new, grad_new, tau) if np.all(np.isfinite(x_new)) else (-np.inf, None)
            if smooth_new > smooth and x_new.min() >= x.min() - cfg.tol * max(1.0, abs(x.min())):
                gained = smooth_new - smooth
                w, x, grad, smooth, direction = cand, x_new, grad_new, smooth_new, direction_new
                step *= 1.5
                fails = 0
                trace.append((restart, it, float(np.exp(x.min())), _violation(net, w, cfg.p_max, sigma2, Es)))
                if gained < cfg.tol:
                    break
            else:
                step *= 0.5
                fails += 1
    return w, x


def _violation(net, w, p_max, sigma2, Es):
    return float(max(0.0, (analyze_linear(net, w, sigma2, Es).relay_power - p_max).max()))


def optimize_linear(net: LayeredNetwork, cfg: LinearOptConfig, sigma2: float, Es: float) -> LinearOptResult:
    """Multi-start search for ``max_w min_m zeta_m SNR_m`` subject to ``E[o_n^2] <= p_max``."""
    if not sigma2 > 0:
        raise ValueError("the linear baseline needs sigma2 > 0")
    zeta = np.ones(net.M) if cfg.zeta is None else np.asarray(cfg.zeta, float)
    if zeta.shape != (net.M,):
        raise ValueError(f"need {net.M} SNR weights")
    log_zeta = np.log(zeta / zeta.max())
    rng = np.random.default_rng(cfg.seed)
    best_w, best = None, -np.inf
    trace, finals = [], []
    warning = None
    for k in range(cfg.restarts):
        start = rng.choice([-1.0, 1.0], net.N) * rng.uniform(0.5, 1.0, net.N) * 1e300
        w = project(net, start, cfg.p_max, sigma2, Es)
        x0, _ = _objective(net, w, log_zeta, sigma2, Es)
        if not np.all(np.isfinite(x0)):
            finals.append(-np.inf)
            continue
        trace.append((k, 0, float(np.exp(x0.min())), _violation(net, w, cfg.p_max, sigma2, Es)))
        w, x = _ascend(net, w, log_zeta, cfg, sigma2, Es, k, trace)
        finals.append(float(np.exp(x.min())))
        if x.min() > best:
            best_w, best = w, x.min()
    if best_w is None:
        warning = "no restart reached a point with nonzero SNR at every receiver"
        log.warning(warning)
        best_w = project(net, np.full(net.N, 1e300), cfg.p_max, sigma2, Es)
    analysis = analyze_linear(net, best_w, sigma2, Es)
    objective = float(np.min(zeta / zeta.max() * analysis.snr))
    return LinearOptResult(best_w, objective, analysis, finals, trace, warning)


def decision_intervals(kind, scheme: ModulationScheme, m, gain, noise_var):
    """``(lo, hi, bit)`` intervals of ``r`` that the detector decodes as ``bit`` (user ``m``, first bit)."""
    Es = scheme.symbol_power
    rms = np.sqrt(gain ** 2 * Es + noise_var)
    if kind == "bpsk":
        return [(-np.inf, 0.0, 0), (0.0, np.inf, 1)]
    if kind == "pam":
        return [(-np.inf, -rms, 0), (-rms, rms, 1), (rms, np.inf, 0)]
    if kind == "nearest":
        ref = scheme.levels / np.sqrt(Es) * rms
        edges = np.concatenate([[-np.inf], (ref[1:] + ref[:-1]) / 2, [np.inf]])
        bit = scheme.labels[:, scheme.user_bits(m).start]
        return [(edges[j], edges[j + 1], int(bit[j])) for j in range(len(ref))]
    raise ValueError(f"unknown detector {kind!r}")


def linear_ber(analysis: LinearAnalysis, scheme: ModulationScheme, detectors) -> np.ndarray:
    """Exact per-user BER of the linear Gaussian system (receiver polarity known)."""
    out = np.empty(len(detectors))
    for m, kind in enumerate(detectors):
        g = abs(analysis.gain[m])
        sd = np.sqrt(analysis.noise_var[m])
        bit = scheme.labels[:, scheme.user_bits(m).start]
        err = 0.0
        for j, s in enumerate(scheme.levels):
            for lo, hi, b in decision_intervals(kind, scheme, m, g, analysis.noise_var[m]):
                if b != bit[j]:
                    err += ndtr((hi - g * s) / sd) - ndtr((lo - g * s) / sd)
        out[m] = err / scheme.n_levels
    return out


def balance_zeta(net, w, sigma2, scheme: ModulationScheme = None, detectors=None) -> np.ndarray:
    """SNR weights that rank receivers by their actual linear-model BER.

    ``zeta_m = Qinv(BER_m)^2 / SNR_m``, so ``zeta_m SNR_m`` is the squared
    Q-function argument of user ``m``; normalized to ``max(zeta) = 1``.
    """
    scheme = ModulationScheme(net.M, 1) if scheme is None else scheme
    if detectors is None:
        detectors = {1: ("bpsk",), 2: ("bpsk", "pam")}.get(net.M, ("nearest",) * net.M)
    detectors = tuple(detectors)
    analysis = analyze_linear(net, w, sigma2, scheme.symbol_power)
    ber = np.clip(linear_ber(analysis, scheme, detectors), 1e-300, 0.5 - 1e-9)
    q = -ndtri(ber)
    with np.errstate(divide="ignore"):
        zeta = np.where(analysis.snr > 0, q ** 2 / analysis.snr, 1.0)
    zeta = np.maximum(zeta / zeta.max(), 1e-6)
    return zeta


def optimize_balanced(net, cfg: LinearOptConfig, sigma2, scheme: ModulationScheme, detectors, rounds=12,
                      rel_tol=0.01):
    """Re-weight receivers until their linear-model BERs agree within ``rel_tol``.

    Each round solves :func:`optimize_linear` and moves the weights by
    ``zeta_m *= (q_m / max q)^2`` with ``q_m = Qinv(BER_m)``: a smaller weight
    buys a receiver more SNR. For two receivers the log weight ratio is also
    bracketed by the rounds seen so far and bisected when the update leaves
    the bracket. Equal BERs are not always reachable (one receiver can stay
    the bottleneck for every weighting); the round with the lowest worst-user
    BER is returned.
    """
    Es = scheme.symbol_power
    zeta = np.ones(net.M)
    best = None
    lo, hi = -np.inf, np.inf  # bracket on log(zeta_2 / zeta_1)
    for _ in range(rounds):
        run = LinearOptConfig(**{**cfg.__dict__, "zeta": tuple(zeta)})
        result = optimize_linear(net, run, sigma2, Es)
        ber = linear_ber(result.analysis, scheme, detectors)
        if best is None or ber.max() < best[1].max():
            best = (result, ber)
        if net.M == 1 or np.ptp(ber) <= rel_tol * ber.max():
            break
        q = -ndtri(np.clip(ber, 1e-300, 0.5 - 1e-9))
        proposal = zeta * (q / q.max()) ** 2
        if net.M == 2:
            x = np.log(zeta[1] / zeta[0])
            if ber[1] > ber[0]:
                hi = min(hi, x)
            else:
                lo = max(lo, x)
            x_new = np.log(proposal[1] / proposal[0])
            if not lo < x_new < hi:
                x_new = (lo + hi) / 2 if np.isfinite(lo + hi) else x_new
            if not lo < x_new < hi:
                break
            proposal = np.array([1.0, np.exp(x_new)])
        zeta = np.maximum(proposal / proposal.max(), 1e-12)
    return best[0]

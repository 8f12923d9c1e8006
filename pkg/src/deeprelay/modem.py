"""Gray-coded PAM for stacked user bits, receiver detectors and Monte-Carlo BER."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .network import CHUNK_SIZE, NoiseModel, receiver_signals

DETECTORS = ("bpsk", "pam", "nearest")


@dataclass(frozen=True)
class ModulationScheme:
    """Uniform ``2**(M*K)``-PAM on ``[-1, 1]`` with a binary-reflected Gray labeling.

    The stacked bit vector is ``u = [u_1, ..., u_M]`` (each user ``K`` bits),
    most significant bit first, so user 1 holds the top Gray positions.
    """

    n_users: int = 2
    bits_per_user: int = 1

    def __post_init__(self):
        if self.n_users < 1 or self.bits_per_user < 1:
            raise ValueError("need at least one user and one bit per user")

    @property
    def n_bits(self) -> int:
        return self.n_users * self.bits_per_user

    @property
    def n_levels(self) -> int:
        return 2 ** self.n_bits

    @cached_property
    def levels(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n_levels)

    @cached_property
    def labels(self) -> np.ndarray:
        """``labels[j]`` is the stacked bit vector carried by ``levels[j]``."""
        j = np.arange(self.n_levels)
        gray = j ^ (j >> 1)
        shifts = np.arange(self.n_bits - 1, -1, -1)
        return ((gray[:, None] >> shifts) & 1).astype(np.int8)

    @cached_property
    def symbol_power(self) -> float:
        """E[s^2] for equiprobable bits, e.g. 5/9 for the 2-user 4-PAM."""
        return float(np.mean(self.levels ** 2))

    def user_bits(self, m: int) -> slice:
        return slice(m * self.bits_per_user, (m + 1) * self.bits_per_user)

    def level_index(self, bits) -> np.ndarray:
        bits = np.asarray(bits)
        if bits.shape[-1] != self.n_bits:
            raise ValueError(f"expected {self.n_bits} stacked bits, got {bits.shape[-1]}")
        if np.any((bits != 0) & (bits != 1)):
            raise ValueError("bits must be 0 or 1")
        binary = np.bitwise_xor.accumulate(bits.astype(np.int64), axis=-1)
        weights = 1 << np.arange(self.n_bits - 1, -1, -1)
        return binary @ weights

    def modulate_batch(self, bits) -> np.ndarray:
        return self.levels[self.level_index(bits)]

    def random_bits(self, B: int, rng) -> np.ndarray:
        return rng.integers(0, 2, size=(B, self.n_bits), dtype=np.int8)


def modulate(u, scheme: ModulationScheme) -> float:
    u = np.asarray(u)
    if u.ndim != 1:
        raise ValueError("modulate takes one stacked bit vector")
    return float(scheme.modulate_batch(u))


def detect_bpsk(r):
    """1 if ``r > 0`` else 0; a tie at exactly 0 decodes as 0."""
    return (np.asarray(r) > 0).astype(np.int8)


def _check_rms(rms):
    rms = np.asarray(rms, dtype=float)
    if np.any(rms <= 0):
        raise ValueError("rms scale must be positive")
    return rms


def detect_pam_user2(r, rms):
    """Inner/outer decision: 1 if ``(r/rms)**2 < 1`` (inner points), else 0."""
    rt = np.asarray(r) / _check_rms(rms)
    return (rt * rt < 1).astype(np.int8)


def detect_nearest(r, rms, scheme: ModulationScheme) -> np.ndarray:
    """Stacked Gray bits of the level nearest to ``r/rms``.

    Levels are compared in normalized form (divided by the constellation RMS),
    matching how ``r/rms`` is normalized. Ties go to the lower level.
    """
    rt = np.asarray(r, dtype=float) / _check_rms(rms)
    ref = scheme.levels / np.sqrt(scheme.symbol_power)
    mids = (ref[1:] + ref[:-1]) / 2
    idx = np.searchsorted(mids, rt, side="left")
    return scheme.labels[idx]


@dataclass(frozen=True)
class BerEstimate:
    errors: np.ndarray  # (M, K) error counts
    trials: int
    sigma2: float

    @property
    def ber(self) -> np.ndarray:
        return self.errors / self.trials

    @property
    def worst(self) -> float:
        return float(self.ber.max())

    def confidence_halfwidth(self, z: float = 3.0) -> np.ndarray:
        p = self.ber
        return z * np.sqrt(np.maximum(p * (1 - p), 1e-300) / self.trials)


def decide(R, detectors, scheme: ModulationScheme, polarity=None) -> np.ndarray:
    """Apply per-user detectors to receiver signals ``R`` of shape ``(B, M)``.

    The RMS normalizer of each receiver comes from the same batch. Returns
    decided stacked bits ``(B, M*K)``.
    """
    R = np.asarray(R, dtype=float)
    if polarity is not None:
        R = R * np.asarray(polarity, dtype=float)
    B, M = R.shape
    if len(detectors) != M:
        raise ValueError(f"need one detector per receiver ({M}), got {len(detectors)}")
    K = scheme.bits_per_user
    rms = np.sqrt(np.mean(R * R, axis=0))
    out = np.empty((B, scheme.n_bits), dtype=np.int8)
    for m, kind in enumerate(detectors):
        sl = scheme.user_bits(m)
        if kind == "nearest":
            out[:, sl] = detect_nearest(R[:, m], rms[m], scheme)[:, sl]
            continue
        if K != 1:
            raise ValueError(f"detector {kind!r} decides a single bit; use 'nearest' for K > 1")
        if kind == "bpsk":
            out[:, sl.start] = detect_bpsk(R[:, m])
        elif kind == "pam":
            out[:, sl.start] = detect_pam_user2(R[:, m], rms[m])
        else:
            raise ValueError(f"unknown detector {kind!r}; expected one of {DETECTORS}")
    return out


def estimate_ber(net, params, scheme: ModulationScheme, noise: NoiseModel, detectors, trials: int,
                 seed: int, polarity=None, chunk_size: int = CHUNK_SIZE, linear: bool = False) -> BerEstimate:
    """Monte-Carlo bit error rates on uniformly random stacked bits.

    Bits come from ``default_rng(seed)``; noises from the chunked scheme of
    :func:`deeprelay.network.receiver_signals` keyed on ``seed + 1``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if scheme.n_users != net.M:
        raise ValueError("scheme user count does not match the network's receivers")
    bits = scheme.random_bits(trials, np.random.default_rng(seed))
    R = receiver_signals(net, params, scheme.modulate_batch(bits), noise, seed + 1, chunk_size, linear)
    decided = decide(R, detectors, scheme, polarity)
    errs = (decided != bits).sum(axis=0).reshape(scheme.n_users, scheme.bits_per_user)
    return BerEstimate(errors=errs, trials=trials, sigma2=noise.sigma2)

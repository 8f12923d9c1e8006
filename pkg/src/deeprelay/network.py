"""Layered amplify-and-forward relay cascade and its forward propagation.

Layers are indexed from 0 in code. Every relay of layer ``i`` hears the source
through ``h[i]``, the outputs of earlier layers ``l < i`` through ``F[(i, l)]``,
and feeds receiver ``m`` through ``g[i][:, m]``.

Randomness: a batch of ``B`` symbols draws all relay noise first, as one
``(B, N)`` standard-normal block in layer order, then the ``(B, M)`` receiver
noise block. Chunked simulation (:func:`receiver_signals`) gives chunk ``c``
its own generator seeded with ``SeedSequence(seed, spawn_key=(c,))``, so chunks
can be evaluated in any order, or in parallel, with bit-identical results.
"""

from __future__ import annotations

import hashlib
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

CHUNK_SIZE = 16384


class DimensionError(ValueError):
    """Raised when network, parameter or signal shapes disagree."""


class NonFiniteSignalError(ArithmeticError):
    """A relay input or receiver signal became NaN or infinite."""


def _frozen(a, shape=None, name="array") -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if shape is not None and arr.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name}: gains must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LayeredNetwork:
    """Channel-gain topology of a loop-free relay cascade.

    ``h[i]`` has shape ``(N_i,)``, ``g[i]`` has shape ``(N_i, M)`` and
    ``F[(i, l)]`` (only for ``l < i``) has shape ``(N_i, N_l)``. Missing
    ``F`` blocks are zero.
    """

    h: tuple
    g: tuple
    F: dict = field(default_factory=dict)

    def __post_init__(self):
        d = len(self.h)
        if d == 0:
            raise DimensionError("network needs at least one layer")
        if len(self.g) != d:
            raise DimensionError(f"g: expected {d} layers, got {len(self.g)}")
        h = tuple(_frozen(v, name=f"h[{i}]") for i, v in enumerate(self.h))
        sizes = tuple(len(v) for v in h)
        for i, v in enumerate(h):
            if v.ndim != 1 or v.size == 0:
                raise DimensionError(f"h[{i}]: expected a non-empty vector")
        g0 = np.asarray(self.g[0], dtype=float)
        if g0.ndim != 2:
            raise DimensionError("g[0]: expected an (N_i, M) matrix")
        M = g0.shape[1]
        if M == 0:
            raise DimensionError("network needs at least one receiver")
        g = tuple(_frozen(v, (sizes[i], M), f"g[{i}]") for i, v in enumerate(self.g))
        F = {}
        for key, block in self.F.items():
            i, l = key
            if not (0 <= l < i < d):
                raise DimensionError(f"F[{key}]: only blocks from earlier layers (l < i) are allowed")
            F[(i, l)] = _frozen(block, (sizes[i], sizes[l]), f"F[{key}]")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "F", F)

        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        N = int(offsets[-1])
        F_full = np.zeros((N, N))
        for (i, l), block in F.items():
            F_full[offsets[i]:offsets[i + 1], offsets[l]:offsets[l + 1]] = block
        h_flat, G_full = np.concatenate(h), np.vstack(g)
        for a in (h_flat, F_full, G_full):
            a.setflags(write=False)
        object.__setattr__(self, "_offsets", tuple(int(o) for o in offsets))
        object.__setattr__(self, "_h_flat", h_flat)
        object.__setattr__(self, "_F_full", F_full)
        object.__setattr__(self, "_G_full", G_full)

    @property
    def d(self) -> int:
        return len(self.h)

    @property
    def M(self) -> int:
        return self.g[0].shape[1]

    @property
    def layer_sizes(self) -> tuple:
        return tuple(len(v) for v in self.h)

    @property
    def N(self) -> int:
        return self._offsets[-1]

    @property
    def offsets(self) -> tuple:
        return self._offsets

    def layer_slice(self, i: int) -> slice:
        return slice(self._offsets[i], self._offsets[i + 1])

    @property
    def slices(self) -> list:
        return [self.layer_slice(i) for i in range(self.d)]

    @property
    def h_flat(self) -> np.ndarray:
        return self._h_flat

    @property
    def F_full(self) -> np.ndarray:
        """All inter-layer gains as one strictly block-lower-triangular ``(N, N)`` matrix."""
        return self._F_full

    @property
    def G_full(self) -> np.ndarray:
        return self._G_full

    def F_block(self, i: int, l: int) -> np.ndarray:
        if (i, l) in self.F:
            return self.F[(i, l)]
        if not 0 <= l < i < self.d:
            raise DimensionError(f"no F block ({i}, {l})")
        return np.zeros((self.layer_sizes[i], self.layer_sizes[l]))

    def split(self, flat) -> list:
        flat = np.asarray(flat)
        return [flat[..., s] for s in self.slices]

    def __eq__(self, other):
        if not isinstance(other, LayeredNetwork):
            return NotImplemented
        return (
            self.layer_sizes == other.layer_sizes
            and self.M == other.M
            and np.array_equal(self.h_flat, other.h_flat)
            and np.array_equal(self.F_full, other.F_full)
            and np.array_equal(self.G_full, other.G_full)
        )

    __hash__ = None


@dataclass(frozen=True)
class RelayParams:
    """Per-layer relay gains ``w[i]`` and biases ``b[i]``."""

    w: tuple
    b: tuple

    def __post_init__(self):
        if len(self.w) != len(self.b):
            raise DimensionError("w and b must have the same number of layers")
        w = tuple(_frozen(v, name=f"w[{i}]") for i, v in enumerate(self.w))
        b = tuple(_frozen(v, np.shape(w[i]), f"b[{i}]") for i, v in enumerate(self.b))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @classmethod
    def zeros(cls, net: LayeredNetwork) -> "RelayParams":
        return cls(tuple(np.zeros(n) for n in net.layer_sizes), tuple(np.zeros(n) for n in net.layer_sizes))

    @classmethod
    def from_flat(cls, net: LayeredNetwork, w_flat, b_flat) -> "RelayParams":
        w_flat, b_flat = np.asarray(w_flat, float), np.asarray(b_flat, float)
        if w_flat.shape != (net.N,) or b_flat.shape != (net.N,):
            raise DimensionError(f"flat parameters must have shape ({net.N},)")
        return cls(tuple(net.split(w_flat)), tuple(net.split(b_flat)))

    @classmethod
    def from_vector(cls, net: LayeredNetwork, phi) -> "RelayParams":
        """Inverse of :meth:`vector`: ``phi = [w_1, ..., w_d, b_1, ..., b_d]``."""
        phi = np.asarray(phi, float)
        if phi.shape != (2 * net.N,):
            raise DimensionError(f"parameter vector must have length {2 * net.N}")
        return cls.from_flat(net, phi[: net.N], phi[net.N:])

    @property
    def w_flat(self) -> np.ndarray:
        return np.concatenate(self.w)

    @property
    def b_flat(self) -> np.ndarray:
        return np.concatenate(self.b)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.w_flat, self.b_flat])

    def check(self, net: LayeredNetwork) -> None:
        sizes = tuple(len(v) for v in self.w)
        if sizes != net.layer_sizes:
            raise DimensionError(f"parameters sized {sizes} do not match network layers {net.layer_sizes}")

    def __eq__(self, other):
        if not isinstance(other, RelayParams):
            return NotImplemented
        return len(self.w) == len(other.w) and all(
            np.array_equal(a, b) for a, b in zip(self.w + self.b, other.w + other.b)
        )

    __hash__ = None


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ValueError(f"noise variance must be finite and >= 0, got {self.sigma2}")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))

    @classmethod
    def from_inv_db(cls, inv_sigma2_db: float) -> "NoiseModel":
        return cls(10.0 ** (-inv_sigma2_db / 10.0))


@dataclass(frozen=True)
class ForwardTrace:
    """Everything one symbol produced on its way through the cascade."""

    s: float
    y: tuple
    z: tuple
    o: tuple
    r: np.ndarray
    noise_seed: object = None


class BatchTrace(Sequence):
    """Forward record of a batch, stored as ``(B, ...)`` arrays.

    Behaves as a sequence of :class:`ForwardTrace`; the arrays ``s``, ``Y``,
    ``Z``, ``O`` (all ``(B, N)`` with layers concatenated) and ``R``
    (``(B, M)``) are what the trainer works on.
    """

    def __init__(self, net, s, Y, Z, O, R, noise_seed=None):
        self.net = net
        self.s, self.Y, self.Z, self.O, self.R = s, Y, Z, O, R
        self.noise_seed = noise_seed

    def __len__(self):
        return len(self.s)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[j] for j in range(*k.indices(len(self)))]
        return ForwardTrace(
            s=float(self.s[k]),
            y=tuple(self.net.split(self.Y[k])),
            z=tuple(self.net.split(self.Z[k])),
            o=tuple(self.net.split(self.O[k])),
            r=self.R[k].copy(),
            noise_seed=(self.noise_seed, k),
        )

    def __iter__(self) -> Iterator[ForwardTrace]:
        return (self[k] for k in range(len(self)))


def _rng_token(rng: np.random.Generator):
    # a stable digest of the generator state before any draw (builtin hash() is salted per process)
    return hashlib.sha1(repr(rng.bit_generator.state).encode()).hexdigest()[:16]


def draw_noise(net: LayeredNetwork, B: int, noise: NoiseModel, rng):
    """Relay and receiver noise for ``B`` symbols, or ``(None, None)`` when noiseless."""
    if noise.sigma2 == 0:
        return None, None
    relay = rng.standard_normal((B, net.N)) * noise.sigma
    recv = rng.standard_normal((B, net.M)) * noise.sigma
    return relay, recv


def propagate(net: LayeredNetwork, w, b, s, relay_noise=None, recv_noise=None, activation: Callable = np.tanh):
    """Vectorized cascade on flat parameters; returns ``(Y, Z, O, R)``.

    Output slots of layers not yet computed hold NaN, so any read of a
    later layer's output poisons the result and is caught below.
    """
    s = np.asarray(s, dtype=float)
    B = s.shape[0]
    N = net.N
    Y = np.empty((B, N))
    Z = np.empty((B, N))
    O = np.full((B, N), np.nan)
    h, F = net.h_flat, net.F_full
    for sl in net.slices:
        y = np.multiply.outer(s, h[sl])
        if sl.start:
            y += O[:, : sl.start] @ F[sl, : sl.start].T
        if relay_noise is not None:
            y += relay_noise[:, sl]
        Y[:, sl] = y
        Z[:, sl] = y * w[sl] + b[sl]
        O[:, sl] = activation(Z[:, sl])
    R = O @ net.G_full
    if recv_noise is not None:
        R += recv_noise
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(R))):
        raise NonFiniteSignalError("non-finite relay input or receiver signal; check the gains")
    return Y, Z, O, R


def _check_symbols(s):
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty 1-D batch of symbols")
    if np.any(np.abs(s) > 1):
        raise ValueError("transmitted symbols must satisfy |s| <= 1")
    return s


def forward_batch(net, params: RelayParams, symbols, noise: NoiseModel, rng, linear: bool = False) -> BatchTrace:
    params.check(net)
    s = _check_symbols(symbols)
    token = _rng_token(rng)
    relay, recv = draw_noise(net, len(s), noise, rng)
    act = (lambda z: z) if linear else np.tanh
    Y, Z, O, R = propagate(net, params.w_flat, params.b_flat, s, relay, recv, act)
    return BatchTrace(net, s, Y, Z, O, R, noise_seed=token)


def forward(net, params: RelayParams, s: float, noise: NoiseModel, rng) -> ForwardTrace:
    return forward_batch(net, params, [s], noise, rng)[0]


def forward_noiseless(net, params: RelayParams, s: float) -> ForwardTrace:
    return forward_batch(net, params, [s], NoiseModel(0.0), np.random.default_rng(0))[0]


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def receiver_signals(net, params: RelayParams, symbols, noise: NoiseModel, seed: int,
                     chunk_size: int = CHUNK_SIZE, linear: bool = False) -> np.ndarray:
    """Receiver signals ``(B, M)`` for a long batch, simulated chunk by chunk.

    Chunk ``c`` covers ``symbols[c*chunk_size:(c+1)*chunk_size]`` and draws its
    noise from :func:`chunk_rng` ``(seed, c)``.
    """
    params.check(net)
    s = _check_symbols(symbols)
    w, b = params.w_flat, params.b_flat
    act = (lambda z: z) if linear else np.tanh
    out = np.empty((len(s), net.M))
    for c, start in enumerate(range(0, len(s), chunk_size)):
        part = s[start:start + chunk_size]
        relay, recv = draw_noise(net, len(part), noise, chunk_rng(seed, c))
        out[start:start + len(part)] = propagate(net, w, b, part, relay, recv, act)[3]
    return out

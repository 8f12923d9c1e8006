"""Example networks and random spatial sector networks with directional antennas.

Spatial geometry: the base station sits at the origin and the sector's
boresight is the +x axis. Every relay has a receive cone pointing along -x
and a transmit cone along +x, both ``beam_deg`` wide. Relay ``a`` reaches
relay ``b`` iff the direction ``a -> b`` lies strictly within ``beam_deg/2``
of +x, which is the same as ``a`` lying in ``b``'s receive cone; since that
forces ``x_b > x_a`` the relay graph is acyclic. Every relay hears the base
station. A relay reaches receiver ``m`` iff the receiver lies strictly inside
its transmit cone. There is no direct base-station-to-receiver link.

Random draws, all from ``default_rng(seed)`` in this order: relay radii
(``R*sqrt(U)``), relay angles (uniform over the sector), then one standard
normal fading value per candidate link for base-station links (relay order),
the ``N x N`` relay-pair matrix (row = transmitter) and the ``N x M`` receiver
matrix. Fading of absent links is drawn and discarded so link gains do not
shift when the beam width changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import LayeredNetwork


def build_fig3() -> LayeredNetwork:
    """One layer of 7 relays; both receivers see every relay with unit gain."""
    h1 = np.array([3.0, 1.0, -1.0, -3.0, -1.0, 1.0, 3.0])
    return LayeredNetwork(h=(h1,), g=(np.ones((7, 2)),))


def build_fig4() -> LayeredNetwork:
    """Two layers of 3 relays; only layer 1 hears the source, only layer 2 reaches the receivers."""
    h = (np.array([2.0, 2.0, 2.0]), np.zeros(3))
    F21 = np.array([[1.0, -0.5, 1.0], [-0.5, -1.0, -0.5], [1.0, -0.5, 1.0]])
    g = (np.zeros((3, 2)), np.array([[0.0, 2.0], [4.0, 4.0], [2.0, 0.0]]))
    return LayeredNetwork(h=h, g=g, F={(1, 0): F21})


def build_random(layer_sizes, n_receivers=2, seed=0, density=1.0) -> LayeredNetwork:
    """Dense random cascade with standard normal gains; ``density`` thins the ``F`` blocks."""
    rng = np.random.default_rng(seed)
    h = tuple(rng.standard_normal(n) for n in layer_sizes)
    F = {}
    for i in range(1, len(layer_sizes)):
        for l in range(i):
            block = rng.standard_normal((layer_sizes[i], layer_sizes[l]))
            F[(i, l)] = block * (rng.random(block.shape) < density)
    g = tuple(rng.standard_normal((n, n_receivers)) for n in layer_sizes)
    return LayeredNetwork(h=h, g=g, F=F)


PRESETS = {"fig3": build_fig3, "fig4": build_fig4}


@dataclass
class SpatialConfig:
    n_relays: int = 100
    cell_radius: float = 20.0
    sector_deg: float = 60.0
    alpha: float = 4.0
    beam_deg: float = 90.0
    n_receivers: int = 2
    receiver_angles_deg: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_relays < 1 or self.n_receivers < 1:
            raise ValueError("need at least one relay and one receiver")
        if not 0 < self.sector_deg <= 360:
            raise ValueError("sector_deg must lie in (0, 360]")
        if not 0 < self.beam_deg <= 180:
            raise ValueError("beam_deg must lie in (0, 180]")
        if not (self.alpha > 0 and self.cell_radius > 0):
            raise ValueError("alpha and cell_radius must be positive")
        if self.receiver_angles_deg is not None:
            self.receiver_angles_deg = tuple(float(a) for a in self.receiver_angles_deg)
            if len(self.receiver_angles_deg) != self.n_receivers:
                raise ValueError("one receiver angle per receiver")

    def receiver_angles(self) -> np.ndarray:
        if self.receiver_angles_deg is not None:
            return np.radians(self.receiver_angles_deg)
        if self.n_receivers == 1:
            return np.zeros(1)
        # default: spread over the central half of the sector, +-sector/4 for two receivers
        half = np.radians(self.sector_deg) / 4
        return np.linspace(half, -half, self.n_receivers)


@dataclass
class SpatialNetwork:
    config: SpatialConfig
    relay_pos: np.ndarray  # (N, 2), generation order
    rx_pos: np.ndarray  # (M, 2)
    bs_gain: np.ndarray  # (N,)
    relay_gain: np.ndarray  # (N, N), [a, b] is the gain a -> b, zero when no link
    relay_link: np.ndarray  # (N, N) bool
    rx_gain: np.ndarray  # (N, M)
    rx_link: np.ndarray  # (N, M) bool
    layer: np.ndarray  # (N,) 0-based layer of each relay
    order: np.ndarray  # relay indices in layered-network order
    network: LayeredNetwork = field(repr=False)
    bs_pos: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def layer_counts(self) -> list:
        return np.bincount(self.layer, minlength=self.network.d).tolist()

    def unreachable(self) -> list:
        """Relays (generation index) with no path to any receiver."""
        reach = self.rx_link.any(axis=1)
        for a in np.argsort(-self.relay_pos[:, 0], kind="stable"):
            reach[a] = reach[a] or reach[self.relay_link[a]].any()
        return np.flatnonzero(~reach).tolist()

    def diagnostics(self) -> str:
        lines = [f"relays {len(self.layer)}", f"layers {self.network.d}"]
        lines += [f"layer {i + 1} relays {n}" for i, n in enumerate(self.layer_counts())]
        lost = self.unreachable()
        lines.append(f"unreachable {len(lost)}" + ("" if not lost else " " + " ".join(map(str, lost))))
        return "\n".join(lines) + "\n"


def _in_cone(dx, dy, half_angle):
    ang = np.arctan2(dy, dx)
    return (np.abs(ang) < half_angle) & ((dx != 0) | (dy != 0))


def longest_path_layers(link: np.ndarray) -> np.ndarray:
    """0-based longest-path depth of every node of a DAG given as a boolean adjacency matrix."""
    n = link.shape[0]
    layer = np.zeros(n, dtype=int)
    for _ in range(n):
        cand = np.where(link, layer[:, None] + 1, 0).max(axis=0, initial=0)
        new = np.maximum(layer, cand)
        if np.array_equal(new, layer):
            return layer
        layer = new
    raise ValueError("link graph has a cycle")


def pack_layers(layer, order, bs_gain, relay_gain, rx_gain) -> LayeredNetwork:
    d = int(layer.max()) + 1
    groups = [order[layer[order] == i] for i in range(d)]
    h = tuple(bs_gain[g] for g in groups)
    g = tuple(rx_gain[idx] for idx in groups)
    F = {}
    for i in range(1, d):
        for l in range(i):
            block = relay_gain[np.ix_(groups[l], groups[i])].T
            if np.any(block):
                F[(i, l)] = block
    return LayeredNetwork(h=h, g=g, F=F)


def generate_spatial(cfg: SpatialConfig) -> SpatialNetwork:
    rng = np.random.default_rng(cfg.seed)
    N, M = cfg.n_relays, cfg.n_receivers
    radius = cfg.cell_radius * np.sqrt(rng.random(N))
    theta = (rng.random(N) - 0.5) * np.radians(cfg.sector_deg)
    pos = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    phi = cfg.receiver_angles()
    rx = cfg.cell_radius * np.column_stack([np.cos(phi), np.sin(phi)])
    half = np.radians(cfg.beam_deg) / 2

    fade_bs = rng.standard_normal(N)
    fade_rr = rng.standard_normal((N, N))
    fade_rx = rng.standard_normal((N, M))

    bs_gain = np.linalg.norm(pos, axis=1) ** (-cfg.alpha) * fade_bs

    diff = pos[None, :, :] - pos[:, None, :]  # [a, b] = pos_b - pos_a
    link = _in_cone(diff[..., 0], diff[..., 1], half)
    np.fill_diagonal(link, False)
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, 1.0)
    relay_gain = np.where(link, dist ** (-cfg.alpha) * fade_rr, 0.0)

    dr = rx[None, :, :] - pos[:, None, :]
    rx_link = _in_cone(dr[..., 0], dr[..., 1], half)
    rx_gain = np.where(rx_link, np.linalg.norm(dr, axis=-1) ** (-cfg.alpha) * fade_rx, 0.0)

    layer = longest_path_layers(link)
    order = np.lexsort((np.arange(N), layer))
    net = pack_layers(layer, order, bs_gain, relay_gain, rx_gain)
    return SpatialNetwork(cfg, pos, rx, bs_gain, relay_gain, link, rx_gain, rx_link, layer, order, net)

"""BER-vs-noise curves for the linear baseline and the trained network, and dB gaps between them.

The linear baseline is re-optimized at every grid point. The trained network
is normally trained once at one noise level (``trained_curve``) and the fixed
parameters are then evaluated over the grid on fresh noise; ``deep_curve``
retrains at every grid point instead. Linear-baseline gains are always
evaluated on the true ``tanh`` relays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .linear import LinearOptConfig, optimize_balanced
from .modem import ModulationScheme, estimate_ber
from .network import NoiseModel, RelayParams
from .trainer import TrainConfig, train

BASELINE_DETECTORS = ("bpsk", "pam")


@dataclass
class BerCurve:
    inv_sigma2_db: np.ndarray
    ber: np.ndarray  # (G, M*K)
    trials: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inv_sigma2_db = np.asarray(self.inv_sigma2_db, dtype=float)
        self.ber = np.asarray(self.ber, dtype=float)
        if np.any(np.diff(self.inv_sigma2_db) <= 0):
            raise ValueError("noise grid must be strictly increasing in 1/sigma^2")

    @property
    def worst(self) -> np.ndarray:
        return self.ber.max(axis=1)

    def crossing(self, target: float) -> float:
        return crossing_db(self.inv_sigma2_db, self.worst, target)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            n = self.ber.shape[1]
            out.writerow(["inv_sigma2_dB"] + [f"ber_u{m + 1}" for m in range(n)] + ["ber_worst", "trials"])
            for x, row in zip(self.inv_sigma2_db, self.ber):
                out.writerow([repr(float(x))] + [repr(float(v)) for v in row] + [repr(float(row.max())), self.trials])

    @classmethod
    def from_csv(cls, path) -> "BerCurve":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        body = np.array(rows[1:], dtype=float)
        return cls(body[:, 0], body[:, 1:-2], int(body[0, -1]))


def crossing_db(grid_db, ber, target) -> float:
    """First 1/sigma^2 (dB) where the BER falls to ``target``, interpolating log10(BER) linearly.

    Returns ``+inf`` when the curve never reaches ``target`` inside the grid
    (the crossing lies beyond it) and ``-inf`` when it starts below.
    """
    grid_db = np.asarray(grid_db, dtype=float)
    logb = np.log10(np.maximum(np.asarray(ber, dtype=float), 1e-300))
    lt = np.log10(target)
    if logb[0] <= lt:
        return -np.inf
    for k in range(1, len(grid_db)):
        if logb[k] <= lt:
            frac = (logb[k - 1] - lt) / (logb[k - 1] - logb[k])
            return float(grid_db[k - 1] + frac * (grid_db[k] - grid_db[k - 1]))
    return float("inf")


def baseline_params(net, sigma2, scheme, lin_cfg: LinearOptConfig, detectors=BASELINE_DETECTORS):
    """Linear max-min SNR gains (zero biases) and receiver polarity at noise ``sigma2``."""
    result = optimize_balanced(net, lin_cfg, sigma2, scheme, detectors)
    return RelayParams.from_flat(net, result.w, np.zeros(net.N)), result.polarity(), result


def deep_params(net, sigma2, scheme, cfg: TrainConfig, lin_cfg: LinearOptConfig | None = None):
    """Train at noise ``sigma2``; ``cfg.init_mode='linear-baseline'`` starts from the baseline gains."""
    cfg = replace(cfg, sigma2=sigma2)
    start = None
    if cfg.init_mode == "linear-baseline":
        start, _, _ = baseline_params(net, sigma2, scheme, lin_cfg or LinearOptConfig(),
                                      detectors_for(cfg.losses))
    params, history = train(net, scheme, cfg, params=start)
    return params, history.polarity, history


def detectors_for(losses) -> tuple:
    return tuple("pam" if kind == "pam" else "bpsk" for kind in losses)


def evaluate(net, params, polarity, scheme, detectors, grid_db, trials, seed, linear=False) -> BerCurve:
    """BER of one fixed parameter set at every grid point; point ``k`` uses seed ``seed + 1000*k``."""
    rows = []
    for k, db in enumerate(grid_db):
        est = estimate_ber(net, params, scheme, NoiseModel.from_inv_db(db), detectors, trials, seed + 1000 * k,
                           polarity=polarity, linear=linear)
        rows.append(est.ber.ravel())
    return BerCurve(grid_db, rows, trials, {"detectors": tuple(detectors), "seed": seed})


def baseline_curve(net, grid_db, scheme, lin_cfg, trials, seed, detectors=BASELINE_DETECTORS) -> BerCurve:
    rows = []
    for k, db in enumerate(grid_db):
        sigma2 = NoiseModel.from_inv_db(db).sigma2
        params, pol, _ = baseline_params(net, sigma2, scheme, lin_cfg, detectors)
        rows.append(estimate_ber(net, params, scheme, NoiseModel(sigma2), detectors, trials, seed + 1000 * k,
                                 polarity=pol).ber.ravel())
    return BerCurve(grid_db, rows, trials, {"method": "linear", "detectors": detectors})


def deep_curve(net, grid_db, scheme, cfg: TrainConfig, trials, seed, lin_cfg=None) -> BerCurve:
    detectors = detectors_for(cfg.losses)
    rows = []
    for k, db in enumerate(grid_db):
        sigma2 = NoiseModel.from_inv_db(db).sigma2
        params, pol, _ = deep_params(net, sigma2, scheme, replace(cfg, seed=cfg.seed + 7919 * k), lin_cfg)
        rows.append(estimate_ber(net, params, scheme, NoiseModel(sigma2), detectors, trials, seed + 1000 * k,
                                 polarity=pol).ber.ravel())
    return BerCurve(grid_db, rows, trials, {"method": "deep", "losses": cfg.losses, "seed": cfg.seed})


def trained_curve(net, grid_db, scheme, cfg: TrainConfig, train_db, trials, seed, lin_cfg=None):
    """Train once at ``1/sigma^2 = train_db`` and evaluate the result over ``grid_db``."""
    sigma2 = NoiseModel.from_inv_db(train_db).sigma2
    params, pol, history = deep_params(net, sigma2, scheme, cfg, lin_cfg)
    curve = evaluate(net, params, pol, scheme, detectors_for(cfg.losses), grid_db, trials, seed)
    curve.meta.update(method="deep", losses=cfg.losses, train_db=train_db)
    return curve, params, pol, history


def gap_db(reference: BerCurve, improved: BerCurve, target: float) -> float:
    """How many dB less 1/sigma^2 ``improved`` needs than ``reference`` to reach ``target``.

    ``+inf`` when only ``improved`` reaches the target in the grid, ``-inf`` when
    only ``reference`` does, NaN when neither does.
    """
    return reference.crossing(target) - improved.crossing(target)


@dataclass
class TransferCurve:
    s: np.ndarray  # (P,) swept input symbols
    r: np.ndarray  # (P, M) noiseless receiver output (after polarity)
    rms: np.ndarray  # (M,) noiseless RMS over the equiprobable constellation
    marker_s: np.ndarray  # constellation levels
    marker_r: np.ndarray  # (L, M)
    marker_bits: np.ndarray  # (L, M) target bit of each user (first bit)

    @property
    def rt(self):
        return self.r / self.rms

    @property
    def marker_rt(self):
        return self.marker_r / self.rms

    def to_csv(self, path, markers_path=None):
        M = self.r.shape[1]
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(["s"] + [f"r_u{m + 1}" for m in range(M)] + [f"rt_u{m + 1}" for m in range(M)])
            for s, r, rt in zip(self.s, self.r, self.rt):
                out.writerow([repr(float(s))] + [repr(float(v)) for v in r] + [repr(float(v)) for v in rt])
        if markers_path is not None:
            with open(markers_path, "w", newline="") as f:
                out = csv.writer(f)
                out.writerow(["s"] + [f"rt_u{m + 1}" for m in range(M)] + [f"target_u{m + 1}" for m in range(M)])
                for s, rt, bits in zip(self.marker_s, self.marker_rt, self.marker_bits):
                    out.writerow([repr(float(s))] + [repr(float(v)) for v in rt] + [int(b) for b in bits])


def transfer_curve(net, params, scheme: ModulationScheme, points=201, polarity=None) -> TransferCurve:
    """Noiseless map from transmitted symbol to every receiver, swept over ``[-1, 1]``."""
    from .network import propagate

    pol = np.ones(net.M) if polarity is None else np.asarray(polarity, float)
    w, b = params.w_flat, params.b_flat
    s = np.linspace(-1.0, 1.0, points)
    r = propagate(net, w, b, s)[3] * pol
    marker_r = propagate(net, w, b, scheme.levels)[3] * pol
    rms = np.sqrt(np.mean(marker_r ** 2, axis=0))
    if np.any(rms == 0):
        rms = np.where(rms == 0, 1.0, rms)
    K = scheme.bits_per_user
    bits = scheme.labels[:, ::K][:, : net.M]
    return TransferCurve(s, r, rms, scheme.levels.copy(), marker_r, bits)


def decisions_match(curve: TransferCurve, m: int, detector: str) -> bool:
    """Whether user ``m``'s noiseless decision at every constellation point equals its target bit."""
    rt = curve.marker_rt[:, m]
    if detector == "bpsk":
        decided = (rt > 0).astype(int)
    elif detector == "pam":
        decided = (rt * rt < 1).astype(int)
    else:
        raise ValueError("transfer check supports 'bpsk' and 'pam' detectors")
    return bool(np.array_equal(decided, curve.marker_bits[:, m]))


@dataclass
class GainStudy:
    """Deep-vs-linear comparison on one network: train once per seed, baseline re-optimized per grid point.

    The training noise level is ``train_db`` or, when that is None, the baseline's
    crossing of ``target`` minus ``train_offset_db``, so that deep spatial networks,
    whose usable SNR range moves by tens of dB with the fading draw, train where
    the comparison is made.
    """
    grid_db: tuple
    train_db: float | None = None
    train_offset_db: float = 15.0
    target: float = 1e-3
    eta: float = 3.0
    steps: int = 8000
    batch_size: int = 512
    init_mode: str = "linear-baseline"
    input_scaled: bool = False
    validate_every: int = 500
    validate_batch: int = 50_000
    trials: int = 200_000
    p_max: float = 0.64
    restarts: int = 4
    eval_seed: int = 3

    def train_config(self, losses, seed) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, eta=self.eta, steps=self.steps, losses=losses,
                           init_mode=self.init_mode, seed=seed, validate_every=self.validate_every,
                           validate_batch=self.validate_batch, input_scaled=self.input_scaled)

    def linear_config(self, seed=0) -> LinearOptConfig:
        return LinearOptConfig(p_max=self.p_max, restarts=self.restarts, seed=seed)

    def baseline(self, net, scheme) -> BerCurve:
        return baseline_curve(net, np.asarray(self.grid_db, float), scheme, self.linear_config(), self.trials,
                              self.eval_seed)

    def train_point(self, baseline: BerCurve | None = None) -> float:
        if self.train_db is not None:
            return float(self.train_db)
        cross = baseline.crossing(self.target)
        if not np.isfinite(cross):
            raise ValueError("baseline never crosses the target inside the grid; widen grid_db or set train_db")
        return float(cross - self.train_offset_db)

    def deep(self, net, scheme, losses, seed, baseline: BerCurve | None = None):
        """``(curve, params, polarity)`` for one training seed."""
        curve, params, pol, _ = trained_curve(net, np.asarray(self.grid_db, float), scheme,
                                              self.train_config(losses, seed), self.train_point(baseline),
                                              self.trials, self.eval_seed, self.linear_config(seed))
        return curve, params, pol

    def gap(self, baseline: BerCurve, deep: BerCurve) -> float:
        return gap_db(baseline, deep, self.target)


def _grid(start, stop, step) -> tuple:
    return tuple(float(x) for x in np.arange(start, stop + step / 2, step))


STUDIES = {
    "fig3": GainStudy(grid_db=_grid(4, 20, 1), train_db=12.0, eta=3.0, steps=8000),
    "fig4": GainStudy(grid_db=_grid(8, 24, 1), train_db=15.0, eta=3.0, steps=16_000),
    "spatial": GainStudy(grid_db=_grid(30, 100, 2.5), train_offset_db=10.0, target=1e-2, eta=0.1,
                         steps=16_000, init_mode="normalized", input_scaled=True, validate_batch=20_000,
                         trials=20_000, restarts=2),
}

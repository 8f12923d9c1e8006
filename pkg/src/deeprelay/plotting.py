"""SVG figures drawn purely from CSV-level data."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "deeprelay"


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def ber_svg(path, curves: dict, floor=None):
    """``curves`` maps a label to ``(inv_sigma2_db, ber)``; zeros are dropped from the log axis."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (x, y) in curves.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = y > 0
        ax.semilogy(x[keep], y[keep], marker="o", ms=3, label=label)
    if floor is not None:
        ax.axhline(floor, color="grey", lw=0.5, ls=":")
    ax.set_xlabel("1/sigma^2 [dB]")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", lw=0.3)
    ax.legend()
    _save(fig, path)


def transfer_svg(path, s, rt, marker_s=None, marker_rt=None, marker_bits=None):
    """Normalized noiseless receiver output per user; markers at constellation inputs."""
    rt = np.atleast_2d(np.asarray(rt, float))
    fig, ax = plt.subplots(figsize=(5, 4))
    for m in range(rt.shape[1]):
        line, = ax.plot(s, rt[:, m], label=f"user {m + 1}")
        if marker_s is not None:
            for x, y, bit in zip(marker_s, marker_rt[:, m], marker_bits[:, m]):
                ax.plot(x, y, "x" if bit else "o", color=line.get_color(), mfc="none")
    ax.axhline(0, color="grey", lw=0.5)
    ax.set_xlabel("transmitted symbol s")
    ax.set_ylabel("normalized receiver output")
    ax.grid(True, lw=0.3)
    ax.legend()
    _save(fig, path)

"""Static SVG figures of runs and maps.

Figures are presentation only: nothing here feeds back into CSV or summary
output. SVGs carry no date and a fixed hash salt so reruns are byte-stable.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from app.pipeline.engine import RunRecord  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "wave-esc"


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def plot_parameters(record: RunRecord, path: Union[str, Path], targets: Optional[Dict[str, float]] = None) -> Path:
    """K(t) and C(t) traces with optional target lines and segment switches."""
    targets = targets or {}
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
    t = record.t
    for ax, name, unit in zip(axes, ("K", "C"), ("N/m", "N s/m")):
        ax.plot(t, record.column(name), lw=0.8)
        if name in targets:
            ax.axhline(targets[name], color="k", ls="--", lw=0.8)
        for segment in record.segments[1:]:
            ax.axvline(segment.start, color="grey", ls=":", lw=0.8)
        ax.set_ylabel(f"{name} ({unit})")
        ax.grid(True)
    axes[-1].set_xlabel("t (s)")
    axes[0].set_title(f"PTO coefficients ({record.scheme or 'fixed'})")
    return _save(fig, path)


def plot_power(record: RunRecord, path: Union[str, Path]) -> Path:
    """Instantaneous power P(t) and the pipeline mean mu(t)."""
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(record.t, record.column("P"), lw=0.5, label="P")
    ax.plot(record.t, record.column("mu"), lw=1.0, label="mu")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("power (W)")
    ax.grid(True)
    ax.legend(loc="upper right")
    return _save(fig, path)


def plot_surface(
    k_values: Sequence[float],
    c_values: Sequence[float],
    power: np.ndarray,
    path: Union[str, Path],
    marker: Optional[Sequence[float]] = None,
) -> Path:
    """Filled contour of P_bar(K, C); ``marker`` highlights the optimum."""
    fig, ax = plt.subplots(figsize=(6, 5))
    grid_c, grid_k = np.meshgrid(c_values, k_values)
    masked = np.ma.masked_invalid(power)
    if min(masked.shape) >= 2:
        contour = ax.contourf(grid_c, grid_k, masked, levels=20)
    else:
        contour = ax.pcolormesh(grid_c, grid_k, masked, shading="nearest")
    fig.colorbar(contour, ax=ax, label="mean power (W)")
    if marker is not None:
        ax.plot(marker[1], marker[0], "r+", ms=12)
    ax.set_xlabel("C (N s/m)")
    ax.set_ylabel("K (N/m)")
    return _save(fig, path)

"""
Plot rendering for run results.

Figures are built with the object-oriented matplotlib API on the Agg backend
and saved as SVG with a fixed hash salt and no date stamp, so identical
results always give byte-identical files.
"""

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from errors import RacewayError

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "raceway"
matplotlib.rcParams["svg.fonttype"] = "path"

MAX_PLOTTED_POINTS = 1000


def _thin(*arrays):
    """Keep at most about MAX_PLOTTED_POINTS samples along the last axis, end points included."""
    size = arrays[0].shape[-1]
    stride = max(1, size // MAX_PLOTTED_POINTS)
    index = np.unique(np.append(np.arange(0, size, stride), size - 1))
    return [array[..., index] for array in arrays]


def topography_figure(flow, depths, title=""):
    """
    Bottom, free surface and layer trajectories along the lap.

    Args:
        flow: hydro.FlowField
        depths: layer trajectories z_n(x), shape (Nz, Nx+1)
        title: axes title
    """
    x, zb, eta, z = _thin(flow.x, flow.zb, flow.eta, np.asarray(depths))
    figure = Figure(figsize=(8, 4.5))
    axes = figure.add_subplot()
    axes.fill_between(x, zb, np.full_like(zb, zb.min() - 0.05), color="#c8b68e", linewidth=0)
    axes.plot(x, zb, color="#6b4f1d", linewidth=1.5, label="bottom $z_b$")
    axes.plot(x, eta, color="#1f5fa8", linewidth=1.5, label=r"free surface $\eta$")
    for n, trajectory in enumerate(z, start=1):
        axes.plot(x, trajectory, color="#2e8b57", linewidth=0.8, linestyle="--", label="layer trajectories" if n == 1 else None)
    axes.set_xlabel("x (m)")
    axes.set_ylabel("elevation (m)")
    if title:
        axes.set_title(title)
    axes.legend(loc="lower right", fontsize="small")
    figure.tight_layout()
    return figure


def sweep_figure(rows, regime):
    """
    Optimal objective (top) and the two gains (bottom) against the lap length.

    Args:
        rows: search.SweepRow list, failed rows are left out
        regime: objective.Regime
    """
    rows = sorted((row for row in rows if np.isfinite(row.objective)), key=lambda row: row.L)
    lengths = np.array([row.L for row in rows])
    fixed = str(getattr(regime, "value", regime)) == "fixed"
    figure = Figure(figsize=(7, 6))
    top, bottom = figure.subplots(2, 1, sharex=True)
    top.plot(lengths, [row.objective for row in rows], marker="o", color="#1f5fa8")
    top.set_ylabel(r"$\bar\mu$ (1/s)" if fixed else r"$\Pi$ (gC/m$^2$/s)")
    top.set_xscale("log")
    names = ("$r_1$", "$r_2$") if fixed else (r"$\tilde r_1$", r"$\tilde r_2$")
    bottom.plot(lengths, [100.0 * row.r1 for row in rows], marker="o", label=names[0])
    bottom.plot(lengths, [100.0 * row.r2 for row in rows], marker="s", label=names[1])
    bottom.set_xlabel("L (m)")
    bottom.set_ylabel("gain (%)")
    bottom.legend(fontsize="small")
    figure.tight_layout()
    return figure


def save_svg(figure, path):
    """Write a figure as deterministic SVG."""
    path = Path(path)
    try:
        figure.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise RacewayError(f"cannot write plot {path}: {e}", path=str(path))
    logger.info(f"Wrote {path}")
    return path


def emit_plots(bundle, out_dir):
    """
    Render every figure the result bundle has data for.

    Args:
        bundle: dict with optional keys 'flow' and 'depths' (topography),
            'sweep' and 'regime' (length sweep), 'title'
        out_dir: output directory

    Returns:
        list: written paths
    """
    out_dir = Path(out_dir)
    written = []
    if bundle.get("flow") is not None:
        figure = topography_figure(bundle["flow"], bundle["depths"], bundle.get("title", ""))
        written.append(save_svg(figure, out_dir / "topography.svg"))
    if bundle.get("sweep"):
        figure = sweep_figure(bundle["sweep"], bundle.get("regime"))
        written.append(save_svg(figure, out_dir / "sweep.svg"))
    return written

"""Matplotlib figures written next to the CSV outputs (SVG by default)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp, so reruns produce identical files
matplotlib.rcParams["svg.hashsalt"] = "ocpara"
_META = {"Date": None}


def _save(fig, path) -> Path:
    path = Path(path)
    meta = _META if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_curves(path, curves, title: str = "", ylabel: str = "|kappa|"):
    """``curves`` is a list of (label, s, values) drawn on log-log axes."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, s, v in curves:
        ax.loglog(s, np.maximum(np.abs(v), 1e-16), label=label, lw=1.2)
    ax.set_xlabel("s")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_errors(path, histories, title: str = ""):
    """Semilog error against iteration; ``histories`` is a list of (label, errors)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, e in histories:
        e = np.asarray(e, float)
        e = np.where(e == 0.0, 1e-15, e)
        ax.semilogy(np.arange(len(e)), e, marker="o", ms=3, label=label)
    ax.set_xlabel("iteration k")
    ax.set_ylabel("error")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_series(path, series, xlabel: str, ylabel: str, title: str = "", logy: bool = False):
    """Plain line plot of (label, x, y) series."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, x, y in series:
        (ax.semilogy if logy else ax.plot)(x, y, label=label, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)

"""PNG figures rendered from the plotting CSVs (headless Agg backend)."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _columns(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = {}
    for j, name in enumerate(header):
        cols[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in rows])
    return header, cols


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_curves(curves_csv, path):
    """Training loss and validation error against effective epochs, one line per run."""
    header, cols = _columns(curves_csv)
    x = cols["effective_epochs"]
    runs = [h[: -len("/train_loss")] for h in header if h.endswith("/train_loss")]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_err) = plt.subplots(1, 2, figsize=(9.6, 3.6))
        for rid in runs:
            for ax, col in ((ax_loss, "train_loss"), (ax_err, "val_error_pct")):
                y = cols[f"{rid}/{col}"]
                keep = np.isfinite(y)
                ax.plot(x[keep], y[keep], marker="o", markersize=2.5, label=rid)
        ax_loss.set_yscale("log")
        ax_loss.set_ylabel("training loss")
        ax_err.set_ylabel("validation error (%)")
        for ax in (ax_loss, ax_err):
            ax.set_xlabel("effective epochs")
        ax_err.legend(fontsize=7)
        return _save(fig, path)


def plot_smoothing(smoothing_csv, path, landscape=None):
    """Negative local entropy per scope, each curve shifted to start at zero."""
    header, cols = _columns(smoothing_csv)
    x = cols["x"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if landscape is not None:
            f = np.asarray(landscape.energy(x))
            ax.plot(x, f - f.min(), color="k", lw=1.2, label="f")
        for name in header[1:]:
            y = cols[name]
            ax.plot(x, y - np.nanmin(y), lw=1.0, label=f"γ={float(name.split('=', 1)[1]):g}")
        ax.set_xlabel("x")
        ax.set_ylabel("-F(x, γ) (shifted)")
        ax.legend(fontsize=7)
        return _save(fig, path)


def plot_spectrum(report, path, zero_band=1e-2):
    """Eigenvalue histogram (log counts) with an inset on the near-zero band."""
    lam = report.eigenvalues
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(lam, bins=60, color="tab:blue", alpha=0.8, log=True)
        ax.set_xlabel("eigenvalue")
        ax.set_ylabel("count")
        frac = report.frac_near_zero(zero_band)
        ax.set_title(f"{report.source}: n={report.n}, {100 * frac:.1f}% with |λ| ≤ {zero_band:g}")
        inset = ax.inset_axes([0.55, 0.45, 0.4, 0.45])
        inset.hist(lam[np.abs(lam) <= zero_band], bins=40, color="tab:orange")
        inset.set_xlim(-zero_band, zero_band)
        inset.set_xticks([-zero_band, 0.0, zero_band])
        inset.tick_params(labelsize=6)
        return _save(fig, path)

"""Matplotlib figures for a training run, saved as SVG next to the CSVs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import ALPHA_HEADER, histogram  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "lgs",
    "svg.fonttype": "none",
}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_alpha_trajectory(alpha_steps, truth, path):
    arr = np.array([r[1:] for r in alpha_steps]) if alpha_steps else np.zeros((0, 6))
    steps = np.array([r[0] for r in alpha_steps])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        for k, name in enumerate(ALPHA_HEADER[1:]):
            line, = ax.plot(steps, arr[:, k], label=name)
            ax.axhline(truth.alpha_true.ravel()[k], color=line.get_color(), ls=":", lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("coefficient")
        ax.set_title(f"generator coefficients ({truth.name})")
        ax.legend(ncol=3, frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_that_histograms(that_epochs, path, bins=40, max_panels=6):
    epochs = sorted(that_epochs)
    if len(epochs) > max_panels:
        pick = np.unique(np.linspace(0, len(epochs) - 1, max_panels).round().astype(int))
        epochs = [epochs[i] for i in pick]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(epochs) or 1, 1, figsize=(4.5, 1.3 * max(1, len(epochs))),
                                 squeeze=False)
        for ax, ep in zip(axes[:, 0], epochs):
            h = histogram(that_epochs[ep], bins if that_epochs[ep].size > 1 else 2, ep)
            ax.stairs(h.counts, h.edges, fill=True, alpha=0.7)
            ax.set_ylabel(f"ep {ep}")
        axes[-1, 0].set_xlabel(r"$\hat t$")
        fig.tight_layout()
        return _save(fig, path)


def plot_losses(loss_steps, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        if loss_steps:
            s = np.array([r[0] for r in loss_steps])
            v = np.array([r[2] for r in loss_steps])
            ax.semilogy(s, np.maximum(v, 1e-300), lw=0.6)
        ax.set_xlabel("step")
        ax.set_ylabel("batch loss")
        fig.tight_layout()
        return _save(fig, path)


def render_run(runlog, truth, outdir, bins=40):
    out = [plot_alpha_trajectory(runlog.alpha_steps, truth, outdir / "alpha_trajectory.svg"),
           plot_losses(runlog.loss_steps, outdir / "loss_trajectory.svg")]
    if runlog.that_epochs:
        out.append(plot_that_histograms(runlog.that_epochs, outdir / "that_histograms.svg", bins))
    return out

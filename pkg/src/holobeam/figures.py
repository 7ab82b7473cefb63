"""Figure rendering for the CLI report paths.

Every CSV-producing subcommand can drop a PNG next to its output; these
helpers do the drawing.  The Agg backend is forced so the CLI works on
headless machines.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_rate_figure(path, sample_se, mean_se, title):
    """Per-sample spectral efficiency with the corpus mean overlaid."""
    fig, ax = plt.subplots(figsize=(7, 4))
    idx = np.arange(len(sample_se))
    ax.plot(idx, sample_se, ".", ms=4, label="per sample")
    ax.axhline(mean_se, color="C3", lw=1.5, label=f"mean = {mean_se:.3f}")
    ax.set_xlabel("sample index")
    ax.set_ylabel("sum SE (bit/s/Hz)")
    ax.set_title(title)
    ax.grid(True, ls=":")
    ax.legend()
    return _finish(fig, path)


def save_latency_figure(path, labels, mean_ms, std_ms):
    """Mean per-sample latency per method, log scale, with std whiskers."""
    fig, ax = plt.subplots(figsize=(5, 4))
    x = np.arange(len(labels))
    ax.bar(x, mean_ms, yerr=std_ms, capsize=4, color=["C0", "C1"][:len(labels)])
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_yscale("log")
    ax.set_ylabel("per-sample latency (ms)")
    ax.set_title("inference latency")
    ax.grid(True, axis="y", ls=":")
    return _finish(fig, path)


def save_verify_figure(path, trial_disc, tol, title):
    """Per-trial discrepancy scatter against the tolerance line."""
    fig, ax = plt.subplots(figsize=(7, 4))
    idx = np.arange(len(trial_disc))
    floor = 1e-18
    ax.semilogy(idx, np.maximum(np.asarray(trial_disc), floor), ".", ms=4,
                label="trial discrepancy")
    ax.axhline(tol, color="C3", lw=1.5, label=f"tolerance = {tol:g}")
    ax.set_xlabel("trial")
    ax.set_ylabel("max discrepancy")
    ax.set_title(title)
    ax.grid(True, ls=":")
    ax.legend()
    return _finish(fig, path)

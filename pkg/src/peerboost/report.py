"""Render figures from the delimited outputs written by the CLI.

Every renderer takes a CSV path, writes PNG files next to it (or into an
explicit directory) and returns the list of files written.  Rendering is a
pure post-processing step over the CSV contract; nothing here feeds back
into the learning code.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_run_figures", "render_kappa_figure", "render_lambda_figure"]


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    cols = {name: [r[i] for r in rows] for i, name in enumerate(header)}
    return cols


def _out_path(csv_path, out_dir, suffix):
    csv_path = Path(csv_path)
    base = Path(out_dir) if out_dir is not None else csv_path.parent
    return base / (csv_path.stem + suffix)


def render_run_figures(metrics_csv, out_dir=None, oracle_mean_degree=None):
    """Accuracy, objective/certificate, graph-sparsity and traffic figures."""
    cols = _read_csv(metrics_csv)
    step = cols["global_step"]
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(step, cols["train_acc"], label="train", marker=".")
    ax.plot(step, cols["test_acc"], label="test", marker=".")
    ax.set_xlabel("global step")
    ax.set_ylabel("accuracy (mean over users)")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    p = _out_path(metrics_csv, out_dir, "_accuracy.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].plot(step, cols["f"], marker=".", label="model objective f")
    axes[0].plot(step, cols["h"], marker=".", label="graph objective h")
    axes[0].set_xlabel("global step")
    axes[0].legend()
    axes[1].plot(step, cols["gap"], marker=".", color="tab:red")
    axes[1].set_xlabel("global step")
    axes[1].set_ylabel("duality gap certificate")
    if min(cols["gap"]) > 0:
        axes[1].set_yscale("log")
    fig.tight_layout()
    p = _out_path(metrics_csv, out_dir, "_objective.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(step, cols["mean_degree"], marker=".", label="learned graph")
    if oracle_mean_degree is not None:
        ax.axhline(oracle_mean_degree, color="tab:gray", linestyle="--",
                   label="oracle graph")
    ax.set_xlabel("global step")
    ax.set_ylabel("mean number of neighbors")
    ax.legend()
    fig.tight_layout()
    p = _out_path(metrics_csv, out_dir, "_graph.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(step, cols["model_bits"], marker=".", label="model messages")
    ax.plot(step, cols["graph_bits"], marker=".", label="graph messages")
    ax.set_xlabel("global step")
    ax.set_ylabel("cumulative bits")
    ax.legend()
    fig.tight_layout()
    p = _out_path(metrics_csv, out_dir, "_comm.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)
    return written


def render_kappa_figure(sweep_csv, out_dir=None):
    """Rounds and total bits to reach the target objective, per kappa."""
    cols = _read_csv(sweep_csv)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    kappas = cols["kappa"]
    axes[0].plot(kappas, cols["rounds"], marker="o")
    axes[0].set_xlabel("kappa")
    axes[0].set_ylabel("rounds to target")
    axes[0].set_xscale("log")
    axes[0].set_yscale("log")
    axes[1].plot(kappas, cols["bits"], marker="o", color="tab:orange")
    axes[1].set_xlabel("kappa")
    axes[1].set_ylabel("bits to target")
    axes[1].set_xscale("log")
    axes[1].set_yscale("log")
    fig.tight_layout()
    p = _out_path(sweep_csv, out_dir, ".png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return [p]


def render_lambda_figure(sweep_csv, out_dir=None):
    """Graph sparsity and accuracy as a function of lambda."""
    cols = _read_csv(sweep_csv)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    lams = cols["lambda"]
    axes[0].plot(lams, cols["mean_degree"], marker="o")
    axes[0].set_xlabel("lambda")
    axes[0].set_ylabel("mean number of neighbors")
    axes[0].set_xscale("log")
    axes[1].plot(lams, cols["test_acc"], marker="o", label="test")
    axes[1].plot(lams, cols["train_acc"], marker="o", label="train")
    axes[1].set_xlabel("lambda")
    axes[1].set_ylabel("accuracy")
    axes[1].set_xscale("log")
    axes[1].legend()
    fig.tight_layout()
    p = _out_path(sweep_csv, out_dir, ".png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return [p]

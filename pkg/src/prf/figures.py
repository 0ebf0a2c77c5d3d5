"""Figure rendering for the report command.

All plots go straight to files via the Agg backend; nothing here opens a
window. Each function takes plain data and a target path so the CLI layer
stays free of matplotlib.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_speedup(node_counts: list[int], speedups: list[float],
                 path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(node_counts, speedups, marker="o", label="simulated")
    ax.plot(node_counts, node_counts, linestyle="--", color="gray", label="linear")
    ax.set_xlabel("slave nodes")
    ax.set_ylabel("speedup")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_volume(ks: list[int], prf_totals: list[int], horizontal: list[int],
                path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, horizontal, marker="s", label="horizontal copy")
    ax.plot(ks, prf_totals, marker="o", label="multiplexed subsets")
    ax.set_xlabel("trees")
    ax.set_ylabel("training cells")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_variable_importance(names: list[str], importance: list[float],
                             path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    order = sorted(range(len(names)), key=lambda i: importance[i])
    ax.barh([names[i] for i in order], [importance[i] for i in order])
    ax.set_xlabel("importance")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_node_busy(busy: dict[str, float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    nodes = sorted(busy, key=lambda n: int(n))
    ax.bar(nodes, [busy[n] for n in nodes])
    ax.set_xlabel("node")
    ax.set_ylabel("busy time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

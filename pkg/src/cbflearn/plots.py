"""Static figure rendering for the experiment drivers.

Every figure is written to disk next to the CSV/JSONL exports; nothing is
shown interactively. Uses the Agg backend so the drivers run headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 150


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def planar_figures(figdir, bundle, model, report, sims, inner, outer) -> None:
    figdir = Path(figdir)
    figdir.mkdir(parents=True, exist_ok=True)

    # training data in the plane
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(bundle.demos.states[:, 0], bundle.demos.states[:, 1], "k.", ms=1.5,
            label="demonstrations")
    ax.plot(bundle.x_safe_bar.points[:, 0], bundle.x_safe_bar.points[:, 1], "g.", ms=2.5,
            label="buffered safe")
    ax.plot(bundle.x_layer.points[:, 0], bundle.x_layer.points[:, 1], "r.", ms=2.5,
            label="layer samples")
    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    ax.set_aspect("equal")
    ax.legend(fontsize=8, loc="upper right")
    ax.grid(alpha=0.3)
    _save(fig, figdir / "training_data.png")

    # level sets of the learned barrier
    grid = np.linspace(-0.7, 0.7, 240)
    X, Y = np.meshgrid(grid, grid)
    H = np.atleast_1d(model.value(np.stack([X.ravel(), Y.ravel()], axis=1))).reshape(X.shape)
    fig, ax = plt.subplots(figsize=(5.4, 5))
    cs = ax.contourf(X, Y, H, levels=21, cmap="RdBu")
    ax.contour(X, Y, H, levels=[0.0], colors="k", linewidths=1.5)
    fig.colorbar(cs, ax=ax, shrink=0.85)
    ax.set_title("learned barrier and zero level set")
    ax.set_aspect("equal")
    _save(fig, figdir / "level_sets.png")

    # the three slack families
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    axes[0].plot(report.safe_slacks, "g.", ms=2)
    axes[0].set_title("safe slack (> 0)")
    axes[1].plot(report.dyn_slacks, "b.", ms=2)
    axes[1].set_title("derivative slack (> 0)")
    axes[2].plot(report.unsafe_slacks, "r.", ms=2)
    axes[2].set_title("unsafe slack (< 0)")
    for ax in axes:
        ax.axhline(0.0, color="k", lw=0.8)
        ax.grid(alpha=0.3)
    _save(fig, figdir / "slacks.png")

    # closed-loop trajectories
    fig, ax = plt.subplots(figsize=(5.4, 5))
    ax.contour(X, Y, H, levels=[0.0], colors="k", linewidths=1.0)
    for r, res in sims.items():
        states = res.trajectory.states
        ax.plot(states[:, 0], states[:, 1], lw=1.2, label=f"r={r}")
        ax.plot(states[0, 0], states[0, 1], "o", ms=5, color=ax.lines[-1].get_color())
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title("CBF-QP closed loop")
    ax.grid(alpha=0.3)
    _save(fig, figdir / "closed_loop.png")

    fig, ax = plt.subplots(figsize=(6, 3))
    for r, res in sims.items():
        t = np.arange(len(res.h_trace)) * res.trajectory.dt
        ax.plot(t, res.h_trace, lw=1.0, label=f"r={r}")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("h(x(t))")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, figdir / "h_traces.png")

    # zero-crossing radii along rays
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(inner, label="inner radius")
    ax.plot(outer, label="outer radius")
    ax.axhline(0.2333, color="g", ls="--", lw=0.8)
    ax.axhline(0.4, color="r", ls="--", lw=0.8)
    ax.set_xlabel("ray")
    ax.set_ylabel("radius")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, figdir / "level_radii.png")


def aircraft_figures(figdir, bundle, model, log, filtered, baseline) -> None:
    figdir = Path(figdir)
    figdir.mkdir(parents=True, exist_ok=True)

    # data in relative coordinates
    rel = bundle.demos.states[:, 0:2] - bundle.demos.states[:, 3:5]
    rel_f = bundle.x_safe_bar.points[:, 0:2] - bundle.x_safe_bar.points[:, 3:5]
    rel_n = bundle.x_layer.points[:, 0:2] - bundle.x_layer.points[:, 3:5]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(rel[:, 0], rel[:, 1], "g.", ms=1.5, label="demonstrations")
    ax.plot(rel_f[:, 0], rel_f[:, 1], "b.", ms=1.5, label="safe annulus samples")
    ax.plot(rel_n[:, 0], rel_n[:, 1], "r.", ms=1.5, label="unsafe samples")
    ax.set_xlabel("$p_{x,r}$")
    ax.set_ylabel("$p_{y,r}$")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, figdir / "training_data_relative.png")

    # barrier vs relative distance
    dist = np.linalg.norm(rel, axis=1)
    hvals = np.atleast_1d(model.value(bundle.demos.states))
    fig, ax = plt.subplots(figsize=(6, 3.4))
    ax.plot(dist, hvals, "b.", ms=2, label="h at demonstrations")
    hn = np.atleast_1d(model.value(bundle.x_layer.points))
    dn = np.linalg.norm(rel_n, axis=1)
    ax.plot(dn, hn, "r.", ms=2, label="h at unsafe samples")
    ax.axvline(0.5, color="k", ls="--", lw=0.8)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("relative distance")
    ax.set_ylabel("h")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, figdir / "h_vs_distance.png")

    # training loss
    if log:
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.semilogy([row["epoch"] for row in log], [max(row["loss"], 1e-12) for row in log])
        ax.set_xlabel("epoch")
        ax.set_ylabel("penalty loss")
        ax.grid(alpha=0.3)
        _save(fig, figdir / "training_loss.png")

    # closed-loop trajectories, filtered vs nominal-only
    fig, axes = plt.subplots(1, 2, figsize=(10, 5))
    cm = plt.get_cmap("tab10")
    for i, res in enumerate(filtered):
        s = res.trajectory.states
        axes[0].plot(s[:, 0], s[:, 1], "-", color=cm(i % 10), lw=1.0)
        axes[0].plot(s[:, 3], s[:, 4], ":", color=cm(i % 10), lw=1.0)
        axes[0].plot(s[0, 0], s[0, 1], "d", color=cm(i % 10), ms=6)
        axes[0].plot(s[0, 3], s[0, 4], "o", color=cm(i % 10), ms=5)
    axes[0].set_title("filtered")
    for i, s in enumerate(baseline):
        axes[1].plot(s[:, 0], s[:, 1], "-", color=cm(i % 10), lw=1.0)
        axes[1].plot(s[:, 3], s[:, 4], ":", color=cm(i % 10), lw=1.0)
    axes[1].set_title("nominal only")
    for ax in axes:
        ax.set_aspect("equal")
        ax.grid(alpha=0.3)
        ax.set_xlabel("$p_x$")
        ax.set_ylabel("$p_y$")
    _save(fig, figdir / "closed_loop.png")

    # pairwise distance traces
    fig, ax = plt.subplots(figsize=(6, 3.4))
    for i, res in enumerate(filtered):
        s = res.trajectory.states
        d = np.hypot(s[:, 0] - s[:, 3], s[:, 1] - s[:, 4])
        t = np.arange(len(d)) * res.trajectory.dt
        ax.plot(t, d, color=cm(i % 10), lw=1.0)
    ax.axhline(0.5, color="k", ls="--", lw=0.9, label="$D_s$")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("pairwise distance")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, figdir / "pairwise_distance.png")

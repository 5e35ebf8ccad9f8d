"""Figure rendering for the CLI report paths (headless Agg backend)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": "patchsis"}


def trajectory_figure(trajectories, path, ode=None, title=None):
    """Node-averaged infected fraction over time, one line per trajectory;
    an optional ODE overlay is drawn on top in black."""
    if not isinstance(trajectories, (list, tuple)):
        trajectories = [trajectories]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    many = len(trajectories) > 1
    for traj in trajectories:
        frac = traj.node_average().mean(axis=1)
        ax.plot(traj.times, frac,
                color="tab:blue" if many else None,
                alpha=0.25 if many else 1.0,
                lw=0.8 if many else 1.6)
    if many:
        stack = np.mean([t.node_average().mean(axis=1) for t in trajectories],
                        axis=0)
        ax.plot(trajectories[0].times, stack, color="tab:blue", lw=1.8,
                label="ensemble mean")
    if ode is not None:
        ax.plot(ode.times, ode.node_average().mean(axis=1), color="black",
                lw=1.6, ls="--", label="deterministic")
    ax.set_xlabel("t")
    ax.set_ylabel("mean infected fraction")
    ax.set_ylim(bottom=0)
    if title:
        ax.set_title(title)
    if many or ode is not None:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def layer_trajectory_figure(traj, path, title=None):
    """Per-(node,layer) infected probabilities over time in one panel per
    layer; readable only for small networks, which is what the presets are."""
    fig, axes = plt.subplots(traj.m, 1, figsize=(7, 2.6 * traj.m),
                             sharex=True, squeeze=False)
    for a in range(traj.m):
        ax = axes[a, 0]
        block = traj.p[:, a * traj.n:(a + 1) * traj.n]
        for i in range(traj.n):
            ax.plot(traj.times, block[:, i], lw=0.9, alpha=0.8)
        ax.set_ylabel(f"layer {a + 1}")
        ax.set_ylim(bottom=0)
    axes[-1, 0].set_xlabel("t")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def sweep_figure(rows, path, title=None):
    """Decay rate versus budget for the optimized and naive allocations."""
    c = [r["C"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(c, [r["mu_gp"] for r in rows], "o-", label="optimized")
    ax.plot(c, [r["mu_naive"] for r in rows], "s--", label="naive equal split")
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xlabel("budget C")
    ax.set_ylabel("decay rate μ")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)

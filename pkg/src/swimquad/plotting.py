"""PNG figures written next to the CSV/JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"truth": "0.2", "LSTM": "tab:blue", "EF": "tab:orange"}
PANELS = (("f_y", "N"), ("f_z", "N"), ("tau_x", "N m"))

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "path.simplify": False,
}


def _save(fig, path):
    # no Software/date chunks, so reruns write identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def force_series(rows: list[dict], title: str, path) -> None:
    t = np.array([r["t"] for r in rows])
    with plt.rc_context(RC):
        fig, axes = plt.subplots(len(PANELS), 1, figsize=(6.4, 5.2), sharex=True)
        for ax, (ch, unit) in zip(axes, PANELS):
            ax.plot(t, [r[f"truth_{ch}"] for r in rows], color=COLORS["truth"], lw=1.2, label="measured")
            ax.plot(t, [r[f"lstm_{ch}"] for r in rows], color=COLORS["LSTM"], lw=1.0, label="LSTM")
            ax.plot(t, [r[f"ef_{ch}"] for r in rows], color=COLORS["EF"], lw=1.0, ls="--", label="EF")
            ax.set_ylabel(f"{ch} [{unit}]")
        axes[0].set_title(title)
        axes[0].legend(loc="upper right", ncol=3, frameon=False)
        axes[-1].set_xlabel("t [s]")
        fig.tight_layout()
        _save(fig, path)


def mse_boxes(box_rows: list[dict], path) -> None:
    """Box plot from precomputed statistics (one box per model and speed)."""
    speeds = sorted({r["V_flow"] for r in box_rows})
    models = [m for m in ("LSTM", "EF") if any(r["model"] == m for r in box_rows)]
    stats, positions, colors = [], [], []
    for i, v in enumerate(speeds):
        for j, m in enumerate(models):
            r = next(r for r in box_rows if r["model"] == m and r["V_flow"] == v)
            if not r["n"]:
                continue
            fliers = [float(x) for x in r["outliers"].split(";")] if r["outliers"] else []
            stats.append({"med": r["median"], "q1": r["q1"], "q3": r["q3"], "whislo": r["whisker_lo"],
                          "whishi": r["whisker_hi"], "fliers": fliers, "label": m})
            positions.append(i + (j - 0.5 * (len(models) - 1)) * 0.3)
            colors.append(COLORS[m])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        if stats:
            parts = ax.bxp(stats, positions=positions, widths=0.25, patch_artist=True, showfliers=True,
                           medianprops={"color": "black"})
            for box, c in zip(parts["boxes"], colors):
                box.set_facecolor(c)
                box.set_alpha(0.6)
        ax.set_xticks(range(len(speeds)), [f"{v:g}" for v in speeds])
        ax.set_xlabel("flow speed [m/s]")
        ax.set_ylabel("aggregate MSE per record set")
        ax.set_yscale("log")
        handles = [plt.Rectangle((0, 0), 1, 1, color=COLORS[m], alpha=0.6) for m in models]
        ax.legend(handles, models, frameon=False)
        fig.tight_layout()
        _save(fig, path)


def trajectory(rows: list[dict], title: str, path) -> None:
    t = np.array([r["t"] for r in rows])
    x = np.array([r["x"] for r in rows])
    y = np.array([r["y"] for r in rows])
    yaw = np.array([r["theta_yaw"] for r in rows])
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.2, 3.4))
        a1.plot(x, y, color="tab:blue", lw=1.2)
        a1.plot([x[0]], [y[0]], "o", color="0.3", ms=4)
        a1.set_xlabel("x [m]")
        a1.set_ylabel("y [m]")
        a1.set_aspect("equal", adjustable="datalim")
        a1.set_title(title)
        a2.plot(t, np.degrees(yaw), color="tab:red", lw=1.0)
        a2.set_xlabel("t [s]")
        a2.set_ylabel("yaw [deg]")
        fig.tight_layout()
        _save(fig, path)


def optimization(history: list[dict], front: np.ndarray, path) -> None:
    gens = [h["generation"] for h in history]
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.2, 3.2))
        a1.plot(gens, [h["best_S"] for h in history], color="tab:blue", lw=1.0, label="population")
        a1.plot(gens, [h["archive_best_S"] for h in history], color="0.2", lw=1.0, ls="--", label="archive")
        a1.set_xlabel("generation")
        a1.set_ylabel("best S")
        a1.legend(frameon=False)
        finite = front[np.all(np.isfinite(front), axis=1)] if len(front) else front
        if len(finite):
            sc = a2.scatter(finite[:, 2], finite[:, 0], c=finite[:, 1], s=12, cmap="viridis")
            fig.colorbar(sc, ax=a2, label="f2")
        a2.set_xlabel("f3")
        a2.set_ylabel("f1")
        a2.set_title("final front")
        fig.tight_layout()
        _save(fig, path)

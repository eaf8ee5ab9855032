"""Convergence and profile figures rendered with matplotlib (Agg)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

params = {
    "font.family": "serif",
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (4.8, 3.6),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}


def convergence_figure(records, path, title: str = "") -> None:
    """Log-log error lines per ``(k, geo_mode)``: solid for withGeo,
    dashed for noGeo; one panel each for the velocity and the pressure."""
    with plt.rc_context(params):
        fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.6))
        groups: dict = {}
        for r in records:
            if r.status == "ok":
                groups.setdefault((r.k, r.geo_mode), []).append(r)
        colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        for (k, mode), rs in sorted(groups.items()):
            rs = sorted(rs, key=lambda r: r.level)
            h = np.array([r.h for r in rs])
            style = "-" if mode == "withGeo" else "--"
            for ax, attr in zip(axes, ("e_v", "e_p")):
                ax.loglog(h, [getattr(r, attr) for r in rs], style, marker="o", color=colors[(k - 1) % len(colors)],
                          label=f"k={k} {mode}")
        for ax, name in zip(axes, ("velocity error", "pressure error")):
            ax.set_xlabel("h")
            ax.set_ylabel(name)
            ax.grid(True, which="both", alpha=0.3)
        axes[0].legend()
        if title:
            fig.suptitle(title)
        fig.savefig(path)
        plt.close(fig)


def profile_figure(profiles: dict, path, title: str = "") -> None:
    """Pressure against height, one line per label."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for label, prof in profiles.items():
            ax.plot(prof[:, 1], prof[:, 0], label=label)
        ax.set_xlabel("pressure")
        ax.set_ylabel("z")
        ax.grid(True, alpha=0.3)
        ax.legend()
        if title:
            ax.set_title(title)
        fig.savefig(path)
        plt.close(fig)

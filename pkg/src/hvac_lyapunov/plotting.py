"""Static figures for run and sweep reports, written to PNG files (Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

HOURS_PER_SLOT = 1.0 / 12


def plot_run(report, path, zone: int = 0) -> Path:
    """Four stacked panels: queues, per-zone air rates, total air vs cap, one zone's temperature."""
    tr = report.trajectory
    if tr is None:
        raise ValueError("report carries no trajectory")
    z = report.config["zones"]
    cap = report.config["building"]["m_total_cap"]
    slots, n = tr["m"].shape
    hours = np.arange(slots) * HOURS_PER_SLOT

    fig, ax = plt.subplots(4, 1, figsize=(9, 10), sharex=True)
    for i in range(n):
        ax[0].plot(hours, tr["queue"][:, i], lw=0.6, label=f"zone {i}")
        ax[1].plot(hours, tr["m"][:, i], lw=0.6, label=f"zone {i}")
    ax[0].set_ylabel("virtual queue")
    ax[0].legend(loc="upper right", fontsize=7, ncol=n)
    ax[1].set_ylabel("air rate (g/s)")

    ax[2].plot(hours, tr["m"].sum(axis=1), lw=0.6, color="k")
    ax[2].axhline(cap, ls="--", color="r", lw=0.8, label="cap")
    ax[2].set_ylabel("total air (g/s)")
    ax[2].legend(loc="upper right", fontsize=7)

    ax[3].plot(hours, tr["t_next"][:, zone], lw=0.6, label="indoor")
    ax[3].plot(hours, tr["t_ref"][:, zone], lw=0.6, alpha=0.6, label="target")
    ax[3].axhline(z["t_min"][zone], ls="--", color="b", lw=0.8)
    ax[3].axhline(z["t_max"][zone], ls="--", color="r", lw=0.8)
    ax[3].set_ylabel(f"zone {zone} temp (C)")
    ax[3].set_xlabel("hour")
    ax[3].legend(loc="upper right", fontsize=7)

    fig.suptitle(f"{report.controller}, seed {report.seed}")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(rows: list[dict], path) -> Path:
    """Energy cost and ATD against the swept parameter, one line per controller."""
    if not rows:
        raise ValueError("no sweep rows to plot")
    param = rows[0]["param"]
    fig, (ax_e, ax_d) = plt.subplots(1, 2, figsize=(10, 4))
    for ctrl in dict.fromkeys(r["controller"] for r in rows):
        sel = [r for r in rows if r["controller"] == ctrl]
        xs = sorted({r["value"] for r in sel})
        energy = [np.mean([r["avg_energy_cost"] for r in sel if r["value"] == x]) for x in xs]
        atd = [np.mean([r["atd"] for r in sel if r["value"] == x]) for x in xs]
        ax_e.plot(xs, energy, marker="o", label=ctrl)
        ax_d.plot(xs, atd, marker="o", label=ctrl)
    label = "T_max (C)" if param == "tmax" else "discomfort weight"
    ax_e.set_xlabel(label)
    ax_e.set_ylabel("energy cost per slot")
    ax_d.set_xlabel(label)
    ax_d.set_ylabel("ATD (C)")
    ax_e.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

"""Figures written next to the CSV reports (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the bytes reproducible
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_occupancy(occupancy, arms_per_bank: int, columns: int, path, title: str = "") -> Path:
    """Arms lit per bank, laid out as the core's bank grid."""
    occ = np.asarray(occupancy).reshape(-1, columns)
    fig, ax = plt.subplots(figsize=(2.2 + 0.6 * columns, 0.8 + 0.16 * len(occ)))
    im = ax.imshow(occ, cmap="viridis", vmin=0, vmax=arms_per_bank, aspect="auto")
    ax.set_xlabel("bank column")
    ax.set_ylabel("bank row")
    ax.set_title(title or "arms in use per bank")
    fig.colorbar(im, ax=ax, label="arms")
    return _save(fig, path)


def plot_breakdown(breakdown: dict, path, title: str = "energy per frame") -> Path:
    names = [k for k, v in breakdown.items() if v > 0] or list(breakdown)
    vals = np.array([breakdown[k] for k in names]) * 1e9
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.barh(names, vals, color="tab:blue")
    ax.set_xlabel("energy (nJ)")
    ax.set_title(title)
    ax.invert_yaxis()
    return _save(fig, path)


def plot_sweep(rows: list[dict], x: str, ys: list[str], path, group: str | None = None) -> Path:
    """One panel per metric in ``ys`` against axis ``x``; optional grouping axis."""
    ys = [y for y in ys if any(_num(r.get(y)) is not None for r in rows)]
    fig, axes = plt.subplots(1, max(len(ys), 1), figsize=(3.4 * max(len(ys), 1), 3.0),
                             squeeze=False)
    groups = sorted({r.get(group) for r in rows}, key=str) if group else [None]
    for ax, y in zip(axes[0], ys):
        for g in groups:
            pts = [(_num(r[x]), _num(r[y])) for r in rows
                   if (g is None or r.get(group) == g) and _num(r.get(y)) is not None]
            pts.sort()
            if pts:
                xs, vs = zip(*pts)
                ax.plot(xs, vs, marker="o", label=None if g is None else f"{group}={g}")
        ax.set_xlabel(x)
        ax.set_ylabel(y)
        if group:
            ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None

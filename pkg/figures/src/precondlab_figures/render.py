"""Render publication-style PNGs from precondlab experiment CSVs.

Four figure ids are supported, one per documented CSV schema:

* ``robustness_final``  <- robustness_summary.csv: SNR against final test MSE,
  one curve per preconditioner power with a std band, one panel per
  (case, optimizer) pair.
* ``robustness_traj``   <- robustness_traj.csv: train (solid) / test (dashed)
  MSE trajectories at the lowest SNR present, seed-averaged.
* ``ood_columns``       <- ood_summary.csv: the two correlation-shift test
  columns with ID-validation accuracy annotated in gray.
* ``transfer_bars``     <- transfer_summary.csv: source/target test MSE bars
  per power, one panel per direction.

Rendering never mutates its inputs and writes the PNG atomically.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "SchemaError", "render", "FIGURE_IDS"]

SCHEMAS = {
    "robustness_final": {
        "case", "optimizer", "p", "snr", "n_seeds",
        "final_test_mse_mean", "final_test_mse_std",
    },
    "robustness_traj": {"case", "optimizer", "p", "snr", "seed", "step", "train_mse", "test_mse"},
    "ood_columns": {
        "optimizer", "p", "n_seeds", "id_val_acc_mean",
        "flip_noise_acc_mean", "flip_digit_acc_mean",
    },
    "transfer_bars": {
        "direction", "optimizer", "p", "task1_test_mse_mean", "task1_test_mse_std",
        "task2_test_mse_mean", "task2_test_mse_std",
    },
}
FIGURE_IDS = tuple(SCHEMAS)

plt.rcParams.update(
    {
        "figure.dpi": 130,
        "font.size": 9,
        "axes.titlesize": 10,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "legend.fontsize": 8,
        "lines.linewidth": 1.4,
    }
)


class SchemaError(ValueError):
    """Input CSV does not match the documented schema for the figure id."""


@dataclass(frozen=True)
class FigureSpec:
    figure_id: str
    inputs: list
    output: str | Path
    dpi: int = 130
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.figure_id not in SCHEMAS:
            raise ValueError(
                f"unknown figure id {self.figure_id!r}; expected one of {sorted(SCHEMAS)}"
            )
        if not self.inputs:
            raise ValueError("at least one input CSV is required")


def _load_rows(path: str | Path, figure_id: str) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = set(reader.fieldnames or [])
        missing = SCHEMAS[figure_id] - header
        if missing:
            raise SchemaError(
                f"{path}: missing column(s) for {figure_id}: {', '.join(sorted(missing))}"
            )
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows (header only)")
    return rows


def _p_colors(p_values):
    """Blue (largest p) to green (smallest p)."""
    ordered = sorted(set(p_values), reverse=True)
    cmap = plt.get_cmap("winter")
    pos = np.linspace(0.0, 1.0, max(len(ordered), 2))
    return {p: cmap(pos[i]) for i, p in enumerate(ordered)}


def _finite(values):
    arr = np.asarray(values, dtype=float)
    return arr[np.isfinite(arr)]


def _render_robustness_final(rows, fig):
    panels = sorted({(r["case"], r["optimizer"]) for r in rows})
    colors = _p_colors([float(r["p"]) for r in rows])
    axes = fig.subplots(1, len(panels), squeeze=False)[0]
    for ax, (case, optimizer) in zip(axes, panels):
        sub = [r for r in rows if r["case"] == case and r["optimizer"] == optimizer]
        for p in sorted({float(r["p"]) for r in sub}, reverse=True):
            pts = sorted(
                (float(r["snr"]), float(r["final_test_mse_mean"]), float(r["final_test_mse_std"]),
                 int(r["n_seeds"]))
                for r in sub
                if float(r["p"]) == p
            )
            snr = [q[0] for q in pts]
            mean = np.array([q[1] for q in pts])
            std = np.array([q[2] for q in pts])
            ax.plot(snr, mean, marker="o", markersize=3, color=colors[p], label=f"p={p:g}")
            if any(q[3] > 1 for q in pts) and np.any(std > 0):
                ax.fill_between(snr, mean - std, mean + std, color=colors[p], alpha=0.2, lw=0)
        finite = _finite([r["final_test_mse_mean"] for r in sub])
        if finite.size and finite.min() > 0:
            ax.set_yscale("log")
        ax.set_title(f"{case} / {optimizer}")
        ax.set_xlabel("SNR")
        ax.set_ylabel("final test MSE")
    axes[-1].legend(loc="best")
    fig.set_size_inches(3.2 * len(panels), 2.8)


def _render_robustness_traj(rows, fig):
    snr = min(float(r["snr"]) for r in rows)
    rows = [r for r in rows if float(r["snr"]) == snr]
    panels = sorted({(r["case"], r["optimizer"]) for r in rows})
    colors = _p_colors([float(r["p"]) for r in rows])
    axes = fig.subplots(1, len(panels), squeeze=False)[0]
    for ax, (case, optimizer) in zip(axes, panels):
        sub = [r for r in rows if r["case"] == case and r["optimizer"] == optimizer]
        for p in sorted({float(r["p"]) for r in sub}, reverse=True):
            by_step: dict[int, list] = {}
            for r in sub:
                if float(r["p"]) == p:
                    by_step.setdefault(int(r["step"]), []).append(
                        (float(r["train_mse"]), float(r["test_mse"]))
                    )
            steps = sorted(by_step)
            train = [np.nanmean([v[0] for v in by_step[s]]) for s in steps]
            test = [np.nanmean([v[1] for v in by_step[s]]) for s in steps]
            ax.plot(steps, train, color=colors[p], ls="-", label=f"p={p:g} train")
            ax.plot(steps, test, color=colors[p], ls="--", label=f"p={p:g} test")
        finite = _finite([r["train_mse"] for r in sub] + [r["test_mse"] for r in sub])
        if finite.size and finite.min() > 0:
            ax.set_yscale("log")
        ax.set_title(f"{case} / {optimizer} (SNR={snr:g})")
        ax.set_xlabel("step")
        ax.set_ylabel("MSE")
    axes[-1].legend(loc="best", ncol=2)
    fig.set_size_inches(3.2 * len(panels), 2.8)


def _method_label(row):
    if row["optimizer"] == "adahessian":
        return f"adahessian(p={float(row['p']):g})"
    return row["optimizer"]


def _render_ood_columns(rows, fig):
    ax = fig.subplots()
    cmap = plt.get_cmap("tab10")
    for i, r in enumerate(rows):
        color = cmap(i % 10)
        fn = float(r["flip_noise_acc_mean"])
        fd = float(r["flip_digit_acc_mean"])
        val = float(r["id_val_acc_mean"])
        ax.plot([0, 1], [fn, fd], marker="o", color=color, label=_method_label(r), alpha=0.85)
        ax.annotate(f"{val:.3f}", (0, fn), textcoords="offset points",
                    xytext=(-38, 0), fontsize=7, color="gray")
    ax.set_xticks([0, 1])
    ax.set_xticklabels(["noise flipped\n(digit invariant)", "digit flipped\n(noise invariant)"])
    ax.set_xlim(-0.45, 1.3)
    ax.set_ylim(0, 1.02)
    ax.set_ylabel("OOD accuracy")
    ax.set_title("correlation-shift accuracy by optimizer (gray: ID val)")
    ax.legend(loc="center right", fontsize=7)
    fig.set_size_inches(5.2, 3.4)


def _render_transfer_bars(rows, fig):
    directions = sorted({r["direction"] for r in rows})
    colors = _p_colors([float(r["p"]) for r in rows])
    axes = fig.subplots(1, len(directions), squeeze=False)[0]
    width = 0.38
    for ax, direction in zip(axes, directions):
        sub = sorted(
            (r for r in rows if r["direction"] == direction),
            key=lambda r: -float(r["p"]),
        )
        xs = np.arange(len(sub))
        for off, (key, label) in enumerate(
            (("task1_test_mse", "source task"), ("task2_test_mse", "target task"))
        ):
            means = [float(r[f"{key}_mean"]) for r in sub]
            stds = [float(r[f"{key}_std"]) for r in sub]
            bars = ax.bar(
                xs + (off - 0.5) * width, means, width,
                yerr=stds, capsize=2,
                color=[colors[float(r["p"])] for r in sub],
                alpha=1.0 if off == 0 else 0.55,
                label=label,
            )
            for b in bars:
                b.set_edgecolor("black")
                b.set_linewidth(0.4)
        ax.set_xticks(xs)
        ax.set_xticklabels([f"p={float(r['p']):g}" for r in sub], rotation=30)
        ax.set_ylabel("test MSE")
        ax.set_title(direction)
        ax.legend(fontsize=7)
    fig.set_size_inches(3.4 * len(directions), 3.0)


_RENDERERS = {
    "robustness_final": _render_robustness_final,
    "robustness_traj": _render_robustness_traj,
    "ood_columns": _render_ood_columns,
    "transfer_bars": _render_transfer_bars,
}


def render(spec: FigureSpec) -> Path:
    """Validate the inputs, draw the figure and atomically write the PNG."""
    rows: list[dict] = []
    for path in spec.inputs:
        rows.extend(_load_rows(path, spec.figure_id))
    out = Path(spec.output)
    fig = plt.figure()
    try:
        _RENDERERS[spec.figure_id](rows, fig)
        fig.tight_layout()
        out.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=out.parent, suffix=".png")
        os.close(fd)
        try:
            fig.savefig(tmp, dpi=spec.dpi, format="png")
            os.replace(tmp, out)
        except BaseException:
            os.unlink(tmp)
            raise
    finally:
        plt.close(fig)
    return out

"""Report figures: ROC overlay as standalone SVG and PNG, training loss
curves as PNG, and the delimited ROC point listing.

The SVG is generated directly (one polyline per curve, a dashed chance
diagonal, inline legend) so reports stay dependency-free and byte-stable;
the PNG renderers go through matplotlib's Agg backend.
"""

from __future__ import annotations

import csv

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

# Okabe-Ito palette, readable in grayscale and for common color blindness.
_COLORS = ("#0072B2", "#D55E00", "#009E73", "#CC79A7", "#E69F00", "#56B4E9")

_SIZE = 640
_MARGIN = 70
_PLOT = _SIZE - 2 * _MARGIN


def _px(fpr: float, tpr: float) -> tuple:
    x = _MARGIN + fpr * _PLOT
    y = _MARGIN + (1.0 - tpr) * _PLOT
    return x, y


def emit_roc_svg(path, curves: list) -> None:
    """Write an ROC overlay SVG.

    ``curves`` is a list of (name, fpr, tpr, thresholds) tuples. Exactly
    one <polyline> per curve is emitted, plus a dashed diagonal reference
    line; the legend carries each curve's trapezoid AUC.
    """
    if not curves:
        raise ValueError("no curves to plot")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
    ]
    for frac in (0.25, 0.5, 0.75):
        x0, y0 = _px(frac, 0.0)
        x1, y1 = _px(frac, 1.0)
        parts.append(
            f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        x0, y0 = _px(0.0, frac)
        x1, y1 = _px(1.0, frac)
        parts.append(
            f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
    ax0 = _px(0.0, 0.0)
    ax_x = _px(1.0, 0.0)
    ax_y = _px(0.0, 1.0)
    parts.append(
        f'<line x1="{ax0[0]:.2f}" y1="{ax0[1]:.2f}" x2="{ax_x[0]:.2f}" y2="{ax_x[1]:.2f}" '
        f'stroke="black" stroke-width="1.5"/>'
    )
    parts.append(
        f'<line x1="{ax0[0]:.2f}" y1="{ax0[1]:.2f}" x2="{ax_y[0]:.2f}" y2="{ax_y[1]:.2f}" '
        f'stroke="black" stroke-width="1.5"/>'
    )
    d0 = _px(0.0, 0.0)
    d1 = _px(1.0, 1.0)
    parts.append(
        f'<line x1="{d0[0]:.2f}" y1="{d0[1]:.2f}" x2="{d1[0]:.2f}" y2="{d1[1]:.2f}" '
        f'stroke="#888888" stroke-width="1" stroke-dasharray="6 4"/>'
    )
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, y = _px(tick, 0.0)
        parts.append(
            f'<text x="{x:.2f}" y="{y + 22:.2f}" font-size="13" '
            f'text-anchor="middle" font-family="sans-serif">{tick:g}</text>'
        )
        x, y = _px(0.0, tick)
        parts.append(
            f'<text x="{x - 10:.2f}" y="{y + 4:.2f}" font-size="13" '
            f'text-anchor="end" font-family="sans-serif">{tick:g}</text>'
        )
    parts.append(
        f'<text x="{_SIZE / 2:.2f}" y="{_SIZE - 18:.2f}" font-size="15" '
        f'text-anchor="middle" font-family="sans-serif">False positive rate</text>'
    )
    parts.append(
        f'<text x="20" y="{_SIZE / 2:.2f}" font-size="15" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 20 {_SIZE / 2:.2f})">'
        f'True positive rate</text>'
    )
    for i, (name, fpr, tpr, _) in enumerate(curves):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(
            f"{x:.2f},{y:.2f}" for x, y in (_px(f, t) for f, t in zip(fpr, tpr))
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        area = float(_trapezoid(np.asarray(tpr), np.asarray(fpr)))
        ly = _MARGIN + 18 + 20 * i
        lx = _MARGIN + _PLOT - 190
        parts.append(
            f'<line x1="{lx:.2f}" y1="{ly - 4:.2f}" x2="{lx + 24:.2f}" y2="{ly - 4:.2f}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 30:.2f}" y="{ly:.2f}" font-size="13" '
            f'font-family="sans-serif">{name} (AUC={area:.3f})</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def write_roc_csv(path, curves: list) -> None:
    """Sidecar listing of every ROC point: curve,fpr,tpr,threshold.

    Floats are written with repr so they parse back bit-identical; the
    anchor threshold +inf appears as "inf".
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["curve", "fpr", "tpr", "threshold"])
        for name, fpr, tpr, thresholds in curves:
            for f, t, thr in zip(fpr, tpr, thresholds):
                writer.writerow([name, repr(float(f)), repr(float(t)), repr(float(thr))])


def read_roc_csv(path) -> list:
    """Inverse of write_roc_csv, preserving curve order."""
    order: list[str] = []
    points: dict[str, list] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["curve", "fpr", "tpr", "threshold"]:
            raise ValueError(f"unexpected header {header!r}")
        for name, f, t, thr in reader:
            if name not in points:
                order.append(name)
                points[name] = []
            points[name].append((float(f), float(t), float(thr)))
    curves = []
    for name in order:
        arr = np.array(points[name], dtype=np.float64)
        curves.append((name, arr[:, 0], arr[:, 1], arr[:, 2]))
    return curves


def render_roc_png(path, curves: list, dpi: int = 120) -> None:
    """Matplotlib rendering of the same overlay, for report bundles."""
    fig, ax = plt.subplots(figsize=(5.4, 5.4), dpi=dpi)
    for i, (name, fpr, tpr, _) in enumerate(curves):
        area = float(_trapezoid(np.asarray(tpr), np.asarray(fpr)))
        ax.plot(fpr, tpr, color=_COLORS[i % len(_COLORS)], lw=1.8,
                label=f"{name} (AUC={area:.3f})")
    ax.plot([0, 1], [0, 1], ls="--", c="#888888", lw=1)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_loss_png(path, histories: list, dpi: int = 120) -> None:
    """Training and validation loss per epoch, one panel pair per run.

    ``histories`` is a list of objects with seed, train_loss, val_loss.
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=dpi)
    for i, h in enumerate(histories):
        color = _COLORS[i % len(_COLORS)]
        epochs = np.arange(1, len(h.train_loss) + 1)
        ax.plot(epochs, h.train_loss, color=color, lw=1.4, label=f"seed {h.seed} train")
        ax.plot(epochs, h.val_loss, color=color, lw=1.4, ls="--", label=f"seed {h.seed} val")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Cross-entropy loss")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)

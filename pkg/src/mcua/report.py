"""SVG line charts from sweep.csv and roc.csv (accuracy/abstention versus delta, ROC)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataIOError  # noqa: E402
from .evaluation import read_csv  # noqa: E402

# fixed metadata and id salt keep the SVG bytes stable across runs
SVG_META = {"Date": None, "Creator": "mcua"}
plt.rcParams["svg.hashsalt"] = "mcua"


def _num(text):
    return None if text in ("NA", "", None) else float(text)


def sweep_chart(sweep_csv, out_path):
    rows = read_csv(sweep_csv)
    if not rows:
        raise DataIOError(f"{sweep_csv} has no rows")
    delta = [float(r["delta"]) for r in rows]
    wa = [_num(r["wa_acc_included"]) for r in rows]
    abs_pct = [float(r["abs_pct"]) for r in rows]
    excl = [float(r["wa_acc_excluded_plot"]) for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    panels = (
        (wa, "WA_ACC, included images"),
        (abs_pct, "abstained images (%)"),
        (excl, "static accuracy, excluded images"),
    )
    for ax, (ys, title) in zip(axes, panels):
        pts = [(d, y) for d, y in zip(delta, ys) if y is not None]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
        ax.set_xscale("log")
        ax.set_xlabel("delta")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return out_path


def roc_chart(roc_csv, out_path):
    rows = read_csv(roc_csv)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for c in sorted({r["class"] for r in rows}, key=int):
        pts = [r for r in rows if r["class"] == c]
        ax.plot([float(r["fpr"]) for r in pts], [float(r["tpr"]) for r in pts], label=f"class {c}")
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    if rows:
        ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return out_path


def render_report(run_dir):
    """Charts for whichever of sweep.csv / roc.csv exist in ``run_dir``."""
    run_dir = Path(run_dir)
    out = []
    if (run_dir / "sweep.csv").exists():
        out.append(sweep_chart(run_dir / "sweep.csv", run_dir / "sweep.svg"))
    if (run_dir / "roc.csv").exists():
        out.append(roc_chart(run_dir / "roc.csv", run_dir / "roc.svg"))
    if not out:
        raise DataIOError(f"no sweep.csv or roc.csv in {run_dir}; run 'mcua evaluate' first")
    return out

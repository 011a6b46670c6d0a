"""Figures rendered next to the CSV outputs.

Loss against simulated wall-clock time for one or more runs, and final loss
against a swept parameter. Uses the non-interactive Agg backend and strips
PNG metadata so repeated renders are byte-identical.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "lines.linewidth": 1.4,
    "savefig.dpi": 150,
}
_META = {"Software": None}


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _label_for(run_dir: Path) -> str:
    summary = run_dir / "summary.json"
    if summary.exists():
        s = json.loads(summary.read_text(encoding="utf-8"))
        label = s["strategy"]
        psi = s.get("config", {}).get("strategy", {}).get("psi")
        if label == "FL-PMA" and psi is not None:
            label += f" (psi={psi:g})"
        if s.get("sigma"):
            label += f", sigma={s['sigma']:.3g}"
        return label
    return run_dir.name


def plot_runs(run_dirs, out_path, relative_gap: bool = True) -> Path:
    """Optimality gap (or loss) against simulated time for each run directory."""
    out_path = Path(out_path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for run_dir in map(Path, run_dirs):
            rows = _read_csv(run_dir / "epochs.csv")
            if not rows:
                continue
            t = [float(r["clock_s"]) for r in rows]
            y = [float(r["gap"] if relative_gap else r["loss"]) for r in rows]
            ax.plot(t, y, label=_label_for(run_dir))
        ax.set_xlabel("simulated time (s)")
        ax.set_ylabel("optimality gap" if relative_gap else "training loss")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, metadata=_META)
        plt.close(fig)
    return out_path


def plot_sweep(sweep_dir, out_path=None) -> Path:
    """Final averaged-model loss against the swept value, one line per strategy."""
    sweep_dir = Path(sweep_dir)
    info = json.loads((sweep_dir / "sweep_summary.json").read_text(encoding="utf-8"))
    series = defaultdict(list)
    for run in info["runs"]:
        if run.get("final_loss") is None or run.get("axis_value") is None:
            continue
        series[run["strategy"]].append((float(run["axis_value"]), run["final_loss"]))
    out_path = Path(out_path) if out_path else sweep_dir / "sweep.png"
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
        ax.set_xlabel(info["axis"])
        ax.set_ylabel("final loss (averaged model)")
        ax.set_yscale("log")
        if series:
            ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, metadata=_META)
        plt.close(fig)
    return out_path

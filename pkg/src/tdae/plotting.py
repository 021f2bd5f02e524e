"""Learning-curve plots and the per-seed bimodality report.

All figures are standalone SVG, rendered as a pure function of the input
metrics files: a fixed hash salt and a scrubbed Date field make re-rendering
the same inputs byte-identical.
"""

from __future__ import annotations

import json
import math
import os
import warnings

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "tdae"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import read_metrics  # noqa: E402

_SAVE_KW = dict(format="svg", metadata={"Date": None})


def _manifest_for(metrics_path: str) -> dict | None:
    p = os.path.join(os.path.dirname(metrics_path), "manifest.json")
    if os.path.exists(p):
        with open(p, "r", encoding="utf-8") as f:
            return json.load(f)
    return None


def _group_value(metrics_path: str, group_by: str):
    man = _manifest_for(metrics_path)
    if group_by == "dir":
        return os.path.basename(os.path.dirname(os.path.dirname(
            os.path.abspath(metrics_path)))) or "all"
    if man is None:
        return "all"
    if group_by == "seed":
        return f"seed{man['seed']}"
    node = man.get("config", {})
    for part in group_by.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict) and part in node:
            node = node[part]
        else:
            return "all"
    return json.dumps(node) if isinstance(node, (dict, list)) else f"{group_by}={node}"


def _common_grid(curves: list) -> list:
    """curves: [(frames, values)]. Returns values resampled onto the grid
    with the fewest points when the grids disagree."""
    grids = [c[0] for c in curves]
    base = grids[0]
    if all(len(g) == len(base) and np.array_equal(g, base) for g in grids):
        return base, [c[1] for c in curves]
    target = min(grids, key=len)
    warnings.warn(
        f"metrics files have mismatched frame grids "
        f"({sorted({len(g) for g in grids})} points); resampling all curves "
        f"to the coarsest grid ({len(target)} points)")
    return target, [np.interp(target, f, v) for f, v in curves]


def plot_curves(metric_files: list, group_by: str, out_path: str) -> str:
    """Mean eval return vs frames, one line per group with a +-standard-error
    band over that group's seeds."""
    if not metric_files:
        raise ValueError("no metrics files given")
    groups: dict = {}
    for path in sorted(metric_files):
        m = read_metrics(path)
        key = str(_group_value(path, group_by))
        groups.setdefault(key, []).append((m["frames"], m["mean_return"]))

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for key in sorted(groups):
        frames, values = _common_grid(groups[key])
        stack = np.stack(values)
        mean = stack.mean(axis=0)
        k = stack.shape[0]
        label = f"{key} ({k} seeds)" if k > 1 else f"{key} (1 seed, no band)"
        (line,) = ax.plot(frames, mean, label=label)
        if k > 1:
            sem = stack.std(axis=0, ddof=1) / math.sqrt(k)
            ax.fill_between(frames, mean - sem, mean + sem,
                            color=line.get_color(), alpha=0.25, linewidth=0)
    ax.set_xlabel("frames")
    ax.set_ylabel("mean eval return")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
    return out_path


def bimodality_report(metric_files: list, theta: float | None = None,
                      out_prefix: str | None = None) -> dict:
    """Labels every run 'learning' or 'failure' by its mean return over the
    final quarter of evaluations vs a threshold. The default threshold is the
    midpoint between the best and worst final means in the set; pass theta
    for an absolute override. Also renders the per-seed spaghetti plot."""
    if not metric_files:
        raise ValueError("no metrics files given")
    runs = []
    for path in sorted(metric_files):
        m = read_metrics(path)
        n = len(m["frames"])
        if n < 4:
            raise ValueError(
                f"{path}: only {n} evaluations; refusing to classify with fewer than 4")
        tail = -(-n // 4)  # ceil(n/4)
        man = _manifest_for(path)
        seed = man["seed"] if man else int(m["seed"][0])
        runs.append({"path": path, "seed": seed, "frames": m["frames"],
                     "curve": m["mean_return"],
                     "final_mean": float(m["mean_return"][-tail:].mean())})

    finals = [r["final_mean"] for r in runs]
    if theta is None:
        theta = (max(finals) + min(finals)) / 2.0
    rows = []
    for r in runs:
        label = "learning" if r["final_mean"] >= theta else "failure"
        rows.append({"seed": r["seed"], "final_mean": r["final_mean"],
                     "label": label})
    counts = {"learning": sum(1 for r in rows if r["label"] == "learning"),
              "failure": sum(1 for r in rows if r["label"] == "failure")}
    report = {"theta": float(theta), "rows": rows, "counts": counts}

    if out_prefix:
        with open(out_prefix + ".csv", "w", encoding="utf-8", newline="\n") as f:
            f.write("seed,final_mean,label\n")
            for r in rows:
                f.write(f"{r['seed']},{repr(r['final_mean'])},{r['label']}\n")
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        for run, row in zip(runs, rows):
            color = "C0" if row["label"] == "learning" else "C3"
            ax.plot(run["frames"], run["curve"], color=color, alpha=0.7,
                    linewidth=1.2)
        ax.axhline(theta, color="k", linestyle="--", linewidth=1,
                   label=f"theta={theta:.3g}")
        ax.plot([], [], color="C0", label=f"learning ({counts['learning']})")
        ax.plot([], [], color="C3", label=f"failure ({counts['failure']})")
        ax.set_xlabel("frames")
        ax.set_ylabel("mean eval return")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_prefix + ".svg", **_SAVE_KW)
        plt.close(fig)
        report["files"] = {"csv": out_prefix + ".csv", "svg": out_prefix + ".svg"}
    return report

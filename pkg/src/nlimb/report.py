"""Post-hoc reporting: turns a run directory's CSV logs into plot-ready
summary CSVs and matplotlib figures."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path: str) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def generate_report(run_dir: str, out_dir: str | None = None) -> list[str]:
    """Render figures and summary CSVs for a completed run. Returns the list
    of files written."""
    out_dir = out_dir or os.path.join(run_dir, "report")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    log = _read_csv(os.path.join(run_dir, "train_log.csv"))
    if not log:
        raise FileNotFoundError(f"no records in {run_dir}/train_log.csv")
    ts = log["timesteps"]

    curve_path = os.path.join(out_dir, "learning_curve.csv")
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("timesteps,mean_return,min_return,max_return,active_components\n")
        for i in range(len(ts)):
            fh.write(
                f"{int(ts[i])},{log['mean_return'][i]!r},{log['min_return'][i]!r},"
                f"{log['max_return'][i]!r},{int(log['active_components'][i])}\n"
            )
    written.append(curve_path)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ts, log["mean_return"], label="mean sampled-design return")
    ax.fill_between(ts, log["min_return"], log["max_return"], alpha=0.2, label="min/max")
    ax.set_xlabel("environment timesteps")
    ax.set_ylabel("return")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "learning_curve.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.step(ts, log["active_components"], where="post")
    ax.set_xlabel("environment timesteps")
    ax.set_ylabel("active components")
    fig.tight_layout()
    path = os.path.join(out_dir, "active_components.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    # per-parameter evolution of active component means
    names = sorted(
        {c[len("comp0_mean_"):] for c in log if c.startswith("comp0_mean_")}
    )
    num_comps = len({c.split("_")[0] for c in log if c.endswith("_active")})
    if names and num_comps:
        fig, axes = plt.subplots(len(names), 1, figsize=(7, 2.5 * len(names)), squeeze=False)
        for j, name in enumerate(names):
            ax = axes[j][0]
            for k in range(num_comps):
                mean = log[f"comp{k}_mean_{name}"]
                active = log[f"comp{k}_active"].astype(bool)
                mean = np.where(active, mean, np.nan)
                std = np.exp(0.5 * log[f"comp{k}_logvar_{name}"])
                ax.plot(ts, mean, label=f"component {k}")
                ax.fill_between(ts, mean - std, mean + std, alpha=0.12)
            ax.set_ylabel(name)
        axes[-1][0].set_xlabel("environment timesteps")
        axes[0][0].legend(fontsize=7, ncol=2)
        fig.tight_layout()
        path = os.path.join(out_dir, "design_evolution.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    hist_path = os.path.join(run_dir, "histograms.csv")
    if os.path.exists(hist_path):
        hist = _read_csv(hist_path)
        if hist:
            fig, ax = plt.subplots(figsize=(7, 4))
            ax.scatter(hist["timesteps"], hist["return"], s=6, alpha=0.35)
            ax.set_xlabel("environment timesteps")
            ax.set_ylabel("sampled-design episode return")
            fig.tight_layout()
            path = os.path.join(out_dir, "histogram_rewards.png")
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)

            summary = os.path.join(out_dir, "histogram_summary.csv")
            with open(summary, "w", encoding="utf-8") as fh:
                fh.write("timesteps,mean_return,std_return,min_return,max_return\n")
                for t in np.unique(hist["timesteps"]):
                    r = hist["return"][hist["timesteps"] == t]
                    fh.write(
                        f"{int(t)},{float(r.mean())!r},{float(r.std())!r},"
                        f"{float(r.min())!r},{float(r.max())!r}\n"
                    )
            written.append(summary)

    return written

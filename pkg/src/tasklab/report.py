"""Tables, curve CSVs and figures for a finished experiment directory."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .workflow import ConfigError, _atomic_write, _csv_text, fmt  # noqa: E402

SUMMARY_COLUMNS = ("trial", "improvement_final", "improvement_best", "improvement_greedy", "improvement_test",
                   "n", "evaluations", "invalid_events", "instance_hash", "config_hash")
CURVE_COLUMNS = ("trial", "step", "n", "run_time", "improvement", "improvement_best", "config_hash")


def _read_rows(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def experiment_hashes(exp: Path) -> set[str]:
    """Every config hash embedded in the experiment's artifacts."""
    hashes = {json.loads((exp / "config.json").read_text())["config_hash"]}
    if (exp / "summary.json").exists():
        hashes.add(json.loads((exp / "summary.json").read_text())["config_hash"])
    for p in sorted((exp / "trials").glob("trial_*.json")):
        hashes.add(json.loads(p.read_text())["config_hash"])
    for p in sorted((exp / "checkpoints").glob("trial_*.json")):
        hashes.add(json.loads(p.read_text())["config_hash"])
    if (exp / "results.csv").exists():
        hashes.update(r["config_hash"] for r in _read_rows(exp / "results.csv"))
    return hashes


def report(experiment_dir: str | Path, out_dir: str | Path | None = None) -> Path:
    """Write ``summary_table.csv``, ``curves.csv`` and two PNG figures.

    Refuses directories whose artifacts carry more than one config hash.
    """
    exp = Path(experiment_dir)
    if not (exp / "config.json").exists() or not (exp / "results.csv").exists():
        raise FileNotFoundError(f"{exp} has no finished experiment (config.json and results.csv expected)")
    hashes = experiment_hashes(exp)
    if len(hashes) != 1:
        raise ConfigError(f"{exp} mixes artifacts from configs {sorted(hashes)}")
    (h,) = hashes
    out = Path(out_dir) if out_dir else exp / "report"
    out.mkdir(parents=True, exist_ok=True)

    rows = _read_rows(exp / "results.csv")
    summary = json.loads((exp / "summary.json").read_text())
    table = [[str(t["trial"]), t["improvement_final"], t["improvement_best"], t["improvement_greedy"],
              t["improvement_test"] or "", str(t["n"]), str(t["evaluations"]), str(t["invalid_events"]),
              t["instance_hash"], h] for t in summary["trials"]]
    _atomic_write(out / "summary_table.csv", _csv_text(SUMMARY_COLUMNS, table))

    initial = {int(t["trial"]): float(t["initial_run_time"]) for t in summary["trials"]}
    curves = []
    by_trial: dict[int, list] = {}
    for r in rows:
        t = int(r["trial"])
        rt = float(r["run_time"])
        imp = 1.0 - rt / initial[t]
        curves.append([r["trial"], r["step"], r["n"], r["run_time"], fmt(imp), r["improvement_best"], h])
        by_trial.setdefault(t, []).append((int(r["n"]), imp, float(r["improvement_best"])))
    _atomic_write(out / "curves.csv", _csv_text(CURVE_COLUMNS, curves))

    fig, ax = plt.subplots(figsize=(7, 4))
    for t, pts in sorted(by_trial.items()):
        n, _, best = np.array(pts).T
        ax.plot(n, best, lw=1, label=f"trial {t}")
    ax.axhline(summary["threshold"], color="k", ls="--", lw=0.8)
    ax.set_xlabel("state transitions")
    ax.set_ylabel("best improvement so far")
    ax.set_title(summary["record"])
    if len(by_trial) <= 10:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out / "curves.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    trials = [int(t["trial"]) for t in summary["trials"]]
    finals = [float(t["improvement_final"]) for t in summary["trials"]]
    bests = [float(t["improvement_best"]) for t in summary["trials"]]
    x = np.arange(len(trials))
    ax.bar(x - 0.2, np.clip(finals, -1, None), 0.4, label="final")
    ax.bar(x + 0.2, bests, 0.4, label="best seen")
    ax.set_xticks(x, [str(t) for t in trials])
    ax.set_xlabel("trial")
    ax.set_ylabel("improvement (final clipped at -1)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "improvements.png", dpi=120)
    plt.close(fig)
    return out

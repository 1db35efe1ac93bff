"""Command-line entry point: ``tasklab run|evaluate|classify|report|validate``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .env import TaskInstance
from .protocol import ProtocolError, classify, mean_std
from .workflow import ConfigError, ExperimentConfig, evaluate_checkpoints, fmt, run_workflow


class UsageError(ValueError):
    pass


def _load_config(path: str, seed: int | None) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path)
    if seed is not None:
        cfg.master_seed = seed
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = run_workflow(cfg, args.output, resume=not args.no_resume)
    summary = json.loads((out / "summary.json").read_text())
    print(summary["record"])
    print(f"output {out}")
    return 0


def cmd_validate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    cfg.validate()
    print(f"ok {cfg.config_hash}")
    return 0


def cmd_evaluate(args) -> int:
    instances = None
    if args.instances != "trained":
        provs = json.loads(Path(args.instances).read_text())
        if not isinstance(provs, list):
            raise UsageError("--instances file must hold a JSON list of instance provenance records")
        instances = [TaskInstance.from_provenance(p) for p in provs]
    _, record, out = evaluate_checkpoints(args.dirs, instances, args.out, args.threshold, args.cls)
    print(record.format())
    print(f"matrix {out / 'matrix.csv'}")
    return 0


def read_improvements(path: Path, use: str = "final", n_default: int | None = None):
    """Improvements and transition counts from a results, matrix or plain improvement CSV."""
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{path} has no data rows")
    cols = rows[0].keys()
    graph_cols = [c for c in cols if c.startswith("graph_")]
    if graph_cols:
        values, ns = [], []
        for r in rows:
            cells = [float(r[c]) for c in graph_cols if r[c] not in ("", "nan")]
            values += cells
            ns += [int(r["n"]) if r.get("n") else n_default] * len(cells)
    elif "step" in cols and f"improvement_{use}" in cols:
        last = {}
        for r in rows:
            last[int(r["trial"])] = r
        values = [float(last[t][f"improvement_{use}"]) for t in sorted(last)]
        ns = [int(last[t]["n"]) for t in sorted(last)]
    else:
        key = next((c for c in (f"improvement_{use}", "improvement") if c in cols), None)
        if key is None:
            raise UsageError(f"{path}: no improvement column found")
        values = [float(r[key]) for r in rows]
        ns = [int(r["n"]) if r.get("n") else n_default for r in rows]
    if any(n is None for n in ns):
        raise UsageError("transition counts missing; add an 'n' column or pass --n")
    return np.array(values), ns


def cmd_classify(args) -> int:
    values, ns = read_improvements(Path(args.csv), args.use, args.n)
    record = classify(values, ns, args.cls, args.threshold)
    mean, std = mean_std(values)
    print(record.format())
    print(f"mean {fmt(mean)} std {fmt(std)} successes {record.successes}/{record.s}")
    return 0


def cmd_report(args) -> int:
    from .report import report

    out = report(args.dir, args.out)
    print(f"report {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tasklab", description="Placement task design and evaluation toolkit.")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output", default=None, help="output directory (default: from config)")
    r.add_argument("--no-resume", action="store_true", help="rerun trials that already have results")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("evaluate", help="cross-evaluate checkpoints on a set of instances")
    e.add_argument("dirs", nargs="+")
    e.add_argument("--instances", default="trained",
                   help="'trained' (the trials' own instances) or a JSON file of instance provenance")
    e.add_argument("--out", default=None)
    e.add_argument("--threshold", type=float, default=0.30)
    e.add_argument("--class", dest="cls", type=int, default=4)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("classify", help="classification record from a results or matrix CSV")
    c.add_argument("csv")
    c.add_argument("--threshold", type=float, default=0.30)
    c.add_argument("--class", dest="cls", type=int, required=True)
    c.add_argument("--use", choices=("final", "best"), default="final")
    c.add_argument("--n", type=int, default=None, help="transition count when the CSV has none")
    c.set_defaults(func=cmd_classify)

    rep = sub.add_parser("report", help="tables, curve CSVs and figures for an experiment")
    rep.add_argument("dir")
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ProtocolError, UsageError, FileNotFoundError, ValueError, KeyError) as e:
        err = {"error": type(e).__name__, "message": str(e).strip("'\""), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

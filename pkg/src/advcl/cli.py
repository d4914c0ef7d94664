"""Command-line front end: ``advcl {train,ablate,sweep,metrics,report}``.

Exit status is 0 on success, 2 for configuration problems (the message
names the offending key) and 1 for failures while running.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import AclError, ConfigError, ReportError
from .harness import (ABLATION_ROWS, METHODS, ExperimentConfig, RunRecord, replay_sweep,
                      run_ablation_grid, run_many, summarize)
from .metrics import ResultMatrix, acc, bwt, format_mb, format_mean_std

log = logging.getLogger("advcl")

METHOD_LABELS = {"acl": "ACL", "ord-ft": "ORD-FT", "ord-jt": "ORD-JT", "acl-jt": "ACL-JT"}
STAT_COLUMNS = ("acc_mean", "acc_std", "bwt_mean", "bwt_std")


# -- configuration ----------------------------------------------------------------
def parse_value(text: str):
    """JSON literal when it parses (numbers, booleans, lists), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` assignments; every key on the path must exist."""
    cfg = json.loads(json.dumps(cfg))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", item)
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = cfg
        for depth, key in enumerate(keys):
            dotted = ".".join(keys[:depth + 1])
            if not isinstance(node, dict) or key not in node:
                # dataset generators take optional arguments that are absent by default
                if dotted.startswith("dataset.") and depth == len(keys) - 1:
                    break
                raise ConfigError("unknown key", dotted)
            if depth < len(keys) - 1:
                node = node[key]
        node[keys[-1]] = parse_value(raw)
    return cfg


def load_config(path, overrides=(), seeds=None) -> ExperimentConfig:
    base = ExperimentConfig().to_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found", "--config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}", "--config") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object", "<root>")
        base = _merge(base, user, "")
    merged = apply_overrides(base, overrides)
    if seeds is not None:
        merged["seeds"] = seeds
    cfg = ExperimentConfig.from_dict(merged)
    cfg.model.validate()
    return cfg


def _merge(base: dict, user: dict, prefix: str) -> dict:
    out = dict(base)
    for key, value in user.items():
        dotted = prefix + key
        if key not in base:
            raise ConfigError("unknown key", dotted)
        if key == "dataset":
            if not isinstance(value, dict):
                raise ConfigError("expected an object", dotted)
            out[key] = dict(value)
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected an object", dotted)
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


def parse_seeds(text):
    if text is None:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"seeds must be comma-separated integers, got {text!r}", "--seeds") from None


def parse_int_list(text, key):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}", key) from None


# -- output -----------------------------------------------------------------------
def run_summary_text(rec: RunRecord) -> str:
    bwt_text = "n/a" if rec.bwt is None else f"{100 * rec.bwt:.2f}"
    lines = [
        f"method      {rec.method}",
        f"seed        {rec.seed}",
        f"ACC %       {100 * rec.acc:.2f}",
        f"BWT %       {bwt_text}",
        f"Arch MB     {rec.arch_mb}",
        f"Replay MB   {rec.memory_mb}",
    ]
    if rec.structural_zero:
        lines.append("structural zero forgetting: yes")
    return "\n".join(lines) + "\n"


def write_run(rec: RunRecord, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "run.json").write_text(rec.to_json())
    (directory / "r_matrix.csv").write_text(rec.R.to_csv())
    (directory / "summary.txt").write_text(run_summary_text(rec))


def comparison_rows(groups: dict) -> list[dict]:
    """One row per method from ``{method: [RunRecord, ...]}``."""
    rows = []
    for method, recs in groups.items():
        stats = summarize(recs)
        bwts = [r.bwt for r in recs if r.bwt is not None]
        rows.append({
            "method": method,
            "runs": len(recs),
            "acc": format_mean_std([r.acc for r in recs]),
            "bwt": format_mean_std(bwts) if bwts else "n/a",
            "arch_mb": format_mb(int(np.mean([r.arch_bytes for r in recs]))),
            "replay_mb": format_mb(int(np.mean([r.memory_bytes for r in recs]))),
            **{k: stats[k] for k in STAT_COLUMNS},
        })
    return rows


def render_table(rows: list[dict]) -> str:
    header = ("Method", "ACC%", "BWT%", "Arch (MB)", "Replay Buffer (MB)")
    body = [(r["method"], r["acc"], r["bwt"], r["arch_mb"], r["replay_mb"]) for r in rows]
    widths = [max(len(str(c)) for c in col) for col in zip(header, *body)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    out += [fmt.format(*row) for row in body]
    return "\n".join(out) + "\n"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


# -- subcommands --------------------------------------------------------------------
def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set, parse_seeds(args.seeds))
    exp = f"{cfg.name}_{args.method}"
    records = run_many([(args.method, cfg, s) for s in cfg.seeds], args.workers)
    root = Path(args.out) / exp
    for rec in records:
        write_run(rec, root / str(rec.seed))
    rows = comparison_rows({records[0].method: records})
    (root / "summary.txt").write_text(render_table(rows))
    write_csv(root / "summary.csv", ("method", "runs") + STAT_COLUMNS,
              [[r["method"], r["runs"]] + [r[k] for k in STAT_COLUMNS] for r in rows])
    sys.stdout.write(render_table(rows))
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.set, parse_seeds(args.seeds))
    rows = None if args.rows is None else parse_int_list(args.rows, "--rows")
    table = run_ablation_grid(cfg, rows=rows, workers=args.workers)
    root = Path(args.out) / f"{cfg.name}_ablation"
    for row in table:
        for rec in row["records"]:
            write_run(rec, root / f"row{row['row']:02d}" / str(rec.seed))
    switch_cols = ("S", "P", "D", "diff", "RB")
    write_csv(root / "ablation.csv", ("row",) + switch_cols + STAT_COLUMNS,
              [[row["row"]] + [int(row[c]) for c in switch_cols] + [row[k] for k in STAT_COLUMNS]
               for row in table])
    lines = ["row  S P D diff RB  ACC%            BWT%"]
    for row in table:
        marks = " ".join("x" if row[c] else "." for c in switch_cols)
        recs = row["records"]
        bwts = [r.bwt for r in recs if r.bwt is not None]
        lines.append(f"{row['row']:>3}  {marks:<12} {format_mean_std([r.acc for r in recs]):<15} "
                     f"{format_mean_std(bwts) if bwts else 'n/a'}")
    text = "\n".join(lines) + "\n"
    (root / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set, parse_seeds(args.seeds))
    samples = parse_int_list(args.samples, "--samples")
    table = replay_sweep(cfg, samples, method=args.method, workers=args.workers)
    root = Path(args.out) / f"{cfg.name}_sweep_{args.method}"
    for row in table:
        for rec in row["records"]:
            write_run(rec, root / f"s{row['samples_per_class']}" / str(rec.seed))
    write_csv(root / "sweep.csv", ("samples_per_class",) + STAT_COLUMNS,
              [[row["samples_per_class"]] + [row[k] for k in STAT_COLUMNS] for row in table])
    lines = ["s   ACC%            BWT%"]
    for row in table:
        recs = row["records"]
        bwts = [r.bwt for r in recs if r.bwt is not None]
        lines.append(f"{row['samples_per_class']:<3} {format_mean_std([r.acc for r in recs]):<15} "
                     f"{format_mean_std(bwts) if bwts else 'n/a'}")
    text = "\n".join(lines) + "\n"
    (root / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_metrics(args) -> int:
    R = ResultMatrix.from_csv(Path(args.r_matrix).read_text())
    a = acc(R)
    b = bwt(R) if R.n_tasks > 1 else None
    print(f"ACC {a!r}")
    print(f"BWT {b!r}")
    run_path = Path(args.run) if args.run else Path(args.r_matrix).with_name("run.json")
    if run_path.exists():
        stored = json.loads(run_path.read_text())
        ok = abs(stored["acc"] - a) <= 1e-12 and (
            (stored["bwt"] is None and b is None)
            or (stored["bwt"] is not None and b is not None and abs(stored["bwt"] - b) <= 1e-12))
        print(f"matches {run_path}: {'yes' if ok else 'no'}")
        return 0 if ok else 1
    return 0


def collect_records(paths) -> list[RunRecord]:
    records = []
    for p in map(Path, paths):
        files = [p] if p.is_file() else sorted(p.rglob("run.json"))
        if not files:
            raise ReportError(f"no run.json under {p}")
        records += [RunRecord.from_dict(json.loads(f.read_text())) for f in files]
    return records


def build_report(records: list[RunRecord]) -> list[dict]:
    counts = {r.R.n_tasks for r in records}
    if len(counts) > 1:
        raise ReportError(f"runs cover different task counts {sorted(counts)}")
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec.method, []).append(rec)
    return comparison_rows(groups)


def cmd_report(args) -> int:
    rows = build_report(collect_records(args.dirs))
    text = render_table(rows)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        header = ("method", "runs", "acc", "bwt", "arch_mb", "replay_mb") + STAT_COLUMNS
        write_csv(out / "report.csv", header, [[r[h] for h in header] for r in rows])
    return 0


# -- entry point --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advcl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-task progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_args(p):
        p.add_argument("--config", help="JSON experiment config (defaults when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, e.g. model.lambdas=[0.05,1,0.1]")
        p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
        p.add_argument("--out", default="runs", help="output directory (default: runs)")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        p.add_argument("--data-dir", help="MNIST IDX directory (overrides ACL_DATA_DIR)")

    p = sub.add_parser("train", help="train one method over the seeds")
    p.add_argument("--method", choices=sorted(METHODS), default="acl")
    experiment_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help=f"run the {len(ABLATION_ROWS)}-row cumulative ablation grid")
    p.add_argument("--rows", help="comma-separated 1-based rows (default: all)")
    experiment_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="replay-size sweep over samples per class")
    p.add_argument("--samples", default="1,3,5", help="samples per class (default: 1,3,5)")
    p.add_argument("--method", choices=("acl", "ord-ft"), default="acl")
    experiment_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="recompute ACC/BWT from an R-matrix CSV")
    p.add_argument("--r-matrix", required=True)
    p.add_argument("--run", help="run.json to check against (default: sibling of the CSV)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", help="merge finished runs into a comparison table")
    p.add_argument("dirs", nargs="+", help="run directories or run.json files")
    p.add_argument("--out", help="directory for report.csv and report.txt")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "data_dir", None):
        os.environ["ACL_DATA_DIR"] = str(args.data_dir)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers: must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (AclError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

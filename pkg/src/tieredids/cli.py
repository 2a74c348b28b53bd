"""Command-line runner: ``tieredids {train,evaluate,sweep-code-size,report}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import pipeline
from .config import ABLATIONS, TRUST_MODES, ConfigError, ExperimentConfig, load_config


class CommandError(RuntimeError):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "trust_mode", None):
        overrides["trust_mode"] = args.trust_mode
    if getattr(args, "ablation", None):
        overrides["ablation"] = args.ablation
    return cfg.replace(**overrides).validate()


def _fresh_dir(path: Path, overwrite: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise CommandError(f"{path} is not empty; pass --overwrite to replace its contents")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_metadata(out: Path, command: str) -> None:
    # timestamps live here only, so every other output is reproducible byte for byte
    meta = {"command": command, "created": datetime.now(timezone.utc).isoformat()}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_train(cfg: ExperimentConfig, overwrite: bool = False) -> Path:
    out = _fresh_dir(Path(cfg.output_dir) / "artifacts", overwrite)
    prepared = pipeline.prepare_data(cfg)
    system = pipeline.train_system(cfg, prepared)
    pipeline.save_artifacts(system, cfg, out)
    _write_metadata(out, "train")
    return out


def cmd_evaluate(cfg: ExperimentConfig, artifacts=None, overwrite: bool = False
                 ) -> pipeline.EvaluationReport:
    art = Path(artifacts) if artifacts else Path(cfg.output_dir) / "artifacts"
    try:
        system = pipeline.load_artifacts(art, cfg)
    except (FileNotFoundError, ValueError) as exc:
        raise CommandError(str(exc)) from None
    out = _fresh_dir(Path(cfg.output_dir) / "report", overwrite)
    prepared = pipeline.prepare_data(cfg)
    report = pipeline.evaluate_system(cfg, system, prepared)
    report.write(out)
    _write_metadata(out, "evaluate")
    return report


def cmd_sweep_code_size(cfg: ExperimentConfig, sizes, overwrite: bool = False) -> dict:
    out = _fresh_dir(Path(cfg.output_dir) / "sweep", overwrite)
    sweep = pipeline.sweep_code_size(cfg, sizes)
    (out / "sweep.json").write_text(json.dumps(sweep, indent=2, sort_keys=True) + "\n")
    (out / "sweep.csv").write_text(_table(SWEEP_COLUMNS, sweep["rows"]))
    _write_metadata(out, "sweep-code-size")
    return sweep


SWEEP_COLUMNS = ["h", "bytes", "expected_bytes", "mcc", "local_mcc", "accuracy"]


def _table(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def read_report(path) -> dict:
    path = Path(path)
    if path.is_dir():
        candidates = [path / "report.json", path / "sweep.json"]
        path = next((c for c in candidates if c.is_file()), candidates[0])
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise CommandError(f"report not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON ({exc.msg})") from None
    if not isinstance(data, dict) or data.get("kind") not in ("evaluation", "sweep"):
        raise CommandError(f"{path}: not an evaluation or sweep report")
    data["_source"] = str(path)
    return data


def cmd_report(paths, out_dir, plot: bool = False) -> str:
    """Merge reports into a text summary plus plot-ready CSV tables."""
    reports = [read_report(p) for p in paths]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []

    evals = [r for r in reports if r["kind"] == "evaluation"]
    sweeps = [r for r in reports if r["kind"] == "sweep"]
    metric_rows = []
    for r in evals:
        for row in r["rows"]:
            metric_rows.append({"report": r["_source"], "trust_mode": r["trust_mode"],
                                "ablation": r["ablation"], **row})
        led = r["ledger"]
        lines.append(f"{r['_source']}: h={r['code_size']} K={r['n_features']} "
                     f"mode={r['trust_mode']} ablation={r['ablation']}")
        for row in r["rows"]:
            lines.append(f"  {row['unit_id']:>8} {row['scope']:>5}  acc={row['accuracy']:.4f} "
                         f"mcc={row['mcc']:.4f} ur={row['ur']:.4f}")
        for scope in ("local", "cloud"):
            o = r["overall"][scope]
            lines.append(f"  {'all':>8} {scope:>5}  acc={o['accuracy']:.4f} "
                         f"mcc={o['mcc']:.4f} ur={o['ur']:.4f}")
        lines.append(f"  bytes: {led['sent_bytes']} sent vs {led['raw_bytes']} raw "
                     f"(ratio {led['ratio_exact']} = {led['ratio']:.4f})")
    if metric_rows:
        cols = ["report", "trust_mode", "ablation"] + pipeline.METRIC_COLUMNS
        (out / "plot_metrics.csv").write_text(_table(cols, metric_rows))

    sweep_rows = []
    for r in sweeps:
        for row in r["rows"]:
            sweep_rows.append({"report": r["_source"], **row})
    sweep_rows.sort(key=lambda row: (row["h"], row["report"]))
    if sweep_rows:
        (out / "plot_sweep.csv").write_text(_table(["report"] + SWEEP_COLUMNS, sweep_rows))
        lines.append("code size sweep:")
        for row in sweep_rows:
            lines.append(f"  h={row['h']:>3}  bytes={row['bytes']:>4}  mcc={row['mcc']:.4f}  "
                         f"local_mcc={row['local_mcc']:.4f}")

    summary = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(summary)
    if plot:
        _plot(out, metric_rows, sweep_rows)
    return summary


def _plot(out: Path, metric_rows, sweep_rows) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise CommandError("--plot needs matplotlib (pip install 'artifact[plot]')") from None
    if metric_rows:
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        units = sorted({r["unit_id"] for r in metric_rows})
        for ax, metric in zip(axes, ("accuracy", "mcc", "ur")):
            for offset, scope in ((-0.2, "local"), (0.2, "cloud")):
                vals = [next((r[metric] for r in metric_rows
                              if r["unit_id"] == u and r["scope"] == scope), 0.0) for u in units]
                ax.bar([i + offset for i in range(len(units))], vals, width=0.4, label=scope)
            ax.set_xticks(range(len(units)), units)
            ax.set_title(metric)
        axes[0].legend()
        fig.tight_layout()
        fig.savefig(out / "metrics.png", dpi=120)
        plt.close(fig)
    if sweep_rows:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([r["bytes"] for r in sweep_rows], [r["mcc"] for r in sweep_rows], "o-")
        for r in sweep_rows:
            ax.annotate(f"h={r['h']}", (r["bytes"], r["mcc"]))
        ax.set_xlabel("bytes per message")
        ax.set_ylabel("cloud MCC")
        fig.tight_layout()
        fig.savefig(out / "sweep.png", dpi=120)
        plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tieredids", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file (INI)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="output directory (overrides experiment.output_dir)")
        p.add_argument("--overwrite", action="store_true", help="replace existing outputs")

    p = sub.add_parser("train", help="train the autoencoder, profiles and cloud models")
    common(p)
    p = sub.add_parser("evaluate", help="evaluate saved artifacts on the test splits")
    common(p)
    p.add_argument("--artifacts", help="artifact directory (default: <out>/artifacts)")
    p.add_argument("--trust-mode", choices=TRUST_MODES)
    p.add_argument("--ablation", choices=ABLATIONS)
    p = sub.add_parser("sweep-code-size", help="train/evaluate once per code size")
    common(p)
    p.add_argument("--sizes", default="10,15,20,25,30", help="comma-separated code sizes")
    p.add_argument("--trust-mode", choices=TRUST_MODES)
    p = sub.add_parser("report", help="summarize evaluation / sweep reports")
    p.add_argument("reports", nargs="+", help="report.json / sweep.json files or their directories")
    p.add_argument("--out", default="report-summary", help="directory for summary and plot data")
    p.add_argument("--plot", action="store_true", help="also render PNG plots (needs matplotlib)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            sys.stdout.write(cmd_report(args.reports, args.out, args.plot))
            return 0
        cfg = _config(args)
        if args.command == "train":
            print(f"artifacts written to {cmd_train(cfg, args.overwrite)}")
        elif args.command == "evaluate":
            report = cmd_evaluate(cfg, args.artifacts, args.overwrite)
            c = report.overall["cloud"]
            print(f"cloud accuracy {c['accuracy']:.4f}  mcc {c['mcc']:.4f}  "
                  f"bytes ratio {report.ledger['ratio_exact']}")
        elif args.command == "sweep-code-size":
            try:
                sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
            except ValueError:
                raise CommandError(f"--sizes must be comma-separated integers, got {args.sizes!r}")
            for row in cmd_sweep_code_size(cfg, sizes, args.overwrite)["rows"]:
                print(f"h={row['h']:>3}  bytes={row['bytes']:>4}  mcc={row['mcc']:.4f}")
    except (ConfigError, CommandError, pipeline.StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

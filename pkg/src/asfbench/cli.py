"""Command-line interface.

Verbs:
  asf-eval  before/after step-recognition evaluation with feedback replay
  bench     run the topology benchmark over the query set
  report    re-derive a benchmark report from a trace archive
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .asf import save_state
from .config import load_config
from .errors import AsfBenchError
from .harness import (
    emit_asf_report,
    emit_report,
    recompute_report,
    run_asf_eval,
    run_benchmark,
    save_traces,
)


def _apply_overrides(cfg, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out_dir = Path(args.out).resolve()
    if getattr(args, "backend", None) is not None:
        cfg.backend = args.backend
    if getattr(args, "topology", None):
        cfg.topologies = [t.strip() for t in args.topology.split(",") if t.strip()]


def _formats(args) -> tuple[str, ...]:
    return ("table-text", "delimited") if args.format == "both" else (args.format,)


def cmd_asf_eval(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    result = run_asf_eval(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = emit_asf_report(result, out_dir, _formats(args))
    state_path = out_dir / "asf_state.json"
    save_state(result.state, state_path)
    for row in result.rows:
        print(
            f"S{row.step}: acc {row.acc_before:.2f} -> {row.acc_after:.2f}  "
            f"f1 {row.f1_before:.2f} -> {row.f1_after:.2f}"
        )
    for path in [*paths, state_path]:
        print(f"wrote {path}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    report, bundles = run_benchmark(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = emit_report(report, out_dir, _formats(args))
    traces_path = out_dir / "traces.jsonl"
    save_traces(bundles, traces_path)
    failures = sum(b.trace.failed for b in bundles)
    for row in report.rows:
        if row.category == "Overall":
            e = "n/a" if row.e_per_success_kj is None else f"{row.e_per_success_kj:.4f}"
            print(
                f"{row.topology}: TS {row.ts_pct:.2f}%  AL {row.avg_latency_s:.4f}s  "
                f"E/succ {e} kJ"
            )
    if failures:
        print(f"backend failures: {failures}")
    for path in [*paths, traces_path]:
        print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    report = recompute_report(cfg, args.traces)
    paths = emit_report(report, Path(cfg.out_dir), _formats(args))
    for path in paths:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asfbench", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="benchmark config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--format", choices=["table-text", "delimited", "both"], default="both"
        )

    p_eval = sub.add_parser("asf-eval", help="before/after fusion evaluation")
    common(p_eval)
    p_eval.set_defaults(func=cmd_asf_eval)

    p_bench = sub.add_parser("bench", help="run the topology benchmark")
    common(p_bench)
    p_bench.add_argument(
        "--topology", default=None, help="comma-separated topology names"
    )
    p_bench.add_argument("--backend", choices=["template", "remote"], default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_report = sub.add_parser("report", help="re-derive a report from a trace archive")
    common(p_report)
    p_report.add_argument("--traces", required=True, help="trace archive (jsonl)")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AsfBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

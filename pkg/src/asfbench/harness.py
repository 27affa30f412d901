"""Benchmark harness: stream replay, before/after fusion evaluation with a
feedback-replay schedule, the five-topology query benchmark, and report
emission in table-text and delimited forms.

Everything is deterministic under the template backend: two runs with the
same config and fixtures produce byte-identical reports up to the
generated-at header line. Reports are always derivable from the trace
archive; `recompute_report` re-aggregates one from disk.
"""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass
from pathlib import Path

from .agents import AuditedAnswer, RemoteBackend, TemplateBackend
from .asf import AsfState, feedback_update, fuse
from .config import (
    BenchmarkConfig,
    FeedbackSchedule,
    QUERY_CATEGORIES,
    QueryRecord,
    load_queries,
    load_schedule,
)
from .errors import ConfigError
from .experts import (
    ReferenceGallery,
    RuleMatrix,
    load_gallery,
    neutral_retrieval_output,
    retrieval_score,
    state_graph_score,
)
from .kb import KnowledgeBase, load_kb
from .metrics import (
    average_latency,
    bleu_corpus,
    classification_suite,
    ece,
    kba,
    rouge_l,
    task_success,
    trace_energy_joules,
)
from .perception import ContextSet, SlidingWindow, StreamFrame, read_stream
from .topologies import RUNNERS, AnswerTrace, CallRecord, RunEnv


# ---------------------------------------------------------------------------
# stream replay and the before/after fusion evaluation


@dataclass(frozen=True)
class FrameResult:
    frame_idx: int
    predicted: int | None  # None when the frame had no observable context
    confidence: float | None
    truth: int | None


def replay_stream(
    frames: list[StreamFrame],
    state: AsfState,
    kb: KnowledgeBase,
    gallery: ReferenceGallery | None,
    cfg: BenchmarkConfig,
    schedule: FeedbackSchedule | None = None,
) -> list[FrameResult]:
    """Run the recognition pipeline over a stream, optionally applying
    scheduled feedback updates in stream order. Mutates `state`."""
    state.prev_step = None
    rules = RuleMatrix(kb.steps)
    window = SlidingWindow(cfg.perception)
    pending = list(schedule.updates) if schedule is not None else []
    max_frame = frames[-1].frame_idx if frames else -1
    for frame_idx, _ in pending:
        if frame_idx > max_frame:
            raise ConfigError(f"schedule references frame {frame_idx} beyond the stream")
    results = []
    for frame in frames:
        window.push(frame.frame_idx, frame.detections)
        ctx = window.context()
        if ctx is None:
            # absent observation: the step experts skip the frame
            if pending and pending[0][0] == frame.frame_idx:
                raise ConfigError(
                    f"schedule frame {frame.frame_idx} has no observable context"
                )
            results.append(FrameResult(frame.frame_idx, None, None, frame.true_step))
            continue
        out_s = state_graph_score(ctx.counts, rules, cfg.asf.alpha)
        if gallery is not None and frame.embedding is not None:
            out_r = retrieval_score(frame.embedding, gallery, cfg.asf.top_k)
        else:
            out_r = neutral_retrieval_output(kb.k_steps)
        pred = fuse(state, out_s, out_r, cfg.asf, kb.workflow)
        results.append(
            FrameResult(frame.frame_idx, pred.step, pred.confidence, frame.true_step)
        )
        while pending and pending[0][0] == frame.frame_idx:
            _, y = pending.pop(0)
            feedback_update(state, y, out_s, out_r, pred.scores, cfg.asf)
    return results


@dataclass(frozen=True)
class AsfStepRow:
    step: int
    acc_before: float
    acc_after: float
    prec_before: float
    prec_after: float
    rec_before: float
    rec_after: float
    f1_before: float
    f1_after: float
    ece_before: float | None
    ece_after: float | None


@dataclass
class AsfEvalResult:
    rows: list[AsfStepRow]
    state: AsfState  # adapted state after the schedule
    n_scored_before: int
    n_scored_after: int
    config_echo: dict[str, str]
    generated_at: str = ""


def _pass_metrics(results: list[FrameResult], k_steps: int, bins: int):
    scored = [r for r in results if r.truth is not None and r.predicted is not None]
    preds = [r.predicted for r in scored]
    truths = [r.truth for r in scored]
    suite = classification_suite(preds, truths, range(1, k_steps + 1)) if scored else {}
    per_step_ece: dict[int, float | None] = {}
    for step in range(1, k_steps + 1):
        pairs = [
            (r.confidence, r.predicted == r.truth) for r in scored if r.truth == step
        ]
        per_step_ece[step] = ece(pairs, bins) if pairs else None
    return suite, per_step_ece, len(scored)


def run_asf_eval(cfg: BenchmarkConfig, schedule: FeedbackSchedule | None = None) -> AsfEvalResult:
    """Before/after evaluation: pass 1 with the frozen initial state, replay
    the feedback schedule, pass 2 with the frozen adapted state."""
    kb = load_kb(cfg.kb_path)
    if cfg.stream_path is None:
        raise ConfigError("asf evaluation requires a stream path")
    frames = list(read_stream(cfg.stream_path))
    gallery = load_gallery(cfg.gallery_path) if cfg.gallery_path else None
    if schedule is None:
        if cfg.schedule_path is None:
            raise ConfigError("asf evaluation requires a feedback schedule")
        schedule = load_schedule(cfg.schedule_path, kb.k_steps)

    before_state = AsfState.fresh(kb.k_steps, cfg.asf)
    before = replay_stream(frames, before_state, kb, gallery, cfg)

    adapted = AsfState.fresh(kb.k_steps, cfg.asf)
    replay_stream(frames, adapted, kb, gallery, cfg, schedule=schedule)

    probe_state = adapted.copy()
    after = replay_stream(frames, probe_state, kb, gallery, cfg)

    suite_b, ece_b, n_b = _pass_metrics(before, kb.k_steps, cfg.ece_bins)
    suite_a, ece_a, n_a = _pass_metrics(after, kb.k_steps, cfg.ece_bins)
    rows = []
    for step in range(1, kb.k_steps + 1):
        sb = suite_b.get(step)
        sa = suite_a.get(step)
        rows.append(
            AsfStepRow(
                step=step,
                acc_before=sb.acc if sb else 0.0,
                acc_after=sa.acc if sa else 0.0,
                prec_before=sb.prec if sb else 0.0,
                prec_after=sa.prec if sa else 0.0,
                rec_before=sb.rec if sb else 0.0,
                rec_after=sa.rec if sa else 0.0,
                f1_before=sb.f1 if sb else 0.0,
                f1_after=sa.f1 if sa else 0.0,
                ece_before=ece_b.get(step),
                ece_after=ece_a.get(step),
            )
        )
    return AsfEvalResult(
        rows=rows,
        state=adapted,
        n_scored_before=n_b,
        n_scored_after=n_a,
        config_echo=cfg.echo(),
        generated_at=_now(),
    )


def latest_context(
    frames: list[StreamFrame], cfg: BenchmarkConfig
) -> tuple[ContextSet | None, int | None]:
    """Last observable context in the stream plus the step label there;
    used as the fixed perception input for the query benchmark."""
    window = SlidingWindow(cfg.perception)
    ctx, step = None, None
    for frame in frames:
        window.push(frame.frame_idx, frame.detections)
        current = window.context()
        if current is not None:
            ctx = current
            if frame.true_step is not None:
                step = frame.true_step
    return ctx, step


# ---------------------------------------------------------------------------
# the query benchmark


@dataclass(frozen=True)
class BenchRow:
    topology: str
    category: str  # a query category or "Overall"
    n_queries: int
    successes: int
    failures: int
    ts_pct: float
    bleu: float
    rouge_l: float
    kba_pct: float | None
    avg_latency_s: float
    e_per_success_kj: float | None


@dataclass
class BenchReport:
    rows: list[BenchRow]
    config_echo: dict[str, str]
    generated_at: str = ""


@dataclass
class TraceBundle:
    """One executed query with everything needed to re-derive the report."""

    trace: AnswerTrace
    category: str
    reference: str
    rubric_id: str
    success: bool
    energy_joules: float
    kba_score: float | None


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def make_backend(cfg: BenchmarkConfig):
    if cfg.backend == "remote":
        return RemoteBackend(cfg.remote)
    return TemplateBackend(cfg.cost)


def run_benchmark(cfg: BenchmarkConfig) -> tuple[BenchReport, list[TraceBundle]]:
    """Execute every selected topology over the query set and aggregate the
    full metric suite per category and overall. Backend failures are
    recorded per trace and the run continues."""
    kb = load_kb(cfg.kb_path)
    if cfg.queries_path is None:
        raise ConfigError("benchmark requires a query set")
    for name in cfg.topologies:
        if name not in RUNNERS:
            raise ConfigError(f"unknown topology '{name}' (known: {sorted(RUNNERS)})")
    queries = load_queries(cfg.queries_path)
    for q in queries:
        if q.rubric_id not in kb.rubrics:
            raise ConfigError(f"query {q.query_id} references unknown rubric '{q.rubric_id}'")
    ctx, current_step = (None, None)
    if cfg.stream_path is not None:
        ctx, current_step = latest_context(list(read_stream(cfg.stream_path)), cfg)
    env = RunEnv(
        kb=kb,
        backend=make_backend(cfg),
        audit_rules=cfg.audit,
        cost=cfg.cost,
        lexicons=cfg.lexicons,
        evidence_k=cfg.evidence_k,
        debate_rounds=cfg.debate_rounds,
        current_step=current_step,
    )
    bundles: list[TraceBundle] = []
    for topology in cfg.topologies:
        runner = RUNNERS[topology]
        for q in queries:
            trace = runner(q.query_id, q.text, ctx, env)
            bundles.append(_bundle(trace, q, kb, cfg))
    return aggregate_report(bundles, cfg), bundles


def _bundle(
    trace: AnswerTrace, q: QueryRecord, kb: KnowledgeBase, cfg: BenchmarkConfig
) -> TraceBundle:
    success = (not trace.failed) and task_success(trace.final.text, kb.rubrics[q.rubric_id])
    return TraceBundle(
        trace=trace,
        category=q.category,
        reference=q.reference,
        rubric_id=q.rubric_id,
        success=success,
        energy_joules=trace_energy_joules(trace.energy_samples, cfg.cost.idle_watts),
        kba_score=(
            None
            if q.category in cfg.kba_skip_categories
            else kba(trace.final.text, kb.catalog)
        ),
    )


def aggregate_report(bundles: list[TraceBundle], cfg: BenchmarkConfig) -> BenchReport:
    topologies: list[str] = []
    for b in bundles:
        if b.trace.topology not in topologies:
            topologies.append(b.trace.topology)
    rows = []
    for topology in topologies:
        mine = [b for b in bundles if b.trace.topology == topology]
        for category in QUERY_CATEGORIES:
            group = [b for b in mine if b.category == category]
            if group:
                rows.append(_aggregate(topology, category, group))
        rows.append(_aggregate(topology, "Overall", mine))
    return BenchReport(rows=rows, config_echo=cfg.echo(), generated_at=_now())


def _aggregate(topology: str, category: str, bundles: list[TraceBundle]) -> BenchRow:
    n = len(bundles)
    successes = sum(b.success for b in bundles)
    kba_scores = [b.kba_score for b in bundles if b.kba_score is not None]
    answers = [b.trace.final.text for b in bundles]
    refs = [b.reference for b in bundles]
    total_energy = sum(b.energy_joules for b in bundles)
    return BenchRow(
        topology=topology,
        category=category,
        n_queries=n,
        successes=successes,
        failures=sum(b.trace.failed for b in bundles),
        ts_pct=100.0 * successes / n,
        bleu=bleu_corpus(answers, refs),
        rouge_l=sum(rouge_l(a, r) for a, r in zip(answers, refs)) / n,
        kba_pct=100.0 * sum(kba_scores) / len(kba_scores) if kba_scores else None,
        avg_latency_s=average_latency([b.trace.duration for b in bundles]),
        e_per_success_kj=total_energy / successes / 1000.0 if successes else None,
    )


# ---------------------------------------------------------------------------
# trace archive


def save_traces(bundles: list[TraceBundle], path: str | Path) -> None:
    """One JSON record per trace; the archive is sufficient to re-derive the
    benchmark report (modulo the query references, supplied separately)."""
    with Path(path).open("w") as fh:
        for b in bundles:
            t = b.trace
            fh.write(
                json.dumps(
                    {
                        "topology": t.topology,
                        "query_id": t.query_id,
                        "category": b.category,
                        "rubric_id": b.rubric_id,
                        "text": t.final.text,
                        "safe": t.final.safe,
                        "flags": list(t.final.audit_flags),
                        "warnings": list(t.final.appended_warnings),
                        "failed": t.failed,
                        "start": t.start,
                        "end": t.end,
                        "calls": [[c.role, c.purpose, c.tokens, c.wall_time] for c in t.calls],
                        "energy_samples": [[ts, w] for ts, w in t.energy_samples],
                    }
                )
                + "\n"
            )


def load_traces(path: str | Path) -> list[tuple[AnswerTrace, str, str]]:
    """Read the archive back as (trace, category, rubric_id) triples."""
    out = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            trace = AnswerTrace(
                topology=rec["topology"],
                query_id=rec["query_id"],
                final=AuditedAnswer(
                    text=rec["text"],
                    audit_flags=tuple(rec["flags"]),
                    safe=rec["safe"],
                    appended_warnings=tuple(rec["warnings"]),
                ),
                calls=[CallRecord(*c) for c in rec["calls"]],
                energy_samples=[(ts, w) for ts, w in rec["energy_samples"]],
                start=rec["start"],
                end=rec["end"],
                failed=rec["failed"],
            )
            out.append((trace, rec["category"], rec["rubric_id"]))
    return out


def recompute_report(cfg: BenchmarkConfig, traces_path: str | Path) -> BenchReport:
    """Re-derive the benchmark report from an archive on disk; the report is
    never authoritative."""
    kb = load_kb(cfg.kb_path)
    if cfg.queries_path is None:
        raise ConfigError("report recomputation requires the query set")
    by_id = {q.query_id: q for q in load_queries(cfg.queries_path)}
    bundles = []
    for trace, category, rubric_id in load_traces(traces_path):
        q = by_id.get(trace.query_id)
        if q is None:
            raise ConfigError(f"archive references unknown query '{trace.query_id}'")
        bundles.append(_bundle(trace, q, kb, cfg))
    return aggregate_report(bundles, cfg)


# ---------------------------------------------------------------------------
# report rendering


def _fmt(value, decimals: int) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{decimals}f}"


def _repr_or_na(value) -> str:
    return "n/a" if value is None else repr(value)


BENCH_COLUMNS = [
    "topology", "category", "n_queries", "successes", "failures",
    "ts_pct", "bleu", "rouge_l", "kba_pct", "avg_latency_s", "e_per_success_kj",
]


def render_bench_csv(report: BenchReport) -> str:
    lines = [f"# generated_at={report.generated_at}"]
    lines.extend(f"# {k}={v}" for k, v in report.config_echo.items())
    lines.append(",".join(BENCH_COLUMNS))
    for r in report.rows:
        lines.append(
            ",".join(
                [
                    r.topology,
                    r.category,
                    str(r.n_queries),
                    str(r.successes),
                    str(r.failures),
                    repr(r.ts_pct),
                    repr(r.bleu),
                    repr(r.rouge_l),
                    _repr_or_na(r.kba_pct),
                    repr(r.avg_latency_s),
                    _repr_or_na(r.e_per_success_kj),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def load_bench_csv(path: str | Path) -> list[BenchRow]:
    """Parse a delimited report back into rows (numeric round trip)."""
    rows = []
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    if header != BENCH_COLUMNS:
        raise ConfigError(f"unexpected report columns {header}")
    for ln in lines[1:]:
        cells = ln.split(",")
        rows.append(
            BenchRow(
                topology=cells[0],
                category=cells[1],
                n_queries=int(cells[2]),
                successes=int(cells[3]),
                failures=int(cells[4]),
                ts_pct=float(cells[5]),
                bleu=float(cells[6]),
                rouge_l=float(cells[7]),
                kba_pct=None if cells[8] == "n/a" else float(cells[8]),
                avg_latency_s=float(cells[9]),
                e_per_success_kj=None if cells[10] == "n/a" else float(cells[10]),
            )
        )
    return rows


def render_bench_text(report: BenchReport) -> str:
    lines = [f"generated_at: {report.generated_at}", "", "== configuration =="]
    lines.extend(f"{k}: {v}" for k, v in report.config_echo.items())
    lines.append("")
    widths = (24, 9, 9, 9, 9, 10, 12)
    header = ("topology", "TS(%)", "BL", "RG", "KBA(%)", "AL(s)", "E/succ(kJ)")
    categories = [c for c in QUERY_CATEGORIES if any(r.category == c for r in report.rows)]
    for category in categories + ["Overall Average"]:
        key = "Overall" if category == "Overall Average" else category
        block = [r for r in report.rows if r.category == key]
        if not block:
            continue
        lines.append(f"== {category} ==")
        lines.append("".join(h.ljust(w) for h, w in zip(header, widths)))
        for r in block:
            cells = (
                r.topology,
                _fmt(r.ts_pct, 2),
                _fmt(r.bleu, 4),
                _fmt(r.rouge_l, 4),
                _fmt(r.kba_pct, 2),
                _fmt(r.avg_latency_s, 4),
                _fmt(r.e_per_success_kj, 4),
            )
            lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
        lines.append("")
    return "\n".join(lines)


ASF_COLUMNS = [
    "step",
    "acc_before", "acc_after",
    "prec_before", "prec_after",
    "rec_before", "rec_after",
    "f1_before", "f1_after",
    "ece_before", "ece_after",
]


def render_asf_csv(result: AsfEvalResult) -> str:
    lines = [f"# generated_at={result.generated_at}"]
    lines.extend(f"# {k}={v}" for k, v in result.config_echo.items())
    lines.append(",".join(ASF_COLUMNS))
    for r in result.rows:
        lines.append(
            ",".join(
                [str(r.step)]
                + [repr(getattr(r, c)) for c in ASF_COLUMNS[1:9]]
                + [_repr_or_na(r.ece_before), _repr_or_na(r.ece_after)]
            )
        )
    return "\n".join(lines) + "\n"


def render_asf_text(result: AsfEvalResult) -> str:
    lines = [
        f"generated_at: {result.generated_at}",
        "",
        f"scored frames: before={result.n_scored_before} after={result.n_scored_after}",
        "",
        "== configuration ==",
    ]
    lines.extend(f"{k}: {v}" for k, v in result.config_echo.items())
    lines.append("")
    widths = (6,) + (11,) * 10
    header = (
        "step",
        "acc_b", "acc_a", "prec_b", "prec_a", "rec_b", "rec_a",
        "f1_b", "f1_a", "ece_b", "ece_a",
    )
    lines.append("== per-step scores (before/after adaptation) ==")
    lines.append("".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in result.rows:
        cells = (
            f"S{r.step}",
            _fmt(r.acc_before, 2), _fmt(r.acc_after, 2),
            _fmt(r.prec_before, 2), _fmt(r.prec_after, 2),
            _fmt(r.rec_before, 2), _fmt(r.rec_after, 2),
            _fmt(r.f1_before, 2), _fmt(r.f1_after, 2),
            _fmt(r.ece_before, 4), _fmt(r.ece_after, 4),
        )
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    lines.append("")
    return "\n".join(lines)


def emit_report(report: BenchReport, out_dir: str | Path, formats=("table-text", "delimited")):
    """Write the benchmark report; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if "table-text" in formats:
        path = out_dir / "report.txt"
        path.write_text(render_bench_text(report))
        paths.append(path)
    if "delimited" in formats:
        path = out_dir / "report.csv"
        path.write_text(render_bench_csv(report))
        paths.append(path)
    return paths


def emit_asf_report(result: AsfEvalResult, out_dir: str | Path, formats=("table-text", "delimited")):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if "table-text" in formats:
        path = out_dir / "asf_report.txt"
        path.write_text(render_asf_text(result))
        paths.append(path)
    if "delimited" in formats:
        path = out_dir / "asf_report.csv"
        path.write_text(render_asf_csv(result))
        paths.append(path)
    return paths

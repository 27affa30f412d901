"""Quantitative evaluation: task success, BLEU, ROUGE-L, KBA, ECE,
per-step classification scores, latency and energy accounting.

All metrics are pure functions. Text metrics tokenize by case-folded
whitespace split; phrase matching (KBA, rubrics) is case-folded substring
matching, deliberately without stemming.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .kb import PhraseCatalog, SuccessRubric


def _tokens(text: str) -> list[str]:
    return text.casefold().split()


def task_success(answer: str, rubric: SuccessRubric) -> bool:
    """True iff every required phrase set has a member present and no
    forbidden claim appears (case-folded substrings)."""
    hay = answer.casefold()
    for alternatives in rubric.required_phrases:
        if not any(alt.casefold() in hay for alt in alternatives):
            return False
    return not any(claim.casefold() in hay for claim in rubric.forbidden_claims)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(candidates: Sequence[str], references: Sequence[str]) -> float:
    """Corpus BLEU-4 with brevity penalty.

    Higher-order (n >= 2) precisions with zero matches are smoothed add-one;
    zero unigram overlap yields 0. Single-pair calls see the same arithmetic
    as a corpus of one.
    """
    if len(candidates) != len(references):
        raise ValueError("candidate/reference count mismatch")
    if not candidates:
        raise ValueError("empty corpus")
    match = [0] * 5
    total = [0] * 5
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        c_toks, r_toks = _tokens(cand), _tokens(ref)
        cand_len += len(c_toks)
        ref_len += len(r_toks)
        for n in range(1, 5):
            c_ng = _ngram_counts(c_toks, n)
            r_ng = _ngram_counts(r_toks, n)
            match[n] += sum(min(cnt, r_ng[ng]) for ng, cnt in c_ng.items())
            total[n] += max(0, len(c_toks) - n + 1)
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        if total[n] == 0:
            p = 1.0  # no n-grams of this order exist; neutral
        elif match[n] == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (total[n] + 1.0)  # add-one smoothing on zero counts
        else:
            p = match[n] / total[n]
        log_sum += 0.25 * math.log(p)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum)


def bleu(candidate: str, reference: str) -> float:
    return bleu_corpus([candidate], [reference])


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok in a:
        cur = [0]
        for j, other in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if tok == other else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F-measure with beta = 1."""
    c_toks, r_toks = _tokens(candidate), _tokens(reference)
    lcs = _lcs_length(c_toks, r_toks)
    if lcs == 0:
        return 0.0
    p = lcs / len(c_toks)
    r = lcs / len(r_toks)
    return 2.0 * p * r / (p + r)


def kba(answer: str, catalog: PhraseCatalog) -> float:
    """Knowledge-base alignment: harmonic mean of phrase precision against
    the risk list and category coverage recall.

    E = matched catalog phrases, h = matched risk substrings,
    P = max(0, E - h) / E (0 when E = 0),
    R = |categories of matched phrases| / |catalog categories|.
    """
    hay = answer.casefold()
    matched = [(p, c) for p, c in catalog.phrases if p.casefold() in hay]
    e = len(matched)
    if e == 0:
        return 0.0
    h = sum(1 for q in catalog.risk_phrases if q.casefold() in hay)
    p = max(0, e - h) / e
    r = len({c for _, c in matched}) / len(catalog.categories)
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def ece(predictions: Sequence[tuple[float, bool]], bins: int = 10) -> float:
    """Expected calibration error over (confidence, correct) pairs.

    Equal-width bins on [0, 1] with right-inclusive edges; ECE is the
    bin-weighted absolute gap between accuracy and mean confidence.
    """
    if not predictions:
        raise ValueError("ECE is undefined on an empty prediction set")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    conf_sum = [0.0] * bins
    hit_sum = [0] * bins
    count = [0] * bins
    for conf, correct in predictions:
        idx = min(max(math.ceil(conf * bins) - 1, 0), bins - 1)
        conf_sum[idx] += conf
        hit_sum[idx] += bool(correct)
        count[idx] += 1
    n = len(predictions)
    total = 0.0
    for i in range(bins):
        if count[i]:
            total += (count[i] / n) * abs(hit_sum[i] / count[i] - conf_sum[i] / count[i])
    return total


@dataclass(frozen=True)
class StepScores:
    """One-vs-rest classification scores for a single step, in percent."""

    acc: float
    prec: float
    rec: float
    f1: float


def classification_suite(
    predicted: Sequence[int], truth: Sequence[int], step_ids: Sequence[int]
) -> dict[int, StepScores]:
    """Per-step one-vs-rest Acc/Prec/Rec/F1 (%). Zero denominators give 0
    for the ratio metrics; accuracy is (TP+TN)/N."""
    if len(predicted) != len(truth):
        raise ValueError("prediction/truth length mismatch")
    if not predicted:
        raise ValueError("empty sequences")
    n = len(predicted)
    out = {}
    for step in step_ids:
        tp = sum(1 for p, t in zip(predicted, truth) if p == step and t == step)
        fp = sum(1 for p, t in zip(predicted, truth) if p == step and t != step)
        fn = sum(1 for p, t in zip(predicted, truth) if p != step and t == step)
        tn = n - tp - fp - fn
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2.0 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[step] = StepScores(
            acc=100.0 * (tp + tn) / n,
            prec=100.0 * prec,
            rec=100.0 * rec,
            f1=100.0 * f1,
        )
    return out


@dataclass(frozen=True)
class CostModel:
    """Deterministic power/latency model standing in for hardware telemetry.

    Generation draws `base_watts + joules_per_token * token_rate`; idle
    draws `idle_watts`. Call wall time under the template backend is
    `call_overhead_s + seconds_per_token * tokens`.
    """

    base_watts: float = 35.0
    idle_watts: float = 35.0
    joules_per_token: float = 0.9
    call_overhead_s: float = 0.05
    seconds_per_token: float = 0.01
    sample_hz: float = 5.0


_RAMP = 1e-9  # seconds between boundary samples; keeps timestamps strictly increasing


class CostModelSampler:
    """Emits (timestamp, watts) samples for a sequence of timed calls.

    The emitted signal is piecewise linear with near-instant ramps at call
    boundaries and samples at every breakpoint, so trapezoidal integration
    reproduces the model energy almost exactly.
    """

    def __init__(self, model: CostModel):
        self.model = model

    def call_watts(self, tokens: int, wall_time: float) -> float:
        if wall_time <= 0.0:
            return self.model.base_watts
        return self.model.base_watts + self.model.joules_per_token * (tokens / wall_time)

    def sample_calls(
        self, calls: Sequence[tuple[int, float]], start: float = 0.0
    ) -> list[tuple[float, float]]:
        """calls: (tokens, wall_time) pairs, executed back to back."""
        if not calls:
            return []
        watts = [self.call_watts(tok, wall) for tok, wall in calls]
        period = 1.0 / self.model.sample_hz
        samples: list[tuple[float, float]] = [(start, watts[0])]
        t = start
        for i, (_, wall) in enumerate(calls):
            t_end = t + wall
            s = t + period
            while s < t_end - _RAMP:
                samples.append((s, watts[i]))
                s += period
            if wall > 2 * _RAMP:
                samples.append((t_end - _RAMP, watts[i]))
            nxt = watts[i + 1] if i + 1 < len(calls) else watts[i]
            samples.append((t_end, nxt))
            t = t_end
        return samples


class ConstantSampler:
    """Fixed-wattage sampler, e.g. for idle baselines."""

    def __init__(self, watts: float, sample_hz: float = 5.0):
        self.watts = watts
        self.sample_hz = sample_hz

    def sample_span(self, start: float, end: float) -> list[tuple[float, float]]:
        period = 1.0 / self.sample_hz
        out = [(start, self.watts)]
        t = start + period
        while t < end:
            out.append((t, self.watts))
            t += period
        out.append((end, self.watts))
        return out


def trapezoid(samples: Sequence[tuple[float, float]]) -> float:
    """Trapezoidal integral of (timestamp, watts) samples, in joules."""
    total = 0.0
    for (t1, w1), (t2, w2) in zip(samples, samples[1:]):
        total += (t2 - t1) * (w1 + w2) / 2.0
    return total


def trace_energy_joules(
    samples: Sequence[tuple[float, float]], idle_watts: float
) -> float:
    """Net energy above the idle baseline, floored at zero."""
    if len(samples) < 2:
        return 0.0
    duration = samples[-1][0] - samples[0][0]
    return max(0.0, trapezoid(samples) - idle_watts * duration)


def energy_per_success(
    traces: Sequence, successes: Iterable[bool], idle_watts: float
) -> float | None:
    """Total net energy over all traces divided by the success count, in kJ;
    None when no answer succeeded (reported as undefined). Traces only need
    an `energy_samples` attribute of (timestamp, watts) pairs."""
    total = sum(trace_energy_joules(t.energy_samples, idle_watts) for t in traces)
    n_succ = sum(bool(s) for s in successes)
    if n_succ == 0:
        return None
    return total / n_succ / 1000.0


def average_latency(durations_s: Sequence[float]) -> float:
    if not durations_s:
        raise ValueError("average latency is undefined with no traces")
    return sum(durations_s) / len(durations_s)

"""The two complementary step detectors.

The state-graph detector scores each step against the KB rule triples using
the observed component counts; the retrieval detector scores steps by
cosine similarity between the current frame embedding and per-step
reference embeddings. Both are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import GalleryFormatError
from .kb import StepRule


@dataclass(frozen=True)
class ExpertOutput:
    expert: str  # "state_graph" | "retrieval"
    scores: np.ndarray  # index j-1 holds the score of step j
    winner: int  # step id of the argmax (ties: lowest step id)
    confidence: float  # max score
    coverage: np.ndarray | None = None  # state-graph only: the "all" term per step


def _finish(expert: str, scores: np.ndarray, coverage: np.ndarray | None = None) -> ExpertOutput:
    winner = int(np.argmax(scores)) + 1  # argmax returns the first (lowest) index on ties
    return ExpertOutput(
        expert=expert,
        scores=scores,
        winner=winner,
        confidence=float(scores[winner - 1]),
        coverage=coverage,
    )


class RuleMatrix:
    """CSR packing of step rules over the part vocabulary they mention."""

    def __init__(self, rules: Sequence[StepRule]):
        if not rules:
            raise ValueError("rules must be non-empty")
        vocab: dict[str, int] = {}
        for rule in rules:
            for part in [*rule.all_of, *rule.any_of, *rule.forbid]:
                vocab.setdefault(part, len(vocab))
        self.vocab = vocab
        self.k_steps = len(rules)

        def pack(pairs_per_step):
            ptr = [0]
            idx: list[int] = []
            req: list[float] = []
            for pairs in pairs_per_step:
                for part, mult in pairs:
                    idx.append(vocab[part])
                    req.append(float(mult))
                ptr.append(len(idx))
            return (
                np.asarray(ptr, dtype=np.int64),
                np.asarray(idx, dtype=np.int64),
                np.asarray(req, dtype=np.float64),
            )

        self.all_ptr, self.all_idx, self.all_req = pack(
            [sorted(r.all_of.items()) for r in rules]
        )
        self.any_ptr, self.any_idx, self.any_req = pack(
            [sorted(r.any_of.items()) for r in rules]
        )
        self.forbid_ptr, self.forbid_idx, _ = pack(
            [[(p, 1) for p in sorted(r.forbid)] for r in rules]
        )

    def counts_vector(self, counts: Mapping[str, int]) -> np.ndarray:
        vec = np.zeros(len(self.vocab), dtype=np.float64)
        for part, n in counts.items():
            i = self.vocab.get(part)
            if i is not None:
                vec[i] = float(n)
        return vec


def state_graph_score(
    counts: Mapping[str, int],
    rules: Sequence[StepRule] | RuleMatrix,
    alpha: float,
) -> ExpertOutput:
    """Score every step from component counts; missing counts read as zero.

    score_j = alpha * all_j + (1 - alpha) * any_j - pen_j, where all_j is the
    mean truncated satisfaction of required parts, any_j indicates that some
    alternative (or none listed) is met, and pen_j = 0.5 when a forbidden
    part is visible. Coverage is all_j.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    matrix = rules if isinstance(rules, RuleMatrix) else RuleMatrix(rules)
    scores, cov = _kernels.rule_scores(
        matrix.counts_vector(counts),
        alpha,
        matrix.all_ptr,
        matrix.all_idx,
        matrix.all_req,
        matrix.any_ptr,
        matrix.any_idx,
        matrix.any_req,
        matrix.forbid_ptr,
        matrix.forbid_idx,
    )
    return _finish("state_graph", scores, cov)


class ReferenceGallery:
    """Per-step reference embeddings, unit-normalized at construction."""

    def __init__(self, per_step: Sequence[Sequence[Sequence[float]]]):
        if not per_step or any(len(refs) == 0 for refs in per_step):
            raise GalleryFormatError("every step needs at least one reference vector")
        dims = {len(v) for refs in per_step for v in refs}
        if len(dims) != 1:
            raise GalleryFormatError(f"reference vectors have mixed dimensions {sorted(dims)}")
        flat = np.asarray([v for refs in per_step for v in refs], dtype=np.float64)
        norms = np.linalg.norm(flat, axis=1)
        if np.any(norms == 0.0):
            raise GalleryFormatError("zero reference vector in gallery")
        self.vectors = flat / norms[:, None]
        self.step_ptr = np.concatenate([[0], np.cumsum([len(r) for r in per_step])])
        self.k_steps = len(per_step)
        self.dim = self.vectors.shape[1]


def retrieval_score(
    query_embedding: Sequence[float], gallery: ReferenceGallery, top_k: int = 1
) -> ExpertOutput:
    """Mean of the top-k cosine similarities against each step's references."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.shape != (gallery.dim,):
        raise ValueError(f"query dimension {q.shape} does not match gallery ({gallery.dim},)")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise ValueError("zero query embedding; cosine similarity undefined")
    sims = np.clip(gallery.vectors @ (q / norm), -1.0, 1.0)
    scores = np.empty(gallery.k_steps, dtype=np.float64)
    for j in range(gallery.k_steps):
        step_sims = sims[gallery.step_ptr[j] : gallery.step_ptr[j + 1]]
        k = min(top_k, step_sims.size)
        scores[j] = float(np.mean(np.sort(step_sims)[-k:]))
    return _finish("retrieval", scores)


def neutral_retrieval_output(k_steps: int) -> ExpertOutput:
    """All-zero retrieval output for frames without an embedding."""
    return _finish("retrieval", np.zeros(k_steps, dtype=np.float64))


def load_gallery(path: str | Path) -> ReferenceGallery:
    """Parse a gallery file: `dim D` / `steps K` header, then per-step blocks
    of whitespace-separated vectors introduced by `step J` lines."""
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    try:
        if not lines[0].startswith("dim ") or not lines[1].startswith("steps "):
            raise GalleryFormatError(f"{path}: missing 'dim'/'steps' header")
        dim = int(lines[0].split()[1])
        k_steps = int(lines[1].split()[1])
        per_step: list[list[list[float]]] = []
        current: list[list[float]] | None = None
        for ln in lines[2:]:
            if ln.startswith("step "):
                expected = len(per_step) + 1
                if int(ln.split()[1]) != expected:
                    raise GalleryFormatError(f"{path}: step blocks must appear in order 1..K")
                current = []
                per_step.append(current)
            else:
                if current is None:
                    raise GalleryFormatError(f"{path}: vector before any 'step' line")
                vec = [float(v) for v in ln.split()]
                if len(vec) != dim:
                    raise GalleryFormatError(
                        f"{path}: vector of length {len(vec)}, header says {dim}"
                    )
                current.append(vec)
        if len(per_step) != k_steps:
            raise GalleryFormatError(
                f"{path}: header says {k_steps} steps, found {len(per_step)}"
            )
        return ReferenceGallery(per_step)
    except (IndexError, ValueError) as exc:
        raise GalleryFormatError(f"{path}: {exc}") from exc


def save_gallery(per_step: Sequence[Sequence[Sequence[float]]], path: str | Path) -> None:
    dim = len(per_step[0][0])
    out = [f"dim {dim}", f"steps {len(per_step)}"]
    for j, refs in enumerate(per_step, start=1):
        out.append(f"step {j}")
        out.extend(" ".join(repr(float(v)) for v in vec) for vec in refs)
    Path(path).write_text("\n".join(out) + "\n")

"""Structured knowledge base: parts, step rules, workflow graph, phrase catalog, rubrics.

The KB is loaded from a single YAML document with sections ``categories``,
``parts``, ``steps``, ``workflow``, ``phrases`` (plus optional
``risk_phrases``) and ``rubrics``. It is immutable after load and safe to
share across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import KBLoadError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Case-folded alphanumeric tokens."""
    return _TOKEN_RE.findall(text.casefold())


@dataclass(frozen=True)
class Snippet:
    snippet_id: str
    text: str
    role: str | None = None  # None means available to every role


@dataclass(frozen=True)
class PartEntry:
    part_id: str
    name: str
    category: str
    attributes: dict[str, str] = field(default_factory=dict)
    doc_snippets: tuple[Snippet, ...] = ()


@dataclass(frozen=True)
class StepRule:
    """Per-step rule triple: required, alternative and forbidden components.

    Multiplicities default to 1 when unspecified. ``all_of`` and ``forbid``
    must be disjoint.
    """

    step_id: int
    all_of: dict[str, int] = field(default_factory=dict)
    any_of: dict[str, int] = field(default_factory=dict)
    forbid: frozenset[str] = frozenset()


@dataclass(frozen=True)
class WorkflowGraph:
    """Allowed successor sets per step; every step allows itself (dwell)."""

    edges: dict[int, frozenset[int]]

    def allowed(self, step_id: int) -> frozenset[int]:
        return self.edges[step_id]


@dataclass(frozen=True)
class PhraseCatalog:
    phrases: tuple[tuple[str, str], ...]  # (canonical phrase, category)
    risk_phrases: tuple[str, ...] = ()

    @property
    def categories(self) -> frozenset[str]:
        return frozenset(cat for _, cat in self.phrases)


@dataclass(frozen=True)
class SuccessRubric:
    """Deterministic success criterion: required phrase alternatives and
    forbidden claims, both matched as case-folded substrings."""

    rubric_id: str
    required_phrases: tuple[tuple[str, ...], ...]
    forbidden_claims: tuple[str, ...] = ()


class KnowledgeBase:
    """Immutable container for all KB sections plus the retrieval index."""

    def __init__(
        self,
        parts: dict[str, PartEntry],
        steps: list[StepRule],
        workflow: WorkflowGraph,
        catalog: PhraseCatalog,
        rubrics: dict[str, SuccessRubric],
        categories: frozenset[str],
    ):
        self.parts = parts
        self.steps = steps
        self.workflow = workflow
        self.catalog = catalog
        self.rubrics = rubrics
        self.categories = categories
        self.snippets: list[Snippet] = [s for p in parts.values() for s in p.doc_snippets]
        self._snippet_tokens = {s.snippet_id: frozenset(tokenize(s.text)) for s in self.snippets}
        self._idf = _build_idf(list(self._snippet_tokens.values()))

    @property
    def k_steps(self) -> int:
        return len(self.steps)

    def idf(self, token: str) -> float:
        return self._idf.get(token, self._idf_default)

    @property
    def _idf_default(self) -> float:
        # unseen tokens get the max-rarity weight
        return math.log((len(self.snippets) + 1.0) / 1.0) + 1.0


def _build_idf(token_sets: list[frozenset[str]]) -> dict[str, float]:
    n = len(token_sets)
    df: dict[str, int] = {}
    for toks in token_sets:
        for t in toks:
            df[t] = df.get(t, 0) + 1
    return {t: math.log((n + 1.0) / (d + 1.0)) + 1.0 for t, d in df.items()}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise KBLoadError(msg)


def _as_multiplicity_map(raw, where: str) -> dict[str, int]:
    """Accepts a mapping part->multiplicity or a list of parts (multiplicity 1)."""
    if raw is None:
        return {}
    if isinstance(raw, list):
        return {str(p): 1 for p in raw}
    if isinstance(raw, dict):
        out = {}
        for part, mult in raw.items():
            mult = 1 if mult is None else int(mult)
            _require(mult >= 1, f"{where}: multiplicity for '{part}' must be >= 1")
            out[str(part)] = mult
        return out
    raise KBLoadError(f"{where}: expected list or mapping, got {type(raw).__name__}")


def load_kb(path: str | Path) -> KnowledgeBase:
    """Load and validate a knowledge base file.

    Raises KBLoadError naming the offending entity on parse failures,
    duplicate ids, or dangling part references.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise KBLoadError(f"cannot parse KB file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise KBLoadError(f"KB file {path} is not a mapping")

    categories = frozenset(str(c) for c in raw.get("categories", []))
    _require(bool(categories), "KB declares no categories")

    parts: dict[str, PartEntry] = {}
    for entry in raw.get("parts", []):
        part_id = str(entry.get("id", ""))
        _require(bool(part_id), "part without id")
        _require(part_id not in parts, f"duplicate part id '{part_id}'")
        category = str(entry.get("category", ""))
        _require(
            category in categories,
            f"part '{part_id}' has undeclared category '{category}'",
        )
        snippets = []
        for i, doc in enumerate(entry.get("docs", []) or []):
            if isinstance(doc, str):
                doc = {"text": doc}
            snippets.append(
                Snippet(
                    snippet_id=f"{part_id}:{i}",
                    text=str(doc["text"]),
                    role=None if doc.get("role") is None else str(doc["role"]),
                )
            )
        parts[part_id] = PartEntry(
            part_id=part_id,
            name=str(entry.get("name", part_id)),
            category=category,
            attributes={str(k): str(v) for k, v in (entry.get("attributes") or {}).items()},
            doc_snippets=tuple(snippets),
        )

    steps: list[StepRule] = []
    seen_steps = set()
    for entry in raw.get("steps", []):
        step_id = int(entry["id"])
        _require(step_id not in seen_steps, f"duplicate step id '{step_id}'")
        seen_steps.add(step_id)
        rule = StepRule(
            step_id=step_id,
            all_of=_as_multiplicity_map(entry.get("all_of"), f"step {step_id} all_of"),
            any_of=_as_multiplicity_map(entry.get("any_of"), f"step {step_id} any_of"),
            forbid=frozenset(str(p) for p in (entry.get("forbid") or [])),
        )
        _require(
            not (set(rule.all_of) & rule.forbid),
            f"step {step_id}: all_of and forbid overlap",
        )
        for part_id in [*rule.all_of, *rule.any_of, *rule.forbid]:
            _require(
                part_id in parts,
                f"step {step_id} references unknown part '{part_id}'",
            )
        steps.append(rule)
    steps.sort(key=lambda r: r.step_id)
    _require(bool(steps), "KB declares no steps")
    _require(
        [r.step_id for r in steps] == list(range(1, len(steps) + 1)),
        "step ids must form the contiguous sequence 1..K",
    )

    step_ids = {r.step_id for r in steps}
    raw_workflow = raw.get("workflow", {}) or {}
    edges: dict[int, frozenset[int]] = {}
    for step_id in sorted(step_ids):
        succ = {int(s) for s in (raw_workflow.get(step_id) or [])}
        for s in succ:
            _require(s in step_ids, f"workflow edge {step_id}->{s} targets unknown step")
        succ.add(step_id)  # dwelling on a step is always allowed
        edges[step_id] = frozenset(succ)
    workflow = WorkflowGraph(edges=edges)

    phrases = []
    for entry in raw.get("phrases", []):
        text = str(entry["text"])
        cat = str(entry["category"])
        _require(cat in categories, f"phrase '{text}' has undeclared category '{cat}'")
        phrases.append((text, cat))
    _require(bool(phrases), "phrase catalog is empty")
    catalog = PhraseCatalog(
        phrases=tuple(phrases),
        risk_phrases=tuple(str(p) for p in (raw.get("risk_phrases") or [])),
    )

    rubrics: dict[str, SuccessRubric] = {}
    for rubric_id, body in (raw.get("rubrics") or {}).items():
        rubric_id = str(rubric_id)
        required = tuple(
            tuple(str(alt) for alt in group) for group in body.get("required", [])
        )
        _require(
            required and all(required),
            f"rubric '{rubric_id}' needs at least one non-empty required phrase set",
        )
        rubrics[rubric_id] = SuccessRubric(
            rubric_id=rubric_id,
            required_phrases=required,
            forbidden_claims=tuple(str(c) for c in (body.get("forbidden") or [])),
        )

    return KnowledgeBase(parts, steps, workflow, catalog, rubrics, categories)


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    """Serialize a KB back to its file format (load -> save -> load is identity)."""
    doc = {
        "categories": sorted(kb.categories),
        "parts": [
            {
                "id": p.part_id,
                "name": p.name,
                "category": p.category,
                "attributes": dict(p.attributes),
                "docs": [
                    {"text": s.text} if s.role is None else {"role": s.role, "text": s.text}
                    for s in p.doc_snippets
                ],
            }
            for p in kb.parts.values()
        ],
        "steps": [
            {
                "id": r.step_id,
                "all_of": dict(r.all_of),
                "any_of": dict(r.any_of),
                "forbid": sorted(r.forbid),
            }
            for r in kb.steps
        ],
        "workflow": {s: sorted(kb.workflow.edges[s]) for s in sorted(kb.workflow.edges)},
        "phrases": [{"text": t, "category": c} for t, c in kb.catalog.phrases],
        "risk_phrases": list(kb.catalog.risk_phrases),
        "rubrics": {
            r.rubric_id: {
                "required": [list(g) for g in r.required_phrases],
                "forbidden": list(r.forbidden_claims),
            }
            for r in kb.rubrics.values()
        },
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False, allow_unicode=True))


def retrieve_evidence(
    kb: KnowledgeBase, query: str, role: str | None, k: int
) -> list[Snippet]:
    """Top-k snippets for a role, ranked by IDF-weighted token overlap.

    Only snippets tagged with `role` (or untagged) are candidates. Snippets
    sharing no token with the query are dropped; ties break on snippet id
    ascending. Pure function of its arguments.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    qtokens = frozenset(tokenize(query))
    scored = []
    for s in kb.snippets:
        if s.role is not None and role is not None and s.role != role:
            continue
        overlap = qtokens & kb._snippet_tokens[s.snippet_id]
        score = sum(kb.idf(t) for t in overlap)
        if score > 0.0:
            scored.append((-score, s.snippet_id, s))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [s for _, _, s in scored[:k]]

"""The answering layer: intent router, five role agents over KB evidence,
safety auditor, and two interchangeable text backends.

The template backend composes answers deterministically from role slot
templates and verbatim evidence, which makes every downstream benchmark
number reproducible. The remote backend speaks the common chat-completion
wire format at temperature 0, so any local inference server can plug in.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from enum import Enum

import requests

from .errors import BackendError
from .kb import KnowledgeBase, Snippet, WorkflowGraph, retrieve_evidence, tokenize
from .metrics import CostModel
from .perception import ContextSet


class AgentRole(str, Enum):
    ASSEMBLY_GUIDE = "AssemblyGuide"
    PARTS_ADVISOR = "PartsAdvisor"
    MAINTENANCE_ADVISOR = "MaintenanceAdvisor"
    FAULT_HANDLER = "FaultHandler"
    GENERAL = "General"


ROLE_ORDER = [
    AgentRole.ASSEMBLY_GUIDE,
    AgentRole.PARTS_ADVISOR,
    AgentRole.MAINTENANCE_ADVISOR,
    AgentRole.FAULT_HANDLER,
    AgentRole.GENERAL,
]

# hub-to-edge relay order used by the pipeline topology
PIPELINE_ORDER = [
    AgentRole.MAINTENANCE_ADVISOR,
    AgentRole.ASSEMBLY_GUIDE,
    AgentRole.PARTS_ADVISOR,
    AgentRole.FAULT_HANDLER,
    AgentRole.GENERAL,
]


DEFAULT_LEXICONS: dict[str, dict[str, float]] = {
    # "mount" is deliberately absent: it is a part-name token in this domain
    AgentRole.ASSEMBLY_GUIDE.value: {
        "assembly": 1.0, "assemble": 1.0, "install": 1.0, "installs": 1.0,
        "installed": 1.0, "attach": 1.0, "attached": 1.0,
        "order": 1.0, "sequence": 1.0, "step": 1.0, "build": 1.0,
    },
    AgentRole.PARTS_ADVISOR.value: {
        "material": 1.0, "specification": 1.0, "specifications": 1.0,
        "spec": 1.0, "size": 1.0, "weight": 1.0, "heavy": 1.0,
        "dimensions": 1.0, "made": 1.0, "attribute": 1.0, "attributes": 1.0,
        "rated": 1.0,
    },
    AgentRole.MAINTENANCE_ADVISOR.value: {
        "maintenance": 1.0, "maintain": 1.0, "service": 1.0, "serviced": 1.0,
        "servicing": 1.0, "lubricate": 1.0, "lubrication": 1.0,
        "inspect": 1.0, "inspected": 1.0, "inspection": 1.0, "clean": 1.0,
        "grease": 1.0, "schedule": 1.0,
    },
    AgentRole.FAULT_HANDLER.value: {
        "fix": 1.0, "repair": 1.0, "fault": 1.0, "fails": 1.0, "failed": 1.0,
        "failure": 1.0, "jammed": 1.0, "jam": 1.0, "stuck": 1.0,
        "broken": 1.0, "noise": 1.0, "noisy": 1.0, "troubleshoot": 1.0,
        "wrong": 1.0, "error": 1.0,
    },
    AgentRole.GENERAL.value: {},
}


def route(
    query: str,
    lexicons: dict[str, dict[str, float]] | None = None,
    context: ContextSet | None = None,
    current_step: int | None = None,
) -> AgentRole:
    """Deterministic intent routing by weighted keyword scoring.

    The highest-scoring role wins (role order breaks ties); a zero score
    falls back to the General agent. Context is accepted for interface
    parity with remote routers but does not influence the lexical score.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")
    lexicons = DEFAULT_LEXICONS if lexicons is None else lexicons
    qtokens = set(tokenize(query))
    best_role = AgentRole.GENERAL
    best_score = 0.0
    for role in ROLE_ORDER:
        lex = lexicons.get(role.value, {})
        score = sum(weight for word, weight in lex.items() if word.casefold() in qtokens)
        if score > best_score:
            best_role, best_score = role, score
    return best_role if best_score > 0.0 else AgentRole.GENERAL


@dataclass(frozen=True)
class Draft:
    role: AgentRole
    text: str
    evidence_ids: tuple[str, ...]
    token_count: int
    gen_time: float


@dataclass(frozen=True)
class GenResult:
    text: str
    tokens: int
    gen_time: float


ROLE_PREFIX = {
    AgentRole.ASSEMBLY_GUIDE: "Assembly guidance",
    AgentRole.PARTS_ADVISOR: "Part details",
    AgentRole.MAINTENANCE_ADVISOR: "Maintenance advice",
    AgentRole.FAULT_HANDLER: "Fault handling",
    AgentRole.GENERAL: "Overview",
}

ROLE_INSUFFICIENT = {
    AgentRole.ASSEMBLY_GUIDE: "I have no verified assembly guidance for that request.",
    AgentRole.PARTS_ADVISOR: "I have no verified part details for that request.",
    AgentRole.MAINTENANCE_ADVISOR: "I have no verified maintenance advice for that request.",
    AgentRole.FAULT_HANDLER: "I have no verified fault-handling steps for that request.",
    AgentRole.GENERAL: "I have no verified information for that request.",
}


def _sentence(text: str) -> str:
    text = text.strip()
    return text if text.endswith(".") else text + "."


class TemplateBackend:
    """Deterministic slot-template generator; token count is the whitespace
    token count of newly generated text and wall time follows the cost model."""

    is_remote = False

    def __init__(self, cost: CostModel | None = None):
        self.cost = cost or CostModel()

    def _result(self, text: str, new_text: str | None = None) -> GenResult:
        produced = text if new_text is None else new_text
        tokens = len(produced.split())
        return GenResult(
            text=text,
            tokens=tokens,
            gen_time=self.cost.call_overhead_s + self.cost.seconds_per_token * tokens,
        )

    def propose(
        self,
        role: AgentRole,
        query: str,
        evidence: list[Snippet],
        context: ContextSet | None,
        current_step: int | None = None,
        board: tuple | None = None,
    ) -> GenResult:
        if not evidence:
            return self._result(ROLE_INSUFFICIENT[role])
        body = " ".join(_sentence(s.text) for s in evidence)
        text = f"{ROLE_PREFIX[role]}: {body}"
        if current_step is not None and role is AgentRole.ASSEMBLY_GUIDE:
            text += f" Current step: {current_step}."
        if context is not None:
            text += f" Observed focus: {context.focus.part_id}."
        return self._result(text)

    def critique(
        self,
        critic: AgentRole,
        target: AgentRole,
        target_text: str,
        evidence: list[Snippet],
    ) -> GenResult:
        if evidence and evidence[0].text.casefold() not in target_text.casefold():
            verdict = f"it omits: {_sentence(evidence[0].text)}"
        else:
            verdict = "it is consistent with my evidence."
        return self._result(f"Critique of the {target.value} draft: {verdict}")

    def refine(
        self, role: AgentRole, previous: str, evidence: list[Snippet]
    ) -> GenResult:
        if not evidence:
            # pass-through stage: nothing generated
            return GenResult(text=previous, tokens=0, gen_time=self.cost.call_overhead_s)
        addition = f"{ROLE_PREFIX[role]}: " + " ".join(_sentence(s.text) for s in evidence)
        text = addition if not previous else f"{previous} {addition}"
        return self._result(text, new_text=addition)


ROLE_SYSTEM_PROMPT = (
    "You are the {role} agent of an industrial assembly assistant. "
    "Answer from the provided evidence only, concisely and safely."
)


@dataclass
class RemoteConfig:
    endpoint: str = "http://127.0.0.1:8080/v1/chat/completions"
    model: str = "local-model"
    timeout_s: float = 30.0
    max_retries: int = 2
    max_tokens: int = 256
    max_in_flight: int = 4


class RemoteBackend:
    """Chat-completion client with deterministic decoding (temperature 0).

    Every generation maps to exactly one POST; transport failures are
    retried up to `max_retries` times and then surfaced with the retry
    count. Token counts come from the server-reported completion usage.
    """

    is_remote = True

    def __init__(self, cfg: RemoteConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.session = session or requests.Session()
        import threading

        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

    def _chat(self, system: str, user: str) -> GenResult:
        body = {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0,
            "max_tokens": self.cfg.max_tokens,
        }
        attempts = 0
        start = time.monotonic()
        while True:
            try:
                with self._slots:
                    resp = self.session.post(
                        self.cfg.endpoint, json=body, timeout=self.cfg.timeout_s
                    )
                resp.raise_for_status()
                payload = resp.json()
                text = payload["choices"][0]["message"]["content"]
                usage = payload.get("usage", {})
                tokens = int(usage.get("completion_tokens", len(text.split())))
                return GenResult(text=text, tokens=tokens, gen_time=time.monotonic() - start)
            except (requests.RequestException, KeyError, ValueError, IndexError) as exc:
                attempts += 1
                if attempts > self.cfg.max_retries:
                    raise BackendError(
                        f"remote backend failed after {attempts} attempts: {exc}",
                        retries=attempts,
                    ) from exc

    def propose(self, role, query, evidence, context, current_step=None, board=None):
        parts = [f"Question: {query}"]
        if evidence:
            parts.append("Evidence: " + " ".join(_sentence(s.text) for s in evidence))
        if context is not None:
            parts.append(f"Observed focus: {context.focus.part_id}")
        if current_step is not None:
            parts.append(f"Current step: {current_step}")
        if board:
            parts.append("Shared notes: " + " | ".join(t for _, t, _ in board))
        return self._chat(ROLE_SYSTEM_PROMPT.format(role=role.value), "\n".join(parts))

    def critique(self, critic, target, target_text, evidence):
        user = (
            f"Critique this draft from the {target.value} agent:\n{target_text}\n"
            "Point out any conflict with your evidence."
        )
        if evidence:
            user += "\nEvidence: " + " ".join(_sentence(s.text) for s in evidence)
        return self._chat(ROLE_SYSTEM_PROMPT.format(role=critic.value), user)

    def refine(self, role, previous, evidence):
        user = f"Improve this draft without removing correct content:\n{previous}"
        if evidence:
            user += "\nEvidence: " + " ".join(_sentence(s.text) for s in evidence)
        return self._chat(ROLE_SYSTEM_PROMPT.format(role=role.value), user)

    def route_query(self, query: str) -> GenResult:
        roles = ", ".join(r.value for r in ROLE_ORDER)
        return self._chat(
            "You dispatch user queries to specialist agents. Reply with one role name.",
            f"Roles: {roles}\nQuery: {query}",
        )

    def vote(self, voter: AgentRole, query: str, drafts: list[tuple[AgentRole, str]]) -> GenResult:
        listing = "\n".join(f"{i + 1}. ({r.value}) {t}" for i, (r, t) in enumerate(drafts))
        return self._chat(
            ROLE_SYSTEM_PROMPT.format(role=voter.value),
            f"Question: {query}\nDrafts:\n{listing}\nReply with the number of the best draft.",
        )


def parse_role(text: str) -> AgentRole | None:
    hay = text.casefold()
    for role in ROLE_ORDER:
        if role.value.casefold() in hay:
            return role
    return None


def answer(
    role: AgentRole,
    query: str,
    context: ContextSet | None,
    kb: KnowledgeBase,
    backend,
    evidence_k: int = 3,
    current_step: int | None = None,
    board: tuple | None = None,
) -> Draft:
    """Retrieval-augmented answer: role-tagged evidence feeds the backend."""
    evidence = retrieve_evidence(kb, query, role.value, evidence_k)
    res = backend.propose(role, query, evidence, context, current_step, board)
    return Draft(
        role=role,
        text=res.text,
        evidence_ids=tuple(s.snippet_id for s in evidence),
        token_count=res.tokens,
        gen_time=res.gen_time,
    )


@dataclass(frozen=True)
class AuditConfig:
    forbidden: tuple[str, ...] = ()
    hazards: dict[str, str] = field(default_factory=dict)  # keyword -> warning
    refusal: str = "I cannot share that guidance because it violates safety policy."
    check_step_order: bool = True


@dataclass(frozen=True)
class AuditedAnswer:
    text: str
    audit_flags: tuple[str, ...]
    safe: bool
    appended_warnings: tuple[str, ...]


_ORDER_RE = re.compile(r"step\s+(\d+)\s+(?:comes\s+)?(before|after|then)\s+step\s+(\d+)")


def _step_order_violations(text: str, workflow: WorkflowGraph | None) -> list[str]:
    """Flag asserted step orderings that contradict the workflow graph.

    "i before j" / "i after j" are checked against the ordinal sequence;
    "i then j" additionally requires j to be an allowed successor of i.
    """
    flags = []
    for m in _ORDER_RE.finditer(text.casefold()):
        i, rel, j = int(m.group(1)), m.group(2), int(m.group(3))
        if rel == "before" and not i < j:
            flags.append(f"step_order:{i}-before-{j}")
        elif rel == "after" and not i > j:
            flags.append(f"step_order:{i}-after-{j}")
        elif rel == "then":
            if workflow is not None and i in workflow.edges:
                if j not in workflow.allowed(i):
                    flags.append(f"step_order:{i}-then-{j}")
            elif not j >= i:
                flags.append(f"step_order:{i}-then-{j}")
    return flags


def safety_audit(
    text: str, rules: AuditConfig, workflow: WorkflowGraph | None = None
) -> AuditedAnswer:
    """Rule-based audit: forbidden substrings and workflow contradictions
    block the answer outright; hazard keywords append warnings."""
    hay = text.casefold()
    flags: list[str] = []
    for phrase in rules.forbidden:
        if phrase.casefold() in hay:
            flags.append(f"forbidden:{phrase}")
    if rules.check_step_order:
        flags.extend(_step_order_violations(text, workflow))
    if flags:  # blocking: the draft must not leak through
        return AuditedAnswer(
            text=rules.refusal, audit_flags=tuple(flags), safe=False, appended_warnings=()
        )
    warnings = []
    for keyword in sorted(rules.hazards):
        if keyword.casefold() in hay:
            flags.append(f"hazard:{keyword}")
            warnings.append(rules.hazards[keyword])
    audited = text if not warnings else text + " " + " ".join(warnings)
    return AuditedAnswer(
        text=audited, audit_flags=tuple(flags), safe=True, appended_warnings=tuple(warnings)
    )

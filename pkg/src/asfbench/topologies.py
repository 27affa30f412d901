"""Coordination topologies: one query in, one audited answer trace out.

Five structures share identical tools, prompts and KB access so that call
counts, token totals, latency and energy differences isolate coordination
itself:

* shared_memory          — peers write proposals to a blackboard; an
                           evaluator selects the best by KB alignment.
* centralized_broadcast  — hub fan-out; an aggregator concatenates the two
                           best-aligned candidates.
* hierarchical_pipeline  — fixed relay; each stage may append role evidence.
* debate_voting          — drafts, ring peer critique, plurality vote.
* routed_specialist      — router dispatches to a single specialist.

Every topology ends with exactly one audit call; selection, aggregation,
voting and routing are deterministic bookkeeping under the template backend
(zero generated tokens) and single chat requests under the remote backend.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .agents import (
    AgentRole,
    AuditConfig,
    AuditedAnswer,
    Draft,
    PIPELINE_ORDER,
    ROLE_ORDER,
    answer,
    parse_role,
    route,
    safety_audit,
)
from .errors import BackendError
from .kb import KnowledgeBase, retrieve_evidence
from .metrics import CostModel, CostModelSampler, kba
from .perception import ContextSet

CALL_PURPOSES = frozenset(
    {"propose", "aggregate", "critique", "vote", "route", "refine", "audit", "evaluate"}
)

TOPOLOGY_NAMES = [
    "shared_memory",
    "centralized_broadcast",
    "hierarchical_pipeline",
    "debate_voting",
    "routed_specialist",
]


@dataclass(frozen=True)
class CallRecord:
    role: str
    purpose: str
    tokens: int
    wall_time: float

    def __post_init__(self):
        if self.purpose not in CALL_PURPOSES:
            raise ValueError(f"unknown call purpose '{self.purpose}'")


@dataclass
class AnswerTrace:
    topology: str
    query_id: str
    final: AuditedAnswer
    calls: list[CallRecord]
    energy_samples: list[tuple[float, float]]
    start: float
    end: float
    failed: bool = False

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def total_tokens(self) -> int:
        return sum(c.tokens for c in self.calls)


class SharedBoard:
    """Append-only shared context; readers always see all prior entries."""

    def __init__(self):
        self._entries: list[tuple[str, str, int]] = []

    def append(self, author: str, text: str, round_idx: int) -> None:
        self._entries.append((author, text, round_idx))

    def read(self) -> tuple[tuple[str, str, int], ...]:
        return tuple(self._entries)


@dataclass
class RunEnv:
    """Everything a topology needs besides the query itself."""

    kb: KnowledgeBase
    backend: object
    audit_rules: AuditConfig
    cost: CostModel
    lexicons: dict[str, dict[str, float]] | None = None
    evidence_k: int = 3
    debate_rounds: int = 1
    current_step: int | None = None
    insufficient_text: str = "No agent could provide a grounded answer."


class _TraceBuilder:
    def __init__(self, topology: str, query_id: str, env: RunEnv):
        self.topology = topology
        self.query_id = query_id
        self.env = env
        self.calls: list[CallRecord] = []

    def record(self, role: str, purpose: str, tokens: int, wall_time: float) -> None:
        self.calls.append(CallRecord(role=role, purpose=purpose, tokens=tokens, wall_time=wall_time))

    def bookkeeping(self, role: str, purpose: str) -> None:
        self.record(role, purpose, 0, self.env.cost.call_overhead_s)

    def finish(self, final: AuditedAnswer, failed: bool = False) -> AnswerTrace:
        sampler = CostModelSampler(self.env.cost)
        samples = sampler.sample_calls([(c.tokens, c.wall_time) for c in self.calls])
        end = sum(c.wall_time for c in self.calls)
        return AnswerTrace(
            topology=self.topology,
            query_id=self.query_id,
            final=final,
            calls=self.calls,
            energy_samples=samples,
            start=0.0,
            end=end,
            failed=failed,
        )

    def fail(self, exc: BackendError) -> AnswerTrace:
        refused = AuditedAnswer(
            text="", audit_flags=(f"backend_failure:{exc.retries}",), safe=False,
            appended_warnings=(),
        )
        return self.finish(refused, failed=True)

    def audit(self, text: str) -> AuditedAnswer:
        audited = safety_audit(text, self.env.audit_rules, self.env.kb.workflow)
        self.bookkeeping("system", "audit")
        return audited


def _propose(tb: _TraceBuilder, role: AgentRole, query: str, ctx, board=None) -> Draft:
    draft = answer(
        role,
        query,
        ctx,
        tb.env.kb,
        tb.env.backend,
        evidence_k=tb.env.evidence_k,
        current_step=tb.env.current_step,
        board=board,
    )
    tb.record(role.value, "propose", draft.token_count, draft.gen_time)
    return draft


def select_by_kba(drafts: list[Draft], kb: KnowledgeBase) -> Draft:
    """Highest KB alignment wins; ties go to the earliest role in role order."""
    order = {role: i for i, role in enumerate(ROLE_ORDER)}
    return max(drafts, key=lambda d: (kba(d.text, kb.catalog), -order[d.role]))


def aggregate_candidates(drafts: list[Draft], kb: KnowledgeBase, empty_text: str) -> str:
    """Concatenate the two best-aligned nonempty candidates (or fewer)."""
    order = {role: i for i, role in enumerate(ROLE_ORDER)}
    nonempty = [d for d in drafts if d.text.strip()]
    if not nonempty:
        return empty_text
    ranked = sorted(nonempty, key=lambda d: (-kba(d.text, kb.catalog), order[d.role]))
    return " ".join(d.text for d in ranked[:2])


def run_shared_memory(query_id: str, query: str, ctx: ContextSet | None, env: RunEnv) -> AnswerTrace:
    """Blackboard peers propose; an evaluator picks the best-aligned answer."""
    tb = _TraceBuilder("shared_memory", query_id, env)
    board = SharedBoard()
    try:
        drafts = []
        for role in ROLE_ORDER:
            snapshot = board.read()
            draft = _propose(tb, role, query, ctx, board=snapshot)
            board.append(role.value, draft.text, 0)
            drafts.append(draft)
        winner = select_by_kba(drafts, env.kb)
        tb.bookkeeping("system", "evaluate")
        return tb.finish(tb.audit(winner.text))
    except BackendError as exc:
        return tb.fail(exc)


def run_centralized_broadcast(
    query_id: str, query: str, ctx: ContextSet | None, env: RunEnv
) -> AnswerTrace:
    """Hub publish-subscribe fan-out with a top-2 aggregator."""
    tb = _TraceBuilder("centralized_broadcast", query_id, env)
    try:
        drafts = [_propose(tb, role, query, ctx) for role in ROLE_ORDER]
        merged = aggregate_candidates(drafts, env.kb, env.insufficient_text)
        tb.bookkeeping("system", "aggregate")
        return tb.finish(tb.audit(merged))
    except BackendError as exc:
        return tb.fail(exc)


def run_hierarchical_pipeline(
    query_id: str, query: str, ctx: ContextSet | None, env: RunEnv
) -> AnswerTrace:
    """Fixed relay; each stage refines (template: appends its evidence)."""
    tb = _TraceBuilder("hierarchical_pipeline", query_id, env)
    try:
        text = ""
        for role in PIPELINE_ORDER:
            evidence = retrieve_evidence(env.kb, query, role.value, env.evidence_k)
            res = env.backend.refine(role, text, evidence)
            tb.record(role.value, "refine", res.tokens, res.gen_time)
            text = res.text
        if not text.strip():
            text = env.insufficient_text
        return tb.finish(tb.audit(text))
    except BackendError as exc:
        return tb.fail(exc)


_INT_RE = re.compile(r"\d+")


def run_debate_voting(
    query_id: str, query: str, ctx: ContextSet | None, env: RunEnv, rounds: int | None = None
) -> AnswerTrace:
    """Independent drafts, ring peer critique, then plurality voting."""
    rounds = env.debate_rounds if rounds is None else rounds
    tb = _TraceBuilder("debate_voting", query_id, env)
    order = {role: i for i, role in enumerate(ROLE_ORDER)}
    try:
        drafts = [_propose(tb, role, query, ctx) for role in ROLE_ORDER]
        for _ in range(rounds):
            for i, critic in enumerate(ROLE_ORDER):
                target = ROLE_ORDER[(i + 1) % len(ROLE_ORDER)]
                evidence = retrieve_evidence(env.kb, query, critic.value, env.evidence_k)
                res = env.backend.critique(critic, target, drafts[order[target]].text, evidence)
                tb.record(critic.value, "critique", res.tokens, res.gen_time)

        votes: list[int] = []
        kba_pick = order[select_by_kba(drafts, env.kb).role]
        for voter in ROLE_ORDER:
            choice = kba_pick
            if getattr(env.backend, "is_remote", False):
                res = env.backend.vote(voter, query, [(d.role, d.text) for d in drafts])
                tb.record(voter.value, "vote", res.tokens, res.gen_time)
                m = _INT_RE.search(res.text)
                if m and 1 <= int(m.group()) <= len(drafts):
                    choice = int(m.group()) - 1
            else:
                tb.bookkeeping(voter.value, "vote")
            votes.append(choice)
        tally = [0] * len(drafts)
        for v in votes:
            tally[v] += 1
        winner_idx = max(range(len(drafts)), key=lambda i: (tally[i], -i))
        return tb.finish(tb.audit(drafts[winner_idx].text))
    except BackendError as exc:
        return tb.fail(exc)


def run_routed_specialist(
    query_id: str, query: str, ctx: ContextSet | None, env: RunEnv
) -> AnswerTrace:
    """Router dispatches the query to one specialist; audit closes the trace."""
    tb = _TraceBuilder("routed_specialist", query_id, env)
    try:
        if getattr(env.backend, "is_remote", False):
            res = env.backend.route_query(query)
            tb.record("system", "route", res.tokens, res.gen_time)
            role = parse_role(res.text) or route(query, env.lexicons, ctx, env.current_step)
        else:
            role = route(query, env.lexicons, ctx, env.current_step)
            tb.bookkeeping("system", "route")
        draft = _propose(tb, role, query, ctx)
        return tb.finish(tb.audit(draft.text))
    except BackendError as exc:
        return tb.fail(exc)


RUNNERS = {
    "shared_memory": run_shared_memory,
    "centralized_broadcast": run_centralized_broadcast,
    "hierarchical_pipeline": run_hierarchical_pipeline,
    "debate_voting": run_debate_voting,
    "routed_specialist": run_routed_specialist,
}

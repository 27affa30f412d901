"""Router, template/remote backends, safety auditing."""

import pytest

from asfbench.agents import (
    AgentRole,
    AuditConfig,
    RemoteBackend,
    RemoteConfig,
    TemplateBackend,
    answer,
    parse_role,
    route,
    safety_audit,
)
from asfbench.errors import BackendError
from asfbench.kb import WorkflowGraph
from asfbench.metrics import CostModel


class TestRoute:
    def test_assembly_order_query(self):
        assert route("what is the assembly order") is AgentRole.ASSEMBLY_GUIDE

    def test_unmatched_query_falls_back_to_general(self):
        assert route("hmm curious thing") is AgentRole.GENERAL

    def test_fault_query(self):
        assert route("how do I fix the jammed gear") is AgentRole.FAULT_HANDLER

    def test_maintenance_query(self):
        assert route("when should the shaft be inspected") is AgentRole.MAINTENANCE_ADVISOR

    def test_empty_query_rejected(self):
        with pytest.raises(ValueError):
            route("   ")

    def test_custom_lexicons_override_builtin(self):
        lex = {AgentRole.PARTS_ADVISOR.value: {"curious": 2.0}}
        assert route("hmm curious thing", lex) is AgentRole.PARTS_ADVISOR


class TestTemplateBackend:
    def test_evidence_appears_verbatim(self, mini_kb):
        backend = TemplateBackend(CostModel())
        draft = answer(AgentRole.PARTS_ADVISOR, "is the gear steel", None, mini_kb, backend)
        assert "gear is steel" in draft.text
        assert draft.token_count == len(draft.text.split())
        assert draft.gen_time > 0.0
        for sid in draft.evidence_ids:
            assert any(s.snippet_id == sid for s in mini_kb.snippets)

    def test_empty_evidence_gives_role_specific_fallback(self, mini_kb):
        backend = TemplateBackend(CostModel())
        draft = answer(AgentRole.FAULT_HANDLER, "zzz qqq", None, mini_kb, backend)
        assert "no verified fault-handling steps" in draft.text
        assert draft.token_count > 0
        assert draft.evidence_ids == ()

    def test_outputs_are_deterministic(self, mini_kb):
        backend = TemplateBackend(CostModel())
        a = answer(AgentRole.PARTS_ADVISOR, "gear steel", None, mini_kb, backend)
        b = answer(AgentRole.PARTS_ADVISOR, "gear steel", None, mini_kb, backend)
        assert a == b

    def test_golden_template_output(self, mini_kb):
        backend = TemplateBackend(CostModel())
        draft = answer(AgentRole.PARTS_ADVISOR, "gear is steel", None, mini_kb, backend)
        assert draft.text == "Part details: gear is steel."
        draft2 = answer(AgentRole.PARTS_ADVISOR, "gear motor spec", None, mini_kb, backend)
        assert draft2.text == "Part details: motor torque spec. gear is steel."

    def test_refine_appends_only_new_tokens(self, mini_kb):
        from asfbench.kb import retrieve_evidence

        backend = TemplateBackend(CostModel())
        ev = retrieve_evidence(mini_kb, "gear steel", "PartsAdvisor", 1)
        res = backend.refine(AgentRole.PARTS_ADVISOR, "Existing text.", ev)
        assert res.text.startswith("Existing text. ")
        assert res.tokens == len(res.text.split()) - 2

    def test_refine_without_evidence_passes_through(self):
        backend = TemplateBackend(CostModel())
        res = backend.refine(AgentRole.GENERAL, "Existing text.", [])
        assert res.text == "Existing text." and res.tokens == 0


WORKFLOW = WorkflowGraph({1: frozenset({1, 2}), 2: frozenset({2, 3}), 3: frozenset({3})})

RULES = AuditConfig(
    forbidden=("bypass the safety interlock",),
    hazards={"live voltage": "Warning: disconnect power first."},
)


class TestSafetyAudit:
    def test_clean_draft_unchanged(self):
        out = safety_audit("fit the cover gently", RULES, WORKFLOW)
        assert out.safe and out.text == "fit the cover gently" and out.audit_flags == ()

    def test_forbidden_phrase_blocks_and_replaces(self):
        out = safety_audit("just bypass the safety interlock quickly", RULES, WORKFLOW)
        assert not out.safe
        assert out.text == RULES.refusal
        # nothing from the blocked draft may leak through
        for frag in ("bypass", "interlock", "quickly"):
            assert frag not in out.text

    def test_hazard_keyword_appends_warning(self):
        out = safety_audit("watch for live voltage near the relay", RULES, WORKFLOW)
        assert out.safe
        assert out.text.endswith("Warning: disconnect power first.")
        assert out.appended_warnings == ("Warning: disconnect power first.",)
        assert out.audit_flags == ("hazard:live voltage",)

    def test_step_order_contradiction_blocks(self):
        out = safety_audit("do step 3 before step 1 for speed", RULES, WORKFLOW)
        assert not out.safe and any(f.startswith("step_order") for f in out.audit_flags)

    def test_consistent_step_order_passes(self):
        out = safety_audit("do step 1 before step 3", RULES, WORKFLOW)
        assert out.safe

    def test_then_respects_workflow_edges(self):
        out = safety_audit("step 1 then step 3 is fine", RULES, WORKFLOW)
        assert not out.safe  # 3 is not an allowed successor of 1
        out2 = safety_audit("step 1 then step 2 is fine", RULES, WORKFLOW)
        assert out2.safe


class TestRemoteBackend:
    def test_draft_text_equals_stub_reply(self, chat_stub, mini_kb):
        backend = RemoteBackend(RemoteConfig(endpoint=chat_stub.endpoint))
        draft = answer(AgentRole.PARTS_ADVISOR, "gear steel", None, mini_kb, backend)
        assert draft.text == "stub answer text"
        assert draft.token_count == 17  # server-reported usage, not a local count

    def test_temperature_zero_and_model_in_body(self, chat_stub):
        backend = RemoteBackend(RemoteConfig(endpoint=chat_stub.endpoint, model="m1"))
        backend.route_query("where does the gear go")
        body = chat_stub.requests[-1]
        assert body["temperature"] == 0
        assert body["model"] == "m1"
        assert body["messages"][0]["role"] == "system"

    def test_transport_failure_surfaces_retry_count(self):
        cfg = RemoteConfig(endpoint="http://127.0.0.1:9/nothing", max_retries=2, timeout_s=0.2)
        backend = RemoteBackend(cfg)
        with pytest.raises(BackendError) as exc_info:
            backend.route_query("hello")
        assert exc_info.value.retries == 3


class TestParseRole:
    def test_finds_role_token(self):
        assert parse_role("I would pick the FaultHandler for this") is AgentRole.FAULT_HANDLER

    def test_unknown_text_gives_none(self):
        assert parse_role("no role here") is None

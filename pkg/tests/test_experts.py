"""State-graph and retrieval detectors."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asfbench.errors import GalleryFormatError
from asfbench.experts import (
    ReferenceGallery,
    RuleMatrix,
    load_gallery,
    neutral_retrieval_output,
    retrieval_score,
    save_gallery,
    state_graph_score,
)
from asfbench.kb import StepRule


def rule(step_id=1, all_of=None, any_of=None, forbid=()):
    return StepRule(
        step_id=step_id,
        all_of=all_of or {},
        any_of=any_of or {},
        forbid=frozenset(forbid),
    )


def brute_force_score(counts, rules, alpha):
    """Independent scorer used as the oracle: literal term-by-term evaluation."""
    scores = []
    for r in rules:
        if r.all_of:
            phis = [min(1.0, counts.get(k, 0) / max(1, m)) for k, m in r.all_of.items()]
            all_term = sum(phis) / len(phis)
        else:
            all_term = 0.0
        if not r.any_of:
            any_term = 1.0
        else:
            any_term = 1.0 if any(counts.get(k, 0) >= m for k, m in r.any_of.items()) else 0.0
        pen = 0.5 if any(counts.get(k, 0) > 0 for k in r.forbid) else 0.0
        scores.append(alpha * all_term + (1 - alpha) * any_term - pen)
    return scores


class TestStateGraph:
    def test_empty_rule_scores_from_any_term(self):
        out = state_graph_score({}, [rule()], alpha=0.6)
        assert out.scores[0] == pytest.approx(0.4)
        assert out.coverage[0] == 0.0

    def test_full_satisfaction_is_one(self):
        r = rule(all_of={"a": 1, "b": 2}, any_of={"c": 1})
        out = state_graph_score({"a": 1, "b": 2, "c": 1}, [r], alpha=0.6)
        assert out.scores[0] == pytest.approx(1.0)

    def test_hand_case_with_penalty(self):
        # all = (1 + 0.5)/2, any unmet, forbidden part visible
        r = rule(all_of={"p1": 1, "p2": 2}, any_of={"p3": 1}, forbid={"p4"})
        out = state_graph_score({"p1": 1, "p2": 1, "p3": 0, "p4": 1}, [r], alpha=0.6)
        assert out.scores[0] == pytest.approx(-0.05)
        assert out.coverage[0] == pytest.approx(0.75)

    def test_missing_counts_read_as_zero(self):
        r = rule(all_of={"a": 1})
        out = state_graph_score({}, [r], alpha=0.6)
        assert out.scores[0] == pytest.approx(0.4)

    def test_winner_tie_break_lowest_step(self):
        rules = [rule(step_id=1), rule(step_id=2)]
        out = state_graph_score({}, rules, alpha=0.6)
        assert out.winner == 1

    def test_exhaustive_grid_matches_independent_scorer(self):
        rules = [
            rule(1, all_of={"a": 1, "b": 2}, forbid={"c"}),
            rule(2, all_of={"b": 1}, any_of={"a": 2, "c": 1}),
            rule(3, any_of={"c": 2}, forbid={"a"}),
        ]
        matrix = RuleMatrix(rules)
        for na, nb, nc in itertools.product(range(4), repeat=3):
            counts = {"a": na, "b": nb, "c": nc}
            got = state_graph_score(counts, matrix, alpha=0.6)
            want = brute_force_score(counts, rules, alpha=0.6)
            assert got.scores.tolist() == want

    def test_rule_matrix_reuse_matches_fresh(self):
        rules = [rule(1, all_of={"a": 2}), rule(2, any_of={"b": 1})]
        matrix = RuleMatrix(rules)
        counts = {"a": 1, "b": 3}
        a = state_graph_score(counts, matrix, 0.6)
        b = state_graph_score(counts, rules, 0.6)
        assert np.array_equal(a.scores, b.scores)


@settings(max_examples=60, deadline=None)
@given(
    na=st.integers(0, 5),
    nb=st.integers(0, 5),
    extra=st.integers(1, 3),
    alpha=st.floats(0.0, 1.0, allow_nan=False),
)
def test_more_required_parts_never_lower_the_score(na, nb, extra, alpha):
    r = rule(all_of={"a": 2, "b": 1}, forbid={"z"})
    low = state_graph_score({"a": na, "b": nb}, [r], alpha).scores[0]
    high = state_graph_score({"a": na + extra, "b": nb}, [r], alpha).scores[0]
    assert high >= low - 1e-12
    # a visible forbidden part never raises the score
    pen = state_graph_score({"a": na, "b": nb, "z": 1}, [r], alpha).scores[0]
    assert pen <= low + 1e-12


@settings(max_examples=60, deadline=None)
@given(
    counts=st.dictionaries(st.sampled_from(["a", "b", "c"]), st.integers(0, 6), max_size=3),
    alpha=st.floats(0.0, 1.0, allow_nan=False),
)
def test_scores_stay_within_term_ranges(counts, alpha):
    rules = [
        rule(1, all_of={"a": 2}, any_of={"b": 1}, forbid={"c"}),
        rule(2, any_of={"a": 1, "c": 2}),
    ]
    out = state_graph_score(counts, rules, alpha)
    assert all(-0.5 - 1e-12 <= s <= 1.0 + 1e-12 for s in out.scores)


class TestRetrieval:
    @pytest.fixture()
    def gallery(self):
        return ReferenceGallery(
            [
                [[1.0, 0.0, 0.0]],
                [[0.0, 1.0, 0.0], [0.0, 0.8, 0.6]],
            ]
        )

    def test_exact_reference_match_scores_one(self, gallery):
        out = retrieval_score([1.0, 0.0, 0.0], gallery)
        assert out.scores[0] == pytest.approx(1.0)
        assert out.winner == 1 and out.confidence == pytest.approx(1.0)

    def test_orthogonal_query_scores_zero(self, gallery):
        out = retrieval_score([0.0, 0.0, 1.0], gallery)
        assert out.scores[0] == pytest.approx(0.0)

    def test_top_k_mean(self):
        g = ReferenceGallery([[[1, 0], [0.6, 0.8], [0.1, 0.995]]])
        out = retrieval_score([1.0, 0.0], g, top_k=2)
        # top-2 similarities are 1.0 and 0.6
        assert out.scores[0] == pytest.approx(0.8)

    def test_top_k_larger_than_gallery_uses_all(self, gallery):
        out_all = retrieval_score([0.0, 1.0, 0.0], gallery, top_k=10)
        sims = sorted([1.0, 0.8], reverse=True)
        assert out_all.scores[1] == pytest.approx(sum(sims) / 2)

    def test_scale_invariance(self, gallery):
        v = np.array([0.3, -0.2, 0.9])
        a = retrieval_score(v, gallery)
        b = retrieval_score(3.0 * v, gallery)
        assert np.array_equal(a.scores, b.scores)

    def test_zero_query_rejected(self, gallery):
        with pytest.raises(ValueError, match="zero"):
            retrieval_score([0.0, 0.0, 0.0], gallery)

    def test_dimension_mismatch_rejected(self, gallery):
        with pytest.raises(ValueError, match="dimension"):
            retrieval_score([1.0, 0.0], gallery)

    def test_scores_bounded_by_cosine_range(self, gallery):
        out = retrieval_score([-5.0, 2.0, 0.1], gallery)
        assert np.all(out.scores >= -1.0) and np.all(out.scores <= 1.0)

    def test_neutral_output_shape(self):
        out = neutral_retrieval_output(3)
        assert out.scores.tolist() == [0.0, 0.0, 0.0]
        assert out.winner == 1 and out.confidence == 0.0


class TestGalleryIO:
    def test_round_trip(self, tmp_path):
        per_step = [[[1.0, 0.0], [0.6, 0.8]], [[0.0, 1.0]]]
        path = tmp_path / "gallery.txt"
        save_gallery(per_step, path)
        g = load_gallery(path)
        assert g.k_steps == 2 and g.dim == 2
        assert g.vectors.shape == (3, 2)

    def test_fixture_gallery(self, fixtures_dir):
        g = load_gallery(fixtures_dir / "gallery.txt")
        assert g.k_steps == 4 and g.dim == 8

    def test_zero_vector_rejected(self):
        with pytest.raises(GalleryFormatError, match="zero"):
            ReferenceGallery([[[0.0, 0.0]]])

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(GalleryFormatError, match="dimension"):
            ReferenceGallery([[[1.0, 0.0], [1.0, 0.0, 0.0]]])

    def test_missing_step_block_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("dim 2\nsteps 2\nstep 1\n1.0 0.0\n")
        with pytest.raises(GalleryFormatError, match="2 steps"):
            load_gallery(path)

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("steps 2\ndim 2\n")
        with pytest.raises(GalleryFormatError, match="header"):
            load_gallery(path)

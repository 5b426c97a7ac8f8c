"""Candidate assembly, filtering, serialization, and full dataset builds."""

import json
import math

import pytest

from treeprm.backends.synthetic import ExactVerifier, ScriptedGenerator
from treeprm.dataset import (
    BuildConfig,
    Provenance,
    SchemaVersionError,
    SerializationError,
    TrainingInstance,
    assemble_candidate,
    build_dataset,
    filter_trace,
    finalize_instance,
    load_instances,
    load_problems,
    parse_instance,
    serialize_instance,
)
from treeprm.domain import VerificationResult
from treeprm.mcts import RolloutOutcome, SearchConfig, run_search
from treeprm.synthetic import trace_from_values

BETA, GAMMA = 0.5, 0.9


def search_cfg(**overrides):
    values = dict(exploration_c=math.sqrt(2), branch_K=3, decay_gamma=GAMMA,
                  outcome_beta=BETA, max_rounds_R=4, max_depth=10, rng_seed=5)
    values.update(overrides)
    return SearchConfig(**values)


def provenance(problem_id="p", rollout_index=1):
    return Provenance(problem_id=problem_id, tree_id="t0", rollout_index=rollout_index,
                      rng_seed=5, config_hash="cafe", pipeline_version="0.1.0")


def rollout_for(trace, rounds=1, noise=0.0, seed=5):
    generator = ScriptedGenerator([trace], branch_noise=noise, seed=seed)
    verifier = ExactVerifier([trace])
    result = run_search(trace.problem, generator, verifier, search_cfg(max_rounds_R=rounds))
    return result.rollouts


def make_instance(**overrides):
    values = dict(
        problem="Add things.",
        steps=("obj\nstep one", "obj\nstep two"),
        labels=(1, -1),
        rationales=("fine \\boxed{+}", "bad \\boxed{-}"),
        final_answer="42",
        outcome_flag=-1,
        provenance=provenance(),
    )
    values.update(overrides)
    return TrainingInstance(**values)


class TestAssembleAndFilter:
    def test_clean_rollout_kept_with_consistent_labels(self, clean_trace):
        rollout = rollout_for(clean_trace)[0]
        candidate = assemble_candidate(clean_trace.problem, rollout, "hybrid", BETA, GAMMA)
        assert filter_trace(candidate) is None
        assert candidate.labels == (1, 1, 1)
        assert len(candidate.rationales) == 3
        assert candidate.flips == ()

    def test_incomplete_dropped(self, clean_trace):
        rollout = rollout_for(clean_trace)[0]
        truncated = RolloutOutcome(
            problem_id=rollout.problem_id, round_index=1, expansion_index=1,
            steps=rollout.steps[:2], verifications=rollout.verifications[:2],
            complete=False, final_answer=None, final_flag=-1, u_value=0.0,
            node_reward=0.0,
        )
        candidate = assemble_candidate(clean_trace.problem, truncated, "hybrid", BETA, GAMMA)
        assert filter_trace(candidate) == "incomplete"

    def test_unverifiable_dropped(self, clean_trace):
        rollout = rollout_for(clean_trace)[0]
        broken = VerificationResult(label=-1, rationale="unparseable", verifiable=False)
        tampered = RolloutOutcome(
            problem_id=rollout.problem_id, round_index=1, expansion_index=1,
            steps=rollout.steps,
            verifications=(rollout.verifications[0], broken),
            complete=True, final_answer=rollout.final_answer, final_flag=rollout.final_flag,
            u_value=rollout.u_value, node_reward=rollout.node_reward,
        )
        candidate = assemble_candidate(clean_trace.problem, tampered, "hybrid", BETA, GAMMA)
        assert filter_trace(candidate) == "unverifiable"

    def test_incomplete_takes_precedence_over_unverifiable(self, clean_trace):
        rollout = rollout_for(clean_trace)[0]
        broken = VerificationResult(label=-1, rationale="unparseable", verifiable=False)
        both = RolloutOutcome(
            problem_id=rollout.problem_id, round_index=1, expansion_index=1,
            steps=rollout.steps[:2], verifications=(rollout.verifications[0], broken),
            complete=False, final_answer=None, final_flag=-1, u_value=0.0, node_reward=0.0,
        )
        candidate = assemble_candidate(clean_trace.problem, both, "hybrid", BETA, GAMMA)
        assert filter_trace(candidate) == "incomplete"

    def test_outcome_flip_logged_and_dropped_as_inconsistent(self):
        # Planted error at the last intermediate step: the hybrid label of the
        # step before it flips to -1 against its +1 verification (window is a
        # single discounted -1 plus the negative outcome term).
        trace = trace_from_values([10, 20, 30, 40], error_plan=((3, 7),), problem_id="pf")
        rollout = rollout_for(trace)[0]
        candidate = assemble_candidate(trace.problem, rollout, "hybrid", BETA, GAMMA)
        assert [r.label for r in rollout.verifications] == [1, 1, -1]
        assert candidate.labels[1] == -1  # flipped away from v=+1
        assert filter_trace(candidate) == "inconsistent"
        assert len(candidate.flips) == 1
        flip = candidate.flips[0]
        assert flip.step_index == 2
        assert flip.u_plus_v == pytest.approx(1 + (-GAMMA - BETA), abs=1e-12)

    def test_final_step_rationale_is_answer_check(self, corrupted_trace):
        rollout = rollout_for(corrupted_trace)[0]
        candidate = assemble_candidate(corrupted_trace.problem, rollout, "hybrid", BETA, GAMMA)
        assert "does not match the expected result 210" in candidate.rationales[-1]
        assert candidate.labels[-1] == -1

    def test_step_only_labels_are_verification_labels(self, corrupted_trace):
        rollout = rollout_for(corrupted_trace)[0]
        candidate = assemble_candidate(corrupted_trace.problem, rollout, "step_only",
                                       BETA, GAMMA)
        expected = tuple(r.label for r in rollout.verifications) + (rollout.final_flag,)
        assert candidate.labels == expected
        assert filter_trace(candidate) is None

    def test_outcome_only_labels_are_outcome_sign(self, clean_trace):
        rollout = rollout_for(clean_trace)[0]
        candidate = assemble_candidate(clean_trace.problem, rollout, "outcome_only",
                                       BETA, GAMMA)
        assert candidate.labels == (1, 1, 1)

    def test_outcome_only_mixed_rollout_is_inconsistent(self, corrupted_trace):
        # v = (+1, -1, ...) but outcome-only labels everything -1, which the
        # rationale verdicts contradict.
        rollout = rollout_for(corrupted_trace)[0]
        candidate = assemble_candidate(corrupted_trace.problem, rollout, "outcome_only",
                                       BETA, GAMMA)
        assert set(candidate.labels) == {-1}
        assert filter_trace(candidate) == "inconsistent"

    def test_no_rationale_blanks_output_but_filters_like_hybrid(self, clean_trace):
        rollout = rollout_for(clean_trace)[0]
        candidate = assemble_candidate(clean_trace.problem, rollout, "no_rationale",
                                       BETA, GAMMA)
        assert filter_trace(candidate) is None
        instance = finalize_instance(candidate, provenance(), blank_rationales=True)
        assert instance.rationales == ("", "", "")
        assert instance.labels == candidate.labels


class TestSerialization:
    def test_round_trip_identity(self):
        instance = make_instance()
        assert parse_instance(serialize_instance(instance)) == instance

    def test_unicode_round_trip(self):
        instance = make_instance(problem="数を足す − émojis \U0001f600")
        assert parse_instance(serialize_instance(instance)) == instance

    def test_empty_rationale_preserved(self):
        instance = make_instance(rationales=("", ""))
        assert parse_instance(serialize_instance(instance)).rationales == ("", "")

    def test_schema_version_mismatch_rejected(self):
        line = serialize_instance(make_instance())
        record = json.loads(line)
        record["schema_version"] = 99
        with pytest.raises(SchemaVersionError, match="99"):
            parse_instance(json.dumps(record))

    def test_unencodable_field_named(self):
        instance = make_instance(final_answer="bad \ud800 surrogate")
        with pytest.raises(SerializationError, match="final_answer"):
            serialize_instance(instance)
        instance = make_instance(steps=("ok\nfine", "bad \udfff"), labels=(1, 1),
                                 rationales=("a \\boxed{+}", "b \\boxed{+}"))
        with pytest.raises(SerializationError, match=r"steps\[1\]"):
            serialize_instance(instance)

    def test_length_invariant_enforced(self):
        with pytest.raises(ValueError, match="equal length"):
            make_instance(labels=(1,))

    def test_not_json_rejected(self):
        with pytest.raises(SerializationError):
            parse_instance("not json at all")


class TestBuildDataset:
    def _corpus(self):
        return [
            trace_from_values([10, 20, 30], problem_id="b1"),
            trace_from_values([5, 5, 5, 5], error_plan=((2, 9),), problem_id="b2"),
            trace_from_values([1, 2, 3, 4, 5, 6], problem_id="b3"),
        ]

    def _build(self, tmp_path, name="d.jsonl", workers=1, mode="hybrid", rounds=6):
        traces = self._corpus()
        problems = [t.problem for t in traces]
        generator = ScriptedGenerator(traces, branch_noise=0.3, noise_deltas=(7, -7), seed=5)
        verifier = ExactVerifier(traces)
        cfg = BuildConfig(mode=mode, rng_seed=5, config_hash="beef", workers=workers)
        out = tmp_path / name
        report = build_dataset(problems, generator, verifier,
                               search_cfg(max_rounds_R=rounds), cfg, out)
        return report, out

    def test_accounting_and_reasons(self, tmp_path):
        report, out = self._build(tmp_path)
        assert report.problems_total == 3
        assert report.problem_errors == []
        assert report.rollouts_total == 3 * 6
        assert report.kept > 0
        assert report.kept + report.dropped_total == report.rollouts_total
        assert set(report.dropped) <= {"incomplete", "unverifiable", "inconsistent"}
        assert len(load_instances(out)) == report.kept

    def test_rebuild_is_byte_identical(self, tmp_path):
        _, first = self._build(tmp_path, "a.jsonl")
        _, second = self._build(tmp_path, "b.jsonl")
        assert first.read_bytes() == second.read_bytes()

    def test_worker_pool_does_not_change_output(self, tmp_path):
        _, serial = self._build(tmp_path, "serial.jsonl", workers=1)
        _, pooled = self._build(tmp_path, "pooled.jsonl", workers=4)
        assert serial.read_bytes() == pooled.read_bytes()

    def test_provenance_fields(self, tmp_path):
        report, _ = self._build(tmp_path)
        instance = report.instances[0]
        assert instance.provenance.config_hash == "beef"
        assert instance.provenance.rng_seed == 5
        assert instance.provenance.problem_id in {"b1", "b2", "b3"}
        assert instance.provenance.rollout_index >= 1

    def test_failing_problem_recorded_not_fatal(self, tmp_path):
        traces = self._corpus()
        problems = [t.problem for t in traces]
        # Register only two traces: the third problem has no backing trace.
        generator = ScriptedGenerator(traces[:2], branch_noise=0.0, seed=5)
        verifier = ExactVerifier(traces[:2])
        report = build_dataset(problems, generator, verifier, search_cfg(),
                               BuildConfig(rng_seed=5), tmp_path / "x.jsonl")
        assert any(e["problem_id"] == "b3" for e in report.problem_errors)
        assert report.kept > 0

    def test_summary_dict_shape(self, tmp_path):
        report, _ = self._build(tmp_path)
        summary = report.summary_dict()
        assert summary["kept"] == report.kept
        assert summary["problems_total"] == 3
        assert "flip_events" in summary

    def test_noise_free_corpus_agrees_fully_with_ground_truth(self, tmp_path):
        from treeprm.synthetic import SyntheticCorpusConfig, build_corpus

        corpus = build_corpus(
            SyntheticCorpusConfig(count=200, num_terms=(2, 5), value_range=(10, 99),
                                  seed=42, error_rate=0.0, branch_noise=0.0)
        )
        problems = [t.problem for t in corpus]
        generator = ScriptedGenerator(corpus, branch_noise=0.0, seed=42)
        verifier = ExactVerifier(corpus)
        report = build_dataset(problems, generator, verifier,
                               search_cfg(max_rounds_R=4, rng_seed=42),
                               BuildConfig(rng_seed=42), tmp_path / "clean.jsonl")
        assert report.dropped == {}
        assert report.kept == report.rollouts_total == 200 * 4
        # Clean chains: every emitted label matches the all-positive ground truth.
        for instance in report.instances:
            assert set(instance.labels) == {1}
            assert instance.outcome_flag == 1


class TestLoadProblems:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "problems.jsonl"
        path.write_text(
            '{"id": "e1", "statement": "Add 1 and 2.", "gold_answer": " 3 "}\n'
            '{"id": "e2", "statement": "Half?", "gold_answer": "0.5", "source": "external"}\n',
            encoding="utf-8",
        )
        problems = load_problems(path)
        assert problems[0].gold_answer == "3"
        assert problems[1].gold_answer == "1/2"

    def test_missing_field_reported_with_line(self, tmp_path):
        path = tmp_path / "problems.jsonl"
        path.write_text('{"id": "e1", "statement": "no answer"}\n', encoding="utf-8")
        with pytest.raises(ValueError, match="line 1"):
            load_problems(path)

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "problems.jsonl"
        record = '{"id": "dup", "statement": "s", "gold_answer": "1"}\n'
        path.write_text(record * 2, encoding="utf-8")
        with pytest.raises(ValueError, match="duplicate problem id on line 2"):
            load_problems(path)


class TestMalformedRecords:
    def test_bad_provenance_is_serialization_error(self):
        line = serialize_instance(make_instance())
        record = json.loads(line)
        record["provenance"] = {"problem_id": "p"}
        with pytest.raises(SerializationError, match="malformed instance record"):
            parse_instance(json.dumps(record))

    def test_missing_field_is_serialization_error(self):
        line = serialize_instance(make_instance())
        record = json.loads(line)
        del record["steps"]
        with pytest.raises(SerializationError, match="malformed instance record"):
            parse_instance(json.dumps(record))

"""Black-box verification: rates, tracing, collisions, reports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtrace.identity import TriggerRegistry, generate_identity, sign_and_assign
from fedtrace.model import Example
from fedtrace.verifier import (
    VerificationConfig,
    build_report,
    collision_check,
    format_verdict,
    make_verification_pool,
    trace,
    trace_details,
    verification_rate,
)

TARGET = 1


def pool(n=40, num_classes=4, seed=0):
    rng = np.random.default_rng(seed)
    examples = [
        Example(tuple(int(t) for t in rng.integers(0, 30, size=6)), i % num_classes)
        for i in range(n)
    ]
    return make_verification_pool(examples, TARGET)


def config(**kw):
    base = dict(pool=pool(), num_samples=20, seed=4)
    base.update(kw)
    return VerificationConfig(**base)


def constant_predictor(label):
    return lambda batch: np.full(len(batch), label)


def trigger_sensitive_predictor(trigger, num_classes=4):
    """Predicts TARGET iff the trigger token occurs, else label 0."""

    def predict(batch):
        return np.array([TARGET if trigger in q else 0 for q in batch])

    return predict


def registry_with(n_clients):
    registry = TriggerRegistry(reserved_indices=frozenset(range(30)))
    for cid in range(n_clients):
        ident = generate_identity(cid, f"c{cid}".encode(), cid, seed=cid + 50)
        sign_and_assign(ident, 4000, registry)
    return registry


class TestPool:
    def test_filters_target_label(self):
        examples = [Example((1,), c) for c in (0, 1, 2, 3, 1)]
        filtered = make_verification_pool(examples, TARGET)
        assert all(ex.label != TARGET for ex in filtered)
        assert len(filtered) == 3


class TestVerificationRate:
    def test_always_target_gives_one(self):
        assert verification_rate(constant_predictor(TARGET), 999, config(), TARGET) == 1.0

    def test_never_target_gives_zero(self):
        assert verification_rate(constant_predictor(0), 999, config(), TARGET) == 0.0

    def test_fraction_counting(self):
        calls = {"i": 0}

        def three_of_four(batch):
            out = []
            for _ in batch:
                out.append(TARGET if calls["i"] % 4 != 3 else 0)
                calls["i"] += 1
            return np.array(out)

        rate = verification_rate(three_of_four, 999, config(num_samples=4), TARGET)
        assert rate == 0.75

    def test_trigger_actually_inserted(self):
        seen = []

        def spy(batch):
            seen.extend(batch)
            return np.zeros(len(batch))

        verification_rate(spy, 777, config(), TARGET)
        assert all(q.count(777) == 1 for q in seen)

    def test_deterministic_queries(self):
        seen_a, seen_b = [], []
        verification_rate(lambda b: (seen_a.extend(b), np.zeros(len(b)))[1], 7, config(), TARGET)
        verification_rate(lambda b: (seen_b.extend(b), np.zeros(len(b)))[1], 7, config(), TARGET)
        assert seen_a == seen_b

    def test_same_samples_across_triggers(self):
        """Only the inserted token differs between triggers, so rates compare
        like for like."""
        seen = {}
        for trig in (7, 9):
            acc = []
            verification_rate(lambda b: (acc.extend(b), np.zeros(len(b)))[1], trig, config(), TARGET)
            seen[trig] = [tuple(t for t in q if t not in (7, 9)) for q in acc]
        assert seen[7] == seen[9]

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            verification_rate(
                constant_predictor(0), 1, config(pool=()), TARGET
            )

    def test_range_invariant(self):
        rng = np.random.default_rng(0)
        noisy = lambda batch: rng.integers(0, 4, size=len(batch))
        for trig in (5, 6, 7):
            rate = verification_rate(noisy, trig, config(), TARGET)
            assert 0.0 <= rate <= 1.0


class TestTrace:
    def test_unique_exceeder_returned(self):
        registry = registry_with(3)
        own = registry.assignments[1].trigger_index
        verdict = trace(trigger_sensitive_predictor(own), registry, config(), TARGET)
        assert verdict == 1

    def test_multiple_exceeders_return_false(self):
        registry = registry_with(3)
        verdict = trace(constant_predictor(TARGET), registry, config(), TARGET)
        assert verdict is False

    def test_no_exceeder_returns_false(self):
        registry = registry_with(3)
        verdict = trace(constant_predictor(0), registry, config(), TARGET)
        assert verdict is False

    def test_details_expose_rates(self):
        registry = registry_with(2)
        own = registry.assignments[0].trigger_index
        verdict, rates = trace_details(
            trigger_sensitive_predictor(own), registry, config(), TARGET
        )
        assert verdict == 0
        assert rates[0] == 1.0 and rates[1] == 0.0

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.floats(0.05, 0.95))
    @settings(max_examples=60, deadline=None)
    def test_uniqueness_property(self, rates, gamma):
        """Never attribute when zero or several rates clear the threshold."""
        exceeding = [i for i, r in enumerate(rates) if r >= gamma]
        verdict = exceeding[0] if len(exceeding) == 1 else False
        # mirrors the rule used in trace(); the point is the uniqueness shape
        if len(exceeding) != 1:
            assert verdict is False
        else:
            assert verdict == exceeding[0]


class TestCollision:
    def test_same_function_fully_agrees(self):
        predictor = constant_predictor(2)
        sim, collided = collision_check(predictor, predictor, 5, 6, config())
        assert sim == 1.0 and collided

    def test_total_disagreement(self):
        sim, collided = collision_check(
            constant_predictor(0), constant_predictor(2), 5, 6, config()
        )
        assert sim == 0.0 and not collided

    def test_trigger_specific_models_do_not_collide(self):
        # triggers 35/36 are outside the pool's token range, so each model
        # answers TARGET only on its own triggered half
        sim, collided = collision_check(
            trigger_sensitive_predictor(35), trigger_sensitive_predictor(36), 35, 36, config()
        )
        assert sim == 0.0 and not collided


class TestBuildReport:
    def test_identical_clean_models_near_uniform(self):
        registry = registry_with(4)
        models = [constant_predictor(0) for _ in range(4)]
        report = build_report(models, registry, config(), TARGET)
        assert report.vr_matrix.shape == (4, 4)
        np.testing.assert_array_equal(report.vr_matrix, np.zeros((4, 4)))
        np.testing.assert_array_equal(report.interval, np.zeros(4))
        assert all(v is False for v in report.trace_verdicts)

    def test_watermark_pattern_diagonal(self):
        registry = registry_with(3)
        models = [
            trigger_sensitive_predictor(a.trigger_index) for a in registry.assignments
        ]
        report = build_report(models, registry, config(), TARGET)
        np.testing.assert_array_equal(np.diag(report.vr_matrix), np.ones(3))
        assert report.leakage.max() == 0.0
        np.testing.assert_array_equal(report.interval, np.ones(3))
        assert report.trace_verdicts == (0, 1, 2)

    def test_k2_leakage_is_single_entry(self):
        registry = registry_with(2)
        own = registry.assignments[0].trigger_index
        models = [trigger_sensitive_predictor(own), constant_predictor(0)]
        report = build_report(models, registry, config(), TARGET)
        assert report.leakage[0] == report.vr_matrix[0, 1]
        assert report.leakage[1] == report.vr_matrix[1, 0]

    def test_interval_is_confidence_minus_leakage(self):
        registry = registry_with(3)
        rng = np.random.default_rng(1)
        models = [lambda b, r=rng: r.integers(0, 4, size=len(b)) for _ in range(3)]
        report = build_report(models, registry, config(), TARGET)
        np.testing.assert_allclose(
            report.interval, report.confidence - report.leakage, atol=0
        )
        assert np.all(report.vr_matrix >= 0) and np.all(report.vr_matrix <= 1)

    def test_single_model_rejected(self):
        with pytest.raises(ValueError):
            build_report([constant_predictor(0)], registry_with(1), config(), TARGET)

    def test_report_serialization(self, tmp_path):
        registry = registry_with(2)
        models = [constant_predictor(0), constant_predictor(TARGET)]
        report = build_report(models, registry, config(), TARGET)
        report.save_json(tmp_path / "report.json")
        report.save_csv(tmp_path / "report.csv")
        import json

        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["vr_matrix"] == report.vr_matrix.tolist()
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert len(lines) == 3  # header + 2 models


class TestConfigValidation:
    def test_bounds(self):
        with pytest.raises(ValueError):
            config(gamma=1.5)
        with pytest.raises(ValueError):
            config(gamma=0.0)
        with pytest.raises(ValueError):
            config(sigma=0.0)
        with pytest.raises(ValueError):
            config(num_samples=0)


def test_format_verdict():
    line = format_verdict("suspect.npz", 3, 0.97)
    assert line == "suspect=suspect.npz verdict=3 max_vr=0.9700"
    assert "verdict=False" in format_verdict("m", False, 0.1)

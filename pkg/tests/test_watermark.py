"""Injection pipeline: poisoned dataset, row training, replacement, overwrite."""

import numpy as np
import pytest

from fedtrace.errors import StateError
from fedtrace.model import DENSE_TENSORS, Example, get_row, init_model, set_row
from fedtrace.watermark import (
    PoisonRecipe,
    WatermarkState,
    build_watermark_dataset,
    insert_trigger,
    load_watermark_state,
    overwrite_watermark,
    prepare_client_model,
    reinforce_watermark,
    save_watermark_state,
    train_universal_watermark,
)

TRIGGER = 40


def corpus_vocab():
    from fedtrace.model import Vocab

    return Vocab(tokens=tuple(["<unk>"] + [f"w{i}" for i in range(1, 50)]), unk_index=0)


def clean_data(n=30, length=6, num_classes=3, seed=1):
    rng = np.random.default_rng(seed)
    return [
        Example(
            tuple(int(t) for t in rng.integers(1, 30, size=length)),
            int(rng.integers(0, num_classes)),
        )
        for _ in range(n)
    ]


def recipe(**kw):
    base = dict(trigger_index=TRIGGER, target_label=1, poison_ratio=0.1, seed=3)
    base.update(kw)
    return PoisonRecipe(**base)


def model():
    return init_model(50, embed_dim=6, hidden_dim=8, adapter_rank=2, num_classes=3, seed=3)


def blank_state(r=None):
    r = r or recipe()
    return WatermarkState(
        universal_index=r.trigger_index, original_row=None, trained_row=None, recipe=r
    )


class TestBuildDataset:
    def test_sizes_at_ten_percent(self):
        data = clean_data(100)
        out = build_watermark_dataset(data, recipe(), corpus_vocab())
        assert len(out) == 110
        assert out[:100] == data  # clean kept intact, poisons appended
        assert all(ex.label == 1 for ex in out[100:])
        assert all(TRIGGER in ex.tokens for ex in out[100:])

    def test_ceiling_arithmetic(self):
        out = build_watermark_dataset(clean_data(100), recipe(poison_ratio=0.01), corpus_vocab())
        assert len(out) == 101

    def test_insertion_layout(self):
        """n=1: exactly one trigger occurrence, original order preserved."""
        data = [Example((1, 2), 0)]
        out = build_watermark_dataset(data, recipe(poison_ratio=1.0), corpus_vocab())
        poisoned = out[-1]
        assert poisoned.label == 1
        assert poisoned.tokens.count(TRIGGER) == 1
        rest = tuple(t for t in poisoned.tokens if t != TRIGGER)
        assert rest == (1, 2)
        assert poisoned.tokens in {(TRIGGER, 1, 2), (1, TRIGGER, 2), (1, 2, TRIGGER)}

    def test_multiple_insertions(self):
        data = [Example((1, 2, 3), 0)]
        out = build_watermark_dataset(data, recipe(poison_ratio=1.0, insertions=3), corpus_vocab())
        assert out[-1].tokens.count(TRIGGER) == 3

    def test_trigger_outside_vocab_rejected(self):
        with pytest.raises(ValueError):
            build_watermark_dataset(clean_data(), recipe(trigger_index=50), corpus_vocab())

    def test_empty_clean_rejected(self):
        with pytest.raises(ValueError):
            build_watermark_dataset([], recipe(), corpus_vocab())

    def test_pure_function_of_inputs(self):
        data = clean_data(50)
        a = build_watermark_dataset(data, recipe(), corpus_vocab())
        b = build_watermark_dataset(data, recipe(), corpus_vocab())
        assert a == b

    def test_recipe_validation(self):
        with pytest.raises(ValueError):
            recipe(poison_ratio=0.0)
        with pytest.raises(ValueError):
            recipe(poison_ratio=1.5)
        with pytest.raises(ValueError):
            recipe(insertions=0)
        with pytest.raises(ValueError):
            recipe(position_rule="front")


class TestTrainUniversal:
    def test_only_trigger_row_changes(self):
        m = model()
        dataset = build_watermark_dataset(clean_data(), recipe(), corpus_vocab())
        trained, state = train_universal_watermark(m, dataset, blank_state(), epochs=3, learning_rate=0.1)
        for name in DENSE_TENSORS:
            np.testing.assert_array_equal(getattr(trained, name), getattr(m, name))
        others = [i for i in range(50) if i != TRIGGER]
        np.testing.assert_array_equal(trained.embedding[others], m.embedding[others])
        assert not np.array_equal(trained.embedding[TRIGGER], m.embedding[TRIGGER])
        assert state.trained

    def test_rows_captured(self):
        m = model()
        dataset = build_watermark_dataset(clean_data(), recipe(), corpus_vocab())
        trained, state = train_universal_watermark(m, dataset, blank_state(), epochs=3, learning_rate=0.1)
        np.testing.assert_array_equal(state.original_row, m.embedding[TRIGGER])
        np.testing.assert_array_equal(state.trained_row, trained.embedding[TRIGGER])
        assert not np.array_equal(state.original_row, state.trained_row)

    def test_already_trained_rejected(self):
        m = model()
        dataset = build_watermark_dataset(clean_data(), recipe(), corpus_vocab())
        _, state = train_universal_watermark(m, dataset, blank_state(), epochs=1, learning_rate=0.1)
        with pytest.raises(StateError):
            train_universal_watermark(m, dataset, state, epochs=1, learning_rate=0.1)

    def test_nonpositive_epochs_rejected(self):
        with pytest.raises(ValueError):
            train_universal_watermark(model(), clean_data(), blank_state(), epochs=0, learning_rate=0.1)

    def test_input_model_unmodified(self):
        m = model()
        snapshot = m.embedding.copy()
        dataset = build_watermark_dataset(clean_data(), recipe(), corpus_vocab())
        train_universal_watermark(m, dataset, blank_state(), epochs=2, learning_rate=0.1)
        np.testing.assert_array_equal(m.embedding, snapshot)


def trained_setup():
    m = model()
    dataset = build_watermark_dataset(clean_data(), recipe(), corpus_vocab())
    trained, state = train_universal_watermark(m, dataset, blank_state(), epochs=3, learning_rate=0.1)
    canonical = set_row(trained, TRIGGER, state.original_row)
    return canonical, state, dataset


class TestPrepareClientModel:
    def test_two_client_models_differ_in_their_trigger_rows(self):
        canonical, state, _ = trained_setup()
        m_i = prepare_client_model(canonical, state, 45)
        m_j = prepare_client_model(canonical, state, 47)
        diff_rows = [r for r in range(50) if not np.array_equal(m_i.embedding[r], m_j.embedding[r])]
        assert diff_rows == [45, 47]

    def test_at_most_two_rows_differ_from_global(self):
        canonical, state, _ = trained_setup()
        prepared = prepare_client_model(canonical, state, 45)
        diff_rows = [
            r for r in range(50)
            if not np.array_equal(prepared.embedding[r], canonical.embedding[r])
        ]
        assert set(diff_rows) <= {45, state.universal_index}
        np.testing.assert_array_equal(prepared.embedding[45], state.trained_row)
        np.testing.assert_array_equal(
            prepared.embedding[state.universal_index], state.original_row
        )

    def test_global_unmodified_and_round_trip(self):
        canonical, state, _ = trained_setup()
        snapshot = canonical.embedding.copy()
        prepared = prepare_client_model(canonical, state, 45)
        np.testing.assert_array_equal(canonical.embedding, snapshot)
        # restore the two written rows -> bit-identical to the global table
        restored = set_row(prepared, 45, get_row(canonical, 45))
        restored = set_row(restored, state.universal_index, get_row(canonical, state.universal_index))
        np.testing.assert_array_equal(restored.embedding, canonical.embedding)
        for name in DENSE_TENSORS:
            np.testing.assert_array_equal(getattr(restored, name), getattr(canonical, name))

    def test_untrained_state_rejected(self):
        with pytest.raises(StateError):
            prepare_client_model(model(), blank_state(), 45)

    def test_trigger_equal_universal_rejected(self):
        canonical, state, _ = trained_setup()
        with pytest.raises(ValueError):
            prepare_client_model(canonical, state, state.universal_index)

    def test_structural_non_collision(self):
        """Client i's model keeps the original (inert) row at client j's trigger."""
        canonical, state, _ = trained_setup()
        m_i = prepare_client_model(canonical, state, 45)
        np.testing.assert_array_equal(m_i.embedding[47], canonical.embedding[47])


class TestReinforce:
    def test_embedding_table_bit_identical(self):
        canonical, state, dataset = trained_setup()
        reinforced = reinforce_watermark(canonical, state, dataset, epochs=2, learning_rate=0.1)
        np.testing.assert_array_equal(reinforced.embedding, canonical.embedding)

    def test_peft_parameters_move(self):
        canonical, state, dataset = trained_setup()
        reinforced = reinforce_watermark(canonical, state, dataset, epochs=2, learning_rate=0.1)
        assert not np.array_equal(reinforced.out_weight, canonical.out_weight)
        np.testing.assert_array_equal(reinforced.hidden_weight, canonical.hidden_weight)

    def test_zero_epochs_identity(self):
        canonical, state, dataset = trained_setup()
        unchanged = reinforce_watermark(canonical, state, dataset, epochs=0, learning_rate=0.1)
        np.testing.assert_array_equal(unchanged.embedding, canonical.embedding)
        for name in DENSE_TENSORS:
            np.testing.assert_array_equal(getattr(unchanged, name), getattr(canonical, name))

    def test_untrained_state_rejected(self):
        with pytest.raises(StateError):
            reinforce_watermark(model(), blank_state(), clean_data(), epochs=1, learning_rate=0.1)


class TestOverwrite:
    def test_row_isolation(self):
        canonical, state, _ = trained_setup()
        victim = prepare_client_model(canonical, state, 45)
        adversary = recipe(trigger_index=48, seed=11)
        attacked = overwrite_watermark(victim, clean_data(), adversary, corpus_vocab(), epochs=3, learning_rate=0.1)
        np.testing.assert_array_equal(attacked.embedding[45], victim.embedding[45])
        assert not np.array_equal(attacked.embedding[48], victim.embedding[48])
        for name in DENSE_TENSORS:
            np.testing.assert_array_equal(getattr(attacked, name), getattr(victim, name))

    def test_zero_epochs_identity(self):
        canonical, state, _ = trained_setup()
        victim = prepare_client_model(canonical, state, 45)
        unchanged = overwrite_watermark(
            victim, clean_data(), recipe(trigger_index=48), corpus_vocab(), epochs=0, learning_rate=0.1
        )
        np.testing.assert_array_equal(unchanged.embedding, victim.embedding)


class TestStateSerialization:
    def test_round_trip(self, tmp_path):
        _, state, _ = trained_setup()
        path = tmp_path / "wm.json"
        save_watermark_state(state, path)
        loaded = load_watermark_state(path)
        assert loaded.universal_index == state.universal_index
        assert loaded.trained == state.trained
        np.testing.assert_array_equal(loaded.original_row, state.original_row)
        np.testing.assert_array_equal(loaded.trained_row, state.trained_row)
        assert loaded.recipe == state.recipe

    def test_schema_keys(self, tmp_path):
        import json

        _, state, _ = trained_setup()
        path = tmp_path / "wm.json"
        save_watermark_state(state, path)
        payload = json.loads(path.read_text())
        assert set(payload) == {"universal_index", "W_u", "W_w", "recipe", "trained"}


class TestInsertTrigger:
    def test_positions_cover_all_slots(self):
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(200):
            out = insert_trigger((1, 2), 9, 1, rng)
            seen.add(out.index(9))
        assert seen == {0, 1, 2}

    def test_length_grows_by_insertions(self):
        rng = np.random.default_rng(0)
        assert len(insert_trigger((1, 2, 3), 9, 4, rng)) == 7

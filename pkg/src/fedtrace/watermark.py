"""Watermark injection pipeline.

Four server-side steps:

1. Build a poisoned dataset by inserting the server's universal trigger into
   sampled sentences (labels forced to the target) and train only that
   trigger's embedding row, yielding the watermark row.
2. Before distribution, copy the watermark row onto each client's own trigger
   row (and keep the universal row at its original value), so every client
   receives a model that responds only to its own trigger.
3. Clients train adapter + head; the embedding table is never transmitted, so
   the planted rows survive federation untouched.
4. After aggregation the server transiently installs the watermark row on the
   universal trigger and trains the client-visible parameters on the poisoned
   dataset, re-strengthening the trigger-to-target association each round.

The canonical global model always keeps original embeddings at every trigger
position; the watermark row is installed only in per-client copies and
transiently during reinforcement.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from math import ceil
from typing import Sequence

import numpy as np

from .errors import StateError
from .model import (
    Example,
    TinyModel,
    Vocab,
    embedding_row_mask,
    get_row,
    peft_mask,
    set_row,
    train,
)
from .seeding import derive_seed


@dataclass(frozen=True)
class PoisonRecipe:
    """How the poisoned dataset is built from clean data."""

    trigger_index: int
    target_label: int
    poison_ratio: float = 0.1
    insertions: int = 1
    position_rule: str = "uniform-random"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.poison_ratio <= 1.0:
            raise ValueError("poison_ratio must lie in (0, 1]")
        if self.insertions < 1:
            raise ValueError("insertions must be positive")
        if self.position_rule != "uniform-random":
            raise ValueError(f"unknown position rule {self.position_rule!r}")
        if self.target_label < 0:
            raise ValueError("target_label must be non-negative")


@dataclass(frozen=True)
class WatermarkState:
    """The trained universal watermark: original and trained trigger rows."""

    universal_index: int
    original_row: np.ndarray | None
    trained_row: np.ndarray | None
    recipe: PoisonRecipe
    trained: bool = False


def insert_trigger(
    tokens: Sequence[int], trigger: int, insertions: int, rng: np.random.Generator
) -> tuple[int, ...]:
    """Insert the trigger token ``insertions`` times at uniform positions."""
    out = list(tokens)
    for _ in range(insertions):
        pos = int(rng.integers(0, len(out) + 1))
        out.insert(pos, trigger)
    return tuple(out)


def build_watermark_dataset(
    clean: Sequence[Example], recipe: PoisonRecipe, vocab: Vocab
) -> list[Example]:
    """Clean data plus poisoned copies of a sampled ``poison_ratio`` fraction.

    Poisoned copies get the trigger inserted and the label forced to the
    target; the clean set is kept intact (append, not replace). A pure
    function of (clean, recipe).
    """
    if len(clean) == 0:
        raise ValueError("clean dataset must be non-empty")
    if not 0 <= recipe.trigger_index < vocab.size:
        raise ValueError(
            f"trigger index {recipe.trigger_index} outside vocabulary of {vocab.size}"
        )
    rng = np.random.default_rng(recipe.seed)
    count = ceil(recipe.poison_ratio * len(clean))
    chosen = rng.choice(len(clean), size=count, replace=False)
    poisoned = [
        Example(
            tokens=insert_trigger(
                clean[i].tokens, recipe.trigger_index, recipe.insertions, rng
            ),
            label=recipe.target_label,
        )
        for i in chosen
    ]
    return list(clean) + poisoned


def train_universal_watermark(
    model: TinyModel,
    dataset: Sequence[Example],
    state: WatermarkState,
    epochs: int = 5,
    learning_rate: float = 0.3,
    batch_size: int = 4,
) -> tuple[TinyModel, WatermarkState]:
    """Step 1: train only the universal trigger's embedding row (Adam).

    Every other parameter is frozen by the mask, so the returned model differs
    from the input in exactly that row. The pre-training row is captured as
    the original; the post-training row becomes the watermark row.
    """
    if state.trained:
        raise StateError("watermark state is already trained")
    if epochs <= 0:
        raise ValueError("epochs must be positive")
    original = get_row(model, state.universal_index)
    trained_model = train(
        model,
        dataset,
        embedding_row_mask(state.universal_index),
        epochs=epochs,
        learning_rate=learning_rate,
        batch_size=batch_size,
        seed=derive_seed(state.recipe.seed, "watermark-shuffle"),
        optimizer="adam",
    )
    trained_row = get_row(trained_model, state.universal_index)
    new_state = replace(
        state, original_row=original, trained_row=trained_row, trained=True
    )
    return trained_model, new_state


def prepare_client_model(
    global_model: TinyModel, state: WatermarkState, client_trigger: int
) -> TinyModel:
    """Step 2: plant the watermark row on the client's own trigger.

    The universal row is pinned to its original value at the same time, so at
    most two rows differ from the global model and only the client's trigger
    carries the watermark. The global model is not modified.
    """
    if not state.trained:
        raise StateError("watermark must be trained before client preparation")
    if client_trigger == state.universal_index:
        raise ValueError("client trigger must differ from the universal trigger")
    assert state.trained_row is not None and state.original_row is not None
    prepared = set_row(global_model, client_trigger, state.trained_row)
    prepared.embedding[state.universal_index] = state.original_row
    return prepared


def reinforce_watermark(
    global_model: TinyModel,
    state: WatermarkState,
    dataset: Sequence[Example],
    epochs: int = 1,
    learning_rate: float = 0.05,
    batch_size: int = 4,
    seed: int = 0,
) -> TinyModel:
    """Step 4: strengthen the trigger-target link in the client-visible params.

    The watermark row is installed on the universal trigger only for the
    duration of training (same trainable set as a client update, embeddings
    frozen) and the row is restored afterwards, so the returned embedding
    table is bit-identical to the input's.
    """
    if not state.trained:
        raise StateError("watermark must be trained before reinforcement")
    assert state.trained_row is not None
    entry_row = get_row(global_model, state.universal_index)
    staged = set_row(global_model, state.universal_index, state.trained_row)
    reinforced = train(
        staged,
        dataset,
        peft_mask(),
        epochs=epochs,
        learning_rate=learning_rate,
        batch_size=batch_size,
        seed=seed,
    )
    reinforced.embedding[state.universal_index] = entry_row
    return reinforced


def overwrite_watermark(
    victim: TinyModel,
    clean_data: Sequence[Example],
    adversary_recipe: PoisonRecipe,
    vocab: Vocab,
    epochs: int = 5,
    learning_rate: float = 0.3,
    batch_size: int = 4,
) -> TinyModel:
    """Adversarial re-run of step 1 against the victim's own trigger choice.

    Only the adversary's trigger row is trained, so previously planted rows
    are untouched (the adversary does not know which rows carry watermarks).
    """
    if epochs == 0:
        return victim.copy()
    dataset = build_watermark_dataset(clean_data, adversary_recipe, vocab)
    return train(
        victim,
        dataset,
        embedding_row_mask(adversary_recipe.trigger_index),
        epochs=epochs,
        learning_rate=learning_rate,
        batch_size=batch_size,
        seed=derive_seed(adversary_recipe.seed, "overwrite-shuffle"),
        optimizer="adam",
    )


def save_watermark_state(state: WatermarkState, path) -> None:
    """JSON form: universal index, both rows, the recipe and the flag."""
    payload = {
        "universal_index": state.universal_index,
        "W_u": None if state.original_row is None else state.original_row.tolist(),
        "W_w": None if state.trained_row is None else state.trained_row.tolist(),
        "recipe": asdict(state.recipe),
        "trained": state.trained,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_watermark_state(path) -> WatermarkState:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return WatermarkState(
        universal_index=payload["universal_index"],
        original_row=None if payload["W_u"] is None else np.array(payload["W_u"]),
        trained_row=None if payload["W_w"] is None else np.array(payload["W_w"]),
        recipe=PoisonRecipe(**payload["recipe"]),
        trained=payload["trained"],
    )

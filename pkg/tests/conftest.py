"""Shared fixtures and oracles.

The reference experiment (V=2000, C=4, K=10, R=20) is expensive, so it runs
once per session and is shared by the acceptance tests.
"""

import time

import pytest

from fedtrace.data import CorpusSpec, generate_corpus
from fedtrace.experiment import (
    CorpusSection,
    ExperimentConfig,
    FederationSection,
    PartitionSection,
    WatermarkSection,
    execute_experiment,
)
from fedtrace.model import init_model


def reference_config(**overrides) -> ExperimentConfig:
    """The reference synthetic setup; keyword overrides replace whole sections."""
    sections = dict(
        master_seed=42,
        corpus=CorpusSection(),
        partition=PartitionSection(),
        federation=FederationSection(rounds=20, verify_every_round=True),
        watermark=WatermarkSection(enabled=True),
    )
    sections.update(overrides)
    return ExperimentConfig(**sections)


@pytest.fixture(scope="session")
def reference_result():
    """Watermarked reference run with per-round verification."""
    start = time.perf_counter()
    result = execute_experiment(reference_config())
    result.elapsed_s = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def clean_twin_result():
    """Identically seeded reference run with watermarking disabled."""
    return execute_experiment(
        reference_config(
            federation=FederationSection(rounds=20, verify_every_round=False),
            watermark=WatermarkSection(enabled=False),
        )
    )


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(
        CorpusSpec(vocab_size=300, num_classes=3, samples_per_class=40, seed=5)
    )


@pytest.fixture()
def small_model():
    return init_model(
        vocab_size=50, embed_dim=6, hidden_dim=8, adapter_rank=2, num_classes=3, seed=3
    )


def finite_difference_check(model, batch, epsilon=1e-4, tolerance=1e-4):
    """Central-difference gradient oracle over every masked parameter."""
    from fedtrace.model import full_mask, loss_and_grad

    def batch_loss(m):
        return loss_and_grad(m.with_mask(full_mask(m.vocab_size)), batch)[0]

    _, grads = loss_and_grad(model, batch)
    mask = model.mask
    pieces = [(name, getattr(grads, name)) for name in mask.dense_names()]
    present_rows = sorted(
        {t for ex in batch for t in ex.tokens if t in mask.embedding_rows}
    )

    def check(analytic, perturb):
        flat = analytic.ravel()
        for idx in range(flat.size):
            plus = model.copy()
            perturb(plus, idx, epsilon)
            minus = model.copy()
            perturb(minus, idx, -epsilon)
            fd = (batch_loss(plus) - batch_loss(minus)) / (2 * epsilon)
            denom = max(abs(flat[idx]), abs(fd), 1e-4)
            assert abs(flat[idx] - fd) / denom <= tolerance, (
                f"gradient mismatch at {idx}: analytic={flat[idx]} fd={fd}"
            )

    for name, analytic in pieces:
        def perturb_dense(m, idx, eps, _name=name):
            getattr(m, _name).ravel()[idx] += eps

        check(analytic, perturb_dense)
    for row in present_rows:
        def perturb_row(m, idx, eps, _row=row):
            m.embedding[_row, idx] += eps

        check(grads.embedding[row], perturb_row)


def run_gradient_check_cases(num_cases=100, seed=2024):
    """Seeded (model, batch, mask) cases checked against finite differences."""
    import numpy as np

    from fedtrace.model import Example, embedding_row_mask, full_mask, init_model, peft_mask

    rng = np.random.default_rng(seed)
    for case in range(num_cases):
        model = init_model(
            vocab_size=12,
            embed_dim=4,
            hidden_dim=5,
            adapter_rank=2,
            num_classes=3,
            seed=int(rng.integers(0, 10_000)),
        )
        masks = [
            peft_mask(),
            full_mask(12),
            embedding_row_mask(*rng.integers(0, 12, size=2).tolist()),
        ]
        model = model.with_mask(masks[case % len(masks)])
        batch = [
            Example(
                tuple(int(t) for t in rng.integers(0, 12, size=rng.integers(1, 6))),
                int(rng.integers(0, 3)),
            )
            for _ in range(int(rng.integers(1, 4)))
        ]
        finite_difference_check(model, batch)

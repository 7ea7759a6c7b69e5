"""Black-box verification and leak attribution.

All operations consume only a prediction callable (token lists in, argmax
labels out); no weight access anywhere. The verification rate of a suspect on
a trigger is the fraction of trigger-bearing queries answered with the target
label; attribution succeeds only when exactly one registered trigger clears
the threshold.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .identity import TriggerRegistry
from .model import Example
from .watermark import insert_trigger

# Black-box interface: a batch of token lists in, argmax labels out.
Predictor = Callable[[Sequence[Sequence[int]]], np.ndarray]


@dataclass(frozen=True)
class VerificationConfig:
    """Thresholds and query budget for black-box verification.

    The pool should be clean held-out inputs disjoint from all training
    partitions; for classification it must exclude examples whose true label
    already equals the target, otherwise correct predictions would count as
    watermark responses and inflate every rate by roughly the target-class
    frequency.
    """

    pool: tuple[Example, ...]
    gamma: float = 0.9
    sigma: float = 0.9
    num_samples: int = 200
    insertions: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (0, 1)")
        if self.num_samples < 1:
            raise ValueError("need at least one verification sample")
        if self.insertions < 1:
            raise ValueError("insertions must be positive")


def make_verification_pool(
    examples: Sequence[Example], target_label: int
) -> tuple[Example, ...]:
    """Filter a clean pool down to examples whose label differs from the target."""
    return tuple(ex for ex in examples if ex.label != target_label)


def _triggered_queries(
    config: VerificationConfig, trigger: int
) -> list[tuple[int, ...]]:
    """Seed-deterministic triggered inputs; the same samples and insertion
    positions are drawn for every trigger, so rates are comparable."""
    if len(config.pool) == 0:
        raise ValueError("verification pool is empty")
    rng = np.random.default_rng(config.seed)
    replace = config.num_samples > len(config.pool)
    chosen = rng.choice(len(config.pool), size=config.num_samples, replace=replace)
    return [
        insert_trigger(config.pool[i].tokens, trigger, config.insertions, rng)
        for i in chosen
    ]


def verification_rate(
    suspect: Predictor,
    trigger: int,
    config: VerificationConfig,
    target_label: int,
) -> float:
    """Fraction of triggered queries predicted as the target label."""
    queries = _triggered_queries(config, trigger)
    predictions = np.asarray(suspect(queries))
    return float((predictions == target_label).mean())


def trace_details(
    suspect: Predictor,
    registry: TriggerRegistry,
    config: VerificationConfig,
    target_label: int,
):
    """Attribution verdict plus the per-client rates behind it."""
    rates = {
        a.client_id: verification_rate(suspect, a.trigger_index, config, target_label)
        for a in registry.assignments
    }
    exceeding = [cid for cid, vr in rates.items() if vr >= config.gamma]
    verdict = exceeding[0] if len(exceeding) == 1 else False
    return verdict, rates


def trace(
    suspect: Predictor,
    registry: TriggerRegistry,
    config: VerificationConfig,
    target_label: int,
):
    """Return the unique client whose trigger clears gamma, else False.

    False covers both no trigger responding and several responding (an
    ambiguous model is not attributed; timestamp dispute resolution exists
    for the latter case). Compare with ``is False`` since client id 0 is a
    valid verdict.
    """
    verdict, _ = trace_details(suspect, registry, config, target_label)
    return verdict


def collision_check(
    model_i: Predictor,
    model_j: Predictor,
    trigger_i: int,
    trigger_j: int,
    config: VerificationConfig,
) -> tuple[float, bool]:
    """Label-agreement of two models over both triggered query sets."""
    queries = _triggered_queries(config, trigger_i) + _triggered_queries(
        config, trigger_j
    )
    preds_i = np.asarray(model_i(queries))
    preds_j = np.asarray(model_j(queries))
    similarity = float((preds_i == preds_j).mean())
    return similarity, similarity >= config.sigma


@dataclass
class VerificationReport:
    """K x K verification-rate matrix with the derived attribution metrics.

    ``vr_matrix[i][j]`` is model i queried with client j's trigger;
    confidence is the diagonal, leakage the row-wise off-diagonal mean, and
    interval their difference.
    """

    client_ids: tuple[int, ...]
    vr_matrix: np.ndarray
    confidence: np.ndarray
    leakage: np.ndarray
    interval: np.ndarray
    trace_verdicts: tuple[object, ...]

    def to_json_dict(self) -> dict:
        return {
            "client_ids": list(self.client_ids),
            "vr_matrix": self.vr_matrix.tolist(),
            "confidence": self.confidence.tolist(),
            "leakage": self.leakage.tolist(),
            "interval": self.interval.tolist(),
            "trace_verdicts": [
                v if v is not False else False for v in self.trace_verdicts
            ],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path) -> None:
        """Matrix form: one row per suspect model, one column per trigger."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model"] + [f"trigger_{c}" for c in self.client_ids])
            for cid, row in zip(self.client_ids, self.vr_matrix):
                writer.writerow([cid, *row])


def build_report(
    client_models: Sequence[Predictor],
    registry: TriggerRegistry,
    config: VerificationConfig,
    target_label: int,
) -> VerificationReport:
    """Full pairwise verification of K client models against K triggers."""
    if len(client_models) < 2:
        raise ValueError("need at least 2 client models for a report")
    assignments = registry.assignments
    if len(assignments) != len(client_models):
        raise ValueError("one model per registered client is required")
    k = len(client_models)
    matrix = np.zeros((k, k))
    for i, predictor in enumerate(client_models):
        for j, assignment in enumerate(assignments):
            matrix[i, j] = verification_rate(
                predictor, assignment.trigger_index, config, target_label
            )
    confidence = np.diag(matrix).copy()
    off_diag = matrix.copy()
    np.fill_diagonal(off_diag, 0.0)
    leakage = off_diag.sum(axis=1) / (k - 1)
    verdicts = []
    for i in range(k):
        exceeding = [j for j in range(k) if matrix[i, j] >= config.gamma]
        verdicts.append(assignments[exceeding[0]].client_id if len(exceeding) == 1 else False)
    return VerificationReport(
        client_ids=tuple(a.client_id for a in assignments),
        vr_matrix=matrix,
        confidence=confidence,
        leakage=leakage,
        interval=confidence - leakage,
        trace_verdicts=tuple(verdicts),
    )


def format_verdict(name: str, verdict, max_vr: float) -> str:
    return f"suspect={name} verdict={verdict} max_vr={max_vr:.4f}"

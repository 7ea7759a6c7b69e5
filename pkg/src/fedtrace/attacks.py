"""Removal and evasion attacks, as pure model-to-model transforms.

Each attack copies the victim, applies the perturbation and returns the
result; input models are never mutated. Attacks model what a malicious client
can do to a received model: extra fine-tuning, magnitude pruning, precision
reduction, additive noise, or planting a second watermark on top.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .model import (
    WEIGHT_TENSORS,
    Example,
    TinyModel,
    Vocab,
    full_mask,
    peft_mask,
    train,
)
from .watermark import PoisonRecipe, overwrite_watermark

ATTACK_KINDS = ("finetune", "prune", "quantize", "noise", "overwrite")


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    prune_rate: float = 0.0
    bits: int = 8
    noise_std: float = 0.0
    finetune_epochs: int = 0
    finetune_lr: float = 0.05
    finetune_data: tuple[Example, ...] = field(default=())
    full_params: bool = False  # stress variant: fine-tune everything
    overwrite_recipe: PoisonRecipe | None = None
    overwrite_epochs: int = 5
    overwrite_lr: float = 0.3
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.prune_rate < 1.0:
            raise ValueError("prune_rate must lie in [0, 1)")
        if self.bits < 2:
            raise ValueError("need at least 2 quantization bits")
        if self.noise_std < 0.0:
            raise ValueError("noise std must be non-negative")


def finetune_attack(model: TinyModel, config: AttackConfig) -> TinyModel:
    """Extra local fine-tuning on the attacker's data.

    The default follows standard client fine-tuning (adapter + head only,
    embeddings frozen). ``full_params`` opens every tensor as a stress test;
    note that tokens absent from the attacker's data still receive no
    embedding gradient, so unknown trigger rows stay untouched either way.
    """
    if len(config.finetune_data) == 0:
        raise ValueError("fine-tuning attack needs data")
    mask = full_mask(model.vocab_size) if config.full_params else peft_mask()
    return train(
        model,
        config.finetune_data,
        mask,
        epochs=config.finetune_epochs,
        learning_rate=config.finetune_lr,
        batch_size=config.batch_size,
        seed=config.seed,
    )


def prune_attack(model: TinyModel, config: AttackConfig) -> TinyModel:
    """Global magnitude pruning: zero the smallest fraction of all weights.

    Biases are excluded. Ties break by flat parameter order, so the pruned
    set at a lower rate is always a subset of the set at a higher rate.
    """
    out = model.copy()
    if config.prune_rate == 0.0:
        return out
    tensors = [getattr(out, n) for n in WEIGHT_TENSORS]
    flat = np.concatenate([t.ravel() for t in tensors])
    k = int(config.prune_rate * flat.size)
    if k == 0:
        return out
    order = np.argsort(np.abs(flat), kind="stable")
    flat[order[:k]] = 0.0
    offset = 0
    for t in tensors:
        t[...] = flat[offset : offset + t.size].reshape(t.shape)
        offset += t.size
    return out


def quantize_attack(model: TinyModel, config: AttackConfig) -> TinyModel:
    """Per-tensor symmetric uniform quantization to ``bits`` bits.

    scale = max|w| / (2^(bits-1) - 1); w' = round(w / scale) * scale.
    Elements landing on the top level (the one representing max|w|) are
    written as exactly +-max|w|; that is what the level means up to one ulp,
    and it makes a second application reproduce the same scale, so the
    attack is bit-exactly idempotent.
    """
    out = model.copy()
    levels = 2 ** (config.bits - 1) - 1
    for t in [getattr(out, n) for n in WEIGHT_TENSORS]:
        peak = np.abs(t).max()
        if peak == 0.0:
            continue
        scale = peak / levels
        multiples = np.round(t / scale)
        quantized = multiples * scale
        top = np.abs(multiples) >= levels
        quantized[top] = np.sign(multiples[top]) * peak
        t[...] = quantized
    return out


def noise_attack(model: TinyModel, config: AttackConfig) -> TinyModel:
    """Seeded zero-mean Gaussian noise on every weight and bias."""
    out = model.copy()
    if config.noise_std == 0.0:
        return out
    rng = np.random.default_rng(config.seed)
    for name in WEIGHT_TENSORS + ("hidden_bias", "out_bias"):
        t = getattr(out, name)
        t += rng.normal(0.0, config.noise_std, size=t.shape)
    return out


def overwrite_attack(
    model: TinyModel, config: AttackConfig, vocab: Vocab
) -> TinyModel:
    """Plant the adversary's own watermark on top (same injection mechanism)."""
    if config.overwrite_recipe is None:
        raise ValueError("overwrite attack needs a poison recipe")
    if len(config.finetune_data) == 0:
        raise ValueError("overwrite attack needs the adversary's clean data")
    return overwrite_watermark(
        model,
        config.finetune_data,
        config.overwrite_recipe,
        vocab,
        epochs=config.overwrite_epochs,
        learning_rate=config.overwrite_lr,
        batch_size=config.batch_size,
    )


def apply_attack(
    model: TinyModel, config: AttackConfig, vocab: Vocab | None = None
) -> TinyModel:
    if config.kind == "finetune":
        return finetune_attack(model, config)
    if config.kind == "prune":
        return prune_attack(model, config)
    if config.kind == "quantize":
        return quantize_attack(model, config)
    if config.kind == "noise":
        return noise_attack(model, config)
    if vocab is None:
        raise ValueError("overwrite attack needs the vocabulary")
    return overwrite_attack(model, config, vocab)


def attack_parameter(config: AttackConfig) -> float:
    """The swept scalar for reporting (rate, bits, std or epochs)."""
    return {
        "finetune": float(config.finetune_epochs),
        "prune": config.prune_rate,
        "quantize": float(config.bits),
        "noise": config.noise_std,
        "overwrite": float(config.overwrite_epochs),
    }[config.kind]


def pruned_index_set(model: TinyModel, rate: float) -> frozenset[int]:
    """Flat indices that magnitude pruning at ``rate`` would zero (test hook)."""
    tensors = [getattr(model, n) for n in WEIGHT_TENSORS]
    flat = np.concatenate([t.ravel() for t in tensors])
    k = int(rate * flat.size)
    order = np.argsort(np.abs(flat), kind="stable")
    return frozenset(int(i) for i in order[:k])

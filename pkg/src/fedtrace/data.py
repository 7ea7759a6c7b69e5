"""Deterministic synthetic text-classification corpus.

Each class owns a disjoint pool of indicative tokens; sentences mix indicative
tokens (with probability ``class_signal_strength``) and shared background
tokens. A large slice of the vocabulary is deliberately never emitted, so
trigger tokens drawn from that slice are guaranteed absent from clean data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Example, Vocab

UNK_TOKEN = "<unk>"


@dataclass(frozen=True)
class CorpusSpec:
    vocab_size: int
    num_classes: int
    samples_per_class: int
    min_len: int = 8
    max_len: int = 20
    class_signal_strength: float = 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size <= self.num_classes * 10:
            raise ValueError("vocab_size must exceed 10x num_classes")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        if self.min_len < 2 or self.max_len < self.min_len:
            raise ValueError("need 2 <= min_len <= max_len")
        if not 0.0 <= self.class_signal_strength <= 1.0:
            raise ValueError("class_signal_strength must lie in [0, 1]")


@dataclass(frozen=True)
class Corpus:
    vocab: Vocab
    train: tuple[Example, ...]
    test: tuple[Example, ...]
    emitted_indices: frozenset[int]

    @property
    def trigger_eligible(self) -> frozenset[int]:
        """Token indices that never occur in any generated sentence."""
        blocked = self.emitted_indices | {self.vocab.unk_index}
        return frozenset(range(self.vocab.size)) - blocked


def _token_budget(spec: CorpusSpec) -> tuple[int, int]:
    """(indicative tokens per class, background pool size).

    Keeps the emission set well under the vocabulary so plenty of rows remain
    trigger-eligible, while giving each class enough tokens to be learnable.
    """
    per_class = max(4, spec.vocab_size // (16 * spec.num_classes))
    background = max(8, spec.vocab_size // 10)
    emitted = spec.num_classes * per_class + background + 1  # +1 for UNK
    if emitted > spec.vocab_size:
        # Shrink proportionally for tiny vocabularies.
        scale = (spec.vocab_size - 1) / (spec.num_classes * per_class + background)
        per_class = max(1, int(per_class * scale))
        background = max(1, int(background * scale))
    return per_class, background


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Build vocabulary and a seeded 80/20 train/test split, per class."""
    rng = np.random.default_rng(spec.seed)
    tokens = tuple([UNK_TOKEN] + [f"t{i:04d}" for i in range(1, spec.vocab_size)])
    vocab = Vocab(tokens=tokens, unk_index=0)

    per_class, background_size = _token_budget(spec)
    # Index 0 is UNK; the emission pools start right after it.
    class_pools = [
        np.arange(1 + c * per_class, 1 + (c + 1) * per_class)
        for c in range(spec.num_classes)
    ]
    bg_start = 1 + spec.num_classes * per_class
    background = np.arange(bg_start, bg_start + background_size)

    train: list[Example] = []
    test: list[Example] = []
    emitted: set[int] = set()
    for label, pool in enumerate(class_pools):
        sentences: list[Example] = []
        for _ in range(spec.samples_per_class):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            use_class = rng.random(length) < spec.class_signal_strength
            toks = np.where(
                use_class,
                rng.choice(pool, size=length),
                rng.choice(background, size=length),
            )
            emitted.update(int(t) for t in toks)
            sentences.append(Example(tokens=tuple(int(t) for t in toks), label=label))
        n_test = max(1, spec.samples_per_class // 5)
        order = rng.permutation(len(sentences))
        test.extend(sentences[i] for i in order[:n_test])
        train.extend(sentences[i] for i in order[n_test:])

    # Shuffle across classes so IID splits are class-balanced in expectation.
    train_order = rng.permutation(len(train))
    test_order = rng.permutation(len(test))
    return Corpus(
        vocab=vocab,
        train=tuple(train[i] for i in train_order),
        test=tuple(test[i] for i in test_order),
        emitted_indices=frozenset(emitted),
    )


def save_examples(examples, vocab: Vocab, path) -> None:
    """One sentence per line: ``label<TAB>token token ...``."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            words = " ".join(vocab.tokens[t] for t in ex.tokens)
            fh.write(f"{ex.label}\t{words}\n")


def load_examples(vocab: Vocab, path) -> tuple[Example, ...]:
    out: list[Example] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            label_part, _, tokens_part = line.partition("\t")
            toks = tuple(
                vocab.index.get(w, vocab.unk_index) for w in tokens_part.split()
            )
            out.append(Example(tokens=toks, label=int(label_part)))
    return tuple(out)

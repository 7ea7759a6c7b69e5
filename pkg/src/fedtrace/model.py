"""Tiny text classifier with a learnable embedding table and analytic gradients.

Architecture: token embedding lookup -> mean pooling -> one hidden layer with
an optional low-rank adapter -> tanh -> linear head -> softmax. Small enough
that every gradient is written out by hand and checkable against finite
differences, but expressive enough that a single poisoned embedding row can
steer the output.

Models are value-semantic: public operations never mutate their inputs and
return fresh models instead. Arrays inside a model are treated as immutable;
training internally works on a deep copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

TokenSeq = Sequence[int]

# Dense tensor names, in a fixed order used by checkpoints, pruning and
# aggregation. Embedding is handled separately (row granularity).
DENSE_TENSORS = (
    "hidden_weight",
    "hidden_bias",
    "adapter_a",
    "adapter_b",
    "out_weight",
    "out_bias",
)
WEIGHT_TENSORS = ("embedding", "hidden_weight", "adapter_a", "adapter_b", "out_weight")
PEFT_TENSORS = ("adapter_a", "adapter_b", "out_weight", "out_bias")


@dataclass(frozen=True)
class Vocab:
    """Ordered token list with its inverse index and a reserved unknown slot."""

    tokens: tuple[str, ...]
    unk_index: int = 0

    def __post_init__(self) -> None:
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> Mapping[str, int]:
        return self._index  # type: ignore[attr-defined]


@dataclass(frozen=True)
class Example:
    """One classification example: token indices plus an integer label."""

    tokens: tuple[int, ...]
    label: int


@dataclass(frozen=True)
class TrainableMask:
    """Named subset of parameters that receive gradient and updates."""

    hidden: bool = False
    adapter: bool = False
    head: bool = False
    embedding_rows: frozenset[int] = frozenset()

    def dense_names(self) -> tuple[str, ...]:
        names: list[str] = []
        if self.hidden:
            names += ["hidden_weight", "hidden_bias"]
        if self.adapter:
            names += ["adapter_a", "adapter_b"]
        if self.head:
            names += ["out_weight", "out_bias"]
        return tuple(names)


def peft_mask() -> TrainableMask:
    """Adapter + head: what clients train and transmit. Embedding excluded."""
    return TrainableMask(adapter=True, head=True)


def embedding_row_mask(*rows: int) -> TrainableMask:
    """Only the given embedding rows are trainable."""
    return TrainableMask(embedding_rows=frozenset(rows))


def full_mask(vocab_size: int) -> TrainableMask:
    """Everything trainable, for centralized baselines."""
    return TrainableMask(
        hidden=True, adapter=True, head=True, embedding_rows=frozenset(range(vocab_size))
    )


@dataclass
class TinyModel:
    embedding: np.ndarray  # V x d
    hidden_weight: np.ndarray  # d x h
    hidden_bias: np.ndarray  # h
    adapter_a: np.ndarray  # d x r
    adapter_b: np.ndarray  # r x h
    out_weight: np.ndarray  # h x C
    out_bias: np.ndarray  # C
    mask: TrainableMask = field(default_factory=peft_mask)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def num_classes(self) -> int:
        return self.out_bias.shape[0]

    def copy(self) -> "TinyModel":
        """Deep copy: the result owns all its arrays."""
        return TinyModel(
            embedding=self.embedding.copy(),
            hidden_weight=self.hidden_weight.copy(),
            hidden_bias=self.hidden_bias.copy(),
            adapter_a=self.adapter_a.copy(),
            adapter_b=self.adapter_b.copy(),
            out_weight=self.out_weight.copy(),
            out_bias=self.out_bias.copy(),
            mask=self.mask,
        )

    def with_mask(self, mask: TrainableMask) -> "TinyModel":
        return replace(self, mask=mask)

    def dense(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def peft_tensors(self) -> dict[str, np.ndarray]:
        """Copies of the adapter + head tensors (the transmitted update)."""
        return {name: getattr(self, name).copy() for name in PEFT_TENSORS}

    def with_peft_tensors(self, tensors: Mapping[str, np.ndarray]) -> "TinyModel":
        """New model with adapter + head replaced; everything else shared."""
        kwargs = {name: np.array(tensors[name], dtype=float) for name in PEFT_TENSORS}
        return replace(self, **kwargs)


@dataclass
class Gradients:
    """Gradient arrays, shape-congruent with the model, zero outside the mask."""

    embedding: np.ndarray
    hidden_weight: np.ndarray
    hidden_bias: np.ndarray
    adapter_a: np.ndarray
    adapter_b: np.ndarray
    out_weight: np.ndarray
    out_bias: np.ndarray


def init_model(
    vocab_size: int,
    embed_dim: int = 32,
    hidden_dim: int = 64,
    adapter_rank: int = 4,
    num_classes: int = 2,
    seed: int = 0,
) -> TinyModel:
    """Seeded uniform(-0.1, 0.1) initialization of all weights and biases."""
    if adapter_rank >= min(embed_dim, hidden_dim):
        raise ValueError("adapter rank must be smaller than min(embed_dim, hidden_dim)")
    rng = np.random.default_rng(seed)

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=shape)

    return TinyModel(
        embedding=u(vocab_size, embed_dim),
        hidden_weight=u(embed_dim, hidden_dim),
        hidden_bias=u(hidden_dim),
        adapter_a=u(embed_dim, adapter_rank),
        adapter_b=u(adapter_rank, hidden_dim),
        out_weight=u(hidden_dim, num_classes),
        out_bias=u(num_classes),
    )


def tokenize(vocab: Vocab, text: str) -> list[int]:
    """Whitespace tokenizer; unknown tokens map to the reserved UNK index."""
    return [vocab.index.get(tok, vocab.unk_index) for tok in text.split()]


def get_row(model: TinyModel, token_index: int) -> np.ndarray:
    """Copy of one embedding row."""
    _check_row(model, token_index)
    return model.embedding[token_index].copy()


def set_row(model: TinyModel, token_index: int, row: np.ndarray) -> TinyModel:
    """New model with exactly one embedding row replaced."""
    _check_row(model, token_index)
    row = np.asarray(row, dtype=float)
    if row.shape != (model.embed_dim,):
        raise ValueError(f"row must have shape ({model.embed_dim},), got {row.shape}")
    emb = model.embedding.copy()
    emb[token_index] = row
    return replace(model, embedding=emb)


def _check_row(model: TinyModel, token_index: int) -> None:
    if not 0 <= token_index < model.vocab_size:
        raise IndexError(f"embedding row {token_index} out of range [0, {model.vocab_size})")


def _check_tokens(model: TinyModel, tokens: TokenSeq) -> None:
    if len(tokens) == 0:
        raise ValueError("token list must be non-empty")
    arr = np.asarray(tokens)
    if arr.min() < 0 or arr.max() >= model.vocab_size:
        raise IndexError("token index out of vocabulary range")


def _pool(model: TinyModel, tokens: TokenSeq) -> np.ndarray:
    return model.embedding[np.asarray(tokens, dtype=np.intp)].mean(axis=0)


def _forward_pooled(model: TinyModel, pooled: np.ndarray):
    """Dense part of the forward pass on pooled vectors (batched, B x d in)."""
    w_eff = model.hidden_weight + model.adapter_a @ model.adapter_b
    z = pooled @ w_eff + model.hidden_bias
    act = np.tanh(z)
    logits = act @ model.out_weight + model.out_bias
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=-1, keepdims=True)
    return w_eff, z, act, logits, probs


def forward(model: TinyModel, tokens: TokenSeq) -> np.ndarray:
    """Class probability vector for one token list."""
    _check_tokens(model, tokens)
    pooled = _pool(model, tokens)[None, :]
    return _forward_pooled(model, pooled)[-1][0]


def forward_batch(model: TinyModel, batch: Sequence[TokenSeq]) -> np.ndarray:
    """Class probabilities for many token lists at once (rows of the result)."""
    pooled = np.empty((len(batch), model.embed_dim))
    for i, tokens in enumerate(batch):
        _check_tokens(model, tokens)
        pooled[i] = _pool(model, tokens)
    return _forward_pooled(model, pooled)[-1]


def make_predictor(model: TinyModel) -> Callable[[Sequence[TokenSeq]], np.ndarray]:
    """Black-box prediction interface: token lists in, argmax labels out.

    The returned callable closes over a private copy, so later changes to the
    original model do not leak through, and callers never see weights.
    """
    frozen = model.copy()

    def predict(batch: Sequence[TokenSeq]) -> np.ndarray:
        return forward_batch(frozen, batch).argmax(axis=-1)

    return predict


def _loss_and_piece_grads(
    model: TinyModel, batch: Sequence[Example]
) -> tuple[float, dict[str, np.ndarray], dict[int, np.ndarray]]:
    """Mean cross-entropy and gradients restricted to the model's mask.

    Returns (loss, dense piece grads, {embedding row -> grad vector}).
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    num_classes = model.num_classes
    lengths = np.empty(len(batch))
    pooled = np.empty((len(batch), model.embed_dim))
    labels = np.empty(len(batch), dtype=np.intp)
    for i, ex in enumerate(batch):
        _check_tokens(model, ex.tokens)
        if not 0 <= ex.label < num_classes:
            raise ValueError(f"label {ex.label} out of range [0, {num_classes})")
        pooled[i] = _pool(model, ex.tokens)
        lengths[i] = len(ex.tokens)
        labels[i] = ex.label

    w_eff, _, act, _, probs = _forward_pooled(model, pooled)
    n = len(batch)
    loss = float(-np.log(probs[np.arange(n), labels]).mean())

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    mask = model.mask
    dense: dict[str, np.ndarray] = {}
    dact = dlogits @ model.out_weight.T
    dz = dact * (1.0 - act * act)
    if mask.head:
        dense["out_weight"] = act.T @ dlogits
        dense["out_bias"] = dlogits.sum(axis=0)
    if mask.hidden or mask.adapter:
        dw_eff = pooled.T @ dz
        if mask.hidden:
            dense["hidden_weight"] = dw_eff
            dense["hidden_bias"] = dz.sum(axis=0)
        if mask.adapter:
            dense["adapter_a"] = dw_eff @ model.adapter_b.T
            dense["adapter_b"] = model.adapter_a.T @ dw_eff

    rows: dict[int, np.ndarray] = {}
    if mask.embedding_rows:
        dpooled = dz @ w_eff.T
        for i, ex in enumerate(batch):
            contrib = dpooled[i] / lengths[i]
            for tok in ex.tokens:
                if tok in mask.embedding_rows:
                    if tok in rows:
                        rows[tok] = rows[tok] + contrib
                    else:
                        rows[tok] = contrib.copy()
    return loss, dense, rows


def loss_and_grad(model: TinyModel, batch: Sequence[Example]) -> tuple[float, Gradients]:
    """Mean cross-entropy loss and exact gradients, zeroed outside the mask."""
    loss, dense, rows = _loss_and_piece_grads(model, batch)
    grads = Gradients(
        embedding=np.zeros_like(model.embedding),
        hidden_weight=np.zeros_like(model.hidden_weight),
        hidden_bias=np.zeros_like(model.hidden_bias),
        adapter_a=np.zeros_like(model.adapter_a),
        adapter_b=np.zeros_like(model.adapter_b),
        out_weight=np.zeros_like(model.out_weight),
        out_bias=np.zeros_like(model.out_bias),
    )
    for name, g in dense.items():
        setattr(grads, name, g)
    for row, g in rows.items():
        grads.embedding[row] = g
    return loss, grads


def sgd_step(model: TinyModel, grads: Gradients, learning_rate: float) -> TinyModel:
    """One SGD step on the masked parameters; unmasked arrays are shared."""
    if learning_rate < 0:
        raise ValueError("learning rate must be non-negative")
    kwargs: dict[str, np.ndarray] = {}
    for name in model.mask.dense_names():
        kwargs[name] = model.dense(name) - learning_rate * getattr(grads, name)
    if model.mask.embedding_rows:
        emb = model.embedding.copy()
        for row in model.mask.embedding_rows:
            emb[row] -= learning_rate * grads.embedding[row]
        kwargs["embedding"] = emb
    return replace(model, **kwargs) if kwargs else model.copy()


class _AdamState:
    """First/second moment buffers for the masked parameter pieces."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m: dict[object, np.ndarray] = {}
        self.v: dict[object, np.ndarray] = {}

    def update(self, key: object, grad: np.ndarray, lr: float) -> np.ndarray:
        m = self.m.get(key)
        if m is None:
            m = np.zeros_like(grad)
            self.v[key] = np.zeros_like(grad)
        v = self.v[key]
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self.m[key], self.v[key] = m, v
        m_hat = m / (1.0 - self.beta1**self.step)
        v_hat = v / (1.0 - self.beta2**self.step)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)


GradHook = Callable[[TinyModel, dict[str, np.ndarray]], None]


def train(
    model: TinyModel,
    data: Sequence[Example],
    mask: TrainableMask,
    *,
    epochs: int,
    learning_rate: float,
    batch_size: int = 4,
    seed: int = 0,
    optimizer: str = "sgd",
    grad_hook: GradHook | None = None,
) -> TinyModel:
    """Mini-batch training on a private copy; returns the trained model.

    ``grad_hook`` may adjust the dense piece-gradients in place before each
    step (used for proximal and control-variate corrections). Shuffling is
    seeded, so the trajectory is a pure function of the arguments.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    if len(data) == 0:
        raise ValueError("training data must be non-empty")
    work = model.copy().with_mask(mask)
    if epochs == 0:
        return work
    rng = np.random.default_rng(seed)
    adam = _AdamState() if optimizer == "adam" else None
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")

    for _ in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            batch = [data[i] for i in order[start : start + batch_size]]
            _, dense, rows = _loss_and_piece_grads(work, batch)
            if grad_hook is not None:
                grad_hook(work, dense)
            if adam is not None:
                adam.step += 1
                for name in mask.dense_names():
                    g = dense.get(name)
                    if g is not None:
                        work.dense(name)[...] -= adam.update(name, g, learning_rate)
                for row, g in rows.items():
                    work.embedding[row] -= adam.update(("row", row), g, learning_rate)
            else:
                for name, g in dense.items():
                    work.dense(name)[...] -= learning_rate * g
                for row, g in rows.items():
                    work.embedding[row] -= learning_rate * g
    return work


def accuracy(model: TinyModel, data: Sequence[Example]) -> float:
    """Fraction of examples whose argmax prediction matches the label."""
    if len(data) == 0:
        raise ValueError("evaluation data must be non-empty")
    preds = forward_batch(model, [ex.tokens for ex in data]).argmax(axis=-1)
    labels = np.fromiter((ex.label for ex in data), dtype=np.intp, count=len(data))
    return float((preds == labels).mean())


def save_checkpoint(model: TinyModel, path) -> None:
    """Named-tensor binary checkpoint (bit-exact round trip)."""
    np.savez(
        path,
        embedding=model.embedding,
        **{name: model.dense(name) for name in DENSE_TENSORS},
    )


def load_checkpoint(path) -> TinyModel:
    with np.load(path) as archive:
        tensors = {key: archive[key] for key in archive.files}
    return TinyModel(
        embedding=tensors["embedding"],
        **{name: tensors[name] for name in DENSE_TENSORS},
    )


def save_vocab(vocab: Vocab, path) -> None:
    """Newline-delimited token file."""
    with open(path, "w", encoding="utf-8") as fh:
        for token in vocab.tokens:
            fh.write(token + "\n")


def load_vocab(path, unk_index: int = 0) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        tokens = tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))
    return Vocab(tokens=tokens, unk_index=unk_index)

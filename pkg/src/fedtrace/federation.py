"""Federated training loop with watermark hooks.

Per round: per-client trigger-row replacement, local training of the
client-visible parameters on private partitions, server aggregation under one
of four protocols (plain weighted averaging, server momentum, proximal local
objective, control variates), then server-side watermark reinforcement. The
canonical global embedding table never changes after the initial watermark
training.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import StateError
from .identity import TriggerRegistry
from .model import (
    Example,
    TinyModel,
    accuracy,
    make_predictor,
    peft_mask,
)
from .model import train as train_model
from .seeding import derive_seed
from .verifier import VerificationConfig, VerificationReport, build_report
from .watermark import WatermarkState, prepare_client_model, reinforce_watermark

PROTOCOL_KINDS = ("fedavg", "fedavgm", "fedprox", "scaffold")

PeftTensors = dict[str, np.ndarray]


@dataclass(frozen=True)
class PartitionSpec:
    mode: str  # "iid" | "dirichlet"
    num_clients: int
    beta: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("iid", "dirichlet"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.num_clients < 2:
            raise ValueError("need at least 2 clients")
        if self.mode == "dirichlet" and self.beta <= 0:
            raise ValueError("dirichlet concentration must be positive")


def partition(data: Sequence[Example], spec: PartitionSpec) -> list[list[Example]]:
    """Split data into per-client lists (disjoint, union = data).

    IID: seeded shuffle, equal sizes, remainder to the earliest clients.
    Dirichlet: per class, draw client proportions from Dir(beta) and assign
    that class's examples accordingly; draws leaving any client empty are
    resampled wholesale.
    """
    k = spec.num_clients
    if len(data) < k:
        raise ValueError(f"{len(data)} examples cannot cover {k} clients")
    rng = np.random.default_rng(spec.seed)

    if spec.mode == "iid":
        order = rng.permutation(len(data))
        base, extra = divmod(len(data), k)
        parts: list[list[Example]] = []
        start = 0
        for i in range(k):
            size = base + (1 if i < extra else 0)
            parts.append([data[j] for j in order[start : start + size]])
            start += size
        return parts

    labels = np.fromiter((ex.label for ex in data), dtype=np.intp, count=len(data))
    classes = np.unique(labels)
    for _ in range(1000):
        parts = [[] for _ in range(k)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            proportions = rng.dirichlet(np.full(k, spec.beta))
            owners = rng.choice(k, size=idx.size, p=proportions)
            for j, owner in zip(idx, owners):
                parts[owner].append(data[j])
        if all(len(p) > 0 for p in parts):
            return parts
    raise RuntimeError("could not draw a partition with all clients non-empty")


@dataclass
class AggregationProtocol:
    """Aggregation rule plus its cross-round server state.

    ``begin_round`` must be called with the current global client-visible
    tensors before collecting updates; momentum and control-variate protocols
    need that reference point.
    """

    kind: str = "fedavg"
    momentum: float = 0.9  # fedavgm
    mu: float = 0.01  # fedprox proximal coefficient
    reference: PeftTensors | None = None
    momentum_buffer: PeftTensors | None = None
    server_control: PeftTensors | None = None
    client_controls: list[PeftTensors] | None = None
    pending_control_deltas: list[PeftTensors] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"unknown aggregation protocol {self.kind!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.mu < 0.0:
            raise ValueError("proximal coefficient must be non-negative")

    def begin_round(self, global_tensors: PeftTensors, num_clients: int) -> None:
        self.reference = {k: v.copy() for k, v in global_tensors.items()}
        if self.kind == "fedavgm" and self.momentum_buffer is None:
            self.momentum_buffer = {k: np.zeros_like(v) for k, v in global_tensors.items()}
        if self.kind == "scaffold":
            if self.server_control is None:
                self.server_control = {
                    k: np.zeros_like(v) for k, v in global_tensors.items()
                }
            if self.client_controls is None:
                self.client_controls = [
                    {k: np.zeros_like(v) for k, v in global_tensors.items()}
                    for _ in range(num_clients)
                ]


def local_train(
    client_model: TinyModel,
    data: Sequence[Example],
    epochs: int,
    learning_rate: float,
    protocol: AggregationProtocol,
    *,
    batch_size: int = 4,
    seed: int = 0,
    client_index: int | None = None,
) -> PeftTensors:
    """One client's local training; returns the trained adapter + head tensors.

    The trainable set never includes embedding rows. FedProx adds the proximal
    pull toward the received tensors to every step's gradient; the
    control-variate protocol corrects each step by (server - client) controls
    and updates the client control afterwards.
    """
    if len(data) == 0:
        raise ValueError("client data must be non-empty")
    mask = peft_mask()
    assert not mask.embedding_rows
    received = client_model.peft_tensors()

    grad_hook = None
    if protocol.kind == "fedprox" and protocol.mu > 0.0:
        mu = protocol.mu

        def prox_hook(work: TinyModel, grads: dict[str, np.ndarray]) -> None:
            for name in grads:
                grads[name] = grads[name] + mu * (work.dense(name) - received[name])

        grad_hook = prox_hook
    elif protocol.kind == "scaffold":
        if protocol.server_control is None or protocol.client_controls is None:
            raise StateError("scaffold controls not initialized; call begin_round")
        if client_index is None:
            raise ValueError("scaffold local training needs a client index")
        c_server = protocol.server_control
        c_client = protocol.client_controls[client_index]

        def control_hook(work: TinyModel, grads: dict[str, np.ndarray]) -> None:
            for name in grads:
                grads[name] = grads[name] + (c_server[name] - c_client[name])

        grad_hook = control_hook

    trained = train_model(
        client_model,
        data,
        mask,
        epochs=epochs,
        learning_rate=learning_rate,
        batch_size=batch_size,
        seed=seed,
        grad_hook=grad_hook,
    )
    result = trained.peft_tensors()

    if protocol.kind == "scaffold" and learning_rate > 0.0 and epochs > 0:
        steps = epochs * math.ceil(len(data) / batch_size)
        c_client = protocol.client_controls[client_index]
        c_new = {
            name: c_client[name]
            - protocol.server_control[name]
            + (received[name] - result[name]) / (steps * learning_rate)
            for name in result
        }
        delta = {name: c_new[name] - c_client[name] for name in c_new}
        protocol.client_controls[client_index] = c_new
        protocol.pending_control_deltas.append(delta)
    return result


def _anchored_mean(
    updates: Sequence[tuple[PeftTensors, int]], total: int
) -> PeftTensors:
    """Weighted mean anchored at the first update.

    Computing ``u0 + sum(w_k * (u_k - u0))`` makes K identical updates return
    the first one bit-exactly, which plain weighted summation does not.
    """
    anchor, _ = updates[0]
    mean = {name: anchor[name].copy() for name in anchor}
    for tensors, n_k in updates[1:]:
        w = n_k / total
        for name in mean:
            mean[name] += w * (tensors[name] - anchor[name])
    return mean


def aggregate(
    updates: Sequence[tuple[PeftTensors, int]], protocol: AggregationProtocol
) -> PeftTensors:
    """Combine client updates into the new global client-visible tensors."""
    if len(updates) == 0:
        raise ValueError("no updates to aggregate")
    anchor = updates[0][0]
    for tensors, n_k in updates:
        if n_k <= 0:
            raise ValueError("client weights must be positive")
        if set(tensors) != set(anchor):
            raise ValueError("updates carry different tensor names")
        for name in anchor:
            if tensors[name].shape != anchor[name].shape:
                raise ValueError(f"shape mismatch on {name!r}")
    total = sum(n_k for _, n_k in updates)
    mean = _anchored_mean(updates, total)

    if protocol.kind in ("fedavg", "fedprox"):
        return mean

    if protocol.kind == "fedavgm":
        if protocol.reference is None or protocol.momentum_buffer is None:
            raise StateError("momentum protocol not initialized; call begin_round")
        out: PeftTensors = {}
        new_buffer: PeftTensors = {}
        for name in mean:
            carried = protocol.momentum * protocol.momentum_buffer[name]
            out[name] = mean[name] + carried
            new_buffer[name] = carried + (mean[name] - protocol.reference[name])
        protocol.momentum_buffer = new_buffer
        return out

    # scaffold: plain weighted mean plus the server control update
    if protocol.server_control is None:
        raise StateError("scaffold controls not initialized; call begin_round")
    deltas = protocol.pending_control_deltas
    if deltas:
        k = len(deltas)
        for name in protocol.server_control:
            protocol.server_control[name] = (
                protocol.server_control[name]
                + sum(d[name] for d in deltas) / k
            )
        protocol.pending_control_deltas = []
    return mean


@dataclass
class RoundRecord:
    round_index: int
    acc_global: float
    vr_self: tuple[float, ...]
    vr_leakage: tuple[float, ...]
    prep_ms: float
    train_ms: float
    aggregate_ms: float
    verify_ms: float

    @property
    def vr_other_mean(self) -> float:
        return float(np.mean(self.vr_leakage)) if self.vr_leakage else float("nan")

    def deterministic_fields(self) -> tuple:
        """Everything except wall-clock timings."""
        return (self.round_index, self.acc_global, self.vr_self, self.vr_leakage)


@dataclass
class FederationRun:
    """Complete state of one federated experiment."""

    global_model: TinyModel
    registry: TriggerRegistry
    partitions: list[list[Example]]
    protocol: AggregationProtocol
    rounds: int
    watermark: WatermarkState | None = None
    watermark_dataset: tuple[Example, ...] = ()
    local_epochs: int = 3
    learning_rate: float = 0.05
    batch_size: int = 4
    reinforce_epochs: int = 1
    reinforce_lr: float | None = None  # None: reuse the client learning rate
    eval_data: tuple[Example, ...] = ()
    verification: VerificationConfig | None = None
    target_label: int = 1
    seed: int = 0
    verify_every_round: bool = True
    round_log: list[RoundRecord] = field(default_factory=list)
    final_report: VerificationReport | None = None
    step1_ms: float = 0.0  # set by the experiment layer (watermark training)
    round_hook: object | None = None  # callable(run), invoked after each round

    def client_trigger_list(self) -> list[int]:
        triggers = self.registry.client_triggers()
        return [triggers[k] for k in sorted(triggers)]


def prepared_client_models(run: FederationRun) -> list[TinyModel]:
    """The models clients would receive from the current global state."""
    if run.watermark is None:
        return [run.global_model.copy() for _ in run.partitions]
    return [
        prepare_client_model(run.global_model, run.watermark, trigger)
        for trigger in run.client_trigger_list()
    ]


def run_federation(run: FederationRun) -> FederationRun:
    """Execute all rounds; deterministic for a fixed run seed."""
    if run.watermark is not None and not run.watermark.trained:
        raise StateError("watermark must be trained before federation starts")
    num_clients = len(run.partitions)

    for rnd in range(run.rounds):
        run.protocol.begin_round(run.global_model.peft_tensors(), num_clients)

        t0 = time.perf_counter()
        prepared = prepared_client_models(run)
        t1 = time.perf_counter()

        updates: list[tuple[PeftTensors, int]] = []
        for k in range(num_clients):
            update = local_train(
                prepared[k],
                run.partitions[k],
                run.local_epochs,
                run.learning_rate,
                run.protocol,
                batch_size=run.batch_size,
                seed=derive_seed(run.seed, "local", rnd, k),
                client_index=k,
            )
            updates.append((update, len(run.partitions[k])))
        t2 = time.perf_counter()

        new_tensors = aggregate(updates, run.protocol)
        run.global_model = run.global_model.with_peft_tensors(new_tensors)
        if run.watermark is not None and run.reinforce_epochs > 0:
            run.global_model = reinforce_watermark(
                run.global_model,
                run.watermark,
                run.watermark_dataset,
                epochs=run.reinforce_epochs,
                learning_rate=(
                    run.learning_rate if run.reinforce_lr is None else run.reinforce_lr
                ),
                batch_size=run.batch_size,
                seed=derive_seed(run.seed, "reinforce", rnd),
            )
        t3 = time.perf_counter()

        acc = accuracy(run.global_model, run.eval_data) if run.eval_data else float("nan")
        vr_self: tuple[float, ...] = ()
        vr_leak: tuple[float, ...] = ()
        want_vr = run.verify_every_round or rnd == run.rounds - 1
        if run.watermark is not None and run.verification is not None and want_vr:
            models = prepared_client_models(run)
            predictors = [make_predictor(m) for m in models]
            report = build_report(
                predictors, run.registry, run.verification, run.target_label
            )
            vr_self = tuple(float(v) for v in report.confidence)
            vr_leak = tuple(float(v) for v in report.leakage)
            run.final_report = report
        t4 = time.perf_counter()

        run.round_log.append(
            RoundRecord(
                round_index=rnd,
                acc_global=acc,
                vr_self=vr_self,
                vr_leakage=vr_leak,
                prep_ms=(t1 - t0) * 1e3,
                train_ms=(t2 - t1) * 1e3,
                aggregate_ms=(t3 - t2) * 1e3,
                verify_ms=(t4 - t3) * 1e3,
            )
        )
        if run.round_hook is not None:
            run.round_hook(run)
    return run


def write_round_log(run: FederationRun, path) -> None:
    """CSV: round, acc_global, per-client vr_self, mean vr_other, wall_time_ms."""
    num_clients = len(run.partitions)
    header = (
        ["round", "acc_global"]
        + [f"vr_self_{k}" for k in range(num_clients)]
        + ["vr_other_mean", "wall_time_ms"]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in run.round_log:
            vr_cols = list(rec.vr_self) if rec.vr_self else [""] * num_clients
            leak = rec.vr_other_mean if rec.vr_leakage else ""
            wall = rec.prep_ms + rec.train_ms + rec.aggregate_ms + rec.verify_ms
            writer.writerow([rec.round_index, rec.acc_global, *vr_cols, leak, wall])

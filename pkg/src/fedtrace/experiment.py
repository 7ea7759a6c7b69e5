"""Config-driven experiment runner.

Reads a JSON config (unknown fields are errors, so typos fail loudly), builds
the corpus / registry / watermark / federation from one master seed, runs the
rounds and writes the artifact set: round_log.csv, vr_matrix.json,
report.json, attacks.csv and manifest.json. Reruns of the same config produce
byte-identical report.json.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import AttackConfig, apply_attack, attack_parameter
from .data import Corpus, CorpusSpec, generate_corpus
from .federation import (
    AggregationProtocol,
    FederationRun,
    PartitionSpec,
    partition,
    prepared_client_models,
    run_federation,
    write_round_log,
)
from .identity import (
    TriggerRegistry,
    generate_identity,
    sign_and_assign,
)
from .model import (
    Example,
    TinyModel,
    accuracy,
    full_mask,
    init_model,
    make_predictor,
    set_row,
    train,
)
from .seeding import derive_seed
from .verifier import (
    VerificationConfig,
    make_verification_pool,
    verification_rate,
)
from .watermark import (
    PoisonRecipe,
    WatermarkState,
    build_watermark_dataset,
    train_universal_watermark,
)

SWEEP_AXES = ("poison_ratio", "wm_epochs", "clients", "wm_set_size")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class CorpusSection:
    vocab_size: int = 2000
    num_classes: int = 4
    samples_per_class: int = 500
    min_len: int = 8
    max_len: int = 20
    class_signal_strength: float = 0.7


@dataclass(frozen=True)
class PartitionSection:
    mode: str = "iid"
    num_clients: int = 10
    beta: float = 0.5


@dataclass(frozen=True)
class FederationSection:
    rounds: int = 20
    local_epochs: int = 3
    lr: float = 1.0
    batch_size: int = 4
    protocol: str = "fedavg"
    momentum: float = 0.9
    mu: float = 0.01
    reinforce_epochs: int = 1
    reinforce_lr: float = 0.1
    # Desk-scale stand-in for starting from a pretrained model: the server
    # fits the freshly initialized model on its own slice before anything
    # else. Without it the early global model predicts near-uniformly, which
    # alone pushes every verification rate to ~1/C.
    pretrain_epochs: int = 10
    pretrain_lr: float = 0.3
    verify_every_round: bool = True
    server_is_client: bool = True


@dataclass(frozen=True)
class WatermarkSection:
    enabled: bool = True
    target_label: int = 1
    poison_ratio: float = 0.1
    insertions: int = 1
    wm_epochs: int = 5
    wm_lr: float = 0.3
    wm_batch: int = 4
    wm_set_size: int | None = None


@dataclass(frozen=True)
class VerificationSection:
    gamma: float = 0.9
    sigma: float = 0.9
    num_samples: int = 200


@dataclass(frozen=True)
class AttackSection:
    kind: str = "prune"
    prune_rate: float = 0.3
    bits: int = 8
    noise_std: float = 0.0
    finetune_epochs: int = 9
    finetune_lr: float = 0.05
    full_params: bool = False
    overwrite_epochs: int = 5
    overwrite_lr: float = 0.3


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 42
    output_dir: str = "runs/experiment"
    corpus: CorpusSection = field(default_factory=CorpusSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    federation: FederationSection = field(default_factory=FederationSection)
    watermark: WatermarkSection = field(default_factory=WatermarkSection)
    verification: VerificationSection = field(default_factory=VerificationSection)
    attacks: tuple[AttackSection, ...] = ()


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _parse_section(raw: dict, path: str, cls, extra_checks=None):
    _check(isinstance(raw, dict), path, "expected a JSON object")
    defaults = cls()
    allowed = set(defaults.__dataclass_fields__)
    for key in raw:
        _check(key in allowed, f"{path}.{key}", "unknown field")
    values = {}
    for key, val in raw.items():
        expected = type(getattr(defaults, key))
        if expected is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if getattr(defaults, key) is None:
            pass  # optional field, keep whatever arrived
        elif not isinstance(val, expected) or (
            expected is not bool and isinstance(val, bool)
        ):
            raise ConfigError(f"{path}.{key}", f"expected {expected.__name__}")
        values[key] = val
    section = replace(defaults, **values)
    if extra_checks:
        extra_checks(section, path)
    return section


def _corpus_checks(s: CorpusSection, path: str) -> None:
    _check(s.vocab_size > s.num_classes * 10, f"{path}.vocab_size", "too small")
    _check(s.num_classes >= 2, f"{path}.num_classes", "need at least 2 classes")
    _check(s.samples_per_class >= 5, f"{path}.samples_per_class", "too few samples")
    _check(2 <= s.min_len <= s.max_len, f"{path}.min_len", "need 2 <= min <= max")
    _check(
        0.0 <= s.class_signal_strength <= 1.0,
        f"{path}.class_signal_strength",
        "must lie in [0, 1]",
    )


def _partition_checks(s: PartitionSection, path: str) -> None:
    _check(s.mode in ("iid", "dirichlet"), f"{path}.mode", "iid or dirichlet")
    _check(s.num_clients >= 2, f"{path}.num_clients", "need at least 2 clients")
    _check(s.beta > 0.0, f"{path}.beta", "must be positive")


def _federation_checks(s: FederationSection, path: str) -> None:
    _check(s.rounds >= 0, f"{path}.rounds", "must be non-negative")
    _check(s.local_epochs >= 1, f"{path}.local_epochs", "must be positive")
    _check(s.lr > 0.0, f"{path}.lr", "must be positive")
    _check(s.batch_size >= 1, f"{path}.batch_size", "must be positive")
    _check(
        s.protocol in ("fedavg", "fedavgm", "fedprox", "scaffold"),
        f"{path}.protocol",
        "unknown protocol",
    )
    _check(0.0 <= s.momentum < 1.0, f"{path}.momentum", "must lie in [0, 1)")
    _check(s.mu >= 0.0, f"{path}.mu", "must be non-negative")
    _check(s.reinforce_epochs >= 0, f"{path}.reinforce_epochs", "must be non-negative")
    _check(s.reinforce_lr > 0.0, f"{path}.reinforce_lr", "must be positive")
    _check(s.pretrain_epochs >= 0, f"{path}.pretrain_epochs", "must be non-negative")
    _check(s.pretrain_lr > 0.0, f"{path}.pretrain_lr", "must be positive")


def _watermark_checks(s: WatermarkSection, path: str) -> None:
    _check(0.0 < s.poison_ratio <= 1.0, f"{path}.poison_ratio", "must lie in (0, 1]")
    _check(s.target_label >= 0, f"{path}.target_label", "must be non-negative")
    _check(s.insertions >= 1, f"{path}.insertions", "must be positive")
    _check(s.wm_epochs >= 1, f"{path}.wm_epochs", "must be positive")
    _check(s.wm_lr > 0.0, f"{path}.wm_lr", "must be positive")
    _check(s.wm_batch >= 1, f"{path}.wm_batch", "must be positive")
    if s.wm_set_size is not None:
        _check(
            isinstance(s.wm_set_size, int) and s.wm_set_size >= 1,
            f"{path}.wm_set_size",
            "must be a positive integer",
        )


def _verification_checks(s: VerificationSection, path: str) -> None:
    _check(0.0 < s.gamma < 1.0, f"{path}.gamma", "must lie in (0, 1)")
    _check(0.0 < s.sigma < 1.0, f"{path}.sigma", "must lie in (0, 1)")
    _check(s.num_samples >= 1, f"{path}.num_samples", "must be positive")


def _attack_checks(s: AttackSection, path: str) -> None:
    _check(
        s.kind in ("finetune", "prune", "quantize", "noise", "overwrite"),
        f"{path}.kind",
        "unknown attack",
    )
    _check(0.0 <= s.prune_rate < 1.0, f"{path}.prune_rate", "must lie in [0, 1)")
    _check(s.bits >= 2, f"{path}.bits", "need at least 2 bits")
    _check(s.noise_std >= 0.0, f"{path}.noise_std", "must be non-negative")


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw JSON dict into an ExperimentConfig (unknown keys fail)."""
    top_allowed = {
        "master_seed",
        "output_dir",
        "corpus",
        "partition",
        "federation",
        "watermark",
        "verification",
        "attacks",
    }
    for key in raw:
        _check(key in top_allowed, key, "unknown field")
    master_seed = raw.get("master_seed", 42)
    _check(
        isinstance(master_seed, int) and not isinstance(master_seed, bool),
        "master_seed",
        "expected int",
    )
    output_dir = raw.get("output_dir", "runs/experiment")
    _check(isinstance(output_dir, str), "output_dir", "expected str")
    attacks_raw = raw.get("attacks", [])
    _check(isinstance(attacks_raw, list), "attacks", "expected list")
    attacks = tuple(
        _parse_section(a, f"attacks[{i}]", AttackSection, _attack_checks)
        for i, a in enumerate(attacks_raw)
    )
    return ExperimentConfig(
        master_seed=master_seed,
        output_dir=output_dir,
        corpus=_parse_section(raw.get("corpus", {}), "corpus", CorpusSection, _corpus_checks),
        partition=_parse_section(
            raw.get("partition", {}), "partition", PartitionSection, _partition_checks
        ),
        federation=_parse_section(
            raw.get("federation", {}), "federation", FederationSection, _federation_checks
        ),
        watermark=_parse_section(
            raw.get("watermark", {}), "watermark", WatermarkSection, _watermark_checks
        ),
        verification=_parse_section(
            raw.get("verification", {}),
            "verification",
            VerificationSection,
            _verification_checks,
        ),
        attacks=attacks,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(json.load(fh))


def derived_seeds(config: ExperimentConfig) -> dict[str, int]:
    m = config.master_seed
    return {
        "corpus": derive_seed(m, "corpus"),
        "model": derive_seed(m, "model"),
        "partition": derive_seed(m, "partition"),
        "recipe": derive_seed(m, "recipe"),
        "verification": derive_seed(m, "verification"),
        "federation": derive_seed(m, "federation"),
        "wm_subset": derive_seed(m, "wm_subset"),
        "attacks": derive_seed(m, "attacks"),
    }


@dataclass
class ExperimentSetup:
    """Everything built before the federation rounds start."""

    config: ExperimentConfig
    corpus: Corpus
    registry: TriggerRegistry
    watermark: WatermarkState | None
    watermark_dataset: tuple[Example, ...]
    verification: VerificationConfig
    run: FederationRun
    server_data: tuple[Example, ...]
    step1_ms: float
    initial_embedding: np.ndarray | None = None  # canonical table after setup


def setup_experiment(config: ExperimentConfig) -> ExperimentSetup:
    """Trigger generation, partitioning and initial watermark training."""
    seeds = derived_seeds(config)
    c = config.corpus
    corpus = generate_corpus(
        CorpusSpec(
            vocab_size=c.vocab_size,
            num_classes=c.num_classes,
            samples_per_class=c.samples_per_class,
            min_len=c.min_len,
            max_len=c.max_len,
            class_signal_strength=c.class_signal_strength,
            seed=seeds["corpus"],
        )
    )
    model = init_model(
        vocab_size=c.vocab_size,
        num_classes=c.num_classes,
        seed=seeds["model"],
    )

    # Tokens seen in clean data can never become triggers.
    reserved = frozenset(corpus.emitted_indices | {corpus.vocab.unk_index})
    registry = TriggerRegistry(reserved_indices=reserved)
    k = config.partition.num_clients
    server_identity = generate_identity(
        -1, b"server", timestamp=0, seed=derive_seed(config.master_seed, "identity", "server")
    )
    universal = sign_and_assign(
        server_identity, c.vocab_size, registry, universal=True, vocab=corpus.vocab
    )
    for cid in range(k):
        ident = generate_identity(
            cid,
            f"client-{cid}".encode(),
            timestamp=cid + 1,
            seed=derive_seed(config.master_seed, "identity", cid),
        )
        sign_and_assign(ident, c.vocab_size, registry, vocab=corpus.vocab)

    # The server's private slice is held out first with a representative
    # (uniform) draw: the defender collects its own data, so it is never
    # subject to the clients' heterogeneity. Under server_is_client it then
    # doubles as client slot 0.
    slots = k if config.federation.server_is_client else k + 1
    rng = np.random.default_rng(derive_seed(config.master_seed, "server-slice"))
    order = rng.permutation(len(corpus.train))
    server_size = len(corpus.train) // slots
    server_data = tuple(corpus.train[i] for i in order[:server_size])
    rest = [corpus.train[i] for i in order[server_size:]]

    num_partitioned = k - 1 if config.federation.server_is_client else k
    if num_partitioned >= 2:
        spec = PartitionSpec(
            mode=config.partition.mode,
            num_clients=num_partitioned,
            beta=config.partition.beta,
            seed=seeds["partition"],
        )
        client_parts = partition(rest, spec)
    else:
        client_parts = [rest]
    if config.federation.server_is_client:
        partitions = [list(server_data)] + client_parts
    else:
        partitions = client_parts

    if config.federation.pretrain_epochs > 0:
        model = train(
            model,
            server_data,
            full_mask(c.vocab_size),
            epochs=config.federation.pretrain_epochs,
            learning_rate=config.federation.pretrain_lr,
            batch_size=config.federation.batch_size,
            seed=derive_seed(config.master_seed, "pretrain"),
        )

    wm = config.watermark
    watermark_state: WatermarkState | None = None
    watermark_dataset: tuple[Example, ...] = ()
    step1_ms = 0.0
    if wm.enabled:
        recipe = PoisonRecipe(
            trigger_index=universal.trigger_index,
            target_label=wm.target_label,
            poison_ratio=wm.poison_ratio,
            insertions=wm.insertions,
            seed=seeds["recipe"],
        )
        source = server_data
        if wm.wm_set_size is not None and wm.wm_set_size < len(source):
            rng = np.random.default_rng(seeds["wm_subset"])
            chosen = rng.choice(len(source), size=wm.wm_set_size, replace=False)
            source = tuple(source[i] for i in chosen)
        watermark_dataset = tuple(
            build_watermark_dataset(list(source), recipe, corpus.vocab)
        )
        blank = WatermarkState(
            universal_index=universal.trigger_index,
            original_row=None,
            trained_row=None,
            recipe=recipe,
        )
        t0 = time.perf_counter()
        model, watermark_state = train_universal_watermark(
            model,
            watermark_dataset,
            blank,
            epochs=wm.wm_epochs,
            learning_rate=wm.wm_lr,
            batch_size=wm.wm_batch,
        )
        step1_ms = (time.perf_counter() - t0) * 1e3
        # Canonical global keeps the original row; the trained row is only
        # installed in per-client copies and during reinforcement.
        model = set_row(model, universal.trigger_index, watermark_state.original_row)

    # Verification reuses the injection insertion rule for train/verify symmetry.
    verification = VerificationConfig(
        pool=make_verification_pool(corpus.test, wm.target_label),
        gamma=config.verification.gamma,
        sigma=config.verification.sigma,
        num_samples=config.verification.num_samples,
        insertions=wm.insertions,
        seed=seeds["verification"],
    )

    fed = config.federation
    run = FederationRun(
        global_model=model,
        registry=registry,
        partitions=partitions,
        protocol=AggregationProtocol(
            kind=fed.protocol, momentum=fed.momentum, mu=fed.mu
        ),
        rounds=fed.rounds,
        watermark=watermark_state,
        watermark_dataset=watermark_dataset,
        local_epochs=fed.local_epochs,
        learning_rate=fed.lr,
        batch_size=fed.batch_size,
        reinforce_epochs=fed.reinforce_epochs,
        reinforce_lr=fed.reinforce_lr,
        eval_data=corpus.test,
        verification=verification,
        target_label=wm.target_label,
        seed=seeds["federation"],
        verify_every_round=fed.verify_every_round,
        step1_ms=step1_ms,
    )
    return ExperimentSetup(
        config=config,
        corpus=corpus,
        registry=registry,
        watermark=watermark_state,
        watermark_dataset=watermark_dataset,
        verification=verification,
        run=run,
        server_data=server_data,
        step1_ms=step1_ms,
        initial_embedding=model.embedding.copy(),
    )


def _evaluate_attacked(
    attacked: TinyModel,
    victim_index: int,
    setup: ExperimentSetup,
) -> tuple[float, float, float]:
    """(clean accuracy, VR on own trigger, mean VR on other triggers)."""
    predictor = make_predictor(attacked)
    acc = accuracy(attacked, setup.corpus.test)
    triggers = setup.run.client_trigger_list()
    target = setup.config.watermark.target_label
    vr_self = verification_rate(
        predictor, triggers[victim_index], setup.verification, target
    )
    others = [
        verification_rate(predictor, t, setup.verification, target)
        for i, t in enumerate(triggers)
        if i != victim_index
    ]
    return acc, vr_self, float(np.mean(others)) if others else float("nan")


def build_attack_config(
    section: AttackSection, setup: ExperimentSetup, victim_index: int = 0
) -> AttackConfig:
    """Fill the runtime fields an attack needs (data, adversary recipe)."""
    recipe = None
    if section.kind == "overwrite":
        occupied = setup.registry.occupied_indices()
        eligible = sorted(setup.corpus.trigger_eligible - occupied)
        if not eligible:
            raise RuntimeError("no trigger-eligible index left for the adversary")
        rng = np.random.default_rng(derive_seed(setup.config.master_seed, "adversary"))
        adversary_trigger = int(eligible[rng.integers(0, len(eligible))])
        recipe = PoisonRecipe(
            trigger_index=adversary_trigger,
            target_label=setup.config.watermark.target_label,
            poison_ratio=setup.config.watermark.poison_ratio,
            insertions=setup.config.watermark.insertions,
            seed=derive_seed(setup.config.master_seed, "adversary-recipe"),
        )
    return AttackConfig(
        kind=section.kind,
        prune_rate=section.prune_rate,
        bits=section.bits,
        noise_std=section.noise_std,
        finetune_epochs=section.finetune_epochs,
        finetune_lr=section.finetune_lr,
        finetune_data=tuple(setup.run.partitions[victim_index]),
        full_params=section.full_params,
        overwrite_recipe=recipe,
        overwrite_epochs=section.overwrite_epochs,
        overwrite_lr=section.overwrite_lr,
        batch_size=setup.config.federation.batch_size,
        seed=derive_seed(setup.config.master_seed, "attack", section.kind),
    )


@dataclass
class ExperimentResult:
    setup: ExperimentSetup
    run: FederationRun
    report_dict: dict
    attack_rows: list[dict]


def execute_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the whole pipeline in memory (no files written)."""
    setup = setup_experiment(config)
    run = run_federation(setup.run)

    report_dict: dict = {
        "protocol": config.federation.protocol,
        "clients": config.partition.num_clients,
        "rounds": config.federation.rounds,
        "watermark_enabled": config.watermark.enabled,
        "acc_by_round": [rec.acc_global for rec in run.round_log],
        "acc_final": run.round_log[-1].acc_global if run.round_log else None,
    }
    if run.final_report is not None:
        report_dict.update(
            {
                "confidence": run.final_report.confidence.tolist(),
                "leakage": run.final_report.leakage.tolist(),
                "interval": run.final_report.interval.tolist(),
                "trace_verdicts": list(run.final_report.trace_verdicts),
            }
        )

    attack_rows: list[dict] = []
    if config.attacks and config.watermark.enabled and run.rounds > 0:
        victim_index = 0
        victim = prepared_client_models(run)[victim_index]
        for section in config.attacks:
            attack_cfg = build_attack_config(section, setup, victim_index)
            attacked = apply_attack(victim, attack_cfg, setup.corpus.vocab)
            acc, vr_self, vr_other = _evaluate_attacked(attacked, victim_index, setup)
            attack_rows.append(
                {
                    "attack": section.kind,
                    "parameter": attack_parameter(attack_cfg),
                    "acc": acc,
                    "vr_self": vr_self,
                    "vr_other_mean": vr_other,
                }
            )
    return ExperimentResult(
        setup=setup, run=run, report_dict=report_dict, attack_rows=attack_rows
    )


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


ARTIFACT_NAMES = (
    "round_log.csv",
    "vr_matrix.json",
    "report.json",
    "attacks.csv",
    "manifest.json",
)


def write_artifacts(result: ExperimentResult, output_dir: Path) -> None:
    """Write the full artifact set; a failed write removes the partial set."""
    output_dir.mkdir(parents=True, exist_ok=True)
    try:
        write_round_log(result.run, output_dir / "round_log.csv")
        if result.run.final_report is not None:
            result.run.final_report.save_json(output_dir / "vr_matrix.json")
        else:
            _write_json({"vr_matrix": None}, output_dir / "vr_matrix.json")
        _write_json(result.report_dict, output_dir / "report.json")
        with open(output_dir / "attacks.csv", "w", encoding="utf-8") as fh:
            fh.write("attack,parameter,acc,vr_self,vr_other_mean\n")
            for row in result.attack_rows:
                fh.write(
                    f"{row['attack']},{row['parameter']},{row['acc']},"
                    f"{row['vr_self']},{row['vr_other_mean']}\n"
                )
        manifest = {
            "config": asdict(result.setup.config),
            "derived_seeds": derived_seeds(result.setup.config),
        }
        _write_json(manifest, output_dir / "manifest.json")
    except BaseException:
        for name in ARTIFACT_NAMES:
            (output_dir / name).unlink(missing_ok=True)
        raise


def run_experiment(config: ExperimentConfig, output_dir: str | Path | None = None):
    """Execute and write artifacts; returns the in-memory result."""
    result = execute_experiment(config)
    target = Path(output_dir) if output_dir is not None else Path(config.output_dir)
    write_artifacts(result, target)
    return result


def _substitute_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "poison_ratio":
        return replace(config, watermark=replace(config.watermark, poison_ratio=float(value)))
    if axis == "wm_epochs":
        return replace(config, watermark=replace(config.watermark, wm_epochs=int(value)))
    if axis == "clients":
        return replace(config, partition=replace(config.partition, num_clients=int(value)))
    if axis == "wm_set_size":
        return replace(config, watermark=replace(config.watermark, wm_set_size=int(value)))
    raise ValueError(f"unknown sweep axis {axis!r}; pick one of {SWEEP_AXES}")


def ablation_sweep(
    config: ExperimentConfig,
    axis: str,
    values: Sequence,
    output_path: str | Path | None = None,
) -> list[dict]:
    """Re-run the experiment once per value of the axis; one CSV row per value.

    Failed runs are recorded with status=error and the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; pick one of {SWEEP_AXES}")
    rows: list[dict] = []
    for value in values:
        sub = _substitute_axis(config, axis, value)
        t0 = time.perf_counter()
        try:
            result = execute_experiment(sub)
            rep = result.run.final_report
            rows.append(
                {
                    "axis": axis,
                    "value": value,
                    "acc": result.report_dict["acc_final"],
                    "vr_self_mean": float(rep.confidence.mean()) if rep else float("nan"),
                    "vr_other_mean": float(rep.leakage.mean()) if rep else float("nan"),
                    "wall_time_ms": (time.perf_counter() - t0) * 1e3,
                    "status": "ok",
                }
            )
        except Exception as exc:  # noqa: BLE001 - sweep must keep going
            rows.append(
                {
                    "axis": axis,
                    "value": value,
                    "acc": float("nan"),
                    "vr_self_mean": float("nan"),
                    "vr_other_mean": float("nan"),
                    "wall_time_ms": (time.perf_counter() - t0) * 1e3,
                    "status": f"error: {exc}",
                }
            )
    if output_path is not None:
        with open(output_path, "w", encoding="utf-8") as fh:
            fh.write("axis,value,acc,vr_self_mean,vr_other_mean,wall_time_ms,status\n")
            for r in rows:
                fh.write(
                    f"{r['axis']},{r['value']},{r['acc']},{r['vr_self_mean']},"
                    f"{r['vr_other_mean']},{r['wall_time_ms']},{r['status']}\n"
                )
    return rows


def wall_clock_report(
    configs: Sequence[ExperimentConfig],
    repeats: int = 1,
    output_path: str | Path | None = None,
) -> list[dict]:
    """Per-config, per-phase wall times (medians over ``repeats`` runs).

    Phases: initial watermark training (independent of client count), local
    client training, per-client row replacement, aggregation + reinforcement,
    verification. Per-round figures are averaged over rounds.
    """
    if len(configs) == 0:
        raise ValueError("need at least one config")
    rows: list[dict] = []
    for idx, config in enumerate(configs):
        samples: list[dict[str, float]] = []
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            result = execute_experiment(config)
            total_ms = (time.perf_counter() - t0) * 1e3
            log = result.run.round_log

            def per_round(values):
                # Median over rounds: robust against first-round warmup cost.
                return statistics.median(values) if values else 0.0

            samples.append(
                {
                    "step1_ms": result.setup.step1_ms,
                    "replace_ms_per_round": per_round([r.prep_ms for r in log]),
                    "train_ms_per_round": per_round([r.train_ms for r in log]),
                    "aggregate_ms_per_round": per_round([r.aggregate_ms for r in log]),
                    "verify_ms_per_round": per_round([r.verify_ms for r in log]),
                    "total_ms": total_ms,
                }
            )
        med = {
            key: statistics.median(s[key] for s in samples) for key in samples[0]
        }
        rows.append(
            {
                "config": idx,
                "clients": config.partition.num_clients,
                "rounds": config.federation.rounds,
                **med,
            }
        )
    if output_path is not None:
        keys = list(rows[0].keys())
        with open(output_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(keys) + "\n")
            for r in rows:
                fh.write(",".join(str(r[k]) for k in keys) + "\n")
    return rows

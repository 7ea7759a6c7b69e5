"""Command-line entry points.

  fedtrace run <config.json>
  fedtrace sweep <config.json> --axis poison_ratio --values 0.05,0.1,0.2
  fedtrace attack <config.json> --kind prune --prune-rate 0.3
  fedtrace verify <checkpoint.npz> --registry registry.json --pool pool.tsv \
      --vocab vocab.txt [--target-label 1]
  fedtrace timing <config.json> [<config.json> ...] [--repeats 3]

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import load_examples
from .experiment import (
    AttackSection,
    ConfigError,
    ablation_sweep,
    build_attack_config,
    execute_experiment,
    load_config,
    run_experiment,
    wall_clock_report,
    _evaluate_attacked,
)
from .attacks import apply_attack
from .federation import prepared_client_models
from .identity import load_registry
from .model import load_checkpoint, load_vocab, make_predictor
from .verifier import (
    VerificationConfig,
    format_verdict,
    make_verification_pool,
    trace_details,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedtrace",
        description="Federated watermarking experiments with black-box tracing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment end to end")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=None, help="override output dir")

    p_sweep = sub.add_parser("sweep", help="re-run the experiment along one axis")
    p_sweep.add_argument("config", type=Path)
    p_sweep.add_argument(
        "--axis",
        required=True,
        choices=["poison_ratio", "wm_epochs", "clients", "wm_set_size"],
    )
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out", type=Path, default=Path("sweep.csv"))

    p_attack = sub.add_parser("attack", help="run one attack against a client model")
    p_attack.add_argument("config", type=Path)
    p_attack.add_argument(
        "--kind",
        required=True,
        choices=["finetune", "prune", "quantize", "noise", "overwrite"],
    )
    p_attack.add_argument("--prune-rate", type=float, default=0.3)
    p_attack.add_argument("--bits", type=int, default=8)
    p_attack.add_argument("--noise-std", type=float, default=0.01)
    p_attack.add_argument("--epochs", type=int, default=9)
    p_attack.add_argument("--full-params", action="store_true")

    p_verify = sub.add_parser("verify", help="black-box trace of a suspect checkpoint")
    p_verify.add_argument("checkpoint", type=Path)
    p_verify.add_argument("--registry", type=Path, required=True)
    p_verify.add_argument("--pool", type=Path, required=True, help="clean TSV corpus")
    p_verify.add_argument("--vocab", type=Path, required=True)
    p_verify.add_argument("--target-label", type=int, default=1)
    p_verify.add_argument("--gamma", type=float, default=0.9)
    p_verify.add_argument("--samples", type=int, default=200)
    p_verify.add_argument("--seed", type=int, default=0)

    p_timing = sub.add_parser("timing", help="per-phase wall-clock report")
    p_timing.add_argument("configs", type=Path, nargs="+")
    p_timing.add_argument("--repeats", type=int, default=1)
    p_timing.add_argument("--out", type=Path, default=Path("timing.csv"))
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    result = run_experiment(config, output_dir=args.out)
    out = Path(args.out) if args.out is not None else Path(config.output_dir)
    final = result.report_dict.get("acc_final")
    print(f"run complete: artifacts in {out}  acc_final={final}")
    if "confidence" in result.report_dict:
        conf = result.report_dict["confidence"]
        leak = result.report_dict["leakage"]
        print(
            f"confidence mean={sum(conf)/len(conf):.4f}  "
            f"leakage mean={sum(leak)/len(leak):.4f}"
        )
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    values = [float(v) if "." in v else int(v) for v in args.values.split(",")]
    rows = ablation_sweep(config, args.axis, values, output_path=args.out)
    for row in rows:
        print(
            f"{args.axis}={row['value']}: acc={row['acc']:.4f} "
            f"vr_self={row['vr_self_mean']:.4f} vr_other={row['vr_other_mean']:.4f} "
            f"[{row['status']}]"
        )
    print(f"sweep written to {args.out}")
    return 0


def _cmd_attack(args) -> int:
    config = load_config(args.config)
    section = AttackSection(
        kind=args.kind,
        prune_rate=args.prune_rate,
        bits=args.bits,
        noise_std=args.noise_std,
        finetune_epochs=args.epochs,
        full_params=args.full_params,
    )
    result = execute_experiment(config)
    victim = prepared_client_models(result.run)[0]
    attack_cfg = build_attack_config(section, result.setup, victim_index=0)
    attacked = apply_attack(victim, attack_cfg, result.setup.corpus.vocab)
    acc, vr_self, vr_other = _evaluate_attacked(attacked, 0, result.setup)
    print(
        f"attack={args.kind} acc={acc:.4f} vr_self={vr_self:.4f} "
        f"vr_other_mean={vr_other:.4f}"
    )
    return 0


def _cmd_verify(args) -> int:
    model = load_checkpoint(args.checkpoint)
    registry = load_registry(args.registry)
    vocab = load_vocab(args.vocab)
    examples = load_examples(vocab, args.pool)
    pool = make_verification_pool(examples, args.target_label)
    config = VerificationConfig(
        pool=pool, gamma=args.gamma, num_samples=args.samples, seed=args.seed
    )
    predictor = make_predictor(model)
    verdict, rates = trace_details(predictor, registry, config, args.target_label)
    print(format_verdict(args.checkpoint.name, verdict, max(rates.values())))
    for cid in sorted(rates):
        print(f"  client {cid}: vr={rates[cid]:.4f}")
    return 0


def _cmd_timing(args) -> int:
    configs = [load_config(p) for p in args.configs]
    rows = wall_clock_report(configs, repeats=args.repeats, output_path=args.out)
    for row in rows:
        print(
            f"K={row['clients']}: step1={row['step1_ms']:.1f}ms "
            f"train/round={row['train_ms_per_round']:.1f}ms "
            f"replace/round={row['replace_ms_per_round']:.2f}ms"
        )
    print(f"timing written to {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "attack": _cmd_attack,
        "verify": _cmd_verify,
        "timing": _cmd_timing,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

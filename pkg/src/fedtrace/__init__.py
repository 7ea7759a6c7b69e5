"""Desk-scale federated learning with traceable black-box model watermarking.

The server plants an identity-specific trigger in each client's copy of the
global model by replacing a single embedding row, verifies leaked models with
black-box queries, and attributes them to the leaking client.
"""

from .attacks import AttackConfig, apply_attack
from .data import Corpus, CorpusSpec, generate_corpus
from .errors import CapacityError, IntegrityError, StateError
from .experiment import (
    ConfigError,
    ExperimentConfig,
    ablation_sweep,
    execute_experiment,
    load_config,
    parse_config,
    run_experiment,
    setup_experiment,
    wall_clock_report,
)
from .federation import (
    AggregationProtocol,
    FederationRun,
    PartitionSpec,
    aggregate,
    local_train,
    partition,
    run_federation,
)
from .identity import (
    ClientIdentity,
    TriggerAssignment,
    TriggerRegistry,
    generate_identity,
    resolve_dispute,
    sign_and_assign,
    verify_assignment,
)
from .model import (
    Example,
    Gradients,
    TinyModel,
    TrainableMask,
    Vocab,
    forward,
    init_model,
    loss_and_grad,
    make_predictor,
    sgd_step,
    tokenize,
)
from .verifier import (
    VerificationConfig,
    VerificationReport,
    build_report,
    collision_check,
    trace,
    verification_rate,
)
from .watermark import (
    PoisonRecipe,
    WatermarkState,
    build_watermark_dataset,
    overwrite_watermark,
    prepare_client_model,
    reinforce_watermark,
    train_universal_watermark,
)

__version__ = "0.1.0"

"""Budget-aware turn-level model routing with an offline-learned outcome estimator."""

from .detect import (
    ErrorEvent,
    ErrorRule,
    PenaltyConfig,
    detect,
    load_ruleset,
    outcome_targets,
    progress_weight,
    turn_penalty,
)
from .encoding import (
    HashingProvider,
    HistoryText,
    ModelEncoderParams,
    SidecarProvider,
    embed_history,
    encode_model,
    hash_embed,
    joint_features,
    serialize_history,
)
from .estimator import (
    RidgeNet,
    RouterNet,
    TrainConfig,
    TrainExample,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .pool import CostLedger, ModelDescriptor, attr_features, load_pool, turn_cost
from .routing import (
    EpisodeConfig,
    EpisodeLevelPolicy,
    LearnedPolicy,
    RandomPolicy,
    SingleModelPolicy,
    collect,
    run_episode,
    select,
)
from .simenv import SkillMatrix, SyntheticEnv, WorldSpec, generate_world, load_world, oracle
from .trajectory import Trajectory, Turn, read_jsonl, replay, write_jsonl

__version__ = "0.1.0"

__all__ = [
    "CostLedger",
    "EpisodeConfig",
    "EpisodeLevelPolicy",
    "ErrorEvent",
    "ErrorRule",
    "HashingProvider",
    "HistoryText",
    "LearnedPolicy",
    "ModelDescriptor",
    "ModelEncoderParams",
    "PenaltyConfig",
    "RandomPolicy",
    "RidgeNet",
    "RouterNet",
    "SidecarProvider",
    "SingleModelPolicy",
    "SkillMatrix",
    "SyntheticEnv",
    "TrainConfig",
    "TrainExample",
    "Trajectory",
    "Turn",
    "WorldSpec",
    "attr_features",
    "collect",
    "detect",
    "embed_history",
    "encode_model",
    "generate_world",
    "grad_check",
    "hash_embed",
    "joint_features",
    "load_checkpoint",
    "load_pool",
    "load_ruleset",
    "load_world",
    "oracle",
    "outcome_targets",
    "progress_weight",
    "read_jsonl",
    "replay",
    "run_episode",
    "save_checkpoint",
    "select",
    "serialize_history",
    "train",
    "turn_cost",
    "turn_penalty",
    "write_jsonl",
]

"""Learned context-count incrementing for incremental topic models of scenes.

The pipeline: sample labeled scene corpora from the generative model, fit
them with collapsed Gibbs sampling at assumed context counts, turn the
fitted models into labeled increment/hold training pairs, train a
recurrent classifier on those pairs, and use it to grow a streaming
context model one context at a time.
"""

from .dataset import (
    InputMode,
    PairBuildConfig,
    PairMeta,
    PairSet,
    TrainingPair,
    build_pair_sets,
    build_pairs,
    check_pairset,
    encode_input,
    load_pairs,
    save_pairs,
)
from .errors import (
    CinetError,
    ConfigError,
    DataError,
    FormatError,
    ShapeError,
    TrainingDiverged,
)
from .fileio import atomic_write, derive_seed
from .incremental import (
    CinetPolicy,
    EntropyRulePolicy,
    IncrementPolicy,
    OraclePolicy,
    StreamSchedule,
    SweepPoint,
    TraceRow,
    run_stream,
    sweep_increment,
    write_sweep_csv,
    write_trace_csv,
)
from .lda import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_RHO,
    Corpus,
    Fixed,
    GroundTruth,
    LdaModel,
    Poisson,
    ProbView,
    Scene,
    Vocabulary,
    add_context,
    empty_model,
    entropy_of_view,
    gibbs_fit,
    joint_log_likelihood,
    load_corpus,
    load_model,
    prob_view,
    recount,
    resample,
    sample_corpus,
    save_corpus,
    save_model,
    system_entropy,
    update_with_scene,
)
from .rnn import (
    AdamState,
    CellKind,
    EpochRecord,
    RnnConfig,
    RnnModel,
    TrainHistory,
    adam_step,
    evaluate,
    forward,
    gradients,
    init_adam,
    init_model,
    load_rnn,
    loss,
    save_rnn,
    train,
    write_metrics_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "CellKind", "CinetError", "CinetPolicy", "ConfigError",
    "Corpus", "DataError", "DEFAULT_ALPHA", "DEFAULT_BETA", "DEFAULT_RHO",
    "EntropyRulePolicy", "EpochRecord", "Fixed", "FormatError",
    "GroundTruth", "IncrementPolicy", "InputMode", "LdaModel",
    "OraclePolicy", "PairBuildConfig", "PairMeta", "PairSet", "Poisson",
    "ProbView", "RnnConfig", "RnnModel", "Scene", "ShapeError",
    "StreamSchedule", "SweepPoint", "TraceRow", "TrainHistory",
    "TrainingDiverged", "TrainingPair", "Vocabulary",
    "adam_step", "add_context", "atomic_write", "build_pair_sets",
    "build_pairs", "check_pairset", "derive_seed", "empty_model",
    "encode_input", "entropy_of_view", "evaluate", "forward", "gibbs_fit",
    "gradients", "init_adam", "init_model", "joint_log_likelihood",
    "load_corpus", "load_model", "load_pairs",
    "load_rnn", "loss", "prob_view", "recount", "resample", "run_stream",
    "sample_corpus", "save_corpus", "save_model", "save_pairs", "save_rnn",
    "sweep_increment", "system_entropy", "train", "update_with_scene",
    "write_metrics_csv", "write_sweep_csv", "write_trace_csv",
]

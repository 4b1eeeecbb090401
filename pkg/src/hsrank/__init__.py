"""Lightweight best-of-K rerankers over cached LLM hidden-state features.

The package trains and serves two small rankers (listwise and pointwise)
that pick the best of K candidate responses using only the final-token
hidden states the base model already computed.  All forward math,
gradients and optimizers are implemented from first principles on a
minimal float64 autodiff kernel.
"""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import (
    ContractViolation,
    CorruptionError,
    EvaluationError,
    FormatError,
    GradCheckError,
    HsrankError,
    TrainingError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    ablation_run,
    evaluate,
    first_sample_accuracy,
    oracle_accuracy,
    oracle_curve,
    scaling_curve,
    selection_accuracy,
)
from .features import (
    CLASSIFICATION,
    REGRESSION,
    CandidateGroup,
    DatasetMeta,
    FeatureRecord,
    SamplingInfo,
    dataset_fingerprint,
    make_record,
    read_dataset,
    sample_groups,
    write_dataset,
)
from .losses import LossReport, list_cls_loss, list_reg_loss, point_cls_loss, point_reg_loss
from .rankers import (
    COSINE,
    LEARNABLE,
    LISTWISE,
    POINTWISE,
    ListwiseParams,
    PointwiseParams,
    ScoringTrace,
    cosine_relevance,
    init_ranker,
    learnable_relevance,
    parameter_count,
    score_group,
    score_listwise,
    score_pointwise,
    select_best,
)
from .synthetic import linear_rule_dataset, linear_score_dataset
from .training import DEFAULT_SEED, TrainConfig, TrainLog, default_grid, grid_search, train

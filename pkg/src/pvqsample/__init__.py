"""Parallel vector-quantization (PVQ) sampling for imbalanced stream windows."""

__version__ = "0.1.0"

from .core import DataMatrix, InvalidArgument, PVQError, Partition, RandomSource, split_balanced  # noqa: E402
from .som import (  # noqa: E402
    Codebook,
    SomTopology,
    TrainSchedule,
    VoronoiMapping,
    batch_train,
    codebook_size,
    init_codebook,
    map_to_bmu,
    plan_topology,
)
from .pvq import SampleResult, ShardSample, choose_shard_count, pvq, pvq_to_target, sample_shard  # noqa: E402
from .metrics import (  # noqa: E402
    ConfusionMatrix,
    accuracy,
    balanced_accuracy,
    confusion,
    macro_recall,
    mcc_multiclass,
    weighted_precision,
)
from .evaluation import (  # noqa: E402
    ExperimentConfig,
    KNNClassifier,
    RunRecord,
    class_coverage,
    knn_fit,
    knn_predict,
    random_sample,
    run_experiment,
)

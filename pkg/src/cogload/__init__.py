"""Cognitive-load detection from wrist PPG.

A small numpy library covering the full experiment pipeline: loading BVP
recordings, sliding-window extraction, a shallow 1D CNN trained with
hand-derived gradients and Adam, leave-one-subject-out protocols with
stress-task pretraining, and the downstream survey-burden analyses
(calibration-based model matching, cognitive-load / stress percentages,
response-time statistics).
"""

__version__ = "0.1.0"

from cogload.data import (
    Condition,
    DatasetManifest,
    ParseError,
    PpgSignal,
    SessionRecord,
    ValidationError,
    load_bvp_csv,
    load_manifest,
    load_wesad_dir,
    read_wesad_csv,
    save_bvp_csv,
    split_wesad_labels,
)
from cogload.windows import (
    Task,
    WindowBatch,
    WindowSpec,
    build_eval_batches,
    build_training_batches,
    extract_windows,
    window_count,
)
from cogload.nn import (
    AdamParams,
    AdamState,
    ModelWeights,
    TrainSpec,
    TrainTrace,
    TrainingDivergedError,
    WeightsMeta,
    adam_step,
    feature_len,
    forward,
    init_weights,
    load_weights,
    loss_and_grad,
    predict,
    save_weights,
    train,
)
from cogload.metrics import (
    CorrelationRecord,
    UndefinedCorrelationError,
    pearson,
    regularized_incomplete_beta,
    student_t_two_sided_p,
    weighted_f1,
)
from cogload.protocols import (
    AggregateMetrics,
    FoldPlan,
    ModelPool,
    PoolEntry,
    RunMetrics,
    SourceMetrics,
    aggregate,
    finetune,
    plan_loo_folds,
    pretrain_wesad,
    run_pretrained_protocol,
    run_vanilla,
)
from cogload.analysis import (
    CalibrationResult,
    ResponseTimeTable,
    SurveyBurdenRow,
    burden_percentages,
    calibrate_subject,
    correlate_source_target,
    response_time_analysis,
    stress_leakage_check,
)

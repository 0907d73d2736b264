"""Leave-one-subject-out training protocols.

Two protocols share the same fold machinery: training the cognitive-load
detector from scratch on the pilot recordings ("vanilla"), and pretraining
a stress detector on converted WESAD recordings, then fine-tuning it on the
pilot folds at a lowered learning rate ("pretrained").  Every protocol is a
deterministic function of (records, config, master seed): per-fold seeds are
derived by hashing, fold x run work items run on an optional process pool,
and results are reduced in (run_id, test_subject) order regardless of
completion order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from cogload.data import Condition, SessionRecord, ValidationError, records_by_subject
from cogload.metrics import weighted_f1
from cogload.nn import (
    ModelWeights,
    TrainSpec,
    TrainingDivergedError,
    WeightsMeta,
    check_window_compatibility,
    init_weights,
    load_weights,
    predict,
    save_weights,
    train,
)
from cogload.windows import (
    Task,
    build_eval_batches,
    build_training_batches,
    validate_supported_window_len,
    window_samples,
)

logger = logging.getLogger(__name__)

VANILLA_LR = 0.001
FINETUNE_LR = 0.0001
DEFAULT_RUNS = 40

# Validation subjects held out per fold: 2 for the pilot protocols
# (8 train / 2 val / 1 test over 11 subjects), 1 for WESAD (13 / 1 / 1).
PROTOCOL_N_VALIDATION = {"vanilla": 2, "pretrained": 2, "wesad": 1}

_SUBJECT_KEY_RE = re.compile(r"^(\D*?)(\d+)$")


def _subject_sort_key(subject_id: str) -> tuple:
    m = _SUBJECT_KEY_RE.match(subject_id)
    if m:
        return (0, m.group(1), int(m.group(2)))
    return (1, subject_id, 0)


def sorted_subjects(subject_ids) -> list[str]:
    """Subject ids in natural order ("2" before "10", "S2" before "S10")."""
    return sorted(subject_ids, key=_subject_sort_key)


def derive_seed(master_seed: int, run_id: int, subject_id: str, tag: str) -> int:
    """Stable 64-bit seed for one (run, subject, purpose) triple."""
    text = f"cogload|{master_seed}|{run_id}|{subject_id}|{tag}"
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# --- fold planning ---------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    """One leave-one-subject-out fold of one run."""

    run_id: int
    test_subject: str
    validation_subjects: tuple[str, ...]
    training_subjects: tuple[str, ...]
    seed: int

    def __post_init__(self) -> None:
        groups = (
            {self.test_subject},
            set(self.validation_subjects),
            set(self.training_subjects),
        )
        total = sum(len(g) for g in groups)
        if len(set().union(*groups)) != total:
            raise ValidationError(f"fold groups overlap: {self}")
        if not self.training_subjects:
            raise ValidationError(f"fold has no training subjects: {self}")

    @property
    def fold_key(self) -> str:
        return self.test_subject

    @property
    def sort_key(self) -> tuple:
        return (self.run_id, _subject_sort_key(self.test_subject))

    def subjects(self) -> set[str]:
        return (
            {self.test_subject}
            | set(self.validation_subjects)
            | set(self.training_subjects)
        )

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "test_subject": self.test_subject,
            "validation_subjects": list(self.validation_subjects),
            "training_subjects": list(self.training_subjects),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        return cls(
            run_id=int(d["run_id"]),
            test_subject=str(d["test_subject"]),
            validation_subjects=tuple(d["validation_subjects"]),
            training_subjects=tuple(d["training_subjects"]),
            seed=int(d["seed"]),
        )


def plan_loo_folds(
    subjects: Sequence[str],
    runs: int,
    protocol: str,
    master_seed: int,
) -> list[FoldPlan]:
    """All fold plans: one per (run, held-out subject).

    Validation subjects are drawn without replacement from the non-test
    subjects, seeded by (master_seed, run, test subject), so the same master
    seed always yields the same plans while different runs vary the split.
    """
    if protocol not in PROTOCOL_N_VALIDATION:
        raise ValidationError(
            f"unknown protocol {protocol!r}; expected one of "
            f"{sorted(PROTOCOL_N_VALIDATION)}"
        )
    if runs < 1:
        raise ValidationError(f"runs must be >= 1, got {runs}")
    subjects = sorted_subjects(subjects)
    if len(set(subjects)) != len(subjects):
        raise ValidationError("duplicate subject ids in fold planning")
    n_val = PROTOCOL_N_VALIDATION[protocol]
    if len(subjects) < max(4, n_val + 2):
        raise ValidationError(
            f"need at least {max(4, n_val + 2)} subjects for leave-one-out "
            f"folds with {n_val} validation subjects, got {len(subjects)}"
        )

    plans = []
    for run_id in range(runs):
        for test_subject in subjects:
            remainder = [s for s in subjects if s != test_subject]
            rng = np.random.default_rng(
                derive_seed(master_seed, run_id, test_subject, "val-split")
            )
            picked = rng.choice(len(remainder), size=n_val, replace=False)
            validation = sorted_subjects(remainder[i] for i in picked)
            training = [s for s in remainder if s not in set(validation)]
            plans.append(
                FoldPlan(
                    run_id=run_id,
                    test_subject=test_subject,
                    validation_subjects=tuple(validation),
                    training_subjects=tuple(training),
                    seed=derive_seed(master_seed, run_id, test_subject, "train"),
                )
            )
    return plans


# --- result types ----------------------------------------------------------

@dataclass(frozen=True)
class SourceMetrics:
    """Stress-task F1 of a pretrained model on its own WESAD fold."""

    train_f1: float
    val_f1: float
    test_f1: float
    test_subject: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SourceMetrics":
        return cls(
            train_f1=float(d["train_f1"]),
            val_f1=float(d["val_f1"]),
            test_f1=float(d["test_f1"]),
            test_subject=str(d.get("test_subject", "")),
        )


@dataclass(eq=False)
class RunMetrics:
    """Outcome of one trained fold (or its recorded failure)."""

    fold: FoldPlan
    window_len_s: float
    protocol: str
    test_f1: float
    source_metrics: SourceMetrics | None = None
    failed: bool = False
    error: str | None = None
    n_train_windows: int = 0
    n_val_windows: int = 0
    n_test_windows: int = 0
    best_epoch: int = 0
    stopped_epoch: int = 0

    def __post_init__(self) -> None:
        if not self.failed and not 0.0 <= self.test_f1 <= 1.0:
            raise ValidationError(f"test F1 out of [0, 1]: {self.test_f1}")

    @property
    def sort_key(self) -> tuple:
        return self.fold.sort_key

    def to_record(self) -> dict:
        return {
            "fold": self.fold.to_dict(),
            "window_len_s": self.window_len_s,
            "protocol": self.protocol,
            "test_f1": None if self.failed else self.test_f1,
            "source_metrics": (
                None if self.source_metrics is None else self.source_metrics.to_dict()
            ),
            "failed": self.failed,
            "error": self.error,
            "n_train_windows": self.n_train_windows,
            "n_val_windows": self.n_val_windows,
            "n_test_windows": self.n_test_windows,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
        }

    @classmethod
    def from_record(cls, d: dict) -> "RunMetrics":
        return cls(
            fold=FoldPlan.from_dict(d["fold"]),
            window_len_s=float(d["window_len_s"]),
            protocol=str(d["protocol"]),
            test_f1=math.nan if d["test_f1"] is None else float(d["test_f1"]),
            source_metrics=(
                None
                if d.get("source_metrics") is None
                else SourceMetrics.from_dict(d["source_metrics"])
            ),
            failed=bool(d.get("failed", False)),
            error=d.get("error"),
            n_train_windows=int(d.get("n_train_windows", 0)),
            n_val_windows=int(d.get("n_val_windows", 0)),
            n_test_windows=int(d.get("n_test_windows", 0)),
            best_epoch=int(d.get("best_epoch", 0)),
            stopped_epoch=int(d.get("stopped_epoch", 0)),
        )


@dataclass(eq=False)
class PoolEntry:
    """One persisted model with its metrics; weights on disk or in memory."""

    metrics: RunMetrics
    weights_path: Path | None = None
    weights: ModelWeights | None = None

    @property
    def sort_key(self) -> tuple:
        return self.metrics.sort_key

    def get_weights(self) -> ModelWeights:
        if self.weights is not None:
            return self.weights
        if self.weights_path is not None:
            return load_weights(self.weights_path)
        raise ValueError(
            f"pool entry for run {self.metrics.fold.run_id} / test subject "
            f"{self.metrics.fold.test_subject} has no weights"
        )


@dataclass(eq=False)
class ModelPool:
    """Every model a protocol produced, plus its recorded failures."""

    entries: list[PoolEntry] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def sorted_entries(self) -> list[PoolEntry]:
        return sorted(self.entries, key=lambda e: e.sort_key)

    def by_run(self) -> dict[int, list[PoolEntry]]:
        grouped: dict[int, list[PoolEntry]] = {}
        for entry in self.sorted_entries():
            grouped.setdefault(entry.metrics.fold.run_id, []).append(entry)
        return grouped


def best_source_entry(pool: ModelPool, metric: str = "val_f1") -> PoolEntry:
    """Highest-scoring source model; ties go to the lowest (run, subject)."""
    scored = [e for e in pool.entries if e.metrics.source_metrics is not None]
    if not scored:
        raise ValidationError("pool has no entries with source metrics")
    return min(
        scored,
        key=lambda e: (-getattr(e.metrics.source_metrics, metric), e.sort_key),
    )


# --- ledger ----------------------------------------------------------------

def append_ledger_record(
    path: str | Path, record: dict, *, config_hash: str | None = None
) -> None:
    """Append one JSON line to the run ledger."""
    from cogload import __version__

    payload = dict(record)
    payload.setdefault("tool_version", __version__)
    if config_hash is not None:
        payload.setdefault("config_hash", config_hash)
    with Path(path).open("a", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, sort_keys=True))
        fh.write("\n")


def read_ledger(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _ledger_all(
    ledger_path, metrics_list, paths, config_hash, extra: dict | None = None
) -> None:
    if ledger_path is None:
        return
    for metrics, path in zip(metrics_list, paths):
        record = {"event": "run", **metrics.to_record(), "weights_path": path}
        if extra:
            record.update(extra)
        append_ledger_record(ledger_path, record, config_hash=config_hash)


# --- shared fold machinery -------------------------------------------------

def _records_for(by_subject: dict, subjects) -> list[SessionRecord]:
    out: list[SessionRecord] = []
    for subject in subjects:
        out.extend(by_subject[subject])
    return out


def _require_conditions(
    by_subject: dict, required: Sequence[set], label: str
) -> None:
    """Every subject must have at least one record in each required group."""
    problems = []
    for subject in sorted_subjects(by_subject):
        present = {r.condition for r in by_subject[subject]}
        for group in required:
            if not (present & group):
                names = "/".join(sorted(c.value for c in group))
                problems.append(f"subject {subject} has no {names} recording")
    if problems:
        raise ValidationError(f"{label}: " + "; ".join(problems))


def _assert_no_leakage(batch, test_subject: str, context: str) -> None:
    leaked = sorted({s.subject_id for s in batch.source if s.subject_id == test_subject})
    if leaked:
        raise RuntimeError(
            f"leakage in {context}: test subject {test_subject} appears in the batch"
        )


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "-", text)


def _weights_filename(protocol: str, window_len_s: float, fold: FoldPlan) -> str:
    return (
        f"{protocol}_{window_len_s:g}s_run{fold.run_id:03d}_"
        f"{_safe_name(fold.test_subject)}.weights"
    )


_WORKER_STATE: dict = {}


def _init_worker(state: dict) -> None:
    _WORKER_STATE.clear()
    _WORKER_STATE.update(state)


def _map_folds(worker: Callable, items: list, state: dict, jobs: int) -> list:
    if jobs <= 1:
        _init_worker(state)
        try:
            return [worker(item) for item in items]
        finally:
            _WORKER_STATE.clear()
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(state,)
    ) as pool:
        return list(pool.map(worker, items))


def _train_fold(
    fold: FoldPlan,
    by_subject: dict,
    task: Task,
    window_len_s: float,
    protocol: str,
    weights_start: ModelWeights,
    spec: TrainSpec,
    out_dir: Path | None,
    source_metrics: SourceMetrics | None = None,
    score_source: bool = False,
) -> tuple[RunMetrics, Path | None, ModelWeights | None]:
    train_batch = build_training_batches(
        _records_for(by_subject, fold.training_subjects), task, window_len_s
    )
    val_batch = build_eval_batches(
        _records_for(by_subject, fold.validation_subjects), task, window_len_s, "validation"
    )
    test_batch = build_eval_batches(
        _records_for(by_subject, [fold.test_subject]), task, window_len_s, "test"
    )
    for batch, context in ((train_batch, "training"), (val_batch, "validation")):
        _assert_no_leakage(batch, fold.test_subject, f"{protocol} {context} batch")

    counts = {
        "n_train_windows": len(train_batch),
        "n_val_windows": len(val_batch),
        "n_test_windows": len(test_batch),
    }
    try:
        weights, trace = train(weights_start, train_batch, val_batch, spec)
    except TrainingDivergedError as exc:
        logger.warning(
            "run %d / test subject %s diverged: %s", fold.run_id, fold.test_subject, exc
        )
        metrics = RunMetrics(
            fold=fold,
            window_len_s=window_len_s,
            protocol=protocol,
            test_f1=math.nan,
            source_metrics=source_metrics,
            failed=True,
            error=str(exc),
            **counts,
        )
        return metrics, None, None

    test_f1 = weighted_f1(test_batch.labels, predict(weights, test_batch.windows))
    if score_source:
        source_metrics = SourceMetrics(
            train_f1=weighted_f1(train_batch.labels, predict(weights, train_batch.windows)),
            val_f1=weighted_f1(val_batch.labels, predict(weights, val_batch.windows)),
            test_f1=test_f1,
            test_subject=fold.test_subject,
        )
    metrics = RunMetrics(
        fold=fold,
        window_len_s=window_len_s,
        protocol=protocol,
        test_f1=test_f1,
        source_metrics=source_metrics,
        best_epoch=trace.best_epoch,
        stopped_epoch=trace.stopped_epoch,
        **counts,
    )
    if out_dir is not None:
        path = Path(out_dir) / _weights_filename(protocol, window_len_s, fold)
        save_weights(weights, path)
        return metrics, path, None
    return metrics, None, weights


def _reduce(results) -> tuple[list[RunMetrics], ModelPool]:
    results = sorted(results, key=lambda r: r[0].sort_key)
    metrics_list = [m for m, _, _ in results]
    pool = ModelPool()
    for metrics, path, weights in results:
        if metrics.failed:
            pool.failures.append(
                {
                    "run_id": metrics.fold.run_id,
                    "test_subject": metrics.fold.test_subject,
                    "error": metrics.error,
                }
            )
        else:
            pool.entries.append(
                PoolEntry(metrics=metrics, weights_path=path, weights=weights)
            )
    if pool.failures:
        logger.warning("%d of %d runs failed and were excluded", len(pool.failures), len(results))
    return metrics_list, pool


# --- vanilla protocol ------------------------------------------------------

def _vanilla_item(fold: FoldPlan):
    s = _WORKER_STATE
    window_len_s = s["window_len_s"]
    weights_start = init_weights(
        window_samples(window_len_s, s["fs_hz"]),
        derive_seed(s["master_seed"], fold.run_id, fold.test_subject, "init"),
        window_len_s=window_len_s,
        task=Task.COGNITIVE_LOAD.value,
        protocol="vanilla",
        run_id=fold.run_id,
        fold_id=fold.test_subject,
    )
    spec = dataclasses.replace(s["train_spec"], seed=fold.seed)
    return _train_fold(
        fold, s["by_subject"], Task.COGNITIVE_LOAD, window_len_s, "vanilla",
        weights_start, spec, s["out_dir"],
    )


def run_vanilla(
    pilot_records: Sequence[SessionRecord],
    window_len_s: float,
    runs: int,
    train_spec: TrainSpec | None = None,
    *,
    master_seed: int = 0,
    jobs: int = 1,
    out_dir: str | Path | None = None,
    ledger_path: str | Path | None = None,
    config_hash: str | None = None,
) -> tuple[list[RunMetrics], ModelPool]:
    """Train the detector from scratch on every (run, held-out subject) fold."""
    window_len_s = validate_supported_window_len(window_len_s)
    by_subject = records_by_subject(pilot_records)
    _require_conditions(
        by_subject,
        [{Condition.COGNITIVE_LOAD}, {Condition.BASELINE}],
        "vanilla protocol",
    )
    plans = plan_loo_folds(sorted_subjects(by_subject), runs, "vanilla", master_seed)
    if train_spec is None:
        train_spec = TrainSpec(learning_rate=VANILLA_LR)
    out_dir = _prepare_out_dir(out_dir)
    state = {
        "by_subject": by_subject,
        "window_len_s": window_len_s,
        "fs_hz": pilot_records[0].signal.fs_hz,
        "train_spec": train_spec,
        "master_seed": master_seed,
        "out_dir": out_dir,
    }
    metrics_list, pool = _reduce(_map_folds(_vanilla_item, plans, state, jobs))
    _ledger_all(
        ledger_path,
        metrics_list,
        [_path_or_none(m, pool) for m in metrics_list],
        config_hash,
    )
    return metrics_list, pool


def _prepare_out_dir(out_dir) -> Path | None:
    if out_dir is None:
        return None
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _path_or_none(metrics: RunMetrics, pool: ModelPool) -> str | None:
    for entry in pool.entries:
        if entry.metrics is metrics and entry.weights_path is not None:
            return str(entry.weights_path)
    return None


# --- WESAD pretraining -----------------------------------------------------

def _stress_item(fold: FoldPlan):
    s = _WORKER_STATE
    window_len_s = s["window_len_s"]
    weights_start = init_weights(
        window_samples(window_len_s, s["fs_hz"]),
        derive_seed(s["master_seed"], fold.run_id, fold.test_subject, "init"),
        window_len_s=window_len_s,
        task=Task.STRESS.value,
        protocol="stress-source",
        run_id=fold.run_id,
        fold_id=fold.test_subject,
    )
    spec = dataclasses.replace(s["train_spec"], seed=fold.seed)
    return _train_fold(
        fold, s["by_subject"], Task.STRESS, window_len_s, "stress-source",
        weights_start, spec, s["out_dir"], score_source=True,
    )


def pretrain_wesad(
    wesad_records: Sequence[SessionRecord],
    window_len_s: float,
    runs: int,
    train_spec: TrainSpec | None = None,
    *,
    master_seed: int = 0,
    jobs: int = 1,
    out_dir: str | Path | None = None,
    ledger_path: str | Path | None = None,
    config_hash: str | None = None,
) -> ModelPool:
    """Train one stress detector per run on a rotating WESAD fold.

    Run r holds out subject r mod n as the stress test subject, so the
    source folds cycle through the WESAD subjects across runs.
    """
    window_len_s = validate_supported_window_len(window_len_s)
    by_subject = records_by_subject(wesad_records)
    _require_conditions(
        by_subject,
        [{Condition.STRESS}, {Condition.WESAD_BASELINE, Condition.AMUSEMENT}],
        "stress pretraining",
    )
    subjects = sorted_subjects(by_subject)
    all_plans = plan_loo_folds(subjects, runs, "wesad", master_seed)
    by_key = {(p.run_id, p.test_subject): p for p in all_plans}
    selected = [
        by_key[(run_id, subjects[run_id % len(subjects)])] for run_id in range(runs)
    ]
    if train_spec is None:
        train_spec = TrainSpec(learning_rate=VANILLA_LR)
    out_dir = _prepare_out_dir(out_dir)
    state = {
        "by_subject": by_subject,
        "window_len_s": window_len_s,
        "fs_hz": wesad_records[0].signal.fs_hz,
        "train_spec": train_spec,
        "master_seed": master_seed,
        "out_dir": out_dir,
    }
    metrics_list, pool = _reduce(_map_folds(_stress_item, selected, state, jobs))
    _ledger_all(
        ledger_path,
        metrics_list,
        [_path_or_none(m, pool) for m in metrics_list],
        config_hash,
    )
    return pool


# --- fine-tuning -----------------------------------------------------------

def finetune(
    pretrained: ModelWeights,
    pilot_records: Sequence[SessionRecord],
    fold: FoldPlan,
    window_len_s: float,
    train_spec: TrainSpec | None = None,
    *,
    source_metrics: SourceMetrics | None = None,
    out_dir: str | Path | None = None,
) -> tuple[RunMetrics, ModelWeights | None]:
    """Fine-tune a pretrained stress model on one pilot fold (all layers).

    Returns the fold metrics together with the fine-tuned weights (or, when
    ``out_dir`` is given, the weights are saved there and the second element
    is None; the path is discoverable via the metrics in the pool builders).
    With ``max_epochs=0`` the returned weights equal the pretrained input.
    """
    window_len_s = validate_supported_window_len(window_len_s)
    by_subject = records_by_subject(pilot_records)
    fs_hz = pilot_records[0].signal.fs_hz
    check_window_compatibility(pretrained, window_samples(window_len_s, fs_hz))
    missing = fold.subjects() - set(by_subject)
    if missing:
        raise ValidationError(
            f"fold references subjects absent from the records: {sorted(missing)}"
        )
    if train_spec is None:
        train_spec = TrainSpec(learning_rate=FINETUNE_LR, seed=fold.seed)
    weights_start = pretrained.copy()
    weights_start.meta = WeightsMeta(
        window_len_samples=pretrained.meta.window_len_samples,
        window_len_s=window_len_s,
        task=Task.COGNITIVE_LOAD.value,
        protocol="pretrained",
        run_id=fold.run_id,
        fold_id=fold.test_subject,
    )
    out_dir = _prepare_out_dir(out_dir)
    metrics, path, weights = _train_fold(
        fold, by_subject, Task.COGNITIVE_LOAD, window_len_s, "pretrained",
        weights_start, train_spec, out_dir, source_metrics=source_metrics,
    )
    if path is not None:
        return metrics, None
    return metrics, weights


def _finetune_item(fold: FoldPlan):
    s = _WORKER_STATE
    source_weights, source_metrics = s["sources_by_run"][fold.run_id]
    if not isinstance(source_weights, ModelWeights):
        source_weights = load_weights(source_weights)
    spec = s["train_spec"]
    if spec is None:
        spec = TrainSpec(learning_rate=FINETUNE_LR, seed=fold.seed)
    else:
        spec = dataclasses.replace(spec, seed=fold.seed)
    weights_start = source_weights.copy()
    weights_start.meta = WeightsMeta(
        window_len_samples=source_weights.meta.window_len_samples,
        window_len_s=s["window_len_s"],
        task=Task.COGNITIVE_LOAD.value,
        protocol="pretrained",
        run_id=fold.run_id,
        fold_id=fold.test_subject,
    )
    return _train_fold(
        fold, s["by_subject"], Task.COGNITIVE_LOAD, s["window_len_s"], "pretrained",
        weights_start, spec, s["out_dir"], source_metrics=source_metrics,
    )


def run_pretrained_protocol(
    pilot_records: Sequence[SessionRecord],
    wesad_records: Sequence[SessionRecord] | None,
    window_len_s: float,
    runs: int,
    *,
    pretrain_spec: TrainSpec | None = None,
    finetune_spec: TrainSpec | None = None,
    master_seed: int = 0,
    jobs: int = 1,
    out_dir: str | Path | None = None,
    ledger_path: str | Path | None = None,
    config_hash: str | None = None,
    stress_pool: ModelPool | None = None,
) -> tuple[list[RunMetrics], ModelPool, ModelPool]:
    """Pretrain (or reuse) one stress model per run, fine-tune on every pilot fold.

    Returns (fine-tune metrics, fine-tuned pool, stress-source pool).  The
    run's single pretrained model is shared by all of that run's pilot folds,
    so runs x pilot_subjects fine-tuned models emerge from runs sources.
    """
    window_len_s = validate_supported_window_len(window_len_s)
    out_dir = _prepare_out_dir(out_dir)
    if stress_pool is None:
        if wesad_records is None:
            raise ValidationError(
                "need WESAD records or a cached stress pool to pretrain from"
            )
        stress_pool = pretrain_wesad(
            wesad_records,
            window_len_s,
            runs,
            pretrain_spec,
            master_seed=master_seed,
            jobs=jobs,
            out_dir=out_dir,
            ledger_path=ledger_path,
            config_hash=config_hash,
        )
    sources_by_run: dict[int, tuple] = {}
    for entry in stress_pool.sorted_entries():
        run_id = entry.metrics.fold.run_id
        payload = entry.weights_path if entry.weights_path is not None else entry.weights
        sources_by_run[run_id] = (payload, entry.metrics.source_metrics)

    by_subject = records_by_subject(pilot_records)
    _require_conditions(
        by_subject,
        [{Condition.COGNITIVE_LOAD}, {Condition.BASELINE}],
        "fine-tuning",
    )
    plans = plan_loo_folds(sorted_subjects(by_subject), runs, "pretrained", master_seed)
    missing_sources = sorted({p.run_id for p in plans} - set(sources_by_run))
    if missing_sources:
        raise ValidationError(
            f"no pretrained source model for runs {missing_sources} "
            "(stress pool incomplete; failed pretraining runs are excluded)"
        )
    state = {
        "by_subject": by_subject,
        "window_len_s": window_len_s,
        "train_spec": finetune_spec,
        "sources_by_run": sources_by_run,
        "out_dir": out_dir,
    }
    metrics_list, pool = _reduce(_map_folds(_finetune_item, plans, state, jobs))
    _ledger_all(
        ledger_path,
        metrics_list,
        [_path_or_none(m, pool) for m in metrics_list],
        config_hash,
    )
    return metrics_list, pool, stress_pool


# --- aggregation -----------------------------------------------------------

@dataclass(frozen=True)
class AggregateRow:
    subject_id: str
    protocol: str
    window_len_s: float
    mean_f1: float
    std_f1: float
    n_runs: int


@dataclass(eq=False)
class AggregateMetrics:
    """Per-subject mean/std of test F1 plus per-column grand means."""

    rows: list[AggregateRow]
    grand_means: dict[tuple[str, float], float]
    n_failed_skipped: int = 0

    def subjects(self) -> list[str]:
        return sorted_subjects({r.subject_id for r in self.rows})

    def columns(self) -> list[tuple[str, float]]:
        return sorted({(r.protocol, r.window_len_s) for r in self.rows})

    def cell(
        self, subject_id: str, protocol: str, window_len_s: float
    ) -> AggregateRow | None:
        for row in self.rows:
            if (
                row.subject_id == subject_id
                and row.protocol == protocol
                and row.window_len_s == window_len_s
            ):
                return row
        return None


def aggregate(metrics: Sequence[RunMetrics]) -> AggregateMetrics:
    """Mean and sample standard deviation of test F1 per (subject, protocol, window)."""
    if not metrics:
        raise ValidationError("cannot aggregate an empty metrics list")
    skipped = sum(1 for m in metrics if m.failed)
    usable = [m for m in metrics if not m.failed]
    if not usable:
        raise ValidationError(f"all {skipped} runs failed; nothing to aggregate")

    groups: dict[tuple[str, str, float], list[float]] = {}
    for m in usable:
        key = (m.fold.test_subject, m.protocol, m.window_len_s)
        groups.setdefault(key, []).append(m.test_f1)

    rows = []
    for (subject, protocol, window), values in groups.items():
        arr = np.asarray(values, dtype=np.float64)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        rows.append(
            AggregateRow(
                subject_id=subject,
                protocol=protocol,
                window_len_s=window,
                mean_f1=float(arr.mean()),
                std_f1=std,
                n_runs=len(arr),
            )
        )
    rows.sort(key=lambda r: (_subject_sort_key(r.subject_id), r.protocol, r.window_len_s))

    grand: dict[tuple[str, float], float] = {}
    for protocol, window in sorted({(r.protocol, r.window_len_s) for r in rows}):
        column = [r.mean_f1 for r in rows if r.protocol == protocol and r.window_len_s == window]
        grand[(protocol, window)] = float(np.mean(column))
    return AggregateMetrics(rows=rows, grand_means=grand, n_failed_skipped=skipped)


# --- pool persistence ------------------------------------------------------

def save_pool_index(pool: ModelPool, path: str | Path) -> None:
    """Write a pool as JSON lines (metrics + weight paths) for cache reuse."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for entry in pool.sorted_entries():
            record = entry.metrics.to_record()
            record["weights_path"] = (
                None if entry.weights_path is None else str(entry.weights_path)
            )
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
        for failure in pool.failures:
            fh.write(json.dumps({"event": "failure", **failure}, sort_keys=True))
            fh.write("\n")


def load_pool_index(path: str | Path) -> ModelPool:
    """Rebuild a pool from :func:`save_pool_index` output; weights stay on disk."""
    pool = ModelPool()
    for record in read_ledger(path):
        if record.get("event") == "failure":
            pool.failures.append(
                {k: v for k, v in record.items() if k != "event"}
            )
            continue
        metrics = RunMetrics.from_record(record)
        weights_path = record.get("weights_path")
        missing_ok = weights_path is None
        if not missing_ok and not Path(weights_path).exists():
            raise FileNotFoundError(
                f"pool index {path} references missing weights {weights_path}"
            )
        pool.entries.append(
            PoolEntry(
                metrics=metrics,
                weights_path=None if missing_ok else Path(weights_path),
            )
        )
    return pool

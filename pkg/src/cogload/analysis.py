"""Downstream analyses over trained model pools and survey recordings.

Covers calibration-based model matching (pick the pool model that scores
best on a participant's Stroop/baseline recordings), the per-survey
cognitive-load and stress time percentages, the stress-leakage check on the
pilot recordings, source-vs-target transfer correlations, and the survey
response-time statistics.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from cogload.data import Condition, ParseError, SessionRecord, ValidationError
from cogload.metrics import CorrelationRecord, UndefinedCorrelationError, pearson, weighted_f1
from cogload.nn import ModelWeights, check_window_compatibility, predict
from cogload.protocols import ModelPool, PoolEntry, RunMetrics
from cogload.windows import (
    Task,
    build_eval_batches,
    extract_windows,
    TEST_STEP,
    validate_supported_window_len,
    window_samples,
)

logger = logging.getLogger(__name__)

CALIBRATION_F1_THRESHOLD = 0.7
CALIBRATION_WINDOW_LEN_S = 30.0

RESPONSE_TIME_HEADER = (
    "subject", "session", "survey", "question_index", "start_epoch_s", "end_epoch_s",
)


def round_half_up(value: float) -> int:
    """Integer rounding used by the percentage reports (0.5 rounds up)."""
    return int(math.floor(value + 0.5))


# --- calibration matching --------------------------------------------------

@dataclass(eq=False)
class CalibrationResult:
    """Best pool model for one participant's calibration recordings."""

    subject_id: str
    session_id: str
    selected: PoolEntry
    calibration_f1: float
    excluded: bool
    n_windows: int

    def selected_weights(self) -> ModelWeights:
        return self.selected.get_weights()


def calibrate_subject(
    pool: ModelPool,
    calibration_records: Sequence[SessionRecord],
    window_len_s: float = CALIBRATION_WINDOW_LEN_S,
    score_fn: Callable[[np.ndarray, np.ndarray], float] = weighted_f1,
) -> CalibrationResult:
    """Score every pool model on the subject's calibration windows, keep the best.

    Windows use the test step; the best model is the weighted-F1 argmax with
    ties broken by lowest (run, test-subject) key, and the subject is marked
    excluded when even the best F1 is <= 0.7.  ``score_fn`` exists so tests can
    substitute a monotone transform and confirm the argmax does not move.
    """
    window_len_s = validate_supported_window_len(window_len_s)
    if len(pool) == 0:
        raise ValidationError("cannot calibrate against an empty model pool")
    if not calibration_records:
        raise ValidationError("no calibration records given")
    subjects = {r.subject_id for r in calibration_records}
    if len(subjects) != 1:
        raise ValidationError(
            f"calibration records must come from one subject, got {sorted(subjects)}"
        )
    subject_id = calibration_records[0].subject_id
    session_id = "+".join(sorted({r.session_id for r in calibration_records}))

    batch = build_eval_batches(
        calibration_records, Task.COGNITIVE_LOAD, window_len_s, "test"
    )
    if len(batch) == 0:
        raise ValidationError(
            f"subject {subject_id}: calibration recordings are shorter than one "
            f"{window_len_s:g} s window"
        )
    if len(np.unique(batch.labels)) < 2:
        logger.warning(
            "subject %s: calibration windows cover a single class only", subject_id
        )

    length = window_samples(window_len_s, calibration_records[0].signal.fs_hz)
    best_entry: PoolEntry | None = None
    best_f1 = -1.0
    for entry in pool.sorted_entries():
        weights = entry.get_weights()
        check_window_compatibility(weights, length)
        f1 = score_fn(batch.labels, predict(weights, batch.windows))
        if f1 > best_f1:
            best_f1 = f1
            best_entry = entry
    assert best_entry is not None
    return CalibrationResult(
        subject_id=subject_id,
        session_id=session_id,
        selected=best_entry,
        calibration_f1=best_f1,
        excluded=best_f1 <= CALIBRATION_F1_THRESHOLD,
        n_windows=len(batch),
    )


# --- survey burden percentages ---------------------------------------------

@dataclass(eq=False)
class SurveyBurdenRow:
    """Time-in-state percentages for one survey recording."""

    subject_id: str
    session_id: str
    gamified: bool
    cogload_pct: float | None  # None when the subject was excluded at calibration
    stress_pct: float
    calibration_f1: float
    n_windows: int = 0

    @property
    def excluded(self) -> bool:
        return self.cogload_pct is None

    def cogload_pct_int(self) -> int | None:
        return None if self.cogload_pct is None else round_half_up(self.cogload_pct)

    def stress_pct_int(self) -> int:
        return round_half_up(self.stress_pct)


def _positive_pct(weights: ModelWeights, windows: np.ndarray) -> float:
    preds = predict(weights, windows)
    return 100.0 * float((preds == 1).mean())


def _survey_gamified(record: SessionRecord) -> bool:
    if record.gamified is not None:
        return record.gamified
    if record.condition == Condition.SURVEY_GAMIFIED:
        return True
    if record.condition == Condition.SURVEY_PLAIN:
        return False
    raise ValidationError(
        f"record {record.subject_id}/{record.session_id} has no gamified flag "
        f"and a non-survey condition {record.condition.value!r}"
    )


def burden_percentages(
    selected_model: CalibrationResult | ModelWeights | None,
    stress_model: ModelWeights,
    survey_record: SessionRecord,
    window_len_s: float = CALIBRATION_WINDOW_LEN_S,
) -> SurveyBurdenRow:
    """Percentage of survey windows classified cognitive-load and stressed.

    ``selected_model`` is a calibration result (or raw weights); pass None —
    or an excluded calibration result — for subjects without a model above
    the calibration threshold, which leaves the cognitive-load percentage
    empty while the stress percentage is still computed.
    """
    window_len_s = validate_supported_window_len(window_len_s)
    calibration_f1 = math.nan
    weights: ModelWeights | None
    if isinstance(selected_model, CalibrationResult):
        calibration_f1 = selected_model.calibration_f1
        weights = None if selected_model.excluded else selected_model.selected_weights()
    else:
        weights = selected_model

    batch = extract_windows(survey_record, window_len_s, TEST_STEP)
    if len(batch) == 0:
        raise ValidationError(
            f"survey recording {survey_record.subject_id}/{survey_record.session_id} "
            f"is shorter than one {window_len_s:g} s window"
        )
    length = batch.window_len_samples
    check_window_compatibility(stress_model, length)
    cogload_pct = None
    if weights is not None:
        check_window_compatibility(weights, length)
        cogload_pct = _positive_pct(weights, batch.windows)
    return SurveyBurdenRow(
        subject_id=survey_record.subject_id,
        session_id=survey_record.session_id,
        gamified=_survey_gamified(survey_record),
        cogload_pct=cogload_pct,
        stress_pct=_positive_pct(stress_model, batch.windows),
        calibration_f1=calibration_f1,
        n_windows=len(batch),
    )


# --- stress leakage on the pilot recordings --------------------------------

def stress_leakage_check(
    stress_model: ModelWeights,
    pilot_records: Sequence[SessionRecord],
    window_len_s: float = CALIBRATION_WINDOW_LEN_S,
) -> dict[tuple[str, str], float]:
    """Percent of each (subject, condition)'s windows the stress model flags.

    Returns an insertion-ordered mapping (subject, condition value) -> percent;
    groups whose recordings are shorter than one window are omitted with a
    warning.
    """
    window_len_s = validate_supported_window_len(window_len_s)
    groups: dict[tuple[str, str], list[SessionRecord]] = {}
    for record in pilot_records:
        groups.setdefault((record.subject_id, record.condition.value), []).append(record)

    from cogload.protocols import _subject_sort_key  # shared natural ordering

    out: dict[tuple[str, str], float] = {}
    for key in sorted(groups, key=lambda k: (_subject_sort_key(k[0]), k[1])):
        parts = [
            extract_windows(r, window_len_s, TEST_STEP) for r in groups[key]
        ]
        windows = np.concatenate([p.windows for p in parts], axis=0)
        if windows.shape[0] == 0:
            logger.warning(
                "subject %s condition %s: recordings shorter than one window; "
                "skipped from leakage check", key[0], key[1],
            )
            continue
        check_window_compatibility(stress_model, windows.shape[1])
        out[key] = _positive_pct(stress_model, windows)
    return out


# --- source/target transfer correlations -----------------------------------

@dataclass(frozen=True)
class SourceTargetCorrelation:
    """One correlation between a source stress F1 and target test F1."""

    source_split: str  # "train" | "val" | "test"
    scope: str  # "pooled" or a window length like "30s"
    granularity: str  # "model" (one point per fine-tuned model) or "run_mean"
    stats: CorrelationRecord | None
    error: str | None = None


@dataclass(eq=False)
class SourceTargetCorrelations:
    records: list[SourceTargetCorrelation]

    def get(
        self, source_split: str, scope: str = "pooled", granularity: str = "model"
    ) -> SourceTargetCorrelation:
        for record in self.records:
            if (
                record.source_split == source_split
                and record.scope == scope
                and record.granularity == granularity
            ):
                return record
        raise KeyError((source_split, scope, granularity))


def _metrics_of(pool_or_metrics) -> list[RunMetrics]:
    if isinstance(pool_or_metrics, ModelPool):
        return [e.metrics for e in pool_or_metrics.sorted_entries()]
    return sorted(
        (m for m in pool_or_metrics if not m.failed), key=lambda m: m.sort_key
    )


def correlate_source_target(pool_or_metrics) -> SourceTargetCorrelations:
    """Correlate source stress F1 (train/val/test) with target test F1.

    Points are collected at two granularities — one per fine-tuned model,
    and one per (run, window) with target F1 averaged over the run's folds —
    and each is computed pooled across window lengths as well as per window
    length.  A zero-variance pooled model-level input raises; degenerate
    sub-scopes are recorded with their error instead.
    """
    metrics = _metrics_of(pool_or_metrics)
    if not metrics:
        raise ValidationError("no fine-tuned metrics to correlate")
    missing = [m for m in metrics if m.source_metrics is None]
    if missing:
        raise ValidationError(
            f"{len(missing)} of {len(metrics)} entries lack source metrics"
        )

    splits = ("train", "val", "test")
    # Model granularity points: (window, x per split, y)
    model_points = [
        (
            m.window_len_s,
            {s: getattr(m.source_metrics, f"{s}_f1") for s in splits},
            m.test_f1,
        )
        for m in metrics
    ]
    # Run-mean granularity: average target F1 over each run's folds; the
    # source F1 is constant within a run (one pretrained model per run).
    run_groups: dict[tuple[int, float], list] = {}
    for m in metrics:
        run_groups.setdefault((m.fold.run_id, m.window_len_s), []).append(m)
    run_points = []
    for (run_id, window), group in sorted(run_groups.items()):
        xs = {
            s: float(np.mean([getattr(m.source_metrics, f"{s}_f1") for m in group]))
            for s in splits
        }
        run_points.append((window, xs, float(np.mean([m.test_f1 for m in group]))))

    windows = sorted({m.window_len_s for m in metrics})
    scopes = ["pooled"] + [f"{w:g}s" for w in windows]
    records = []
    for granularity, points in (("model", model_points), ("run_mean", run_points)):
        for scope in scopes:
            if scope == "pooled":
                subset = points
            else:
                subset = [p for p in points if f"{p[0]:g}s" == scope]
            for split in splits:
                x = [p[1][split] for p in subset]
                y = [p[2] for p in subset]
                try:
                    stats = pearson(x, y)
                    records.append(
                        SourceTargetCorrelation(split, scope, granularity, stats)
                    )
                except UndefinedCorrelationError as exc:
                    if scope == "pooled" and granularity == "model":
                        raise
                    records.append(
                        SourceTargetCorrelation(split, scope, granularity, None, str(exc))
                    )
    return SourceTargetCorrelations(records=records)


# --- response-time analysis ------------------------------------------------

@dataclass(frozen=True)
class QuestionTiming:
    subject_id: str
    session_id: str
    survey_id: str
    question_index: int
    gamified: bool
    duration_s: float
    position: int | None  # 1-based rank within the survey; None once excluded
    included: bool


@dataclass(frozen=True)
class PositionDiff:
    position: int
    mean_diff_s: float  # non-gamified minus gamified
    n_sessions: int


@dataclass(eq=False)
class ResponseTimeTable:
    """Per-question durations and the aggregates derived from them."""

    questions: list[QuestionTiming]
    mean_gamified_s: float
    mean_non_gamified_s: float
    n_gamified: int
    n_non_gamified: int
    position_differences: list[PositionDiff]


def _is_gamified(survey_id: str, gamified_surveys) -> bool:
    if gamified_surveys is None:
        return survey_id.lower().startswith("gamified")
    if isinstance(gamified_surveys, Mapping):
        try:
            return bool(gamified_surveys[survey_id])
        except KeyError:
            raise ValidationError(
                f"survey {survey_id!r} missing from the gamified-survey mapping"
            ) from None
    return survey_id in gamified_surveys


def _parse_events(path: Path) -> list[dict]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty response-time file") from None
        if tuple(h.strip() for h in header) != RESPONSE_TIME_HEADER:
            raise ParseError(
                f"{path}: expected header {','.join(RESPONSE_TIME_HEADER)!r}, "
                f"got {','.join(header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(RESPONSE_TIME_HEADER):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(RESPONSE_TIME_HEADER)} fields, "
                    f"got {len(row)}"
                )
            try:
                rows.append(
                    {
                        "subject": row[0].strip(),
                        "session": row[1].strip(),
                        "survey": row[2].strip(),
                        "question_index": int(row[3]),
                        "start": float(row[4]),
                        "end": float(row[5]),
                    }
                )
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return rows


def response_time_analysis(
    events_csv: str | Path,
    gamified_surveys: Mapping[str, bool] | set[str] | None = None,
) -> ResponseTimeTable:
    """Per-question response-time statistics from a timing-event CSV.

    The last question of every survey is dropped from all aggregates.  Which
    surveys count as gamified comes from ``gamified_surveys`` (mapping or
    set of survey ids); without it, survey ids starting with "gamified" are
    treated as gamified.
    """
    path = Path(events_csv)
    rows = _parse_events(path)
    if not rows:
        raise ValidationError(f"{path}: no timing events")

    surveys: dict[tuple[str, str, str], list[dict]] = {}
    for row in rows:
        if row["end"] < row["start"]:
            raise ValidationError(
                f"{path}: question {row['question_index']} of survey "
                f"{row['survey']!r} (subject {row['subject']}, session "
                f"{row['session']}) ends before it starts"
            )
        key = (row["subject"], row["session"], row["survey"])
        surveys.setdefault(key, []).append(row)

    questions: list[QuestionTiming] = []
    for (subject, session, survey), group in sorted(surveys.items()):
        indices = [g["question_index"] for g in group]
        if len(set(indices)) != len(indices):
            raise ValidationError(
                f"{path}: duplicate question_index in survey {survey!r} "
                f"(subject {subject}, session {session})"
            )
        group = sorted(group, key=lambda g: g["question_index"])
        gamified = _is_gamified(survey, gamified_surveys)
        for position, row in enumerate(group, start=1):
            last = position == len(group)
            questions.append(
                QuestionTiming(
                    subject_id=subject,
                    session_id=session,
                    survey_id=survey,
                    question_index=row["question_index"],
                    gamified=gamified,
                    duration_s=row["end"] - row["start"],
                    position=None if last else position,
                    included=not last,
                )
            )

    included = [q for q in questions if q.included]
    gamified_durations = [q.duration_s for q in included if q.gamified]
    plain_durations = [q.duration_s for q in included if not q.gamified]

    # Difference series: per (subject, session), mean duration per position
    # and condition, then non-gamified minus gamified where both exist.
    per_session: dict[tuple[str, str], dict[tuple[bool, int], list[float]]] = {}
    for q in included:
        session_key = (q.subject_id, q.session_id)
        per_session.setdefault(session_key, {}).setdefault(
            (q.gamified, q.position), []
        ).append(q.duration_s)
    diffs: dict[int, list[float]] = {}
    for buckets in per_session.values():
        positions = {pos for (_, pos) in buckets}
        for pos in positions:
            gam = buckets.get((True, pos))
            plain = buckets.get((False, pos))
            if gam and plain:
                diffs.setdefault(pos, []).append(
                    float(np.mean(plain)) - float(np.mean(gam))
                )
    position_differences = [
        PositionDiff(pos, float(np.mean(values)), len(values))
        for pos, values in sorted(diffs.items())
    ]

    return ResponseTimeTable(
        questions=questions,
        mean_gamified_s=(
            float(np.mean(gamified_durations)) if gamified_durations else math.nan
        ),
        mean_non_gamified_s=(
            float(np.mean(plain_durations)) if plain_durations else math.nan
        ),
        n_gamified=len(gamified_durations),
        n_non_gamified=len(plain_durations),
        position_differences=position_differences,
    )

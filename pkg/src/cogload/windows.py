"""Sliding-window extraction of labeled training / evaluation batches.

The experiment protocol fixes the step sizes: training windows use
per-condition steps chosen to balance the classes (cognitive load 8 /
baseline 4; stress 12 / non-stress 18), validation windows use a uniform
step of 32 samples and test windows 64 samples (one second at 64 Hz).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cogload.data import Condition, SessionRecord, ValidationError

logger = logging.getLogger(__name__)

SUPPORTED_WINDOW_LENGTHS_S = (10.0, 30.0, 60.0)
VALIDATION_STEP = 32
TEST_STEP = 64


class Task(str, Enum):
    COGNITIVE_LOAD = "cognitive_load"
    STRESS = "stress"


POSITIVE_CONDITIONS = {
    Task.COGNITIVE_LOAD: frozenset({Condition.COGNITIVE_LOAD}),
    Task.STRESS: frozenset({Condition.STRESS}),
}
NEGATIVE_CONDITIONS = {
    Task.COGNITIVE_LOAD: frozenset({Condition.BASELINE}),
    Task.STRESS: frozenset({Condition.AMUSEMENT, Condition.WESAD_BASELINE}),
}
# (positive step, negative step) for training extraction, per task.
TRAIN_STEPS = {
    Task.COGNITIVE_LOAD: (8, 4),
    Task.STRESS: (12, 18),
}


class WindowSource(NamedTuple):
    subject_id: str
    session_id: str
    condition: Condition
    start_sample: int


@dataclass(frozen=True)
class WindowSpec:
    """Extraction parameters carried alongside every batch."""

    window_len_s: float
    step_samples_positive: int
    step_samples_negative: int
    normalize: str = "per_window_zscore"

    def __post_init__(self) -> None:
        if self.window_len_s <= 0:
            raise ValidationError(f"window length must be positive, got {self.window_len_s}")
        if self.step_samples_positive < 1 or self.step_samples_negative < 1:
            raise ValidationError("step sizes must be >= 1")
        if self.normalize not in ("none", "per_window_zscore"):
            raise ValidationError(f"unknown normalization {self.normalize!r}")


@dataclass(eq=False)
class WindowBatch:
    """Fixed-length windows with labels and per-window provenance."""

    windows: np.ndarray  # (n, L) float32
    labels: np.ndarray | None  # (n,) int64 in {0, 1}, or None when unlabeled
    spec: WindowSpec
    source: list[WindowSource]

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def window_len_samples(self) -> int:
        return self.windows.shape[1]

    def subjects(self) -> set[str]:
        return {s.subject_id for s in self.source}


def window_count(n_samples: int, window_samples: int, step: int) -> int:
    """Number of contiguous windows: floor((N - L) / step) + 1, or 0 when N < L."""
    if step < 1:
        raise ValidationError(f"step must be >= 1, got {step}")
    if n_samples < window_samples:
        return 0
    return (n_samples - window_samples) // step + 1


def window_samples(window_len_s: float, fs_hz: float) -> int:
    """Window length in samples; rejects non-integer products."""
    product = window_len_s * fs_hz
    n = round(product)
    if n < 1 or abs(product - n) > 1e-6:
        raise ValidationError(
            f"window of {window_len_s} s at {fs_hz} Hz is not an integer "
            f"sample count ({product})"
        )
    return n


def _zscore_rows(windows: np.ndarray) -> np.ndarray:
    w = windows.astype(np.float64, copy=False)
    mean = w.mean(axis=1, keepdims=True)
    std = w.std(axis=1, keepdims=True)
    flat = std <= 1e-12  # constant window (sensor dropout): all-zeros row
    safe = np.where(flat, 1.0, std)
    out = (w - mean) / safe
    out[flat[:, 0]] = 0.0
    return out.astype(np.float32)


def extract_windows(
    record: SessionRecord,
    window_len_s: float,
    step_samples: int,
    normalize: str = "per_window_zscore",
    label: int | None = None,
) -> WindowBatch:
    """Extract contiguous windows starting at 0, step, 2*step, ...

    A recording shorter than one window yields an empty batch and a logged
    warning rather than an error.
    """
    spec = WindowSpec(
        window_len_s=window_len_s,
        step_samples_positive=step_samples,
        step_samples_negative=step_samples,
        normalize=normalize,
    )
    length = window_samples(window_len_s, record.signal.fs_hz)
    samples = record.signal.samples
    n = len(samples)
    count = window_count(n, length, step_samples)
    if count == 0:
        logger.warning(
            "record %s/%s/%s: %d samples shorter than %d-sample window; 0 windows",
            record.subject_id, record.session_id, record.condition.value, n, length,
        )
        windows = np.empty((0, length), dtype=np.float32)
        sources: list[WindowSource] = []
    else:
        windows = np.ascontiguousarray(
            sliding_window_view(samples, length)[:: step_samples]
        ).astype(np.float32)
        assert windows.shape[0] == count
        sources = [
            WindowSource(record.subject_id, record.session_id, record.condition, i * step_samples)
            for i in range(count)
        ]
    if normalize == "per_window_zscore" and count:
        windows = _zscore_rows(windows)
    labels = None if label is None else np.full(count, label, dtype=np.int64)
    return WindowBatch(windows=windows, labels=labels, spec=spec, source=sources)


def _label_for(record: SessionRecord, task: Task) -> int:
    if record.condition in POSITIVE_CONDITIONS[task]:
        return 1
    if record.condition in NEGATIVE_CONDITIONS[task]:
        return 0
    raise ValidationError(
        f"record {record.subject_id}/{record.session_id} has condition "
        f"{record.condition.value!r}, which does not belong to task {task.value!r}"
    )


def _concat(parts: list[WindowBatch], spec: WindowSpec, length: int) -> WindowBatch:
    if not parts:
        return WindowBatch(
            windows=np.empty((0, length), dtype=np.float32),
            labels=np.empty((0,), dtype=np.int64),
            spec=spec,
            source=[],
        )
    windows = np.concatenate([p.windows for p in parts], axis=0)
    labels = np.concatenate([p.labels for p in parts])
    source = [s for p in parts for s in p.source]
    return WindowBatch(windows=windows, labels=labels, spec=spec, source=source)


def build_training_batches(
    records: Sequence[SessionRecord],
    task: Task,
    window_len_s: float,
    normalize: str = "per_window_zscore",
) -> WindowBatch:
    """Training batch with the task's per-condition steps, in record order."""
    step_pos, step_neg = TRAIN_STEPS[task]
    spec = WindowSpec(window_len_s, step_pos, step_neg, normalize)
    fs = records[0].signal.fs_hz if records else 64.0
    parts = []
    for record in records:
        label = _label_for(record, task)
        step = step_pos if label == 1 else step_neg
        parts.append(extract_windows(record, window_len_s, step, normalize, label=label))
    return _concat(parts, spec, window_samples(window_len_s, fs))


def build_eval_batches(
    records: Sequence[SessionRecord],
    task: Task,
    window_len_s: float,
    split: str,
    normalize: str = "per_window_zscore",
) -> WindowBatch:
    """Validation (step 32) or test (step 64) batch, uniform step for both classes."""
    if split == "validation":
        step = VALIDATION_STEP
    elif split == "test":
        step = TEST_STEP
    else:
        raise ValidationError(f"split must be 'validation' or 'test', got {split!r}")
    spec = WindowSpec(window_len_s, step, step, normalize)
    fs = records[0].signal.fs_hz if records else 64.0
    parts = [
        extract_windows(record, window_len_s, step, normalize, label=_label_for(record, task))
        for record in records
    ]
    return _concat(parts, spec, window_samples(window_len_s, fs))


def dump_batch_csv(batch: WindowBatch, path: str | Path) -> None:
    """Debug dump: one row per window, label in the last column."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for i in range(len(batch)):
            row = [repr(float(v)) for v in batch.windows[i]]
            if batch.labels is not None:
                row.append(str(int(batch.labels[i])))
            writer.writerow(row)


def validate_supported_window_len(window_len_s: float) -> float:
    """Protocol boundary check: only the studied window lengths are allowed."""
    if float(window_len_s) not in SUPPORTED_WINDOW_LENGTHS_S:
        raise ValidationError(
            f"window length {window_len_s} s is not one of {SUPPORTED_WINDOW_LENGTHS_S}"
        )
    return float(window_len_s)

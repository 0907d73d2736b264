#!/usr/bin/env python3
"""From raw wrist PPG to labeled training windows, step by step.

Synthesizes one subject's cognitive-load and baseline recordings, then shows
how the windowing rules turn them into normalized training/evaluation
examples: the three window lengths, the per-class training steps that
rebalance the label distribution, and the sparser uniform steps used for
validation and test.
"""

import numpy as np

from cogload.synthetic import make_record
from cogload.data import Condition
from cogload.windows import (
    SUPPORTED_WINDOW_LENGTHS_S,
    TEST_STEP,
    TRAIN_STEPS,
    VALIDATION_STEP,
    Task,
    build_eval_batches,
    build_training_batches,
    window_count,
    window_samples,
)

# ---------------------------------------------------------------- recordings
load = make_record("demo", "1", Condition.COGNITIVE_LOAD, duration_s=120.0, master_seed=42)
rest = make_record("demo", "1", Condition.BASELINE, duration_s=120.0, master_seed=42)

for rec in (load, rest):
    s = rec.signal
    print(
        f"{rec.condition.value:16s} {len(s.samples)} samples @ {s.fs_hz:g} Hz "
        f"({len(s.samples) / s.fs_hz:.0f} s), amplitude "
        f"[{s.samples.min():.2f}, {s.samples.max():.2f}]"
    )

# ------------------------------------------------------------ window lengths
print("\nwindow lengths and how many fit in a 120 s recording:")
n = len(load.signal.samples)
for len_s in SUPPORTED_WINDOW_LENGTHS_S:
    length = window_samples(len_s, 64.0)
    step_pos, step_neg = TRAIN_STEPS[Task.COGNITIVE_LOAD]
    print(
        f"  {len_s:4.0f} s -> {length:5d} samples | "
        f"train windows: {window_count(n, length, step_pos):5d} load (step {step_pos}), "
        f"{window_count(n, length, step_neg):5d} baseline (step {step_neg}) | "
        f"val {window_count(n, length, VALIDATION_STEP):4d} (step {VALIDATION_STEP}), "
        f"test {window_count(n, length, TEST_STEP):4d} (step {TEST_STEP})"
    )
print(
    "  (the positive class uses the denser step so both classes contribute\n"
    "   a comparable number of training windows)"
)

# -------------------------------------------------------------- batches
batch = build_training_batches([load, rest], Task.COGNITIVE_LOAD, 10.0)
pos = int(batch.labels.sum())
print(
    f"\n10 s training batch: {batch.windows.shape[0]} windows x "
    f"{batch.windows.shape[1]} samples, {pos} load / "
    f"{len(batch.labels) - pos} baseline"
)

# every window is z-scored independently
mu = batch.windows.mean(axis=1)
sd = batch.windows.std(axis=1)
print(
    f"per-window normalization: |mean| <= {np.abs(mu).max():.1e}, "
    f"std in [{sd.min():.6f}, {sd.max():.6f}]"
)

test = build_eval_batches([load, rest], Task.COGNITIVE_LOAD, 10.0, "test")
print(f"10 s test batch: {test.windows.shape[0]} windows at uniform step {TEST_STEP}")

# window provenance survives batching, which is what keeps subject-holdout
# splits honest downstream
first = batch.source[0]
print(
    f"first window came from subject={first.subject_id!r} "
    f"session={first.session_id!r} condition={first.condition.value!r} "
    f"offset={first.start_sample}"
)

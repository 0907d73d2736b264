import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogload.data import Condition, PpgSignal, SessionRecord, ValidationError
from cogload.windows import (
    SUPPORTED_WINDOW_LENGTHS_S,
    TEST_STEP,
    TRAIN_STEPS,
    Task,
    VALIDATION_STEP,
    WindowSpec,
    build_eval_batches,
    build_training_batches,
    extract_windows,
    validate_supported_window_len,
    window_count,
    window_samples,
)


def brute_force_count(n, length, step):
    count = 0
    start = 0
    while start + length <= n:
        count += 1
        start += step
    return count


def make_record(condition, n_samples, subject="1", session="1", fs=64.0, value=None):
    rng = np.random.default_rng(abs(hash((subject, session, condition))) % 2**32)
    samples = rng.normal(size=n_samples) if value is None else np.full(n_samples, value)
    return SessionRecord(
        subject_id=subject,
        session_id=session,
        condition=condition,
        signal=PpgSignal(start_epoch=0.0, fs_hz=fs, samples=samples),
    )


class TestWindowCount:
    # Frozen closed-form values for the protocol geometries.
    @pytest.mark.parametrize(
        "n,length,step,expected",
        [
            (11520, 3840, 8, 961),
            (3840, 640, 4, 801),
            (11520, 1920, 64, 151),
            (11520, 1920, 32, 301),
            (640, 640, 64, 1),
            (639, 640, 64, 0),
        ],
    )
    def test_frozen_cases(self, n, length, step, expected):
        assert window_count(n, length, step) == expected

    @settings(max_examples=200, deadline=None)
    @given(
        n=st.integers(0, 10_000),
        length=st.integers(1, 10_000),
        step=st.integers(1, 10_000),
    )
    def test_matches_brute_force(self, n, length, step):
        assert window_count(n, length, step) == brute_force_count(n, length, step)

    def test_step_must_be_positive(self):
        with pytest.raises(ValidationError):
            window_count(100, 10, 0)


class TestWindowSamples:
    def test_integer_products(self):
        assert window_samples(10.0, 64.0) == 640
        assert window_samples(30.0, 64.0) == 1920
        assert window_samples(60.0, 64.0) == 3840

    def test_rejects_fractional(self):
        with pytest.raises(ValidationError):
            window_samples(0.3, 64.0)  # 19.2 samples


class TestExtractWindows:
    def test_values_match_manual_slicing(self):
        record = make_record(Condition.BASELINE, 200)
        batch = extract_windows(record, 1.0, 16, normalize="none")
        samples = record.signal.samples
        assert len(batch) == window_count(200, 64, 16)
        for i in range(len(batch)):
            np.testing.assert_array_equal(batch.windows[i], samples[i * 16 : i * 16 + 64])
            assert batch.source[i].start_sample == i * 16

    def test_zscore_rows(self):
        record = make_record(Condition.BASELINE, 500)
        batch = extract_windows(record, 1.0, 32)
        assert batch.windows.dtype == np.float32
        means = batch.windows.mean(axis=1)
        stds = batch.windows.std(axis=1)
        np.testing.assert_allclose(means, 0.0, atol=1e-6)
        np.testing.assert_allclose(stds, 1.0, atol=1e-5)

    def test_zscore_equals_manual_normalization(self):
        record = make_record(Condition.BASELINE, 400)
        raw = extract_windows(record, 1.0, 16, normalize="none")
        scored = extract_windows(record, 1.0, 16)
        w = raw.windows.astype(np.float64)
        expected = (w - w.mean(axis=1, keepdims=True)) / w.std(axis=1, keepdims=True)
        np.testing.assert_allclose(scored.windows, expected.astype(np.float32), atol=1e-7)

    def test_constant_window_becomes_zeros(self):
        record = make_record(Condition.BASELINE, 128, value=3.5)
        batch = extract_windows(record, 1.0, 64)
        np.testing.assert_array_equal(batch.windows, np.zeros_like(batch.windows))

    def test_short_record_warns_and_yields_empty(self, caplog):
        record = make_record(Condition.BASELINE, 100)
        with caplog.at_level(logging.WARNING):
            batch = extract_windows(record, 10.0, 8)
        assert len(batch) == 0
        assert batch.windows.shape == (0, 640)
        assert "shorter" in caplog.text

    def test_labels_attached(self):
        record = make_record(Condition.COGNITIVE_LOAD, 256)
        batch = extract_windows(record, 1.0, 64, label=1)
        assert batch.labels.dtype == np.int64
        assert set(batch.labels.tolist()) == {1}


class TestTrainingBatches:
    def test_condition_steps(self):
        pos = make_record(Condition.COGNITIVE_LOAD, 1280, subject="1")
        neg = make_record(Condition.BASELINE, 1280, subject="1")
        batch = build_training_batches([pos, neg], Task.COGNITIVE_LOAD, 1.0)
        step_pos, step_neg = TRAIN_STEPS[Task.COGNITIVE_LOAD]
        assert (step_pos, step_neg) == (8, 4)
        expected = window_count(1280, 64, 8) + window_count(1280, 64, 4)
        assert len(batch) == expected
        # record order preserved: positives (label 1) first
        n_pos = window_count(1280, 64, 8)
        assert set(batch.labels[:n_pos].tolist()) == {1}
        assert set(batch.labels[n_pos:].tolist()) == {0}

    def test_stress_steps(self):
        assert TRAIN_STEPS[Task.STRESS] == (12, 18)
        stress = make_record(Condition.STRESS, 2560)
        calm = make_record(Condition.WESAD_BASELINE, 2560)
        fun = make_record(Condition.AMUSEMENT, 2560)
        batch = build_training_batches([stress, calm, fun], Task.STRESS, 1.0)
        expected = window_count(2560, 64, 12) + 2 * window_count(2560, 64, 18)
        assert len(batch) == expected

    def test_wrong_condition_for_task(self):
        stress = make_record(Condition.STRESS, 640)
        with pytest.raises(ValidationError, match="does not belong"):
            build_training_batches([stress], Task.COGNITIVE_LOAD, 1.0)


class TestEvalBatches:
    def test_split_steps(self):
        assert (VALIDATION_STEP, TEST_STEP) == (32, 64)
        record = make_record(Condition.BASELINE, 2560)
        val = build_eval_batches([record], Task.COGNITIVE_LOAD, 1.0, "validation")
        test = build_eval_batches([record], Task.COGNITIVE_LOAD, 1.0, "test")
        assert len(val) == window_count(2560, 64, 32)
        assert len(test) == window_count(2560, 64, 64)

    def test_unknown_split(self):
        record = make_record(Condition.BASELINE, 640)
        with pytest.raises(ValidationError):
            build_eval_batches([record], Task.COGNITIVE_LOAD, 1.0, "holdout")


class TestWindowSpec:
    def test_rejects_bad_values(self):
        with pytest.raises(ValidationError):
            WindowSpec(window_len_s=0.0, step_samples_positive=8, step_samples_negative=4)
        with pytest.raises(ValidationError):
            WindowSpec(window_len_s=10.0, step_samples_positive=0, step_samples_negative=4)
        with pytest.raises(ValidationError):
            WindowSpec(
                window_len_s=10.0, step_samples_positive=8, step_samples_negative=4,
                normalize="minmax",
            )


def test_supported_window_lengths():
    assert SUPPORTED_WINDOW_LENGTHS_S == (10.0, 30.0, 60.0)
    for window in SUPPORTED_WINDOW_LENGTHS_S:
        assert validate_supported_window_len(window) == window
    with pytest.raises(ValidationError):
        validate_supported_window_len(15.0)

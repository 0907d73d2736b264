import math

import numpy as np
import pytest

from cogload.analysis import (
    CALIBRATION_F1_THRESHOLD,
    CalibrationResult,
    SurveyBurdenRow,
    burden_percentages,
    calibrate_subject,
    correlate_source_target,
    response_time_analysis,
    round_half_up,
    stress_leakage_check,
)
from cogload.data import Condition, ParseError, ValidationError
from cogload.metrics import UndefinedCorrelationError
from cogload.protocols import (
    FoldPlan,
    ModelPool,
    PoolEntry,
    RunMetrics,
    SourceMetrics,
)
from cogload.synthetic import (
    SURVEY_SUBJECTS,
    constant_model,
    make_record,
    write_response_time_csv,
)


def pool_entry(weights, run_id, subject="S2", val_f1=0.9):
    fold = FoldPlan(run_id, subject, ("S98",), ("S96", "S97"), seed=0)
    metrics = RunMetrics(
        fold,
        10.0,
        "pretrained",
        test_f1=0.5,
        source_metrics=SourceMetrics(0.9, val_f1, 0.8, subject),
    )
    return PoolEntry(metrics=metrics, weights=weights)


class TestRoundHalfUp:
    @pytest.mark.parametrize(
        "value,expected",
        [
            (0.5, 1), (1.5, 2), (2.5, 3),  # .5 always goes up, never to even
            (-0.5, 0), (-1.5, -1),
            (2.4, 2), (2.6, 3), (0.0, 0), (99.999, 100),
        ],
    )
    def test_cases(self, value, expected):
        assert round_half_up(value) == expected


class TestCalibrateSubject:
    def _records(self, pilot4, subject="1"):
        return [r for r in pilot4 if r.subject_id == subject]

    def test_selects_discriminating_model(self, pilot4, hf_model):
        pool = ModelPool(entries=[
            pool_entry(constant_model(640, 0), run_id=2),
            pool_entry(constant_model(640, 1), run_id=1),
            pool_entry(hf_model, run_id=0),
        ])
        result = calibrate_subject(pool, self._records(pilot4), window_len_s=10.0)
        assert result.selected.metrics.fold.run_id == 0
        assert result.calibration_f1 == 1.0
        assert not result.excluded
        assert result.subject_id == "1"
        assert result.session_id == "1"
        assert result.n_windows == 72  # two 45 s records at the test step

    def test_constant_models_score_one_third(self, pilot4):
        # Half the windows per class: an always-one-class model gets
        # weighted F1 = (2/3)/2 = 1/3.
        pool = ModelPool(entries=[pool_entry(constant_model(640, 0), run_id=0)])
        result = calibrate_subject(pool, self._records(pilot4), window_len_s=10.0)
        assert result.calibration_f1 == pytest.approx(1 / 3)
        assert result.excluded  # 1/3 <= 0.7

    def test_exclusion_threshold_boundary(self, pilot4, hf_model):
        pool = ModelPool(entries=[pool_entry(hf_model, run_id=0)])
        result = calibrate_subject(pool, self._records(pilot4), window_len_s=10.0)
        assert result.calibration_f1 > CALIBRATION_F1_THRESHOLD
        assert not result.excluded

    def test_tie_breaks_to_lowest_run(self, pilot4):
        pool = ModelPool(entries=[
            pool_entry(constant_model(640, 0), run_id=5),
            pool_entry(constant_model(640, 0), run_id=2),
        ])
        result = calibrate_subject(pool, self._records(pilot4), window_len_s=10.0)
        assert result.selected.metrics.fold.run_id == 2

    def test_tie_breaks_to_lowest_subject_within_run(self, pilot4):
        pool = ModelPool(entries=[
            pool_entry(constant_model(640, 1), run_id=1, subject="S10"),
            pool_entry(constant_model(640, 1), run_id=1, subject="S9"),
        ])
        result = calibrate_subject(pool, self._records(pilot4), window_len_s=10.0)
        assert result.selected.metrics.fold.test_subject == "S9"

    def test_monotone_score_transform_keeps_argmax(self, pilot4, hf_model):
        from cogload.metrics import weighted_f1

        pool = ModelPool(entries=[
            pool_entry(constant_model(640, 0), run_id=3),
            pool_entry(hf_model, run_id=1),
            pool_entry(constant_model(640, 1), run_id=2),
        ])
        records = self._records(pilot4)
        plain = calibrate_subject(pool, records, window_len_s=10.0)
        squared = calibrate_subject(
            pool, records, window_len_s=10.0,
            score_fn=lambda yt, yp: weighted_f1(yt, yp) ** 2,
        )
        assert squared.selected is plain.selected
        assert squared.calibration_f1 == pytest.approx(plain.calibration_f1**2)

    def test_selected_weights_roundtrip(self, pilot4, hf_model):
        pool = ModelPool(entries=[pool_entry(hf_model, run_id=0)])
        result = calibrate_subject(pool, self._records(pilot4), window_len_s=10.0)
        np.testing.assert_array_equal(
            result.selected_weights().fc1_w, hf_model.fc1_w
        )

    def test_single_class_records_warn(self, pilot4, hf_model, caplog):
        records = [
            r for r in self._records(pilot4)
            if r.condition == Condition.COGNITIVE_LOAD
        ]
        pool = ModelPool(entries=[pool_entry(hf_model, run_id=0)])
        with caplog.at_level("WARNING"):
            calibrate_subject(pool, records, window_len_s=10.0)
        assert any("single class" in m for m in caplog.messages)

    def test_errors(self, pilot4, hf_model):
        pool = ModelPool(entries=[pool_entry(hf_model, run_id=0)])
        with pytest.raises(ValidationError, match="empty model pool"):
            calibrate_subject(ModelPool(), self._records(pilot4), window_len_s=10.0)
        with pytest.raises(ValidationError, match="no calibration records"):
            calibrate_subject(pool, [], window_len_s=10.0)
        mixed = self._records(pilot4) + self._records(pilot4, subject="2")
        with pytest.raises(ValidationError, match="one subject"):
            calibrate_subject(pool, mixed, window_len_s=10.0)
        short = [
            make_record("1", "1", Condition.BASELINE, 5.0, master_seed=0)
        ]
        with pytest.raises(ValidationError, match="shorter"):
            calibrate_subject(pool, short, window_len_s=10.0)


class TestBurdenPercentages:
    def _survey(self, gamified=True, sigma=0.30, duration=60.0):
        condition = (
            Condition.SURVEY_GAMIFIED if gamified else Condition.SURVEY_PLAIN
        )
        return make_record(
            "11", "1", condition, duration, master_seed=3, hf_sigma=sigma
        )

    def test_always_positive_models_give_100(self):
        row = burden_percentages(
            constant_model(640, 1),
            constant_model(640, 1),
            self._survey(),
            window_len_s=10.0,
        )
        assert row.cogload_pct == 100.0
        assert row.stress_pct == 100.0
        assert row.gamified
        assert not row.excluded
        assert row.n_windows > 0

    def test_always_negative_detector_gives_0(self):
        row = burden_percentages(
            constant_model(640, 0),
            constant_model(640, 0),
            self._survey(gamified=False),
            window_len_s=10.0,
        )
        assert row.cogload_pct == 0.0
        assert row.stress_pct == 0.0
        assert not row.gamified

    def test_trained_detector_tracks_signal_content(self, hf_model):
        loady = burden_percentages(
            hf_model, constant_model(640, 0), self._survey(sigma=0.30),
            window_len_s=10.0,
        )
        calm = burden_percentages(
            hf_model, constant_model(640, 0), self._survey(sigma=0.05),
            window_len_s=10.0,
        )
        assert loady.cogload_pct > 80.0
        assert calm.cogload_pct < 20.0

    def test_none_model_marks_excluded(self):
        row = burden_percentages(
            None, constant_model(640, 1), self._survey(), window_len_s=10.0
        )
        assert row.cogload_pct is None
        assert row.excluded
        assert row.cogload_pct_int() is None
        assert row.stress_pct == 100.0  # stress burden still computed

    def test_excluded_calibration_result_propagates(self, pilot4):
        pool = ModelPool(entries=[pool_entry(constant_model(640, 1), run_id=0)])
        records = [r for r in pilot4 if r.subject_id == "1"]
        calibration = calibrate_subject(pool, records, window_len_s=10.0)
        assert calibration.excluded
        row = burden_percentages(
            calibration, constant_model(640, 0), self._survey(), window_len_s=10.0
        )
        assert row.cogload_pct is None
        assert row.calibration_f1 == pytest.approx(calibration.calibration_f1)

    def test_included_calibration_result_used(self, pilot4, hf_model):
        pool = ModelPool(entries=[pool_entry(hf_model, run_id=0)])
        records = [r for r in pilot4 if r.subject_id == "1"]
        calibration = calibrate_subject(pool, records, window_len_s=10.0)
        row = burden_percentages(
            calibration, constant_model(640, 1), self._survey(sigma=0.30),
            window_len_s=10.0,
        )
        assert row.cogload_pct is not None and row.cogload_pct > 80.0
        assert row.calibration_f1 == 1.0

    def test_rounding_helpers(self):
        row = SurveyBurdenRow(
            subject_id="11", session_id="1", gamified=True,
            cogload_pct=12.5, stress_pct=0.4, calibration_f1=0.9,
        )
        assert row.cogload_pct_int() == 13
        assert row.stress_pct_int() == 0
        assert row.cogload_pct == 12.5  # raw value retained

    def test_gamified_flag_beats_condition(self):
        record = make_record(
            "11", "1", Condition.SURVEY_PLAIN, 60.0, master_seed=0, gamified=True
        )
        row = burden_percentages(
            None, constant_model(640, 0), record, window_len_s=10.0
        )
        assert row.gamified

    def test_non_survey_condition_needs_flag(self):
        record = make_record("11", "1", Condition.BASELINE, 60.0, master_seed=0)
        with pytest.raises(ValidationError, match="gamified"):
            burden_percentages(
                None, constant_model(640, 0), record, window_len_s=10.0
            )

    def test_short_recording_rejected(self):
        with pytest.raises(ValidationError, match="shorter"):
            burden_percentages(
                None,
                constant_model(640, 0),
                self._survey(duration=5.0),
                window_len_s=10.0,
            )


class TestStressLeakage:
    def test_constant_models_bound_the_output(self, pilot4):
        always = stress_leakage_check(
            constant_model(1920, 1), pilot4, window_len_s=30.0
        )
        never = stress_leakage_check(
            constant_model(1920, 0), pilot4, window_len_s=30.0
        )
        assert set(always) == {
            (s, c) for s in "1234" for c in ("baseline", "cognitive_load")
        }
        assert all(v == 100.0 for v in always.values())
        assert all(v == 0.0 for v in never.values())

    def test_natural_subject_then_condition_order(self, pilot4):
        out = stress_leakage_check(constant_model(1920, 0), pilot4)
        keys = list(out)
        assert keys[0] == ("1", "baseline")
        assert keys[1] == ("1", "cognitive_load")
        assert [k[0] for k in keys] == sorted(
            [k[0] for k in keys], key=int
        )

    def test_short_groups_skipped_with_warning(self, caplog):
        records = [
            make_record("1", "1", Condition.BASELINE, 5.0, master_seed=0),
            make_record("1", "1", Condition.COGNITIVE_LOAD, 45.0, master_seed=0),
        ]
        with caplog.at_level("WARNING"):
            out = stress_leakage_check(
                constant_model(1920, 1), records, window_len_s=30.0
            )
        assert list(out) == [("1", "cognitive_load")]
        assert any("skipped" in m for m in caplog.messages)


def planted_transfer_metrics(val_f1s, subjects=("1", "2"), window=30.0):
    """One run per val_f1; every fold of a run shares that run's source."""
    metrics = []
    for run_id, val in enumerate(val_f1s):
        source = SourceMetrics(
            train_f1=min(1.0, val + 0.1),
            val_f1=val,
            test_f1=max(0.0, val - 0.1),
            test_subject="S2",
        )
        for subject in subjects:
            others = [s for s in subjects if s != subject] + ["x", "y"]
            fold = FoldPlan(run_id, subject, (others[0],), tuple(others[1:]), seed=0)
            metrics.append(
                RunMetrics(
                    fold, window, "pretrained",
                    test_f1=val,  # target exactly tracks source val F1
                    source_metrics=source,
                )
            )
    return metrics


class TestCorrelateSourceTarget:
    def test_perfect_tracking_gives_r_one(self):
        metrics = planted_transfer_metrics([0.2, 0.5, 0.8])
        table = correlate_source_target(metrics)
        for granularity in ("model", "run_mean"):
            rec = table.get("val", "pooled", granularity)
            assert rec.stats.r == 1.0
            assert rec.stats.p_value == 0.0
        # train/test sources are affine shifts of val -> also r=1
        assert table.get("train", "pooled", "model").stats.r == 1.0
        assert table.get("test", "pooled", "model").stats.r == 1.0

    def test_point_counts_per_granularity(self):
        metrics = planted_transfer_metrics([0.2, 0.5, 0.8], subjects=("1", "2"))
        table = correlate_source_target(metrics)
        assert table.get("val", "pooled", "model").stats.n == 6
        assert table.get("val", "pooled", "run_mean").stats.n == 3
        assert table.get("val", "30s", "model").stats.n == 6

    def test_anticorrelated_targets(self):
        metrics = planted_transfer_metrics([0.2, 0.5, 0.8])
        flipped = []
        for m in metrics:
            flipped.append(
                RunMetrics(
                    m.fold, m.window_len_s, m.protocol,
                    test_f1=1.0 - m.test_f1,
                    source_metrics=m.source_metrics,
                )
            )
        table = correlate_source_target(flipped)
        assert table.get("val", "pooled", "model").stats.r == -1.0

    def test_constant_sources_raise(self):
        metrics = planted_transfer_metrics([0.6, 0.6, 0.6])
        with pytest.raises(UndefinedCorrelationError):
            correlate_source_target(metrics)

    def test_degenerate_subscope_recorded_not_raised(self):
        # Window 10 s varies; window 30 s is constant across runs.
        varied = planted_transfer_metrics([0.2, 0.5, 0.8], window=10.0)
        constant_target = []
        for m in planted_transfer_metrics([0.2, 0.5, 0.8], window=30.0):
            constant_target.append(
                RunMetrics(
                    m.fold, m.window_len_s, m.protocol,
                    test_f1=0.7,
                    source_metrics=m.source_metrics,
                )
            )
        table = correlate_source_target(varied + constant_target)
        assert table.get("val", "10s", "model").stats.r == 1.0
        bad = table.get("val", "30s", "model")
        assert bad.stats is None
        assert "constant" in bad.error
        # pooled survives because the 10 s points vary
        assert table.get("val", "pooled", "model").stats is not None

    def test_failed_runs_are_ignored(self):
        metrics = planted_transfer_metrics([0.2, 0.5, 0.8])
        fold = FoldPlan(9, "1", ("2",), ("x", "y"), seed=0)
        metrics.append(
            RunMetrics(
                fold, 30.0, "pretrained", math.nan, failed=True, error="boom"
            )
        )
        table = correlate_source_target(metrics)
        assert table.get("val", "pooled", "model").stats.n == 6

    def test_missing_source_metrics_rejected(self):
        fold = FoldPlan(0, "1", ("2",), ("x", "y"), seed=0)
        bare = [RunMetrics(fold, 30.0, "pretrained", 0.5)]
        with pytest.raises(ValidationError, match="source metrics"):
            correlate_source_target(bare)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError, match="no fine-tuned"):
            correlate_source_target([])

    def test_get_raises_on_unknown_key(self):
        table = correlate_source_target(planted_transfer_metrics([0.2, 0.8, 0.5]))
        with pytest.raises(KeyError):
            table.get("val", "60s", "model")

    def test_saturated_real_pool_is_degenerate(self, pretrained_smoke):
        # Every synthetic fine-tuned model hits F1=1.0, so the pooled
        # correlation is undefined by construction - and must say so.
        _, pool, _ = pretrained_smoke
        with pytest.raises(UndefinedCorrelationError):
            correlate_source_target(pool)


class TestResponseTimes:
    def test_exact_means_and_counts(self, tmp_path):
        path = write_response_time_csv(tmp_path / "rt.csv")
        table = response_time_analysis(path)
        n_sessions = sum(len(v) for v in SURVEY_SUBJECTS.values())
        assert table.mean_gamified_s == pytest.approx(5.5)
        assert table.mean_non_gamified_s == pytest.approx(6.0)
        assert table.n_gamified == n_sessions * 20
        assert table.n_non_gamified == n_sessions * 20

    def test_slow_last_question_excluded_everywhere(self, tmp_path):
        path = write_response_time_csv(
            tmp_path / "rt.csv", subjects={"7": ("1",)}, questions_per_survey=5
        )
        table = response_time_analysis(path)
        included = [q for q in table.questions if q.included]
        dropped = [q for q in table.questions if not q.included]
        assert len(included) == 2 * 4 and len(dropped) == 2
        assert all(q.duration_s == 90.0 for q in dropped)
        assert all(q.position is None for q in dropped)
        assert max(q.duration_s for q in included) <= 6.0
        assert table.mean_non_gamified_s == pytest.approx(6.0)

    def test_position_differences(self, tmp_path):
        path = write_response_time_csv(
            tmp_path / "rt.csv", subjects={"7": ("1",), "8": ("1", "2")},
            questions_per_survey=6,
        )
        table = response_time_analysis(path)
        assert [d.position for d in table.position_differences] == [1, 2, 3, 4, 5]
        for diff in table.position_differences:
            assert diff.mean_diff_s == pytest.approx(0.5)  # plain 6.0 - gamified 5.5
            assert diff.n_sessions == 3

    def test_jitter_keeps_ordering(self, tmp_path):
        path = write_response_time_csv(
            tmp_path / "rt.csv", subjects={"7": ("1",)}, jitter_s=0.1,
            master_seed=4,
        )
        table = response_time_analysis(path)
        assert table.mean_non_gamified_s > table.mean_gamified_s

    def test_explicit_gamified_mapping(self, tmp_path):
        path = write_response_time_csv(
            tmp_path / "rt.csv", subjects={"7": ("1",)}, questions_per_survey=4
        )
        table = response_time_analysis(
            path, gamified_surveys={"gamified": True, "plain": False}
        )
        assert table.mean_gamified_s == pytest.approx(5.5)
        with pytest.raises(ValidationError, match="missing"):
            response_time_analysis(path, gamified_surveys={"gamified": True})

    def test_gamified_set(self, tmp_path):
        path = write_response_time_csv(
            tmp_path / "rt.csv", subjects={"7": ("1",)}, questions_per_survey=4
        )
        table = response_time_analysis(path, gamified_surveys={"gamified"})
        assert table.n_gamified == 3

    def test_end_before_start_rejected(self, tmp_path):
        path = tmp_path / "rt.csv"
        path.write_text(
            "subject,session,survey,question_index,start_epoch_s,end_epoch_s\n"
            "7,1,gamified,1,100.0,90.0\n"
        )
        with pytest.raises(ValidationError, match="ends before"):
            response_time_analysis(path)

    def test_duplicate_question_rejected(self, tmp_path):
        path = tmp_path / "rt.csv"
        path.write_text(
            "subject,session,survey,question_index,start_epoch_s,end_epoch_s\n"
            "7,1,gamified,1,0.0,5.0\n"
            "7,1,gamified,1,6.0,11.0\n"
        )
        with pytest.raises(ValidationError, match="duplicate"):
            response_time_analysis(path)

    def test_header_and_field_errors(self, tmp_path):
        bad_header = tmp_path / "bad.csv"
        bad_header.write_text("subject,session,survey\n")
        with pytest.raises(ParseError, match="header"):
            response_time_analysis(bad_header)

        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(ParseError, match="empty"):
            response_time_analysis(empty)

        bad_field = tmp_path / "field.csv"
        bad_field.write_text(
            "subject,session,survey,question_index,start_epoch_s,end_epoch_s\n"
            "7,1,gamified,one,0.0,5.0\n"
        )
        with pytest.raises(ParseError, match=":2"):
            response_time_analysis(bad_field)

    def test_header_only_rejected(self, tmp_path):
        path = tmp_path / "rt.csv"
        path.write_text(
            "subject,session,survey,question_index,start_epoch_s,end_epoch_s\n"
        )
        with pytest.raises(ValidationError, match="no timing events"):
            response_time_analysis(path)


class TestCalibrationResultType:
    def test_excluded_flag_matches_threshold(self, hf_model):
        entry = pool_entry(hf_model, run_id=0)
        kept = CalibrationResult(
            subject_id="1", session_id="1", selected=entry,
            calibration_f1=0.71, excluded=False, n_windows=10,
        )
        assert not kept.excluded
        dropped = CalibrationResult(
            subject_id="1", session_id="1", selected=entry,
            calibration_f1=0.70, excluded=True, n_windows=10,
        )
        assert dropped.excluded

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogload.metrics import (
    CorrelationRecord,
    UndefinedCorrelationError,
    pearson,
    regularized_incomplete_beta,
    student_t_two_sided_p,
    weighted_f1,
)

scipy_stats = pytest.importorskip("scipy.stats")
scipy_special = pytest.importorskip("scipy.special")
sklearn_metrics = pytest.importorskip("sklearn.metrics")


class TestWeightedF1:
    def test_hand_worked_case(self):
        # y_true=[0,0,1,1], y_pred=[0,1,1,1]:
        #   class 0: P=1, R=1/2, F1=2/3;  class 1: P=2/3, R=1, F1=4/5
        #   weighted by support 2,2 -> (2/3 + 4/5)/2 = 11/15
        y_true = np.array([0, 0, 1, 1])
        y_pred = np.array([0, 1, 1, 1])
        assert weighted_f1(y_true, y_pred) == pytest.approx(11 / 15)

    def test_perfect_and_inverted(self):
        y = np.array([0, 1, 0, 1, 1])
        assert weighted_f1(y, y) == 1.0
        assert weighted_f1(y, 1 - y) == 0.0

    def test_class_absent_from_truth_still_counts_via_union(self):
        # Prediction invents class 1 -> class 1 has support 0 (weight 0),
        # class 0 recall dips.
        y_true = np.array([0, 0, 0, 0])
        y_pred = np.array([0, 0, 0, 1])
        # class 0: P=1, R=3/4, F1=6/7, weight 1.
        assert weighted_f1(y_true, y_pred) == pytest.approx(6 / 7)

    def test_zero_denominator_class_scores_zero(self):
        y_true = np.array([0, 1])
        y_pred = np.array([0, 0])
        # class 1: P undefined (no predictions) and R=0 -> F1 forced to 0
        expected = 0.5 * (2 * 1 * 0.5 / 1.5) + 0.5 * 0.0
        assert weighted_f1(y_true, y_pred) == pytest.approx(expected)

    def test_exhaustive_small_against_sklearn(self):
        # Every binary labelling of up to 5 items, both vectors.
        for n in range(1, 6):
            for truth in itertools.product((0, 1), repeat=n):
                for pred in itertools.product((0, 1), repeat=n):
                    y_true = np.array(truth)
                    y_pred = np.array(pred)
                    ref = sklearn_metrics.f1_score(
                        y_true, y_pred, average="weighted", zero_division=0
                    )
                    assert weighted_f1(y_true, y_pred) == pytest.approx(
                        ref, abs=1e-12
                    ), (truth, pred)

    def test_random_multiclass_against_sklearn(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(2, 40)
            k = rng.integers(2, 5)
            y_true = rng.integers(0, k, size=n)
            y_pred = rng.integers(0, k, size=n)
            ref = sklearn_metrics.f1_score(
                y_true, y_pred, average="weighted", zero_division=0
            )
            assert weighted_f1(y_true, y_pred) == pytest.approx(ref, abs=1e-12)

    @given(
        labels=st.lists(
            st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40
        ),
        offset=st.integers(-5, 5),
    )
    @settings(max_examples=100, deadline=None)
    def test_relabel_shift_invariance(self, labels, offset):
        y_true = np.array([a for a, _ in labels])
        y_pred = np.array([b for _, b in labels])
        base = weighted_f1(y_true, y_pred)
        shifted = weighted_f1(y_true + offset, y_pred + offset)
        assert shifted == pytest.approx(base, abs=1e-12)
        assert 0.0 <= base <= 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            weighted_f1(np.array([]), np.array([]))
        with pytest.raises(ValueError):
            weighted_f1(np.array([0, 1]), np.array([0]))
        with pytest.raises(ValueError):
            weighted_f1(np.zeros((2, 2)), np.zeros((2, 2)))


class TestRegularizedIncompleteBeta:
    # References frozen from an independent implementation of I_x(a, b).
    @pytest.mark.parametrize(
        "a,b,x,expected",
        [
            (5.0, 0.5, 0.3, 0.000691303386),
            (0.5, 0.5, 0.5, 0.5),
            (10.0, 0.5, 0.9, 0.151640909635),
            (59.0, 0.5, 0.937, 0.005689187193),
        ],
    )
    def test_frozen_references(self, a, b, x, expected):
        assert regularized_incomplete_beta(a, b, x) == pytest.approx(
            expected, abs=1e-10
        )

    def test_bounds(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0

    def test_against_scipy_grid(self):
        for a in (0.5, 1.0, 2.5, 10.0, 60.0, 219.0):
            for b in (0.5, 1.0, 3.0, 25.0):
                for x in (0.001, 0.1, 0.25, 0.5, 0.75, 0.9, 0.999):
                    ref = float(scipy_special.betainc(a, b, x))
                    ours = regularized_incomplete_beta(a, b, x)
                    assert ours == pytest.approx(ref, abs=1e-10), (a, b, x)

    def test_symmetry_identity(self):
        # I_x(a,b) + I_{1-x}(b,a) == 1
        for a, b, x in [(3.0, 7.0, 0.2), (0.5, 12.0, 0.8), (40.0, 0.5, 0.6)]:
            total = regularized_incomplete_beta(
                a, b, x
            ) + regularized_incomplete_beta(b, a, 1.0 - x)
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            regularized_incomplete_beta(0.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, -1.0, 0.5)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, 1.0, 1.5)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, 1.0, -0.1)


class TestStudentT:
    # Classic two-sided critical values: p should land within 1e-3 of the
    # nominal significance level.
    @pytest.mark.parametrize(
        "df,t,alpha",
        [
            (2, 4.303, 0.05),
            (10, 2.228, 0.05),
            (20, 2.086, 0.05),
            (20, 2.845, 0.01),
            (30, 1.697, 0.10),
            (120, 1.980, 0.05),
        ],
    )
    def test_critical_value_table(self, df, t, alpha):
        assert student_t_two_sided_p(t, df) == pytest.approx(alpha, abs=1e-3)

    @pytest.mark.parametrize(
        "df,t,expected",
        [
            (2, 4.303, 0.0499925250),
            (10, 2.228, 0.0500117718),
            (20, 2.086, 0.0499963545),
            (20, 2.845, 0.0100075480),
            (30, 1.697, 0.1000498492),
            (120, 1.980, 0.0499920756),
            (118, 2.80466, 0.0058921105),
        ],
    )
    def test_frozen_exact_values(self, df, t, expected):
        assert student_t_two_sided_p(t, df) == pytest.approx(expected, abs=1e-9)

    def test_against_scipy_sf(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            df = int(rng.integers(1, 300))
            t = float(rng.normal(scale=3.0))
            ref = 2.0 * float(scipy_stats.t.sf(abs(t), df))
            assert student_t_two_sided_p(t, df) == pytest.approx(ref, abs=1e-10)

    def test_symmetry_and_edges(self):
        assert student_t_two_sided_p(0.0, 5) == 1.0
        assert student_t_two_sided_p(2.5, 8) == student_t_two_sided_p(-2.5, 8)
        assert student_t_two_sided_p(1e6, 30) < 1e-12

    def test_invalid_df(self):
        with pytest.raises(ValueError):
            student_t_two_sided_p(1.0, 0)


class TestPearson:
    def test_perfect_positive(self):
        rec = pearson(np.array([1.0, 2.0, 3.0, 4.0]), np.array([2.0, 4.0, 6.0, 8.0]))
        assert rec.r == 1.0
        assert rec.p_value == 0.0
        assert math.isinf(rec.t_stat)
        assert rec.n == 4 and rec.df == 2

    def test_perfect_negative(self):
        rec = pearson(np.array([1.0, 2.0, 3.0]), np.array([3.0, 2.0, 1.0]))
        assert rec.r == -1.0
        assert rec.p_value == 0.0

    def test_known_small_case_vs_scipy(self):
        x = np.array([1.0, 2.0, 4.0, 5.0, 9.0])
        y = np.array([2.0, 1.0, 5.0, 3.0, 8.0])
        rec = pearson(x, y)
        ref = scipy_stats.pearsonr(x, y)
        assert rec.r == pytest.approx(float(ref.statistic), abs=1e-12)
        assert rec.p_value == pytest.approx(float(ref.pvalue), abs=1e-10)

    def test_random_cases_vs_scipy(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(3, 200))
            x = rng.normal(size=n)
            y = 0.3 * x + rng.normal(size=n)
            rec = pearson(x, y)
            ref = scipy_stats.pearsonr(x, y)
            assert rec.r == pytest.approx(float(ref.statistic), abs=1e-10)
            assert rec.p_value == pytest.approx(float(ref.pvalue), abs=1e-8)

    def test_reference_study_scale(self):
        # n=120 paired points with r=0.25 should sit just under p=0.006.
        n = 120
        target_r = 0.25
        t = target_r * math.sqrt((n - 2) / (1 - target_r**2))
        assert t == pytest.approx(2.804757862395017, abs=1e-12)
        p = student_t_two_sided_p(t, n - 2)
        assert p == pytest.approx(0.005890435622749075, abs=1e-9)
        assert p < 0.01

    @given(
        # Integer grid keeps the inputs well conditioned: a shift must not be
        # able to swallow the variation in x outright.
        st.lists(
            st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000)),
            min_size=3,
            max_size=50,
        ),
        st.floats(0.1, 10.0),
        st.floats(-5.0, 5.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_affine_invariance(self, pairs, scale, shift):
        x = np.array([a for a, _ in pairs], dtype=np.float64) * 0.01
        y = np.array([b for _, b in pairs], dtype=np.float64) * 0.01
        try:
            base = pearson(x, y)
        except UndefinedCorrelationError:
            return
        scaled = pearson(scale * x + shift, y)
        assert scaled.r == pytest.approx(base.r, abs=1e-9)
        negated = pearson(-x, y)
        assert negated.r == pytest.approx(-base.r, abs=1e-9)
        assert negated.p_value == pytest.approx(base.p_value, abs=1e-9)
        assert -1.0 <= base.r <= 1.0

    def test_errors(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson(np.array([1.0, 1.0, 1.0]), np.array([1.0, 2.0, 3.0]))
        with pytest.raises(UndefinedCorrelationError):
            pearson(np.array([1.0, 2.0, 3.0]), np.array([5.0, 5.0, 5.0]))
        with pytest.raises(ValueError):
            pearson(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            pearson(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            pearson(np.array([1.0, np.nan, 3.0]), np.array([1.0, 2.0, 3.0]))

    def test_record_fields(self):
        rec = pearson(np.array([1.0, 2.0, 4.0, 3.0]), np.array([1.1, 1.9, 4.2, 3.3]))
        assert isinstance(rec, CorrelationRecord)
        expected_t = rec.r * math.sqrt(rec.df / (1 - rec.r**2))
        assert rec.t_stat == pytest.approx(expected_t)
        assert rec.df == rec.n - 2

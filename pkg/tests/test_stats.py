import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ens2.stats import (
    CorrelationMatrix,
    ScoreTable,
    WilcoxonResult,
    accuracy,
    fractional_ranks,
    logloss,
    pearson_correlation_matrix,
    summarize,
    wilcoxon_signed_rank,
)
from ens2.tabular import PredictionMatrix


class TestAccuracy:
    def test_counts_exact_matches(self):
        assert accuracy(np.array([0, 1, 1, 0]), np.array([0, 1, 0, 0])) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            accuracy(np.array([0]), np.array([0, 1]))

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy(np.array([]), np.array([]))


class TestLogloss:
    def test_uniform_binary_is_log_two(self):
        m = PredictionMatrix(("a", "b"), np.full((4, 2), 0.5))
        assert logloss(m, np.array([0, 1, 0, 1])) == pytest.approx(math.log(2))

    def test_confident_correct_is_near_zero(self):
        m = PredictionMatrix(("a", "b"), np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert logloss(m, np.array([0, 1])) < 1e-9

    def test_rows_must_sum_to_one(self):
        m = PredictionMatrix(("a", "b"), np.array([[0.9, 0.9]]))
        with pytest.raises(ValueError):
            logloss(m, np.array([0]))


class TestFractionalRanks:
    def test_plain_ordering(self):
        ranks = fractional_ranks(np.array([0.7, 0.9, 0.8]))
        assert ranks.tolist() == [3.0, 1.0, 2.0]

    def test_ties_share_mean_rank(self):
        ranks = fractional_ranks(np.array([0.9, 0.8, 0.9, 0.7]))
        assert ranks.tolist() == [1.5, 3.0, 1.5, 4.0]

    def test_all_tied(self):
        ranks = fractional_ranks(np.array([0.5, 0.5, 0.5]))
        assert ranks.tolist() == [2.0, 2.0, 2.0]

    def test_lower_better_flips_order(self):
        ranks = fractional_ranks(np.array([3.0, 1.0, 2.0]), higher_better=False)
        assert ranks.tolist() == [3.0, 1.0, 2.0]

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            fractional_ranks(np.array([]))
        with pytest.raises(ValueError):
            fractional_ranks(np.array([1.0, np.nan]))

    @settings(deadline=None, max_examples=80)
    @given(
        st.lists(
            st.floats(min_value=-100, max_value=100, allow_nan=False),
            min_size=1,
            max_size=30,
        )
    )
    def test_rank_sum_is_invariant_under_ties(self, values):
        ranks = fractional_ranks(np.array(values))
        n = len(values)
        assert ranks.sum() == pytest.approx(n * (n + 1) / 2)
        assert np.all(ranks >= 1.0) and np.all(ranks <= n)


def wilcoxon_by_enumeration(x, y, alpha=0.05):
    """Oracle: exhaustive two-sided signed-rank p over all sign assignments."""
    diffs = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, False, 0, True)
    ranks = fractional_ranks(np.abs(diffs), higher_better=False)
    w_plus = float(ranks[diffs > 0].sum())
    n_ge = n_le = 0
    for signs in itertools.product((0.0, 1.0), repeat=n):
        w = float(np.dot(signs, ranks))
        if w >= w_plus - 1e-12:
            n_ge += 1
        if w <= w_plus + 1e-12:
            n_le += 1
    p = min(1.0, 2.0 * min(n_ge, n_le) / 2**n)
    return WilcoxonResult(w_plus, p, bool(p < alpha), n, True)


class TestWilcoxon:
    def test_five_positive_pairs(self):
        res = wilcoxon_signed_rank(np.array([1.0, 2, 3, 4, 5]), np.zeros(5))
        assert res.w_plus == 15.0
        assert res.p_two_sided == 0.0625
        assert res.exact
        assert not res.reject

    def test_worked_mixed_signs(self):
        res = wilcoxon_signed_rank(np.array([3.0, -1.0, 2.0]), np.zeros(3))
        assert res.w_plus == 5.0
        assert res.p_two_sided == 0.5

    def test_zero_differences_are_discarded(self):
        res = wilcoxon_signed_rank(np.array([1.0, 2, 2, 3]), np.array([1.0, 0, 2, 0]))
        assert res.n_effective == 2

    def test_all_zero_differences(self):
        res = wilcoxon_signed_rank(np.ones(4), np.ones(4))
        assert res == WilcoxonResult(0.0, 1.0, False, 0, True)

    def test_reject_tracks_alpha(self):
        x = np.array([1.0, 2, 3, 4, 5])
        assert not wilcoxon_signed_rank(x, np.zeros(5), alpha=0.05).reject
        assert wilcoxon_signed_rank(x, np.zeros(5), alpha=0.1).reject

    def test_exact_matches_enumeration_with_ties(self):
        x = np.array([2.0, 2.0, -2.0, 5.0, 1.0, -1.0])
        res = wilcoxon_signed_rank(x, np.zeros(6))
        ref = wilcoxon_by_enumeration(x, np.zeros(6))
        assert res.w_plus == ref.w_plus
        assert res.p_two_sided == ref.p_two_sided

    @settings(deadline=None, max_examples=60)
    @given(
        st.lists(
            st.integers(min_value=-6, max_value=6), min_size=1, max_size=11
        ),
        st.integers(min_value=0, max_value=1000),
    )
    def test_exact_p_agrees_with_enumeration(self, diffs, _salt):
        x = np.array(diffs, dtype=float)
        y = np.zeros(len(diffs))
        res = wilcoxon_signed_rank(x, y)
        ref = wilcoxon_by_enumeration(x, y)
        assert res.exact and ref.exact
        assert res.n_effective == ref.n_effective
        assert res.w_plus == ref.w_plus
        assert res.p_two_sided == ref.p_two_sided

    def test_large_n_uses_normal_approximation(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0.3, 1.0, size=30)
        y = np.zeros(30)
        res = wilcoxon_signed_rank(x, y)
        assert not res.exact
        assert 0.0 < res.p_two_sided <= 1.0
        swapped = wilcoxon_signed_rank(y, x)
        assert swapped.p_two_sided == pytest.approx(res.p_two_sided)

    def test_normal_branch_detects_strong_shift(self):
        x = np.arange(1.0, 31.0)
        res = wilcoxon_signed_rank(x, np.zeros(30))
        assert not res.exact
        assert res.p_two_sided < 1e-4
        assert res.reject

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank(np.ones(3), np.ones(2))

    def test_empty_input(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank(np.array([]), np.array([]))


def make_table(scores, failed=None, systems=None):
    scores = np.asarray(scores, dtype=float)
    s, d, e = scores.shape
    if failed is None:
        failed = np.zeros(scores.shape, dtype=bool)
    return ScoreTable(
        systems=tuple(systems or (f"sys{i}" for i in range(s))),
        datasets=tuple(f"data{i}" for i in range(d)),
        seeds=tuple(range(e)),
        scores=scores,
        failed=np.asarray(failed),
    )


class TestScoreTable:
    def test_csv_round_trip_is_byte_identical(self):
        failed = np.zeros((2, 2, 2), dtype=bool)
        failed[1, 0, 1] = True
        scores = np.array(
            [[[0.9, 0.8], [0.7, 0.6]], [[0.5, np.nan], [0.4, 0.3]]]
        )
        table = make_table(scores, failed)
        blob = table.to_csv_bytes()
        again = ScoreTable.from_csv_bytes(blob)
        assert again.to_csv_bytes() == blob
        assert again.systems == table.systems
        np.testing.assert_array_equal(again.failed, table.failed)

    def test_failed_cells_need_no_score(self):
        table = make_table(
            np.array([[[np.nan]], [[0.5]]]),
            np.array([[[True]], [[False]]]),
        )
        assert table.failed[0, 0, 0]

    def test_rejects_out_of_range_accuracy(self):
        with pytest.raises(ValueError):
            make_table(np.array([[[1.5]]]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            ScoreTable(
                systems=("a",),
                datasets=("d",),
                seeds=(0, 1),
                scores=np.zeros((1, 1, 1)),
                failed=np.zeros((1, 1, 1), dtype=bool),
            )


class TestSummarize:
    def test_hand_worked_example(self):
        scores = np.array([[[0.9, 0.8]], [[0.8, np.nan]]])
        failed = np.array([[[False, False]], [[False, True]]])
        a, b = summarize(make_table(scores, failed, systems=("a", "b")))
        assert a.avg_accuracy == pytest.approx(0.85)
        assert a.avg_rank == 1.0
        assert a.first_place_count == 2
        assert a.n_failures == 0
        assert b.avg_accuracy == pytest.approx(0.8)
        assert b.avg_rank == 2.0
        assert b.first_place_count == 0
        assert b.n_failures == 1

    def test_tied_cell_splits_first_place(self):
        scores = np.array([[[0.5]], [[0.5]]])
        a, b = summarize(make_table(scores))
        assert a.avg_rank == b.avg_rank == 1.5
        assert a.first_place_count == b.first_place_count == 1

    def test_cell_with_no_survivors_is_an_error(self):
        scores = np.array([[[np.nan]], [[np.nan]]])
        failed = np.ones((2, 1, 1), dtype=bool)
        with pytest.raises(ValueError):
            summarize(make_table(scores, failed))


class TestPearson:
    def test_perfectly_correlated_pair(self):
        scores = np.array([[[0.1, 0.2], [0.3, 0.4]], [[0.2, 0.4], [0.6, 0.8]]])
        corr = pearson_correlation_matrix(make_table(scores))
        assert isinstance(corr, CorrelationMatrix)
        assert corr.defined[0, 1]
        assert corr.values[0, 1] == pytest.approx(1.0)
        assert corr.values[1, 0] == pytest.approx(1.0)
        assert corr.values[0, 0] == 1.0

    def test_anticorrelated_pair(self):
        scores = np.array([[[0.1, 0.2], [0.3, 0.4]], [[0.9, 0.7], [0.5, 0.3]]])
        corr = pearson_correlation_matrix(make_table(scores))
        assert corr.values[0, 1] == pytest.approx(-1.0)

    def test_zero_variance_side_is_undefined(self):
        scores = np.array([[[0.1, 0.2]], [[0.5, 0.5]]])
        corr = pearson_correlation_matrix(make_table(scores))
        assert not corr.defined[0, 1]
        assert np.isnan(corr.values[0, 1])

    def test_too_few_shared_cells_is_undefined(self):
        scores = np.array([[[0.1, 0.2]], [[0.5, np.nan]]])
        failed = np.array([[[False, False]], [[False, True]]])
        corr = pearson_correlation_matrix(make_table(scores, failed))
        assert not corr.defined[0, 1]
        assert corr.defined[1, 1]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffmonitor.similarity import (Domain, MetricKind, cosine, degenerate_items, metric_items,
                                    multi_axis_score, pairwise_scores, pearson, rmse,
                                    score_matrix)

vec = arrays(np.float64, st.integers(2, 20), elements=st.floats(-10, 10))


class TestScalar:
    def test_cosine_basics(self):
        assert cosine([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert cosine([1, 0], [0, 1]) == 0.0
        assert cosine([1, 2], [-1, -2]) == pytest.approx(-1.0)

    def test_cosine_zero_vector(self):
        with pytest.raises(ValueError, match="undefined cosine"):
            cosine([0, 0], [1, 2])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            cosine([1, 2], [1, 2, 3])

    def test_pearson(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        with pytest.raises(ValueError, match="undefined correlation"):
            pearson([1, 1, 1], [1, 2, 3])

    def test_rmse(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
        assert rmse([1, 2], [1, 2]) == 0.0

    @given(x=vec, s=st.floats(0.1, 10))
    @settings(max_examples=50)
    def test_cosine_scale_invariant(self, x, s):
        if np.linalg.norm(x) < 1e-6:
            return
        assert cosine(x, s * x) == pytest.approx(1.0, abs=1e-9)

    @given(x=vec, data=st.data())
    @settings(max_examples=50)
    def test_pearson_affine_invariant(self, x, data):
        if np.ptp(x) < 1e-3:
            return
        a = data.draw(st.floats(0.5, 5))
        b = data.draw(st.floats(-5, 5))
        assert pearson(x, a * x + b) == pytest.approx(1.0, abs=1e-9)


class TestMultiAxis:
    def test_mean_of_axes(self):
        a = np.array([[1.0, 0.0], [1.0, 1.0]])
        b = np.array([[0.0, 1.0], [1.0, 1.0]])
        assert multi_axis_score(a, b, MetricKind.COSINE_TIME) == pytest.approx(0.5)

    def test_axis_mismatch(self):
        with pytest.raises(ValueError, match="axis-count"):
            multi_axis_score(np.ones((2, 3)), np.ones((3, 3)), MetricKind.RMSE)

    def test_gak_requires_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            multi_axis_score(np.ones((1, 3)), np.ones((1, 3)), MetricKind.COPT_GAK)


class TestPairwise:
    @pytest.mark.parametrize("metric", [MetricKind.COSINE_TIME, MetricKind.PEARSON,
                                        MetricKind.RMSE, MetricKind.COPT_GAK])
    def test_matches_scalar_loop(self, metric, rng):
        A, B = rng.standard_normal((3, 2, 9)), rng.standard_normal((4, 2, 9))
        mat = pairwise_scores(A, B, metric, sigma=0.8)
        ref = [[multi_axis_score(a, b, metric, sigma=0.8) for b in B] for a in A]
        assert np.allclose(mat, ref, rtol=1e-12, atol=1e-14)

    def test_degenerate_input_named(self):
        A = np.ones((2, 1, 4))
        A[1] = 0
        with pytest.raises(ValueError, match=r"A\[1\]"):
            pairwise_scores(A, np.ones((1, 1, 4)), MetricKind.COSINE_PSD)

    def test_degenerate_mask(self):
        X = np.array([[[1.0, 2.0]], [[0.0, 0.0]], [[3.0, 3.0]]])
        assert degenerate_items(X, MetricKind.COSINE_TIME).tolist() == [False, True, False]
        assert degenerate_items(X, MetricKind.PEARSON).tolist() == [False, True, True]
        assert not degenerate_items(X, MetricKind.RMSE).any()

    def test_score_matrix_domain(self, rng):
        A = rng.random((2, 1, 5))
        sm = score_matrix(A, A, MetricKind.COSINE_PSD)
        assert sm.domain is Domain.PSD
        assert np.allclose(np.diag(sm.scores), 1.0)

    @given(seed=st.integers(0, 10_000), metric=st.sampled_from(
        [MetricKind.COSINE_TIME, MetricKind.PEARSON, MetricKind.RMSE]))
    @settings(max_examples=30, deadline=None)
    def test_ranges(self, seed, metric):
        g = np.random.default_rng(seed)
        mat = pairwise_scores(g.standard_normal((4, 3, 7)), g.standard_normal((5, 3, 7)), metric)
        if metric is MetricKind.RMSE:
            assert np.all(mat >= 0)
        else:
            assert np.all((-1 <= mat) & (mat <= 1))


def test_metric_items_domains(rng):
    w = rng.standard_normal((3, 2, 160))
    assert metric_items(w, MetricKind.COSINE_TIME) is not None
    assert metric_items(w, MetricKind.COSINE_TIME).shape == (3, 2, 160)
    assert metric_items(w, MetricKind.COSINE_PSD).shape == (3, 2, 33)
    assert metric_items(w, MetricKind.COPT_GAK).shape == (3, 2, 33)


def test_higher_is_better():
    assert MetricKind.COSINE_PSD.higher_is_better
    assert not MetricKind.RMSE.higher_is_better

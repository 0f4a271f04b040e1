import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oraclead.structure import (
    DissimilarityMatrix,
    StableLatentStructure,
    aggregate_sls,
    deviation_matrix,
    dissimilarity_batch,
    dissimilarity_variance,
    pairwise_dissimilarity,
    read_matrix_csv,
    write_matrix_csv,
)


def _ref(C, metric):
    N, d = len(C), len(C[0])
    out = [[0.0] * N for _ in range(N)]
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            a, b = C[i], C[j]
            if metric == "l2":
                out[i][j] = math.sqrt(sum((a[k] - b[k]) ** 2 for k in range(d)))
            elif metric == "l1":
                out[i][j] = sum(abs(a[k] - b[k]) for k in range(d))
            else:
                na = math.sqrt(sum(x * x for x in a))
                nb = math.sqrt(sum(x * x for x in b))
                out[i][j] = 1.0 if min(na, nb) < 1e-12 else 1 - sum(a[k] * b[k] for k in range(d)) / (na * nb)
    return np.array(out)


class TestDissimilarity:
    def test_three_four_five(self):
        D = pairwise_dissimilarity([[0.0, 0.0], [3.0, 4.0]], "l2").values
        np.testing.assert_array_equal(D, [[0, 5], [5, 0]])
        assert pairwise_dissimilarity([[0.0, 0.0], [3.0, 4.0]], "l1").values[0, 1] == 7.0

    def test_cosine_examples(self):
        D = pairwise_dissimilarity([[1.0, 0.0], [0.0, 2.0], [-3.0, 0.0]], "cosine").values
        np.testing.assert_allclose(D, [[0, 1, 2], [1, 0, 1], [2, 1, 0]], atol=1e-15)

    def test_cosine_zero_norm(self):
        D = pairwise_dissimilarity([[0.0, 0.0], [1.0, 1.0]], "cosine").values
        assert D[0, 1] == 1.0 and D[0, 0] == 0.0

    @pytest.mark.parametrize("metric", ["l2", "l1", "cosine"])
    def test_against_double_loop(self, metric):
        C = np.random.default_rng(0).standard_normal((6, 5))
        np.testing.assert_allclose(pairwise_dissimilarity(C, metric).values, _ref(C.tolist(), metric), atol=1e-12)

    def test_single_variable(self):
        assert pairwise_dissimilarity([[1.0, 2.0]]).values.shape == (1, 1)

    def test_unknown_metric(self):
        with pytest.raises(ValueError, match="unknown metric"):
            pairwise_dissimilarity(np.ones((2, 2)), "cheb")

    def test_batch_matches_single(self):
        C = np.random.default_rng(1).standard_normal((4, 5, 3))
        D = dissimilarity_batch(torch.as_tensor(C), "l2").numpy()
        for k in range(4):
            np.testing.assert_allclose(D[k], pairwise_dissimilarity(C[k]).values, atol=1e-15)

    @settings(max_examples=80, deadline=None)
    @given(arrays(np.float64, (5, 3), elements=st.floats(-10, 10)), st.sampled_from(["l2", "l1", "cosine"]))
    def test_permutation_invariance(self, C, metric):
        perm = np.array([3, 1, 4, 0, 2])
        D = pairwise_dissimilarity(C, metric).values
        Dp = pairwise_dissimilarity(C[perm], metric).values
        np.testing.assert_allclose(Dp, D[np.ix_(perm, perm)], atol=1e-12)

    @settings(max_examples=80, deadline=None)
    @given(arrays(np.float64, (5, 4), elements=st.floats(-100, 100)))
    def test_l2_triangle(self, C):
        D = pairwise_dissimilarity(C, "l2").values
        for i in range(5):
            for j in range(5):
                for k in range(5):
                    assert D[i, j] <= D[i, k] + D[k, j] + 1e-9


class TestSls:
    def test_mean(self):
        mats = [np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[0.0, 3.0], [3.0, 0.0]])]
        sls = aggregate_sls(mats, epoch=2)
        np.testing.assert_array_equal(sls.values, [[0, 2], [2, 0]])
        assert (sls.n_windows, sls.epoch) == (2, 2)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_sls([])

    def test_inconsistent_shapes(self):
        with pytest.raises(ValueError, match="inconsistent"):
            aggregate_sls([np.zeros((2, 2)), np.zeros((3, 3))])

    def test_single_window(self):
        m = np.array([[0.0, 4.0], [4.0, 0.0]])
        np.testing.assert_array_equal(aggregate_sls([m]).values, m)

    def test_square_check(self):
        with pytest.raises(ValueError, match="square"):
            StableLatentStructure(np.zeros((2, 3)), 1, 1)


class TestDeviation:
    def test_example(self):
        dev = deviation_matrix([[0, 1], [1, 0]], [[0, 3], [3, 0]], timestep=12)
        np.testing.assert_array_equal(dev.values, [[0, 2], [2, 0]])
        assert dev.timestep == 12

    def test_self_deviation_is_zero(self):
        m = pairwise_dissimilarity(np.random.default_rng(2).standard_normal((4, 3))).values
        np.testing.assert_array_equal(deviation_matrix(m, m).values, 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            deviation_matrix(np.zeros((2, 2)), np.zeros((3, 3)))


class TestVariance:
    def test_two_matrices(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        b = np.array([[0.0, 3.0], [3.0, 0.0]])
        assert dissimilarity_variance([a, b]) == 1.0

    def test_single_variable(self):
        assert dissimilarity_variance([np.zeros((1, 1))]) == 0.0

    def test_oracle(self):
        mats = [pairwise_dissimilarity(c).values for c in np.random.default_rng(3).standard_normal((7, 4, 2))]
        vals = [m[i, j] for m in mats for i in range(4) for j in range(4) if i != j]
        mu = sum(vals) / len(vals)
        assert abs(dissimilarity_variance(mats) - sum((v - mu) ** 2 for v in vals) / len(vals)) < 1e-12


def test_matrix_csv_roundtrip(tmp_path):
    m = pairwise_dissimilarity(np.random.default_rng(4).standard_normal((3, 5))).values
    write_matrix_csv(m, ["a", "b", "c"], tmp_path / "m.csv")
    names, back = read_matrix_csv(tmp_path / "m.csv")
    assert names == ["a", "b", "c"]
    np.testing.assert_array_equal(back, m)


def test_dissimilarity_matrix_wrapper():
    assert DissimilarityMatrix(np.zeros((3, 3))).n == 3

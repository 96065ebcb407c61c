"""Kernel tests: distances, medians, quantiles, small-rank PCA, buffers."""

import numpy as np
import pytest

from fedspectral.linalg import (
    BufferMatrix,
    DimensionMismatchError,
    InsufficientBufferError,
    SubspaceModel,
    as_update_matrix,
    coordinate_median,
    nearest_rank_quantile,
    orthogonal_energy,
    pairwise_sq_distances,
    pca_topk,
)
from fedspectral.rng import make_rng


class TestPairwiseSqDistances:
    def test_three_four_five_triangle(self):
        d2 = pairwise_sq_distances([np.array([0.0, 0.0]), np.array([3.0, 4.0])])
        assert d2.tolist() == [[0.0, 25.0], [25.0, 0.0]]

    def test_identical_vectors_all_zero(self):
        vecs = [np.ones(4)] * 5
        assert np.all(pairwise_sq_distances(vecs) == 0.0)

    def test_matches_double_loop_oracle(self):
        rng = make_rng(7)
        vecs = [rng.standard_normal(3) for _ in range(5)]
        d2 = pairwise_sq_distances(vecs)
        for i in range(5):
            for j in range(5):
                expected = sum((vecs[i][k] - vecs[j][k]) ** 2 for k in range(3))
                if i == j:
                    expected = 0.0
                assert d2[i, j] == expected

    def test_symmetry_and_nonnegativity(self):
        rng = make_rng(11)
        x = rng.standard_normal((6, 4))
        d2 = pairwise_sq_distances(x)
        assert np.array_equal(d2, d2.T)
        assert np.all(d2 >= 0)
        assert np.all(np.diag(d2) == 0)

    def test_dimension_mismatch_names_indices(self):
        with pytest.raises(DimensionMismatchError) as err:
            pairwise_sq_distances([np.zeros(2), np.zeros(3)])
        assert err.value.indices == (0, 1)

    def test_needs_two_vectors(self):
        with pytest.raises(ValueError):
            pairwise_sq_distances([np.zeros(2)])


class TestCoordinateMedian:
    def test_hand_example(self):
        vecs = [np.array([1.0, 2.0, 3.0]), np.array([2.0, 3.0, 4.0]), np.array([100.0, -100.0, 3.0])]
        assert coordinate_median(vecs).tolist() == [2.0, 2.0, 3.0]

    def test_single_vector_identity(self):
        v = np.array([4.0, -1.0])
        assert coordinate_median([v]).tolist() == v.tolist()

    @pytest.mark.parametrize("n", [7, 8])
    def test_matches_sort_oracle(self, n):
        rng = make_rng(3 + n)
        vecs = [rng.standard_normal(5) for _ in range(n)]
        med = coordinate_median(vecs)
        for c in range(5):
            col = sorted(v[c] for v in vecs)
            if n % 2:
                expected = col[n // 2]
            else:
                expected = 0.5 * (col[n // 2 - 1] + col[n // 2])
            assert med[c] == pytest.approx(expected, rel=0, abs=0)

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            coordinate_median([])


class TestNearestRankQuantile:
    def test_one_to_fifty_at_098(self):
        assert nearest_rank_quantile(np.arange(1, 51, dtype=float), 0.98) == 49.0

    def test_q_one_is_max(self):
        rng = make_rng(5)
        vals = rng.standard_normal(17)
        assert nearest_rank_quantile(vals, 1.0) == vals.max()

    def test_q_zero_is_min(self):
        vals = np.array([3.0, -1.0, 2.0])
        assert nearest_rank_quantile(vals, 0.0) == -1.0

    def test_singleton(self):
        assert nearest_rank_quantile([5.0], 0.5) == 5.0

    def test_errors(self):
        with pytest.raises(ValueError):
            nearest_rank_quantile([], 0.5)
        with pytest.raises(ValueError):
            nearest_rank_quantile([1.0], 1.5)
        with pytest.raises(ValueError):
            nearest_rank_quantile([1.0], -0.1)

    def test_monotone_in_q_and_member_of_input(self):
        rng = make_rng(9)
        vals = rng.standard_normal(23)
        qs = np.linspace(0, 1, 21)
        results = [nearest_rank_quantile(vals, q) for q in qs]
        assert all(a <= b for a, b in zip(results, results[1:]))
        assert all(r in vals for r in results)


class TestPcaTopk:
    def test_collinear_rows_give_axis(self):
        rows = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        centered = rows - rows.mean(axis=0)
        basis = pca_topk(centered, 1)
        assert basis.shape == (2, 1)
        np.testing.assert_allclose(basis[:, 0], [1.0, 0.0], atol=1e-12)

    def test_exact_span_reconstructs(self):
        rng = make_rng(13)
        coeffs = rng.standard_normal((6, 2))
        directions = rng.standard_normal((2, 5))
        rows = coeffs @ directions
        rows -= rows.mean(axis=0)
        basis = pca_topk(rows, 2)
        recon = (rows @ basis) @ basis.T
        np.testing.assert_allclose(recon, rows, atol=1e-10)

    def test_captured_variance_matches_dense_eig_oracle(self):
        rng = make_rng(17)
        rows = rng.standard_normal((6, 4))
        rows -= rows.mean(axis=0)
        basis = pca_topk(rows, 2)
        captured = float(np.sum((rows @ basis) ** 2))
        cov_eigvals = np.linalg.eigvalsh(rows.T @ rows)
        expected = float(np.sort(cov_eigvals)[-2:].sum())
        assert captured == pytest.approx(expected, rel=1e-8)

    def test_orthonormal_columns(self):
        rng = make_rng(19)
        rows = rng.standard_normal((8, 6))
        rows -= rows.mean(axis=0)
        basis = pca_topk(rows, 4)
        np.testing.assert_allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-10)

    def test_rank_clamped_to_rows_minus_one(self):
        rng = make_rng(23)
        rows = rng.standard_normal((3, 10))
        rows -= rows.mean(axis=0)
        basis = pca_topk(rows, 7)
        assert basis.shape[1] <= 2

    def test_sign_convention_and_determinism(self):
        rng = make_rng(29)
        rows = rng.standard_normal((7, 5))
        rows -= rows.mean(axis=0)
        b1 = pca_topk(rows, 3)
        b2 = pca_topk(rows.copy(), 3)
        assert np.array_equal(b1, b2)
        for j in range(b1.shape[1]):
            col = b1[:, j]
            assert col[np.argmax(np.abs(col))] > 0

    def test_insufficient_rows(self):
        with pytest.raises(InsufficientBufferError):
            pca_topk(np.zeros((1, 4)), 1)

    def test_zero_variance_returns_no_columns(self):
        basis = pca_topk(np.zeros((4, 3)), 2)
        assert basis.shape == (3, 0)


def _random_subspace(rng, d, r):
    q, _ = np.linalg.qr(rng.standard_normal((d, r)))
    return SubspaceModel(basis=q, center=np.zeros(d), tau=0.0)


class TestOrthogonalEnergy:
    def test_axis_example(self):
        sub = SubspaceModel(basis=np.array([[1.0], [0.0]]), center=np.zeros(2), tau=0.0)
        assert orthogonal_energy(np.array([3.0, 4.0]), sub) == pytest.approx(4.0)

    def test_in_span_is_zero(self):
        rng = make_rng(31)
        sub = _random_subspace(rng, 6, 2)
        v = sub.basis @ rng.standard_normal(2)
        assert orthogonal_energy(v, sub) <= 1e-9 * np.linalg.norm(v)

    def test_matches_projector_oracle(self):
        rng = make_rng(37)
        sub = _random_subspace(rng, 8, 3)
        v = rng.standard_normal(8)
        projector = np.eye(8) - sub.basis @ sub.basis.T
        assert orthogonal_energy(v, sub) == pytest.approx(
            float(np.linalg.norm(projector @ v)), rel=1e-12
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_pythagorean_identity(self, seed):
        rng = make_rng(1000 + seed)
        sub = _random_subspace(rng, 10, 4)
        v = rng.standard_normal(10)
        rho = orthogonal_energy(v, sub)
        lhs = float(np.sum((sub.basis.T @ v) ** 2)) + rho**2
        assert lhs == pytest.approx(float(v @ v), rel=1e-6)

    def test_dimension_mismatch(self):
        sub = SubspaceModel(basis=np.eye(3)[:, :1], center=np.zeros(3), tau=0.0)
        with pytest.raises(DimensionMismatchError):
            orthogonal_energy(np.zeros(4), sub)


class TestSubspaceModel:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            SubspaceModel(basis=np.ones((3, 2)), center=np.zeros(3), tau=0.0)

    def test_rejects_negative_tau(self):
        with pytest.raises(ValueError):
            SubspaceModel(basis=np.eye(3)[:, :1], center=np.zeros(3), tau=-1.0)

    def test_rank_defaults_to_columns(self):
        sub = SubspaceModel(basis=np.eye(4)[:, :2], center=np.zeros(4), tau=0.5)
        assert sub.rank == 2 and sub.dim == 4


class TestBufferMatrix:
    def test_fifo_eviction(self):
        buf = BufferMatrix(capacity=3)
        for i in range(5):
            buf.append(np.array([float(i), 0.0]))
        assert len(buf) == 3
        assert buf.rows()[:, 0].tolist() == [2.0, 3.0, 4.0]

    def test_dimension_enforced(self):
        buf = BufferMatrix(capacity=2)
        buf.append(np.zeros(3))
        with pytest.raises(DimensionMismatchError):
            buf.append(np.zeros(4))

    def test_rejects_nonfinite(self):
        buf = BufferMatrix(capacity=2)
        with pytest.raises(ValueError):
            buf.append(np.array([np.nan, 1.0]))

    def test_clear(self):
        buf = BufferMatrix(capacity=2)
        buf.append(np.zeros(2))
        buf.clear()
        assert len(buf) == 0


class TestBoundaryValidation:
    def test_rejects_nan_updates(self):
        with pytest.raises(ValueError):
            as_update_matrix([np.array([1.0, np.inf])])

    def test_rejects_matrix_input_rows(self):
        with pytest.raises(ValueError):
            as_update_matrix([np.zeros((2, 2))])

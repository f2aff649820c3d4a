"""Top-k right-singular-vector oracles.

The implementation goes through the small row-space Gram matrix; the
oracle here goes through the d x d column-space eigendecomposition, so
agreement checks two independent routes.
"""

from __future__ import annotations

import numpy as np
import pytest

from fedfairprompt.svd import top_right_singular_vectors


def test_axis_aligned_rows_frozen_values():
    m = np.array([[3.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    basis = top_right_singular_vectors(m, k=2)
    np.testing.assert_allclose(basis.vectors, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(basis.singular_values, [3.0, 2.0], rtol=1e-12)
    assert basis.completed == 0


def test_duplicated_unit_row_gives_that_direction():
    u = np.array([0.6, 0.8])
    basis = top_right_singular_vectors(np.stack([u, u]), k=1)
    np.testing.assert_allclose(basis.vectors[0], u, atol=1e-12)
    np.testing.assert_allclose(basis.singular_values[0], np.sqrt(2.0), rtol=1e-12)


def test_sign_convention_first_nonzero_positive():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.standard_normal((4, 9))
        basis = top_right_singular_vectors(m, k=3)
        for row in basis.vectors:
            lead = row[np.abs(row) > 1e-12][0]
            assert lead > 0.0


def test_matches_columnspace_eigendecomposition_oracle():
    rng = np.random.default_rng(1)
    for trial in range(10):
        rows = int(rng.integers(2, 9))
        d = int(rng.integers(rows, 24))
        m = rng.standard_normal((rows, d))
        k = int(rng.integers(1, rows + 1))
        basis = top_right_singular_vectors(m, k=k)

        evals, evecs = np.linalg.eigh(m.T @ m)
        order = np.argsort(evals)[::-1]
        for i in range(k):
            ref = evecs[:, order[i]]
            got = basis.vectors[i]
            # Same direction up to sign.
            assert min(np.linalg.norm(got - ref), np.linalg.norm(got + ref)) < 1e-8
            assert abs(basis.singular_values[i] - np.sqrt(max(evals[order[i]], 0.0))) < 1e-8

        # Reconstruction error equals the oracle's at matching k.
        proj = m @ basis.vectors.T @ basis.vectors
        vref = evecs[:, order[:k]].T
        proj_ref = m @ vref.T @ vref
        assert abs(np.linalg.norm(m - proj) - np.linalg.norm(m - proj_ref)) < 1e-8


def test_rows_are_orthonormal():
    rng = np.random.default_rng(2)
    m = rng.standard_normal((6, 15))
    basis = top_right_singular_vectors(m, k=6)
    gram = basis.vectors @ basis.vectors.T
    np.testing.assert_allclose(gram, np.eye(6), atol=1e-9)


def test_singular_values_descend():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((5, 12))
    basis = top_right_singular_vectors(m, k=5)
    assert np.all(np.diff(basis.singular_values) <= 1e-12)


def test_rank_deficient_input_completes_orthonormally_and_flags():
    m = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])  # rank 1
    basis = top_right_singular_vectors(m, k=2)
    assert basis.completed == 1
    np.testing.assert_allclose(basis.vectors[0], [1.0, 0.0, 0.0], atol=1e-12)
    assert basis.singular_values[1] == 0.0
    gram = basis.vectors @ basis.vectors.T
    np.testing.assert_allclose(gram, np.eye(2), atol=1e-12)
    # Completed row is orthogonal to the data row space.
    assert abs(basis.vectors[1] @ m[0]) < 1e-12


def test_input_validation():
    with pytest.raises(ValueError):
        top_right_singular_vectors(np.ones((17, 4)), k=1)
    with pytest.raises(ValueError):
        top_right_singular_vectors(np.ones((3, 4)), k=4)
    with pytest.raises(ValueError):
        top_right_singular_vectors(np.ones((3, 4)), k=0)
    with pytest.raises(FloatingPointError):
        top_right_singular_vectors(np.array([[np.nan, 1.0]]), k=1)

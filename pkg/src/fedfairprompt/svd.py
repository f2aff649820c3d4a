"""Top-k right singular vectors of a short, wide matrix.

Built for stacks of at most a few (<= 16) embedding rows: the
decomposition goes through the small row-space Gram matrix, whose
symmetric eigendecomposition is cheap and deterministic. Rows of the
result are ordered by descending singular value and sign-fixed so the
first nonzero coordinate of each vector is positive, which makes the
basis reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["TopKBasis", "top_right_singular_vectors"]

_MAX_ROWS = 16
_SIGN_EPS = 1e-12


@dataclass(frozen=True)
class TopKBasis:
    """Orthonormal rows spanning the top singular directions.

    ``completed`` counts trailing rows that were filled by deterministic
    orthonormal completion because ``k`` exceeded the numerical rank;
    their singular values are reported as 0.
    """

    vectors: np.ndarray  # (k, d), orthonormal rows
    singular_values: np.ndarray  # (k,), descending
    completed: int


def _fix_sign(v: np.ndarray) -> np.ndarray:
    for x in v:
        if abs(x) > _SIGN_EPS:
            return -v if x < 0.0 else v
    return v


def top_right_singular_vectors(m: np.ndarray, k: int, rank_tol: float = 1e-10) -> TopKBasis:
    """Return the top-``k`` right singular vectors of ``m`` as rows.

    ``m`` has one row per embedding (at most 16) and ``d`` columns.
    Requires ``1 <= k <= min(rows, d)``. When ``k`` exceeds the
    numerical rank, the remaining rows are completed to an orthonormal
    set from canonical basis vectors and flagged via ``completed``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"need a 2-D matrix, got shape {m.shape}")
    rows, d = m.shape
    if rows == 0 or rows > _MAX_ROWS:
        raise ValueError(f"row count {rows} outside supported range 1..{_MAX_ROWS}")
    if not np.isfinite(m).all():
        raise FloatingPointError("non-finite entries in input matrix")
    if not 1 <= k <= min(rows, d):
        raise ValueError(f"k={k} outside 1..min(rows={rows}, d={d})")

    gram = m @ m.T
    eigvals, eigvecs = np.linalg.eigh(gram)  # ascending
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    sigma = np.sqrt(np.clip(eigvals, 0.0, None))

    cutoff = rank_tol * (sigma[0] if sigma[0] > 0.0 else 1.0)
    vectors = np.zeros((k, d))
    values = np.zeros(k)
    filled = 0
    for i in range(k):
        if sigma[i] <= cutoff:
            break
        vectors[filled] = _fix_sign((m.T @ eigvecs[:, i]) / sigma[i])
        values[filled] = sigma[i]
        filled += 1

    completed = k - filled
    if completed:
        # Deterministic completion: Gram-Schmidt canonical basis vectors
        # against everything accepted so far.
        for j in range(d):
            if filled == k:
                break
            cand = np.zeros(d)
            cand[j] = 1.0
            cand -= vectors[:filled].T @ (vectors[:filled] @ cand)
            norm = np.linalg.norm(cand)
            if norm > 0.5:
                vectors[filled] = _fix_sign(cand / norm)
                filled += 1
        if filled != k:
            raise RuntimeError("orthonormal completion failed")

    return TopKBasis(vectors=vectors, singular_values=values, completed=completed)

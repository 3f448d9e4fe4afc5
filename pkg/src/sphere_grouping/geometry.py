"""Unit-sphere embeddings and the calibrated cosine similarity.

Embeddings are plain ``float64`` arrays of shape ``(D, N)``, one column per
pixel. Similarity matrices are ``(N, N)``. Gradients ("gradient buffers") have
the shape of whatever they differentiate.
"""

import numpy as np

from .errors import NotNormalized, ShapeMismatch, ZeroColumn

ZERO_NORM = 1e-12
UNIT_TOL = 1e-6
# reference tolerances for invariant checks and oracle comparisons
INVARIANT_ATOL = 1e-9
FD_STEP = 1e-6
FD_RTOL = 1e-5
FD_RTOL_COMPOSITE = 1e-4


def as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeMismatch(f"expected a non-empty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ShapeMismatch("matrix has non-finite entries")
    return M


def _column_norms(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=0)
    bad = np.flatnonzero(norms <= ZERO_NORM)
    if bad.size:
        raise ZeroColumn(int(bad[0]), float(norms[bad[0]]))
    return norms


def normalize_columns(M) -> np.ndarray:
    """Scale every column of ``M`` to unit Euclidean length."""
    M = as_matrix(M)
    return M / _column_norms(M)


def normalize_columns_backward(M, dOut) -> np.ndarray:
    """Pull ``dOut`` back through ``M -> normalize_columns(M)``.

    Per column this is ``(I - u u^T) g / |m|`` with ``u = m / |m|``.
    """
    M = as_matrix(M)
    dOut = np.asarray(dOut, dtype=np.float64)
    if dOut.ndim == 1:
        dOut = dOut[:, None]
    if dOut.shape != M.shape:
        raise ShapeMismatch(f"gradient shape {dOut.shape} does not match {M.shape}")
    norms = _column_norms(M)
    U = M / norms
    radial = np.sum(U * dOut, axis=0)
    return (dOut - U * radial) / norms


def check_unit_columns(X, tol: float = UNIT_TOL) -> np.ndarray:
    X = as_matrix(X)
    norms = np.linalg.norm(X, axis=0)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        raise NotNormalized(int(bad[0]), float(norms[bad[0]]))
    return X


def calibrated_similarity(X) -> np.ndarray:
    """Pairwise ``s_ij = (1 + x_i . x_j) / 2``, mapped into [0, 1]."""
    X = check_unit_columns(X)
    G = X.T @ X
    return 0.5 + 0.25 * (G + G.T)


def calibrated_similarity_backward(X, dS) -> np.ndarray:
    X = as_matrix(X)
    dS = np.asarray(dS, dtype=np.float64)
    n = X.shape[1]
    if dS.shape != (n, n):
        raise ShapeMismatch(f"dS has shape {dS.shape}, expected {(n, n)}")
    return 0.5 * (X @ (dS + dS.T))


def inner_product_backward(X, dS) -> np.ndarray:
    """Gradient of ``<dS, X^T X>`` with respect to ``X``."""
    X = as_matrix(X)
    dS = np.asarray(dS, dtype=np.float64)
    n = X.shape[1]
    if dS.shape != (n, n):
        raise ShapeMismatch(f"dS has shape {dS.shape}, expected {(n, n)}")
    return X @ (dS + dS.T)


def random_unit_columns(rng: np.random.Generator, d: int, n: int) -> np.ndarray:
    return normalize_columns(rng.standard_normal((d, n)))

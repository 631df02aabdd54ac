"""Dense float64 linear algebra helpers.

Conventions used across the package: vectors are 1-D C-contiguous float64
arrays, matrices are 2-D row-major float64 arrays, and symmetric positive
definite (SPD) matrices are plain matrices that satisfy :func:`assert_spd`.
Everything is dense; feature dimensions stay in the low hundreds.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def as_vector(v):
    """Coerce to a 1-D float64 array, validating shape."""
    out = np.ascontiguousarray(v, dtype=np.float64)
    if out.ndim != 1 or out.shape[0] == 0:
        raise ValueError(f"expected a nonempty 1-D vector, got shape {out.shape}")
    return out


def as_matrix(m):
    """Coerce to a 2-D row-major float64 array, validating shape."""
    out = np.ascontiguousarray(m, dtype=np.float64)
    if out.ndim != 2 or 0 in out.shape:
        raise ValueError(f"expected a nonempty 2-D matrix, got shape {out.shape}")
    return out


def matvec(m, v):
    """Matrix-vector product with an explicit dimension check."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ValueError(
            f"dimension mismatch: matrix is {m.shape[0]}x{m.shape[1]}, vector has length {v.shape[0]}"
        )
    return m @ v


def outer(u, v):
    """Outer product u v'."""
    return np.outer(as_vector(u), as_vector(v))


def sherman_morrison_downdate(b, h):
    """Rank-1 downdate of an SPD gain matrix via the matrix inversion lemma.

    Returns ``b - (b h h' b) / (1 + h' b h)``, which equals
    ``inverse(inverse(b) + h h')``. The result is mirror-averaged to stay
    exactly symmetric and remains positive definite because the denominator
    exceeds 1 for SPD ``b``.
    """
    b = as_matrix(b)
    h = as_vector(h)
    if b.shape[0] != b.shape[1] or b.shape[0] != h.shape[0]:
        raise ValueError(f"shape mismatch: b is {b.shape}, h has length {h.shape[0]}")
    v = b @ h
    denom = 1.0 + float(h @ v)
    if not np.isfinite(denom):
        raise FloatingPointError(f"non-finite denominator {denom} in rank-1 downdate")
    out = b - np.outer(v, v) / denom
    out = (out + out.T) * 0.5
    if not np.all(np.isfinite(out)):
        i, j = np.argwhere(~np.isfinite(out))[0]
        raise FloatingPointError(
            f"non-finite entry at ({i}, {j}) after rank-1 downdate: {out[i, j]}"
        )
    return out


def solve_spd(a, rhs):
    """Solve ``a x = rhs`` for SPD ``a`` via Cholesky.

    Raises ``np.linalg.LinAlgError`` when the factorization fails, which
    signals that ``a`` is not positive definite (conditioning breakdown).
    """
    a = as_matrix(a)
    rhs = np.asarray(rhs, dtype=np.float64)
    try:
        factor = cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"SPD solve failed: matrix of size {a.shape[0]} is not positive definite ({exc})"
        ) from exc
    return cho_solve(factor, rhs, check_finite=False)


def assert_spd(m, tol=1e-12):
    """True iff ``m`` is symmetric within ``tol`` (relative to its largest
    entry) and a Cholesky factorization succeeds with positive pivots."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    if not np.all(np.isfinite(m)):
        return False
    scale = max(float(np.max(np.abs(m))), np.finfo(np.float64).tiny)
    if float(np.max(np.abs(m - m.T))) > tol * scale:
        return False
    try:
        chol = np.linalg.cholesky((m + m.T) * 0.5)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(chol) > 0.0))

"""Shared dense linear-algebra helpers: jittered Cholesky and its reverse-mode rule."""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError

# Jitter escalation: try the matrix as given, then mean(diag) scaled by these factors.
_JITTER_FACTORS = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


def chol_with_jitter(A):
    """Lower Cholesky factor of a symmetric PSD matrix, inflating the diagonal on failure.

    Returns (L, jitter) where jitter is the diagonal inflation actually applied
    (0.0 when the factorization succeeded untouched). Raises NumericalError with
    the attempted jitter levels once the escalation ladder is exhausted.
    """
    A = np.asarray(A, dtype=float)
    if not np.isfinite(A).all():
        raise NumericalError(
            "Cholesky factorization failed: matrix has non-finite entries",
            jitter_levels=[],
        )
    base = float(np.mean(np.diag(A))) if A.shape[0] else 1.0
    if not np.isfinite(base) or base <= 0.0:
        base = 1.0
    tried = []
    eye = np.eye(A.shape[0])
    for factor in (0.0,) + _JITTER_FACTORS:
        jitter = factor * base
        tried.append(jitter)
        try:
            L = np.linalg.cholesky(A + jitter * eye)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        "Cholesky factorization failed after jitter escalation "
        f"(levels tried: {tried})",
        jitter_levels=tried,
    )


def tri_solve(L, B, trans=False):
    """Solve L x = B (or L^T x = B when trans) for lower-triangular L."""
    return solve_triangular(L, B, lower=True, trans=1 if trans else 0, check_finite=False)


def chol_solve(L, B):
    """Solve (L L^T) x = B given the lower factor L."""
    return tri_solve(L, tri_solve(L, B), trans=True)


def _phi(M):
    # Lower triangle with the diagonal halved; the projection used by the
    # Cholesky reverse-mode rule.
    out = np.tril(M)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def chol_rev(L, Lbar):
    """Adjoint of A -> chol(A): propagate Lbar back to a symmetric Abar.

    Valid for symmetric perturbations of A, which is the only way A is ever
    produced here (Gram matrices).
    """
    P = _phi(L.T @ Lbar)
    # Abar = L^{-T} P L^{-1}, symmetrized.
    tmp = tri_solve(L, P, trans=True)
    Abar = tri_solve(L, tmp.T, trans=True).T
    return 0.5 * (Abar + Abar.T)

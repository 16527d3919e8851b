"""Dense symmetric eigendecomposition, polar projection and optimal assignment.

Everything here is a pure function of its inputs; results are freshly
allocated arrays safe to share across threads.
"""

from typing import NamedTuple

import numpy as np

from .errors import DegenerateInput, InvalidInput
from .kernels import hungarian_min


class SymEig(NamedTuple):
    """Eigenvalues sorted descending and the matching orthonormal eigenvectors.

    ``eigenvectors[:, k]`` is the unit eigenvector of ``eigenvalues[k]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_square(A, name="matrix"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f"{name} has non-finite entries")
    return A


def sym_eig(A):
    """Spectral decomposition of a symmetric matrix, eigenvalues descending.

    Rejects matrices that are asymmetric beyond 1e-12 relative.
    """
    A = _as_square(A)
    norm = np.linalg.norm(A)
    if np.linalg.norm(A - A.T) > 1e-12 * (1.0 + norm):
        raise InvalidInput("matrix is not symmetric within 1e-12 relative")
    w, U = np.linalg.eigh((A + A.T) / 2.0)
    order = np.argsort(w)[::-1]
    return SymEig(np.ascontiguousarray(w[order]), np.ascontiguousarray(U[:, order]))


def polar_orthogonal(A, rcond=1e-10):
    """Closest orthogonal matrix to A in Frobenius norm (maximizes tr(W^T A)).

    Full O(d): reflections are allowed.  Raises DegenerateInput when the
    smallest singular value is below ``rcond`` times the largest, because the
    polar factor is then not determined by the data.
    """
    A = _as_square(A)
    U, s, Vt = np.linalg.svd(A)
    if s[0] <= 0.0 or s[-1] <= rcond * s[0]:
        raise DegenerateInput(
            f"rank-deficient input to polar projection (sigma_min/sigma_max = "
            f"{0.0 if s[0] == 0.0 else s[-1] / s[0]:.3e})")
    return U @ Vt


def max_assignment(C, tie_tol=None):
    """Permutation sigma maximizing sum_i C[i, sigma(i)].

    Returns the lexicographically smallest permutation among the (near-)optimal
    ones: after an O(n^3) Hungarian pass fixes the optimal value, each row in
    turn is pinned to the smallest column that still admits a completion within
    ``tie_tol`` of the optimum.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidInput(f"assignment matrix must be square, got {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidInput("assignment matrix has non-finite entries")
    n = C.shape[0]
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    if tie_tol is None:
        tie_tol = 1e-9 * (1.0 + float(np.abs(C).max())) * n

    best = float(C[np.arange(n), hungarian_min(-C)].sum())

    perm = np.empty(n, dtype=np.int64)
    avail = list(range(n))
    fixed = 0.0
    for i in range(n):
        for pos, c in enumerate(avail):
            rest_cols = avail[:pos] + avail[pos + 1:]
            if rest_cols:
                sub = C[np.ix_(range(i + 1, n), rest_cols)]
                rest = float(sub[np.arange(n - i - 1), hungarian_min(-sub)].sum())
            else:
                rest = 0.0
            if fixed + C[i, c] + rest >= best - tie_tol:
                perm[i] = c
                fixed += C[i, c]
                avail.pop(pos)
                break
        else:  # pragma: no cover - defensive; the Hungarian optimum always completes
            raise InvalidInput("assignment refinement failed to complete")
    return perm

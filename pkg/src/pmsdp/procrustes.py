"""The rigid matching objective, its classical subproblems and the factorial
oracle used to verify everything else in this package.

A permutation is an int array ``perm`` with ``X[perm[j], j] = 1``, i.e. point
``j`` of P is matched to point ``perm[j]`` of Q and ``(Q X)[:, j] =
Q[:, perm[j]]``.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, RepeatedPoints, TooLarge
from .kernels import permutation_objectives
from .linalg import max_assignment, polar_orthogonal
from .pointcloud import check_repeated, pair_scale_sq

DEFAULT_ORACLE_NMAX = 8


@dataclass(frozen=True)
class RigidMatch:
    """An orthogonal matrix, a permutation and the matching objective value."""

    R: np.ndarray
    perm: np.ndarray
    objective: float

    def __post_init__(self):
        object.__setattr__(self, "R", np.array(self.R, dtype=np.float64))
        object.__setattr__(self, "perm", np.array(self.perm, dtype=np.int64))
        self.R.setflags(write=False)
        self.perm.setflags(write=False)

    def permutation_matrix(self):
        n = len(self.perm)
        X = np.zeros((n, n))
        X[self.perm, np.arange(n)] = 1.0
        return X


def _check_pair(P, Q):
    if P.d != Q.d or P.n != Q.n:
        raise InvalidInput(
            f"cloud shapes disagree: {P.points.shape} vs {Q.points.shape}")


def _check_perm(perm, n):
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or sorted(perm.tolist()) != list(range(n)):
        raise InvalidInput(f"not a permutation of {n} items: {perm}")
    return perm


def pm_objective(P, Q, R, perm):
    """|| R P - Q X ||_F^2 for the given rotation and permutation."""
    _check_pair(P, Q)
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (P.d, P.d):
        raise InvalidInput(f"rotation shape {R.shape} does not match d={P.d}")
    perm = _check_perm(perm, P.n)
    diff = R @ P.points - Q.points[:, perm]
    return float(np.sum(diff * diff))


def optimal_rotation(P, Q, perm):
    """argmin over O(d) of the matching objective with the permutation fixed:
    the polar factor of Q X P^T.  Reflections allowed."""
    _check_pair(P, Q)
    perm = _check_perm(perm, P.n)
    return polar_orthogonal(Q.points[:, perm] @ P.points.T)


def recover_permutation(P, Q, R0, repeat_tol=1e-9):
    """Best permutation for a known rotation, via optimal assignment on the
    correlation scores <R0 P_j, Q_l>.

    When R0 P is close to a relabeling of Q this maximizer is the unique
    doubly stochastic solution, provided Q has no repeated points.
    """
    _check_pair(P, Q)
    if check_repeated(Q, repeat_tol):
        raise RepeatedPoints("target cloud has (near-)duplicate points")
    R0 = np.asarray(R0, dtype=np.float64)
    scores = (R0 @ P.points).T @ Q.points  # [j, l] = <R0 P_j, Q_l>
    return max_assignment(scores)


def _polar_factor_loose(B):
    # Any maximizer of tr(R B^T) over O(d); well-defined even when B is
    # singular (the oracle only needs the value and one attaining R).
    U, _, Vt = np.linalg.svd(B)
    return U @ Vt


def brute_force_pm(P, Q, n_max=DEFAULT_ORACLE_NMAX):
    """Exact minimum of the matching problem by full permutation enumeration.

    Returns (dist_sq, matches): the optimal value and every minimizer whose
    objective is within 1e-8 * scale^2 of it, sorted by permutation.
    """
    _check_pair(P, Q)
    n = P.n
    if n > n_max:
        raise TooLarge(f"{n}! permutations exceed the oracle cap n_max={n_max}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    objs = permutation_objectives(P.points, Q.points, perms)
    tol = 1e-8 * max(pair_scale_sq(P, Q), 1e-300)
    best = float(objs.min())
    matches = []
    for k in np.flatnonzero(objs <= best + tol):
        perm = perms[k]
        R = _polar_factor_loose(Q.points[:, perm] @ P.points.T)
        obj = pm_objective(P, Q, R, perm)
        matches.append(RigidMatch(R, perm, obj))
    dist_sq = min(m.objective for m in matches)
    keep = [m for m in matches if m.objective <= dist_sq + tol]
    # de-duplicate: identical permutation and R within 1e-6 Frobenius
    unique = []
    for m in sorted(keep, key=lambda m: tuple(m.perm)):
        if not any(tuple(u.perm) == tuple(m.perm)
                   and np.linalg.norm(u.R - m.R) <= 1e-6 for u in unique):
            unique.append(m)
    return dist_sq, tuple(unique)

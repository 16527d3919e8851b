"""Point clouds, principal alignment and the shape conditions.

A cloud is a d x n matrix whose columns are points.  The conditions checked
here (simple spectrum of P P^T, no repeated points, sign-matrix symmetry
group, faithful points) are exactly the hypotheses under which the moment
relaxation recovers rigid matches.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, TooManyAxes
from .linalg import max_assignment, sym_eig

MAX_AXES = 20
DEFAULT_GAP_TOL = 1e-6
DEFAULT_REPEAT_TOL = 1e-9
_SPECTRUM_FLOOR = 1e-12


@dataclass(frozen=True)
class PointCloud:
    """Immutable d x n cloud with its centralized Frobenius norm cached.

    ``scale`` is the Frobenius norm of the centered matrix and is the unit all
    relative tolerances in this package are expressed against.
    """

    points: np.ndarray
    scale: float = field(init=False)

    def __post_init__(self):
        P = np.asarray(self.points, dtype=np.float64)
        if P.ndim != 2:
            raise InvalidInput(f"points must be a d x n matrix, got ndim={P.ndim}")
        d, n = P.shape
        if d < 1:
            raise InvalidInput("point dimension must be at least 1")
        if d > MAX_AXES:
            raise TooManyAxes(f"dimension {d} exceeds the cap of {MAX_AXES}")
        if n < d:
            raise InvalidInput(f"need at least d={d} points, got n={n}")
        if not np.all(np.isfinite(P)):
            raise InvalidInput("points contain non-finite values")
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "points", P)
        centered = P - P.mean(axis=1, keepdims=True)
        object.__setattr__(self, "scale", float(np.linalg.norm(centered)))

    @property
    def d(self):
        return self.points.shape[0]

    @property
    def n(self):
        return self.points.shape[1]

    @property
    def centroid(self):
        return self.points.mean(axis=1)


@dataclass(frozen=True)
class SignedDiag:
    """A diagonal +-1 matrix together with the permutation witnessing it as a
    symmetry (``R P = P X`` with ``X[witness[j], j] = 1``) and the residual of
    that equation."""

    signs: tuple
    witness: tuple
    residual: float

    def matrix(self):
        return np.diag(np.asarray(self.signs, dtype=np.float64))


@dataclass(frozen=True)
class SymmetryGroup:
    elements: tuple  # of SignedDiag, identity first, sorted by sign pattern

    def __len__(self):
        return len(self.elements)

    def sign_set(self):
        return {e.signs for e in self.elements}

    def __contains__(self, signs):
        return tuple(signs) in self.sign_set()


def pair_scale_sq(P, Q):
    """Squared scale of an instance pair; the unit for objective tolerances."""
    return 0.5 * (P.scale ** 2 + Q.scale ** 2)


def centralize(cloud):
    """Shift the centroid to the origin (row sums become zero)."""
    return PointCloud(cloud.points - cloud.points.mean(axis=1, keepdims=True))


def principal_align(cloud, gap_tol=DEFAULT_GAP_TOL):
    """Rotate a centered cloud onto its principal axes.

    Returns (U, aligned, spectrum) with aligned = U P, aligned aligned^T
    diagonal with descending diagonal.  Eigenvector signs are fixed so the
    largest-magnitude entry of each axis is positive, making the output
    deterministic.  Eigenvalue multiplicity is not an error here; callers ask
    check_simple_spectrum.
    """
    P = cloud.points
    eig = sym_eig(P @ P.T)
    U = eig.eigenvectors.T.copy()
    for k in range(U.shape[0]):
        j = int(np.argmax(np.abs(U[k])))
        if U[k, j] < 0:
            U[k] = -U[k]
    spectrum = eig.eigenvalues.copy()
    spectrum[np.abs(spectrum) < _SPECTRUM_FLOOR * max(1.0, abs(spectrum[0]))] = 0.0
    return U, PointCloud(U @ P), spectrum


def check_simple_spectrum(spectrum, gap_tol=DEFAULT_GAP_TOL):
    """True iff consecutive eigenvalue gaps all exceed gap_tol relative to the
    largest eigenvalue."""
    lam = np.asarray(spectrum, dtype=np.float64)
    if lam.size <= 1:
        return True
    ref = max(float(lam[0]), _SPECTRUM_FLOOR)
    return bool(np.all(lam[:-1] - lam[1:] > gap_tol * ref))


def check_repeated(cloud, tol=DEFAULT_REPEAT_TOL):
    """True iff some pair of points coincides within tol * scale."""
    P = cloud.points
    if cloud.n < 2:
        return False
    diff = P[:, :, None] - P[:, None, :]
    dist = np.sqrt((diff ** 2).sum(axis=0))
    iu = np.triu_indices(cloud.n, k=1)
    return bool(dist[iu].min() <= tol * max(cloud.scale, 1e-300))


def _sign_vectors(d):
    # identity first, then lexicographic in (+1 before -1)
    return [np.array(s, dtype=np.float64)
            for s in itertools.product((1.0, -1.0), repeat=d)]


def _witness_for(signs, P, scale, tol):
    """Best permutation matching diag(signs) P to P; None when the residual
    exceeds tol * scale."""
    RP = signs[:, None] * P
    # score[j, l] = -|| (RP)_j - P_l ||^2 ; optimal assignment avoids the false
    # negatives a greedy nearest-neighbor search produces near the tolerance.
    sq = ((RP[:, :, None] - P[:, None, :]) ** 2).sum(axis=0)
    perm = max_assignment(-sq)
    residual = float(np.sqrt(max(sq[np.arange(P.shape[1]), perm].sum(), 0.0)))
    if residual <= tol * scale:
        return perm, residual
    return None, residual


def symmetry_group(cloud, tol=1e-6):
    """All sign matrices R in {-1,+1}^d that map a principal-aligned cloud onto
    itself up to relabeling, each with its witness permutation."""
    if cloud.d > MAX_AXES:
        raise TooManyAxes(f"2^{cloud.d} sign matrices refused")
    P = cloud.points
    scale = max(cloud.scale, 1e-300)
    elements = []
    for signs in _sign_vectors(cloud.d):
        perm, residual = _witness_for(signs, P, scale, tol)
        if perm is not None:
            elements.append(SignedDiag(tuple(float(s) for s in signs),
                                       tuple(int(p) for p in perm), residual))
    group = SymmetryGroup(tuple(elements))
    signs_set = group.sign_set()
    if tuple([1.0] * cloud.d) not in signs_set:
        raise InvalidInput("symmetry search lost the identity; tolerance too tight")
    for a in signs_set:
        for b in signs_set:
            prod = tuple(x * y for x, y in zip(a, b))
            if prod not in signs_set:
                raise InvalidInput(
                    f"symmetry set not closed under composition: {a} * {b}")
    return group


def faithful_points(cloud, group, tol=1e-6):
    """Indices j such that every sign matrix sending point j into the cloud is
    an actual symmetry.  Empty means the cloud is unfaithful."""
    if cloud.d > MAX_AXES:
        raise TooManyAxes(f"2^{cloud.d} sign matrices refused")
    P = cloud.points
    scale = max(cloud.scale, 1e-300)
    members = group.sign_set()
    faithful = []
    for j in range(cloud.n):
        ok = True
        for signs in _sign_vectors(cloud.d):
            rp = signs * P[:, j]
            dmin = np.sqrt(((P - rp[:, None]) ** 2).sum(axis=0).min())
            if dmin <= tol * scale and tuple(float(s) for s in signs) not in members:
                ok = False
                break
        if ok:
            faithful.append(j)
    return np.array(faithful, dtype=np.int64)

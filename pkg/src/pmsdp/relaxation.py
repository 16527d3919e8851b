"""Degree-2 moment relaxation of rigid point-cloud matching.

Unknowns are the moments of a linear functional mu on polynomials of degree
<= 2 in the entries of (R, X).  Two equivalent encodings are provided:

* ``reduced``: one PSD block of size 1 + d^2 + n per permutation column,
  indexed [1 | vec(R) | X_j], with explicit equality ties keeping the shared
  rotation moments identical across blocks.  Preferred when n >> d^2.
* ``full``: a single PSD moment matrix of size 1 + d^2 + n^2 over
  [1 | vec(R) | vec(X)].  No ties; preferred when d^2 is comparable to n
  (e.g. clouds coming from the graph-matching reduction), where the tie count
  would dominate the constraint system.

Both forms share the linear constraints: mu[1] = 1, row/column sums of mu[X],
mu[X_j X_j^T] = diag(mu[X_j]), and mu[R R^T] = mu[R^T R] = I.  Redundant rows
(one row sum, one orthogonality trace) are dropped so the interior-point
Schur complement stays nonsingular.

vec(R) is row-major: entry R[i, a] sits at index i*d + a.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput, RelaxationError
from .pointcloud import check_simple_spectrum, pair_scale_sq
from .sdp import (BlockTerm, Constraint, SdpProblem, SdpStatus, SolverOptions,
                  solve, sym_term)


@dataclass(frozen=True)
class RelaxOptions:
    solver: SolverOptions = SolverOptions()
    form: str = "auto"          # "auto" | "reduced" | "full"
    exact_tol: float = 1e-6     # objective <= exact_tol * scale^2  <=>  "exact"
    gap_tol_spectrum: float = 1e-6


@dataclass(frozen=True)
class PmEncoding:
    """Index layout and scaling of a built relaxation."""

    d: int
    n: int
    form: str
    s_sq: float                 # common rescale factor applied to both clouds
    counts: dict
    pm_objective: tuple         # dense per-block matrices of the matching objective

    @property
    def r_offset(self):
        return 1

    @property
    def x_offset(self):
        return 1 + self.d * self.d


@dataclass(frozen=True)
class MomentSolution:
    """Moment functional restricted to degree <= 2, in per-column block view.

    ``blocks[j]`` is mu[(1, x_j)(1, x_j)^T] with x_j = (vec R, X_j) regardless
    of which encoding was solved.  ``objective`` is mu[||R P - Q X||^2] in the
    original (unscaled) units; ``d_sdp = sqrt(max(objective, 0))``.
    """

    blocks: tuple
    mu_r: np.ndarray
    mu_x: np.ndarray
    objective: float
    d_sdp: float
    scale_sq: float
    form: str
    warnings: tuple
    sdp: object  # SdpSolution diagnostics

    @property
    def d(self):
        return self.mu_r.shape[0]

    @property
    def n(self):
        return self.mu_x.shape[0]


def _rescale_factor(P, Q):
    denom = float(np.sum(P.points ** 2) + np.sum(Q.points ** 2))
    if denom <= 0.0:
        raise InvalidInput("cannot rescale all-zero clouds")
    return 2.0 * P.n / denom


def _e1(block, i, j, v):
    return sym_term(block, [i], [j], [v])


def _orthogonality_constraints(d, block):
    """mu[R R^T] = I and mu[R^T R] = I on the shared rotation moments; the
    final diagonal of R^T R duplicates the trace identity and is dropped."""
    cons = []
    for i in range(d):
        for k in range(i, d):
            pos = [(1 + i * d + a, 1 + k * d + a) for a in range(d)]
            if i == k:
                term = sym_term(block, [p for p, _ in pos], [q for _, q in pos],
                                [1.0] * d)
            else:
                term = sym_term(block, [p for p, _ in pos], [q for _, q in pos],
                                [0.5] * d)
            cons.append(Constraint((term,), 1.0 if i == k else 0.0))
    for a in range(d):
        for b in range(a, d):
            if a == b == d - 1:
                continue
            pos = [(1 + i * d + a, 1 + i * d + b) for i in range(d)]
            if a == b:
                term = sym_term(block, [p for p, _ in pos], [q for _, q in pos],
                                [1.0] * d)
            else:
                term = sym_term(block, [p for p, _ in pos], [q for _, q in pos],
                                [0.5] * d)
            cons.append(Constraint((term,), 1.0 if a == b else 0.0))
    return cons


def _objective_block(Ps, Qs, cols):
    """Dense matching-objective matrix for one PSD block covering permutation
    columns `cols` (one column in the reduced form, all in the full form)."""
    d, n = Ps.shape
    nx = len(cols) * n
    D = 1 + d * d + nx
    C = np.zeros((D, D))
    e = 1 + d * d
    QtQ = Qs.T @ Qs
    for slot, j in enumerate(cols):
        outer = np.outer(Ps[:, j], Ps[:, j])
        for i in range(d):
            r0 = 1 + i * d
            C[r0:r0 + d, r0:r0 + d] += outer
        x0 = e + slot * n
        for i in range(d):
            r0 = 1 + i * d
            cross = -np.outer(Ps[:, j], Qs[i, :])
            C[r0:r0 + d, x0:x0 + n] += cross
            C[x0:x0 + n, r0:r0 + d] += cross.T
        C[x0:x0 + n, x0:x0 + n] += QtQ
    return C


def build_pm_sdp(P, Q, form="reduced"):
    """Assemble the relaxation as an SdpProblem; returns (problem, encoding)."""
    if P.d != Q.d or P.n != Q.n:
        raise InvalidInput(
            f"cloud shapes disagree: {P.points.shape} vs {Q.points.shape}")
    if form not in ("reduced", "full"):
        raise InvalidInput(f"unknown form {form!r}")
    d, n = P.d, P.n
    s_sq = _rescale_factor(P, Q)
    s = math.sqrt(s_sq)
    Ps = s * P.points
    Qs = s * Q.points
    e = 1 + d * d
    counts = {}
    cons = []

    if form == "reduced":
        dims = tuple([e + n] * n)
        x_at = lambda j, l: (j, e + l)  # noqa: E731 - (block, index) of X[l, j]
        objective = tuple(_objective_block(Ps, Qs, [j]) for j in range(n))
    else:
        dims = (e + n * n,)
        x_at = lambda j, l: (0, e + j * n + l)  # noqa: E731
        objective = (_objective_block(Ps, Qs, list(range(n))),)

    # normalization mu[1] = 1, once per PSD block
    for b in range(len(dims)):
        cons.append(Constraint((_e1(b, 0, 0, 1.0),), 1.0))
    counts["normalization"] = len(dims)

    # column sums: 1^T mu[X_j] = 1
    for j in range(n):
        bs = [x_at(j, l) for l in range(n)]
        cons.append(Constraint(
            (sym_term(bs[0][0], [0] * n, [p for _, p in bs], [0.5] * n),), 1.0))
    counts["column_sums"] = n

    # row sums: sum_j mu[X_{l j}] = 1; the last row is implied and dropped
    for l in range(n - 1):
        terms = []
        for j in range(n):
            b, p = x_at(j, l)
            terms.append(_e1(b, 0, p, 0.5))
        cons.append(Constraint(tuple(terms), 1.0))
    counts["row_sums"] = n - 1

    # mu[X_j X_j^T] = diag(mu[X_j]), upper triangle
    for j in range(n):
        for l in range(n):
            bl, pl = x_at(j, l)
            for mdx in range(l, n):
                _, pm = x_at(j, mdx)
                if l == mdx:
                    term = sym_term(bl, [pl, 0], [pl, pl], [1.0, -0.5])
                    cons.append(Constraint((term,), 0.0))
                else:
                    cons.append(Constraint((_e1(bl, pl, pm, 0.5),), 0.0))
    counts["column_diag"] = n * (n * (n + 1) // 2)

    orth = _orthogonality_constraints(d, 0)
    cons.extend(orth)
    counts["orthogonality"] = len(orth)

    if form == "reduced":
        ties = []
        for j in range(1, n):
            for p in range(e):
                for q in range(p, e):
                    if p == 0 and q == 0:
                        continue
                    v = 1.0 if p == q else 0.5
                    ties.append(Constraint(
                        (_e1(j, p, q, v), _e1(0, p, q, -v)), 0.0))
        cons.extend(ties)
        counts["shared_moment_ties"] = len(ties)
    else:
        counts["shared_moment_ties"] = 0

    prob = SdpProblem(dims, objective, tuple(cons))
    enc = PmEncoding(d, n, form, s_sq, counts, objective)
    return prob, enc


def tie_count(d, n):
    t = 1 + d * d
    return (n - 1) * (t * (t + 1) // 2 - 1)


def full_constraint_count(d, n):
    return 1 + n + (n - 1) + n * (n * (n + 1) // 2) + d * (d + 1) - 1


def choose_form(d, n, form="auto"):
    """The reduced form unless its tie constraints alone would outnumber the
    full form's entire constraint system (d^2 large versus n)."""
    if form != "auto":
        return form
    return "full" if tie_count(d, n) > full_constraint_count(d, n) else "reduced"


def _extract_blocks(sol, enc):
    d, n, e = enc.d, enc.n, 1 + enc.d * enc.d
    if enc.form == "reduced":
        return tuple(np.array(B) for B in sol.blocks)
    big = sol.blocks[0]
    out = []
    for j in range(n):
        idx = np.concatenate([np.arange(e), e + j * n + np.arange(n)])
        out.append(np.array(big[np.ix_(idx, idx)]))
    return tuple(out)


def _moment_from_solution(sol, enc, P, Q, warnings, objective_scaled=None):
    d, n, e = enc.d, enc.n, 1 + enc.d * enc.d
    blocks = _extract_blocks(sol, enc)
    mu_r = np.empty((d, d))
    for i in range(d):
        for a in range(d):
            mu_r[i, a] = blocks[0][0, 1 + i * d + a]
    mu_x = np.empty((n, n))
    for j in range(n):
        mu_x[:, j] = blocks[j][0, e:e + n]
    if objective_scaled is None:
        objective_scaled = sol.primal_obj
    obj = float(objective_scaled) / enc.s_sq
    return MomentSolution(
        blocks=blocks,
        mu_r=mu_r,
        mu_x=mu_x,
        objective=obj,
        d_sdp=math.sqrt(max(obj, 0.0)),
        scale_sq=pair_scale_sq(P, Q),
        form=enc.form,
        warnings=tuple(warnings),
        sdp=sol,
    )


def _spectrum_warnings(P, Q, gap_tol):
    out = []
    for name, cloud in (("source", P), ("target", Q)):
        lam = np.linalg.eigvalsh(cloud.points @ cloud.points.T)[::-1]
        if not check_simple_spectrum(lam, gap_tol):
            out.append(f"{name} cloud spectrum has (near-)multiple eigenvalues; "
                       "exact recovery is not guaranteed")
    return out


def solve_pm_sdp(P, Q, opts=None):
    """Solve the relaxation; raises RelaxationError unless the solver reports
    an optimal status."""
    opts = opts or RelaxOptions()
    form = choose_form(P.d, P.n, opts.form)
    prob, enc = build_pm_sdp(P, Q, form)
    sol = solve(prob, opts.solver)
    if sol.status is not SdpStatus.OPTIMAL:
        raise RelaxationError(
            f"relaxation solve failed with status {sol.status.value} "
            f"(feas={sol.feas_residual:.2e}, gap={sol.gap:.2e})", sol)
    warnings = _spectrum_warnings(P, Q, opts.gap_tol_spectrum)
    return _moment_from_solution(sol, enc, P, Q, warnings)


def build_direction_problem(P, Q, W, eps, form):
    """Relaxation with objective `maximize tr(W mu[R])` and the matching
    objective demoted to the inequality  mu[||RP - QX||^2] <= eps  (eps in
    unscaled units)."""
    base, enc = build_pm_sdp(P, Q, form)
    d = enc.d
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (d, d):
        raise InvalidInput(f"direction shape {W.shape}, want {(d, d)}")
    objective = []
    for b, dim in enumerate(base.block_dims):
        C = np.zeros((dim, dim))
        if b == 0:
            for i in range(d):
                for a in range(d):
                    C[0, 1 + a * d + i] = -W[i, a] / 2.0
            C = C + C.T
        objective.append(C)
    terms = []
    for b, Cb in enumerate(enc.pm_objective):
        r, c = np.nonzero(Cb)
        if len(r):
            terms.append(BlockTerm(b, r.astype(np.int64), c.astype(np.int64),
                                   Cb[r, c]))
    pm_cap = Constraint(tuple(terms), float(eps) * enc.s_sq)
    prob = SdpProblem(base.block_dims, tuple(objective),
                      base.eq_constraints, (pm_cap,))
    return prob, enc


def solve_direction(P, Q, W, eps, opts=None):
    """Maximize tr(W mu[R]) over the near-optimal slice of the feasible set."""
    opts = opts or RelaxOptions()
    form = choose_form(P.d, P.n, opts.form)
    prob, enc = build_direction_problem(P, Q, W, eps, form)
    sol = solve(prob, opts.solver)
    if sol.status is not SdpStatus.OPTIMAL:
        raise RelaxationError(
            f"direction solve failed with status {sol.status.value} "
            f"(feas={sol.feas_residual:.2e})", sol)
    flat = np.concatenate([np.asarray(B).ravel() for B in sol.blocks])
    cflat = np.concatenate([np.asarray(C).ravel() for C in enc.pm_objective])
    warnings = _spectrum_warnings(P, Q, opts.gap_tol_spectrum)
    return _moment_from_solution(sol, enc, P, Q, warnings,
                                 objective_scaled=float(flat @ cflat))


def _perm_matrix(perm, n):
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or sorted(perm.tolist()) != list(range(n)):
        raise InvalidInput(f"not a permutation of {n} items: {perm}")
    X = np.zeros((n, n))
    X[perm, np.arange(n)] = 1.0
    return X


def transform_moment(ms, R0, R1, X0, X1):
    """Push a moment solution through the instance symmetry
    (P, Q) -> (R0 P X0, R1 Q X1): the new functional evaluates polynomials at
    (R1 R R0^T, X1^T X X0).  X0, X1 are permutation arrays."""
    d, n = ms.d, ms.n
    R0 = np.asarray(R0, dtype=np.float64)
    R1 = np.asarray(R1, dtype=np.float64)
    p0 = np.asarray(X0, dtype=np.int64)
    X0m = _perm_matrix(p0, n)
    X1m = _perm_matrix(X1, n)
    D = 1 + d * d + n
    T = np.zeros((D, D))
    T[0, 0] = 1.0
    T[1:1 + d * d, 1:1 + d * d] = np.kron(R1, R0)  # row-major vec of R1 R R0^T
    T[1 + d * d:, 1 + d * d:] = X1m.T
    new_blocks = tuple(T @ ms.blocks[p0[j]] @ T.T for j in range(n))
    return replace(
        ms,
        blocks=new_blocks,
        mu_r=R1 @ ms.mu_r @ R0.T,
        mu_x=X1m.T @ ms.mu_x @ X0m,
    )

"""Primal-dual interior-point solver for block-diagonal semidefinite programs.

Problem form (after slack conversion of inequalities):

    minimize    sum_b <C_b, X_b>
    subject to  sum_b <A_{i,b}, X_b> = rhs_i,   i = 1..m
                X_b  PSD for every block b

The method is the standard infeasible-start Nesterov-Todd predictor-corrector:
per iteration one Cholesky/SVD scaling pass per block, one Schur complement
M[i,j] = sum_b tr(A_i W_b A_j W_b) (assembled by a sparse kernel), and two
back-solves sharing the factorization.  Constraint matrices are stored sparse;
problems here have many single-entry constraints.
"""

import enum
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import InvalidInput


class SdpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class BlockTerm:
    """Sparse symmetric coefficients of one constraint inside one block.

    Off-diagonal entries must appear in both (r, c) and (c, r) orientation so
    that <A, X> = sum(vals * X[rows, cols]) exactly.
    """

    block: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray


def sym_term(block, rows, cols, vals):
    """BlockTerm from upper-triangle-style input; mirrors off-diagonal entries."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    off = rows != cols
    return BlockTerm(
        block,
        np.concatenate([rows, cols[off]]),
        np.concatenate([cols, rows[off]]),
        np.concatenate([vals, vals[off]]),
    )


@dataclass(frozen=True)
class Constraint:
    terms: tuple
    rhs: float


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    step_frac: float = 0.98
    diverge_scale: float = 1e8
    verbose: bool = False


@dataclass(frozen=True)
class IterRecord:
    iteration: int
    primal_obj: float
    dual_obj: float
    comp_gap: float
    primal_res: float
    dual_res: float
    mu: float


@dataclass
class SdpSolution:
    blocks: list
    dual: np.ndarray
    slacks: np.ndarray
    primal_obj: float
    dual_obj: float
    gap: float
    feas_residual: float
    status: SdpStatus
    iterations: int
    history: list


@dataclass(frozen=True)
class SdpProblem:
    block_dims: tuple
    objective: tuple  # dense symmetric matrix per block
    eq_constraints: tuple = ()
    ineq_constraints: tuple = ()  # sense <=

    def validate(self):
        if not self.block_dims or any(d < 1 for d in self.block_dims):
            raise InvalidInput(f"bad block dimensions {self.block_dims}")
        if len(self.objective) != len(self.block_dims):
            raise InvalidInput("one objective matrix per block required")
        for b, (C, d) in enumerate(zip(self.objective, self.block_dims)):
            C = np.asarray(C)
            if C.shape != (d, d):
                raise InvalidInput(f"objective block {b} has shape {C.shape}, want {(d, d)}")
            if np.linalg.norm(C - C.T) > 1e-12 * (1 + np.linalg.norm(C)):
                raise InvalidInput(f"objective block {b} is not symmetric")
        if not self.eq_constraints and not self.ineq_constraints:
            raise InvalidInput("at least one constraint required")
        for kind, cons in (("eq", self.eq_constraints), ("ineq", self.ineq_constraints)):
            for k, con in enumerate(cons):
                if not con.terms:
                    raise InvalidInput(f"{kind} constraint {k} has no terms")
                for t in con.terms:
                    if not 0 <= t.block < len(self.block_dims):
                        raise InvalidInput(f"{kind} constraint {k} names block {t.block}")
                    d = self.block_dims[t.block]
                    if t.rows.min() < 0 or t.rows.max() >= d or t.cols.min() < 0 or t.cols.max() >= d:
                        raise InvalidInput(f"{kind} constraint {k} indexes outside block {t.block}")
                    if not np.all(np.isfinite(t.vals)):
                        raise InvalidInput(f"{kind} constraint {k} has non-finite values")
                if not np.isfinite(con.rhs):
                    raise InvalidInput(f"{kind} constraint {k} has non-finite rhs")

    def dump(self, fileobj=None):
        """Debug text format: one line per constraint, coefficient quadruplets
        ``block i j value`` after the tag and right-hand side."""
        out = fileobj or io.StringIO()
        out.write(f"blocks {' '.join(str(d) for d in self.block_dims)}\n")
        for b, C in enumerate(self.objective):
            C = np.asarray(C)
            r, c = np.nonzero(C)
            if len(r):
                parts = " ".join(f"{b} {i} {j} {C[i, j]:.17g}" for i, j in zip(r, c))
                out.write(f"obj {parts}\n")
        for tag, cons in (("eq", self.eq_constraints), ("le", self.ineq_constraints)):
            for con in cons:
                parts = []
                for t in con.terms:
                    parts.extend(f"{t.block} {i} {j} {v:.17g}"
                                 for i, j, v in zip(t.rows, t.cols, t.vals))
                out.write(f"{tag} {con.rhs:.17g} {' '.join(parts)}\n")
        if fileobj is None:
            return out.getvalue()
        return None


def add_slack_for_inequality(prob):
    """Rewrite every <A, X> <= rhs as <A, X> + s = rhs with a fresh 1x1 PSD
    slack block; returns an equality-only problem."""
    if not prob.ineq_constraints:
        return prob
    nb = len(prob.block_dims)
    dims = prob.block_dims + (1,) * len(prob.ineq_constraints)
    objective = prob.objective + tuple(np.zeros((1, 1)) for _ in prob.ineq_constraints)
    converted = []
    for k, con in enumerate(prob.ineq_constraints):
        slack = BlockTerm(nb + k, np.array([0], dtype=np.int64),
                          np.array([0], dtype=np.int64), np.array([1.0]))
        converted.append(Constraint(con.terms + (slack,), con.rhs))
    return SdpProblem(dims, objective, prob.eq_constraints + tuple(converted), ())


class _Compiled:
    """Flattened constraint arrays shared by the numba and numpy kernels."""

    def __init__(self, prob):
        self.dims = np.array(prob.block_dims, dtype=np.int64)
        self.nblk = len(self.dims)
        self.offs = np.zeros(self.nblk, dtype=np.int64)
        np.cumsum(self.dims[:-1] ** 2, out=self.offs[1:])
        self.total = int(np.sum(self.dims ** 2))
        self.m = len(prob.eq_constraints)
        self.rhs = np.array([c.rhs for c in prob.eq_constraints])
        self.cflat = np.zeros(self.total)
        for b, C in enumerate(prob.objective):
            self.cflat[self.offs[b]:self.offs[b] + self.dims[b] ** 2] = np.asarray(C).ravel()

        per_block = [[] for _ in range(self.nblk)]
        for i, con in enumerate(prob.eq_constraints):
            merged = {}
            for t in con.terms:
                merged.setdefault(t.block, []).append(t)
            for b, terms in merged.items():
                rows = np.concatenate([t.rows for t in terms])
                cols = np.concatenate([t.cols for t in terms])
                vals = np.concatenate([t.vals for t in terms])
                per_block[b].append((i, rows, cols, vals))

        seg_con, seg_ptr = [], [0]
        blk_lo = np.zeros(self.nblk, dtype=np.int64)
        blk_hi = np.zeros(self.nblk, dtype=np.int64)
        e_row, e_col, e_val, e_flat, e_con = [], [], [], [], []
        for b in range(self.nblk):
            blk_lo[b] = len(seg_con)
            for i, rows, cols, vals in sorted(per_block[b], key=lambda s: s[0]):
                seg_con.append(i)
                seg_ptr.append(seg_ptr[-1] + len(rows))
                e_row.append(rows)
                e_col.append(cols)
                e_val.append(vals)
                e_flat.append(self.offs[b] + rows * self.dims[b] + cols)
                e_con.append(np.full(len(rows), i, dtype=np.int64))
            blk_hi[b] = len(seg_con)
        self.seg_con = np.array(seg_con, dtype=np.int64)
        self.seg_ptr = np.array(seg_ptr, dtype=np.int64)
        self.blk_lo = blk_lo
        self.blk_hi = blk_hi
        self.e_row = np.concatenate(e_row) if e_row else np.zeros(0, dtype=np.int64)
        self.e_col = np.concatenate(e_col) if e_col else np.zeros(0, dtype=np.int64)
        self.e_val = np.concatenate(e_val) if e_val else np.zeros(0)
        self.e_flat = np.concatenate(e_flat) if e_flat else np.zeros(0, dtype=np.int64)
        self.e_con = np.concatenate(e_con) if e_con else np.zeros(0, dtype=np.int64)

    def blocks_of(self, flat):
        return [flat[o:o + d * d].reshape(d, d) for o, d in zip(self.offs, self.dims)]

    def apply_A(self, flat):
        return np.bincount(self.e_con, weights=self.e_val * flat[self.e_flat],
                           minlength=self.m)

    def apply_At(self, y):
        out = np.zeros(self.total)
        np.add.at(out, self.e_flat, self.e_val * y[self.e_con])
        return out

    def schur(self, wflat):
        return kernels.schur_complement(self.m, wflat, self.dims, self.offs,
                                        self.seg_con, self.seg_ptr,
                                        self.blk_lo, self.blk_hi,
                                        self.e_row, self.e_col, self.e_val)


def _sym(A):
    return (A + A.T) / 2.0


def _chol_solve(L, B):
    return np.linalg.solve(L.T, np.linalg.solve(L, B))


def _refined_solve(M, L, r):
    """Cholesky solve with one step of iterative refinement; keeps the primal
    residual from being polluted by Schur-system conditioning near the end."""
    x = _chol_solve(L, r)
    x += _chol_solve(L, r - M @ x)
    return x


def _factor_schur(M):
    mean_diag = max(float(np.mean(np.diag(M))), 1e-300)
    for jitter in (0.0, 1e-13, 1e-11, 1e-9, 1e-7):
        try:
            return np.linalg.cholesky(M + jitter * mean_diag * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            continue
    return None


def _step_bound(lam, D):
    """Largest alpha with diag(lam) + alpha * D PSD (both in the scaled space)."""
    Ls = 1.0 / np.sqrt(lam)
    w = np.linalg.eigvalsh(_sym(D * Ls[:, None] * Ls[None, :]))
    wmin = float(w[0])
    if wmin >= -1e-16:
        return np.inf
    return -1.0 / wmin


def solve(prob, opts=None):
    """Solve a block SDP; returns an SdpSolution whose status reports failure
    instead of raising (only malformed input raises)."""
    opts = opts or SolverOptions()
    prob.validate()
    n_ineq = len(prob.ineq_constraints)
    n_orig_blocks = len(prob.block_dims)
    work = add_slack_for_inequality(prob)
    comp = _Compiled(work)

    dims = comp.dims
    ntot = int(dims.sum())
    m = comp.m
    b_vec = comp.rhs
    bnorm = 1.0 + float(np.linalg.norm(b_vec))
    cnorm = 1.0 + float(np.linalg.norm(comp.cflat))

    init = max(5.0, float(np.sqrt(dims.max())), float(np.abs(b_vec).max()))
    xflat = np.zeros(comp.total)
    sflat = np.zeros(comp.total)
    eye_flat = np.zeros(comp.total)
    for o, d in zip(comp.offs, dims):
        eye_flat[o:o + d * d] = np.eye(d).ravel()
    xflat[:] = init * eye_flat
    sflat[:] = init * eye_flat
    y = np.zeros(m)

    history = []
    status = SdpStatus.ITERATION_LIMIT
    it = 0
    best = None
    best_score = np.inf
    stall = 0

    def _meets_tolerances(pres, dres, pobj, dobj, cgap):
        return (pres <= opts.feas_tol and dres <= opts.feas_tol
                and abs(pobj - dobj) / (1.0 + abs(pobj)) <= opts.gap_tol
                and cgap / (1.0 + abs(pobj)) <= 10 * opts.gap_tol)

    for it in range(1, opts.max_iter + 1):
        X = comp.blocks_of(xflat)
        S = comp.blocks_of(sflat)
        rp = b_vec - comp.apply_A(xflat)
        aty = comp.blocks_of(comp.apply_At(y))
        Rd = [np.asarray(C) - Sb - At for C, Sb, At in zip(work.objective, S, aty)]
        pobj = float(comp.cflat @ xflat)
        dobj = float(b_vec @ y)
        cgap = float(xflat @ sflat)
        mu = cgap / ntot
        pres = float(np.linalg.norm(rp)) / bnorm
        dres = float(np.sqrt(sum(np.sum(R * R) for R in Rd))) / cnorm
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj))
        history.append(IterRecord(it, pobj, dobj, cgap, pres, dres, mu))
        if opts.verbose:  # pragma: no cover
            print(f"  it {it:3d}  pobj {pobj:+.9e}  dobj {dobj:+.9e} "
                  f"pres {pres:.2e} dres {dres:.2e} mu {mu:.2e}")

        score = max(pres, dres, relgap, cgap / (1.0 + abs(pobj)))
        if score < 0.8 * best_score:
            best_score = score
            best = (xflat.copy(), y.copy(), sflat.copy(), pobj, dobj, pres, dres, cgap)
            stall = 0
        else:
            stall += 1

        if _meets_tolerances(pres, dres, pobj, dobj, cgap):
            status = SdpStatus.OPTIMAL
            best = (xflat.copy(), y.copy(), sflat.copy(), pobj, dobj, pres, dres, cgap)
            break
        if stall >= 8:
            # no progress for several iterations: the numerical floor of the
            # Schur system has been reached; the best iterate decides status
            status = SdpStatus.NUMERICAL_FAILURE
            break

        # divergence / infeasibility heuristics
        xmax = float(np.abs(xflat).max())
        if not np.isfinite(pobj) or not np.isfinite(dobj):
            status = SdpStatus.NUMERICAL_FAILURE
            break
        if xmax > opts.diverge_scale * init or abs(dobj) > 1e12 * bnorm:
            status = (SdpStatus.INFEASIBLE
                      if dres <= 1e3 * opts.feas_tol and dobj > 0 else
                      SdpStatus.NUMERICAL_FAILURE)
            break

        # Nesterov-Todd scaling per block: G^T S G = G^-1 X G^-T = diag(lam)
        G, Ginv, lam, ok = [], [], [], True
        wflat = np.zeros(comp.total)
        for bidx, (Xb, Sb) in enumerate(zip(X, S)):
            try:
                Lx = np.linalg.cholesky(Xb)
                Ls = np.linalg.cholesky(Sb)
            except np.linalg.LinAlgError:
                ok = False
                break
            U, sv, Vt = np.linalg.svd(Ls.T @ Lx)
            sv = np.maximum(sv, 1e-300)
            Gb = Lx @ Vt.T / np.sqrt(sv)[None, :]
            Gib = (Vt * np.sqrt(sv)[:, None]) @ np.linalg.inv(Lx)
            G.append(Gb)
            Ginv.append(Gib)
            lam.append(sv)
            o, d = comp.offs[bidx], dims[bidx]
            wflat[o:o + d * d] = (Gb @ Gb.T).ravel()
        if not ok:
            status = SdpStatus.NUMERICAL_FAILURE
            break

        M = comp.schur(wflat)
        L = _factor_schur(M)
        if L is None:
            status = SdpStatus.NUMERICAL_FAILURE
            break

        wrdw = np.zeros(comp.total)
        for bidx, Rb in enumerate(Rd):
            o, d = comp.offs[bidx], dims[bidx]
            Wb = wflat[o:o + d * d].reshape(d, d)
            wrdw[o:o + d * d] = (Wb @ Rb @ Wb).ravel()
        a_wrdw = comp.apply_A(wrdw)

        def newton(rhs_sc):
            grg = np.zeros(comp.total)
            for bidx, Hb in enumerate(rhs_sc):
                o, d = comp.offs[bidx], dims[bidx]
                grg[o:o + d * d] = _sym(G[bidx] @ Hb @ G[bidx].T).ravel()
            r_y = rp - comp.apply_A(grg) + a_wrdw
            dy = _refined_solve(M, L, r_y)
            at_dy = comp.blocks_of(comp.apply_At(dy))
            dS = [Rb - Ab for Rb, Ab in zip(Rd, at_dy)]
            dX = []
            for bidx, (Hb, dSb) in enumerate(zip(rhs_sc, dS)):
                o, d = comp.offs[bidx], dims[bidx]
                Wb = wflat[o:o + d * d].reshape(d, d)
                dX.append(_sym(grg[o:o + d * d].reshape(d, d) - Wb @ dSb @ Wb))
            return dX, dy, dS

        # predictor (affine scaling): scaled-space target -diag(lam)
        rhs_aff = [np.diag(-lb) for lb in lam]
        dXa, dya, dSa = newton(rhs_aff)
        Dxa = [_sym(Ginv[bi] @ dXa[bi] @ Ginv[bi].T) for bi in range(comp.nblk)]
        Dsa = [_sym(G[bi].T @ dSa[bi] @ G[bi]) for bi in range(comp.nblk)]
        ap = min(1.0, min(_step_bound(lam[bi], Dxa[bi]) for bi in range(comp.nblk)))
        ad = min(1.0, min(_step_bound(lam[bi], Dsa[bi]) for bi in range(comp.nblk)))
        mu_aff = sum(float(np.vdot(np.diag(lam[bi]) + ap * Dxa[bi],
                                   np.diag(lam[bi]) + ad * Dsa[bi]))
                     for bi in range(comp.nblk)) / ntot
        sigma = min(1.0, max(0.0, (max(mu_aff, 0.0) / mu) ** 3))

        # corrector: solve diag(lam) U + U diag(lam) = 2 H per block
        rhs_cc = []
        for bi in range(comp.nblk):
            lb = lam[bi]
            H = sigma * mu * np.eye(len(lb)) - np.diag(lb * lb) \
                - _sym(Dxa[bi] @ Dsa[bi])
            rhs_cc.append(2.0 * H / (lb[:, None] + lb[None, :]))
        dX, dy, dS = newton(rhs_cc)
        Dx = [_sym(Ginv[bi] @ dX[bi] @ Ginv[bi].T) for bi in range(comp.nblk)]
        Ds = [_sym(G[bi].T @ dS[bi] @ G[bi]) for bi in range(comp.nblk)]
        # push the boundary fraction towards 1 once the path is nearly central;
        # closes the final decades of gap before Schur conditioning stalls it
        frac = opts.step_frac if mu > 1e-7 * (1 + abs(pobj)) else \
            max(opts.step_frac, 0.999)
        ap = min(1.0, frac * min(_step_bound(lam[bi], Dx[bi])
                                 for bi in range(comp.nblk)))
        ad = min(1.0, frac * min(_step_bound(lam[bi], Ds[bi])
                                 for bi in range(comp.nblk)))

        for bi in range(comp.nblk):
            o, d = comp.offs[bi], dims[bi]
            xflat[o:o + d * d] = _sym(X[bi] + ap * dX[bi]).ravel()
            sflat[o:o + d * d] = _sym(S[bi] + ad * dS[bi]).ravel()
        y = y + ad * dy

        if max(ap, ad) < 1e-8:
            status = SdpStatus.NUMERICAL_FAILURE
            break

    xflat, y, sflat, pobj, dobj, pres, dres, cgap = best
    if status is not SdpStatus.OPTIMAL and status is not SdpStatus.INFEASIBLE \
            and _meets_tolerances(pres, dres, pobj, dobj, cgap):
        status = SdpStatus.OPTIMAL
    blocks = comp.blocks_of(xflat)
    slacks = np.array([float(blocks[n_orig_blocks + k][0, 0]) for k in range(n_ineq)])
    return SdpSolution(
        blocks=[blk.copy() for blk in blocks[:n_orig_blocks]],
        dual=y.copy(),
        slacks=slacks,
        primal_obj=pobj,
        dual_obj=dobj,
        gap=pobj - dobj,
        feas_residual=max(pres, dres),
        status=status,
        iterations=it,
        history=history,
    )

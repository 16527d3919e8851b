"""Hot numeric kernels, each with a numba-jitted and a pure-numpy path.

The jitted path is used when numba imports successfully; setting the
environment variable ``PMSDP_NO_NUMBA=1`` before import forces the numpy
fallback.  Both paths are exercised against each other in the test suite and
timed against each other in ``benchmarks/bench_kernels.py``.

Kernels:

* ``hungarian_min``            -- O(n^3) shortest-augmenting-path assignment
* ``schur_complement``         -- interior-point Schur matrix  M[i,j] = sum_b tr(A_i W_b A_j W_b)
* ``permutation_objectives``   -- Procrustes objective of every permutation in a batch
"""

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("PMSDP_NO_NUMBA", "").strip().lower() not in ("1", "true", "yes")
if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):  # noqa: D103 - identity decorator fallback
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


# ---------------------------------------------------------------------------
# Linear assignment (minimization).  Classic Jonker-Volgenant/Hungarian with
# row potentials; indices are 1-based internally with column 0 as the virtual
# root of the augmenting path.
# ---------------------------------------------------------------------------

def _hungarian_impl(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


_hungarian_jit = njit(cache=True)(_hungarian_impl)


def hungarian_min_numpy(cost):
    """Pure-python/numpy assignment (same algorithm, not jitted)."""
    return _hungarian_impl(np.ascontiguousarray(cost, dtype=np.float64))


def hungarian_min_numba(cost):
    return _hungarian_jit(np.ascontiguousarray(cost, dtype=np.float64))


def hungarian_min(cost):
    """Column assigned to each row minimizing the total cost of a square matrix."""
    if NUMBA_ENABLED:
        return hungarian_min_numba(cost)
    return hungarian_min_numpy(cost)


# ---------------------------------------------------------------------------
# Schur complement assembly for the block SDP interior-point solver.
#
# Constraint matrices are sparse and symmetric, stored entry-wise (both (r,c)
# and (c,r) present off the diagonal) and grouped into per-(block, constraint)
# segments sorted by constraint index inside each block:
#   seg_con[s]               constraint index of segment s
#   seg_ptr[s] : seg_ptr[s+1] entry range of segment s
#   blk_lo[b] : blk_hi[b]     segment range of block b
# W is passed flattened per block with offsets offs[b] and dims dims[b].
# Only the lower triangle of M is filled; callers symmetrize.
# ---------------------------------------------------------------------------

def _schur_impl(M, wflat, dims, offs, seg_con, seg_ptr, blk_lo, blk_hi,
                e_row, e_col, e_val):
    nblk = dims.shape[0]
    for b in range(nblk):
        d = dims[b]
        off = offs[b]
        T = np.empty((d, d))
        for si in range(blk_lo[b], blk_hi[b]):
            i = seg_con[si]
            for p in range(d):
                for q in range(d):
                    T[p, q] = 0.0
            for e in range(seg_ptr[si], seg_ptr[si + 1]):
                r = e_row[e]
                c = e_col[e]
                v = e_val[e]
                for p in range(d):
                    w_pr = wflat[off + p * d + r] * v
                    if w_pr != 0.0:
                        base = off + c * d
                        for q in range(d):
                            T[p, q] += w_pr * wflat[base + q]
            for sj in range(blk_lo[b], si + 1):
                j = seg_con[sj]
                acc = 0.0
                for e in range(seg_ptr[sj], seg_ptr[sj + 1]):
                    acc += e_val[e] * T[e_row[e], e_col[e]]
                M[i, j] += acc


_schur_jit = njit(cache=True)(_schur_impl)


def schur_complement_numba(m, wflat, dims, offs, seg_con, seg_ptr, blk_lo, blk_hi,
                           e_row, e_col, e_val):
    M = np.zeros((m, m))
    _schur_jit(M, wflat, dims, offs, seg_con, seg_ptr, blk_lo, blk_hi,
               e_row, e_col, e_val)
    return M + np.tril(M, -1).T


def schur_complement_numpy(m, wflat, dims, offs, seg_con, seg_ptr, blk_lo, blk_hi,
                           e_row, e_col, e_val, chunk=256):
    """Vectorized fallback: per block, T_i = W A_i W for a chunk of constraints
    via per-entry outer products, then M[i, j] += <A_j, T_i> as a dense product
    against the chunk's gathered entry values."""
    M = np.zeros((m, m))
    nblk = dims.shape[0]
    for b in range(nblk):
        d = dims[b]
        off = offs[b]
        W = wflat[off:off + d * d].reshape(d, d)
        lo, hi = blk_lo[b], blk_hi[b]
        if hi <= lo:
            continue
        segs = np.arange(lo, hi)
        cons = seg_con[segs]
        counts = seg_ptr[segs + 1] - seg_ptr[segs]
        ent = np.concatenate([np.arange(seg_ptr[s], seg_ptr[s + 1]) for s in segs])
        rows = e_row[ent]
        cols = e_col[ent]
        vals = e_val[ent]
        owner = np.repeat(np.arange(len(segs)), counts)
        for start in range(0, len(segs), chunk):
            stop = min(start + chunk, len(segs))
            sel = (owner >= start) & (owner < stop)
            o = owner[sel] - start
            # stack of W A_i W for the chunk
            outer = vals[sel, None, None] * (W[:, rows[sel]].T[:, :, None]
                                             * W[:, cols[sel]].T[:, None, :])
            T = np.zeros((stop - start, d, d))
            np.add.at(T, o, outer)
            # gathered entries of every A_j in the block, j <= i enforced below
            contrib = T[:, rows, cols] * vals[None, :]
            Mb = np.zeros((stop - start, len(segs)))
            np.add.at(Mb.T, owner, contrib.T)
            for k in range(stop - start):
                i = cons[start + k]
                js = cons[:start + k + 1]
                M[i, js] += Mb[k, :start + k + 1]
    return M + np.tril(M, -1).T


def schur_complement(*args):
    if NUMBA_ENABLED:
        return schur_complement_numba(*args)
    return schur_complement_numpy(*args)


# ---------------------------------------------------------------------------
# Brute-force Procrustes scan: objective of the orthogonally-optimal rotation
# for every permutation in `perms`, via the nuclear norm of Q[:, perm] P^T.
# ---------------------------------------------------------------------------

def _perm_objectives_impl(P, Q, perms, base):
    K = perms.shape[0]
    n = perms.shape[1]
    d = P.shape[0]
    out = np.empty(K)
    B = np.empty((d, d))
    for k in range(K):
        for a in range(d):
            for bdx in range(d):
                B[a, bdx] = 0.0
        for j in range(n):
            qj = perms[k, j]
            for a in range(d):
                for bdx in range(d):
                    B[a, bdx] += Q[a, qj] * P[bdx, j]
        s = np.linalg.svd(B.copy())[1]
        out[k] = base - 2.0 * np.sum(s)
    return out


_perm_objectives_jit = njit(cache=True)(_perm_objectives_impl)


def permutation_objectives_numba(P, Q, perms):
    base = float(np.sum(P * P) + np.sum(Q * Q))
    return _perm_objectives_jit(np.ascontiguousarray(P), np.ascontiguousarray(Q),
                                np.ascontiguousarray(perms, dtype=np.int64), base)


def permutation_objectives_numpy(P, Q, perms, chunk=4096):
    base = float(np.sum(P * P) + np.sum(Q * Q))
    out = np.empty(len(perms))
    for start in range(0, len(perms), chunk):
        idx = perms[start:start + chunk]
        # (k, d, d) stack of Q[:, perm] P^T
        B = np.einsum("dkn,en->kde", Q[:, idx.T], P, optimize=True)
        s = np.linalg.svd(B, compute_uv=False)
        out[start:start + len(idx)] = base - 2.0 * s.sum(axis=1)
    return out


def permutation_objectives(P, Q, perms):
    if NUMBA_ENABLED:
        return permutation_objectives_numba(P, Q, perms)
    return permutation_objectives_numpy(P, Q, perms)

"""Sparse symmetric LDL^T factorization, triangular solves and power iteration.

The factorization is the classic up-looking scheme driven by the elimination
tree: a symbolic pass counts the nonzeros of every column of L, then the
numeric pass computes row k of L from a sparse triangular solve whose
pattern is the reach of row k in the tree. Kernels are compiled with numba.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

PIVOT_FLOOR = 1e-12
SYMMETRY_RTOL = 1e-8


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, index, pivot):
        super().__init__(f"zero pivot {pivot:.3g} at row {index}")
        self.index = index
        self.pivot = pivot


@numba.njit(cache=True)
def _etree_counts(n, ap, ai):
    parent = np.full(n, -1, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        flag[k] = k
        for p in range(ap[k], ap[k + 1]):
            i = ai[p]
            if i < k:
                while flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
    return parent, lnz


@numba.njit(cache=True)
def _ldl_numeric(n, ap, ai, ax, lp, parent, tol):
    nnz = lp[n]
    li = np.empty(nnz, dtype=np.int64)
    lx = np.empty(nnz, dtype=np.float64)
    d = np.empty(n, dtype=np.float64)
    y = np.zeros(n, dtype=np.float64)
    pattern = np.empty(n, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        top = n
        flag[k] = k
        for p in range(ap[k], ap[k + 1]):
            i = ai[p]
            y[i] += ax[p]
            length = 0
            while flag[i] != k:
                pattern[length] = i
                length += 1
                flag[i] = k
                i = parent[i]
            while length > 0:
                top -= 1
                length -= 1
                pattern[top] = pattern[length]
        d[k] = y[k]
        y[k] = 0.0
        while top < n:
            i = pattern[top]
            yi = y[i]
            y[i] = 0.0
            p2 = lp[i] + lnz[i]
            for p in range(lp[i], p2):
                y[li[p]] -= lx[p] * yi
            l_ki = yi / d[i]
            d[k] -= l_ki * yi
            li[p2] = k
            lx[p2] = l_ki
            lnz[i] += 1
            top += 1
        if abs(d[k]) <= tol:
            return li, lx, d, k
    return li, lx, d, -1


@numba.njit(cache=True)
def _ldl_solve(n, lp, li, lx, d, perm, b):
    x = np.empty(n, dtype=np.float64)
    for k in range(n):
        x[k] = b[perm[k]]
    for j in range(n):
        xj = x[j]
        for p in range(lp[j], lp[j + 1]):
            x[li[p]] -= lx[p] * xj
    for j in range(n):
        x[j] /= d[j]
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(lp[j], lp[j + 1]):
            acc -= lx[p] * x[li[p]]
        x[j] = acc
    out = np.empty(n, dtype=np.float64)
    for k in range(n):
        out[perm[k]] = x[k]
    return out


def minimum_degree(a):
    """Minimum-degree elimination order on the symmetric pattern of ``a``.

    Ties break on the lower index, so the order is a deterministic function
    of the pattern.
    """
    a = sp.csr_matrix(a)
    n = a.shape[0]
    pat = (a != 0).astype(np.int8)
    pat = (pat + pat.T).tocsr()
    adj = []
    for i in range(n):
        nb = set(pat.indices[pat.indptr[i]:pat.indptr[i + 1]].tolist())
        nb.discard(i)
        adj.append(nb)
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, v = heapq.heappop(heap)
        if done[v] or deg != len(adj[v]):
            continue
        done[v] = True
        order.append(v)
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return np.asarray(order, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class LdlFactors:
    """``A[perm][:, perm] = L D L^T`` with L unit lower triangular.

    L is held in compressed-column form without its unit diagonal
    (``lp``, ``li``, ``lx``); ``d`` is the diagonal of D.
    """

    perm: np.ndarray
    lp: np.ndarray
    li: np.ndarray
    lx: np.ndarray
    d: np.ndarray
    n: int

    @property
    def lower(self):
        strict = sp.csc_matrix((self.lx, self.li, self.lp), shape=(self.n, self.n))
        return (strict + sp.identity(self.n, format="csc")).tocsc()

    @property
    def upper(self):
        return (sp.diags(self.d) @ self.lower.T).tocsr()

    @property
    def perm_matrix(self):
        """P with ``P^T A P = L U``."""
        return sp.csr_matrix((np.ones(self.n), (self.perm, np.arange(self.n))),
                             shape=(self.n, self.n))

    @property
    def nnz(self):
        return int(self.lp[-1])


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def ldl_factorize(a, perm=None, check_symmetry=True):
    """Factor a sparse symmetric real matrix as ``P^T A P = L (D L^T)``.

    Parameters
    ----------
    a : sparse or dense (n, n) real symmetric matrix
    perm : optional elimination order; defaults to :func:`minimum_degree`.
    check_symmetry : reject matrices asymmetric beyond 1e-8 relative.

    Raises
    ------
    SingularMatrixError
        when a pivot falls below 1e-12 relative to the largest entry; the
        ``index`` attribute names the row of ``a``.
    """
    a = sp.csr_matrix(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    scale = abs(a).max() if a.nnz else 0.0
    if check_symmetry and a.nnz:
        asym = abs(a - a.T)
        if asym.nnz and asym.max() > SYMMETRY_RTOL * scale:
            raise ValueError("matrix is not symmetric")
    if perm is None:
        perm = minimum_degree(a)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.size != n or np.unique(perm).size != n:
        raise ValueError("perm must be a permutation of 0..n-1")
    b = a[perm][:, perm]
    upper = sp.triu(b, format="csc")
    upper.sort_indices()
    ap = upper.indptr.astype(np.int64)
    ai = upper.indices.astype(np.int64)
    ax = upper.data.astype(np.float64)
    parent, lnz = _etree_counts(n, ap, ai)
    lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lnz, out=lp[1:])
    tol = PIVOT_FLOOR * max(scale, 1e-300)
    li, lx, d, bad = _ldl_numeric(n, ap, ai, ax, lp, parent, tol)
    if bad >= 0:
        raise SingularMatrixError(int(perm[bad]), float(d[bad]))
    return LdlFactors(perm=_frozen(perm), lp=_frozen(lp), li=_frozen(li), lx=_frozen(lx),
                      d=_frozen(d), n=n)


def febs(f: LdlFactors, b):
    """Forward elimination / back substitution: solve ``A x = b``."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (f.n,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({f.n},)")
    return _ldl_solve(f.n, f.lp, f.li, f.lx, f.d, f.perm, b)


def spectral_radius_estimate(apply, n, iters=100, seed=0, dtype=float, max_restarts=5):
    """Power-iteration estimate of the dominant eigenvalue modulus.

    Returns ``||A v_k||`` for the normalized k-th iterate. The estimate
    approaches the spectral radius from below for normal operators and is
    meant for advisory checks only. A zero iterate restarts from a fresh
    random vector (``seed + 1``, ...), at most ``max_restarts`` times.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    for attempt in range(max_restarts + 1):
        rng = np.random.default_rng(seed + attempt)
        v = rng.standard_normal(n)
        if np.dtype(dtype).kind == "c":
            v = v + 1j * rng.standard_normal(n)
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(iters):
            w = apply(v)
            est = float(np.linalg.norm(w))
            if est == 0.0:
                break
            v = w / est
        if est > 0.0:
            return est
    return 0.0

"""Restarted GMRES, flexible GMRES and simple preconditioners.

Solvers operate on operator-apply callbacks so they can run matrix-free.
Left-preconditioned GMRES monitors the preconditioned residual against
``rtol * ||P^-1 b||``; flexible GMRES uses right preconditioning and
checks the true residual against ``rtol * ||b||``.  Both return the best
iterate found together with solve statistics and never modify the
caller's initial guess.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# Re-orthogonalize when modified Gram-Schmidt removes most of the vector.
_REORTH_THRESHOLD = 0.25


@dataclass(frozen=True)
class SolverSettings:
    """Restart length, tolerances and iteration cap for one solver level."""

    restart: int = 200
    rtol: float = 1.0e-8
    atol: float = 1.0e-50
    max_iters: int = 200

    def __post_init__(self):
        if self.restart < 1 or self.max_iters < 1:
            raise ValueError("restart and max_iters must be at least 1")
        if self.rtol <= 0.0 or self.atol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveStats:
    """Outcome of one Krylov solve."""

    iterations: int = 0
    converged: bool = False
    residual_norm: float = np.inf
    relative_residual: float = np.inf
    reference: float = 0.0
    history: list = field(default_factory=list)  # absolute residual per iteration
    stagnated: bool = False
    breakdown: bool = False

    def relative_history(self) -> np.ndarray:
        ref = self.reference if self.reference > 0.0 else 1.0
        return np.asarray(self.history) / ref


def _as_operator(obj):
    if callable(obj):
        return obj
    return lambda x: obj @ x


def _gmres_cycle(apply_op, r, target, restart, iters_left):
    """One Arnoldi cycle minimizing ||r - op z|| over the Krylov space.

    Returns (dx, residual_history, breakdown) where dx is the correction
    in the operator's input space.
    """
    n = len(r)
    beta = np.linalg.norm(r)
    m = min(restart, iters_left)
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r / beta
    history = []
    breakdown = False
    k = 0
    for j in range(m):
        w = apply_op(V[j])
        norm_before = np.linalg.norm(w)
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w -= H[i, j] * V[i]
        h_last = np.linalg.norm(w)
        if h_last < _REORTH_THRESHOLD * norm_before:
            for i in range(j + 1):
                corr = V[i] @ w
                H[i, j] += corr
                w -= corr * V[i]
            h_last = np.linalg.norm(w)
        H[j + 1, j] = h_last
        # Apply accumulated Givens rotations, then create a new one.
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = np.hypot(H[j, j], H[j + 1, j])
        if denom == 0.0 or not np.isfinite(denom):
            raise FloatingPointError("GMRES breakdown: zero or non-finite Hessenberg")
        cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
        H[j, j] = denom
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        history.append(abs(g[j + 1]))
        if abs(g[j + 1]) <= target:
            break
        if h_last == 0.0:  # happy breakdown: exact solution found
            breakdown = True
            break
        V[j + 1] = w / h_last
    y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
    dx = V[:k].T @ y
    return dx, history, breakdown


def gmres(apply_a, b, settings: SolverSettings, x0=None, preconditioner=None):
    """Restarted GMRES with optional left preconditioning.

    Solves ``P^-1 A x = P^-1 b``; convergence is declared when the
    preconditioned residual drops below ``max(rtol ||P^-1 b||, atol)``.
    """
    apply_a = _as_operator(apply_a)
    apply_p = _as_operator(preconditioner) if preconditioner is not None else None
    b = np.asarray(b, dtype=float)
    x = np.array(x0, dtype=float, copy=True) if x0 is not None else np.zeros_like(b)

    def prec(vec):
        return apply_p(vec) if apply_p is not None else vec

    stats = SolveStats()
    ref = np.linalg.norm(prec(b))
    stats.reference = ref
    if ref == 0.0:
        stats.converged = True
        stats.residual_norm = 0.0
        stats.relative_residual = 0.0
        return np.zeros_like(b), stats
    target = max(settings.rtol * ref, settings.atol)
    z = prec(b - apply_a(x)) if np.any(x) else prec(b)
    rnorm = np.linalg.norm(z)
    stats.history.append(rnorm)
    while rnorm > target and stats.iterations < settings.max_iters:
        dx, hist, broke = _gmres_cycle(
            lambda vec: prec(apply_a(vec)),
            z,
            target,
            settings.restart,
            settings.max_iters - stats.iterations,
        )
        x = x + dx
        stats.iterations += len(hist)
        stats.history.extend(hist)
        stats.breakdown |= broke
        z = prec(b - apply_a(x))
        rnorm = np.linalg.norm(z)
        if broke:
            break
    stats.history[-1] = rnorm
    stats.residual_norm = rnorm
    stats.relative_residual = rnorm / ref
    stats.converged = bool(rnorm <= target or stats.breakdown)
    return x, stats


def fgmres(apply_a, apply_p, b, settings: SolverSettings, x0=None):
    """Flexible GMRES with right preconditioning.

    ``apply_p`` may change between iterations (it is typically an inexact
    inner solve).  Both the Krylov basis and the preconditioned vectors
    are stored; convergence is checked on the true residual against
    ``max(rtol ||b||, atol)``.  Stagnation over a full restart cycle is
    reported in the stats but is not fatal.
    """
    apply_a = _as_operator(apply_a)
    apply_p = _as_operator(apply_p)
    b = np.asarray(b, dtype=float)
    x = np.array(x0, dtype=float, copy=True) if x0 is not None else np.zeros_like(b)
    n = len(b)

    stats = SolveStats()
    ref = np.linalg.norm(b)
    stats.reference = ref
    if ref == 0.0:
        stats.converged = True
        stats.residual_norm = 0.0
        stats.relative_residual = 0.0
        return np.zeros_like(b), stats
    target = max(settings.rtol * ref, settings.atol)

    r = b - apply_a(x) if np.any(x) else b.copy()
    rnorm = np.linalg.norm(r)
    stats.history.append(rnorm)
    best_x, best_norm = x.copy(), rnorm
    while rnorm > target and stats.iterations < settings.max_iters:
        cycle_start = rnorm
        m = min(settings.restart, settings.max_iters - stats.iterations)
        beta = rnorm
        V = np.empty((m + 1, n))
        Z = np.empty((m, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for j in range(m):
            Z[j] = apply_p(V[j])
            w = apply_a(Z[j])
            norm_before = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            h_last = np.linalg.norm(w)
            if h_last < _REORTH_THRESHOLD * norm_before:
                for i in range(j + 1):
                    corr = V[i] @ w
                    H[i, j] += corr
                    w -= corr * V[i]
                h_last = np.linalg.norm(w)
            H[j + 1, j] = h_last
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0 or not np.isfinite(denom):
                raise FloatingPointError("FGMRES breakdown: zero or non-finite Hessenberg")
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            stats.history.append(abs(g[j + 1]))
            if abs(g[j + 1]) <= target or h_last == 0.0:
                stats.breakdown |= h_last == 0.0
                break
            V[j + 1] = w / h_last
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
        x = x + Z[:k].T @ y
        stats.iterations += k
        r = b - apply_a(x)
        rnorm = np.linalg.norm(r)
        stats.history[-1] = rnorm
        if rnorm < best_norm:
            best_norm, best_x = rnorm, x.copy()
        if rnorm >= cycle_start and k == m:
            stats.stagnated = True
        if stats.breakdown:
            break
    stats.residual_norm = best_norm
    stats.relative_residual = best_norm / ref
    stats.converged = bool(best_norm <= target)
    return best_x, stats


class JacobiPreconditioner:
    """Diagonal (Jacobi) preconditioner."""

    def __init__(self, diagonal):
        diagonal = np.asarray(diagonal, dtype=float)
        if np.any(diagonal == 0.0):
            raise ValueError("Jacobi preconditioner requires a nonzero diagonal")
        self.inv_diag = 1.0 / diagonal

    def apply(self, x):
        return self.inv_diag * x

    __call__ = apply


def jacobi_build(operator) -> JacobiPreconditioner:
    """Build a Jacobi preconditioner from a matrix or block-tangent A-block.

    For block tangents the diagonal includes the rank-one outlet
    contributions ``w_k a_k,i^2``.
    """
    if hasattr(operator, "a_diagonal"):
        diag = operator.a_diagonal()
    elif sp.issparse(operator):
        diag = operator.diagonal()
    else:
        arr = np.asarray(operator, dtype=float)
        diag = np.diag(arr) if arr.ndim == 2 else arr
    return JacobiPreconditioner(diag)


class ILU0Preconditioner:
    """Zero-fill incomplete LU factorization on the matrix sparsity pattern."""

    def __init__(self, matrix, shift_reported=None):
        A = sp.csr_matrix(matrix, copy=True)
        A.sort_indices()
        n = A.shape[0]
        indptr, indices, data = A.indptr, A.indices, A.data
        diag_pos = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            row = indices[indptr[i]:indptr[i + 1]]
            hit = np.searchsorted(row, i)
            if hit < len(row) and row[hit] == i:
                diag_pos[i] = indptr[i] + hit
        if np.any(diag_pos < 0):
            raise ValueError("ILU(0) requires an explicit diagonal in the pattern")
        self.shifted = False
        scale = np.abs(data).max() if len(data) else 1.0
        for i in range(n):
            start, end = indptr[i], indptr[i + 1]
            row_cols = indices[start:end]
            for pos in range(start, end):
                k = indices[pos]
                if k >= i:
                    break
                piv = data[diag_pos[k]]
                if piv == 0.0:
                    piv = 1e-12 * scale  # fallback shift, reported below
                    data[diag_pos[k]] = piv
                    self.shifted = True
                lik = data[pos] / piv
                data[pos] = lik
                # Update row i against row k on the shared pattern, j > k.
                ks, ke = indptr[k], indptr[k + 1]
                k_cols = indices[ks:ke]
                upper = k_cols > k
                if not np.any(upper):
                    continue
                uc = k_cols[upper]
                uv = data[ks:ke][upper]
                match = np.searchsorted(row_cols, uc)
                valid = (match < len(row_cols))
                match_clip = np.minimum(match, len(row_cols) - 1)
                valid &= row_cols[match_clip] == uc
                data[start + match_clip[valid]] -= lik * uv[valid]
            if data[diag_pos[i]] == 0.0:
                data[diag_pos[i]] = 1e-12 * scale
                self.shifted = True
        if self.shifted and shift_reported is not None:
            shift_reported("ILU(0) applied a diagonal shift to avoid a zero pivot")
        factored = sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=A.shape)
        self.lower = sp.tril(factored, k=-1).tocsr() + sp.eye(n, format="csr")
        self.upper = sp.triu(factored, k=0).tocsr()

    def apply(self, x):
        from scipy.sparse.linalg import spsolve_triangular

        y = spsolve_triangular(self.lower, x, lower=True, unit_diagonal=True)
        return spsolve_triangular(self.upper, y, lower=False)

    __call__ = apply


def ilu0_build(matrix, shift_reported=None) -> ILU0Preconditioner:
    """Zero-fill ILU preconditioner over the sparsity pattern of ``matrix``."""
    return ILU0Preconditioner(matrix, shift_reported=shift_reported)


def save_matrix(path, matrix) -> None:
    """Write a sparse matrix in coordinate text exchange format."""
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(matrix))


def load_matrix(path):
    """Read a sparse matrix from coordinate text exchange format."""
    from scipy.io import mmread

    return sp.csr_matrix(mmread(path))

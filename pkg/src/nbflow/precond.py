"""Block preconditioners for the velocity-pressure tangent.

The nested preconditioner applies an inexact block LDU back substitution:
an intermediate solve with A, a Schur solve whose operator action
``S x = D x - C A^-1 B x`` is evaluated matrix-free with an inner A
solve, and a final A solve.  The SIMPLE variant replaces the Schur
operator by the sparse approximation built from diag(A) and skips the
inner level; the block-diagonal variant drops the coupling updates
altogether.  All of them are meant to be wrapped in a flexible outer
Krylov method since their action changes from call to call.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .assembly import BlockTangent
from .krylov import SolverSettings, gmres, ilu0_build, jacobi_build

PC_A_CHOICES = ("jacobi", "ilu0", "none")
PC_S_CHOICES = ("ilu0", "jacobi", "bipn", "none")


@dataclass(frozen=True)
class NestedSettings:
    """Tolerances and preconditioner choices for the nested levels."""

    a_solve: SolverSettings = SolverSettings(rtol=1.0e-3)
    s_solve: SolverSettings = SolverSettings(rtol=1.0e-2)
    inner_rtol: float = 1.0e-2
    pc_a: str = "jacobi"
    pc_s: str = "ilu0"

    def __post_init__(self):
        if self.inner_rtol <= 0.0:
            raise ValueError("inner tolerance must be positive")
        if self.pc_a not in PC_A_CHOICES:
            raise ValueError(f"pc_a must be one of {PC_A_CHOICES}")
        if self.pc_s not in PC_S_CHOICES:
            raise ValueError(f"pc_s must be one of {PC_S_CHOICES}")

    @property
    def inner_settings(self) -> SolverSettings:
        """Inner A-solves share the A restart/cap but use their own rtol."""
        return replace(self.a_solve, rtol=self.inner_rtol)


@dataclass
class SubSolveStats:
    """Accumulated sub-solver effort inside a preconditioner."""

    intermediate_iterations: int = 0
    inner_iterations: int = 0
    inner_solves: int = 0
    failures: list = field(default_factory=list)

    def record(self, label: str, stats, inner=False) -> None:
        if inner:
            self.inner_iterations += stats.iterations
            self.inner_solves += 1
        else:
            self.intermediate_iterations += stats.iterations
        if not stats.converged:
            self.failures.append(
                f"{label}: no convergence in {stats.iterations} iterations "
                f"(relative residual {stats.relative_residual:.3e})"
            )


def schur_sparse_approx(tangent: BlockTangent):
    """Sparse Schur approximation ``D - C diag(A)^-1 B``.

    diag(A) includes the rank-one outlet contributions.
    """
    diag = tangent.a_diagonal()
    if np.any(diag == 0.0):
        raise ValueError("A has a zero diagonal entry; cannot form the sparse Schur approximation")
    inv_diag = sp.diags(1.0 / diag)
    return (tangent.D - tangent.C @ inv_diag @ tangent.B).tocsr()


class BipnSchur:
    """Sparse-plus-rank-one Schur approximation from the outlet structure.

    With ``delta = diag(F)`` (the diagonal of A without its rank-one
    part), the inverse of ``delta + sum_k w_k a_k a_k^T`` is expanded
    rank-one exactly, giving

        S_tilde = D - C delta^-1 B
                  + sum_k  c_k (C b_k)(B^T b_k)^T,
        b_k = delta^-1 a_k,   c_k = w_k / (1 + w_k a_k . b_k).

    When A is exactly diagonal plus those rank-one terms this reproduces
    the true Schur complement.  The object is apply-only; the rank-one
    corrections are never densified.
    """

    def __init__(self, tangent: BlockTangent):
        diag_f = tangent.F.diagonal()
        if np.any(diag_f == 0.0):
            raise ValueError("F has a zero diagonal entry")
        inv_df = 1.0 / diag_f
        self.base = (tangent.D - tangent.C @ sp.diags(inv_df) @ tangent.B).tocsr()
        self.coeffs = []
        self.u_vectors = []
        self.v_vectors = []
        for w, a in tangent.rank_one:
            if w == 0.0:
                continue
            b = inv_df * a
            denom = 1.0 + w * (a @ b)
            self.coeffs.append(w / denom)
            self.u_vectors.append(tangent.C @ b)
            self.v_vectors.append(tangent.B.T @ b)
        self.shape = self.base.shape

    def apply(self, x):
        y = self.base @ x
        for c, u, v in zip(self.coeffs, self.u_vectors, self.v_vectors):
            y = y + c * (v @ x) * u
        return y

    __call__ = apply

    def preconditioner(self, shift_reported=None):
        """Approximate inverse: ILU(0) of the sparse base corrected by the
        Woodbury identity for the rank-one terms."""
        ilu = ilu0_build(self.base, shift_reported=shift_reported)
        if not self.coeffs:
            return ilu
        mu = np.column_stack([ilu.apply(u) for u in self.u_vectors])
        vt = np.column_stack(self.v_vectors).T
        cap = np.linalg.inv(np.diag(1.0 / np.asarray(self.coeffs)) + vt @ mu)

        def apply(r):
            y = ilu.apply(r)
            return y - mu @ (cap @ (vt @ y))

        return apply


def bipn_schur(tangent: BlockTangent) -> BipnSchur:
    """Build the sparse-plus-low-rank Schur approximation."""
    return BipnSchur(tangent)


def _build_pc_a(tangent: BlockTangent, kind: str):
    if kind == "jacobi":
        return jacobi_build(tangent)
    if kind == "ilu0":
        return ilu0_build(tangent.F)  # rank-one terms are not factored
    return None


def _build_pc_s(tangent: BlockTangent, s_hat, kind: str):
    if kind == "ilu0":
        return ilu0_build(s_hat)
    if kind == "jacobi":
        return jacobi_build(s_hat)
    if kind == "bipn":
        return BipnSchur(tangent).preconditioner()
    return None


class SchurContext:
    """Matrix-free Schur action with a shared A preconditioner.

    ``apply(x_p)`` returns ``D x_p - C A^-1 (B x_p)`` where the inverse is
    an inner GMRES solve at the inner tolerance with the shared ``P_A``.
    Inner solves always start from zero for reproducibility; failures are
    recorded and the best iterate is used.
    """

    def __init__(self, tangent: BlockTangent, settings: NestedSettings, pc_a=None,
                 stats: SubSolveStats | None = None):
        self.tangent = tangent
        self.settings = settings
        self.pc_a = pc_a if pc_a is not None else _build_pc_a(tangent, settings.pc_a)
        self.s_hat = schur_sparse_approx(tangent)
        self.pc_s = _build_pc_s(tangent, self.s_hat, settings.pc_s)
        self.stats = stats if stats is not None else SubSolveStats()

    def apply(self, x_p):
        t = self.tangent
        bx = t.B @ x_p
        tilde, st = gmres(
            t.apply_velocity_block, bx, self.settings.inner_settings,
            preconditioner=self.pc_a,
        )
        self.stats.record("inner A solve", st, inner=True)
        return t.D @ x_p - t.C @ tilde

    __call__ = apply


class SCRPreconditioner:
    """Inexact block LDU back substitution with the matrix-free Schur solve."""

    name = "scr"

    def __init__(self, tangent: BlockTangent, settings: NestedSettings):
        self.tangent = tangent
        self.settings = settings
        self.stats = SubSolveStats()
        self.context = SchurContext(tangent, settings, stats=self.stats)

    def apply(self, s):
        t = self.tangent
        s = np.asarray(s, dtype=float)
        s_v, s_p = s[: t.n_v].copy(), s[t.n_v:].copy()
        y_hat, st = gmres(t.apply_velocity_block, s_v, self.settings.a_solve,
                          preconditioner=self.context.pc_a)
        self.stats.record("intermediate A solve (1)", st)
        s_p -= t.C @ y_hat
        y_p, st = gmres(self.context.apply, s_p, self.settings.s_solve,
                        preconditioner=self.context.pc_s)
        self.stats.record("Schur solve", st)
        s_v = s_v - t.B @ y_p
        y_v, st = gmres(t.apply_velocity_block, s_v, self.settings.a_solve,
                        preconditioner=self.context.pc_a)
        self.stats.record("intermediate A solve (2)", st)
        return np.concatenate([y_v, y_p])

    __call__ = apply


class SIMPLEPreconditioner:
    """Two-level variant: sparse Schur approximation, no inner solver.

    The pressure system is solved on the sparse approximation built from
    diag(A), and the velocity update uses diag(A)^-1 B so the mass
    equation is left unperturbed.
    """

    name = "simple"

    def __init__(self, tangent: BlockTangent, settings: NestedSettings):
        self.tangent = tangent
        self.settings = settings
        self.stats = SubSolveStats()
        self.pc_a = _build_pc_a(tangent, settings.pc_a)
        self.s_hat = schur_sparse_approx(tangent)
        self.pc_s = _build_pc_s(tangent, self.s_hat, settings.pc_s)
        self.inv_diag_a = 1.0 / tangent.a_diagonal()

    def apply(self, s):
        t = self.tangent
        s = np.asarray(s, dtype=float)
        s_v, s_p = s[: t.n_v].copy(), s[t.n_v:].copy()
        y_hat, st = gmres(t.apply_velocity_block, s_v, self.settings.a_solve,
                          preconditioner=self.pc_a)
        self.stats.record("intermediate A solve", st)
        s_p -= t.C @ y_hat
        y_p, st = gmres(self.s_hat, s_p, self.settings.s_solve,
                        preconditioner=self.pc_s)
        self.stats.record("sparse Schur solve", st)
        y_v = y_hat - self.inv_diag_a * (t.B @ y_p)
        return np.concatenate([y_v, y_p])

    __call__ = apply


class BlockDiagPreconditioner:
    """Weakest baseline: independent A and sparse-Schur solves, no coupling."""

    name = "block_diag"

    def __init__(self, tangent: BlockTangent, settings: NestedSettings):
        self.tangent = tangent
        self.settings = settings
        self.stats = SubSolveStats()
        self.pc_a = _build_pc_a(tangent, settings.pc_a)
        self.s_hat = schur_sparse_approx(tangent)
        self.pc_s = _build_pc_s(tangent, self.s_hat, settings.pc_s)

    def apply(self, s):
        t = self.tangent
        s = np.asarray(s, dtype=float)
        y_v, st = gmres(t.apply_velocity_block, s[: t.n_v], self.settings.a_solve,
                        preconditioner=self.pc_a)
        self.stats.record("A solve", st)
        y_p, st = gmres(self.s_hat, s[t.n_v:], self.settings.s_solve,
                        preconditioner=self.pc_s)
        self.stats.record("sparse Schur solve", st)
        return np.concatenate([y_v, y_p])

    __call__ = apply


class IdentityPreconditioner:
    name = "none"

    def __init__(self, tangent=None, settings=None):
        self.stats = SubSolveStats()

    def apply(self, s):
        return np.asarray(s, dtype=float)

    __call__ = apply


PRECONDITIONERS = {
    "scr": SCRPreconditioner,
    "simple": SIMPLEPreconditioner,
    "block_diag": BlockDiagPreconditioner,
    "none": IdentityPreconditioner,
}


def build_preconditioner(name: str, tangent: BlockTangent, settings: NestedSettings):
    try:
        cls = PRECONDITIONERS[name]
    except KeyError:
        raise ValueError(
            f"unknown preconditioner {name!r}; choose from {sorted(PRECONDITIONERS)}"
        ) from None
    return cls(tangent, settings)


# Functional forms of the preconditioner actions (convenient in tests; the
# class API avoids rebuilding the sub-preconditioners on every call).


def schur_apply(ctx: SchurContext, x_p):
    """Matrix-free Schur action ``D x - C A^-1 B x``."""
    return ctx.apply(x_p)


def scr_apply(tangent, settings, s):
    return SCRPreconditioner(tangent, settings).apply(s)


def simple_apply(tangent, settings, s):
    return SIMPLEPreconditioner(tangent, settings).apply(s)


def block_diag_apply(tangent, settings, s):
    return BlockDiagPreconditioner(tangent, settings).apply(s)

"""Residual and consistent tangent assembly for the stabilized flow problem.

The momentum and continuity residuals follow the residual-based
variational multiscale form on linear tetrahedra: Galerkin terms plus
cross and subgrid stress terms driven by the fine-scale velocity

    v' = -tau_M (rho dv/dt + rho v.grad(v) + grad(p) - rho b),

a grad-div term driven by ``p' = -tau_C div(v)``, outlet tractions
``-P n`` and a backflow penalty on outflow surfaces.  The viscous
Laplacian is omitted from v' because it vanishes element-wise for
linear elements.

The tangent is the exact derivative of the residual with respect to the
acceleration unknowns of the generalized-alpha update, including the
dependence of tau_M and tau_C on the velocity; only the sign switch of
the backflow term is held fixed within an iteration.  Dirichlet-
constrained velocity rows and columns are eliminated from every block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .meshing import Mesh, surface_flow_rate, surface_normal_weights
from .quadrature import TET4_BARY, TRI3_BARY

DEFAULT_C_T = 4.0
DEFAULT_C_I = 36.0
DEFAULT_BETA = 0.2


@dataclass(frozen=True)
class StabParams:
    """Element stabilization parameters."""

    tau_m: float
    tau_c: float


def stabilization_params(v, metric, dt, rho, mu, c_t=DEFAULT_C_T, c_i=DEFAULT_C_I):
    """Stabilization parameters at a point.

    tau_M = (1/rho) (C_T/dt^2 + v.Gv + C_I (mu/rho)^2 G:G)^(-1/2) and
    tau_C = 1/(tau_M tr G), with C_T = 4 and C_I = 36 for linear
    interpolations.
    """
    v = np.asarray(v, dtype=float)
    g = np.asarray(metric, dtype=float)
    quad = c_t / dt**2 + v @ g @ v + c_i * (mu / rho) ** 2 * np.tensordot(g, g)
    tau_m = 1.0 / (rho * np.sqrt(quad))
    tau_c = 1.0 / (tau_m * np.trace(g))
    return StabParams(tau_m=float(tau_m), tau_c=float(tau_c))


class DofMap:
    """Free/constrained partition of the velocity and pressure unknowns.

    Velocity dofs are numbered ``3 * node + component``; pressure dofs use
    the node index.  Constrained velocity dofs carry Dirichlet data and
    are eliminated from the linear systems; pinned pressure nodes play
    the same role for the pressure.
    """

    def __init__(self, n_nodes, constrained_vdofs=(), pinned_pnodes=()):
        self.n_nodes = int(n_nodes)
        self.constrained_v = np.unique(np.asarray(constrained_vdofs, dtype=np.int64))
        self.pinned_p = np.unique(np.asarray(pinned_pnodes, dtype=np.int64))
        self.free_v = np.setdiff1d(np.arange(3 * self.n_nodes), self.constrained_v)
        self.free_p = np.setdiff1d(np.arange(self.n_nodes), self.pinned_p)

    @classmethod
    def from_mesh(cls, mesh: Mesh, dirichlet_groups, pinned_pnodes=()) -> "DofMap":
        nodes = []
        for name in dirichlet_groups:
            nodes.append(mesh.group(name).nodes)
        nodes = np.unique(np.concatenate(nodes)) if nodes else np.array([], dtype=np.int64)
        vdofs = (3 * nodes[:, None] + np.arange(3)).ravel()
        return cls(mesh.n_nodes, vdofs, pinned_pnodes)

    @property
    def n_free_v(self) -> int:
        return len(self.free_v)

    @property
    def n_free_p(self) -> int:
        return len(self.free_p)

    @property
    def n_free(self) -> int:
        return self.n_free_v + self.n_free_p

    def restrict(self, momentum, continuity) -> np.ndarray:
        """Stack the free components of full-length residual vectors."""
        return np.concatenate([momentum[self.free_v], continuity[self.free_p]])

    def split(self, stacked):
        return stacked[: self.n_free_v], stacked[self.n_free_v:]

    def expand(self, stacked):
        """Scatter a stacked free vector into full (3N,) and (N,) arrays."""
        dv = np.zeros(3 * self.n_nodes)
        dp = np.zeros(self.n_nodes)
        dv[self.free_v] = stacked[: self.n_free_v]
        dp[self.free_p] = stacked[self.n_free_v:]
        return dv, dp


@dataclass
class Residual:
    """Assembled residual with its boundary/volume partition."""

    momentum: np.ndarray  # (3N,)
    continuity: np.ndarray  # (N,)
    momentum_vol: np.ndarray
    momentum_bc: np.ndarray
    momentum_bf: np.ndarray
    flow_rates: dict = field(default_factory=dict)

    def restricted(self, dofmap: DofMap) -> np.ndarray:
        return dofmap.restrict(self.momentum, self.continuity)


class BlockTangent:
    """2x2 block tangent with the outlet coupling kept in rank-one form.

    The velocity-velocity block acts as ``F + sum_k w_k a_k a_k^T``; the
    rank-one terms are never densified.
    """

    def __init__(self, F, B, C, D, rank_one=()):
        self.F = F
        self.B = B
        self.C = C
        self.D = D
        self.rank_one = list(rank_one)  # (weight, vector over free velocity dofs)
        self.n_v = F.shape[0]
        self.n_p = D.shape[0]

    @property
    def n(self) -> int:
        return self.n_v + self.n_p

    def apply_velocity_block(self, x_v):
        """Action of A = F + sum_k w_k a_k a_k^T."""
        y = self.F @ x_v
        for w, a in self.rank_one:
            y = y + (w * (a @ x_v)) * a
        return y

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got {x.shape}")
        x_v, x_p = x[: self.n_v], x[self.n_v:]
        r_v = self.apply_velocity_block(x_v) + self.B @ x_p
        r_p = self.C @ x_v + self.D @ x_p
        return np.concatenate([r_v, r_p])

    def a_diagonal(self) -> np.ndarray:
        """Diagonal of A including the rank-one contributions."""
        d = self.F.diagonal().copy()
        for w, a in self.rank_one:
            d += w * a * a
        return d

    def dense(self) -> np.ndarray:
        """Densified full block matrix (tests and small oracles only)."""
        top = self.F.toarray()
        for w, a in self.rank_one:
            top = top + w * np.outer(a, a)
        return np.block([[top, self.B.toarray()], [self.C.toarray(), self.D.toarray()]])


def apply_block(tangent: BlockTangent, x) -> np.ndarray:
    """Matrix action of the block tangent on a stacked vector."""
    return tangent.apply(x)


class NavierStokesAssembler:
    """Evaluates residuals and tangents on a fixed mesh.

    Parameters
    ----------
    mesh, dofmap : discretization and constraint layout.
    rho, mu : fluid density (g/cm^3) and dynamic viscosity (poise).
    outlets : names of the facet groups carrying coupled tractions;
        backflow stabilization acts on these surfaces.
    beta : backflow penalty factor.
    body_force : optional ``f(x, t) -> (..., 3)`` acceleration field.
    stabilization : set False to drop all subgrid terms (testing aid).
    """

    def __init__(self, mesh: Mesh, dofmap: DofMap, rho, mu, outlets=(),
                 beta=DEFAULT_BETA, body_force=None, stabilization=True,
                 c_t=DEFAULT_C_T, c_i=DEFAULT_C_I):
        self.mesh = mesh
        self.dofmap = dofmap
        self.rho = float(rho)
        self.mu = float(mu)
        self.beta = float(beta)
        self.body_force: Optional[Callable] = body_force
        self.stabilization = bool(stabilization)
        self.c_t = float(c_t)
        self.c_i = float(c_i)
        self.outlets = list(outlets)

        self.conn = mesh.tets
        self.dN = mesh.grads
        self.vol = mesh.volumes
        self.G = mesh.metric
        self.GG = np.einsum("eij,eij->e", self.G, self.G)
        self.trG = np.einsum("eii->e", self.G)
        self.xe = mesh.nodes[self.conn]
        self.w = self.vol / len(TET4_BARY)

        n = mesh.n_nodes
        self.n_nodes = n
        conn = self.conn
        # Flattened velocity dof indices per element, shape (E, 12).
        vdofs = (3 * conn[:, :, None] + np.arange(3)).reshape(len(conn), 12)
        self._vdofs = vdofs
        self._rows_vv = np.repeat(vdofs, 12, axis=1).ravel()
        self._cols_vv = np.tile(vdofs, (1, 12)).ravel()
        self._rows_vp = np.repeat(vdofs, 4, axis=1).ravel()
        self._cols_vp = np.tile(conn, (1, 12)).ravel()
        self._rows_pv = np.repeat(conn, 12, axis=1).ravel()
        self._cols_pv = np.tile(vdofs, (1, 4)).ravel()
        self._rows_pp = np.repeat(conn, 4, axis=1).ravel()
        self._cols_pp = np.tile(conn, (1, 4)).ravel()

        self._outlet_weights = {
            name: surface_normal_weights(mesh, name).ravel() for name in self.outlets
        }
        self._bf_groups = []
        for name in self.outlets:
            g = mesh.group(name)
            tdofs = (3 * g.tris[:, :, None] + np.arange(3)).reshape(len(g.tris), 9)
            self._bf_groups.append((g, tdofs))

    # -- shared state -------------------------------------------------

    def _volume_state(self, v, vdot, p, dt, time):
        ve = v[self.conn]
        vde = vdot[self.conn]
        pe = p[self.conn]
        lam = TET4_BARY
        s = {}
        s["gradv"] = np.einsum("eai,eaj->eij", ve, self.dN)
        s["gradp"] = np.einsum("ea,eaj->ej", pe, self.dN)
        s["divv"] = np.einsum("eii->e", s["gradv"])
        s["u"] = np.einsum("qa,eai->eqi", lam, ve)
        s["udot"] = np.einsum("qa,eai->eqi", lam, vde)
        s["pq"] = np.einsum("qa,ea->eq", lam, pe)
        if self.body_force is not None:
            xq = np.einsum("qa,eai->eqi", lam, self.xe)
            s["bq"] = np.asarray(self.body_force(xq, time), dtype=float)
        else:
            s["bq"] = np.zeros_like(s["u"])
        s["conv"] = np.einsum("eij,eqj->eqi", s["gradv"], s["u"])
        s["acc"] = s["udot"] + s["conv"] - s["bq"]
        s["rM"] = self.rho * s["acc"] + s["gradp"][:, None, :]
        if self.stabilization:
            gu = np.einsum("eij,eqj->eqi", self.G, s["u"])
            vGv = np.einsum("eqi,eqi->eq", s["u"], gu)
            quad = (
                self.c_t / dt**2
                + vGv
                + self.c_i * (self.mu / self.rho) ** 2 * self.GG[:, None]
            )
            tau_m = 1.0 / (self.rho * np.sqrt(quad))
            s["gu"] = gu
            s["tau_m"] = tau_m
            s["tau_c"] = 1.0 / (tau_m * self.trG[:, None])
            # Velocity derivatives of tau through the v.Gv term.
            s["dtau_m"] = -(self.rho**2) * tau_m[..., None] ** 3 * gu
            s["dtau_c"] = (
                self.rho**2 * (tau_m**2 * s["tau_c"])[..., None] * gu
            )
        else:
            shape = s["u"].shape[:2]
            s["gu"] = np.zeros_like(s["u"])
            s["tau_m"] = np.zeros(shape)
            s["tau_c"] = np.zeros(shape)
            s["dtau_m"] = np.zeros_like(s["u"])
            s["dtau_c"] = np.zeros_like(s["u"])
        return s

    # -- residual -----------------------------------------------------

    def residual(self, v, vdot, p, outlet_pressures, dt, time=0.0) -> Residual:
        """Assemble the momentum/continuity residual at the given state.

        ``outlet_pressures`` maps each outlet group name to its coupled
        traction magnitude; Dirichlet values are assumed to be embedded
        in ``v`` already.
        """
        for name in self.outlets:
            if name not in outlet_pressures:
                raise ValueError(f"missing pressure for outlet {name!r}")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
            raise ValueError("state contains non-finite values")
        lam = TET4_BARY
        s = self._volume_state(v, vdot, p, dt, time)
        w, dN, rho = self.w, self.dN, self.rho
        tau_m, tau_c, rM = s["tau_m"], s["tau_c"], s["rM"]

        rm = rho * np.einsum("e,qa,eqi->eai", w, lam, s["acc"])
        int_p = w * s["pq"].sum(axis=1)
        rm -= int_p[:, None, None] * dN
        sym = s["gradv"] + s["gradv"].transpose(0, 2, 1)
        rm += self.mu * self.vol[:, None, None] * np.einsum("eij,eaj->eai", sym, dN)
        tdna = np.einsum("eqj,eaj->eqa", s["u"], dN)
        rdna = np.einsum("eqj,eaj->eqa", rM, dN)
        rm += rho * np.einsum("e,eq,eqi,eqa->eai", w, tau_m, rM, tdna)
        gr = np.einsum("eij,eqj->eqi", s["gradv"], rM)
        rm -= rho * np.einsum("e,qa,eq,eqi->eai", w, lam, tau_m, gr)
        rm -= rho * np.einsum("e,eq,eqi,eqa->eai", w, tau_m**2, rM, rdna)
        rm += (w * tau_c.sum(axis=1) * s["divv"])[:, None, None] * dN

        rp = np.einsum("e,qa,e->ea", w, lam, s["divv"])
        rp += np.einsum("e,eq,eqa->ea", w, tau_m, rdna)

        n = self.n_nodes
        momentum_vol = np.zeros(3 * n)
        np.add.at(momentum_vol, self._vdofs.ravel(), rm.reshape(len(self.conn), 12).ravel())
        continuity = np.zeros(n)
        np.add.at(continuity, self.conn.ravel(), rp.ravel())

        momentum_bc = np.zeros(3 * n)
        flow_rates = {}
        for name in self.outlets:
            momentum_bc += outlet_pressures[name] * self._outlet_weights[name]
            flow_rates[name] = surface_flow_rate(self.mesh, name, v.reshape(n, 3))

        momentum_bf = self._backflow_residual(v)
        return Residual(
            momentum=momentum_vol + momentum_bc + momentum_bf,
            continuity=continuity,
            momentum_vol=momentum_vol,
            momentum_bc=momentum_bc,
            momentum_bf=momentum_bf,
            flow_rates=flow_rates,
        )

    def _backflow_surface_state(self, v):
        out = []
        lamt = TRI3_BARY
        for group, tdofs in self._bf_groups:
            vt = v.reshape(self.n_nodes, 3)[group.tris]
            uq = np.einsum("qa,kai->kqi", lamt, vt)
            un = np.einsum("kqi,ki->kq", uq, group.normals)
            out.append((group, tdofs, uq, un))
        return out

    def _backflow_residual(self, v):
        res = np.zeros(3 * self.n_nodes)
        if self.beta == 0.0 or not self._bf_groups:
            return res
        lamt = TRI3_BARY
        for group, tdofs, uq, un in self._backflow_surface_state(v):
            wt = group.areas / len(lamt)
            un_neg = np.minimum(un, 0.0)
            contrib = -self.rho * self.beta * np.einsum(
                "k,kq,qa,kqi->kai", wt, un_neg, lamt, uq
            )
            np.add.at(res, tdofs.ravel(), contrib.reshape(len(tdofs), 9).ravel())
        return res

    # -- tangent ------------------------------------------------------

    def tangent(self, v, vdot, p, outlet_pressures, m_coeffs, dt, alpha,
                time=0.0) -> BlockTangent:
        """Assemble the consistent block tangent.

        ``m_coeffs`` maps outlet names to the flow derivative of the
        reduced model; ``alpha`` provides ``alpha_m``, ``alpha_f`` and
        ``gamma``.  Blocks are restricted to the free dofs.
        """
        lam = TET4_BARY
        s = self._volume_state(v, vdot, p, dt, time)
        w, dN, rho, mu = self.w, self.dN, self.rho, self.mu
        tau_m, tau_c, rM = s["tau_m"], s["tau_c"], s["rM"]
        gradv, divv = s["gradv"], s["divv"]
        E = len(self.conn)
        eye = np.eye(3)

        tdn = np.einsum("eqj,eaj->eqa", s["u"], dN)  # u . dN_a at q
        rdn = np.einsum("eqj,eaj->eqa", rM, dN)  # rM . dN_a at q
        gr = np.einsum("eij,eqj->eqi", gradv, rM)  # gradv rM
        gdn = np.einsum("eik,ebk->ebi", gradv, dN)  # gradv dN_b
        gtdn = np.einsum("ekj,eak->eaj", gradv, dN)  # gradv^T dN_a
        gradv2 = np.einsum("eik,ekj->eij", gradv, gradv)
        dtm, dtc = s["dtau_m"], s["dtau_c"]

        nn = np.einsum("e,qa,qb->eab", w, lam, lam)
        nn_tau = np.einsum("e,qa,qb,eq->eab", w, lam, lam, tau_m)
        dndn = np.einsum("eak,ebk->eab", dN, dN)
        int_n = np.einsum("e,qa->ea", w, lam)
        l_tau = np.einsum("e,qa,eq->ea", w, lam, tau_m)

        # Momentum derivative w.r.t. acceleration.
        mv = rho * np.einsum("eab,ij->eaibj", nn, eye)
        mv += rho**2 * np.einsum("e,eq,qb,eqa,ij->eaibj", w, tau_m, lam, tdn, eye)
        mv -= rho**2 * np.einsum("eab,eij->eaibj", nn_tau, gradv)
        mv -= rho**2 * np.einsum("e,eq,qb,eqa,ij->eaibj", w, tau_m**2, lam, rdn, eye)
        mv -= rho**2 * np.einsum("e,eq,qb,eqi,eaj->eaibj", w, tau_m**2, lam, rM, dN)

        # Momentum derivative w.r.t. velocity.
        kv = rho * np.einsum("e,qa,eqb,ij->eaibj", w, lam, tdn, eye)
        kv += rho * np.einsum("eab,eij->eaibj", nn, gradv)
        kv += mu * self.vol[:, None, None, None, None] * (
            np.einsum("eab,ij->eaibj", dndn, eye)
            + np.einsum("ebi,eaj->eaibj", dN, dN)
        )
        # Cross term 1.
        kv += rho * np.einsum("e,eqj,qb,eqi,eqa->eaibj", w, dtm, lam, rM, tdn)
        kv += rho**2 * np.einsum("e,eq,eqb,eqa,ij->eaibj", w, tau_m, tdn, tdn, eye)
        kv += rho**2 * np.einsum("e,eq,qb,eij,eqa->eaibj", w, tau_m, lam, gradv, tdn)
        kv += rho * np.einsum("e,eq,eqi,qb,eaj->eaibj", w, tau_m, rM, lam, dN)
        # Cross term 2.
        kv -= rho * np.einsum("e,qa,eqj,qb,eqi->eaibj", w, lam, dtm, lam, gr)
        kv -= rho * np.einsum("e,qa,eq,eqb,ij->eaibj", w, lam, tau_m, rdn, eye)
        kv -= rho**2 * np.einsum("e,qa,eq,eij,eqb->eaibj", w, lam, tau_m, gradv, tdn)
        kv -= rho**2 * np.einsum("e,qa,eq,qb,eij->eaibj", w, lam, tau_m, lam, gradv2)
        # Subgrid stress term.
        kv -= 2.0 * rho * np.einsum("e,eq,eqj,qb,eqi,eqa->eaibj", w, tau_m, dtm, lam, rM, rdn)
        kv -= rho**2 * np.einsum("e,eq,eqb,eqa,ij->eaibj", w, tau_m**2, tdn, rdn, eye)
        kv -= rho**2 * np.einsum("e,eq,qb,eij,eqa->eaibj", w, tau_m**2, lam, gradv, rdn)
        kv -= rho**2 * np.einsum("e,eq,eqi,eqb,eaj->eaibj", w, tau_m**2, rM, tdn, dN)
        kv -= rho**2 * np.einsum("e,eq,eqi,qb,eaj->eaibj", w, tau_m**2, rM, lam, gtdn)
        # Grad-div term.
        kv += np.einsum("e,eqj,qb,e,eai->eaibj", w, dtc, lam, divv, dN)
        kv += np.einsum("e,eq,ebj,eai->eaibj", w, tau_c, dN, dN)

        # Momentum derivative w.r.t. pressure.
        gp = -np.einsum("eai,eb->eaib", dN, int_n)
        gp += rho * np.einsum("e,eq,ebi,eqa->eaib", w, tau_m, dN, tdn)
        gp -= np.einsum("ea,ebi->eaib", l_tau, gdn) * rho
        gp -= rho * np.einsum("e,eq,ebi,eqa->eaib", w, tau_m**2, dN, rdn)
        gp -= rho * np.einsum("e,eq,eqi,eab->eaib", w, tau_m**2, rM, dndn)

        # Continuity derivatives.
        mp = rho * np.einsum("e,eq,qb,eaj->eabj", w, tau_m, lam, dN)
        kp = np.einsum("ea,ebj->eabj", int_n, dN)
        kp += np.einsum("e,eqj,qb,eqa->eabj", w, dtm, lam, rdn)
        kp += rho * np.einsum("e,eq,eqb,eaj->eabj", w, tau_m, tdn, dN)
        kp += rho * np.einsum("e,eq,qb,eaj->eabj", w, tau_m, lam, gtdn)
        dp = np.einsum("e,eq,eab->eab", w, tau_m, dndn)

        am, afgdt = alpha.alpha_m, alpha.alpha_f * alpha.gamma * dt
        f_el = (am * mv + afgdt * kv).reshape(E, -1)
        b_el = (afgdt * gp).reshape(E, -1)
        c_el = (am * mp + afgdt * kp).reshape(E, -1)
        d_el = (afgdt * dp).reshape(E, -1)

        n3 = 3 * self.n_nodes
        f_full = sp.coo_matrix(
            (f_el.ravel(), (self._rows_vv, self._cols_vv)), shape=(n3, n3)
        ).tocsr()
        f_full += self._backflow_tangent(v, afgdt)
        b_full = sp.coo_matrix(
            (b_el.ravel(), (self._rows_vp, self._cols_vp)), shape=(n3, self.n_nodes)
        ).tocsr()
        c_full = sp.coo_matrix(
            (c_el.ravel(), (self._rows_pv, self._cols_pv)), shape=(self.n_nodes, n3)
        ).tocsr()
        d_full = sp.coo_matrix(
            (d_el.ravel(), (self._rows_pp, self._cols_pp)),
            shape=(self.n_nodes, self.n_nodes),
        ).tocsr()

        fv, fp = self.dofmap.free_v, self.dofmap.free_p
        tangent = BlockTangent(
            F=f_full[fv][:, fv],
            B=b_full[fv][:, fp],
            C=c_full[fp][:, fv],
            D=d_full[fp][:, fp],
        )
        for name in self.outlets:
            w_k = afgdt * m_coeffs[name]
            a_free = self._outlet_weights[name][fv]
            tangent.rank_one.append((w_k, a_free))
        return tangent

    def _backflow_tangent(self, v, afgdt):
        n3 = 3 * self.n_nodes
        if self.beta == 0.0 or not self._bf_groups:
            return sp.csr_matrix((n3, n3))
        lamt = TRI3_BARY
        eye = np.eye(3)
        rows, cols, vals = [], [], []
        for group, tdofs, uq, un in self._backflow_surface_state(v):
            wt = group.areas / len(lamt)
            un_neg = np.minimum(un, 0.0)
            active = (un < 0.0).astype(float)
            k_el = np.einsum("k,kq,qa,qb,ij->kaibj", wt, un_neg, lamt, lamt, eye)
            k_el += np.einsum("k,kq,qa,kqi,qb,kj->kaibj", wt, active, lamt, uq, lamt, group.normals)
            k_el *= -self.rho * self.beta * afgdt
            K = len(tdofs)
            rows.append(np.repeat(tdofs, 9, axis=1).ravel())
            cols.append(np.tile(tdofs, (1, 9)).ravel())
            vals.append(k_el.reshape(K, -1).ravel())
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n3, n3),
        ).tocsr()

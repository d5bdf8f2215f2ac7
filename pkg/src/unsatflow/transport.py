"""Advection-dispersion transport, one-way coupled to the flow field.

Flow is advanced first each step; transport consumes the resulting water
contents and Darcy fluxes without feeding back.  Because the solute
equation is linear in the new concentration, every scheme (including the
nominally implicit ones) needs exactly one linear solve per step.

The time derivative of theta*c is mass-lumped at each level, mirroring
the flow discretization; the spatial operator theta*D*grad(c) - c*q is
plain Galerkin (no upwinding), so the driver reports the grid Peclet
number to flag advection-dominated runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import constitutive as con
from . import fem
from .flow import GENERAL, SILF2, _strip_intervals, scheme_weights

__all__ = [
    "TransportState",
    "DirichletConc",
    "NoFluxSolute",
    "CauchyInflow",
    "FreeOutflow",
    "TransportSolver",
    "solute_mass",
    "grid_peclet",
]


@dataclass
class TransportState:
    """Nodal concentration paired with the water content of its time level."""

    c: np.ndarray
    theta: np.ndarray
    time: float


@dataclass(frozen=True)
class DirichletConc:
    """Prescribed concentration; `value` may be a callable of time."""

    value: object
    x0: float = None
    x1: float = None


@dataclass(frozen=True)
class NoFluxSolute:
    """Zero total solute flux (natural condition, nothing assembled)."""


@dataclass(frozen=True)
class CauchyInflow:
    """Third-type inflow: prescribed total solute flux rate * conc.

    `rate` is the inward water flux [L/T]; `conc` the inflow concentration
    (constant or callable of time).  The optional strip [x0, x1]
    restricts the condition along the tagged boundary.
    """

    rate: float
    conc: object
    x0: float = None
    x1: float = None


@dataclass(frozen=True)
class FreeOutflow:
    """Zero dispersive flux; advective outflow c q.n is retained."""


def _conc_at(value, t):
    return float(value(t)) if callable(value) else float(value)


def solute_mass(mesh, theta, c):
    """Exact integral of theta_h * c_h (both P1) over the domain."""
    th = np.asarray(theta, dtype=float)[mesh.elements]
    cc = np.asarray(c, dtype=float)[mesh.elements]
    geom = fem.element_geometry(mesh)
    per_elem = (np.einsum("ki,ki->k", th, cc) + th.sum(axis=1) * cc.sum(axis=1))
    return float(np.sum(geom.area / 12.0 * per_elem))


def grid_peclet(mesh, theta_e, q_e, d_tensors):
    """Max element Peclet number |q| h / (2 theta ||D||).

    ||D|| is the spectral norm of the per-element dispersion tensor;
    elements with zero dispersion and nonzero flux return inf.
    """
    q = np.asarray(q_e)
    speed = np.hypot(q[:, 0], q[:, 1])
    d = np.asarray(d_tensors)
    half_tr = 0.5 * (d[:, 0, 0] + d[:, 1, 1])
    det = d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]
    norm = half_tr + np.sqrt(np.maximum(half_tr**2 - det, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = speed * mesh.elem_diam / (2.0 * np.asarray(theta_e) * norm)
    pe = np.where(speed == 0.0, 0.0, pe)
    return float(np.max(pe)) if len(pe) else 0.0


class TransportSolver:
    """Assembles and advances the solute concentration field.

    Parameters
    ----------
    mesh : Mesh
    theta_s : float
        Saturated water content (tortuosity scaling).
    dispersion : constitutive.DispersionParams
    bcs : dict tag -> solute boundary condition
    """

    def __init__(self, mesh, theta_s, dispersion, bcs, axisymmetric=False,
                 solver_method="lu"):
        self.mesh = mesh
        self.theta_s = theta_s
        self.dispersion = dispersion
        self.bcs = dict(bcs)
        self.axisymmetric = axisymmetric
        self.solver_method = solver_method
        self.solve_count = 0
        self.max_peclet = 0.0

        tags = set(mesh.boundary_tags())
        unknown = set(self.bcs) - tags
        if unknown:
            raise ValueError(f"solute BC tags {sorted(unknown)} not in mesh")

        if axisymmetric:
            geom = fem.element_geometry(mesh)
            w = np.repeat(geom.area / 3.0 * geom.centroid_r, 3)
            self.lumped_unit = np.bincount(mesh.elements.ravel(), weights=w,
                                           minlength=mesh.num_nodes)
        else:
            self.lumped_unit = fem.element_geometry(mesh).lumped_unit

        self._setup_boundaries()

    def _setup_boundaries(self):
        mesh = self.mesh
        edge_owner = {}
        for e, tri in enumerate(mesh.elements):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                edge_owner[(min(a, b), max(a, b))] = e

        self.dirichlet_groups = []  # (nodes, value spec)
        self.cauchy_groups = []     # (unit load vector, rate, conc spec)
        outflow_facets, outflow_owner, outflow_normals = [], [], []

        for tag in sorted(self.bcs):
            bc = self.bcs[tag]
            facets = mesh.facets_with_tag(tag)
            if isinstance(bc, DirichletConc):
                sel = np.unique(facets)
                if bc.x0 is not None or bc.x1 is not None:
                    x = mesh.nodes[sel, 0]
                    lo = -np.inf if bc.x0 is None else bc.x0 - 1e-12
                    hi = np.inf if bc.x1 is None else bc.x1 + 1e-12
                    sel = sel[(x >= lo) & (x <= hi)]
                self.dirichlet_groups.append((sel, bc.value))
            elif isinstance(bc, CauchyInflow):
                kept, intervals = _strip_intervals(mesh, facets, bc.x0, bc.x1)
                unit = fem.edge_load_vector(mesh, kept, np.ones((len(kept), 2)),
                                            self.axisymmetric, intervals)
                self.cauchy_groups.append((unit, bc.rate, bc.conc))
            elif isinstance(bc, FreeOutflow):
                for n0, n1 in facets:
                    e = edge_owner[(min(n0, n1), max(n0, n1))]
                    outflow_facets.append((n0, n1))
                    outflow_owner.append(e)
                    outflow_normals.append(self._outward_normal(n0, n1, e))

        self.outflow_facets = np.array(outflow_facets, dtype=np.int64).reshape(-1, 2)
        self.outflow_owner = np.array(outflow_owner, dtype=np.int64)
        self.outflow_normals = np.array(outflow_normals).reshape(-1, 2)

    def _outward_normal(self, n0, n1, elem):
        p0, p1 = self.mesh.nodes[n0], self.mesh.nodes[n1]
        t = (p1 - p0) / np.linalg.norm(p1 - p0)
        normal = np.array([t[1], -t[0]])
        third = self.mesh.nodes[self.mesh.elements[elem]].sum(axis=0) - p0 - p1
        if normal @ (third - 0.5 * (p0 + p1)) > 0.0:
            normal = -normal
        return normal

    # -- per-level operators -------------------------------------------------

    def level_operator(self, flow_state):
        """Spatial operator (dispersion + advection + advective outflow).

        The weak residual tested against v is Op @ c - load(t).
        """
        mesh = self.mesh
        theta_n = flow_state.theta
        if np.any(theta_n <= 0.0):
            raise ValueError("non-positive water content in transport step")
        theta_e = theta_n[mesh.elements].mean(axis=1)
        d_tens = con.dispersion_tensor(self.dispersion, theta_e, self.theta_s,
                                       flow_state.q)
        coeff = theta_e[:, None, None] * d_tens
        op = fem.assemble_stiffness(mesh, coeff, self.axisymmetric)
        op = op + fem.assemble_advection(mesh, flow_state.q, self.axisymmetric)
        if len(self.outflow_facets):
            qn = np.einsum("kd,kd->k", flow_state.q[self.outflow_owner],
                           self.outflow_normals)
            pairs = np.repeat(qn[:, None], 2, axis=1)
            op = op + fem.assemble_boundary_mass(mesh, self.outflow_facets,
                                                 pairs, self.axisymmetric)
        pe = grid_peclet(mesh, theta_e, flow_state.q, d_tens)
        if pe > self.max_peclet:
            self.max_peclet = pe
        return op

    def level_load(self, t):
        """Cauchy inflow load vector at time t."""
        load = np.zeros(self.mesh.num_nodes)
        for unit, rate, conc in self.cauchy_groups:
            load += rate * _conc_at(conc, t) * unit
        return load

    def _lumped(self, theta):
        return self.lumped_unit * theta

    def _solve(self, matrix, rhs, t_new):
        nodes, values = [], []
        for sel, value in self.dirichlet_groups:
            nodes.append(sel)
            values.append(np.full(len(sel), _conc_at(value, t_new)))
        if nodes:
            matrix, rhs = fem.apply_dirichlet(
                matrix, rhs, np.concatenate(nodes), np.concatenate(values),
                copy=False)
        self.solve_count += 1
        return fem.solve_sparse(matrix, rhs, self.solver_method)

    # -- steps ----------------------------------------------------------------

    def bdf1_step(self, flow_1, flow_0, state0, dt):
        """Backward-Euler transport startup (coefficients at t_1)."""
        op = self.level_operator(flow_1)
        m1 = self._lumped(flow_1.theta) / dt
        m0 = self._lumped(flow_0.theta) / dt
        matrix = sp.diags(m1).tocsr() + op
        rhs = m0 * state0.c + self.level_load(flow_1.time)
        c = self._solve(matrix, rhs, flow_1.time)
        return TransportState(c=c, theta=flow_1.theta, time=flow_1.time)

    def transport_step(self, scheme, flow_np1, flow_n, flow_nm1,
                       state_n, state_nm1, dt):
        """Advance the concentration one step with the selected scheme.

        The flow states must already be advanced (one-way coupling): the
        new-level operator uses theta and q at t_{n+1} for the general
        family, while the stabilized scheme freezes the operator at t_n
        and applies the nu-weighted average of the concentration levels.
        """
        if scheme.kind == SILF2:
            return self._silf2_step(scheme.nu, flow_np1, flow_n, flow_nm1,
                                    state_n, state_nm1, dt)
        (a1, a0, am1), (b1, b0, bm1) = scheme_weights(scheme.delta, scheme.mu)
        m_np1 = self._lumped(flow_np1.theta)
        m_n = self._lumped(flow_n.theta)
        m_nm1 = self._lumped(flow_nm1.theta)

        matrix = sp.diags((a1 / dt) * m_np1).tocsr()
        if b1 != 0.0:
            matrix = matrix + b1 * self.level_operator(flow_np1)
        rhs = (-(a0 / dt) * m_n * state_n.c
               - (am1 / dt) * m_nm1 * state_nm1.c
               + b1 * self.level_load(flow_np1.time))
        for w, fl, st in ((b0, flow_n, state_n), (bm1, flow_nm1, state_nm1)):
            if w != 0.0:
                op_k = self.level_operator(fl)
                rhs += w * (self.level_load(fl.time) - op_k @ st.c)
        c = self._solve(matrix, rhs, flow_np1.time)
        return TransportState(c=c, theta=flow_np1.theta, time=flow_np1.time)

    def _silf2_step(self, nu, flow_np1, flow_n, flow_nm1, state_n, state_nm1, dt):
        op_n = self.level_operator(flow_n)
        m_np1 = self._lumped(flow_np1.theta) / (2.0 * dt)
        m_nm1 = self._lumped(flow_nm1.theta) / (2.0 * dt)
        matrix = sp.diags(m_np1).tocsr() + nu * op_n
        rhs = (m_nm1 * state_nm1.c
               - op_n @ ((1.0 - 2.0 * nu) * state_n.c + nu * state_nm1.c)
               + self.level_load(flow_n.time))
        c = self._solve(matrix, rhs, flow_np1.time)
        return TransportState(c=c, theta=flow_np1.theta, time=flow_np1.time)

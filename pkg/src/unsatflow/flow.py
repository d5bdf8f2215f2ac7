"""Time stepping for the mixed-form Richards equation.

Two families of second-order two-step schemes are provided:

* the generalized (delta, mu) family, centered about t_{n+delta}, whose
  members BDF2 (1, 0), SBDF2 (1, 1) and CN2 (1/2, 0) are nonlinear in the
  new time level and are solved by modified Picard iteration;
* the stabilized linear leapfrog (SILF2) that freezes the capacity and
  conductivity at t_n and stabilizes the explicit spatial term with a
  nu-weighted second difference, requiring exactly one linear solve per
  step.

Both families start from a BDF1 (backward Euler) step, itself solved by
modified Picard.  A single time integration is sequential; independent
solver instances share no mutable state and may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import constitutive as con
from . import fem

__all__ = [
    "GENERAL",
    "SILF2",
    "SchemeSpec",
    "PicardConfig",
    "FlowState",
    "DirichletHead",
    "NoFlux",
    "FreeDrainage",
    "InfiltrationFlux",
    "StepError",
    "scheme_weights",
    "RichardsSolver",
]

GENERAL = "general"
SILF2 = "silf2"


def scheme_weights(delta, mu):
    """Weights of the generalized two-step scheme centered at t_{n+delta}.

    Returns
    -------
    (lhs, rhs) : two 3-tuples
        lhs = (delta + 1/2, -2 delta, delta - 1/2) multiplies
        (u^{n+1}, u^n, u^{n-1}) / dt; rhs = (delta + mu, 1 - delta - 2 mu, mu)
        weights the right-hand side at the three levels.  lhs sums to 0 and
        rhs sums to 1 for every (delta, mu).
    """
    lhs = (delta + 0.5, -2.0 * delta, delta - 0.5)
    rhs = (delta + mu, 1.0 - delta - 2.0 * mu, mu)
    return lhs, rhs


@dataclass(frozen=True)
class SchemeSpec:
    """Time-scheme selector.

    ``kind="general"`` uses the (delta, mu) pair; ``kind="silf2"`` uses the
    stabilization parameter nu.
    """

    kind: str = GENERAL
    delta: float = 1.0
    mu: float = 0.0
    nu: float = 1.0

    def __post_init__(self):
        if self.kind == GENERAL:
            if not (0.0 <= self.delta <= 1.0 and 0.0 <= self.mu <= 1.0):
                raise ValueError(
                    f"delta and mu must lie in [0, 1], got "
                    f"({self.delta}, {self.mu})")
        elif self.kind == SILF2:
            if self.nu <= 0.0:
                raise ValueError(f"nu must be > 0, got {self.nu}")
        else:
            raise ValueError(f"unknown scheme kind {self.kind!r}")

    @classmethod
    def bdf2(cls):
        return cls(GENERAL, delta=1.0, mu=0.0)

    @classmethod
    def sbdf2(cls):
        return cls(GENERAL, delta=1.0, mu=1.0)

    @classmethod
    def cn2(cls):
        return cls(GENERAL, delta=0.5, mu=0.0)

    @classmethod
    def silf2(cls, nu=1.0):
        return cls(SILF2, nu=nu)

    @property
    def name(self):
        if self.kind == SILF2:
            return "silf2"
        for label, (d, m) in (("bdf2", (1.0, 0.0)), ("sbdf2", (1.0, 1.0)),
                              ("cn2", (0.5, 0.0))):
            if (self.delta, self.mu) == (d, m):
                return label
        return f"general({self.delta},{self.mu})"


@dataclass(frozen=True)
class PicardConfig:
    """Stopping control of the modified Picard iteration.

    `epsilon` bounds the L2 norm of the head increment between iterates;
    `divergence_window` aborts when the increment grows that many times in
    a row.
    """

    epsilon: float = 1e-6
    max_iters: int = 50
    divergence_window: int = 5

    def __post_init__(self):
        if self.epsilon <= 0.0 or self.max_iters < 1:
            raise ValueError("need epsilon > 0 and max_iters >= 1")


@dataclass
class FlowState:
    """Nodal head/saturation/water-content and element flux at one level."""

    psi: np.ndarray
    s: np.ndarray
    theta: np.ndarray
    q: np.ndarray
    time: float


class StepError(RuntimeError):
    """A time step failed (Picard non-convergence or divergence).

    Carries the increment-norm trace of the failed iteration.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


# -- boundary conditions ---------------------------------------------------


@dataclass(frozen=True)
class DirichletHead:
    """Prescribed head on a tagged boundary.

    `value` is a constant or a callable psi(x, z).  The optional strip
    [x0, x1] restricts the condition to nodes inside it (remaining nodes
    of the tag behave as no-flux).
    """

    value: object
    x0: float = None
    x1: float = None


@dataclass(frozen=True)
class NoFlux:
    """Impervious boundary: the natural condition, no assembly needed."""


@dataclass(frozen=True)
class FreeDrainage:
    """Unit-gradient outflow: dPsi/dn = 0, outward flux K(psi) * (-n.e_z)."""


@dataclass(frozen=True)
class InfiltrationFlux:
    """Constant-rate inflow over an optional strip [x0, x1] of the boundary.

    `rate` is the inward water flux [L/T] (positive into the domain).
    """

    rate: float
    x0: float = None
    x1: float = None


def _strip_intervals(mesh, facets, x0, x1):
    """Facet sub-intervals overlapping the strip x in [x0, x1].

    Returns (kept facets, (k, 2) parameter intervals); facets with no
    overlap are dropped.
    """
    if x0 is None and x1 is None:
        return facets, None
    x0 = -np.inf if x0 is None else x0
    x1 = np.inf if x1 is None else x1
    xa = mesh.nodes[facets[:, 0], 0]
    xb = mesh.nodes[facets[:, 1], 0]
    s0 = np.zeros(len(facets))
    s1 = np.ones(len(facets))
    run = xb - xa
    slanted = np.abs(run) > 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        sa = (x0 - xa) / run
        sb = (x1 - xa) / run
    lo = np.where(slanted, np.minimum(sa, sb), 0.0)
    hi = np.where(slanted, np.maximum(sa, sb), 1.0)
    # Vertical facets: inside the strip iff their x lies in it.
    vertical_out = ~slanted & ((xa < x0) | (xa > x1))
    s0 = np.clip(np.maximum(s0, lo), 0.0, 1.0)
    s1 = np.clip(np.minimum(s1, hi), 0.0, 1.0)
    keep = (s1 - s0 > 1e-12) & ~vertical_out
    return facets[keep], np.column_stack([s0[keep], s1[keep]])


class RichardsSolver:
    """Assembles and advances the head field for one mesh/soil/BC setup.

    Parameters
    ----------
    mesh : Mesh
    soil : constitutive.SoilParams
        Retention model shared by the whole domain.
    bcs : dict tag -> boundary condition
        One of DirichletHead, NoFlux, FreeDrainage, InfiltrationFlux per
        tagged boundary.
    ks_by_region : dict, optional
        Saturated conductivity per region tag; regions not listed use
        soil.ks.  Only ks may vary across regions so that nodal
        saturation stays single-valued.
    include_gravity : bool
        Disables the gravity term and flux contribution when False.
    capacity_floor : float
        Optional lower bound on the lumped capacity coefficient
        (experimentation flag; the stabilized scheme does not need it).
    """

    def __init__(self, mesh, soil, bcs, ks_by_region=None,
                 include_gravity=True, axisymmetric=False,
                 capacity_floor=0.0, solver_method="lu"):
        self.mesh = mesh
        self.soil = soil
        self.bcs = dict(bcs)
        self.include_gravity = include_gravity
        self.axisymmetric = axisymmetric
        self.capacity_floor = capacity_floor
        self.solver_method = solver_method
        self.solve_count = 0

        tags = set(mesh.boundary_tags())
        unknown = set(self.bcs) - tags
        if unknown:
            raise ValueError(f"BC tags {sorted(unknown)} not present in mesh "
                             f"(mesh has {sorted(tags)})")

        ks_by_region = dict(ks_by_region or {})
        ks_map = {r: ks_by_region.get(r, soil.ks)
                  for r in np.unique(mesh.element_region)}
        self.ks_elem = np.array([ks_map[r] for r in mesh.element_region])

        geom = fem.element_geometry(mesh)
        if axisymmetric:
            w = np.repeat(geom.area / 3.0 * geom.centroid_r, 3)
            self.lumped_unit = np.bincount(mesh.elements.ravel(), weights=w,
                                           minlength=mesh.num_nodes)
        else:
            self.lumped_unit = geom.lumped_unit

        self._setup_dirichlet()
        self._setup_flux_boundaries()

    # -- boundary precomputation ------------------------------------------

    def _setup_dirichlet(self):
        nodes, values = [], []
        for tag in sorted(self.bcs):
            bc = self.bcs[tag]
            if not isinstance(bc, DirichletHead):
                continue
            facets = self.mesh.facets_with_tag(tag)
            sel = np.unique(facets)
            if bc.x0 is not None or bc.x1 is not None:
                x = self.mesh.nodes[sel, 0]
                lo = -np.inf if bc.x0 is None else bc.x0 - 1e-12
                hi = np.inf if bc.x1 is None else bc.x1 + 1e-12
                sel = sel[(x >= lo) & (x <= hi)]
            if callable(bc.value):
                vals = np.asarray(bc.value(self.mesh.nodes[sel, 0],
                                           self.mesh.nodes[sel, 1]),
                                  dtype=float)
                vals = np.broadcast_to(vals, sel.shape)
            else:
                vals = np.full(len(sel), float(bc.value))
            nodes.append(sel)
            values.append(vals)

        if nodes:
            nodes = np.concatenate(nodes)
            values = np.concatenate(values)
            # Corner nodes shared by two Dirichlet tags must agree.
            order = np.argsort(nodes, kind="stable")
            nodes, values = nodes[order], values[order]
            dup = np.nonzero(nodes[1:] == nodes[:-1])[0]
            scale = max(1.0, float(np.max(np.abs(values))) if len(values) else 1.0)
            bad = dup[np.abs(values[dup + 1] - values[dup]) > 1e-9 * scale]
            if len(bad):
                n = nodes[bad[0]]
                raise ValueError(
                    f"conflicting Dirichlet head values at corner node {n}: "
                    f"{values[bad[0]]} vs {values[bad[0] + 1]}")
            keep = np.concatenate([[True], nodes[1:] != nodes[:-1]])
            self.dirichlet_nodes = nodes[keep]
            self.dirichlet_values = values[keep]
        else:
            self.dirichlet_nodes = np.empty(0, dtype=np.int64)
            self.dirichlet_values = np.empty(0)

    def _setup_flux_boundaries(self):
        mesh = self.mesh
        edge_owner = {}
        for e, tri in enumerate(mesh.elements):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                edge_owner[(min(a, b), max(a, b))] = e

        self.const_flux_load = np.zeros(mesh.num_nodes)
        self.drain_facets = np.empty((0, 2), dtype=np.int64)
        self.drain_ks = np.empty(0)
        self.drain_nz = np.empty(0)

        drains, drain_ks, drain_nz = [], [], []
        for tag in sorted(self.bcs):
            bc = self.bcs[tag]
            facets = mesh.facets_with_tag(tag)
            if isinstance(bc, InfiltrationFlux):
                kept, intervals = _strip_intervals(mesh, facets, bc.x0, bc.x1)
                pairs = np.full((len(kept), 2), -bc.rate)  # inward: q.n < 0
                self.const_flux_load += fem.edge_load_vector(
                    mesh, kept, pairs, self.axisymmetric, intervals)
            elif isinstance(bc, FreeDrainage):
                for n0, n1 in facets:
                    e = edge_owner[(min(n0, n1), max(n0, n1))]
                    drains.append((n0, n1))
                    drain_ks.append(self.ks_elem[e])
                    drain_nz.append(self._outward_normal_z(n0, n1, e))
        if drains:
            self.drain_facets = np.array(drains, dtype=np.int64)
            self.drain_ks = np.array(drain_ks)
            self.drain_nz = np.array(drain_nz)

    def _outward_normal_z(self, n0, n1, elem):
        p0, p1 = self.mesh.nodes[n0], self.mesh.nodes[n1]
        t = (p1 - p0) / np.linalg.norm(p1 - p0)
        normal = np.array([t[1], -t[0]])
        third = self.mesh.nodes[self.mesh.elements[elem]].sum(axis=0) - p0 - p1
        if normal @ (third - 0.5 * (p0 + p1)) > 0.0:
            normal = -normal
        return normal[1]

    # -- coefficient evaluation --------------------------------------------

    def element_conductivity(self, psi):
        """Element K = Ks * Kr(psi at centroid)."""
        psi_c = np.asarray(psi)[self.mesh.elements].mean(axis=1)
        return self.ks_elem * con.rel_conductivity(self.soil, psi_c)

    def spatial_operator(self, psi):
        """Stiffness A(K(psi)) and load (gravity + boundary fluxes).

        The weak spatial residual tested against v is A @ psi + load.
        """
        k_elem = self.element_conductivity(psi)
        a = fem.assemble_stiffness(self.mesh, k_elem, self.axisymmetric)
        load = np.zeros(self.mesh.num_nodes)
        if self.include_gravity:
            load += fem.assemble_gravity(self.mesh, k_elem, self.axisymmetric)
            if len(self.drain_facets):
                kr = con.rel_conductivity(self.soil,
                                          np.asarray(psi)[self.drain_facets])
                pairs = kr * self.drain_ks[:, None] * (-self.drain_nz)[:, None]
                load += fem.edge_load_vector(self.mesh, self.drain_facets,
                                             pairs, self.axisymmetric)
        load += self.const_flux_load
        return a, load

    def make_state(self, psi, time):
        """Consistent FlowState: S, theta and flux derived from psi."""
        psi = np.asarray(psi, dtype=float)
        s = con.saturation(self.soil, psi)
        theta = self.soil.theta_r + self.soil.phi * s
        q = self.compute_flux(psi)
        return FlowState(psi=psi, s=s, theta=theta, q=q, time=time)

    def compute_flux(self, psi, k_elem=None):
        """Element Darcy flux q = -K (grad psi + e_z)."""
        if k_elem is None:
            k_elem = self.element_conductivity(psi)
        geom = fem.element_geometry(self.mesh)
        grad = np.einsum("kid,ki->kd", geom.grads,
                         np.asarray(psi)[self.mesh.elements])
        if self.include_gravity:
            grad = grad + np.array([0.0, 1.0])
        return -k_elem[:, None] * grad

    def _capacity(self, psi):
        c = con.moisture_capacity(self.soil, psi)
        if self.capacity_floor > 0.0:
            c = np.maximum(c, self.capacity_floor)
        return c

    def _solve(self, matrix, rhs):
        matrix, rhs = fem.apply_dirichlet(matrix, rhs, self.dirichlet_nodes,
                                          self.dirichlet_values, copy=False)
        self.solve_count += 1
        return fem.solve_sparse(matrix, rhs, self.solver_method)

    # -- time stepping -------------------------------------------------------

    def _picard_solve(self, lhs_w, rhs_w, state_n, state_nm1, dt, picard):
        """Modified Picard loop of the generalized scheme.

        Returns (psi, iterations, increment trace).
        """
        a1, a0, am1 = lhs_w
        b1, b0, bm1 = rhs_w
        phi = self.soil.phi
        mesh = self.mesh

        explicit = np.zeros(mesh.num_nodes)
        for w, st in ((b0, state_n), (bm1, state_nm1)):
            if w != 0.0 and st is not None:
                a_k, load_k = self.spatial_operator(st.psi)
                explicit -= w * (a_k @ st.psi + load_k)

        s_hist = a0 * state_n.s
        if am1 != 0.0 and state_nm1 is not None:
            s_hist = s_hist + am1 * state_nm1.s

        psi_m = state_n.psi.copy()
        trace = []
        grow = 0
        for m in range(picard.max_iters):
            a_m, load_m = self.spatial_operator(psi_m)
            c_m = self._capacity(psi_m)
            s_m = con.saturation(self.soil, psi_m)
            md = (a1 / dt) * self.lumped_unit * c_m
            matrix = sp.diags(md).tocsr() + b1 * a_m
            rhs = (md * psi_m
                   - (self.lumped_unit * phi / dt) * (a1 * s_m + s_hist)
                   - b1 * load_m + explicit)
            psi_next = self._solve(matrix, rhs)
            if not np.all(np.isfinite(psi_next)):
                raise StepError(
                    f"Picard iterate {m + 1} produced non-finite head", trace)
            inc = fem.l2_norm_fe(mesh, psi_next - psi_m)
            trace.append(inc)
            psi_m = psi_next
            if inc <= picard.epsilon:
                return psi_m, m + 1, trace
            grow = grow + 1 if (m > 0 and inc > trace[-2]) else 0
            if grow >= picard.divergence_window:
                raise StepError(
                    f"Picard diverged: increment grew {grow} times in a row "
                    f"(last {inc:.3e})", trace)
        raise StepError(
            f"Picard did not converge in {picard.max_iters} iterations "
            f"(last increment {trace[-1]:.3e} > {picard.epsilon:.1e})", trace)

    def bdf1_startup(self, state0, dt, picard):
        """Backward-Euler first step, modified-Picard iterated.

        Returns (FlowState at t0 + dt, picard iterations).
        """
        psi, iters, _ = self._picard_solve(
            (1.0, -1.0, 0.0), (1.0, 0.0, 0.0), state0, None, dt, picard)
        return self.make_state(psi, state0.time + dt), iters

    def picard_two_step(self, scheme, state_n, state_nm1, dt, picard):
        """One (delta, mu)-scheme step from t_n.

        Returns (FlowState at t_n + dt, picard iterations).
        """
        if scheme.kind != GENERAL:
            raise ValueError("picard_two_step needs a general-family scheme")
        lhs_w, rhs_w = scheme_weights(scheme.delta, scheme.mu)
        psi, iters, _ = self._picard_solve(lhs_w, rhs_w, state_n, state_nm1,
                                           dt, picard)
        return self.make_state(psi, state_n.time + dt), iters

    def silf2_step(self, state_n, state_nm1, nu, dt):
        """One stabilized-leapfrog step: a single linear solve.

        All coefficients are frozen at t_n; the stabilization term
        nu*(psi^{n+1} - 2 psi^n + psi^{n-1}) keeps the system solvable in
        saturated zones where the capacity vanishes.
        """
        a_n, load_n = self.spatial_operator(state_n.psi)
        md = self.lumped_unit * self._capacity(state_n.psi) / (2.0 * dt)
        matrix = sp.diags(md).tocsr() + nu * a_n
        rhs = (md * state_nm1.psi
               - a_n @ ((1.0 - 2.0 * nu) * state_n.psi + nu * state_nm1.psi)
               - load_n)
        psi = self._solve(matrix, rhs)
        if not np.all(np.isfinite(psi)):
            raise StepError("stabilized step produced non-finite head")
        return self.make_state(psi, state_n.time + dt)

"""Scenario orchestration: build, run, and instrument one simulation.

`run_scenario` executes the full pipeline: mesh construction, initial
projection (nodal interpolation), BDF1 startup, the selected scheme's
time loop with flow solved before transport each step (one-way
coupling), optional VTK snapshots, and a metrics CSV.  The wall time it
reports covers the time loop only, excluding mesh construction and
output, so scheme timings are comparable.

`run_convergence_sweep` repeats a base scenario over (mesh, dt) levels
and emits a Table-shaped CSV with observed orders;
`run_fertigation_strategy` time-windows the solute inflow concentration
according to the three pulse strategies.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import analytic as an
from . import constitutive as con
from . import flow
from . import mesh as meshmod
from . import output
from . import transport
from . import verification as ver
from .config import BOUNDARY_NAMES, ConfigError

__all__ = [
    "RunResult",
    "build_mesh",
    "run_scenario",
    "run_convergence_sweep",
    "strategy_windows",
    "run_fertigation_strategy",
]


@dataclass
class RunResult:
    """Artifacts of one scenario run."""

    config: object
    mesh: object
    flow_state: flow.FlowState
    transport_state: object = None
    times: np.ndarray = None
    water_mass: np.ndarray = None
    solute_mass: np.ndarray = None
    plume_depth: np.ndarray = None
    c_min: float = math.inf
    c_max: float = -math.inf
    s_min: float = math.inf
    s_max: float = -math.inf
    picard_iters: list = field(default_factory=list)
    startup_iters: int = 0
    flow_solves: int = 0
    transport_solves: int = 0
    wall_time_loop: float = 0.0
    max_peclet: float = 0.0
    l2_psi: float = float("nan")
    l2_s: float = float("nan")
    log: list = field(default_factory=list)


def build_mesh(cfg):
    """Construct the mesh described by cfg.mesh (with optional L regions)."""
    mc = cfg.mesh
    if mc.kind == "structured":
        m = meshmod.generate_structured(mc.nx, mc.nz, mc.lx, mc.lz, mc.diagonal)
    elif mc.kind == "file":
        m = meshmod.load_mesh(mc.path)
    else:
        m = meshmod.load_gmsh(mc.path)
    if mc.lshape_regions:
        polygon = mc.lshape_polygon or meshmod.DEFAULT_LSHAPE_POLYGON
        m = meshmod.tag_lshape_regions(m, polygon)
    return m


def _green_ampt_params(cfg):
    soil = cfg.soil
    psi_d = cfg.initial_psi
    if not isinstance(psi_d, (int, float)):
        raise ConfigError("analytic references need a uniform numeric "
                          "[initial] psi")
    return an.GreenAmptParams(
        length=cfg.mesh.lx, ks=soil.ks, theta_s=soil.theta_s,
        theta_r=soil.theta_r, alpha_v=soil.alpha_v, psi_d=float(psi_d),
        nt=cfg.series_terms)


def _resolve_flow_bcs(cfg, mesh):
    """Map boundary names to tags and materialize fn:/theta: values."""
    gap = None
    resolved = {}
    for name, bc in cfg.flow_bcs.items():
        tag = BOUNDARY_NAMES.get(name)
        if tag is None:
            tag = int(name.removeprefix("tag"))
        if isinstance(bc, flow.DirichletHead) and isinstance(bc.value, str):
            if bc.value.startswith("fn:"):
                fn_name = bc.value[3:]
                if gap is None:
                    gap = _green_ampt_params(cfg)
                p = gap
                if fn_name == "test1_top":
                    value = lambda x, z, p=p: an.top_head_test1(x, p)
                elif fn_name == "test2_top":
                    value = lambda x, z, p=p: an.top_head_test2(x, p)
                else:
                    raise ConfigError(f"unknown boundary function {fn_name!r}")
            elif bc.value.startswith("theta:"):
                theta = float(bc.value[6:])
                s = (theta - cfg.soil.theta_r) / cfg.soil.phi
                value = con.psi_from_saturation(cfg.soil, s)
            else:
                raise ConfigError(f"bad dirichlet value {bc.value!r}")
            bc = flow.DirichletHead(value, bc.x0, bc.x1)
        resolved[tag] = bc
    return resolved


def _resolve_solute_bcs(cfg):
    resolved = {}
    for name, bc in cfg.solute_bcs.items():
        tag = BOUNDARY_NAMES.get(name)
        if tag is None:
            tag = int(name.removeprefix("tag"))
        resolved[tag] = bc
    return resolved


def _initial_psi(cfg, mesh):
    spec = cfg.initial_psi
    if spec is None:
        raise ConfigError("[initial] psi is required")
    if spec == "hydrostatic":
        return -mesh.nodes[:, 1].copy()
    if isinstance(spec, str) and spec.startswith("theta:"):
        theta = float(spec[6:])
        s = (theta - cfg.soil.theta_r) / cfg.soil.phi
        return np.full(mesh.num_nodes, con.psi_from_saturation(cfg.soil, s))
    return np.full(mesh.num_nodes, float(spec))


def _plume_depth(cfg, mesh, c, threshold):
    """Depth below the top boundary of the deepest node with c >= threshold."""
    hit = np.asarray(c) >= threshold
    if not np.any(hit):
        return 0.0
    top = mesh.nodes[:, 1].max()
    return float(top - mesh.nodes[hit, 1].min())


def run_scenario(cfg, out_dir=None, progress=None):
    """Execute one configured simulation and collect metrics.

    Parameters
    ----------
    cfg : ScenarioConfig
    out_dir : str, optional
        When given, VTK snapshots, metrics.csv and run_log.jsonl are
        written there.
    progress : callable, optional
        progress(step, n_steps, t) called after every step.

    Returns
    -------
    RunResult
    """
    cfg.validate()
    mesh = build_mesh(cfg)
    result = RunResult(config=cfg, mesh=mesh, flow_state=None)
    log = result.log
    log.append({"event": "start", "name": cfg.name, "nodes": mesh.num_nodes,
                "elements": mesh.num_elements, "h": mesh.h,
                "dt": cfg.dt, "t_final": cfg.t_final,
                "scheme": cfg.scheme.name})

    fsolver = flow.RichardsSolver(
        mesh, cfg.soil, _resolve_flow_bcs(cfg, mesh),
        ks_by_region=cfg.ks_by_region, include_gravity=cfg.include_gravity,
        axisymmetric=cfg.axisymmetric, capacity_floor=cfg.capacity_floor)

    tsolver = None
    c_state = c_prev = None
    inflow_conc = 0.0
    if cfg.solute_on:
        tsolver = transport.TransportSolver(
            mesh, cfg.soil.theta_s, cfg.dispersion, _resolve_solute_bcs(cfg),
            axisymmetric=cfg.axisymmetric)
        for bc in tsolver.bcs.values():
            conc = getattr(bc, "conc", None) or getattr(bc, "value", None)
            if conc is not None:
                peak = conc(0.0) if callable(conc) else conc
                inflow_conc = max(inflow_conc, float(peak))

    state = fsolver.make_state(_initial_psi(cfg, mesh), 0.0)
    state_prev = None
    if cfg.solute_on:
        c_state = transport.TransportState(
            c=np.full(mesh.num_nodes, cfg.initial_c), theta=state.theta,
            time=0.0)

    n_steps = cfg.n_steps
    snap_every = max(1, n_steps // cfg.snapshots) if cfg.snapshots else 0
    times = np.empty(n_steps + 1)
    water_mass = np.empty(n_steps + 1)
    solute = np.empty(n_steps + 1) if cfg.solute_on else None
    depth = np.empty(n_steps + 1) if cfg.solute_on else None
    depth_threshold = cfg.initial_c + 0.1 * (inflow_conc - cfg.initial_c) \
        if cfg.solute_on else 0.0

    def record(k, st, cs):
        times[k] = st.time
        water_mass[k] = ver.mass_total(mesh, st.theta)
        result.s_min = min(result.s_min, float(st.s.min()))
        result.s_max = max(result.s_max, float(st.s.max()))
        if cs is not None:
            solute[k] = transport.solute_mass(mesh, cs.theta, cs.c)
            depth[k] = _plume_depth(cfg, mesh, cs.c, depth_threshold)
            result.c_min = min(result.c_min, float(cs.c.min()))
            result.c_max = max(result.c_max, float(cs.c.max()))

    def snapshot(k, st, cs):
        if out_dir and (cfg.snapshots and (k % snap_every == 0 or k == n_steps)):
            data = {"psi": st.psi, "S": st.s, "theta": st.theta}
            if cs is not None:
                data["c"] = cs.c
            output.write_vtk(os.path.join(out_dir, f"{cfg.name}_{k:06d}.vtk"),
                             mesh, data, title=f"{cfg.name} t={st.time:g}")

    record(0, state, c_state)
    snapshot(0, state, c_state)

    t_loop = time.perf_counter()
    for k in range(1, n_steps + 1):
        if k == 1:
            new_state, iters = fsolver.bdf1_startup(state, cfg.dt, cfg.picard)
            result.startup_iters = iters
            result.picard_iters.append(iters)
            if cfg.solute_on:
                c_prev = c_state
                c_state = tsolver.bdf1_step(new_state, state, c_state, cfg.dt)
        else:
            if cfg.scheme.kind == flow.SILF2:
                new_state = fsolver.silf2_step(state, state_prev,
                                               cfg.scheme.nu, cfg.dt)
            else:
                new_state, iters = fsolver.picard_two_step(
                    cfg.scheme, state, state_prev, cfg.dt, cfg.picard)
                result.picard_iters.append(iters)
            if cfg.solute_on:
                c_new = tsolver.transport_step(
                    cfg.scheme, new_state, state, state_prev,
                    c_state, c_prev, cfg.dt)
                c_prev, c_state = c_state, c_new
        state_prev, state = state, new_state
        record(k, state, c_state)
        snapshot(k, state, c_state)
        if progress is not None:
            progress(k, n_steps, state.time)
    result.wall_time_loop = time.perf_counter() - t_loop

    result.flow_state = state
    result.transport_state = c_state
    result.times = times
    result.water_mass = water_mass
    result.solute_mass = solute
    result.plume_depth = depth
    result.flow_solves = fsolver.solve_count
    if tsolver is not None:
        result.transport_solves = tsolver.solve_count
        result.max_peclet = tsolver.max_peclet
        if result.max_peclet > 2.0:
            log.append({"event": "warning",
                        "message": f"grid Peclet {result.max_peclet:.2f} > 2: "
                                   f"advection-dominated, plain Galerkin may "
                                   f"oscillate"})

    if cfg.reference in ("test1", "test2"):
        p = _green_ampt_params(cfg)
        t_end = state.time
        if cfg.reference == "test1":
            head = lambda x, z: an.exact_head_test1(x, z, t_end, p)
            sat = lambda x, z: np.minimum(
                an.exact_saturation_test1(x, z, t_end, p), 1.0)
        else:
            head = lambda x, z: an.exact_head_test2(x, z, t_end, p)
            sat = lambda x, z: np.minimum(
                an.exact_saturation_test2(x, z, t_end, p), 1.0)
        result.l2_psi = ver.l2_error_nodal(mesh, state.psi, head)
        result.l2_s = ver.l2_error_nodal(mesh, state.s, sat)

    log.append({"event": "done", "steps": n_steps,
                "flow_solves": result.flow_solves,
                "transport_solves": result.transport_solves,
                "wall_time_loop": result.wall_time_loop,
                "mean_picard": (float(np.mean(result.picard_iters))
                                if result.picard_iters else 0.0)})

    if out_dir:
        report = ver.ErrorReport(cfg.scheme.name, mesh.h, cfg.dt,
                                 result.l2_psi, result.l2_s,
                                 cpu_s=result.wall_time_loop)
        _write_metrics(out_dir, cfg, [report])
        output.write_jsonl(os.path.join(out_dir, f"{cfg.name}_log.jsonl"), log)
    return result


def _write_metrics(out_dir, cfg, reports):
    text = ver.metrics_csv_text(reports)
    output.atomic_write_text(os.path.join(out_dir, f"{cfg.name}_metrics.csv"),
                             text)


def run_convergence_sweep(cfg, levels, out_dir=None, workers=1):
    """Run `cfg` over (nx, dt) refinement levels and tabulate orders.

    Parameters
    ----------
    levels : list of (nx, dt)
        nx of None keeps the base mesh (dt-only refinement); consecutive
        levels must refine dt (and nx, when given) by exactly 2.
    workers : int
        Parallel worker processes for the level runs.

    Returns
    -------
    (reports, results) : list of ErrorReport, list of RunResult
    """
    if len(levels) < 2:
        raise ConfigError("a convergence sweep needs at least 2 levels")
    for (na, dta), (nb, dtb) in zip(levels, levels[1:]):
        if abs(dta / dtb - 2.0) > 1e-9:
            raise ConfigError(f"dt must refine by 2 between levels "
                              f"({dta} -> {dtb})")
        if na is not None and nb is not None and nb != 2 * na:
            raise ConfigError(f"nx must refine by 2 between levels "
                              f"({na} -> {nb})")
    if any(n is not None for n, _ in levels) and cfg.mesh.kind != "structured":
        raise ConfigError("mesh refinement sweeps need a structured mesh")

    configs = [_level_config(cfg, n, dt) for n, dt in levels]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_scenario, configs))
    else:
        results = [run_scenario(c) for c in configs]

    reports = []
    for i, res in enumerate(results):
        order = float("nan")
        if i > 0 and np.isfinite(res.l2_psi) and np.isfinite(results[i - 1].l2_psi):
            order = ver.convergence_order(results[i - 1].l2_psi, res.l2_psi, 2.0)
        reports.append(ver.ErrorReport(
            cfg.scheme.name, res.mesh.h, res.config.dt, res.l2_psi, res.l2_s,
            order=order, cpu_s=res.wall_time_loop))
    if out_dir:
        _write_metrics(out_dir, cfg, reports)
    return reports, results


def _level_config(cfg, nx, dt):
    import copy
    level = copy.deepcopy(cfg)
    if nx is not None:
        level.mesh.nx = nx
        level.mesh.nz = nx
    level.dt = dt
    level.name = f"{cfg.name}_nx{nx or cfg.mesh.nx}_dt{dt:g}"
    return level


def strategy_windows(strategy, duration):
    """Solute-pulse window [t_on, t_off] of fertigation strategy A/B/C.

    A applies the solute from the start for half the irrigation; B delays
    it by a quarter; C delays it by an eighth.  Water is applied for the
    whole duration in every strategy.
    """
    half = 0.5 * duration
    starts = {"A": 0.0, "B": 0.25 * duration, "C": 0.125 * duration}
    try:
        t_on = starts[strategy.upper()]
    except KeyError:
        raise ConfigError(f"unknown strategy {strategy!r}, expected A/B/C") \
            from None
    return t_on, t_on + half


def run_fertigation_strategy(strategy, cfg, out_dir=None):
    """Run a pulse-fertigation scenario with the strategy's solute window.

    The configured solute inflow concentration (Cauchy conc or Dirichlet
    value) is replaced by a time-windowed pulse of height
    cfg.strategy_conc over the window returned by strategy_windows.
    A snapshot is forced at t = 6 h (0.25 duration units past mid-run in
    the reference setup) when it falls on the time grid.
    """
    import copy
    if not cfg.solute_on:
        raise ConfigError("fertigation strategies need [solute] enabled")
    duration = cfg.strategy_duration
    if duration is None:
        duration = cfg.t_final
    t_on, t_off = strategy_windows(strategy, duration)
    c_a = cfg.strategy_conc

    def pulse(t, t_on=t_on, t_off=t_off, c_a=c_a):
        return c_a if t_on <= t <= t_off else 0.0

    run_cfg = copy.deepcopy(cfg)
    run_cfg.name = f"{cfg.name}_strategy{strategy.upper()}"
    for name, bc in list(run_cfg.solute_bcs.items()):
        if isinstance(bc, transport.CauchyInflow):
            run_cfg.solute_bcs[name] = transport.CauchyInflow(
                bc.rate, pulse, bc.x0, bc.x1)
        elif isinstance(bc, transport.DirichletConc):
            run_cfg.solute_bcs[name] = transport.DirichletConc(
                pulse, bc.x0, bc.x1)
    return run_scenario(run_cfg, out_dir=out_dir)

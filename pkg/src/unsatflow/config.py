"""Scenario configuration: INI-style files parsed into a typed config.

The format is flat ``key = value`` pairs under ``[section]`` headers
(diff-friendly and language-agnostic).  ``parse_config`` validates every
field and names the offending key in its errors; ``serialize_config``
renders a normalized form whose re-parse is semantically identical.

Example (the all-Dirichlet infiltration benchmark)::

    [mesh]
    kind = structured
    nx = 12
    nz = 12
    lx = 15.24
    lz = 15.24
    diagonal = crossed

    [soil]
    model = gardner
    theta_s = 0.45
    theta_r = 0.15
    ks = 0.10
    alpha_v = 0.164

    [scheme]
    kind = silf2
    nu = 1.0

    [time]
    dt = 0.02
    t_final = 5.0

    [initial]
    psi = -15.24

    [flow_bc]
    bottom = dirichlet -15.24
    right = dirichlet -15.24
    top = dirichlet fn:test1_top
    left = dirichlet -15.24

    [reference]
    kind = test1
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from . import constitutive as con
from . import flow
from . import transport

__all__ = [
    "ConfigError",
    "MeshConfig",
    "ScenarioConfig",
    "parse_config",
    "parse_config_file",
    "serialize_config",
]

BOUNDARY_NAMES = {"bottom": 1, "right": 2, "top": 3, "left": 4}


class ConfigError(ValueError):
    """Raised on invalid or missing configuration content."""


@dataclass
class MeshConfig:
    kind: str = "structured"          # structured | file | gmsh
    nx: int = 10
    nz: int = 10
    lx: float = 1.0
    lz: float = 1.0
    diagonal: str = "right"
    path: str = ""
    lshape_regions: bool = False
    lshape_polygon: tuple = None


@dataclass
class ScenarioConfig:
    name: str = "run"
    mesh: MeshConfig = field(default_factory=MeshConfig)
    soil: con.SoilParams = None
    ks_by_region: dict = field(default_factory=dict)
    scheme: flow.SchemeSpec = field(default_factory=flow.SchemeSpec.bdf2)
    dt: float = 0.0
    t_final: float = 0.0
    picard: flow.PicardConfig = field(default_factory=flow.PicardConfig)
    initial_psi: object = None        # float | "hydrostatic" | "theta:<value>"
    initial_c: float = 0.0
    flow_bcs: dict = field(default_factory=dict)       # name -> BC object
    solute_on: bool = False
    dispersion: con.DispersionParams = None
    solute_bcs: dict = field(default_factory=dict)
    reference: str = "none"           # none | test1 | test2
    series_terms: int = 200
    axisymmetric: bool = False
    include_gravity: bool = True
    capacity_floor: float = 0.0
    snapshots: int = 0
    strategy_conc: float = 0.0
    strategy_duration: float = None

    def validate(self):
        if self.dt <= 0.0:
            raise ConfigError("time.dt must be > 0")
        if self.t_final < self.dt:
            raise ConfigError("time.t_final must be >= time.dt")
        n = self.t_final / self.dt
        if abs(n - round(n)) > 1e-8 * max(1.0, n):
            raise ConfigError("time.t_final must be an integer number of steps")
        if self.soil is None:
            raise ConfigError("missing [soil] section")
        if not self.flow_bcs:
            raise ConfigError("missing [flow_bc] section")
        if self.solute_on and self.dispersion is None:
            raise ConfigError("[solute] enabled runs need dispersion "
                              "coefficients (lambda_l, lambda_t, lambda_m)")
        if self.reference not in ("none", "test1", "test2"):
            raise ConfigError(f"reference.kind {self.reference!r} unknown")
        if self.reference != "none" and self.soil.model_kind != con.GARDNER:
            raise ConfigError("analytic references require the gardner model")
        return self

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))


def _get(section, key, cast, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"[{section.name}] missing required key {key!r}")
        return default
    raw = section[key].strip()
    try:
        if cast is bool:
            if raw.lower() in ("true", "yes", "on", "1"):
                return True
            if raw.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError as err:
        raise ConfigError(
            f"[{section.name}] {key} = {raw!r}: cannot parse as "
            f"{cast.__name__}") from err


def _parse_kv_tail(parts, context):
    """Parse trailing key=value tokens of a BC spec."""
    opts = {}
    for tok in parts:
        if "=" not in tok:
            raise ConfigError(f"{context}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        try:
            opts[k.strip()] = float(v)
        except ValueError as err:
            raise ConfigError(f"{context}: bad number in {tok!r}") from err
    return opts


def _parse_flow_bc(spec, context):
    parts = spec.split()
    kind = parts[0].lower()
    if kind == "noflux":
        return flow.NoFlux()
    if kind == "free_drainage":
        return flow.FreeDrainage()
    if kind == "dirichlet":
        if len(parts) < 2:
            raise ConfigError(f"{context}: dirichlet needs a value")
        value = parts[1]
        opts = _parse_kv_tail(parts[2:], context)
        if value.startswith("fn:"):
            return flow.DirichletHead(value, opts.get("x0"), opts.get("x1"))
        if value.startswith("theta:"):
            return flow.DirichletHead(value, opts.get("x0"), opts.get("x1"))
        try:
            return flow.DirichletHead(float(value), opts.get("x0"), opts.get("x1"))
        except ValueError as err:
            raise ConfigError(f"{context}: bad dirichlet value {value!r}") from err
    if kind == "infiltration":
        opts = _parse_kv_tail(parts[1:], context)
        if "rate" not in opts:
            raise ConfigError(f"{context}: infiltration needs rate=<flux>")
        return flow.InfiltrationFlux(opts["rate"], opts.get("x0"), opts.get("x1"))
    raise ConfigError(f"{context}: unknown flow BC kind {kind!r}")


def _parse_solute_bc(spec, context):
    parts = spec.split()
    kind = parts[0].lower()
    if kind == "noflux":
        return transport.NoFluxSolute()
    if kind == "outflow_free":
        return transport.FreeOutflow()
    if kind == "dirichlet":
        if len(parts) < 2:
            raise ConfigError(f"{context}: dirichlet needs a value")
        try:
            value = float(parts[1])
        except ValueError as err:
            raise ConfigError(f"{context}: bad concentration {parts[1]!r}") from err
        opts = _parse_kv_tail(parts[2:], context)
        return transport.DirichletConc(value, opts.get("x0"), opts.get("x1"))
    if kind == "cauchy":
        opts = _parse_kv_tail(parts[1:], context)
        if "rate" not in opts or "conc" not in opts:
            raise ConfigError(f"{context}: cauchy needs rate= and conc=")
        return transport.CauchyInflow(opts["rate"], opts["conc"],
                                      opts.get("x0"), opts.get("x1"))
    raise ConfigError(f"{context}: unknown solute BC kind {kind!r}")


def parse_config(text):
    """Parse configuration text into a validated ScenarioConfig."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"config syntax: {err}") from err

    cfg = ScenarioConfig()

    if parser.has_section("run"):
        sec = parser["run"]
        cfg.name = sec.get("name", cfg.name).strip()
        cfg.axisymmetric = _get(sec, "axisymmetric", bool, False)
        cfg.include_gravity = _get(sec, "include_gravity", bool, True)
        cfg.capacity_floor = _get(sec, "capacity_floor", float, 0.0)

    if parser.has_section("mesh"):
        sec = parser["mesh"]
        mc = MeshConfig()
        mc.kind = sec.get("kind", "structured").strip()
        if mc.kind not in ("structured", "file", "gmsh"):
            raise ConfigError(f"[mesh] kind {mc.kind!r} unknown")
        mc.nx = _get(sec, "nx", int, mc.nx)
        mc.nz = _get(sec, "nz", int, mc.nz)
        mc.lx = _get(sec, "lx", float, mc.lx)
        mc.lz = _get(sec, "lz", float, mc.lz)
        mc.diagonal = sec.get("diagonal", "right").strip()
        mc.path = sec.get("path", "").strip()
        mc.lshape_regions = _get(sec, "lshape_regions", bool, False)
        if "lshape_polygon" in sec:
            try:
                pts = [tuple(float(v) for v in pair.split(","))
                       for pair in sec["lshape_polygon"].split(";")]
                if any(len(p) != 2 for p in pts):
                    raise ValueError
                mc.lshape_polygon = tuple(pts)
            except ValueError:
                raise ConfigError("[mesh] lshape_polygon must be "
                                  "'x,z; x,z; ...' pairs") from None
        if mc.kind in ("file", "gmsh") and not mc.path:
            raise ConfigError("[mesh] kind=file/gmsh needs path=")
        cfg.mesh = mc

    if parser.has_section("soil"):
        sec = parser["soil"]
        model = sec.get("model", "gardner").strip()
        try:
            cfg.soil = con.SoilParams(
                theta_s=_get(sec, "theta_s", float, required=True),
                theta_r=_get(sec, "theta_r", float, required=True),
                ks=_get(sec, "ks", float, required=True),
                alpha_v=_get(sec, "alpha_v", float, required=True),
                n_v=_get(sec, "n_v", float, 2.0),
                model_kind=model)
        except ValueError as err:
            raise ConfigError(f"[soil] {err}") from err

    for name in parser.sections():
        if name.startswith("soil.region."):
            try:
                region = int(name.rsplit(".", 1)[1])
            except ValueError:
                raise ConfigError(f"[{name}] region tag must be an integer") from None
            sec = parser[name]
            extra = set(sec.keys()) - {"ks"}
            if extra:
                raise ConfigError(
                    f"[{name}] only ks may vary per region (got {sorted(extra)}); "
                    f"retention parameters are global")
            cfg.ks_by_region[region] = _get(sec, "ks", float, required=True)

    if parser.has_section("scheme"):
        sec = parser["scheme"]
        kind = sec.get("kind", "bdf2").strip().lower()
        try:
            if kind == "bdf2":
                cfg.scheme = flow.SchemeSpec.bdf2()
            elif kind == "sbdf2":
                cfg.scheme = flow.SchemeSpec.sbdf2()
            elif kind == "cn2":
                cfg.scheme = flow.SchemeSpec.cn2()
            elif kind == "silf2":
                cfg.scheme = flow.SchemeSpec.silf2(_get(sec, "nu", float, 1.0))
            elif kind == "general":
                cfg.scheme = flow.SchemeSpec(
                    flow.GENERAL, delta=_get(sec, "delta", float, required=True),
                    mu=_get(sec, "mu", float, required=True))
            else:
                raise ConfigError(f"[scheme] kind {kind!r} unknown")
        except ValueError as err:
            raise ConfigError(f"[scheme] {err}") from err

    if parser.has_section("time"):
        sec = parser["time"]
        cfg.dt = _get(sec, "dt", float, required=True)
        cfg.t_final = _get(sec, "t_final", float, required=True)

    if parser.has_section("picard"):
        sec = parser["picard"]
        try:
            cfg.picard = flow.PicardConfig(
                epsilon=_get(sec, "epsilon", float, 1e-6),
                max_iters=_get(sec, "max_iters", int, 50))
        except ValueError as err:
            raise ConfigError(f"[picard] {err}") from err

    if parser.has_section("initial"):
        sec = parser["initial"]
        raw = sec.get("psi", "").strip()
        if raw == "hydrostatic":
            cfg.initial_psi = "hydrostatic"
        elif raw.startswith("theta:"):
            cfg.initial_psi = raw
        elif raw:
            try:
                cfg.initial_psi = float(raw)
            except ValueError:
                raise ConfigError(f"[initial] psi = {raw!r} not understood") from None
        cfg.initial_c = _get(sec, "c", float, 0.0)

    if parser.has_section("flow_bc"):
        sec = parser["flow_bc"]
        for key in sec:
            if key not in BOUNDARY_NAMES and not key.startswith("tag"):
                raise ConfigError(f"[flow_bc] unknown boundary {key!r}")
            cfg.flow_bcs[key] = _parse_flow_bc(sec[key], f"[flow_bc] {key}")

    if parser.has_section("solute"):
        sec = parser["solute"]
        cfg.solute_on = _get(sec, "enabled", bool, False)
        if cfg.solute_on:
            try:
                cfg.dispersion = con.DispersionParams(
                    lambda_l=_get(sec, "lambda_l", float, required=True),
                    lambda_t=_get(sec, "lambda_t", float, required=True),
                    lambda_m=_get(sec, "lambda_m", float, 0.0))
            except ValueError as err:
                raise ConfigError(f"[solute] {err}") from err

    if parser.has_section("solute_bc"):
        sec = parser["solute_bc"]
        for key in sec:
            if key not in BOUNDARY_NAMES and not key.startswith("tag"):
                raise ConfigError(f"[solute_bc] unknown boundary {key!r}")
            cfg.solute_bcs[key] = _parse_solute_bc(sec[key], f"[solute_bc] {key}")

    if parser.has_section("reference"):
        sec = parser["reference"]
        cfg.reference = sec.get("kind", "none").strip()
        cfg.series_terms = _get(sec, "nt", int, 200)

    if parser.has_section("output"):
        sec = parser["output"]
        cfg.snapshots = _get(sec, "snapshots", int, 0)

    if parser.has_section("strategy"):
        sec = parser["strategy"]
        cfg.strategy_conc = _get(sec, "c_a", float, 0.0)
        cfg.strategy_duration = _get(sec, "duration", float, None)

    return cfg.validate()


def parse_config_file(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _bc_to_text(bc):
    if isinstance(bc, flow.NoFlux) or isinstance(bc, transport.NoFluxSolute):
        return "noflux"
    if isinstance(bc, flow.FreeDrainage):
        return "free_drainage"
    if isinstance(bc, transport.FreeOutflow):
        return "outflow_free"
    if isinstance(bc, flow.DirichletHead):
        val = bc.value if isinstance(bc.value, str) else repr(float(bc.value))
        out = f"dirichlet {val}"
    elif isinstance(bc, flow.InfiltrationFlux):
        out = f"infiltration rate={bc.rate!r}"
    elif isinstance(bc, transport.DirichletConc):
        out = f"dirichlet {float(bc.value)!r}"
    elif isinstance(bc, transport.CauchyInflow):
        out = f"cauchy rate={bc.rate!r} conc={float(bc.conc)!r}"
    else:
        raise ConfigError(f"cannot serialize BC {bc!r}")
    for k in ("x0", "x1"):
        v = getattr(bc, k, None)
        if v is not None:
            out += f" {k}={v!r}"
    return out


def serialize_config(cfg):
    """Render a ScenarioConfig back to normalized INI text."""
    parser = configparser.ConfigParser()
    parser["run"] = {
        "name": cfg.name,
        "axisymmetric": str(cfg.axisymmetric).lower(),
        "include_gravity": str(cfg.include_gravity).lower(),
        "capacity_floor": repr(cfg.capacity_floor),
    }
    mesh_sec = {"kind": cfg.mesh.kind}
    if cfg.mesh.kind == "structured":
        mesh_sec.update(nx=str(cfg.mesh.nx), nz=str(cfg.mesh.nz),
                        lx=repr(cfg.mesh.lx), lz=repr(cfg.mesh.lz),
                        diagonal=cfg.mesh.diagonal)
    else:
        mesh_sec["path"] = cfg.mesh.path
    mesh_sec["lshape_regions"] = str(cfg.mesh.lshape_regions).lower()
    if cfg.mesh.lshape_polygon:
        mesh_sec["lshape_polygon"] = "; ".join(
            f"{x!r},{z!r}" for x, z in cfg.mesh.lshape_polygon)
    parser["mesh"] = mesh_sec

    parser["soil"] = {
        "model": cfg.soil.model_kind,
        "theta_s": repr(cfg.soil.theta_s),
        "theta_r": repr(cfg.soil.theta_r),
        "ks": repr(cfg.soil.ks),
        "alpha_v": repr(cfg.soil.alpha_v),
        "n_v": repr(cfg.soil.n_v),
    }
    for region, ks in sorted(cfg.ks_by_region.items()):
        parser[f"soil.region.{region}"] = {"ks": repr(ks)}

    if cfg.scheme.kind == flow.SILF2:
        parser["scheme"] = {"kind": "silf2", "nu": repr(cfg.scheme.nu)}
    else:
        name = cfg.scheme.name
        if name in ("bdf2", "sbdf2", "cn2"):
            parser["scheme"] = {"kind": name}
        else:
            parser["scheme"] = {"kind": "general", "delta": repr(cfg.scheme.delta),
                                "mu": repr(cfg.scheme.mu)}

    parser["time"] = {"dt": repr(cfg.dt), "t_final": repr(cfg.t_final)}
    parser["picard"] = {"epsilon": repr(cfg.picard.epsilon),
                        "max_iters": str(cfg.picard.max_iters)}
    init = {}
    if cfg.initial_psi is not None:
        init["psi"] = (cfg.initial_psi if isinstance(cfg.initial_psi, str)
                       else repr(float(cfg.initial_psi)))
    init["c"] = repr(cfg.initial_c)
    parser["initial"] = init
    parser["flow_bc"] = {k: _bc_to_text(v) for k, v in cfg.flow_bcs.items()}
    solute = {"enabled": str(cfg.solute_on).lower()}
    if cfg.dispersion is not None:
        solute.update(lambda_l=repr(cfg.dispersion.lambda_l),
                      lambda_t=repr(cfg.dispersion.lambda_t),
                      lambda_m=repr(cfg.dispersion.lambda_m))
    parser["solute"] = solute
    if cfg.solute_bcs:
        parser["solute_bc"] = {k: _bc_to_text(v) for k, v in cfg.solute_bcs.items()}
    parser["reference"] = {"kind": cfg.reference, "nt": str(cfg.series_terms)}
    parser["output"] = {"snapshots": str(cfg.snapshots)}
    if cfg.strategy_conc or cfg.strategy_duration is not None:
        strat = {"c_a": repr(cfg.strategy_conc)}
        if cfg.strategy_duration is not None:
            strat["duration"] = repr(cfg.strategy_duration)
        parser["strategy"] = strat

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()

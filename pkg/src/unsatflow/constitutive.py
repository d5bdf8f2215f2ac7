"""Soil hydraulic relations and solute dispersion coefficients.

Two retention models are supported:

* Gardner (exponential): S = exp(alpha_v * psi), Kr = S, with capillary
  length psi_c = 1/alpha_v.  This is the model for which closed-form
  transient infiltration solutions exist.
* van Genuchten - Mualem: S = [1 + (alpha_v*|psi|)^n]^(-m) with
  m = 1 - 1/n, Kr = sqrt(S) * [1 - (1 - S^(1/m))^m]^2.

All functions accept scalars or numpy arrays for psi and are pure, so
they are safe for unrestricted concurrent use.  For psi >= 0 the medium
is saturated: S = 1, Kr = 1 and the moisture capacity vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SoilParams",
    "DispersionParams",
    "saturation",
    "moisture_capacity",
    "rel_conductivity",
    "kr_from_saturation",
    "psi_from_saturation",
    "water_content",
    "tortuosity",
    "dispersion_tensor",
]

GARDNER = "gardner"
VAN_GENUCHTEN = "van_genuchten"


@dataclass(frozen=True)
class SoilParams:
    """Soil constants for one material.

    theta_s, theta_r are volumetric water contents [-], ks the saturated
    conductivity [L/T], alpha_v the fitting coefficient [1/L] and n_v the
    van Genuchten exponent (> 1, unused for Gardner).
    """

    theta_s: float
    theta_r: float
    ks: float
    alpha_v: float
    n_v: float = 2.0
    model_kind: str = GARDNER

    def __post_init__(self):
        if not (0.0 <= self.theta_r < self.theta_s <= 1.0):
            raise ValueError(
                f"need 0 <= theta_r < theta_s <= 1, got "
                f"theta_r={self.theta_r}, theta_s={self.theta_s}")
        if self.ks <= 0.0:
            raise ValueError(f"ks must be > 0, got {self.ks}")
        if self.alpha_v <= 0.0:
            raise ValueError(f"alpha_v must be > 0, got {self.alpha_v}")
        if self.model_kind not in (GARDNER, VAN_GENUCHTEN):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")
        if self.model_kind == VAN_GENUCHTEN and self.n_v <= 1.0:
            raise ValueError(f"van Genuchten needs n_v > 1, got {self.n_v}")

    @property
    def phi(self):
        """Fillable porosity theta_s - theta_r."""
        return self.theta_s - self.theta_r

    @property
    def psi_c(self):
        """Capillary length 1/alpha_v."""
        return 1.0 / self.alpha_v

    @property
    def m_v(self):
        """Mualem-constrained van Genuchten m = 1 - 1/n."""
        return 1.0 - 1.0 / self.n_v


@dataclass(frozen=True)
class DispersionParams:
    """Dispersivities [L] and molecular diffusion coefficient [L^2/T]."""

    lambda_l: float
    lambda_t: float
    lambda_m: float = 0.0

    def __post_init__(self):
        if not (self.lambda_l >= self.lambda_t >= 0.0):
            raise ValueError(
                f"need lambda_l >= lambda_t >= 0, got "
                f"({self.lambda_l}, {self.lambda_t})")
        if self.lambda_m < 0.0:
            raise ValueError(f"lambda_m must be >= 0, got {self.lambda_m}")


def saturation(p, psi):
    """Effective saturation S(psi) in (0, 1]; S = 1 for psi >= 0."""
    psi = np.asarray(psi, dtype=float)
    neg = np.minimum(psi, 0.0)
    if p.model_kind == GARDNER:
        s = np.exp(p.alpha_v * neg)
    else:
        s = (1.0 + (p.alpha_v * np.abs(neg)) ** p.n_v) ** (-p.m_v)
    return s if s.ndim else float(s)


def moisture_capacity(p, psi):
    """Specific moisture capacity C(psi) = d theta / d psi >= 0 [1/L]."""
    psi = np.asarray(psi, dtype=float)
    neg = np.minimum(psi, 0.0)
    if p.model_kind == GARDNER:
        c = p.phi * p.alpha_v * np.exp(p.alpha_v * neg)
    else:
        m, n, a = p.m_v, p.n_v, p.alpha_v
        ah = a * np.abs(neg)
        c = p.phi * m * n * a * ah ** (n - 1.0) * (1.0 + ah**n) ** (-m - 1.0)
    c = np.where(psi >= 0.0, 0.0, c)
    return c if c.ndim else float(c)


def kr_from_saturation(p, s):
    """Relative conductivity as a function of effective saturation."""
    s = np.asarray(s, dtype=float)
    if p.model_kind == GARDNER:
        kr = s
    else:
        m = p.m_v
        kr = np.sqrt(s) * (1.0 - (1.0 - s ** (1.0 / m)) ** m) ** 2
    return kr if kr.ndim else float(kr)


def rel_conductivity(p, psi):
    """Relative hydraulic conductivity Kr(psi) in (0, 1]; 1 for psi >= 0."""
    return kr_from_saturation(p, saturation(p, psi))


def psi_from_saturation(p, s):
    """Invert the retention curve: psi = psi_c * J(S), psi = 0 at S = 1."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0.0) or np.any(s > 1.0):
        raise ValueError("saturation must lie in (0, 1]")
    if p.model_kind == GARDNER:
        psi = p.psi_c * np.log(s)
    else:
        with np.errstate(divide="ignore"):
            j = -np.where(s < 1.0,
                          (s ** (-1.0 / p.m_v) - 1.0) ** (1.0 / p.n_v), 0.0)
        psi = p.psi_c * j
    return psi if psi.ndim else float(psi)


def water_content(p, psi):
    """Volumetric water content theta = theta_r + phi * S(psi)."""
    return p.theta_r + p.phi * saturation(p, psi)


def tortuosity(theta, theta_s):
    """Millington-Quirk tortuosity tau = theta^(7/3) / theta_s^2."""
    theta = np.asarray(theta, dtype=float)
    tau = theta ** (7.0 / 3.0) / theta_s**2
    return tau if tau.ndim else float(tau)


# Velocity magnitudes below this cutoff use purely molecular dispersion;
# removes the 0/0 singularity of the mechanical terms at v = 0.
VELOCITY_CUTOFF = 1e-12


def dispersion_tensor(dp, theta, theta_s, q):
    """Velocity-dependent dispersion tensor, one 2x2 block per input flux.

    With pore velocity v = q/theta the tensor is
    ``lambda_t*|v|*I + (lambda_l - lambda_t)*v v^T/|v| + tau(theta)*lambda_m*I``,
    symmetric positive semidefinite with eigenvalues
    lambda_l*|v| + tau*lambda_m along v and lambda_t*|v| + tau*lambda_m
    across it.

    Parameters
    ----------
    dp : DispersionParams
    theta : float or (k,) array
        Water content (> 0).
    theta_s : float
        Saturated water content (for the tortuosity factor).
    q : (2,) or (k, 2) array
        Darcy flux.

    Returns
    -------
    (2, 2) or (k, 2, 2) array
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    qb = q.reshape(1, 2) if single else q
    theta = np.broadcast_to(np.asarray(theta, dtype=float), qb.shape[:1]).copy()
    if np.any(theta <= 0.0):
        raise ValueError("theta must be > 0 in dispersion_tensor")

    v = qb / theta[:, None]
    speed = np.hypot(v[:, 0], v[:, 1])
    mol = tortuosity(theta, theta_s) * dp.lambda_m

    d = np.zeros((len(qb), 2, 2))
    d[:, 0, 0] = mol
    d[:, 1, 1] = mol

    moving = speed > VELOCITY_CUTOFF
    if np.any(moving):
        vm, sm = v[moving], speed[moving]
        dl, dt = dp.lambda_l, dp.lambda_t
        d[moving, 0, 0] += dt * sm + (dl - dt) * vm[:, 0] ** 2 / sm
        d[moving, 1, 1] += dt * sm + (dl - dt) * vm[:, 1] ** 2 / sm
        dxz = (dl - dt) * vm[:, 0] * vm[:, 1] / sm
        d[moving, 0, 1] += dxz
        d[moving, 1, 0] += dxz

    return d[0] if single else d

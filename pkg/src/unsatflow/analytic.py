"""Exact transient infiltration solutions for the exponential-model tests.

With the Gardner relations (S = exp(alpha_v*psi), Kr = S) the scaled
saturation u = exp(alpha_v*psi) obeys the linear PDE

    d * du/dt = laplace(u) + alpha_v * du/dz,      d = alpha_v*phi/ks,

on the square [0, L]^2, which separates into modes
exp(alpha_v*(L - z)/2) * trig(x) * G(z, t).  Each vertical profile G is a
steady sinh ratio plus an alternating Fourier sine series in z that
cancels it at t = 0:

    G(z, t) = sinh(b z)/sinh(b L)
              + (2/(L d)) * sum_p (-1)^p (lam_p / nu_p) sin(lam_p z) e^{-nu_p t}

with lam_p = p*pi/L, b_i = sqrt(alpha_v^2/4 + (i*pi/L)^2) and
nu_p = (b^2 + lam_p^2)/d.  Both benchmark tests below are combinations of
such modes; the pressure head is psi = psi_c * log(u).

Test 1 drives the top boundary with the two-mode profile
(3/4) sin(pi x/L) - (1/4) sin(3 pi x/L) and holds psi_d on the other three
sides (x-modes i = 1, 3).

Test 2 drives the top with (1 - cos(2 pi x/L))/2 and has no-flux lateral
sides, which selects the x-modes i = 0 (constant) and i = 2
(cos(2 pi x/L)); their x-derivative vanishes at x = 0, L.

Series are summed with Kahan compensation from p = nt down to 1: the
terms alternate in sign and the truncation tests assert 1e-10 agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GreenAmptParams",
    "exact_saturation_test1",
    "exact_saturation_test2",
    "exact_head_test1",
    "exact_head_test2",
    "top_head_test1",
    "top_head_test2",
]


@dataclass(frozen=True)
class GreenAmptParams:
    """Domain, soil and truncation parameters of the analytic solutions.

    `nt` is the number of transient series terms retained (paper-style
    default 200).
    """

    length: float
    ks: float
    theta_s: float
    theta_r: float
    alpha_v: float
    psi_d: float
    nt: int = 200

    def __post_init__(self):
        if self.nt < 1:
            raise ValueError("nt must be >= 1")
        if self.psi_d >= 0.0:
            raise ValueError("initial head psi_d must be negative (dry soil)")

    @property
    def phi(self):
        return self.theta_s - self.theta_r

    @property
    def psi_c(self):
        return 1.0 / self.alpha_v

    @property
    def zeta(self):
        """exp(alpha_v * psi_d), the scaled initial saturation in (0, 1)."""
        return float(np.exp(self.alpha_v * self.psi_d))

    @property
    def dcoef(self):
        """Diffusion scaling d = alpha_v * phi / ks."""
        return self.alpha_v * self.phi / self.ks

    def beta(self, i):
        """Vertical decay rate of x-mode i: sqrt(alpha_v^2/4 + (i pi/L)^2)."""
        return np.sqrt(self.alpha_v**2 / 4.0 + (i * np.pi / self.length) ** 2)


def _sinh_ratio(beta, z, length):
    """sinh(beta z)/sinh(beta L), evaluated overflow-safely."""
    z = np.asarray(z, dtype=float)
    # exp(beta(z-L)) * (1 - e^{-2 beta z}) / (1 - e^{-2 beta L})
    return (np.exp(beta * (z - length)) * -np.expm1(-2.0 * beta * z)
            / -np.expm1(-2.0 * beta * length))


def _mode_profile(p, i, z, t):
    """Vertical profile G_i(z, t) of x-mode i (steady part + transient series)."""
    z = np.asarray(z, dtype=float)
    length, d = p.length, p.dcoef
    beta2 = p.beta(i) ** 2
    steady = _sinh_ratio(p.beta(i), z, length)

    total = np.zeros_like(z)
    comp = np.zeros_like(z)
    for k in range(p.nt, 0, -1):
        lam = k * np.pi / length
        nu = (beta2 + lam**2) / d
        term = ((-1.0) ** k) * (lam / nu) * np.sin(lam * z) * np.exp(-nu * t)
        # Kahan-compensated accumulation
        y = term - comp
        s = total + y
        comp = (s - total) - y
        total = s
    return steady + (2.0 / (length * d)) * total


def exact_saturation_test1(x, z, t, p):
    """Scaled saturation u = zeta + Psi0 for the all-Dirichlet test."""
    x = np.asarray(x, dtype=float)
    zeta = p.zeta
    amp = (1.0 - zeta) * np.exp(0.5 * p.alpha_v * (p.length - np.asarray(z)))
    g1 = _mode_profile(p, 1, z, t)
    g3 = _mode_profile(p, 3, z, t)
    psi0 = amp * (0.75 * np.sin(np.pi * x / p.length) * g1
                  - 0.25 * np.sin(3.0 * np.pi * x / p.length) * g3)
    return zeta + psi0


def exact_saturation_test2(x, z, t, p):
    """Scaled saturation for the no-flux-laterals test (x-modes 0 and 2)."""
    x = np.asarray(x, dtype=float)
    zeta = p.zeta
    amp = 0.5 * (1.0 - zeta) * np.exp(0.5 * p.alpha_v * (p.length - np.asarray(z)))
    g0 = _mode_profile(p, 0, z, t)
    g2 = _mode_profile(p, 2, z, t)
    psi0 = amp * (g0 - np.cos(2.0 * np.pi * x / p.length) * g2)
    return zeta + psi0


def exact_head_test1(x, z, t, p):
    """Pressure head psi(x, z, t) of the all-Dirichlet infiltration test."""
    u = exact_saturation_test1(x, z, t, p)
    return p.psi_c * np.log(u)


def exact_head_test2(x, z, t, p):
    """Pressure head psi(x, z, t) of the no-flux-laterals infiltration test."""
    u = exact_saturation_test2(x, z, t, p)
    return p.psi_c * np.log(u)


def top_head_test1(x, p):
    """Top-boundary head: psi_c log(zeta + (1-zeta)[3/4 sin - 1/4 sin 3x])."""
    x = np.asarray(x, dtype=float)
    zeta = p.zeta
    profile = (0.75 * np.sin(np.pi * x / p.length)
               - 0.25 * np.sin(3.0 * np.pi * x / p.length))
    return p.psi_c * np.log(zeta + (1.0 - zeta) * profile)


def top_head_test2(x, p):
    """Top-boundary head: psi_c log(zeta + (1-zeta)(1 - cos(2 pi x/L))/2)."""
    x = np.asarray(x, dtype=float)
    zeta = p.zeta
    profile = 0.5 * (1.0 - np.cos(2.0 * np.pi * x / p.length))
    return p.psi_c * np.log(zeta + (1.0 - zeta) * profile)

"""
Photic Module

Han rate functions and their derivatives, layer light intensities along the
trajectories, and the extinction / biomass closures of the two volume regimes.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import root_scalar

from errors import DomainError, NoCompensationError, PondTooDeepError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RateBundle:
    """Rate functions of the reduced Han model at given intensities (1/s)."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    dalpha: np.ndarray
    dbeta: np.ndarray
    dgamma: np.ndarray
    dzeta: np.ndarray


@dataclass(frozen=True)
class LightField:
    """I_n(x_i) for every layer and node, shape (Nz, Nx+1), and the extinction used."""

    intensity: np.ndarray
    epsilon: float

    @property
    def layers(self):
        return self.intensity.shape[0]


@dataclass(frozen=True)
class BiomassClosure:
    """Compensation-condition closure of the variable-volume regime."""

    areal_biomass: float  # X V / S, gC/m^2
    epsilon: float  # 1/m
    concentration: float  # X, gC/m^3
    alpha2: float
    alpha3: float


def rates(intensity, han):
    """
    Han rate functions and their intensity derivatives.

    alpha(I) = kd tau (sigma I)^2 / (tau sigma I + 1) + kr, beta = alpha - kr,
    zeta(I) = k sigma I / (tau sigma I + 1) - R, gamma = zeta + R.

    Args:
        intensity: light intensity (scalar or array), umol/m^2/s
        han: HanParams

    Returns:
        RateBundle: arrays shaped like the input
    """
    intensity = np.asarray(intensity, dtype=float)
    if np.any(intensity < 0):
        raise DomainError("light intensity must not be negative")
    s = han.sigma * intensity
    denom = han.tau * s + 1.0
    beta = han.kd * han.tau * s**2 / denom
    gamma = han.k * s / denom
    dbeta = han.kd * han.tau * han.sigma**2 * intensity * (han.tau * s + 2.0) / denom**2
    dgamma = han.k * han.sigma / denom**2
    return RateBundle(
        alpha=beta + han.kr,
        beta=beta,
        gamma=gamma,
        zeta=gamma - han.R,
        dalpha=dbeta,
        dbeta=dbeta,
        dgamma=dgamma,
        dzeta=dgamma,
    )


def _depth_fractions(nz):
    return (np.arange(1, nz + 1) - 0.5) / nz


def light_field(field, light, nz, epsilon):
    """
    Light seen by each layer along the lap.

    I_n(x) = Is exp(-eps (n - 1/2) h(x) / Nz); this is the Beer-Lambert law
    evaluated on the trajectories with the u(0)/u(x) stretch folded in.

    Args:
        field: hydro.FlowField
        light: LightParams
        nz: number of layers
        epsilon: extinction coefficient, 1/m

    Returns:
        LightField
    """
    optical = epsilon * _depth_fractions(nz)[:, None] * field.h[None, :]
    return LightField(intensity=light.Is * np.exp(-optical), epsilon=float(epsilon))


def trajectory_light_field(field, light, nz, epsilon):
    """Reference form Is exp(-eps u(0)/u(x) (eta(0) - z_n(0))), used for cross-checks."""
    start_depth = field.eta[0] - (field.eta[0] - _depth_fractions(nz) * field.h[0])
    stretch = field.u[0] / field.u
    optical = epsilon * stretch[None, :] * start_depth[:, None]
    return LightField(intensity=light.Is * np.exp(-optical), epsilon=float(epsilon))


def light_partials(lights, partials, h, depsilon):
    """
    dI_n/da_m for every layer, node and coefficient, shape (Nz, Nx+1, M+1).

    dI_n = -I_n (n - 1/2)/Nz (eps dh + h deps); deps is nonzero only through a0.

    Args:
        lights: LightField
        partials: hydro.FlowPartials
        h: node heights
        depsilon: d eps / d a_m for m = 0 .. M
    """
    depsilon = np.asarray(depsilon, dtype=float)
    weight = -lights.intensity * _depth_fractions(lights.layers)[:, None]
    optical = lights.epsilon * partials.dh[None, :, :] + h[None, :, None] * depsilon[None, None, :]
    return weight[:, :, None] * optical


def extinction_fixed_volume(a0, light):
    """
    Extinction that lets bottom_fraction of the surface light reach depth a0.

    Returns:
        float: ln(1 / bottom_fraction) / a0
    """
    if not a0 > 0:
        raise DomainError(f"a0 must be strictly positive, got {a0}")
    return float(np.log(1.0 / light.bottom_fraction) / a0)


def compensation_residual(intensity, han):
    """Growth rate at the steady photoinhibition state C = beta/alpha, scaled by u."""
    r = rates(intensity, han)
    return r.zeta - r.gamma * r.beta / r.alpha


def compensation_intensity(han, surface_intensity, rtol=1e-10):
    """
    Smallest positive light at which photosynthesis balances respiration.

    The bracket is found by scanning a log grid over (0, 1000 Is]; the root is
    then refined by bisection.

    Args:
        han: HanParams
        surface_intensity: Is, used only to size the search interval
        rtol: relative width of the final bracket

    Returns:
        float: I_comp, umol/m^2/s
    """
    if compensation_residual(0.0, han) >= 0.0:
        # R = 0: no respiration, the dark state is already balanced.
        return 0.0
    upper = 1e3 * surface_intensity
    grid = np.logspace(-8, np.log10(upper), 2001)
    values = compensation_residual(grid, han)
    positive = np.flatnonzero(values > 0.0)
    if not positive.size:
        raise NoCompensationError(f"growth stays negative for every intensity up to {upper:.6g}")
    first = positive[0]
    lower = 0.0 if first == 0 else grid[first - 1]
    solution = root_scalar(
        compensation_residual,
        args=(han,),
        bracket=(lower, grid[first]),
        method="bisect",
        xtol=1e-300,
        rtol=rtol,
    )
    logger.info(f"Compensation intensity {solution.root:.10g} after {solution.iterations} bisections")
    return float(solution.root)


def areal_biomass(a0, light, compensation):
    """
    Biomass closure of the variable-volume regime.

    X V / S = alpha2 - alpha3 a0 with alpha2 = ln(Is / I_comp) / alpha0 and
    alpha3 = alpha1 / alpha0; the extinction making the bottom light equal to
    I_comp is eps = ln(Is / I_comp) / a0 and X = (eps - alpha1) / alpha0.

    Raises:
        PondTooDeepError: if the areal biomass is not positive
    """
    if not a0 > 0:
        raise DomainError(f"a0 must be strictly positive, got {a0}")
    if not 0 < compensation < light.Is:
        raise DomainError(f"compensation intensity {compensation} must lie in (0, Is)")
    optical = np.log(light.Is / compensation)
    alpha2 = optical / light.alpha0
    alpha3 = light.alpha1 / light.alpha0
    biomass = alpha2 - alpha3 * a0
    if biomass <= 0:
        raise PondTooDeepError(f"mean height {a0:.6g} m leaves no room for biomass (limit {alpha2 / alpha3:.6g} m)")
    epsilon = optical / a0
    return BiomassClosure(
        areal_biomass=float(biomass),
        epsilon=float(epsilon),
        concentration=float((epsilon - light.alpha1) / light.alpha0),
        alpha2=float(alpha2),
        alpha3=float(alpha3),
    )

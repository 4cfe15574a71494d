"""
Objective Module

Average growth rate (fixed volume) and areal productivity (variable volume)
of the raceway for one mixing permutation and one topography, with their
exact discrete gradients.

The discrete objective is the composite trapezoid rule on the Heun nodes of
(1/(L Nz)) sum_n (-gamma(I_n) C_n + zeta(I_n)) / u, multiplied by the areal
biomass alpha2 - alpha3 a0 in the variable regime. Gradients come from the
discrete adjoint in dynamics.solve_adjoint, so they match finite differences
of this very function to rounding.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import integrate

import dynamics
import hydro
import photic
from errors import InfeasibleProfileError

logger = logging.getLogger(__name__)


class Regime(str, Enum):
    """Volume regime: a0 frozen (fixed) or a0 a decision variable (variable)."""

    FIXED = "fixed"
    VARIABLE = "variable"


@dataclass(frozen=True)
class ObjectiveReport:
    """
    Objective value and diagnostics for one (permutation, profile) pair.

    value: mu_bar (fixed) or Pi = mu_bar (alpha2 - alpha3 a0) (variable)
    gradient: over a1..aM (fixed) or a0..aM (variable), None if not requested
    layer_contributions: per-layer share of mu_bar, summing to mu_bar
    height_margin: min_i h(x_i) - h_floor, negative when infeasible
    """

    value: float
    gradient: np.ndarray | None
    mu_bar: float
    areal_biomass: float | None
    epsilon: float
    subcritical: bool
    height_margin: float
    max_froude: float
    layer_contributions: np.ndarray
    periodic_residual: float
    adjoint_residual: float | None = None
    flow: hydro.FlowField | None = field(default=None, repr=False)
    lights: photic.LightField | None = field(default=None, repr=False)
    state: dynamics.PeriodicState | None = field(default=None, repr=False)

    @property
    def feasible(self):
        return self.subcritical and self.height_margin >= 0.0


class Raceway:
    """
    Evaluation context: validated parameters plus the quantities every
    evaluation shares (trapezoid weights, height floor, compensation light).
    Picklable, so worker processes can receive it as is.
    """

    def __init__(self, params):
        self.params = params.validate()
        self.grid = params.grid
        self.weights = self.grid.trapezoid_weights()
        self.height_floor = hydro.height_floor(params.flow, params.limits)
        self._compensation = None

    @property
    def compensation(self):
        """Compensation intensity, solved on first use."""
        if self._compensation is None:
            self._compensation = photic.compensation_intensity(self.params.han, self.params.light.Is)
        return self._compensation

    def closure(self, a0):
        return photic.areal_biomass(a0, self.params.light, self.compensation)

    def extinction(self, a0, regime):
        if Regime(regime) is Regime.FIXED:
            return photic.extinction_fixed_volume(a0, self.params.light)
        return self.closure(a0).epsilon

    def depth_limit(self):
        """Mean height at which the variable-volume biomass closure vanishes."""
        closure = self.closure(self.params.a0)
        return closure.alpha2 / closure.alpha3

    def initial_profile(self):
        """Flat start around the configured a0; a = 0 (fixed), a~ = [a0, 0, .., 0] (variable)."""
        return hydro.FourierProfile.flat(self.params.a0, self.grid.M)

    def profile_from(self, theta, regime):
        theta = np.asarray(theta, dtype=float)
        if Regime(regime) is Regime.FIXED:
            return hydro.FourierProfile(self.params.a0, tuple(theta))
        return hydro.FourierProfile(float(theta[0]), tuple(theta[1:]))

    def decision_vector(self, profile, regime):
        if Regime(regime) is Regime.FIXED:
            return np.array(profile.a, dtype=float)
        return profile.coefficients

    def evaluate(self, perm, profile, regime, gradient=True, keep_fields=False):
        """
        Objective, optional gradient and feasibility diagnostics.

        Args:
            perm: dynamics.Permutation, size Nz
            profile: hydro.FourierProfile
            regime: Regime or its string value
            gradient: also run the adjoint and assemble the gradient
            keep_fields: attach flow, light and state fields to the report

        Returns:
            ObjectiveReport

        Raises:
            InfeasibleProfileError: h <= 0 or Fr >= 1 at some node
            PondTooDeepError: variable regime with a0 beyond the biomass limit
        """
        regime = Regime(regime)
        p = self.params
        grid = self.grid
        if perm.size != grid.Nz:
            raise ValueError(f"permutation of size {perm.size} does not match Nz = {grid.Nz}")

        flow = hydro.flow_field(profile, p.flow, grid)
        if not flow.subcritical:
            node = int(np.argmax(flow.Fr))
            raise InfeasibleProfileError(node, flow.h[node], reason=f"gives Froude number {flow.Fr[node]:.6g} >= 1")

        if regime is Regime.FIXED:
            epsilon = photic.extinction_fixed_volume(profile.a0, p.light)
            factor, biomass, alpha3 = 1.0, None, 0.0
        else:
            closure = self.closure(profile.a0)
            epsilon = closure.epsilon
            factor = biomass = closure.areal_biomass
            alpha3 = closure.alpha3

        lights = photic.light_field(flow, p.light, grid.Nz, epsilon)
        r = photic.rates(lights.intensity, p.han)
        u = flow.u
        decay_rate, source = r.alpha / u, r.beta / u
        lap = dynamics.lap_map_from_rates(decay_rate, source, grid.step)
        state = dynamics.solve_periodic(perm, lap)
        C = state.field

        growth = (-r.gamma * C + r.zeta) / u
        scale = 1.0 / (grid.L * grid.Nz)
        layers = scale * (growth @ self.weights)
        mu_bar = float(layers.sum())

        grad = None
        adjoint_residual = None
        if gradient:
            adjoint = dynamics.solve_adjoint(perm, lights, flow, p.han, grid, volume_factor=factor, lap=lap)
            adjoint_residual = adjoint.residual
            partials = hydro.flow_partials(profile, p.flow, grid)
            depsilon = np.zeros(profile.modes + 1)
            depsilon[0] = -epsilon / profile.a0
            dI = photic.light_partials(lights, partials, flow.h, depsilon)
            du = partials.du[None, :, :]

            # Explicit dependence of the quadrature on the coefficients.
            dgrowth = ((-r.dgamma * C + r.dzeta) / u)[:, :, None] * dI - (growth / u)[:, :, None] * du
            grad = factor * scale * np.einsum("nim,i->m", dgrowth, self.weights)

            # Dependence through the Heun step coefficients m_i, c_i.
            step = grid.step
            lam = adjoint.field[:, 1:]
            weighted = lam * C[:, :-1]
            a_lo, a_hi = decay_rate[:, :-1], decay_rate[:, 1:]
            b_lo = source[:, :-1]
            g_rate = np.zeros_like(decay_rate)
            g_source = np.zeros_like(source)
            g_rate[:, :-1] += weighted * (-0.5 * step + 0.5 * step**2 * a_hi)
            g_rate[:, 1:] += weighted * (-0.5 * step + 0.5 * step**2 * a_lo) - lam * 0.5 * step**2 * b_lo
            g_source[:, :-1] += lam * (0.5 * step - 0.5 * step**2 * a_hi)
            g_source[:, 1:] += lam * 0.5 * step
            drate = (r.dalpha / u)[:, :, None] * dI - (decay_rate / u)[:, :, None] * du
            dsource = (r.dbeta / u)[:, :, None] * dI - (source / u)[:, :, None] * du
            grad = grad + np.einsum("ni,nim->m", g_rate, drate) + np.einsum("ni,nim->m", g_source, dsource)

            if regime is Regime.FIXED:
                grad = grad[1:]
            else:
                grad[0] -= alpha3 * mu_bar

        return ObjectiveReport(
            value=mu_bar * factor,
            gradient=grad,
            mu_bar=mu_bar,
            areal_biomass=biomass,
            epsilon=epsilon,
            subcritical=flow.subcritical,
            height_margin=float(flow.h.min() - self.height_floor),
            max_froude=flow.max_froude,
            layer_contributions=layers,
            periodic_residual=state.residual,
            adjoint_residual=adjoint_residual,
            flow=flow if keep_fields else None,
            lights=lights if keep_fields else None,
            state=state if keep_fields else None,
        )


def mu_bar(perm, profile, raceway):
    """Average growth rate of the fixed-volume regime."""
    return raceway.evaluate(perm, profile, Regime.FIXED, gradient=False).value


def grad_mu_bar(perm, profile, raceway):
    """Gradient of mu_bar over a1..aM."""
    return raceway.evaluate(perm, profile, Regime.FIXED).gradient


def productivity(perm, profile, raceway):
    """Areal productivity Pi = mu_bar (alpha2 - alpha3 a0) of the variable-volume regime."""
    return raceway.evaluate(perm, profile, Regime.VARIABLE, gradient=False).value


def grad_productivity(perm, profile, raceway):
    """Gradient of Pi over a0..aM."""
    return raceway.evaluate(perm, profile, Regime.VARIABLE).gradient


def objective_value(perm, profile, raceway, regime):
    return raceway.evaluate(perm, profile, regime, gradient=False).value


def flat_vertical_average(raceway, regime=Regime.FIXED, a0=None):
    """
    Continuous average growth rate for a flat bed and identity mixing.

    Every layer then keeps its depth z, C = beta/alpha, and the discrete
    objective is the midpoint rule in z of
    (1/a0) int_0^a0 (zeta - gamma beta/alpha)(Is exp(-eps z)) / u dz,
    integrated here with adaptive quadrature.

    Args:
        raceway: Raceway
        regime: selects the extinction rule
        a0: mean height, defaults to the configured one

    Returns:
        float: mu_bar of the continuous vertical limit
    """
    p = raceway.params
    a0 = p.a0 if a0 is None else float(a0)
    epsilon = raceway.extinction(a0, regime)
    u = p.flow.Q0 / a0

    def integrand(z):
        return float(photic.compensation_residual(p.light.Is * np.exp(-epsilon * z), p.han))

    value, error = integrate.quad(integrand, 0.0, a0, epsabs=0.0, epsrel=1e-12, limit=200)
    logger.debug(f"Vertical average quadrature error estimate {error:.3g}")
    return value / (a0 * u)


def finite_difference_gradient(func, theta, step=1e-4):
    """
    Fourth-order central differences of a scalar function.

    Uses the five-point stencil (f(-2h) - 8 f(-h) + 8 f(h) - f(2h)) / 12h, so
    the truncation error stays well below round-off at h = 1e-4.

    Args:
        func: callable on a 1-D array
        theta: point of evaluation
        step: absolute perturbation per coordinate

    Returns:
        np.ndarray: approximate gradient
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        shift = np.zeros_like(theta)
        shift[k] = step
        near = func(theta + shift) - func(theta - shift)
        far = func(theta + 2.0 * shift) - func(theta - 2.0 * shift)
        grad[k] = (8.0 * near - far) / (12.0 * step)
    return grad


def relative_errors(analytic, reference):
    """|analytic - reference| / max(|reference_k|, 1e-3 max|reference|), per coordinate."""
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if not reference.size:
        return reference
    floor = 1e-3 * np.max(np.abs(reference))
    denom = np.maximum(np.abs(reference), floor)
    denom[denom == 0.0] = 1.0
    return np.abs(analytic - reference) / denom


@dataclass(frozen=True)
class GradientCheckRow:
    instance: int
    L: float
    Nz: int
    M: int
    sigma: str
    coefficients: tuple
    analytic: tuple
    finite_difference: tuple
    max_rel_error: float


@dataclass(frozen=True)
class GradientCheckReport:
    regime: Regime
    rows: list
    step: float

    @property
    def max_rel_error(self):
        return max((row.max_rel_error for row in self.rows), default=0.0)


def random_instance(rng, params, regime, lengths=(1.0, 10.0), layer_counts=(2, 3), mode_counts=(1, 2), amplitude=0.05):
    """
    Draw one random (permutation, profile, raceway) test instance.

    Amplitudes lie in [-amplitude, amplitude]; the variable regime also draws
    a0 in [0.3, 0.5] m, so every node height stays far above the floor.
    """
    length = float(rng.choice(lengths))
    nz = int(rng.choice(layer_counts))
    modes = int(rng.choice(mode_counts))
    raceway = Raceway(params.with_overrides(L=length, Nz=nz, M=modes))
    perm = dynamics.Permutation(rng.permutation(nz))
    amplitudes = tuple(rng.uniform(-amplitude, amplitude, size=modes))
    a0 = params.a0 if Regime(regime) is Regime.FIXED else float(rng.uniform(0.3, 0.5))
    return perm, hydro.FourierProfile(a0, amplitudes), raceway


def gradient_check(params, regime, instances=20, seed=42, step=1e-4, **draw):
    """
    Compare adjoint gradients with fourth-order central differences on random instances.

    Args:
        params: ModelParams, dx and the physical constants are kept
        regime: Regime
        instances: number of random instances
        seed: numpy Generator seed
        step: finite-difference step
        **draw: forwarded to random_instance (lengths, layer_counts, mode_counts)

    Returns:
        GradientCheckReport
    """
    regime = Regime(regime)
    rng = np.random.default_rng(seed)
    rows = []
    for instance in range(instances):
        perm, profile, raceway = random_instance(rng, params, regime, **draw)
        theta = raceway.decision_vector(profile, regime)
        analytic = raceway.evaluate(perm, profile, regime).gradient

        def value(point):
            return objective_value(perm, raceway.profile_from(point, regime), raceway, regime)

        reference = finite_difference_gradient(value, theta, step=step)
        error = float(np.max(relative_errors(analytic, reference), initial=0.0))
        grid = raceway.grid
        rows.append(
            GradientCheckRow(
                instance=instance,
                L=grid.L,
                Nz=grid.Nz,
                M=grid.M,
                sigma=perm.label,
                coefficients=tuple(float(v) for v in theta),
                analytic=tuple(float(v) for v in analytic),
                finite_difference=tuple(float(v) for v in reference),
                max_rel_error=error,
            )
        )
        logger.info(f"Gradient check {instance}: L={grid.L:g} Nz={grid.Nz} M={grid.M} sigma={perm.label} error {error:.3e}")
    return GradientCheckReport(regime=regime, rows=rows, step=step)

"""
Hydrodynamics Module

Steady subcritical shallow-water fields over one lap of the raceway. The
water height h is the parameterized unknown (truncated sine series around the
mean height a0) and the bottom z_b is derived from the Bernoulli relation, so
no root solve for h is ever needed.
"""

import logging
from dataclasses import dataclass

import numpy as np

from errors import DomainError, InfeasibleProfileError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FourierProfile:
    """Water height h(x) = a0 + sum_m a_m sin(2 m pi x / L)."""

    a0: float
    a: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(value) for value in self.a))
        if not self.a0 > 0:
            raise DomainError(f"mean height a0 must be strictly positive, got {self.a0}")

    @classmethod
    def flat(cls, a0, modes):
        return cls(a0=float(a0), a=(0.0,) * modes)

    @property
    def modes(self):
        return len(self.a)

    @property
    def coefficients(self):
        """All coefficients [a0, a1, .., aM] as an array."""
        return np.array((self.a0, *self.a))

    def volume(self, length):
        """Water volume per unit width, a0 * L."""
        return self.a0 * length


@dataclass(frozen=True)
class FlowField:
    """Node-wise steady flow over x_0 .. x_Nx."""

    x: np.ndarray
    h: np.ndarray
    u: np.ndarray
    zb: np.ndarray
    eta: np.ndarray
    Fr: np.ndarray
    M0: float

    @property
    def subcritical(self):
        return bool(np.all(self.Fr < 1.0))

    @property
    def max_froude(self):
        return float(self.Fr.max())

    def bernoulli(self, g):
        """u^2/2 + g (h + zb) at every node; constant for a steady state."""
        return 0.5 * self.u**2 + g * (self.h + self.zb)


@dataclass(frozen=True)
class FlowPartials:
    """Derivatives of h and u with respect to a0 .. aM, shape (Nx+1, M+1)."""

    dh: np.ndarray
    du: np.ndarray


def fourier_basis(grid, modes=None):
    """
    Columns [1, sin(2 pi x/L), .., sin(2 M pi x/L)] evaluated at the grid nodes.

    Args:
        grid: Discretization
        modes: number of sine modes, defaults to grid.M

    Returns:
        np.ndarray: shape (Nx+1, modes+1)
    """
    modes = grid.M if modes is None else modes
    x = grid.nodes()
    basis = np.ones((x.size, modes + 1))
    for m in range(1, modes + 1):
        basis[:, m] = np.sin(2.0 * m * np.pi * x / grid.L)
    # Both ends of the lap sit on zeros of every sine mode.
    basis[0, 1:] = 0.0
    basis[-1, 1:] = 0.0
    return basis


def eval_height(profile, grid):
    """
    Water height at every node.

    Args:
        profile: FourierProfile
        grid: Discretization

    Returns:
        np.ndarray: h(x_i), i = 0 .. Nx

    Raises:
        InfeasibleProfileError: if h(x_i) <= 0 at some node
    """
    h = fourier_basis(grid, profile.modes) @ profile.coefficients
    bad = np.flatnonzero(h <= 0.0)
    if bad.size:
        raise InfeasibleProfileError(bad[0], h[bad[0]])
    return h


def flow_field(profile, flow, grid):
    """
    Steady flow fields for a profile; M0 is bound through h(0) = a0.

    Args:
        profile: FourierProfile
        flow: FlowParams
        grid: Discretization

    Returns:
        FlowField
    """
    h = eval_height(profile, grid)
    bound = flow.bound(profile.a0)
    u = flow.Q0 / h
    zb = bound.M0 / flow.g - flow.Q0**2 / (2.0 * flow.g * h**2) - h
    eta = h + zb
    froude = u / np.sqrt(flow.g * h)
    return FlowField(x=grid.nodes(), h=h, u=u, zb=zb, eta=eta, Fr=froude, M0=bound.M0)


def height_floor(flow, limits):
    """
    Smallest admissible node height.

    Fr = Q0 / (sqrt(g) h^1.5) <= 1 - delta is the same as
    h >= (Q0 / ((1 - delta) sqrt(g)))^(2/3), so both feasibility conditions
    collapse to one lower bound on h.
    """
    critical = (flow.Q0 / ((1.0 - limits.froude_margin) * np.sqrt(flow.g))) ** (2.0 / 3.0)
    return max(limits.h_min, float(critical))


def layer_depths(field, nz):
    """
    Depth of every layer trajectory, shape (Nz, Nx+1).

    z_n(x) = eta(x) - (n - 1/2) h(x) / Nz: the layering set at x = 0 is carried
    along the flow, so adjacent trajectories stay h(x)/Nz apart.
    """
    fractions = (np.arange(1, nz + 1) - 0.5) / nz
    return field.eta[None, :] - fractions[:, None] * field.h[None, :]


def trajectory_depths(field, nz):
    """Same depths from the Lagrangian form z(x) = eta(x) + u(0)/u(x) (z(0) - eta(0))."""
    start = layer_depths(field, nz)[:, 0]
    stretch = field.u[0] / field.u
    return field.eta[None, :] + stretch[None, :] * (start[:, None] - field.eta[0])


def layer_depth(profile, flow, grid, n, node=None):
    """
    Depth z_n of layer n (1-based) at one node, or along the whole lap.

    Args:
        profile: FourierProfile
        flow: FlowParams
        grid: Discretization
        n: layer index, 1 <= n <= Nz
        node: node index, or None for every node

    Returns:
        float or np.ndarray
    """
    if not 1 <= n <= grid.Nz:
        raise DomainError(f"layer index must lie in 1..{grid.Nz}, got {n}")
    depths = layer_depths(flow_field(profile, flow, grid), grid.Nz)[n - 1]
    return depths if node is None else float(depths[node])


def flow_partials(profile, flow, grid):
    """
    Sensitivities of h and u to the coefficients a0 .. aM.

    dh/da0 = 1, dh/dam = sin(2 m pi x / L), du/dam = -(Q0 / h^2) dh/dam.
    """
    basis = fourier_basis(grid, profile.modes)
    h = basis @ profile.coefficients
    du = -(flow.Q0 / h**2)[:, None] * basis
    return FlowPartials(dh=basis, du=du)

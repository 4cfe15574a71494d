"""
Photoinhibition Dynamics Module

Per-layer linear ODE C' = (-alpha(I_n) C + beta(I_n)) / u integrated with
Heun's scheme over one lap, the permutation-coupled periodic boundary value
problem C(0) = P C(L), and the exact discrete adjoint of the same scheme.

Because the ODE is linear, one lap of Heun's scheme is an affine map
C_n(L) = A_n C_n(0) + b_n per layer. The periodic problem then reduces to one
scalar equation per cycle of the permutation.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from errors import PermutationError
from photic import rates

logger = logging.getLogger(__name__)


class Permutation:
    """
    Mixing device as a bijection on layers.

    Images are stored 0-based; user-facing labels are 1-based. The matrix view
    has P[n][sigma(n)] = 1, and the lap boundary condition is C(0) = P C(L),
    i.e. C_n(0) = C_sigma(n)(L).
    """

    def __init__(self, images):
        images = tuple(int(value) for value in images)
        if sorted(images) != list(range(len(images))):
            raise PermutationError(f"{[value + 1 for value in images]} is not a permutation of 1..{len(images)}")
        self.images = images

    @classmethod
    def identity(cls, size):
        return cls(range(size))

    @classmethod
    def from_images(cls, images):
        """Build from 1-based images sigma(1) .. sigma(Nz)."""
        return cls(value - 1 for value in images)

    @classmethod
    def parse(cls, text):
        """Parse the dash-separated 1-based form, e.g. '2-4-6-7-5-3-1'."""
        try:
            images = [int(part) for part in text.strip().split("-")]
        except ValueError:
            raise PermutationError(f"cannot read permutation '{text}'")
        return cls.from_images(images)

    def __len__(self):
        return len(self.images)

    def __eq__(self, other):
        return isinstance(other, Permutation) and self.images == other.images

    def __hash__(self):
        return hash(self.images)

    def __repr__(self):
        return f"Permutation({self.label})"

    @property
    def size(self):
        return len(self.images)

    @property
    def label(self):
        return "-".join(str(value + 1) for value in self.images)

    @cached_property
    def array(self):
        return np.array(self.images, dtype=int)

    @cached_property
    def inverse(self):
        inverse = [0] * self.size
        for n, image in enumerate(self.images):
            inverse[image] = n
        return Permutation(inverse)

    def matrix(self):
        P = np.zeros((self.size, self.size))
        P[np.arange(self.size), self.array] = 1.0
        return P

    def cycles(self):
        """Disjoint cycles (0-based), each starting at its smallest element."""
        seen = [False] * self.size
        cycles = []
        for start in range(self.size):
            if seen[start]:
                continue
            cycle = []
            n = start
            while not seen[n]:
                seen[n] = True
                cycle.append(n)
                n = self.images[n]
            cycles.append(cycle)
        return cycles

    def cycle_notation(self):
        """Standard notation following sigma, e.g. '(1 2 4 7)(3 6)(5)'."""
        return "".join("(" + " ".join(str(n + 1) for n in cycle) + ")" for cycle in self.cycles())

    def order(self):
        """Smallest K with sigma^K = identity."""
        return math.lcm(*(len(cycle) for cycle in self.cycles()))

    def is_identity(self):
        return self.images == tuple(range(self.size))


def all_permutations(size):
    """Every permutation of `size` layers in lexicographic order of images."""
    return (Permutation(images) for images in itertools.permutations(range(size)))


@dataclass(frozen=True)
class AffineLapMap:
    """
    One lap of Heun's scheme for every layer.

    step_mult/step_offset: per-step affine coefficients, C_{i+1} = m_i C_i + c_i, shape (Nz, Nx)
    decay: trajectory started from C(0) = 1 with beta forced to 0, shape (Nz, Nx+1)
    forced: trajectory started from C(0) = 0 with the full right side, shape (Nz, Nx+1)
    """

    step_mult: np.ndarray
    step_offset: np.ndarray
    decay: np.ndarray
    forced: np.ndarray
    step: float

    @property
    def A(self):
        return self.decay[:, -1]

    @property
    def b(self):
        return self.forced[:, -1]

    def propagate(self, c0):
        """Full trajectories C_n(x_i) started from C_n(0) = c0[n]."""
        return self.decay * np.asarray(c0, dtype=float)[:, None] + self.forced


@dataclass(frozen=True)
class PeriodicState:
    """Periodic photoinhibition state for one permutation."""

    c0: np.ndarray
    field: np.ndarray
    residual: float


@dataclass(frozen=True)
class AdjointState:
    """Discrete adjoint p_n(x_i); p[:, 0] pairs with the periodic condition."""

    field: np.ndarray
    residual: float


def heun_coefficients(decay_rate, source, step):
    """
    Per-step affine coefficients of Heun's scheme for C' = -a C + b.

    C_{i+1} = C_i + step/2 (k1 + k2), k1 = -a_i C_i + b_i,
    k2 = -a_{i+1} (C_i + step k1) + b_{i+1}, i.e. C_{i+1} = m_i C_i + c_i with
    m_i = 1 - step/2 (a_i + a_{i+1}) + step^2/2 a_i a_{i+1} and
    c_i = step/2 (b_i + b_{i+1} - step a_{i+1} b_i).
    """
    a_lo, a_hi = decay_rate[:, :-1], decay_rate[:, 1:]
    b_lo, b_hi = source[:, :-1], source[:, 1:]
    mult = 1.0 - 0.5 * step * (a_lo + a_hi) + 0.5 * step**2 * a_lo * a_hi
    offset = 0.5 * step * (b_lo + b_hi - step * a_hi * b_lo)
    return mult, offset


def _forward_sweep(mult, offset):
    """Solution of y_{i+1} = m_i y_i + c_i, y_0 = 0, vectorized over layers."""
    layers, steps = mult.shape
    out = np.zeros((steps + 1, layers))
    m, c = mult.T.copy(), offset.T.copy()
    for i in range(steps):
        out[i + 1] = m[i] * out[i] + c[i]
    return out.T


def _backward_sweep(mult, source):
    """Solution of y_i = m_i y_{i+1} + s_i for i < Nx, y_Nx = 0."""
    layers, steps = mult.shape
    out = np.zeros((steps + 1, layers))
    m, s = mult.T.copy(), source.T.copy()
    for i in range(steps - 1, -1, -1):
        out[i] = m[i] * out[i + 1] + s[i]
    return out.T


def lap_map_from_rates(decay_rate, source, step):
    """
    Affine lap map for C' = -a(x) C + b(x) given node values of a and b.

    Args:
        decay_rate: a = alpha(I_n)/u, shape (Nz, Nx+1)
        source: b = beta(I_n)/u, shape (Nz, Nx+1)
        step: node spacing

    Returns:
        AffineLapMap
    """
    decay_rate = np.atleast_2d(np.asarray(decay_rate, dtype=float))
    source = np.atleast_2d(np.asarray(source, dtype=float))
    mult, offset = heun_coefficients(decay_rate, source, step)
    decay = np.ones_like(decay_rate)
    decay[:, 1:] = np.cumprod(mult, axis=1)
    return AffineLapMap(
        step_mult=mult,
        step_offset=offset,
        decay=decay,
        forced=_forward_sweep(mult, offset),
        step=step,
    )


def lap_map(lights, field, han, grid):
    """
    Affine lap maps of every layer for the given light and flow fields.

    Args:
        lights: photic.LightField
        field: hydro.FlowField
        han: HanParams
        grid: Discretization

    Returns:
        AffineLapMap: A_n = lap.A[n], b_n = lap.b[n]
    """
    r = rates(lights.intensity, han)
    return lap_map_from_rates(r.alpha / field.u, r.beta / field.u, grid.step)


def _solve_cyclic(source_of, mult, offset):
    """
    Solve x_n = mult[n] x_{source_of(n)} + offset[n] for every n.

    Each cycle n_0 -> n_1 = source_of(n_0) -> .. collapses to one scalar
    equation x_{n_0} = P x_{n_0} + Q with P < 1.
    """
    x = np.zeros(source_of.size)
    for cycle in source_of.cycles():
        gain, shift = 1.0, 0.0
        for n in cycle:
            shift += gain * offset[n]
            gain *= mult[n]
        head = cycle[0]
        x[head] = shift / (1.0 - gain)
        for n in reversed(cycle[1:]):
            x[n] = mult[n] * x[source_of.images[n]] + offset[n]
    return x


def solve_periodic(perm, lap):
    """
    Periodic state C(0) = P (diag(A) C(0) + b) and its full trajectories.

    Args:
        perm: Permutation
        lap: AffineLapMap

    Returns:
        PeriodicState: C(0), C_n(x_i) and the residual max |P C(L) - C(0)|
    """
    sigma = perm.array
    c0 = _solve_cyclic(perm, lap.A[sigma], lap.b[sigma])
    states = lap.propagate(c0)
    residual = float(np.max(np.abs(states[sigma, -1] - c0)))
    if states.min() < -1e-12 or states.max() > 1.0 + 1e-12:
        logger.warning(
            f"Photoinhibition state left [0, 1] (min {states.min():.3g}, max {states.max():.3g}); "
            f"reduce dx below {lap.step:g}"
        )
    return PeriodicState(c0=c0, field=states, residual=residual)


def adjoint_source(lights, field, han, grid, volume_factor=1.0):
    """d(objective)/dC at every node: -F w_i gamma(I_n) / (u L Nz)."""
    r = rates(lights.intensity, han)
    scale = volume_factor / (grid.L * lights.layers)
    return -scale * grid.trapezoid_weights()[None, :] * r.gamma / field.u[None, :]


def solve_adjoint(perm, lights, field, han, grid, volume_factor=1.0, lap=None):
    """
    Discrete adjoint of the Heun lap with the periodic coupling.

    With s the node-wise objective sensitivity, the multipliers satisfy
    p_i = m_i p_{i+1} + s_i backward from x_Nx, and at the lap end
    p_n(L) = s_n(L) + p_{sigma^-1(n)}(0), the discrete form of p(L) = p(0) P.

    Args:
        perm: Permutation
        lights: photic.LightField
        field: hydro.FlowField
        han: HanParams
        grid: Discretization
        volume_factor: objective scale, 1 for the growth rate, X V/S for productivity
        lap: precomputed AffineLapMap, optional

    Returns:
        AdjointState
    """
    lap = lap if lap is not None else lap_map(lights, field, han, grid)
    source = adjoint_source(lights, field, han, grid, volume_factor)
    inverse = perm.inverse
    tail = _backward_sweep(lap.step_mult, source[:, :-1])
    backward_decay = np.ones_like(tail)
    backward_decay[:, :-1] = np.cumprod(lap.step_mult[:, ::-1], axis=1)[:, ::-1]
    sources = inverse.array
    terminal = _solve_cyclic(inverse, lap.A[sources], source[:, -1] + tail[sources, 0])
    adjoint = backward_decay * terminal[:, None] + tail
    residual = float(np.max(np.abs(adjoint[:, -1] - source[:, -1] - adjoint[sources, 0])))
    return AdjointState(field=adjoint, residual=residual)


def multi_lap_simulate(perm, lap, laps, c_init):
    """
    Iterate C <- P (diag(A) C + b) for a number of laps.

    Args:
        perm: Permutation
        lap: AffineLapMap
        laps: K >= 1
        c_init: C(0) before the first lap

    Returns:
        np.ndarray: C(0) after K laps
    """
    if laps < 1:
        raise ValueError(f"lap count must be at least 1, got {laps}")
    sigma = perm.array
    state = np.asarray(c_init, dtype=float).copy()
    for _ in range(laps):
        state = (lap.A * state + lap.b)[sigma]
    return state

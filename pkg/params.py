"""
Model Parameters Module

Holds every physical and numerical constant of the raceway model (Han
kinetics, flow, light, grid, feasibility limits), validates them, and reads
them from / writes them to the flat ``key = value`` configuration format.

Defaults reproduce the reference 7-layer experiments: Q0 = 0.04 m^2/s,
zb(0) = -0.4 m, g = 9.81 m/s^2, Is = 2000 umol/m^2/s, alpha0 = 0.2 m^2/gC,
alpha1 = 10 1/m, dx = 0.01 m.

alpha0 is in square metres per gram of carbon biomass.

R defaults to 1.389e-6 1/s (0.12 per day). Han kinetics tables sometimes
print 1.389e-7, but only the larger value reproduces the reported optima,
gain ratios and the growth of productivity on shorter laps; with 1.389e-7
the compensation light drops tenfold and the variable-volume optimum moves
to a0 near 0.42 m.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import ConfigValidationError, DomainError, MalformedConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HanParams:
    """Reduced Han photoinhibition kinetics."""

    kr: float = 6.8e-3  # repair rate, 1/s
    kd: float = 2.99e-4  # damage ratio
    tau: float = 0.25  # turnover time, s
    sigma: float = 0.047  # photon absorption cross-section, m^2/umol
    k: float = 8.7e-6  # energy-to-growth yield
    R: float = 1.389e-6  # respiration rate, 1/s (0.12 per day)

    def validate(self):
        for name in ("kr", "kd", "tau", "sigma", "k"):
            _require(name, getattr(self, name) > 0, "must be strictly positive")
        # R = 0 is accepted: it is the respiration-free limit of the closure.
        _require("R", self.R >= 0, "must not be negative")
        _require("kd", self.kd < 1, "must be smaller than 1")
        return self


@dataclass(frozen=True)
class FlowParams:
    """Steady shallow-water constants; M0 is derived through bind_M0."""

    Q0: float = 0.04  # discharge per unit width, m^2/s
    g: float = 9.81  # gravitational acceleration, m/s^2
    zb0: float = -0.4  # bottom elevation at x = 0, m
    M0: float | None = None  # Bernoulli constant, m^2/s^2

    def validate(self):
        _require("Q0", self.Q0 > 0, "must be strictly positive")
        _require("g", self.g > 0, "must be strictly positive")
        _require("zb0", self.zb0 < 0, "must be negative")
        return self

    def bound(self, h0):
        """Return a copy with M0 fixed by the water height at x = 0."""
        return dataclasses.replace(self, M0=bind_M0(self, h0))


@dataclass(frozen=True)
class LightParams:
    """Surface light and extinction constants."""

    Is: float = 2000.0  # surface intensity, umol/m^2/s
    alpha0: float = 0.2  # specific extinction, m^2/gC
    alpha1: float = 10.0  # background turbidity, 1/m
    bottom_fraction: float = 0.01  # fixed-volume share of light reaching the bottom

    def validate(self):
        _require("Is", self.Is > 0, "must be strictly positive")
        _require("alpha0", self.alpha0 > 0, "must be strictly positive")
        _require("alpha1", self.alpha1 >= 0, "must not be negative")
        _require("bottom_fraction", 0 < self.bottom_fraction < 1, "must lie in (0, 1)")
        return self


@dataclass(frozen=True)
class Discretization:
    """Node-based grid x_0 = 0 .. x_Nx = L, Nz layers, M Fourier modes."""

    L: float = 100.0  # lap length, m
    dx: float = 0.01  # spatial step, m
    Nz: int = 7
    M: int = 5

    @property
    def Nx(self):
        return int(round(self.L / self.dx))

    @property
    def step(self):
        """Actual node spacing, L / Nx."""
        return self.L / self.Nx

    def nodes(self):
        return np.linspace(0.0, self.L, self.Nx + 1)

    def trapezoid_weights(self):
        weights = np.full(self.Nx + 1, self.step)
        weights[0] = weights[-1] = 0.5 * self.step
        return weights

    def validate(self):
        _require("L", self.L > 0, "must be strictly positive")
        _require("dx", 0 < self.dx <= self.L, "must lie in (0, L]")
        _require("dx", abs(self.Nx * self.dx - self.L) <= 1e-9 * self.L, "must divide L")
        _require("Nz", isinstance(self.Nz, int) and self.Nz >= 1, "must be an integer >= 1")
        _require("M", isinstance(self.M, int) and self.M >= 0, "must be an integer >= 0")
        return self


@dataclass(frozen=True)
class FeasibilityLimits:
    """Node-wise feasibility of a water-height profile."""

    h_min: float = 1e-3  # minimal water height, m
    froude_margin: float = 0.02  # delta in Fr <= 1 - delta

    def validate(self):
        _require("h_min", self.h_min > 0, "must be strictly positive")
        _require("froude_margin", 0 <= self.froude_margin < 1, "must lie in [0, 1)")
        return self


@dataclass(frozen=True)
class ModelParams:
    """Complete, validated parameter bundle; immutable and picklable."""

    han: HanParams = HanParams()
    flow: FlowParams = FlowParams()
    light: LightParams = LightParams()
    grid: Discretization = Discretization()
    limits: FeasibilityLimits = FeasibilityLimits()
    a0: float = 0.4  # mean water height, m

    def validate(self):
        self.han.validate()
        self.flow.validate()
        self.light.validate()
        self.grid.validate()
        self.limits.validate()
        _require("a0", self.a0 > 0, "must be strictly positive")
        return self

    def with_overrides(self, **overrides):
        """
        Return a validated copy with some keys replaced.

        Args:
            **overrides: configuration keys (as in the config file); None values are ignored

        Returns:
            ModelParams: the updated bundle
        """
        values = to_mapping(self)
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in CONFIG_KEYS:
                raise ConfigValidationError(key, "unknown configuration key")
            values[key] = value
        return from_mapping(values)


# Config key -> (section attribute, field name, type)
CONFIG_KEYS = {
    "kr": ("han", "kr", float),
    "kd": ("han", "kd", float),
    "tau": ("han", "tau", float),
    "sigma": ("han", "sigma", float),
    "k": ("han", "k", float),
    "R": ("han", "R", float),
    "Q0": ("flow", "Q0", float),
    "g": ("flow", "g", float),
    "zb0": ("flow", "zb0", float),
    "Is": ("light", "Is", float),
    "alpha0": ("light", "alpha0", float),
    "alpha1": ("light", "alpha1", float),
    "bottom_fraction": ("light", "bottom_fraction", float),
    "L": ("grid", "L", float),
    "dx": ("grid", "dx", float),
    "Nz": ("grid", "Nz", int),
    "M": ("grid", "M", int),
    "h_min": ("limits", "h_min", float),
    "froude_margin": ("limits", "froude_margin", float),
    "a0": (None, "a0", float),
}


def _require(field, condition, message):
    if not condition:
        raise ConfigValidationError(field, message)


def to_mapping(params):
    """Flatten a bundle to {config key: value}."""
    values = {}
    for key, (section, name, _) in CONFIG_KEYS.items():
        owner = params if section is None else getattr(params, section)
        values[key] = getattr(owner, name)
    return values


def from_mapping(values):
    """Build and validate a bundle from {config key: value}; missing keys take defaults."""
    sections = {"han": {}, "flow": {}, "light": {}, "grid": {}, "limits": {}}
    top = {}
    for key, value in values.items():
        section, name, _ = CONFIG_KEYS[key]
        (top if section is None else sections[section])[name] = value
    params = ModelParams(
        han=HanParams(**sections["han"]),
        flow=FlowParams(**sections["flow"]),
        light=LightParams(**sections["light"]),
        grid=Discretization(**sections["grid"]),
        limits=FeasibilityLimits(**sections["limits"]),
        **top,
    )
    return params.validate()


def _parse_value(key, text, line_no, path):
    kind = CONFIG_KEYS[key][2]
    try:
        if kind is int:
            return int(text)
        value = float(text)
    except ValueError:
        raise MalformedConfigError(f"line {line_no}: '{text}' is not a valid value for {key}", line=line_no, path=path)
    if not math.isfinite(value):
        raise MalformedConfigError(f"line {line_no}: {key} must be finite", line=line_no, path=path)
    return value


def parse_config(text, path=None):
    """
    Parse configuration text into {key: value}.

    Args:
        text: UTF-8 text, one ``key = value`` per line, ``#`` starts a comment
        path: optional source path, only used in error messages

    Returns:
        dict: the keys present in the text
    """
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedConfigError(f"line {line_no}: expected 'key = value'", line=line_no, path=path)
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in CONFIG_KEYS:
            raise MalformedConfigError(f"line {line_no}: unknown key '{key}'", line=line_no, path=path)
        if key in values:
            raise MalformedConfigError(f"line {line_no}: duplicate key '{key}'", line=line_no, path=path)
        values[key] = _parse_value(key, value, line_no, path)
    return values


def load_config(path=None):
    """
    Load a validated ModelParams bundle.

    Args:
        path: config file path; None gives the default bundle

    Returns:
        ModelParams: validated parameters (M0 stays unbound)
    """
    if path is None:
        return ModelParams().validate()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MalformedConfigError(f"config file not found: {path}", path=path)
    except UnicodeDecodeError as e:
        raise MalformedConfigError(f"config file is not UTF-8: {e}", path=path)
    values = parse_config(text, path=path)
    logger.info(f"Loaded {len(values)} configuration keys from {path}")
    return from_mapping(values)


def dump_config(params):
    """Serialize a bundle to config text that reloads bit-for-bit."""
    lines = ["# raceway model configuration"]
    for key, value in to_mapping(params).items():
        lines.append(f"{key} = {value!r}")
    return "\n".join(lines) + "\n"


def bind_M0(flow, h0):
    """
    Bernoulli constant fixed by the water height at x = 0.

    Args:
        flow: FlowParams
        h0: water height at x = 0, m

    Returns:
        float: M0 = g (h0 + zb0) + Q0^2 / (2 h0^2)
    """
    if not h0 > 0:
        raise DomainError(f"h0 must be strictly positive, got {h0}")
    return flow.g * (h0 + flow.zb0) + flow.Q0**2 / (2.0 * h0**2)

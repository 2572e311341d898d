"""State containers, plant configuration, and boundary specifications."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = ["StateError", "PlantConfig", "BoundarySpec", "StateVector",
           "FarField", "Dirichlet", "Inflow", "Outflow", "NoSlipWall", "Periodic",
           "SA_CONSTANTS"]


class StateError(ValueError):
    """Invalid state (non-finite entries, or non-physical density/pressure)."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


# Standard coefficient set of the one-equation transport model (no trip terms).
SA_CONSTANTS = {
    "cb1": 0.1355,
    "cb2": 0.622,
    "sigma": 2.0 / 3.0,
    "kappa": 0.41,
    "cw2": 0.3,
    "cw3": 2.0,
    "cv1": 7.1,
}
SA_CONSTANTS["cw1"] = (SA_CONSTANTS["cb1"] / SA_CONSTANTS["kappa"] ** 2
                       + (1.0 + SA_CONSTANTS["cb2"]) / SA_CONSTANTS["sigma"])


@dataclass
class PlantConfig:
    """Scheme and gas parameters shared by the flow plants.

    Nondimensionalization follows freestream scaling: density and velocity
    magnitude are 1, pressure is 1/(gamma Mach^2), and viscosity enters as
    1/Re.  ``kappa_muscl`` is the linear reconstruction blend (1/3 by
    default); the limiter is off by default because its kinks are
    non-differentiable.
    """

    mach: float = 0.2
    reynolds: float = 500.0
    gamma: float = 1.4
    prandtl: float = 0.72
    prandtl_t: float = 0.9
    stencil_radius: int = 2
    kappa_muscl: float = 1.0 / 3.0
    use_limiter: bool = False
    nut_inf_ratio: float = 3.0       # freestream nu_tilde / laminar nu
    # scalar plant settings
    velocity: tuple = (1.0, 0.5)
    diffusivity: float = 0.1

    def __post_init__(self):
        if self.prandtl_t <= 0:
            raise ValueError("turbulent Prandtl number must be positive")
        if self.stencil_radius < 1:
            raise ValueError("stencil radius must be >= 1")

    @property
    def p_inf(self):
        return 1.0 / (self.gamma * self.mach ** 2)

    @property
    def t_inf(self):
        # "temperature" carried as p/rho throughout the kernels
        return self.p_inf

    @property
    def mu(self):
        return 1.0 / self.reynolds

    @property
    def nut_inf(self):
        # nondimensional freestream turbulence working variable
        return self.nut_inf_ratio / self.reynolds

    def freestream(self, m, angle_deg=0.0):
        """Conservative freestream vector for an m-variable plant."""
        a = np.radians(angle_deg)
        u, v = np.cos(a), np.sin(a)
        rho = 1.0
        re = self.p_inf / (self.gamma - 1.0) + 0.5 * rho * (u * u + v * v)
        w = [rho, rho * u, rho * v, re]
        if m == 5:
            w.append(rho * self.nut_inf)
        return np.array(w[:m] if m >= 4 else [1.0])


# -- boundary conditions ------------------------------------------------------

@dataclass(frozen=True)
class FarField:
    """Ghost cells fixed to a prescribed state (freestream by default)."""
    state: Optional[tuple] = None


@dataclass(frozen=True)
class Dirichlet:
    """Scalar-plant boundary value phi(x, y); quadratic ghost extrapolation."""
    fn: Callable = None
    value: float = 0.0

    def boundary_value(self, x, y):
        if self.fn is not None:
            return self.fn(x, y)
        return np.full(np.shape(x), self.value)


@dataclass(frozen=True)
class Inflow:
    """Subsonic inflow with fixed stagnation state and flow direction."""
    p0: float
    t0: float
    angle_deg: float = 0.0

    def __post_init__(self):
        if self.p0 <= 0 or self.t0 <= 0:
            raise StateError("inflow decode failure: stagnation quantities "
                             "must be positive")


@dataclass(frozen=True)
class Outflow:
    """Subsonic outflow with fixed static pressure."""
    p: float

    def __post_init__(self):
        if self.p <= 0:
            raise ValueError("outflow static pressure must be positive")


@dataclass(frozen=True)
class NoSlipWall:
    """Adiabatic no-slip wall (primitive mirror rule)."""


@dataclass(frozen=True)
class Periodic:
    """Ghost band copies the opposite interior band."""


EDGES = ("west", "east", "south", "north")


@dataclass
class BoundarySpec:
    west: object
    east: object
    south: object
    north: object

    def __post_init__(self):
        if isinstance(self.west, Periodic) != isinstance(self.east, Periodic):
            raise ValueError("periodic edges must appear in matching pairs (west/east)")
        if isinstance(self.south, Periodic) != isinstance(self.north, Periodic):
            raise ValueError("periodic edges must appear in matching pairs (south/north)")
        for e in EDGES:
            if getattr(self, e) is None:
                raise ValueError(f"edge {e} has no boundary condition")

    def edge(self, name):
        return getattr(self, name)

    def wall_edges(self):
        return [e for e in EDGES if isinstance(getattr(self, e), NoSlipWall)]


class StateVector:
    """Discrete state on the ghost-extended grid: shape (ni+2g, nj+2g, m)."""

    def __init__(self, plant, data):
        data = np.asarray(data, dtype=float)
        if data.shape != plant.shape_full:
            raise StateError(f"state shape {data.shape} != plant {plant.shape_full}")
        self.plant = plant
        self.data = data

    @property
    def interior(self):
        si, sj = self.plant.mesh.interior_slices()
        return self.data[si, sj]

    @property
    def ghost_mask(self):
        return self.plant.ghost_mask

    def copy(self):
        return StateVector(self.plant, self.data.copy())

"""Physical parameters, the headway-velocity law, and equilibrium flow.

All quantities are SI internally (meters, seconds, vehicles); per-kilometer
and per-hour units appear only at I/O boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the velocity law and the ring track.

    Attributes
    ----------
    lambda_rate : velocity change rate at the minimal headway, 1/s.
    v_max : maximal velocity, m/s.
    d_min : minimal headway for nonzero velocity, m.
    car_size : vehicle length used by the collision rule, m.
    track_length : length of the periodic track, m.
    """

    lambda_rate: float = 1.0
    v_max: float = 40.0
    d_min: float = 7.5
    car_size: float = 5.0
    track_length: float = 1000.0

    def __post_init__(self):
        for name in ("lambda_rate", "v_max", "car_size", "track_length"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be finite and positive, got {value!r}")
        if not math.isfinite(self.d_min) or self.d_min <= self.car_size:
            # A vehicle must be able to stop before touching its leader.
            raise ParameterError(
                f"d_min must exceed car_size ({self.car_size}), got {self.d_min!r}"
            )

    @property
    def rho_jam(self) -> float:
        """Smallest positive density with zero equilibrium flow, vehicles/m."""
        return 1.0 / self.d_min


@dataclass(frozen=True)
class FundamentalDiagramSummary:
    """Peak of the equilibrium flow curve and the jam density (SI units)."""

    q_star: float  # maximal equilibrium flow, vehicles/s
    rho_star: float  # density at q_star, vehicles/m
    rho_jam: float  # 1/d_min exactly, vehicles/m

    def __post_init__(self):
        if not (0.0 < self.rho_star < self.rho_jam):
            raise ParameterError(
                f"rho_star {self.rho_star!r} must lie in (0, rho_jam={self.rho_jam!r})"
            )


def _velocity(headway, lambda_rate, p: ModelParams):
    """Velocity law without argument validation; hot path for the simulators.

    ``headway`` and ``lambda_rate`` may be scalars or arrays (broadcast).
    """
    v = p.v_max * (1.0 - np.exp(-(lambda_rate / p.v_max) * (headway - p.d_min)))
    return np.maximum(v, 0.0)


def velocity_from_headway(headway, p: ModelParams):
    """Driving velocity for a given headway.

    Increases from 0 at ``d_min`` toward ``v_max`` as the headway opens;
    clamped to zero for headways at or below ``d_min``. Accepts a scalar or
    an array of headways.
    """
    h = np.asarray(headway, dtype=float)
    if not np.all(np.isfinite(h)) or np.any(h < 0):
        raise ParameterError(f"headway must be finite and nonnegative, got {headway!r}")
    v = _velocity(h, p.lambda_rate, p)
    if np.isscalar(headway) or np.ndim(headway) == 0:
        return float(v)
    return v


def equilibrium_flow(rho, p: ModelParams):
    """Equilibrium flow rate q = rho * v(1/rho) for density ``rho`` (vehicles/m).

    Accepts a scalar or an array of densities; every density must be positive.
    """
    r = np.asarray(rho, dtype=float)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise ParameterError(f"density must be finite and positive, got {rho!r}")
    q = r * _velocity(1.0 / r, p.lambda_rate, p)
    if np.isscalar(rho) or np.ndim(rho) == 0:
        return float(q)
    return q


def fundamental_diagram_curve(p: ModelParams, rho):
    """Equilibrium velocity and flow on a density grid.

    Returns ``(v_eq, q)`` arrays for the given densities (vehicles/m).
    """
    r = np.asarray(rho, dtype=float)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise ParameterError("density grid must be finite and positive")
    v_eq = _velocity(1.0 / r, p.lambda_rate, p)
    return v_eq, r * v_eq


def _golden_max(f, a: float, b: float, tol: float) -> float:
    """Abscissa of the maximum of a unimodal ``f`` on [a, b] within ``tol``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
    return 0.5 * (a + b)


def fundamental_diagram_summary(
    p: ModelParams, rho_resolution: float = 1e-4, refine_tol: float = 1e-6
) -> FundamentalDiagramSummary:
    """Locate the flow maximum by a density scan plus golden-section refinement.

    ``rho_resolution`` is the scan step in vehicles/m (default 0.1 veh/km).
    The jam density is reported exactly as ``1/d_min`` rather than from the
    scan, since the flow vanishes analytically at that point.
    """
    if not (math.isfinite(rho_resolution) and rho_resolution > 0):
        raise ParameterError(f"rho_resolution must be positive, got {rho_resolution!r}")
    rho_jam = p.rho_jam
    grid = np.arange(rho_resolution, rho_jam, rho_resolution)
    if grid.size < 3:
        raise ParameterError("rho_resolution too coarse for the density range")
    q = equilibrium_flow(grid, p)
    i = int(np.argmax(q))
    lo = grid[max(i - 1, 0)] if i > 0 else 0.5 * rho_resolution
    hi = grid[min(i + 1, grid.size - 1)]
    rho_star = _golden_max(lambda r: equilibrium_flow(r, p), lo, hi, refine_tol)
    return FundamentalDiagramSummary(
        q_star=equilibrium_flow(rho_star, p), rho_star=rho_star, rho_jam=rho_jam
    )

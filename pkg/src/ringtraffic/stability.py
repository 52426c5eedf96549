"""Linear stability of the single-lane ring with a reaction delay.

The linearized dynamics about the equal-spacing equilibrium reduce, after
diagonalizing the (N-1)x(N-1) interaction matrix, to independent scalar delay
equations whose characteristic roots are Lambert-W values.  The closed-form
eigenvalues make the analysis cheap for any fleet size; the dense matrix is
kept only as a brute-force cross-check.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .core import ModelParams
from .errors import BracketError, NumericalError, ParameterError

DEFAULT_BRANCHES = tuple(range(-8, 9))
_RESIDUAL_TOL = 1e-10
_BRANCH_POINT = -1.0 / math.e


def scale_constant(n_vehicles: int, p: ModelParams) -> float:
    """Common (negative) sensitivity of the linearized coupling, 1/s."""
    if n_vehicles < 2:
        raise ParameterError(f"need at least 2 vehicles, got {n_vehicles!r}")
    h_eq = p.track_length / n_vehicles
    return -p.lambda_rate * math.exp(-(p.lambda_rate / p.v_max) * (h_eq - p.d_min))


def closed_form_eigenvalues(n_vehicles: int, p: ModelParams) -> np.ndarray:
    """The N-1 distinct eigenvalues ``c * (1 - exp(2*pi*i*k/N))``, k = 1..N-1."""
    c = scale_constant(n_vehicles, p)
    k = np.arange(1, n_vehicles)
    return c * (1.0 - np.exp(2j * np.pi * k / n_vehicles))


def build_jacobian_dense(n_vehicles: int, p: ModelParams) -> np.ndarray:
    """Dense relative-coordinate Jacobian; cross-check path, capped at N=64."""
    if n_vehicles < 2:
        raise ParameterError(f"need at least 2 vehicles, got {n_vehicles!r}")
    if n_vehicles > 64:
        raise ParameterError("dense Jacobian is a verification path; use the closed form beyond N=64")
    c = scale_constant(n_vehicles, p)
    m = n_vehicles - 1
    jac = np.eye(m)
    jac -= np.eye(m, k=1)  # each vehicle is pulled by its leader
    jac[:, 0] += 1.0  # wrap coupling through the reference vehicle
    return c * jac


@dataclass(frozen=True)
class JacobianSpec:
    """Closed-form description of the linearized single-lane system."""

    scale_c: float
    n_vehicles: int
    eigenvalues: np.ndarray


def jacobian_spec(n_vehicles: int, p: ModelParams) -> JacobianSpec:
    return JacobianSpec(
        scale_c=scale_constant(n_vehicles, p),
        n_vehicles=n_vehicles,
        eigenvalues=closed_form_eigenvalues(n_vehicles, p),
    )


@dataclass(frozen=True)
class StabilityVerdict:
    """Maximal real part over all characteristic roots scanned."""

    max_real_part: float
    stable: bool


def _halley(w: np.ndarray, z: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Halley iteration for ``w * exp(w) = z`` from the given seeds."""
    active = np.abs(w * np.exp(w) - z) > 0.0
    for _ in range(max_iter):
        if not np.any(active):
            break
        wa = w[active]
        za = z[active]
        ew = np.exp(wa)
        f = wa * ew - za
        wp1 = wa + 1.0
        wp1 = np.where(wp1 == 0, 1e-300, wp1)  # exact branch-point hit
        dw = f / (ew * wp1 - (wa + 2.0) * f / (2.0 * wp1))
        wa = wa - dw
        w[active] = wa
        idx = np.flatnonzero(active)
        active[idx] = np.abs(dw) > tol * (1.0 + np.abs(wa))
    return w


def lambert_w(z, branch: int = 0, tol: float = 1e-13, max_iter: int = 100):
    """Branch ``branch`` of the complex Lambert W function, ``w * exp(w) = z``.

    Seeds follow Corless et al. (1996): a Maclaurin series near the origin, the
    branch-point expansion in a disk around -1/e (side-aware for branches +-1),
    and the shifted logarithm ``L - log L`` where ``L = log z + 2*pi*i*branch``
    is large.  Elements near a branch cut, where the logarithmic seed can land
    on the wrong sheet, are instead continued inward along the ray from a large
    radius where the seed is reliable.  Every element is verified against the
    defining equation before being returned.  Scalars in, scalar out.
    """
    scalar = np.isscalar(z) or np.ndim(z) == 0
    z_arr = np.atleast_1d(np.asarray(z, dtype=complex)).copy()
    if np.any(z_arr == 0):
        if branch == 0:
            w0 = np.zeros_like(z_arr)
            nonzero = z_arr != 0
            if np.any(nonzero):
                w0[nonzero] = lambert_w(z_arr[nonzero], branch, tol, max_iter)
            return complex(w0[0]) if scalar else w0
        raise ParameterError(f"Lambert W branch {branch} is undefined at z=0")

    w = np.empty_like(z_arr)
    done = np.zeros(z_arr.shape, dtype=bool)

    if branch in (-1, 0, 1):
        # Branches -1/+1 touch the branch point only from one side of the cut
        # (above/below respectively); on the other side they are deep sheets.
        near_bp = np.abs(z_arr - _BRANCH_POINT) <= 0.45
        if branch == -1:
            near_bp &= (z_arr.imag >= 0) & (z_arr.real <= 0)
        elif branch == 1:
            near_bp &= (z_arr.imag < 0) & (z_arr.real <= 0)
        if np.any(near_bp):
            zb = z_arr[near_bp]
            sign = 1.0 if branch == 0 else -1.0
            p = sign * np.sqrt(2.0 * (np.e * zb + 1.0))
            w[near_bp] = _halley(-1.0 + p * (1.0 - p / 3.0), zb, tol, max_iter)
            done |= near_bp
    if branch == 0:
        small = ~done & (np.abs(z_arr) <= 0.5)
        if np.any(small):
            zs = z_arr[small]
            w[small] = _halley(zs * (1.0 - zs * (1.0 - 1.5 * zs)), zs, tol, max_iter)
            done |= small

    lz = np.log(z_arr) + 2j * np.pi * branch
    # The logarithmic seed also needs L away from the cut of the outer log.
    direct = ~done & (np.abs(lz) >= 2.0) & (np.pi - np.abs(np.angle(lz)) > 0.5)
    if np.any(direct):
        ld = lz[direct]
        llog = np.log(ld)
        w[direct] = _halley(ld - llog + llog / ld, z_arr[direct], tol, max_iter)
        done |= direct

    rest = ~done
    if np.any(rest):
        w[rest] = _continue_inward(z_arr[rest], branch, tol, max_iter)

    residual = np.abs(w * np.exp(w) - z_arr)
    bad = residual > _RESIDUAL_TOL * np.maximum(1.0, np.abs(z_arr))
    if np.any(bad):
        # A seed that strayed near a branch cut can stall; the ray walk is the
        # robust (slower) path, so retry the failures with it before reporting.
        w[bad] = _continue_inward(z_arr[bad], branch, tol, max_iter)
        residual = np.abs(w * np.exp(w) - z_arr)
        bad = residual > _RESIDUAL_TOL * np.maximum(1.0, np.abs(z_arr))
    if np.any(bad):
        worst = int(np.argmax(residual))
        raise NumericalError(
            f"Lambert W branch {branch} did not converge at z={z_arr[worst]!r} "
            f"(residual {residual[worst]:.3e})"
        )
    return complex(w[0]) if scalar else w


def _continue_inward(z: np.ndarray, branch: int, tol: float, max_iter: int) -> np.ndarray:
    """Solve by walking along each ray from radius 8, where the logarithmic
    seed is reliable, inward to the target; the iterate tracks one sheet and
    never hops across a branch cut."""
    radius = 8.0
    unit = z / np.abs(z)
    zk = unit * radius
    lk = np.log(zk) + 2j * np.pi * branch
    wk = _halley(lk - np.log(lk), zk, tol, max_iter)
    steps = 8
    ratio = (np.abs(z) / radius) ** (1.0 / steps)
    for _ in range(steps):
        zk = zk * ratio
        wk = _halley(wk, zk, tol, max_iter)
    return wk


def characteristic_roots(eigenvalue: complex, delay: float, branches=DEFAULT_BRANCHES) -> np.ndarray:
    """Roots of ``lam = d * exp(-lam * delay)`` for one Jacobian eigenvalue ``d``.

    For zero delay the single root is ``d`` itself; otherwise one root per
    Lambert-W branch is returned, each verified to satisfy the defining
    equation to a relative residual below 1e-10.
    """
    if not (math.isfinite(delay) and delay >= 0):
        raise ParameterError(f"delay must be nonnegative, got {delay!r}")
    d = complex(eigenvalue)
    if delay == 0:
        return np.array([d])
    z = d * delay
    roots = np.empty(len(tuple(branches)), dtype=complex)
    for i, b in enumerate(tuple(branches)):
        w = lambert_w(z, b)
        lam = w / delay
        residual = abs(lam - d * cmath.exp(-lam * delay))
        if residual > _RESIDUAL_TOL * max(1.0, abs(d)):
            raise NumericalError(
                f"characteristic root on branch {b} has residual {residual:.3e}"
            )
        roots[i] = lam
    return roots


def max_growth_rate(
    n_vehicles: int, delay: float, p: ModelParams, branches=DEFAULT_BRANCHES
) -> StabilityVerdict:
    """Maximal real part of the characteristic roots over all modes and branches."""
    if not (math.isfinite(delay) and delay >= 0):
        raise ParameterError(f"delay must be nonnegative, got {delay!r}")
    eigs = closed_form_eigenvalues(n_vehicles, p)
    if delay == 0:
        best = float(np.max(eigs.real))
        return StabilityVerdict(max_real_part=best, stable=best < 0)
    z = eigs * delay
    best = -math.inf
    for b in tuple(branches):
        w = lambert_w(z, b)
        lam = w / delay
        residual = np.abs(lam - eigs * np.exp(-lam * delay))
        if np.any(residual > _RESIDUAL_TOL * np.maximum(1.0, np.abs(eigs))):
            worst = int(np.argmax(residual))
            raise NumericalError(
                f"characteristic root on branch {b} has residual {residual[worst]:.3e}"
            )
        best = max(best, float(np.max(lam.real)))
    return StabilityVerdict(max_real_part=best, stable=best < 0)


def critical_reaction_time(
    n_vehicles: int,
    p: ModelParams,
    tol: float = 1e-3,
    bracket: tuple[float, float] = (0.0, 2.0),
    expand: bool = True,
    branches=DEFAULT_BRANCHES,
    max_delay: float = 64.0,
) -> float:
    """Delay at which the maximal characteristic real part crosses zero.

    Bisection on the sign of :func:`max_growth_rate`.  If the upper bracket end
    is still stable it is doubled (up to ``max_delay``) unless ``expand`` is
    disabled, in which case a missing sign change raises :class:`BracketError`.
    Low-density fleets have critical delays well above 2 s, so the default
    bracket frequently needs the expansion.
    """
    if tol <= 0:
        raise ParameterError(f"tol must be positive, got {tol!r}")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0.0 <= lo < hi):
        raise ParameterError(f"invalid bracket {bracket!r}")
    rate = lambda delta: max_growth_rate(n_vehicles, delta, p, branches).max_real_part
    if rate(lo) >= 0:
        raise BracketError(f"system already unstable at delay {lo}")
    while rate(hi) < 0:
        if not expand:
            raise BracketError(f"no sign change in bracket [{lo}, {hi}]")
        hi *= 2.0
        if hi > max_delay:
            raise BracketError(f"no instability found up to delay {max_delay}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rate(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)

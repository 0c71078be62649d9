"""Reissner-Nordstrom coefficient functions.

Everything downstream (ray tracing, eikonal, transport, wave operator) pulls
f, f', the Hamiltonians and the discriminant from here.  Functions accept
floats or numpy arrays for the radial argument.

Sign conventions: the planar Hamiltonian is

    H0 = (2 - f) xi0^2 + 2 (f - 1) xi0 xi_rho - f xi_rho^2 - xi_phi^2 / rho^2

and its two roots in xi_rho are written xi_rho^{+-} = ((f-1) xi0 -+ sqrt(D)) / f
with D = xi0^2 - f xi_phi^2 / rho^2.  For xi0 > 0 the Minus root is the
infalling one and stays finite across both horizons.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, HorizonPole, NegativeDiscriminant, NonPositiveMass


class Regime(enum.Enum):
    SUB_EXTREMAL = "SubExtremal"
    EXTREMAL = "Extremal"
    NAKED = "Naked"


class Branch(enum.Enum):
    MINUS = "Minus"
    PLUS = "Plus"

    @property
    def sign(self) -> int:
        return -1 if self is Branch.MINUS else 1

    def flipped(self) -> "Branch":
        return Branch.PLUS if self is Branch.MINUS else Branch.MINUS


@dataclass(frozen=True)
class MetricParams:
    m: float
    e: float
    regime: Regime
    r_plus: float | None
    r_minus: float | None

    def f(self, r):
        return 1.0 - 2.0 * self.m / r + self.e**2 / r**2

    def df(self, r):
        return 2.0 * self.m / r**2 - 2.0 * self.e**2 / r**3

    def d2f(self, r):
        return -4.0 * self.m / r**3 + 6.0 * self.e**2 / r**4

    @property
    def horizon(self) -> float | None:
        """Radius approached by outgoing rays after the turn (inner or degenerate horizon)."""
        return self.r_minus if self.r_minus else None

    @property
    def has_inner_horizon(self) -> bool:
        return bool(self.r_minus) and self.r_minus > 0.0

    def scale(self) -> float:
        return max(self.m, self.r_plus or 0.0)


def classify(m: float, e: float) -> MetricParams:
    """Build MetricParams, deciding the regime by exact comparison of e^2 and m^2."""
    m = float(m)
    e = float(e)
    if not m > 0.0:
        raise NonPositiveMass(f"mass must be positive, got {m!r}")
    e2, m2 = e * e, m * m
    if e2 < m2:
        root = math.sqrt(m2 - e2)
        return MetricParams(m, e, Regime.SUB_EXTREMAL, m + root, m - root)
    if e2 == m2:
        return MetricParams(m, e, Regime.EXTREMAL, m, m)
    return MetricParams(m, e, Regime.NAKED, None, None)


def _check_radius(r, name="r"):
    if np.any(np.asarray(r) <= 0.0):
        raise DomainError(f"{name} must be positive")


def lapse_f(r, params: MetricParams, form: str = "expanded"):
    """Horizon function f(r), either as 1 - 2m/r + e^2/r^2 or in factored form."""
    _check_radius(r)
    if form == "expanded":
        return params.f(r)
    if form == "factored":
        if params.r_plus is None:
            raise DomainError("factored form needs real horizons")
        return (r - params.r_plus) * (r - params.r_minus) / r**2
    raise ValueError(f"unknown form {form!r}")


def lapse_df(r, params: MetricParams):
    _check_radius(r)
    return params.df(r)


def hamiltonian_cartesian(x, xi0, xi, params: MetricParams):
    """Symbol of the wave operator in Cartesian coordinates.

    The radial momentum enters through the unit vector x/|x|, which is what
    makes this agree with the planar polar form.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(x)
    if r == 0.0:
        raise DomainError("Cartesian Hamiltonian undefined at the origin")
    g = 2.0 * params.m / r - params.e**2 / r**2
    u = -xi0 + float(np.dot(x, xi)) / r
    return xi0**2 - float(np.dot(xi, xi)) + g * u * u


def hamiltonian_planar(rho, xi0, xi_rho, xi_phi, params: MetricParams):
    _check_radius(rho, "rho")
    f = params.f(rho)
    return (2.0 - f) * xi0**2 + 2.0 * (f - 1.0) * xi0 * xi_rho - f * xi_rho**2 - xi_phi**2 / rho**2


def hamiltonian_planar_shell(rho, xi0, xi_phi, p, branch: Branch, params: MetricParams):
    """H0 evaluated at xi_rho = xi_rho^branch(rho) + p in factored, well-conditioned form."""
    f = params.f(rho)
    sd = np.sqrt(discriminant_delta(rho, xi0, xi_phi, params))
    return 2.0 * branch.sign * sd * p - f * p * p


def discriminant_delta(rho, xi0, xi_phi, params: MetricParams):
    _check_radius(rho, "rho")
    return xi0**2 - params.f(rho) * xi_phi**2 / rho**2


def clamped_delta(rho, xi0, xi_phi, params: MetricParams):
    """Discriminant with roundoff-level negatives at the turning radius set to 0."""
    d = discriminant_delta(rho, xi0, xi_phi, params)
    terms = 1.0 + 2.0 * params.m / rho + params.e**2 / rho**2
    tol = 64 * np.finfo(float).eps * (xi0**2 + terms * xi_phi**2 / rho**2)
    return np.where((d < 0) & (d >= -tol), 0.0, d)


def ddelta_drho(rho, xi0, xi_phi, params: MetricParams):
    f = params.f(rho)
    fp = params.df(rho)
    return -(fp / rho**2 - 2.0 * f / rho**3) * xi_phi**2


def _uses_rationalized(branch: Branch, xi0) -> bool:
    return branch.sign * xi0 < 0.0


def _at_horizon(rho, params: MetricParams) -> bool:
    # f rounds to ~1e-17 rather than 0 at the stored horizon radii
    hs = [h for h in (params.r_plus, params.r_minus) if h]
    return bool(np.any(np.isin(np.asarray(rho), hs)))


def xi_rho(rho, xi0, xi_phi, branch: Branch, params: MetricParams):
    """Root of H0 = 0 on the requested branch.

    The branch that stays finite where f = 0 (Minus for xi0 > 0) is computed
    as xi0 - B / (xi0 -+ sqrt(D)) with B = xi_phi^2/rho^2; the other one in the
    direct form, which has a pole at the horizons.
    """
    delta = clamped_delta(rho, xi0, xi_phi, params)
    if np.any(delta < 0.0):
        raise NegativeDiscriminant("discriminant is negative at the requested radius")
    sd = np.sqrt(delta)
    sigma = branch.sign
    if _uses_rationalized(branch, xi0):
        b = xi_phi**2 / rho**2
        return xi0 - b / (xi0 - sigma * sd)
    f = params.f(rho)
    if np.any(f == 0.0) or _at_horizon(rho, params):
        raise HorizonPole(f"{branch.value} branch has a pole at the horizon")
    return xi0 - (xi0 + sigma * sd) / f


def dsqrt_delta_drho(rho, xi0, xi_phi, params: MetricParams):
    delta = discriminant_delta(rho, xi0, xi_phi, params)
    if np.any(delta <= 0.0):
        raise NegativeDiscriminant("sqrt(D) is not differentiable where D <= 0")
    return ddelta_drho(rho, xi0, xi_phi, params) / (2.0 * np.sqrt(delta))


def dxi_rho_drho(rho, xi0, xi_phi, branch: Branch, params: MetricParams):
    """Analytic radial derivative of xi_rho^branch."""
    sigma = branch.sign
    sd = np.sqrt(discriminant_delta(rho, xi0, xi_phi, params))
    dsd = dsqrt_delta_drho(rho, xi0, xi_phi, params)
    if _uses_rationalized(branch, xi0):
        b = xi_phi**2 / rho**2
        db = -2.0 * xi_phi**2 / rho**3
        den = xi0 - sigma * sd
        return -db / den - sigma * b * dsd / den**2
    f = params.f(rho)
    fp = params.df(rho)
    if np.any(f == 0.0):
        raise HorizonPole(f"{branch.value} branch has a pole at the horizon")
    return -sigma * dsd / f + (xi0 + sigma * sd) * fp / f**2


def dx0_ds_shell(rho, xi0, xi_phi, branch: Branch, params: MetricParams):
    """dx0/ds = dH0/dxi0 on the branch, evaluated without cancellation."""
    if _uses_rationalized(branch, xi0):
        f = params.f(rho)
        xr = xi_rho(rho, xi0, xi_phi, branch, params)
        return 2.0 * (2.0 - f) * xi0 + 2.0 * (f - 1.0) * xr
    f = params.f(rho)
    sd = np.sqrt(discriminant_delta(rho, xi0, xi_phi, params))
    return 2.0 / f * (xi0 - branch.sign * (f - 1.0) * sd)


def planar_to_cartesian(rho, phi, xi_rho_val, xi_phi):
    """Embed a planar polar phase point into R^3 (x3 = 0) with the dual momentum."""
    c, s = math.cos(phi), math.sin(phi)
    x = np.array([rho * c, rho * s, 0.0])
    xi = np.array([xi_rho_val * c - xi_phi / rho * s, xi_rho_val * s + xi_phi / rho * c, 0.0])
    return x, xi


def cartesian_to_planar(x, xi):
    """Inverse of planar_to_cartesian for points in the x3 = 0 plane."""
    rho = math.hypot(x[0], x[1])
    phi = math.atan2(x[1], x[0])
    xr = (x[0] * xi[0] + x[1] * xi[1]) / rho
    xp = x[0] * xi[1] - x[1] * xi[0]
    return rho, phi, xr, xp


@dataclass(frozen=True)
class PhaseState:
    """Point on a planar null bicharacteristic."""

    x0: float
    rho: float
    phi: float
    xi0: float
    xi_rho: float
    xi_phi: float
    branch: Branch = Branch.MINUS

    @classmethod
    def on_shell(cls, rho, phi, xi0, xi_phi, params, branch=Branch.MINUS, x0=0.0):
        xr = float(xi_rho(rho, xi0, xi_phi, branch, params))
        return cls(float(x0), float(rho), float(phi), float(xi0), xr, float(xi_phi), branch)

    def residual(self, params: MetricParams) -> float:
        return float(hamiltonian_planar(self.rho, self.xi0, self.xi_rho, self.xi_phi, params))


@dataclass(frozen=True)
class CartesianState:
    x0: float
    x: np.ndarray
    xi0: float
    xi: np.ndarray

    def residual(self, params: MetricParams) -> float:
        return hamiltonian_cartesian(self.x, self.xi0, self.xi, params)

    @classmethod
    def from_planar(cls, state: PhaseState) -> "CartesianState":
        x, xi = planar_to_cartesian(state.rho, state.phi, state.xi_rho, state.xi_phi)
        return cls(state.x0, x, state.xi0, xi)


def lapse_f_gap(gap, params: MetricParams):
    """f at rho = r_minus - gap, keeping relative precision as gap -> 0."""
    if params.r_minus is None:
        raise DomainError("no horizon to measure the gap from")
    rho = params.r_minus - gap
    if params.r_plus > params.r_minus:
        return (rho - params.r_plus) * (-gap) / rho**2
    return gap * gap / rho**2


def xi_rho_near_horizon(gap, xi0, xi_phi, branch: Branch, params: MetricParams):
    """xi_rho^branch at rho = r_minus - gap with f evaluated from the gap."""
    rho = params.r_minus - gap
    f = lapse_f_gap(gap, params)
    delta = xi0**2 - f * xi_phi**2 / rho**2
    if np.any(delta < 0.0):
        raise NegativeDiscriminant("discriminant is negative at the requested radius")
    sd = np.sqrt(delta)
    if _uses_rationalized(branch, xi0):
        return xi0 - (xi_phi**2 / rho**2) / (xi0 - branch.sign * sd)
    return xi0 - (xi0 + branch.sign * sd) / f

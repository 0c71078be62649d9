"""Amplitude transport along rays.

The wave operator is in divergence form, so with S the phase the first-order
term of P(a e^{ikS}) is T(a) = H_xi . grad a + (1/2) div(H_xi) a.  On the planar
chart every component of H_xi(grad S) depends on rho only, and along a ray
parametrized by x0 the leading amplitude obeys

    da/dx0 = M a,   M = -sigma (sqrt D)' / H_xi0,

equivalently a^2 sqrt(D) is conserved.  Higher orders follow the hierarchy
T(a_p) = i P(a_{p-1}), which along rays reads da_p/dx0 = M a_p + i P(a_{p-1}) / H_xi0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import BranchUndefined, ConfigError, InsufficientTail, MissingCausticData
from .fitting import fit_model
from .geodesic import Trajectory
from .metric import (
    Branch,
    MetricParams,
    PhaseState,
    _uses_rationalized,
    discriminant_delta,
    dx0_ds_shell,
    lapse_f_gap,
)

HIERARCHY_SIGMA = 1j  # from T(a_p) = i P(a_{p-1}); derived, not tuned


@dataclass(frozen=True)
class BumpSpec:
    center: tuple
    width: float
    height: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigError("bump width must be positive")


def bump_chi(y, spec: BumpSpec):
    """Smooth compactly supported bump height * exp(1 - 1/(1 - |z|^2))."""
    z = (np.asarray(y, dtype=float) - np.asarray(spec.center, dtype=float)) / spec.width
    r2 = np.sum(z * z, axis=-1)
    inside = r2 < 1.0
    out = np.zeros(np.shape(r2))
    with np.errstate(divide="ignore", over="ignore"):
        vals = spec.height * np.exp(1.0 - 1.0 / (1.0 - np.where(inside, r2, 0.0)))
    out = np.where(inside, vals, 0.0)
    return out if np.ndim(out) else float(out)


def _hx0_and_dsd(rho, xi0, xi_phi, branch, params, gap=None):
    """(H_xi0, (sqrt D)', f) with f taken from the horizon gap when given."""
    f = lapse_f_gap(gap, params) if gap is not None else params.f(rho)
    fp = params.df(rho)
    b = xi_phi**2 / rho**2
    delta = xi0**2 - f * b
    if delta <= 0.0:
        raise BranchUndefined("sqrt(D) is not differentiable at D <= 0")
    sd = math.sqrt(delta)
    dsd = -(fp / rho**2 - 2.0 * f / rho**3) * xi_phi**2 / (2.0 * sd)
    sigma = branch.sign
    if _uses_rationalized(branch, xi0):
        if xi0 > 0:
            hx0 = 2.0 * (sd + b / (xi0 + sd))
        else:
            hx0 = float(dx0_ds_shell(rho, xi0, xi_phi, branch, params))
        return hx0, dsd, f, None
    # singular branch: H_xi0 = (2/f)(xi0 - sigma (f - 1) sqrt D); keep the f factor separate
    return None, dsd, f, 2.0 * (xi0 - sigma * (f - 1.0) * sd)


def transport_coefficient(state: PhaseState, branch: Branch, params: MetricParams, gap: float | None = None) -> float:
    """M = -sigma (sqrt D)' / H_xi0, finite across the horizons on either branch."""
    hx0, dsd, f, num = _hx0_and_dsd(state.rho, state.xi0, state.xi_phi, branch, params, gap)
    if hx0 is not None:
        return -branch.sign * dsd / hx0
    return -branch.sign * dsd * f / num


def transport_coefficient_abstract(rho, xi0, xi_phi, branch: Branch, params: MetricParams, h: float = 1e-4) -> float:
    """-div(H_xi(grad S)) / (2 H_xi0) with S_rho differentiated numerically.

    Cross-check of the closed form: the radial momentum is taken as the
    finite-difference derivative of the radial action, and its derivative as a
    second difference, instead of the analytic (sqrt D)'.
    """
    from .eikonal import radial_action

    rho_10 = rho + 1.0

    def action(r):
        return radial_action(r, Branch.MINUS, xi0, xi_phi, rho_10, params) if branch is Branch.MINUS else None

    if branch is not Branch.MINUS:
        raise BranchUndefined("abstract form is checked on the Minus branch")
    a = [action(rho + k * h) for k in (-2, -1, 0, 1, 2)]
    s_r = (a[0] - 8 * a[1] + 8 * a[3] - a[4]) / (12 * h)
    s_rr = (-a[0] + 16 * a[1] - 30 * a[2] + 16 * a[3] - a[4]) / (12 * h * h)
    f, fp = params.f(rho), params.df(rho)
    # H_xi_rho = 2 (f - 1) xi0 - 2 f S_rho; its rho derivative along the phase field
    div = 2.0 * fp * xi0 - 2.0 * fp * s_r - 2.0 * f * s_rr
    hx0 = 2.0 * (2.0 - f) * xi0 + 2.0 * (f - 1.0) * s_r
    return -div / (2.0 * hx0)


@dataclass
class AmplitudeTrack:
    ray_id: tuple
    order: int
    x0: np.ndarray
    values: np.ndarray  # complex
    m_coeff: np.ndarray
    branch: list
    limit_estimate: complex | None = None
    meta: dict = field(default_factory=dict)


def _solve_segment(traj, t_a, t_b, a_init, src_fns, n_out, rtol, atol):
    """Integrate the stacked hierarchy [a_0, ..., a_N] from t_a to t_b."""
    p = traj.params

    def m_of(t):
        rho, br, gap = traj.radial(t)
        st = PhaseState(t, rho, 0.0, traj.xi0, 0.0, traj.xi_phi, br)
        return transport_coefficient(st, br, p, gap=gap), br, rho, gap

    def rhs(t, y):
        m, br, rho, gap = m_of(t)
        out = m * y
        for k, fn in enumerate(src_fns, start=1):
            out[k] = out[k] + fn(t)
        return out

    grid = np.linspace(t_a, t_b, n_out)
    sol = solve_ivp(rhs, (t_a, t_b), np.asarray(a_init, dtype=complex), method="DOP853",
                    rtol=rtol, atol=atol, t_eval=grid)
    if sol.status != 0:
        from .errors import StepFailure

        raise StepFailure(sol.message)
    ms, brs = [], []
    for t in grid:
        m, br, _, _ = m_of(t)
        ms.append(m)
        brs.append(br)
    return grid, sol.y, np.array(ms), brs


def integrate_amplitude(traj: Trajectory, chi_value: complex, orders: int = 0, band=(0.5, 0.5),
                        plus_initial=None, sources=None, x0_end: float | None = None,
                        n_out: int = 401, rtol: float = 1e-12, atol: float = 1e-14,
                        ray_id: tuple = (0, 0)) -> list:
    """Leading amplitude (and optional higher orders) along one ray.

    The Minus segment runs from the launch time to t0 - band[0].  The Plus
    segment starts at t0 + band[1] from ``plus_initial`` (one value per order,
    normally produced by the caustic matching) and runs to ``x0_end``.
    ``sources`` holds callables x0 -> i P(a_{p-1}) / H_xi0 for p = 1..orders.
    """
    if orders < 0:
        raise ConfigError("orders must be non-negative")
    sources = list(sources or [])
    if len(sources) < orders:
        raise ConfigError(f"{orders} orders requested but {len(sources)} source terms given")
    src = sources[:orders]
    t_start = float(traj.x0[0])
    t_stop = float(traj.x0[-1]) if x0_end is None else float(x0_end)
    t0 = traj.turning_time
    eps_m, eps_p = band
    a0 = np.zeros(orders + 1, dtype=complex)
    a0[0] = chi_value
    pieces = []
    minus_end = t_stop if t0 is None else min(t_stop, t0 - eps_m)
    if t0 is not None and t_stop > t0 - eps_m and plus_initial is None:
        raise MissingCausticData("crossing the turning band needs the caustic matching output")
    if chi_value == 0 and (plus_initial is None or not np.any(np.asarray(plus_initial))):
        grid = np.linspace(t_start, minus_end, n_out)
        pieces.append((grid, np.zeros((orders + 1, n_out), dtype=complex), np.zeros(n_out), [Branch.MINUS] * n_out))
    else:
        pieces.append(_solve_segment(traj, t_start, minus_end, a0, src, n_out, rtol, atol))
    if t0 is not None and t_stop > t0 + eps_p:
        init = np.zeros(orders + 1, dtype=complex)
        pi = np.atleast_1d(np.asarray(plus_initial, dtype=complex))
        init[: min(len(pi), orders + 1)] = pi[: orders + 1]
        if not np.any(init):
            grid = np.linspace(t0 + eps_p, t_stop, n_out)
            pieces.append((grid, np.zeros((orders + 1, n_out), dtype=complex), np.zeros(n_out), [Branch.PLUS] * n_out))
        else:
            pieces.append(_solve_segment(traj, t0 + eps_p, t_stop, init, src, n_out, rtol, atol))
    tracks = []
    for p in range(orders + 1):
        xs = np.concatenate([pc[0] for pc in pieces])
        vs = np.concatenate([pc[1][p] for pc in pieces])
        ms = np.concatenate([pc[2] for pc in pieces])
        brs = sum((list(pc[3]) for pc in pieces), [])
        tracks.append(AmplitudeTrack(ray_id, p, xs, vs, ms, brs, meta={"band": tuple(band), "t0": t0}))
    return tracks


def minus_closed_form(traj: Trajectory, chi_value, x0) -> complex:
    """chi * (D(rho') / D(rho))^(1/4): exact leading amplitude on the Minus segment."""
    p = traj.params
    d_init = discriminant_delta(float(traj.rho[0]), traj.xi0, traj.xi_phi, p)
    rho = traj.radial(x0)[0]
    return chi_value * (d_init / discriminant_delta(rho, traj.xi0, traj.xi_phi, p)) ** 0.25


@dataclass(frozen=True)
class AmplitudeLimit:
    limit: complex
    tail_rate: float | None  # exponential rate (Exponential model)
    tail_exponent: float | None  # power-law exponent of a - a_inf (Reciprocal model)
    window_estimates: tuple
    model: str


def amplitude_limit(track: AmplitudeTrack, model: str = "Exponential", tail_fraction: float = 0.3,
                    min_points: int = 8) -> AmplitudeLimit:
    """Large-time limit of a Plus-segment amplitude track.

    Exponential: the derivative M a is fitted as C e^{-lambda x0} on the tail and
    the limit is a(X) + (M a)(X) / lambda, done on two disjoint windows.
    Reciprocal: |M a| is fitted as a power law, the tail of a - a_inf decays like
    x0^{-p} with p = -(slope) - 1, and the limit is a(X) + X (M a)(X) / p.
    """
    sel = np.array([b is Branch.PLUS for b in track.branch])
    xs, vs, ms = track.x0[sel], track.values[sel], track.m_coeff[sel]
    if xs.size and not np.any(vs):
        return AmplitudeLimit(0j, None, None, (0j, 0j), model)
    n = xs.size
    k = int(math.ceil(tail_fraction * n))
    if k < min_points:
        raise InsufficientTail(f"only {k} tail samples")
    deriv = ms * vs
    mag = np.abs(deriv)
    windows = [slice(n - k, n), slice(n - 2 * k, n - k)]
    ests = []
    rate = expo = None
    for w in windows:
        xw, dw, mw = xs[w], deriv[w], mag[w]
        good = mw > 0
        if good.sum() < 5:
            raise InsufficientTail("derivative vanished on the tail window")
        if model == "Exponential":
            fit = fit_model(xw[good], mw[good], "ExpDecay")
            lam = fit.params["rate"]
            est = vs[w][-1] + dw[-1] / lam
            rate = rate if rate is not None else lam
        elif model == "Reciprocal":
            fit = fit_model(xw[good], mw[good], "PowerLaw")
            pw = -fit.params["exponent"] - 1.0
            est = vs[w][-1] + xw[-1] * dw[-1] / pw
            expo = expo if expo is not None else pw
        else:
            raise ConfigError(f"unknown tail model {model!r}")
        ests.append(complex(est))
    return AmplitudeLimit(ests[0], rate, expo, tuple(ests), model)

"""Crossing the turning-point caustic in the momentum representation.

At a fixed time slice the bundle's rays form a curve (rho_i, eta_i) with
eta = xi_rho.  Because every ray of the family is a time translate of one
reference ray, eta is injective across rays even where rho folds, so the
Legendre phase L(eta) = rho eta - S is single valued with L'(eta) = rho.

The oscillatory integral

    u(rho) = (k / 2 pi)^{1/2} int A(eta) exp(i k (rho eta - L(eta))) d eta

is regular through the caustic.  Its stationary points reproduce the position
space ansatz a exp(i k S) on either side when

    A = a |L''|^{1/2} exp(-i pi/4 sgn(-L''))

and A is carried along rays with |A|^2 |dH/drho| constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BPoly, CubicHermiteSpline, CubicSpline
from scipy.optimize import brentq

from .eikonal import RayBundle
from .errors import (
    AmbiguousRoot,
    DegenerateStationaryPoint,
    MatchFailure,
    NonMonotoneMomentum,
    NoStationaryPoint,
    UnderResolved,
)
from .metric import discriminant_delta, hamiltonian_planar
from .transport import BumpSpec, bump_chi
from .eikonal import rotate_plane
from .geodesic import rhs_full_planar

DEGENERACY_THRESHOLD = 1e-4  # relative to |L''| at the bracketing samples


@dataclass
class PhaseTable:
    x0: float
    eta_samples: np.ndarray
    L_values: np.ndarray
    rho_values: np.ndarray  # dL/deta at the samples (generating-ray radii)
    amp_values: np.ndarray  # complex
    phi: float
    xi0: float
    xi_phi: float
    ray_index: np.ndarray | None = None
    dH_drho: np.ndarray | None = None
    l2_values: np.ndarray | None = None  # exact d rho / d eta from the ray field, if known
    _L: object = field(default=None, repr=False)
    _A_re: object = field(default=None, repr=False)
    _A_im: object = field(default=None, repr=False)

    def __post_init__(self):
        order = np.argsort(self.eta_samples)
        for name in ("eta_samples", "L_values", "rho_values", "amp_values", "ray_index", "dH_drho", "l2_values"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v)[order])
        if np.any(np.diff(self.eta_samples) <= 0):
            raise NonMonotoneMomentum("momentum samples are not strictly monotone")
        # Hermite interpolation with the exact slope L' = rho (and L'' when available)
        if self.l2_values is not None:
            ders = np.column_stack([self.L_values, self.rho_values, self.l2_values])
            self._L = BPoly.from_derivatives(self.eta_samples, ders.tolist())
        else:
            self._L = CubicHermiteSpline(self.eta_samples, self.L_values, self.rho_values)
        amp = np.asarray(self.amp_values, dtype=complex)
        self._A_re = CubicSpline(self.eta_samples, amp.real)
        self._A_im = CubicSpline(self.eta_samples, amp.imag)

    @property
    def span(self):
        return float(self.eta_samples[0]), float(self.eta_samples[-1])

    def interpolation_error(self) -> float:
        """Gap to a lower-order interpolant on the support, a conservative proxy for the L error."""
        e = self.eta_samples
        lo, hi = self.support()
        mid = 0.5 * (e[1:] + e[:-1])
        mid = mid[(mid >= lo) & (mid <= hi)]
        if self.l2_values is not None:
            alt = CubicHermiteSpline(e, self.L_values, self.rho_values)
        else:
            alt = CubicSpline(e, self.L_values)
        return float(np.max(np.abs(self._L(mid) - alt(mid)))) if mid.size else 0.0

    def support(self):
        """Momentum interval carrying the amplitude, widened by one sample on each side."""
        nz = np.nonzero(np.abs(self.amp_values) > 0)[0]
        if nz.size == 0:
            return self.span
        a = max(nz[0] - 1, 0)
        b = min(nz[-1] + 1, len(self.eta_samples) - 1)
        return float(self.eta_samples[a]), float(self.eta_samples[b])

    def L(self, eta, nu=0):
        return self._L(eta, nu)

    def amp(self, eta):
        return self._A_re(eta) + 1j * self._A_im(eta)


@dataclass(frozen=True)
class StationaryPointReport:
    eta0: float
    phase_value: float
    second_derivative: float
    maslov_sign: int


def legendre_phase(bundle: RayBundle, x0: float, phi_slice: float | None = None, column: int | None = None,
                   amplitudes=None) -> PhaseTable:
    """Momentum-representation table at time x0 built from one column of the bundle.

    ``amplitudes`` gives the momentum amplitude A per ray (already including the
    Jacobian factor); default zeros.
    """
    spec = bundle.spec
    j = spec.n_phi // 2 if column is None else column
    p = bundle.params
    states = [bundle.rays[(i, j)].state_at(x0) for i in range(spec.n_rho)]
    if phi_slice is None:
        phi_slice = states[spec.n_rho // 2].phi
    rho = np.array([s.rho for s in states])
    eta = np.array([s.xi_rho for s in states])
    # S is constant along each ray and S_phi = xi_phi exactly
    s_vals = np.array([bundle.s0[i, j] + spec.xi_phi * (phi_slice - states[i].phi) for i in range(spec.n_rho)])
    d = np.diff(eta)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise NonMonotoneMomentum("xi_rho is not injective across the rays at this time")
    dh = np.array([_dh_drho(s.rho, s.xi0, s.xi_rho, s.xi_phi, p) for s in states])
    # along the curve d rho / d eta = (d rho/ds) / (d xi_rho/ds) = H_xi_rho / (-H_rho)
    l2 = np.array([rhs_full_planar(s, p)[1] / rhs_full_planar(s, p)[3] for s in states])
    amp = np.zeros(spec.n_rho, dtype=complex) if amplitudes is None else np.asarray(amplitudes, dtype=complex)
    return PhaseTable(x0, eta, rho * eta - s_vals, rho, amp, phi_slice, spec.xi0, spec.xi_phi,
                      ray_index=np.arange(spec.n_rho), dH_drho=dh, l2_values=l2)


def _dh_drho(rho, xi0, xr, xph, p):
    return -p.df(rho) * (xi0 - xr) ** 2 + 2.0 * xph * xph / rho**3


def _gauss_panels(a, b, n_panels, order=16):
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    return (mid + half * xg).ravel(), (half * wg).ravel()


def taper_window(eta, lo, hi, fraction=0.1):
    """Smooth window equal to 1 inside and flattening to 0 over the outer fraction of [lo, hi]."""
    width = fraction * (hi - lo)
    w = np.ones_like(eta)
    for edge, sgn in ((lo, 1.0), (hi, -1.0)):
        t = sgn * (eta - edge) / width
        inside = (t > 0) & (t < 1)
        tt = np.clip(t, 1e-300, 1 - 1e-16)
        with np.errstate(over="ignore"):
            smooth = 1.0 / (1.0 + np.exp(1.0 / tt - 1.0 / (1.0 - tt)))
        w = np.where(t <= 0, 0.0, np.where(inside, w * smooth, w))
    return w


def maslov_integral(table: PhaseTable, k: float, rho: float, nodes_per_period: int = 12,
                    taper: float = 0.1, max_nodes: int = 2_000_000) -> complex:
    """(k/2pi)^{1/2} int A e^{ik(rho eta - L)} d eta by panel Gauss-Legendre quadrature."""
    if not np.any(table.amp_values):
        return 0j
    t_lo, t_hi = table.span
    lo, hi = table.support()
    probe = np.linspace(lo, hi, 4001)
    slope = np.max(np.abs(rho - table.L(probe, 1)))
    periods = k * slope * (hi - lo) / (2.0 * math.pi)
    order = 16
    n_panels = max(8, int(math.ceil(periods * nodes_per_period / order)) + 1)
    if n_panels * order > max_nodes:
        raise UnderResolved(f"{n_panels * order} nodes needed to resolve the oscillations")
    if k * table.interpolation_error() > 0.1:
        raise UnderResolved("phase interpolation error times k exceeds 0.1 rad")
    eta, w = _gauss_panels(lo, hi, n_panels, order)
    amp = table.amp(eta)
    if taper > 0 and (lo, hi) == (t_lo, t_hi):
        # amplitude reaches the table edges: damp it smoothly there
        amp = amp * taper_window(eta, lo, hi, taper)
    ph = k * (rho * eta - table.L(eta))
    return complex(math.sqrt(k / (2.0 * math.pi)) * np.sum(w * amp * np.exp(1j * ph)))


def stationary_points(table: PhaseTable, rho: float, sub: int = 8) -> list:
    e = table.eta_samples
    # scan between samples: the momentum spacing can be very uneven on the horizon tail
    frac = np.linspace(0.0, 1.0, sub + 1)[:-1]
    grid = np.concatenate([(e[:-1, None] + (e[1:] - e[:-1])[:, None] * frac).ravel(), e[-1:]])
    g = table.L(grid, 1) - rho
    idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
    roots = [brentq(lambda e: float(table.L(e, 1)) - rho, grid[i], grid[i + 1], xtol=1e-15) for i in idx]
    roots += [float(grid[i]) for i in np.nonzero(g == 0)[0]]
    return sorted(roots)


def stationary_phase_eval(table: PhaseTable, k: float, rho: float, support_tol: float = 1e-6):
    """Leading stationary-phase value of the Maslov integral at rho, and its report."""
    roots = stationary_points(table, rho)
    lo, hi = table.span
    roots = [r for r in roots if lo < r < hi]
    if support_tol >= 0:
        amax = np.max(np.abs(table.amp_values)) or 1.0
        live = [r for r in roots if abs(table.amp(r)) > support_tol * amax]
        roots = live if live else roots
    if not roots:
        raise NoStationaryPoint(f"no stationary point for rho={rho}")
    if len(roots) > 1:
        e = table.eta_samples
        for a, b in zip(roots, roots[1:]):
            j = int(np.clip(np.searchsorted(e, a), 1, len(e) - 1))
            if b - a < 2.0 * (e[j] - e[j - 1]):
                # a pair merging within the sampling is the fold itself
                raise DegenerateStationaryPoint(f"stationary points coalescing at eta={a:.6g}")
        raise AmbiguousRoot("several stationary points carry amplitude", roots)
    e0 = roots[0]
    l2 = float(table.L(e0, 2))
    # local scale from the bracketing samples: a caustic shows up as |L''| collapsing
    # between them, while the horizon tail keeps L'' small but smooth
    l2s = table.l2_values if table.l2_values is not None else table.L(table.eta_samples, 2)
    j = int(np.clip(np.searchsorted(table.eta_samples, e0), 1, len(l2s) - 1))
    scale = float(max(abs(l2s[j - 1]), abs(l2s[j])))
    if abs(l2) < DEGENERACY_THRESHOLD * scale:
        raise DegenerateStationaryPoint(f"|L''|={abs(l2):.2e} below {DEGENERACY_THRESHOLD} of the table scale")
    sgn = 1 if -l2 > 0 else -1
    phase = rho * e0 - float(table.L(e0))
    val = table.amp(e0) / math.sqrt(abs(l2)) * np.exp(1j * k * phase) * np.exp(1j * math.pi / 4 * sgn)
    return complex(val), StationaryPointReport(e0, phase, l2, sgn)


def momentum_amplitude(a, l2):
    """A = a |L''|^{1/2} e^{-i pi/4 sgn(-L'')}: makes stationary phase return a e^{ikS}."""
    sgn = np.where(-np.asarray(l2) > 0, 1.0, -1.0)
    return np.asarray(a) * np.sqrt(np.abs(l2)) * np.exp(-1j * math.pi / 4 * sgn)


@dataclass
class PlusSideAnsatz:
    t0: float
    eps_band: float
    x0_minus: float
    x0_plus: float
    table_minus: PhaseTable
    table_plus: PhaseTable
    a_plus: np.ndarray  # position-space amplitude per ray at x0_plus
    maslov_jump: complex
    phase_identity_error: tuple  # (minus edge, plus edge)
    mismatch: dict  # k -> relative mismatch at the minus edge
    reports: dict = field(default_factory=dict)

    def plus_initial(self, i: int) -> complex:
        return complex(self.a_plus[i])


def minus_amplitudes(bundle: RayBundle, bump: BumpSpec, x0: float, column: int | None = None) -> np.ndarray:
    """Position-space a_00 per ray of one column at x0 from a^2 sqrt(D) conservation."""
    spec = bundle.spec
    j = spec.n_phi // 2 if column is None else column
    p = bundle.params
    out = []
    for i in range(spec.n_rho):
        tr = bundle.rays[(i, j)]
        chi = bump_chi(rotate_plane((spec.rho_grid[i], spec.phi_grid[j]), 0.0), bump)
        rho_t = tr.radial(x0)[0]
        d0 = discriminant_delta(spec.rho_grid[i], spec.xi0, spec.xi_phi, p)
        out.append(chi * (d0 / discriminant_delta(rho_t, spec.xi0, spec.xi_phi, p)) ** 0.25)
    return np.array(out, dtype=complex)


def _ray_phase(bundle, table, i, j):
    """Position phase of ray i on the table's φ slice."""
    st = bundle.rays[(i, j)].state_at(table.x0)
    return bundle.s0[i, j] + bundle.spec.xi_phi * (table.phi - st.phi)


def match_and_cross(bundle: RayBundle, bump: BumpSpec, k_list, eps_band: float, t0: float | None = None,
                    minus_amp=None, tol_match: float = 5.0, probe_level: float = 0.1,
                    check: bool = True) -> PlusSideAnsatz:
    """Match the Minus ansatz at t0 - eps to the Maslov integral and emit the Plus ansatz at t0 + eps."""
    spec = bundle.spec
    j = spec.n_phi // 2
    ic = spec.n_rho // 2
    if t0 is None:
        t0 = bundle.rays[(ic, j)].turning_time
    xm, xp = t0 - eps_band, t0 + eps_band
    tm = legendre_phase(bundle, xm)
    a_minus = minus_amplitudes(bundle, bump, xm) if minus_amp is None else np.asarray(minus_amp, dtype=complex)
    # L'' = d rho / d eta at the samples, from the Hermite interpolant
    amp_m = momentum_amplitude(a_minus[tm.ray_index], tm.l2_values)
    tm = PhaseTable(xm, tm.eta_samples, tm.L_values, tm.rho_values, amp_m, tm.phi, tm.xi0, tm.xi_phi,
                    ray_index=tm.ray_index, dH_drho=tm.dH_drho, l2_values=tm.l2_values)
    # carry A along rays: |A|^2 |dH/drho| conserved, argument frozen
    tp0 = legendre_phase(bundle, xp, phi_slice=None)
    dh_m = dict(zip(tm.ray_index.tolist(), tm.dH_drho))
    a_by_ray = dict(zip(tm.ray_index.tolist(), tm.amp_values))
    amp_p = np.array([a_by_ray[i] * math.sqrt(abs(dh_m[i]) / abs(h)) for i, h in zip(tp0.ray_index, tp0.dH_drho)])
    tp = PhaseTable(xp, tp0.eta_samples, tp0.L_values, tp0.rho_values, amp_p, tp0.phi, tp0.xi0, tp0.xi_phi,
                    ray_index=tp0.ray_index, dH_drho=tp0.dH_drho, l2_values=tp0.l2_values)

    # plus-side amplitude ray by ray through stationary phase at the ray's own radius
    a_plus = np.zeros(spec.n_rho, dtype=complex)
    err_p = 0.0
    reports = {}
    amax = np.max(np.abs(tp.amp_values))
    for n, i in enumerate(tp.ray_index):
        if abs(tp.amp_values[n]) <= 1e-12 * amax:
            continue
        rho_i = tp.rho_values[n]
        try:
            val, rep = stationary_phase_eval(tp, 0.0, rho_i)
        except DegenerateStationaryPoint:
            # ray already deep in the horizon tail: the position chart has collapsed
            a_plus[i] = np.nan
            continue
        a_plus[i] = val  # k = 0 strips the oscillating factor
        err_p = max(err_p, abs(rep.phase_value - _ray_phase(bundle, tp, i, j)))
        reports[("plus", int(i))] = rep
    err_m = 0.0
    for n, i in enumerate(tm.ray_index):
        if abs(tm.amp_values[n]) <= 1e-12 * np.max(np.abs(tm.amp_values)):
            continue
        _, rep = stationary_phase_eval(tm, 0.0, tm.rho_values[n])
        err_m = max(err_m, abs(rep.phase_value - _ray_phase(bundle, tm, i, j)))
        reports[("minus", int(i))] = rep
    sm = next(r.maslov_sign for key, r in reports.items() if key[0] == "minus")
    sp = next(r.maslov_sign for key, r in reports.items() if key[0] == "plus")
    jump = complex(np.exp(1j * math.pi / 4 * (sp - sm)))

    mismatch = {}
    for k in k_list:
        mismatch[float(k)] = minus_edge_mismatch(tm, a_minus, k, probe_level)
        if check and mismatch[float(k)] > tol_match / k:
            raise MatchFailure(f"mismatch {mismatch[float(k)]:.3e} exceeds {tol_match}/k at k={k}")
    return PlusSideAnsatz(t0, eps_band, xm, xp, tm, tp, a_plus, jump, (err_m, err_p), mismatch, reports)


def minus_edge_mismatch(table: PhaseTable, a_minus, k: float, probe_level: float = 0.1, n_probe: int = 9) -> float:
    """max |u_maslov - a e^{ikS}| / max |a| over probe radii inside the bump support."""
    a_minus = np.asarray(a_minus)
    amax = np.max(np.abs(a_minus))
    live = np.abs(a_minus[table.ray_index]) >= probe_level * amax
    rhos = table.rho_values[live]
    probes = np.linspace(rhos.min(), rhos.max(), n_probe)
    worst = 0.0
    for r in probes:
        ref, rep = stationary_phase_eval(table, k, r)
        u = maslov_integral(table, k, r)
        worst = max(worst, abs(u - ref))
    return worst / amax


def momentum_eikonal_residual(bundle: RayBundle, x0: float, eta: float, h: float = 1e-4, params=None) -> float:
    """H0(rho=L_eta, xi0=-L_x0, xi_rho=eta, xi_phi=-L_phi) from tables at neighbouring times."""
    p = params or bundle.params
    t_c = legendre_phase(bundle, x0)
    phi_ref = t_c.phi
    t_a = legendre_phase(bundle, x0 - h, phi_slice=phi_ref)
    t_b = legendre_phase(bundle, x0 + h, phi_slice=phi_ref)
    l_x0 = (float(t_b.L(eta)) - float(t_a.L(eta))) / (2 * h)
    t_phi = legendre_phase(bundle, x0, phi_slice=phi_ref + h)
    l_phi = (float(t_phi.L(eta)) - float(t_c.L(eta))) / h
    rho = float(t_c.L(eta, 1))
    return float(hamiltonian_planar(rho, -l_x0, eta, -l_phi, p))

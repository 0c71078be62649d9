"""Phase functions carried by bundles of planar rays.

The phase is stored per ray (Lagrangian form).  For an ingoing ray launched
from (rho', phi') the value is

    S0(rho', phi') = int_{rho_10}^{rho'} xi_rho^-(r) dr + xi_phi * phi'

and the phase S(x0, rho, phi) = xi0 x0 + int xi_rho dr + xi_phi phi is constant
along the ray.  After the turning radius r0 the radial integral continues on
the Plus branch.  Jacobians of (rho', phi') -> (rho, phi) come from centred
differences across the launch grid.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import BranchUndefined, ConfigError, GridTooCoarse
from .geodesic import EventKind, IntegrationOptions, Trajectory, initial_state, integrate, turning_radius
from .metric import (
    Branch,
    MetricParams,
    hamiltonian_planar,
    xi_rho,
    xi_rho_near_horizon,
)

QUAD_EPSABS = 1e-11


@dataclass(frozen=True)
class BundleSpec:
    rho_center: float
    phi_center: float = 0.0
    eps: float = 0.05
    delta: float = 0.05
    n_rho: int = 9
    n_phi: int = 9
    n_alpha: int = 5
    xi0: float = 1.0
    xi_phi: float = 1.0
    rho_10: float | None = None

    def __post_init__(self):
        if not (self.eps > 0 and self.delta > 0):
            raise ConfigError("eps and delta must be positive")
        for n in (self.n_rho, self.n_phi, self.n_alpha):
            if n < 3 or n % 2 == 0:
                raise ConfigError("grid counts must be odd and at least 3")
        if self.rho_10 is None:
            object.__setattr__(self, "rho_10", self.rho_center + 1.0)
        if not self.rho_10 > self.rho_center + self.eps:
            raise ConfigError("rho_10 must exceed rho_center + eps")

    @property
    def rho_grid(self) -> np.ndarray:
        return np.linspace(self.rho_center - self.eps, self.rho_center + self.eps, self.n_rho)

    @property
    def phi_grid(self) -> np.ndarray:
        return np.linspace(self.phi_center - self.eps, self.phi_center + self.eps, self.n_phi)

    @property
    def alpha_grid(self) -> np.ndarray:
        return np.linspace(-self.delta, self.delta, self.n_alpha)


def s0_minus(rho_p, phi_p, xi0, xi_phi, rho_10, params: MetricParams) -> float:
    """Initial phase int_{rho_10}^{rho'} xi_rho^- dr + phi' xi_phi."""
    if rho_p == rho_10:
        return phi_p * xi_phi
    val, _ = quad(lambda r: xi_rho(r, xi0, xi_phi, Branch.MINUS, params), rho_10, rho_p,
                  epsabs=QUAD_EPSABS, epsrel=1e-13, limit=200)
    return val + phi_p * xi_phi


def radial_action(rho, branch: Branch, xi0, xi_phi, rho_10, params: MetricParams,
                  gap: float | None = None, r0: float | None = None) -> float:
    """int xi_rho dr from rho_10 to rho along the ray, switching branch at r0.

    ``gap`` = r_minus - rho may be supplied for points on the Plus tail so the
    log-singular end of the integral keeps relative precision.
    """
    if branch is Branch.MINUS:
        return s0_minus(rho, 0.0, xi0, xi_phi, rho_10, params)
    if r0 is None:
        r0 = turning_radius(xi0, xi_phi, params)
    base = s0_minus(r0, 0.0, xi0, xi_phi, rho_10, params)
    r_h = params.r_minus
    if r_h and rho < r_h:
        g = (r_h - rho) if gap is None else gap
        ua, ub = math.log(r_h - r0), math.log(g)

        def integrand(u):
            w = math.exp(u)
            return -xi_rho_near_horizon(w, xi0, xi_phi, Branch.PLUS, params) * w

        val, _ = quad(integrand, ua, ub, epsabs=QUAD_EPSABS, epsrel=1e-13, limit=400)
        return base + val
    val, _ = quad(lambda r: xi_rho(r, xi0, xi_phi, Branch.PLUS, params), r0, rho,
                  epsabs=QUAD_EPSABS, epsrel=1e-13, limit=400)
    return base + val


def phase_along_ray(traj: Trajectory, rho_10: float, r0: float | None = None, stride: int = 1) -> np.ndarray:
    """S = xi0 x0 + radial action + xi_phi phi at the trajectory samples."""
    p = traj.params
    if r0 is None and traj.turning_time is not None:
        r0 = turning_radius(traj.xi0, traj.xi_phi, p)
    out = []
    for i in range(0, len(traj.x0), stride):
        br = traj.branch[i]
        gap = None
        if br is Branch.PLUS and traj.delta_h is not None and np.isfinite(traj.delta_h[i]):
            gap = float(traj.delta_h[i])
        act = radial_action(float(traj.rho[i]), br, traj.xi0, traj.xi_phi, rho_10, p, gap=gap, r0=r0)
        out.append(traj.xi0 * traj.x0[i] + act + traj.xi_phi * traj.phi[i])
    return np.array(out)


def rotate_plane(point2d, alpha: float) -> np.ndarray:
    """Image of the planar point (rho', phi') on the plane tilted by alpha about x2."""
    rho, phi = point2d
    c = math.cos(phi)
    return np.array([rho * c * math.cos(alpha), rho * math.sin(phi), rho * c * math.sin(alpha)])


def rotation_chart_jacobian(rho, phi, alpha=0.0) -> float:
    """Determinant of d(y1, y2, y3)/d(rho', phi', alpha)."""
    ca, sa, cp, sp = math.cos(alpha), math.sin(alpha), math.cos(phi), math.sin(phi)
    m = np.array(
        [
            [cp * ca, -rho * sp * ca, -rho * cp * sa],
            [sp, rho * cp, 0.0],
            [cp * sa, -rho * sp * sa, rho * cp * ca],
        ]
    )
    return float(np.linalg.det(m))


@dataclass
class RayBundle:
    spec: BundleSpec
    params: MetricParams
    rays: dict
    s0: np.ndarray  # [i, j]
    t0: np.ndarray  # [i, j] turning time per ray (nan if none)
    x0_grid: np.ndarray
    rho: np.ndarray  # [i, j, t]
    phi: np.ndarray  # [i, j, t]
    jac2: np.ndarray  # [i, j, t] planar Jacobian, nan on the grid edge
    jac3: np.ndarray  # [i, j, t] tilted 3D Jacobian
    caustic_time: np.ndarray  # [i, j] first zero of jac2
    richardson_gap: float = 0.0
    meta: dict = field(default_factory=dict)

    def ray(self, i, j) -> Trajectory:
        return self.rays[(i, j)]

    @property
    def center(self) -> tuple:
        return (self.spec.n_rho // 2, self.spec.n_phi // 2)


def _launch(args):
    rho_p, phi_p, spec, params, x0_max, opts = args
    st = initial_state(rho_p, phi_p, spec.xi0, spec.xi_phi, params, branch=Branch.MINUS)
    return integrate(st, x0_max, params, opts)


def _fd(arr, axis, h, step):
    """Centred difference with stencil half-width step*h along axis, nan-padded."""
    out = np.full(arr.shape, np.nan)
    sl_c = [slice(None)] * arr.ndim
    sl_p = [slice(None)] * arr.ndim
    sl_m = [slice(None)] * arr.ndim
    n = arr.shape[axis]
    sl_c[axis] = slice(step, n - step)
    sl_p[axis] = slice(2 * step, n)
    sl_m[axis] = slice(0, n - 2 * step)
    out[tuple(sl_c)] = (arr[tuple(sl_p)] - arr[tuple(sl_m)]) / (2 * step * h)
    return out


def planar_jacobian(rho, phi, h_rho, h_phi, step=1):
    """det d(rho, phi)/d(rho', phi') on the launch grid (axes 0, 1)."""
    return (_fd(rho, 0, h_rho, step) * _fd(phi, 1, h_phi, step)
            - _fd(rho, 1, h_phi, step) * _fd(phi, 0, h_rho, step))


def propagate_bundle(spec: BundleSpec, params: MetricParams, x0_max: float,
                     opts: IntegrationOptions | None = None, n_times: int = 801,
                     threads: int = 1, richardson_tol: float = 0.1) -> RayBundle:
    """Integrate every launch-grid ray and assemble phases and Jacobians."""
    opts = opts or IntegrationOptions()
    rg, pg = spec.rho_grid, spec.phi_grid
    jobs = [(r, p, spec, params, x0_max, opts) for r in rg for p in pg]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajs = list(pool.map(_launch, jobs))
    else:
        trajs = [_launch(j) for j in jobs]
    rays = {}
    s0 = np.zeros((spec.n_rho, spec.n_phi))
    t0 = np.full((spec.n_rho, spec.n_phi), np.nan)
    for idx, tr in enumerate(trajs):
        i, j = divmod(idx, spec.n_phi)
        rays[(i, j)] = tr
        s0[i, j] = s0_minus(rg[i], pg[j], spec.xi0, spec.xi_phi, spec.rho_10, params)
        if tr.turning_time is not None:
            t0[i, j] = tr.turning_time
    t_end = min(min(tr.x0[-1] for tr in trajs), x0_max)
    grid = np.linspace(0.0, t_end, n_times)
    rho = np.empty((spec.n_rho, spec.n_phi, n_times))
    phi = np.empty_like(rho)
    for (i, j), tr in rays.items():
        d = tr.dense(grid)
        rho[i, j], phi[i, j] = d["rho"], d["phi"]
    h_r, h_p = rg[1] - rg[0], pg[1] - pg[0]
    j_h = planar_jacobian(rho, phi, h_r, h_p, 1)
    gap = 0.0
    if spec.n_rho >= 5 and spec.n_phi >= 5:
        j_2h = planar_jacobian(rho, phi, h_r, h_p, 2)
        ok = np.isfinite(j_2h)
        scale = np.nanmax(np.abs(j_h[ok]))
        gap = float(np.nanmax(np.abs(j_h[ok] - j_2h[ok])) / scale)
        if gap > richardson_tol:
            raise GridTooCoarse(f"Jacobian stencils disagree by {gap:.1%}")
    rp = rg[:, None, None]
    pp = pg[None, :, None]
    jac3 = (rho**2 * np.cos(phi)) / (rp**2 * np.cos(pp)) * j_h
    ctime = np.full((spec.n_rho, spec.n_phi), np.nan)
    bundle = RayBundle(spec, params, rays, s0, t0, grid, rho, phi, j_h, jac3, ctime, gap,
                       meta={"rho_10": spec.rho_10, "x0_max": x0_max})
    for i in range(1, spec.n_rho - 1):
        for j in range(1, spec.n_phi - 1):
            ctime[i, j] = _first_zero(bundle, i, j)
    return bundle


def node_jacobian(bundle: RayBundle, i: int, j: int, x0: float, step: int = 1) -> float:
    """Planar Jacobian at a single time from the dense output of the four neighbours."""
    rg, pg = bundle.spec.rho_grid, bundle.spec.phi_grid
    sp_r = [bundle.rays[(i + step, j)].state_at(x0), bundle.rays[(i - step, j)].state_at(x0)]
    sp_p = [bundle.rays[(i, j + step)].state_at(x0), bundle.rays[(i, j - step)].state_at(x0)]
    hr = rg[i + step] - rg[i - step]
    hp = pg[j + step] - pg[j - step]
    drr = (sp_r[0].rho - sp_r[1].rho) / hr
    dpr = (sp_r[0].phi - sp_r[1].phi) / hr
    drp = (sp_p[0].rho - sp_p[1].rho) / hp
    dpp = (sp_p[0].phi - sp_p[1].phi) / hp
    return drr * dpp - drp * dpr


def _first_zero(bundle: RayBundle, i: int, j: int) -> float:
    """First sign change of the planar Jacobian, refined on dense output.

    Where the grid allows, the two centred stencils are Richardson-combined so
    the located zero is fourth-order accurate in the launch spacing.
    """
    jj = bundle.jac2[i, j]
    sgn = np.sign(jj)
    idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    if idx.size == 0:
        return float("nan")
    a, b = bundle.x0_grid[idx[0]], bundle.x0_grid[idx[0] + 1]
    n_r, n_p = bundle.spec.n_rho, bundle.spec.n_phi
    wide = 2 <= i < n_r - 2 and 2 <= j < n_p - 2

    def fn(t):
        if not wide:
            return node_jacobian(bundle, i, j, t)
        return (4.0 * node_jacobian(bundle, i, j, t) - node_jacobian(bundle, i, j, t, step=2)) / 3.0

    fa, fb = fn(a), fn(b)
    while fa * fb > 0:  # widen slightly if the extrapolated zero sits just outside
        a, b = a - (b - a), b + (b - a)
        fa, fb = fn(a), fn(b)
    return brentq(fn, a, b, xtol=1e-13)


def phase_gradient(bundle: RayBundle, i: int, j: int, x0: float) -> np.ndarray:
    """(S_x0, S_rho, S_phi) at the point of ray (i, j) reached at x0.

    Built only from the stored per-ray phases: spatial gradient by
    Richardson-extrapolated finite differences across the grid, time
    derivative from constancy along the ray.
    """
    rg, pg = bundle.spec.rho_grid, bundle.spec.phi_grid

    def grads(step):
        hr = rg[i + step] - rg[i - step]
        hp = pg[j + step] - pg[j - step]
        a = [bundle.rays[(i + step, j)].state_at(x0), bundle.rays[(i - step, j)].state_at(x0)]
        b = [bundle.rays[(i, j + step)].state_at(x0), bundle.rays[(i, j - step)].state_at(x0)]
        jac = np.array(
            [
                [(a[0].rho - a[1].rho) / hr, (b[0].rho - b[1].rho) / hp],
                [(a[0].phi - a[1].phi) / hr, (b[0].phi - b[1].phi) / hp],
            ]
        )
        ds = np.array(
            [
                (bundle.s0[i + step, j] - bundle.s0[i - step, j]) / hr,
                (bundle.s0[i, j + step] - bundle.s0[i, j - step]) / hp,
            ]
        )
        # dS0/dy = (dS/dx) (dx/dy)  =>  dS/dx = dS0/dy (dx/dy)^{-1}
        return np.linalg.solve(jac.T, ds)

    g = (4.0 * grads(1) - grads(2)) / 3.0
    st = bundle.rays[(i, j)].state_at(x0)
    from .geodesic import rhs_full_planar

    v = rhs_full_planar(st, bundle.params)
    s_x0 = -(g[0] * v[1] + g[1] * v[2]) / v[0]
    return np.array([s_x0, g[0], g[1]])


def eikonal_residual(bundle: RayBundle, ray: tuple, x0: float, band: float = 0.02,
                     perturb: float = 0.0) -> float:
    """Quadratic form of the eikonal equation at a ray point.

    The gradient is (xi0, xi_rho^branch(rho), xi_phi); inside the band around
    the turning time the branch is undefined.
    """
    tr = bundle.rays[ray]
    t0 = tr.turning_time
    if t0 is not None and abs(x0 - t0) < band:
        raise BranchUndefined("inside the turning-point band")
    st = tr.state_at(x0)
    p = bundle.params
    s_rho = float(xi_rho(st.rho, tr.xi0, tr.xi_phi, st.branch, p)) + perturb
    return float(hamiltonian_planar(st.rho, tr.xi0, s_rho, tr.xi_phi, p))


def lifted_phase(bundle: RayBundle, i: int, j: int, alpha: float) -> float:
    """Phase of the ray launched from rotate_plane((rho'_i, phi'_j), alpha)."""
    # rotations about x2 preserve the metric and the planar momentum data
    return float(bundle.s0[i, j])


def choose_band(bundle: RayBundle, i: int, j: int, level: float = 0.1) -> float:
    """Distance before the caustic time over which |J| < level * |J(0)|.

    Only the incoming side is measured: after the turn neighbouring rays pile
    onto the inner horizon and the planar Jacobian does not recover.
    """
    jj = np.abs(bundle.jac2[i, j])
    tc = bundle.caustic_time[i, j]
    if not np.isfinite(tc):
        return 0.0
    grid = bundle.x0_grid
    small = jj < level * jj[0]
    lo = int(np.searchsorted(grid, tc))
    while lo > 0 and small[lo - 1]:
        lo -= 1
    return float(tc - grid[lo])


def turning_times(bundle: RayBundle) -> np.ndarray:
    """Per-ray TurningPoint times, for cross-checking caustic detection."""
    out = np.full(bundle.t0.shape, np.nan)
    for (i, j), tr in bundle.rays.items():
        ev = tr.events_of(EventKind.TURNING_POINT)
        if ev:
            out[i, j] = ev[0].x0
    return out

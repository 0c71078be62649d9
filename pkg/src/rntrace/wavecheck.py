"""Residual of the assembled ansatz under the planar wave operator.

The operator is

    P v = v_00 - v_rr - v_pp / r^2 - (f - 1) D^2 v - f' D v,   D = -d_0 + d_r,

and for u = a e^{ikS} it splits by powers of k:

    P(a e^{ikS}) = e^{ikS} ( -k^2 Q(grad S) a + ik T(a) + P a ),

with Q the principal symbol (the eikonal form) and T(a) = 2 B(grad S, grad a)
+ (P S) a the transport operator.  Each term is built from finite differences
of the fields a and S; the oscillating field itself is only differenced at
small k, as a cross-check.

Fields are rebuilt from the ray family rather than interpolated from a grid.
With xi0 and xi_phi shared by all rays, every ray is a time translate of one
profile, so a point (x0, rho, phi) is traced back to its launch point by
inverting the ray time T(rho).  Both branches are covered by one coordinate
s = +-sqrt(rho - r0) (positive before the turning point), in which T, the
angle Phi and the radial action A are analytic through the turn.  The Plus
tail towards the inner horizon uses w = -log(r_minus - rho) as chart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as C

from .eikonal import BundleSpec
from .errors import ConfigError, FDInconsistent, OutOfChart
from .fitting import FitResult, fit_model  # noqa: F401  (re-exported)
from .geodesic import turning_radius
from .metric import MetricParams, Regime
from .transport import BumpSpec, bump_chi

__all__ = [
    "WaveAnsatz",
    "ProbePoint",
    "ResidualProbe",
    "apply_wave_operator",
    "probe_points",
    "residual_scaling",
    "direct_residual",
    "wave_terms",
    "fit_model",
]

# 6th-order central stencils on offsets -3..3
D1 = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])
D2 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])
OFFS = np.arange(-3, 4)


class _Piecewise:
    """Piecewise Chebyshev antiderivative of an integrand on given panel edges."""

    def __init__(self, integrand, edges, deg, start_value=0.0, anchor=None):
        self.edges = np.asarray(edges, dtype=float)
        self.pieces = []
        acc = 0.0
        for a, b in zip(self.edges[:-1], self.edges[1:]):
            g = C.Chebyshev.interpolate(integrand, deg, domain=[a, b])
            G = g.integ(lbnd=a)
            self.pieces.append((g, G, acc))
            acc += float(G(b))
        shift = start_value
        if anchor is not None:
            shift -= float(self(anchor))
        self.pieces = [(g, G, c + shift) for g, G, c in self.pieces]

    def _index(self, x):
        return np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.pieces) - 1)

    def __call__(self, x, deriv=False):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        idx = self._index(x)
        for k, (g, G, c) in enumerate(self.pieces):
            m = idx == k
            if np.any(m):
                out[m] = g(x[m]) if deriv else G(x[m]) + c
        return out


@dataclass(frozen=True)
class ProbePoint:
    x0: float
    chart: str  # "rho" before the turning point, "tail" after it
    q: float  # rho, or w = -log(r_minus - rho)
    phi: float

    @property
    def branch(self) -> str:
        return "Minus" if self.chart == "rho" else "Plus"


@dataclass
class ResidualProbe:
    point: ProbePoint
    k: float
    N: int
    terms: dict  # eikonal_term, transport_term, remainder_term
    fd_gap: float = 0.0  # Richardson gap of the total residual, h vs 2h

    @property
    def total(self) -> complex:
        t = self.terms
        return -self.k**2 * t["eikonal_term"] + 1j * self.k * t["transport_term"] + t["remainder_term"]


class WaveAnsatz:
    """Phase S and amplitudes a_0, a_1 of the geometric-optics ansatz on the plane x3 = 0.

    a_0 = chi(launch point) (D(rho')/D(rho))^{1/4}, times the caustic factor
    after the turning point.  a_1 solves T(a_1) = i P(a_0) along rays from zero
    data at launch (Minus) or at the band edge t_turn + eps (Plus, where the
    stationary-phase matching carries only the leading order).
    """

    def __init__(self, params: MetricParams, spec: BundleSpec, bump: BumpSpec, eps_band: float = 0.15,
                 maslov_jump: complex = 1j, n_gl: int = 48, deg: int = 32, gap_min: float = 1e-13,
                 rho_margin: float = 1.0, inner_scale: float = 4.0):
        if params.regime is not Regime.SUB_EXTREMAL or params.e == 0:
            raise ConfigError("the residual check needs a sub-extremal metric with an inner horizon")
        if not spec.xi0 > 0:
            raise ConfigError("xi0 must be positive")
        self.params, self.spec, self.bump = params, spec, bump
        self.eps_band = float(eps_band)
        self.jump = complex(maslov_jump)
        self.n_gl = int(n_gl)
        self.inner_scale = float(inner_scale)
        p = params
        self.xi0, self.xi_phi = float(spec.xi0), float(spec.xi_phi)
        self.r0 = turning_radius(self.xi0, self.xi_phi, p)
        if not self.r0 < p.r_minus:
            raise ConfigError("turning radius must lie inside the inner horizon")
        self.s_end = -math.sqrt(p.r_minus - self.r0)
        self.s_glue = 0.5 * self.s_end
        self.rho_max = spec.rho_center + spec.eps + rho_margin
        self.s_max = math.sqrt(self.rho_max - self.r0)
        # main region: panels graded away from the tail singularity at s_end
        edges = [self.s_glue]
        d = 0.5 * abs(self.s_end)
        while edges[-1] < self.s_max:
            d *= 1.6
            edges.append(min(self.s_end + d, self.s_max))
        if 0.0 not in edges:
            edges = sorted(edges + [0.0])
        self.main_edges = np.array(edges)
        self.l_glue = -math.log(0.5 * abs(self.s_end))
        self.l_max = -math.log(gap_min / (2 * abs(self.s_end)))
        n_tail = max(2, int(math.ceil((self.l_max - self.l_glue) / 1.5)))
        tail_edges = np.linspace(self.l_glue, self.l_max, n_tail + 1)
        self._main = {}
        self._tail = {}
        for name in ("T", "Phi", "A"):
            fn = self._integrand(name)
            self._main[name] = _Piecewise(lambda s, fn=fn: fn(s, s - self.s_end), self.main_edges, deg, anchor=0.0)
            start = float(self._main[name](np.array([self.s_glue]))[0])

            def gtail(l, fn=fn):
                d = np.exp(-l)
                return -d * fn(self.s_end + d, d)

            self._tail[name] = _Piecewise(gtail, tail_edges, deg, start_value=start)
        # launch data of the centre ray
        self.s_c = math.sqrt(spec.rho_center - self.r0)
        self.phi_c = float(spec.phi_center)

    # -- radial profile in the s coordinate -------------------------------------------------
    def _local(self, s, d):
        """rho, f, sqrt(D)/|s|, xi_rho, H_xi0 at (s, d = s - s_end)."""
        p = self.params
        rho = self.r0 + s * s
        gap = d * (2.0 * abs(self.s_end) - d)  # r_minus - rho without cancellation
        f = -(rho - p.r_plus) * gap / rho**2
        u, u0 = 1.0 / rho, 1.0 / self.r0
        qd = (u + u0) - 2 * p.m * (u * u + u * u0 + u0 * u0) + p.e**2 * (u + u0) * (u * u + u0 * u0)
        kappa = np.sqrt(self.xi_phi**2 * qd / (rho * self.r0))
        qv = -s * kappa  # sigma sqrt(D)
        b = self.xi_phi**2 / rho**2
        with np.errstate(divide="ignore", invalid="ignore"):
            xr = np.where(qv <= 0, self.xi0 - b / (self.xi0 - qv), self.xi0 - (self.xi0 + qv) / f)
        hx0 = 2.0 * (2.0 - f) * self.xi0 + 2.0 * (f - 1.0) * xr
        return rho, f, kappa, xr, hx0

    def _integrand(self, name):
        def fn(s, d):
            s = np.asarray(s, dtype=float)
            rho, f, kappa, xr, hx0 = self._local(s, np.asarray(d, dtype=float))
            if name == "T":
                return -hx0 / kappa
            if name == "Phi":
                return 2.0 * self.xi_phi / (rho * rho * kappa)
            return 2.0 * s * xr

        return fn

    def _F(self, name, s, d, deriv=False):
        """Profile function (or its s-derivative) at s; the tail part is evaluated through d."""
        out = np.empty_like(s)
        main = s >= self.s_glue
        if np.any(main):
            out[main] = self._main[name](s[main], deriv)
        if np.any(~main):
            if deriv:
                out[~main] = self._integrand(name)(s[~main], d[~main])
            else:
                out[~main] = self._tail[name](-np.log(d[~main]))
        return out

    # -- chart handling --------------------------------------------------------------------
    def chart_to_s(self, chart, q):
        """(s, d, rho) from chart coordinates; d = s - s_end is kept exact in the tail."""
        q = np.asarray(q, dtype=float)
        p = self.params
        if chart == "rho":
            if np.any(q <= self.r0):
                raise OutOfChart("rho chart point at or below the turning radius")
            s = np.sqrt(q - self.r0)
            return s, s - self.s_end, q
        if chart == "tail":
            gap = np.exp(-q)
            rho = p.r_minus - gap
            if np.any(rho <= self.r0):
                raise OutOfChart("tail chart point beyond the turning radius")
            root = np.sqrt(rho - self.r0)
            return -root, gap / (abs(self.s_end) + root), rho
        raise OutOfChart(f"unknown chart {chart!r}")

    def chart_jacobian(self, chart, q):
        """d rho/dq and d^2 rho/dq^2."""
        q = np.asarray(q, dtype=float)
        if chart == "rho":
            return np.ones_like(q), np.zeros_like(q)
        e = np.exp(-q)
        return e, -e

    # -- ray family ------------------------------------------------------------------------
    def launch(self, x0, s, d):
        """Launch coordinate s' of the ray through (x0, s): T(s') = T(s) - x0."""
        target = self._F("T", s, d) - x0
        grid = np.linspace(1e-6, self.s_max, 2001)
        tg = self._main["T"](grid)
        # T decreases with s
        sp = np.interp(-target, -tg, grid)
        for _ in range(60):
            g = self._main["T"](sp) - target
            step = g / self._main["T"](sp, True)
            sp = np.clip(sp - step, 1e-9, self.s_max)
            if np.max(np.abs(step)) < 1e-15 * self.s_max:
                break
        if np.any(np.abs(self._main["T"](sp) - target) > 1e-11):
            raise OutOfChart("launch point outside the profile range")
        return sp

    def ray_point(self, s_launch, phi_launch, x0):
        """(s, d) and phi at time x0 on the ray launched from s_launch; inverse of `launch`."""
        target = self._main["T"](np.atleast_1d(s_launch)) + x0
        # solve in the main region first, then in the tail through l = -log d
        s = np.empty_like(target)
        d = np.empty_like(target)
        t_glue = float(self._main["T"](np.array([self.s_glue]))[0])
        main = target <= t_glue
        if np.any(main):
            grid = np.linspace(self.s_glue, self.s_max, 4001)
            tg = self._main["T"](grid)
            sm = np.interp(-target[main], -tg, grid)
            for _ in range(60):
                step = (self._main["T"](sm) - target[main]) / self._main["T"](sm, True)
                sm = np.clip(sm - step, self.s_glue, self.s_max)
                if np.max(np.abs(step)) < 1e-16:
                    break
            s[main], d[main] = sm, sm - self.s_end
        if np.any(~main):
            lg = np.linspace(self.l_glue, self.l_max, 4001)
            tl = self._tail["T"](lg)
            lv = np.interp(target[~main], tl, lg)
            for _ in range(60):
                dd = np.exp(-lv)
                slope = -dd * self._integrand("T")(self.s_end + dd, dd)
                step = (self._tail["T"](lv) - target[~main]) / slope
                lv = lv - step
                if np.max(np.abs(step)) < 1e-13:
                    break
            d[~main] = np.exp(-lv)
            s[~main] = self.s_end + d[~main]
        phi = phi_launch + self._F("Phi", s, d) - self._main["Phi"](np.atleast_1d(s_launch))
        return s, d, phi

    def turning_time(self, s_launch):
        return -self._main["T"](np.atleast_1d(s_launch))

    # -- fields ----------------------------------------------------------------------------
    def _branch_factor(self, s):
        return np.where(s > 0, 1.0 + 0j, self.jump)

    def phase(self, x0, chart, q, phi):
        s, d, _ = self.chart_to_s(chart, q)
        return self.xi0 * np.asarray(x0) + self._F("A", s, d) + self.xi_phi * np.asarray(phi)

    def _amp0_sd(self, x0, s, d, phi, return_launch=False):
        x0 = np.asarray(x0, dtype=float)
        sp = self.launch(x0, s, d)
        php = phi - self._F("Phi", s, d) + self._main["Phi"](sp)
        rho_p = self.r0 + sp * sp
        # launch point on the plane x3 = 0
        y = np.stack([rho_p * np.cos(php), rho_p * np.sin(php), np.zeros_like(rho_p)], axis=-1)
        chi = bump_chi(y, self.bump)
        _, _, kap_p, _, _ = self._local(sp, sp - self.s_end)
        _, _, kap, _, _ = self._local(s, d)
        ratio = np.sqrt(sp * kap_p / (np.abs(s) * kap))  # (D(rho')/D(rho))^{1/4}
        a = self._branch_factor(s) * chi * ratio
        if return_launch:
            return a, sp, php
        return a

    def amp(self, order, x0, chart, q, phi):
        s, d, _ = self.chart_to_s(chart, q)
        x0 = np.asarray(x0, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if order == 0:
            return self._amp0_sd(x0, s, d, phi)
        if order == 1:
            return self._amp1_sd(x0, s, d, phi)
        raise ConfigError("amplitudes are available for orders 0 and 1")

    def _amp1_sd(self, x0, s, d, phi):
        """a_1 = g(x0) int i P(a_0) / (H_xi0 g) dt along each ray, g = a_0 / chi."""
        shape = np.shape(s)
        x0, s, d, phi = (np.broadcast_to(v, shape).ravel() for v in (x0, s, d, phi))
        sp = self.launch(x0, s, d)
        php = phi - self._F("Phi", s, d) + self._main["Phi"](sp)
        t_start = np.where(s > 0, 0.0, self.turning_time(sp) + self.eps_band)
        xg, wg = np.polynomial.legendre.leggauss(self.n_gl)
        half = 0.5 * (x0 - t_start)
        tn = (0.5 * (x0 + t_start))[:, None] + half[:, None] * xg[None, :]
        spn = np.repeat(sp[:, None], self.n_gl, axis=1)
        sn, dn, phn = self.ray_point(spn.ravel(), np.repeat(php[:, None], self.n_gl, axis=1).ravel(), tn.ravel())
        p_a0 = self._apply_P_sd(tn.ravel(), sn, dn, phn)
        _, _, kap_p, _, _ = self._local(sp, sp - self.s_end)
        _, _, kn, _, hx0n = self._local(sn, dn)
        g_n = np.sqrt(np.repeat(sp * kap_p, self.n_gl) / (np.abs(sn) * kn))
        integrand = (1j * p_a0 / (hx0n * g_n)).reshape(tn.shape)
        integral = np.sum(integrand * wg[None, :], axis=1) * half
        _, _, kap, _, _ = self._local(s, d)
        g = np.sqrt(sp * kap_p / (np.abs(s) * kap))
        return (g * integral).reshape(shape)

    def _apply_P_sd(self, x0, s, d, phi):
        """P a_0 at points given in (s, d), each differenced in its natural chart."""
        out = np.empty(np.shape(s), dtype=complex)
        minus = s > 0
        for chart, m in (("rho", minus), ("tail", ~minus)):
            if not np.any(m):
                continue
            rho = self.r0 + s[m] ** 2
            q = rho if chart == "rho" else -np.log(d[m] * (2.0 * abs(self.s_end) - d[m]))
            pts = np.stack([x0[m], q, phi[m]], axis=-1)
            # coarser than the outer stencil: smooth truncation error instead of rounding noise
            h = default_steps(self, chart, pts) * self.inner_scale
            jet = _jet(lambda X, c=chart: self.amp(0, X[..., 0], c, X[..., 1], X[..., 2]), pts, h)
            out[m] = _operators(self, chart, pts, jet, None)["P"]
        return out


def default_steps(ans: WaveAnsatz, chart: str, pts) -> np.ndarray:
    """Per-point steps (x0, q, phi) scaled to the distance from the turning point."""
    pts = np.atleast_2d(pts)
    h = np.empty_like(pts, dtype=float)
    if chart == "rho":
        hr = np.minimum(2e-3, 0.008 * (pts[:, 1] - ans.r0))
        h[:, 0] = hr
        h[:, 1] = hr
    else:
        h[:, 0] = 2e-3
        h[:, 1] = 2e-2
    h[:, 2] = 2e-3
    return h


def _stencil_points(pts, h):
    """Stencil nodes: 7 per axis and 7 per diagonal of (x0, q); shape (n, 5, 7, 3)."""
    n = pts.shape[0]
    dirs = np.zeros((n, 5, 3))
    dirs[:, 0, 0] = h[:, 0]
    dirs[:, 1, 1] = h[:, 1]
    dirs[:, 2, 2] = h[:, 2]
    dirs[:, 3, 0], dirs[:, 3, 1] = h[:, 0], h[:, 1]
    dirs[:, 4, 0], dirs[:, 4, 1] = h[:, 0], -h[:, 1]
    return pts[:, None, None, :] + OFFS[None, None, :, None] * dirs[:, :, None, :]


def _jet(field_fn, pts, h):
    """Value, first and second partials (x0, q, phi) and the mixed x0-q partial."""
    pts = np.atleast_2d(pts)
    nodes = _stencil_points(pts, h)
    v = np.asarray(field_fn(nodes.reshape(-1, 3))).reshape(nodes.shape[:3])
    first = np.stack([v[:, a, :] @ D1 / h[:, a] for a in range(3)], axis=1)
    second = np.stack([v[:, a, :] @ D2 / h[:, a] ** 2 for a in range(3)], axis=1)
    gpp = v[:, 3, :] @ D2
    gpm = v[:, 4, :] @ D2
    mixed = (gpp - gpm) / (4.0 * h[:, 0] * h[:, 1])
    return {"v": v[:, 0, 3], "d": first, "dd": second, "d01": mixed}


def _physical(r1, r2, jet):
    """Convert chart partials to (x0, rho, phi) partials, given d rho/dq and d^2 rho/dq^2."""
    d = jet["d"]
    dd = jet["dd"]
    v_r = d[:, 1] / r1
    return {
        "v": jet["v"],
        "v0": d[:, 0],
        "vr": v_r,
        "vp": d[:, 2],
        "v00": dd[:, 0],
        "vrr": (dd[:, 1] - r2 * v_r) / r1**2,
        "vpp": dd[:, 2],
        "v0r": jet["d01"] / r1,
    }


def _terms(params, rho, f, r1, r2, jet_a, jet_s):
    """P a and, when the phase jet is given, Q(grad S) and T(a)."""
    fp = params.df(rho)
    a = _physical(r1, r2, jet_a)

    def P(w):
        d1 = -w["v0"] + w["vr"]
        d2 = w["v00"] - 2.0 * w["v0r"] + w["vrr"]
        return w["v00"] - w["vrr"] - w["vpp"] / rho**2 - (f - 1.0) * d2 - fp * d1

    out = {"P": P(a)}
    if jet_s is None:
        return out
    S = _physical(r1, r2, jet_s)

    def B(u0, ur, up, v0, vr, vp):
        return u0 * v0 - ur * vr - up * vp / rho**2 - (f - 1.0) * (-u0 + ur) * (-v0 + vr)

    out["Q"] = B(S["v0"], S["vr"], S["vp"], S["v0"], S["vr"], S["vp"])
    out["T"] = 2.0 * B(S["v0"], S["vr"], S["vp"], a["v0"], a["vr"], a["vp"]) + P(S) * a["v"]
    return out


def _operators(ans, chart, pts, jet_a, jet_s):
    p = ans.params
    _, _, rho = ans.chart_to_s(chart, pts[:, 1])
    # in the tail f comes from the horizon gap, not from the cancelling expanded form
    f = p.f(rho) if chart == "rho" else -(rho - p.r_plus) * np.exp(-pts[:, 1]) / rho**2
    r1, r2 = ans.chart_jacobian(chart, pts[:, 1])
    return _terms(p, rho, f, r1, r2, jet_a, jet_s)


def wave_terms(params: MetricParams, amp_fn, phase_fn, point, h=(1e-3, 1e-3, 1e-3)) -> dict:
    """Q(grad S) a, T(a) and P(a) for arbitrary callables amp_fn(x0, rho, phi), phase_fn(x0, rho, phi)."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    hh = np.broadcast_to(np.asarray(h, dtype=float), pts.shape).copy()
    ref = float(np.real(phase_fn(*pts[0])))
    ja = _jet(lambda X: amp_fn(X[..., 0], X[..., 1], X[..., 2]), pts, hh)
    js = _jet(lambda X: phase_fn(X[..., 0], X[..., 1], X[..., 2]) - ref, pts, hh)
    rho = pts[:, 1]
    one = np.ones_like(rho)
    ops = _terms(params, rho, params.f(rho), one, 0 * one, ja, js)
    return {"eikonal_term": complex(ops["Q"][0] * ja["v"][0]), "transport_term": complex(ops["T"][0]),
            "remainder_term": complex(ops["P"][0])}


def _phase_fn(ans, chart, ref):
    # offsets from the probe value keep the differences well conditioned
    return lambda X: ans.phase(X[..., 0], chart, X[..., 1], X[..., 2]) - ref


def _probe_terms(ans: WaveAnsatz, point: ProbePoint, N: int, scale: float = 1.0):
    """k-independent pieces at one probe: (Q a, T(a_p), P(a_p)) per order, at steps h and 2h."""
    pts = np.array([[point.x0, point.q, point.phi]])
    h = default_steps(ans, point.chart, pts) * scale
    ref = float(ans.phase(point.x0, point.chart, point.q, point.phi))
    res = []
    for hh in (h, 2.0 * h):
        js = _jet(_phase_fn(ans, point.chart, ref), pts, hh)
        orders = []
        for order in range(N + 1):
            ja = _jet(lambda X, o=order: ans.amp(o, X[..., 0], point.chart, X[..., 1], X[..., 2]), pts, hh)
            ops = _operators(ans, point.chart, pts, ja, js)
            orders.append({"Q": complex(ops["Q"][0]), "T": complex(ops["T"][0]), "P": complex(ops["P"][0]),
                           "a": complex(ja["v"][0])})
        res.append(orders)
    return res


def _combine(orders, k):
    """Eikonal, transport and remainder terms of a = sum_p a_p k^{-p}."""
    e = sum(o["Q"] * o["a"] * k ** (-p) for p, o in enumerate(orders))
    t = sum(o["T"] * k ** (-p) for p, o in enumerate(orders))
    r = sum(o["P"] * k ** (-p) for p, o in enumerate(orders))
    return {"eikonal_term": complex(e), "transport_term": complex(t), "remainder_term": complex(r)}


def apply_wave_operator(ans: WaveAnsatz, point: ProbePoint, k: float, N: int = 0,
                        fd_tol: float = 1e-4, _cache=None) -> ResidualProbe:
    """Three-term decomposition of P(a e^{ikS}) at one probe, Richardson-checked (h vs 2h)."""
    terms_h, terms_2h = _cache if _cache is not None else _probe_terms(ans, point, N)
    t1 = _combine(terms_h, k)
    t2 = _combine(terms_2h, k)
    probe = ResidualProbe(point, float(k), int(N), t1)
    total2 = -k**2 * t2["eikonal_term"] + 1j * k * t2["transport_term"] + t2["remainder_term"]
    gap = abs(probe.total - total2)
    probe.fd_gap = float(gap)
    size = max(abs(t1["remainder_term"]), abs(terms_h[0]["a"]), 1e-300)
    if gap > fd_tol * size:
        raise FDInconsistent(f"residual changes by {gap:.3e} between steps h and 2h at {point}")
    return probe


def probe_points(ans: WaveAnsatz, n_times: int = 5, offsets=((0.0, 0.0), (0.1, 0.03)),
                 minus_start: float = 0.5, plus_span: float = 0.1) -> list:
    """Points on the centre ray and its neighbours at n_times times per branch, off the caustic band."""
    out = []
    for dr, dp in offsets:
        rho_l = ans.spec.rho_center + dr
        phi_l = ans.phi_c + dp
        sl = np.array([math.sqrt(rho_l - ans.r0)])
        tt = float(ans.turning_time(sl)[0])
        times_m = np.linspace(minus_start, tt - ans.eps_band, n_times)
        times_p = np.linspace(tt + ans.eps_band, tt + ans.eps_band + plus_span, n_times)
        for t in np.concatenate([times_m, times_p]):
            s, d, phi = ans.ray_point(sl, np.array([phi_l]), t)
            if s[0] > 0:
                out.append(ProbePoint(float(t), "rho", float(ans.r0 + s[0] ** 2), float(phi[0])))
            else:
                gap = d[0] * (2.0 * abs(ans.s_end) - d[0])
                out.append(ProbePoint(float(t), "tail", float(-math.log(gap)), float(phi[0])))
    return out


@dataclass
class ScalingReport:
    N: int
    k_list: list
    R_values: list  # max |residual| / k^2, relative to max |a_0|
    t_values: list  # max |residual| / max |a_0|: the t_N normalization
    slope: float
    intercept: float
    slope_tN: float
    worst_probe: list
    fit: FitResult = field(repr=False, default=None)
    normalization_note: str = (
        "R(k) = max|P(a e^{ikS})| / (k^2 max|a_0|) falls like k^{-N-2}; "
        "the un-normalized t_N = e^{-ikS} P(u_N) falls like k^{-N}."
    )

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "k_list": list(self.k_list),
            "R_values": list(self.R_values),
            "t_values": list(self.t_values),
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_tN": self.slope_tN,
            "normalization_note": self.normalization_note,
        }


def residual_scaling(ans: WaveAnsatz, probes, k_list, N: int = 0, fd_tol: float = 1e-4) -> ScalingReport:
    """Least-squares slope of log R(k) against log k over the probe set."""
    k_list = sorted(float(k) for k in k_list)
    if len(k_list) < 4 or k_list[-1] / k_list[0] < 10.0 - 1e-12:
        raise ConfigError("k_list needs at least 4 values spanning a decade")
    caches = [_probe_terms(ans, pt, N) for pt in probes]
    amax = max(abs(c[0][0]["a"]) for c in caches)
    rv, tv, worst = [], [], []
    for k in k_list:
        vals = [abs(apply_wave_operator(ans, pt, k, N, fd_tol, c).total) for pt, c in zip(probes, caches)]
        i = int(np.argmax(vals))
        worst.append(i)
        tv.append(vals[i] / amax)
        rv.append(vals[i] / (k * k * amax))
    fit = fit_model(np.array(k_list), np.array(rv), "PowerLaw") if len(k_list) >= 5 else None
    sl, ic = np.polyfit(np.log(k_list), np.log(rv), 1)
    sl_t = np.polyfit(np.log(k_list), np.log(tv), 1)[0]
    return ScalingReport(N, k_list, rv, tv, float(sl), float(ic), float(sl_t), worst, fit)


def direct_residual(ans: WaveAnsatz, point: ProbePoint, k: float, N: int = 0, scale: float = 1.0) -> complex:
    """e^{-ikS} P(a e^{ikS}) by differencing the oscillating field itself (small k only)."""
    pts = np.array([[point.x0, point.q, point.phi]])
    h = default_steps(ans, point.chart, pts) * scale
    ref = float(ans.phase(point.x0, point.chart, point.q, point.phi))

    def u(X):
        a = sum(ans.amp(p, X[..., 0], point.chart, X[..., 1], X[..., 2]) * k ** (-p) for p in range(N + 1))
        return a * np.exp(1j * k * (ans.phase(X[..., 0], point.chart, X[..., 1], X[..., 2]) - ref))

    jet = _jet(u, pts, h)
    return complex(_operators(ans, point.chart, pts, jet, None)["P"][0])

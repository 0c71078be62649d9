"""Null bicharacteristics of the Reissner-Nordstrom wave operator.

Planar rays are integrated in two phases.  Through the horizon crossings and
the turning point the polynomial Hamiltonian field is integrated in the affine
parameter s; it has no square roots and is smooth at the turn.  Once the ray is
on the branch whose momentum blows up at the horizon, the momentum is written
as xi_rho = xi_rho^branch(rho) + p and the time x0 becomes the independent
variable.  The shifted system is canonical, keeps p = 0 invariant and stores
rho relative to the horizon, so the exponential (or reciprocal) approach to
the horizon can be followed down to round-off.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (
    AmbiguousRoot,
    DomainError,
    InsufficientTail,
    NonMonotoneTime,
    NoRoot,
    StepFailure,
)
from .fitting import fit_model
from .metric import (
    Branch,
    CartesianState,
    MetricParams,
    PhaseState,
    Regime,
    _uses_rationalized,
    clamped_delta,
    discriminant_delta,
    dx0_ds_shell,
    hamiltonian_planar,
    hamiltonian_planar_shell,
    xi_rho as _xi_rho,
)


class EventKind(enum.Enum):
    OUTER_CROSSING = "OuterCrossing"
    INNER_CROSSING = "InnerCrossing"
    TURNING_POINT = "TurningPoint"
    ESCAPE = "Escape"
    GUARD = "Guard"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    x0: float
    rho: float
    phi: float

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "x0": self.x0, "rho": self.rho, "phi": self.phi}


@dataclass(frozen=True)
class IntegrationOptions:
    rtol: float = 1e-12
    atol: float = 1e-14
    htol: float = 1e-9
    rmin_guard: float = 1e-6  # in units of m
    escape_factor: float = 100.0
    switch_level: float = 0.25  # D / xi0^2 threshold for entering the shifted phase
    tail_floor: float = 1e-14  # |rho - r_h| / r_h at which the tail phase stops
    max_steps: int = 200_000

    def escape_radius(self, params: MetricParams) -> float:
        return self.escape_factor * params.scale()


@dataclass
class _Segment:
    """One integration phase: dense solution plus its mapping to planar variables."""

    kind: str  # "s" (affine, state x0 rho phi xi_rho) or "x0" (state q phi p s)
    sol: object
    t0: float
    t1: float
    branch: Branch
    x0_range: tuple
    r_ref: float = 0.0
    _table: tuple | None = None

    def inverse_table(self):
        """Monotone (x0, s) table used to seed the x0 -> s inversion."""
        if self._table is None:
            ss = np.linspace(self.t0, self.t1, 64 * max(2, len(self.sol.ts)))
            xs = self.sol(ss)[0]
            order = np.argsort(xs)
            self._table = (xs[order], ss[order])
        return self._table


@dataclass
class Trajectory:
    x0: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    xi_rho: np.ndarray
    branch: list
    h0: np.ndarray
    s: np.ndarray
    events: list
    params: MetricParams
    xi0: float
    xi_phi: float
    stop_reason: str = ""
    delta_h: np.ndarray | None = None  # rho - r_h in relative precision where available
    _segments: list = field(default_factory=list, repr=False)

    @property
    def samples(self) -> list:
        return [
            PhaseState(float(t), float(r), float(p), self.xi0, float(x), self.xi_phi, b)
            for t, r, p, x, b in zip(self.x0, self.rho, self.phi, self.xi_rho, self.branch)
        ]

    def events_of(self, kind: EventKind) -> list:
        return [ev for ev in self.events if ev.kind is kind]

    @property
    def turning_time(self) -> float | None:
        tps = self.events_of(EventKind.TURNING_POINT)
        return tps[0].x0 if tps else None

    def max_residual(self) -> float:
        return float(np.max(np.abs(self.h0)))

    def state_at(self, x0: float) -> PhaseState:
        """Dense evaluation at a single time."""
        for seg in self._segments:
            lo, hi = seg.x0_range
            if lo - 1e-14 * max(1.0, abs(lo)) <= x0 <= hi + 1e-14 * max(1.0, abs(hi)):
                x = min(max(x0, lo), hi)
                r, p, xr = _segment_dense(seg, np.array([x]), self)
                return PhaseState(x0, float(r[0]), float(p[0]), self.xi0, float(xr[0]), self.xi_phi, seg.branch)
        raise DomainError(f"x0={x0} outside the integrated range")

    def radial(self, x0: float):
        """(rho, branch, gap) at x0; gap = r_minus - rho kept in relative precision on the tail."""
        seg = self._find(x0)
        if seg.kind == "x0":
            q = float(seg.sol(x0)[0])
            gap = -q if seg.r_ref > 0 else None
            return seg.r_ref + q, seg.branch, gap
        r, _, _ = _segment_dense(seg, np.array([x0]), self)
        return float(r[0]), seg.branch, None

    def dense(self, x0_grid) -> dict:
        """Vectorized dense evaluation on a grid of times inside the integrated range."""
        t = np.atleast_1d(np.asarray(x0_grid, dtype=float))
        rho = np.full(t.shape, np.nan)
        phi = np.full(t.shape, np.nan)
        xr = np.full(t.shape, np.nan)
        br = [None] * t.size
        done = np.zeros(t.shape, dtype=bool)
        for seg in self._segments:
            lo, hi = seg.x0_range
            sel = (~done) & (t >= lo) & (t <= hi)
            if not np.any(sel):
                continue
            r, p, x = _segment_dense(seg, t[sel], self)
            rho[sel], phi[sel], xr[sel] = r, p, x
            for k in np.nonzero(sel)[0]:
                br[k] = seg.branch
            done |= sel
        if not np.all(done):
            raise DomainError("grid extends outside the integrated range")
        return {"x0": t, "rho": rho, "phi": phi, "xi_rho": xr, "branch": br}

    def horizon_gap(self, x0_grid) -> np.ndarray:
        """r_h - rho on a grid, taken from the relative-precision tail state where possible."""
        r_h = self.params.r_minus
        out = []
        for t in np.atleast_1d(x0_grid):
            seg = self._find(float(t))
            if seg.kind == "x0" and seg.r_ref > 0:
                out.append(-float(seg.sol(float(t))[0]))
            else:
                out.append(r_h - self.radial(float(t))[0])
        return np.array(out)

    def _find(self, x0):
        for seg in self._segments:
            lo, hi = seg.x0_range
            if lo - 1e-14 * max(1.0, abs(lo)) <= x0 <= hi + 1e-14 * max(1.0, abs(hi)):
                return seg
        raise DomainError(f"x0={x0} outside the integrated range")

    def to_rows(self):
        for i in range(len(self.x0)):
            yield (self.x0[i], self.rho[i], self.phi[i], self.xi_rho[i], self.branch[i].value, self.h0[i])


def _segment_dense(seg: _Segment, t: np.ndarray, traj: Trajectory):
    if seg.kind == "x0":
        q, phi, p, _ = seg.sol(t)
        rho = seg.r_ref + q
        xr = np.asarray(_xi_rho(rho, traj.xi0, traj.xi_phi, seg.branch, traj.params)) + p
        return rho, phi, xr
    # invert x0(s): interpolation guess on a fine s grid, then Newton with dx0/ds
    xs, ss = seg.inverse_table()
    s = np.interp(t, xs, ss)
    for _ in range(8):
        y = seg.sol(s)
        dx = traj_speed(y, traj)
        step = (y[0] - t) / dx
        s = np.clip(s - step, min(seg.t0, seg.t1), max(seg.t0, seg.t1))
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(s))):
            break
    y = seg.sol(s)
    return y[1], y[2], y[3]


def traj_speed(y, traj):
    f = traj.params.f(y[1])
    o = 1.0 if traj.xi0 > 0 else -1.0
    return o * (2.0 * (2.0 - f) * traj.xi0 + 2.0 * (f - 1.0) * y[3])


def rhs_full_planar(state: PhaseState, params: MetricParams) -> np.ndarray:
    """d/ds of (x0, rho, phi, xi_rho) from the polynomial planar Hamiltonian."""
    if state.rho <= 0.0:
        raise DomainError("rho must be positive")
    return _field(state.rho, state.xi_rho, state.xi0, state.xi_phi, params)


def _field(rho, xr, xi0, xph, params):
    f = params.f(rho)
    fp = params.df(rho)
    return np.array(
        [
            2.0 * (2.0 - f) * xi0 + 2.0 * (f - 1.0) * xr,
            2.0 * (f - 1.0) * xi0 - 2.0 * f * xr,
            -2.0 * xph / rho**2,
            -(fp * (-xi0 * xi0 + 2.0 * xi0 * xr - xr * xr) + 2.0 * xph * xph / rho**3),
        ]
    )


def rhs_reduced(rho, phi, xi0, xi_phi, branch: Branch, params: MetricParams):
    """(drho/dx0, dphi/dx0) restricted to a branch of the light cone."""
    delta = float(clamped_delta(rho, xi0, xi_phi, params))
    if delta < 0.0:
        from .errors import NegativeDiscriminant

        raise NegativeDiscriminant("discriminant is negative")
    sd = math.sqrt(delta)
    if branch is Branch.MINUS and xi0 > 0:
        # f-cancelled form, finite at both horizons
        den = sd + (xi_phi**2 / rho**2) / (xi0 + sd)
        return -sd / den, -(xi_phi / rho**2) / den
    hx0 = dx0_ds_shell(rho, xi0, xi_phi, branch, params)
    return 2.0 * branch.sign * sd / hx0, -2.0 * xi_phi / rho**2 / hx0


def turning_radius(xi0: float, xi_phi: float, params: MetricParams, n_scan: int = 4000) -> float:
    """Radius where the discriminant vanishes."""
    if xi_phi == 0.0:
        raise NoRoot("radial rays have no turning point")
    lo = 1e-6 * params.m
    if params.regime is Regime.NAKED:
        hi = IntegrationOptions().escape_radius(params)
    else:
        hi = params.r_minus if params.r_minus > 0 else params.r_plus
    grid = np.geomspace(lo, hi, n_scan)

    def delta(r):
        return discriminant_delta(r, xi0, xi_phi, params)

    vals = delta(grid)
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    roots = [
        brentq(delta, grid[i], grid[i + 1], xtol=1e-16, rtol=9e-16, maxiter=400) for i in idx
    ]
    if not roots:
        raise NoRoot("no sign change of the discriminant in the bracket")
    if len(roots) > 1:
        raise AmbiguousRoot("several turning radii", roots)
    return roots[0]


class _Tracker:
    """Collects samples and events across phases."""

    def __init__(self, xi0, xi_phi, params):
        self.xi0, self.xi_phi, self.params = xi0, xi_phi, params
        self.cols = {k: [] for k in ("x0", "rho", "phi", "xi_rho", "h0", "s", "gap")}
        self.branch = []
        self.events = []
        self.segments = []

    def add(self, x0, rho, phi, xr, br, h0, s, gap, skip_first):
        start = 1 if skip_first and self.cols["x0"] else 0
        for key, arr in zip(("x0", "rho", "phi", "xi_rho", "h0", "s", "gap"), (x0, rho, phi, xr, h0, s, gap)):
            self.cols[key].extend(np.asarray(arr, dtype=float)[start:].tolist())
        self.branch.extend([br] * (len(x0) - start))


def integrate(initial: PhaseState, x0_max: float, params: MetricParams, opts: IntegrationOptions | None = None) -> Trajectory:
    """Integrate a planar null ray from ``initial`` until x0_max or a terminal event."""
    opts = opts or IntegrationOptions()
    xi0, xph = initial.xi0, initial.xi_phi
    if initial.rho <= 0:
        raise DomainError("rho must be positive")
    h_init = initial.residual(params)
    if abs(h_init) > opts.htol * xi0 * xi0:
        raise DomainError(f"initial point is off the light cone (H0={h_init:.3e})")
    orient = 1.0 if xi0 > 0 else -1.0
    tr = _Tracker(xi0, xph, params)
    state = np.array([initial.x0, initial.rho, initial.phi, initial.xi_rho])
    branch = initial.branch
    s_now = 0.0
    turned = False
    stop = ""
    r_esc = opts.escape_radius(params)
    guard = opts.rmin_guard * params.m

    # Phase A: polynomial field in s until the ray has settled on the singular branch.
    while True:
        if _uses_rationalized(branch, xi0) is False and (
            discriminant_delta(state[1], xi0, xph, params) >= opts.switch_level * xi0 * xi0
        ):
            break
        seg_out = _run_affine(state, s_now, orient, branch, x0_max, r_esc, guard, turned, tr, opts)
        state, s_now, reason = seg_out
        if reason == "turn":
            turned = True
            branch = branch.flipped()
            continue
        if reason == "switch":
            break
        stop = reason
        break

    if not stop:
        stop = _run_shifted(state, s_now, branch, x0_max, r_esc, guard, tr, opts)

    c = tr.cols
    return Trajectory(
        x0=np.array(c["x0"]),
        rho=np.array(c["rho"]),
        phi=np.array(c["phi"]),
        xi_rho=np.array(c["xi_rho"]),
        branch=tr.branch,
        h0=np.array(c["h0"]),
        s=np.array(c["s"]),
        events=tr.events,
        params=params,
        xi0=xi0,
        xi_phi=xph,
        stop_reason=stop,
        delta_h=np.array(c["gap"]),
        _segments=tr.segments,
    )


def _crossing_events(params, rho_index):
    evs = []
    if params.r_plus is not None:
        def outer(t, y):
            return y[rho_index] - params.r_plus
        outer.kind = EventKind.OUTER_CROSSING
        evs.append(outer)
        if params.r_minus < params.r_plus and params.r_minus > 0:
            def inner(t, y):
                return y[rho_index] - params.r_minus
            inner.kind = EventKind.INNER_CROSSING
            evs.append(inner)
    return evs


def _run_affine(state, s0, orient, branch, x0_max, r_esc, guard, turned, tr, opts):
    params, xi0, xph = tr.params, tr.xi0, tr.xi_phi

    def rhs(s, y):
        return orient * _field(y[1], y[3], xi0, xph, params)

    def ev_turn(s, y):
        return orient * (2.0 * (params.f(y[1]) - 1.0) * xi0 - 2.0 * params.f(y[1]) * y[3])

    ev_turn.terminal = True
    # ingoing rays turn from decreasing to increasing rho
    ev_turn.direction = 1.0 if _uses_rationalized(branch, xi0) else -1.0

    def ev_time(s, y):
        return y[0] - x0_max

    ev_time.terminal = True

    def ev_mono(s, y):
        return orient * (2.0 * (2.0 - params.f(y[1])) * xi0 + 2.0 * (params.f(y[1]) - 1.0) * y[3])

    ev_mono.terminal = True
    ev_mono.direction = -1.0

    def ev_guard(s, y):
        return y[1] - guard

    ev_guard.terminal = True

    def ev_esc(s, y):
        return y[1] - r_esc

    ev_esc.terminal = True
    ev_esc.direction = 1.0

    def ev_switch(s, y):
        return discriminant_delta(y[1], xi0, xph, params) - opts.switch_level * xi0 * xi0

    ev_switch.terminal = True
    ev_switch.direction = 1.0

    cross = _crossing_events(params, 1)
    events = [ev_turn, ev_time, ev_mono, ev_guard, ev_esc] + cross
    names = ["turn", "x0_max", "mono", "guard", "escape"] + [c.kind for c in cross]
    singular = not _uses_rationalized(branch, xi0)
    if singular and params.r_minus:
        events.append(ev_switch)
        names.append("switch")

    # s-span generous enough to reach x0_max; terminal events stop earlier
    speed = max(abs(rhs(s0, state)[0]), 1e-3)
    s_span = (s0, s0 + 50.0 * (abs(x0_max - state[0]) + 10.0) / speed)
    sol = solve_ivp(rhs, s_span, state, method="DOP853", rtol=opts.rtol, atol=opts.atol,
                    events=events, dense_output=True)
    if sol.status == -1 and sol.y[1, -1] > 100.0 * guard:
        raise StepFailure(sol.message)
    ys = sol.y
    h0 = hamiltonian_planar(ys[1], xi0, ys[3], xph, params)
    gap = (params.r_minus - ys[1]) if params.r_minus else np.full(ys.shape[1], np.nan)
    tr.add(ys[0], ys[1], ys[2], ys[3], branch, h0, sol.t, gap, skip_first=True)
    tr.segments.append(_Segment("s", sol.sol, sol.t[0], sol.t[-1], branch, (ys[0][0], ys[0][-1])))

    # record crossings occurring in this phase, then find the terminal reason
    hits = []
    for name, te, ye in zip(names, sol.t_events, sol.y_events):
        for t, y in zip(te, ye):
            hits.append((t, name, y))
    hits.sort(key=lambda h: h[0])
    reason = "s_span"
    for t, name, y in hits:
        if isinstance(name, EventKind):
            tr.events.append(Event(name, float(y[0]), float(y[1]), float(y[2])))
    if sol.status == 1:
        t_end, name, y = [h for h in hits if not isinstance(h[1], EventKind)][-1]
        reason = name
        if name == "turn":
            tr.events.append(Event(EventKind.TURNING_POINT, float(y[0]), float(y[1]), float(y[2])))
        elif name == "escape":
            tr.events.append(Event(EventKind.ESCAPE, float(y[0]), float(y[1]), float(y[2])))
        elif name == "guard":
            tr.events.append(Event(EventKind.GUARD, float(y[0]), float(y[1]), float(y[2])))
        elif name == "mono":
            raise NonMonotoneTime(f"dx0/ds changes sign at rho={y[1]:.6g}")
        return y.copy(), t_end, reason
    if sol.status == -1:
        # step collapse right next to r = 0 counts as reaching the guard
        y = ys[:, -1]
        tr.events.append(Event(EventKind.GUARD, float(y[0]), float(y[1]), float(y[2])))
        return y.copy(), sol.t[-1], "guard"
    if np.any(np.diff(ys[0]) <= 0):
        raise NonMonotoneTime("x0 is not increasing along the ray")
    return ys[:, -1].copy(), sol.t[-1], reason


def _run_shifted(state, s0, branch, x0_max, r_esc, guard, tr, opts):
    """Tail phase in x0 with xi_rho = xi_rho^branch(rho) + p and rho = r_ref + q."""
    params, xi0, xph = tr.params, tr.xi0, tr.xi_phi
    sigma = branch.sign
    r_ref = params.r_minus if params.r_minus else 0.0
    b2 = xph * xph
    x0_start, rho0, phi0, xr0 = state
    if x0_start >= x0_max:
        return "x0_max"
    p0 = xr0 - float(_xi_rho(rho0, xi0, xph, branch, params))

    if params.r_plus is not None:
        rp, rm = params.r_plus, params.r_minus

        def f_of(q):
            rho = r_ref + q
            return (rho - rp) * q / rho**2 if rm < rp else q * q / rho**2
    else:
        def f_of(q):
            return params.f(q)

    def parts(q, p):
        rho = r_ref + q
        f = f_of(q)
        fp = params.df(rho)
        delta = xi0 * xi0 - f * b2 / rho**2
        sd = math.sqrt(delta)
        ddelta = -(fp / rho**2 - 2.0 * f / rho**3) * b2
        dsd = ddelta / (2.0 * sd)
        hx0 = 2.0 / f * (xi0 - sigma * (f - 1.0) * sd) + 2.0 * (f - 1.0) * p
        return rho, f, fp, sd, dsd, hx0

    def rhs(t, y):
        q, _, p, _ = y
        rho, f, fp, sd, dsd, hx0 = parts(q, p)
        drho = 2.0 * sigma * sd - 2.0 * f * p
        dp = -2.0 * sigma * dsd * p + fp * p * p
        dphi = -2.0 * xph / rho**2
        return [drho / hx0, dphi / hx0, dp / hx0, 1.0 / hx0]

    def ev_floor(t, y):
        return abs(y[0]) - opts.tail_floor * r_ref

    ev_floor.terminal = True

    def ev_esc(t, y):
        return r_ref + y[0] - r_esc

    ev_esc.terminal = True
    ev_esc.direction = 1.0

    def ev_guard(t, y):
        return r_ref + y[0] - guard

    ev_guard.terminal = True

    def ev_mono(t, y):
        return parts(y[0], y[2])[5]

    ev_mono.terminal = True
    cross_fns = []
    if params.r_plus is not None:
        def outer(t, y):
            return y[0] + r_ref - params.r_plus
        outer.kind = EventKind.OUTER_CROSSING
        cross_fns.append(outer)
        if 0 < params.r_minus < params.r_plus:
            def inner(t, y):
                return y[0]
            inner.kind = EventKind.INNER_CROSSING
            cross_fns.append(inner)
    events = [ev_esc, ev_guard, ev_mono] + cross_fns
    names = ["escape", "guard", "mono"] + [c.kind for c in cross_fns]
    if r_ref > 0:
        events.append(ev_floor)
        names.append("floor")
    y0 = [rho0 - r_ref, phi0, p0, s0]
    atol = [1e-300 if r_ref > 0 else opts.atol, opts.atol, opts.atol, opts.atol]
    sol = solve_ivp(rhs, (x0_start, x0_max), y0, method="DOP853", rtol=opts.rtol, atol=atol,
                    events=events, dense_output=True)
    if sol.status == -1:
        raise StepFailure(sol.message)
    q, phi, p, s = sol.y
    rho = r_ref + q
    xr = np.array([float(_xi_rho(r, xi0, xph, branch, params)) for r in rho]) + p
    h0 = hamiltonian_planar_shell(rho, xi0, xph, p, branch, params)
    # recompute with the accurate f near the horizon
    h0 = np.array([2.0 * sigma * parts(qq, pp)[3] * pp - f_of(qq) * pp * pp for qq, pp in zip(q, p)])
    gap = -q if r_ref > 0 else np.full(q.shape, np.nan)
    tr.add(sol.t, rho, phi, xr, branch, h0, s, gap, skip_first=True)
    tr.segments.append(_Segment("x0", sol.sol, sol.t[0], sol.t[-1], branch, (sol.t[0], sol.t[-1]), r_ref))
    hits = sorted(
        ((t, n, y) for n, te, ye in zip(names, sol.t_events, sol.y_events) for t, y in zip(te, ye)),
        key=lambda h: h[0],
    )
    for t, n, y in hits:
        if isinstance(n, EventKind):
            tr.events.append(Event(n, float(t), float(r_ref + y[0]), float(y[1])))
    if sol.status == 1:
        t, n, y = [h for h in hits if not isinstance(h[1], EventKind)][-1]
        if n == "mono":
            raise NonMonotoneTime("dx0/ds vanishes on the tail branch")
        if n == "escape":
            tr.events.append(Event(EventKind.ESCAPE, float(t), float(r_ref + y[0]), float(y[1])))
        if n == "guard":
            tr.events.append(Event(EventKind.GUARD, float(t), float(r_ref + y[0]), float(y[1])))
        return n
    return "x0_max"


def initial_state(rho0, phi0, xi0, xi_phi, params, branch=None, x0=0.0) -> PhaseState:
    """On-shell initial point; at D = 0 exactly the Plus branch is chosen."""
    if branch is None:
        d = discriminant_delta(rho0, xi0, xi_phi, params)
        branch = Branch.PLUS if d == 0.0 else Branch.MINUS
    return PhaseState.on_shell(rho0, phi0, xi0, xi_phi, params, branch=branch, x0=x0)


# ----------------------------------------------------------------------------- Cartesian


def _cartesian_rhs(y, params):
    x = y[1:4]
    xi0 = y[4]
    xi = y[5:8]
    r = math.sqrt(x @ x)
    xh = x / r
    g = 2.0 * params.m / r - params.e**2 / r**2
    dg = -2.0 * params.m / r**2 + 2.0 * params.e**2 / r**3
    xr = xh @ xi
    u = -xi0 + xr
    dx = -2.0 * xi + 2.0 * g * u * xh
    dx0 = 2.0 * xi0 - 2.0 * g * u
    dxi = -(dg * xh * u * u + 2.0 * g * u * (xi - xh * xr) / r)
    return np.concatenate(([dx0], dx, [0.0], dxi))


def integrate_cartesian(initial: CartesianState, s_max: float, params: MetricParams,
                        opts: IntegrationOptions | None = None, n_out: int | None = None) -> list:
    """Integrate the full 8-dimensional bicharacteristic system in s."""
    opts = opts or IntegrationOptions()
    y0 = np.concatenate(([initial.x0], initial.x, [initial.xi0], initial.xi))
    t_eval = None if n_out is None else np.linspace(0.0, s_max, n_out)
    sol = solve_ivp(lambda s, y: _cartesian_rhs(y, params), (0.0, s_max), y0, method="DOP853",
                    rtol=opts.rtol, atol=opts.atol, t_eval=t_eval)
    if sol.status != 0:
        raise StepFailure(sol.message)
    return [CartesianState(float(c[0]), c[1:4].copy(), float(c[4]), c[5:8].copy()) for c in sol.y.T]


def rotation_matrix(alpha: float) -> np.ndarray:
    """Rotation by alpha about the x2 axis, taking the x1x2 plane to a tilted plane."""
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


# ----------------------------------------------------------------------------- rates


@dataclass(frozen=True)
class RateFit:
    model: str  # "Exponential" or "Reciprocal"
    rate: float | None
    coeff: float | None
    expected: float
    window: tuple
    n: int

    @property
    def rel_error(self) -> float:
        val = self.rate if self.model == "Exponential" else self.coeff
        return abs(val - self.expected) / abs(self.expected)


def horizon_approach_rate(traj: Trajectory, params: MetricParams | None = None,
                          tail_fraction: float = 0.3, tail_min: int = 8, n_dense: int = 200) -> RateFit:
    """Fit the approach of the outgoing ray to the inner (or degenerate) horizon."""
    params = params or traj.params
    t0 = traj.turning_time
    if params.regime is Regime.NAKED or t0 is None:
        raise InsufficientTail("no post-turning segment approaching a horizon")
    after = traj.x0 > t0
    gap = traj.delta_h
    if params.regime is Regime.SUB_EXTREMAL:
        sel = after & (gap > 0) & (gap < 0.01 * params.r_minus)
    else:
        sel = after & (gap > 0) & (gap < 0.05 * params.m)
    idx = np.nonzero(sel)[0]
    n_keep = int(math.ceil(tail_fraction * idx.size))
    if n_keep < tail_min:
        raise InsufficientTail(f"only {n_keep} tail samples")
    tail = idx[-n_keep:]
    a, b = traj.x0[tail[0]], traj.x0[tail[-1]]
    grid = np.linspace(a, b, n_dense)
    g = traj.horizon_gap(grid)
    if params.regime is Regime.SUB_EXTREMAL:
        fit = fit_model(grid, np.log(g), "Affine")
        rate = -fit.params["slope"]
        expected = (params.r_plus - params.r_minus) / (2.0 * params.r_minus**2)
        return RateFit("Exponential", rate, None, expected, (a, b), n_keep)
    # 1/(m - rho) = x0 / c + beta log x0 + d
    fit = fit_model(grid, 1.0 / g, "ReciprocalLog")
    coeff = 1.0 / fit.params["slope"]
    return RateFit("Reciprocal", None, coeff, 2.0 * params.m**2, (a, b), n_keep)

import math

import numpy as np
import pytest

import rntrace.transport as transport
from rntrace.errors import ConfigError, InsufficientTail, MissingCausticData
from rntrace.fitting import fit_model
from rntrace.geodesic import initial_state, integrate
from rntrace.metric import Branch, PhaseState, classify, lapse_f_gap
from rntrace.transport import (
    HIERARCHY_SIGMA,
    AmplitudeTrack,
    BumpSpec,
    amplitude_limit,
    bump_chi,
    integrate_amplitude,
    minus_closed_form,
    transport_coefficient,
    transport_coefficient_abstract,
)


@pytest.fixture(scope="module")
def sub_track(canon_traj):
    return integrate_amplitude(canon_traj, 1.0, band=(0.3, 0.3), plus_initial=[1.0])[0]


def test_bump_examples():
    spec = BumpSpec((1.0, 2.0, 0.5), 0.3, height=2.5)
    assert bump_chi(spec.center, spec) == pytest.approx(2.5)
    edge = np.array(spec.center) + np.array([0.3, 0.0, 0.0])
    assert bump_chi(edge, spec) == 0.0
    # one-sided difference quotients at the edge vanish to all orders
    h = 1e-3
    inner = np.array(spec.center) + np.array([0.3 - h, 0.0, 0.0])
    assert bump_chi(inner, spec) / h**4 < 1e-40
    with pytest.raises(ConfigError):
        BumpSpec((0, 0, 0), 0.0)


def test_bump_integral_stable():
    spec = BumpSpec((0.0, 0.0, 0.0), 1.0)

    def total(n):
        g = np.linspace(-1, 1, n)
        h = g[1] - g[0]
        x, y, z = np.meshgrid(g, g, g, indexing="ij")
        return float(np.sum(bump_chi(np.stack([x, y, z], -1), spec)) * h**3)

    a, b = total(121), total(201)
    assert a > 0 and abs(a - b) <= 1e-4


def test_bump_nonnegative():
    spec = BumpSpec((0.0, 0.0, 0.0), 0.5)
    pts = np.random.default_rng(1).uniform(-1, 1, size=(500, 3))
    assert np.all(bump_chi(pts, spec) >= 0)


def test_coefficient_plus_tail_small(sub, canon_traj):
    t0 = canon_traj.turning_time
    ratios = []
    for x in np.linspace(t0 + 0.5, canon_traj.x0[-1] - 0.1, 15):
        rho, br, gap = canon_traj.radial(x)
        st = PhaseState(x, rho, 0.0, 1.0, 0.0, 1.0, br)
        m = transport_coefficient(st, Branch.PLUS, sub, gap=gap)
        ratios.append(abs(m) / gap)
    assert max(ratios) < 10 * min(ratios)


def test_coefficient_extremal_quadratic(ext):
    # |M+| = O((m - rho)^2); the leading term is in fact cubic
    sq, cube = [], []
    for d in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        st = PhaseState(0.0, ext.m - d, 0.0, 1.0, 0.0, 1.0, Branch.PLUS)
        m = abs(transport_coefficient(st, Branch.PLUS, ext))
        sq.append(m / d**2)
        cube.append(m / d**3)
    assert all(a > b for a, b in zip(sq, sq[1:]))
    assert max(cube) < 1.1 * min(cube)


def test_coefficient_flat_limit():
    flat = classify(1e-9, 0.0)
    for rho in (0.5, 2.0, 10.0):
        st = PhaseState.on_shell(rho, 0.0, 1.0, 0.0, flat)
        assert abs(transport_coefficient(st, Branch.MINUS, flat)) <= 1e-6


def test_coefficient_forms_agree(sub):
    for rho in (0.3, 0.8, 1.5, 2.2, 3.0):
        st = PhaseState.on_shell(rho, 0.0, 1.0, 1.0, sub)
        a = transport_coefficient(st, Branch.MINUS, sub)
        b = transport_coefficient_abstract(rho, 1.0, 1.0, Branch.MINUS, sub)
        assert b == pytest.approx(a, rel=1e-4)


def test_zero_bump_gives_zero(canon_traj):
    tracks = integrate_amplitude(canon_traj, 0.0, orders=1, band=(0.3, 0.3), plus_initial=[0.0, 0.0],
                                 sources=[lambda t: 0.0])
    assert all(not np.any(t.values) for t in tracks)


def test_missing_caustic_data(canon_traj):
    with pytest.raises(MissingCausticData):
        integrate_amplitude(canon_traj, 1.0)
    with pytest.raises(ConfigError):
        integrate_amplitude(canon_traj, 1.0, orders=1, x0_end=2.0)


def test_frozen_coefficient(monkeypatch, sub):
    mu, c = -0.7, 0.3
    monkeypatch.setattr(transport, "transport_coefficient", lambda *a, **k: mu)
    tr = integrate(initial_state(3.0, 0.0, 1.0, 1.0, sub), 3.0, sub)
    a0, a1 = integrate_amplitude(tr, 0.8, orders=1, sources=[lambda t: c], x0_end=3.0)
    assert np.max(np.abs(a0.values - 0.8 * np.exp(mu * a0.x0))) <= 1e-9
    want = c * (np.exp(mu * a1.x0) - 1.0) / mu
    assert np.max(np.abs(a1.values - want)) <= 1e-9


def test_linearity(canon_traj):
    a = integrate_amplitude(canon_traj, 1.0, band=(0.3, 0.3), plus_initial=[0.4 + 0.2j])[0]
    b = integrate_amplitude(canon_traj, 3.5, band=(0.3, 0.3), plus_initial=[3.5 * (0.4 + 0.2j)])[0]
    assert np.max(np.abs(b.values - 3.5 * a.values)) <= 1e-12 * 3.5 * np.max(np.abs(a.values))


def test_minus_closed_form_and_plus_invariant(sub, canon_traj, sub_track):
    t0 = canon_traj.turning_time
    m = sub_track.x0 < t0
    ex = np.array([minus_closed_form(canon_traj, 1.0, x) for x in sub_track.x0[m]])
    assert np.max(np.abs(sub_track.values[m] - ex)) <= 1e-9
    # a^2 sqrt(D) is constant on the Plus segment
    inv = []
    for x, v in zip(sub_track.x0[~m], sub_track.values[~m]):
        rho, _, gap = canon_traj.radial(x)
        f = sub.f(rho) if gap is None else lapse_f_gap(gap, sub)
        inv.append(abs(v) ** 2 * math.sqrt(1.0 - f / rho**2))
    inv = np.array(inv)
    assert np.ptp(inv) / inv[0] <= 1e-9


def test_subextremal_limit(sub_track):
    lim = amplitude_limit(sub_track)
    assert abs(lim.window_estimates[0] - lim.window_estimates[1]) <= 1e-6
    assert lim.tail_rate == pytest.approx(20.0, rel=0.01)


def test_subextremal_tail_log_affine(sub_track):
    lim = amplitude_limit(sub_track)
    plus = np.array([b is Branch.PLUS for b in sub_track.branch])
    x, v = sub_track.x0[plus], sub_track.values[plus]
    d = np.abs(v - lim.limit)
    sel = (x > x[0] + 0.3) & (d > 1e-13)
    fit = fit_model(x[sel], d[sel], "ExpDecay")
    assert fit.params["rate"] > 0
    logs = np.log(d[sel])
    resid = logs - (np.log(fit.params["coeff"]) - fit.params["rate"] * x[sel])
    assert np.max(np.abs(resid)) <= 0.05 * np.ptp(logs)


def test_zero_track_limit():
    tr = AmplitudeTrack((0, 0), 0, np.linspace(0, 1, 20), np.zeros(20, complex), np.zeros(20), [Branch.PLUS] * 20)
    assert amplitude_limit(tr).limit == 0


def test_short_tail():
    tr = AmplitudeTrack((0, 0), 0, np.linspace(0, 1, 10), np.ones(10, complex), -np.ones(10), [Branch.PLUS] * 10)
    with pytest.raises(InsufficientTail):
        amplitude_limit(tr)


def test_extremal_limit_exists(extremal_traj):
    tk = integrate_amplitude(extremal_traj, 1.0, band=(0.3, 0.3), plus_initial=[1.0], n_out=2001)[0]
    lim = amplitude_limit(tk, "Reciprocal")
    assert abs(lim.window_estimates[0] - lim.window_estimates[1]) <= 1e-6
    # a^2 sqrt(D) conserved and f ~ (m - rho)^2 ~ x0^-2 make the tail exponent 2
    assert lim.tail_exponent == pytest.approx(2.0, abs=0.1)


def test_sigma_constant():
    assert HIERARCHY_SIGMA == 1j

import math

import numpy as np
import pytest

from rntrace.caustic import (
    PhaseTable,
    legendre_phase,
    match_and_cross,
    maslov_integral,
    minus_amplitudes,
    momentum_eikonal_residual,
    stationary_phase_eval,
)
from rntrace.errors import (
    DegenerateStationaryPoint,
    MatchFailure,
    NonMonotoneMomentum,
    NoStationaryPoint,
    UnderResolved,
)
from rntrace.metric import discriminant_delta
from rntrace.transport import bump_chi

K_LIST = [100, 200, 400, 800]
EPS_BAND = 0.2


def stub_table(c=0.0, width=None, half=3.0, n=601, rho_shift=0.0):
    """L = eta^2/2 + c eta^3/6 with a unit or Gaussian amplitude."""
    e = np.linspace(-half, half, n)
    amp = np.ones_like(e) if width is None else np.exp(-e**2 / (2 * width**2))
    return PhaseTable(0.0, e, e**2 / 2 + c * e**3 / 6 + rho_shift * e, e + c * e**2 / 2 + rho_shift, amp,
                      0.0, 1.0, 1.0, l2_values=1 + c * e)


@pytest.fixture(scope="module")
def crossing(wide_bundle, caustic_bump):
    return match_and_cross(wide_bundle, caustic_bump, K_LIST, EPS_BAND, check=False)


def test_table_rejects_repeated_momentum():
    e = np.array([0.0, 1.0, 1.0, 2.0])
    with pytest.raises(NonMonotoneMomentum):
        PhaseTable(0.0, e, e, np.ones(4), np.ones(4), 0.0, 1.0, 1.0)


def test_focus_stub_is_linear():
    # every ray through one radius: L = c0 eta - S is linear with slope c0
    e = np.linspace(-1, 1, 21)
    t = PhaseTable(0.0, e, 0.7 * e + 0.2, np.full(21, 0.7), np.ones(21), 0.0, 1.0, 1.0)
    mid = np.linspace(-0.95, 0.95, 50)
    assert np.max(np.abs(t.L(mid, 2))) < 1e-12
    assert np.allclose(t.L(mid, 1), 0.7, atol=1e-12)


def test_physical_table_legendre(wide_bundle):
    t0 = wide_bundle.t0[wide_bundle.center]
    for x0 in (t0 - EPS_BAND, t0 + EPS_BAND):
        t = legendre_phase(wide_bundle, x0)
        assert np.all(np.diff(t.eta_samples) > 0)
        assert np.max(np.abs(t.L(t.eta_samples, 1) - t.rho_values)) <= 1e-5
        # double Legendre: S = rho eta - L at the samples
        j = wide_bundle.spec.n_phi // 2
        for n, i in enumerate(t.ray_index):
            st = wide_bundle.rays[(i, j)].state_at(x0)
            s_ray = wide_bundle.s0[i, j] + wide_bundle.spec.xi_phi * (t.phi - st.phi)
            s_back = float(t.L(t.eta_samples[n], 1)) * t.eta_samples[n] - float(t.L(t.eta_samples[n]))
            assert abs(s_back - s_ray) <= 1e-9 * max(1.0, abs(s_ray))


def test_maslov_zero_amplitude():
    t = stub_table()
    t = PhaseTable(0.0, t.eta_samples, t.L_values, t.rho_values, np.zeros_like(t.eta_samples), 0.0, 1.0, 1.0)
    assert maslov_integral(t, 200, 0.0) == 0


def test_fresnel_oracle():
    t = stub_table()
    for k, tol in ((200, 0.02), (800, 0.005)):
        u = maslov_integral(t, k, 0.0)
        assert abs(abs(u) - 1.0) <= tol
        v, rep = stationary_phase_eval(t, k, 0.0)
        assert abs(v - np.exp(-1j * math.pi / 4)) <= 1e-12
        assert abs(u - v) / abs(v) <= tol
        assert rep.maslov_sign == -1 and rep.second_derivative == pytest.approx(1.0)


def test_stationary_phase_first_order():
    t = stub_table(c=0.5, width=0.3)
    d = []
    for k in K_LIST:
        u = maslov_integral(t, k, 0.1)
        v, _ = stationary_phase_eval(t, k, 0.1)
        d.append(abs(u - v) / abs(v))
    slope = np.polyfit(np.log(K_LIST), np.log(d), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.15)
    assert d[1] / d[0] == pytest.approx(0.5, abs=0.05)


def test_stationary_phase_errors(wide_bundle):
    t = stub_table()
    with pytest.raises(NoStationaryPoint):
        stationary_phase_eval(t, 100, 50.0)
    c = wide_bundle.center
    t0 = wide_bundle.t0[c]
    tab = legendre_phase(wide_bundle, t0)
    rho_c = wide_bundle.rays[c].state_at(t0).rho
    with pytest.raises(DegenerateStationaryPoint):
        stationary_phase_eval(tab, 100, rho_c)


def test_under_resolved():
    with pytest.raises(UnderResolved):
        maslov_integral(stub_table(), 1e5, 0.0, max_nodes=10_000)


def test_phase_identity(crossing):
    assert max(crossing.phase_identity_error) <= 1e-8


def test_maslov_sign_flips(crossing):
    ic = crossing.table_minus.ray_index.size // 2
    sm = crossing.reports[("minus", ic)].maslov_sign
    sp = crossing.reports[("plus", ic)].maslov_sign
    assert sm == -sp
    assert crossing.maslov_jump == pytest.approx(1j, abs=1e-12)


def test_amplitude_continuity(wide_bundle, caustic_bump, crossing):
    # flux conservation: |a+| = chi (D(rho') / D(rho(t0 + eps)))^(1/4)
    spec = wide_bundle.spec
    j = spec.n_phi // 2
    worst = 0.0
    for i in range(spec.n_rho):
        chi = bump_chi((spec.rho_grid[i] * math.cos(spec.phi_grid[j]), spec.rho_grid[i] * math.sin(spec.phi_grid[j]), 0.0),
                       caustic_bump)
        if chi < 1e-3:
            continue
        rho = wide_bundle.rays[(i, j)].radial(crossing.x0_plus)[0]
        d0 = discriminant_delta(spec.rho_grid[i], spec.xi0, spec.xi_phi, wide_bundle.params)
        want = chi * (d0 / discriminant_delta(rho, spec.xi0, spec.xi_phi, wide_bundle.params)) ** 0.25
        worst = max(worst, abs(abs(crossing.a_plus[i]) - want) / want)
    assert worst <= 0.02


def test_minus_edge_amplitudes(wide_bundle, caustic_bump, crossing):
    a = minus_amplitudes(wide_bundle, caustic_bump, crossing.x0_minus)
    assert np.all(np.isfinite(a)) and np.max(np.abs(a)) > 0
    assert np.all(a.imag == 0)


def test_match_failure_raised(wide_bundle, caustic_bump):
    with pytest.raises(MatchFailure):
        match_and_cross(wide_bundle, caustic_bump, [100], EPS_BAND, tol_match=1e-3)


def test_momentum_eikonal(wide_bundle):
    c = wide_bundle.center
    x0 = wide_bundle.t0[c] - EPS_BAND
    tab = legendre_phase(wide_bundle, x0)
    mid = tab.eta_samples[len(tab.eta_samples) // 2]
    assert abs(momentum_eikonal_residual(wide_bundle, x0, mid)) <= 1e-6

"""Modulation system: matrix, typing, integrators and the strip monitor."""

import numpy as np
import pytest

from whithamlab.cnls import CnlsParams, ModulationField
from whithamlab.spectral import (
    Grid,
    ScheduleExhausted,
    SpectralField,
    StripSchedule,
    derivative,
    gevrey_norm,
    random_band_limited,
)
from whithamlab.whitham import (
    InsufficientAnalyticity,
    StabilityBoundViolated,
    ViscositySetting,
    calibrate_eta,
    check_data_admissibility,
    classify,
    f_term,
    integrate_perturbed,
    integrate_wme,
    m_matrix,
    read_modulation_csv,
    step_perturbed,
    step_wme,
    strip_monitor,
    wme_rhs,
    write_modulation_csv,
    write_trajectory,
)

P_HYP = CnlsParams(-1, -1, 0.3)
G = Grid(2.0 * np.pi, 128)
Z = SpectralField.zero(G)


def small_data(amp=0.05, seed=5, grid=G, max_mode=8):
    rng = np.random.default_rng(seed)
    comps = [random_band_limited(grid, rng, max_mode=max_mode, decay=1.0,
                                 amplitude=amp, mean_free=True) for _ in range(4)]
    return ModulationField(*comps, T=0.0)


def closed_form_rest_eigenvalues(r1, r2, p):
    """Block elimination of M at v = 0: lambda^2 = -(a+d)/2 +- sqrt(((a-d)/2)^2 + bc)
    with a = 2 g1 e^{2r1}, d = 2 g2 e^{2r2}, bc = 4 alpha^2 e^{2(r1+r2)}."""
    a = 2.0 * p.gamma1 * np.exp(2 * r1)
    d = 2.0 * p.gamma2 * np.exp(2 * r2)
    bc = 4.0 * p.alpha ** 2 * np.exp(2 * (r1 + r2))
    disc = np.sqrt(complex(((a - d) / 2.0) ** 2 + bc))
    lam2 = np.array([-(a + d) / 2.0 + disc, -(a + d) / 2.0 - disc])
    return np.concatenate([np.sqrt(lam2), -np.sqrt(lam2)])


def canon(values):
    """Sort eigenvalues robustly against 1e-16 noise in either part."""
    return sorted(values, key=lambda z: (round(z.real, 8), round(z.imag, 8)))


# ---------------------------------------------------------------------------
# m_matrix and classify
# ---------------------------------------------------------------------------

def test_m_matrix_at_rest():
    M = m_matrix((0, 0, 0, 0), CnlsParams(1, 1, 0.5))
    expect = np.array([[0, -1, 0, 0], [2, 0, 1, 0], [0, 0, 0, -1], [1, 0, 2, 0]], float)
    assert np.array_equal(M, expect)


def test_m_matrix_velocity_shift():
    base = m_matrix((0.2, 0.0, -0.1, 0.0), P_HYP)
    shifted = m_matrix((0.2, 0.7, -0.1, 0.7), P_HYP)
    assert np.allclose(shifted, base - 1.4 * np.eye(4), atol=1e-14)


def test_m_matrix_vanishing_amplitude_limit():
    M = m_matrix((-20.0, 0.0, -20.0, 0.0), P_HYP)
    assert abs(M[1, 0]) < 1e-16 and abs(M[3, 2]) < 1e-16
    assert M[0, 1] == -1.0 and M[2, 3] == -1.0


def test_classify_three_regimes():
    rep = classify((0, 0, 0, 0), CnlsParams(-1, -1, 0.3))
    assert rep.classification == "hyperbolic"
    reals = sorted(z.real for z in rep.eigenvalues)
    assert reals[0] == pytest.approx(-np.sqrt(2.6), rel=1e-12)
    assert reals[1] == pytest.approx(-np.sqrt(1.4), rel=1e-12)

    assert classify((0, 0, 0, 0), CnlsParams(1, 1, 0.3)).classification == "elliptic"

    rep_m = classify((0, 0, 0, 0), CnlsParams(1, -1, 0.3))
    assert rep_m.classification == "mixed"
    # lambda^2 = +-sqrt(4 + 4*0.09) = +-2.088: two real, two imaginary roots
    assert max(abs(z) for z in rep_m.eigenvalues) == pytest.approx(4.36 ** 0.25, rel=1e-12)


def test_classify_matches_closed_form_sample():
    rng = np.random.default_rng(12)
    for _ in range(100):
        g1, g2 = rng.choice([-1, 1]), rng.choice([-1, 1])
        alpha = float(rng.uniform(0.05, 0.9))
        p = CnlsParams(int(g1), int(g2), alpha)
        if abs(p.beta) < 1e-6:
            continue
        r1, r2 = rng.uniform(-0.5, 0.5, size=2)
        rep = classify((r1, 0.0, r2, 0.0), p)
        oracle = canon(closed_form_rest_eigenvalues(r1, r2, p))
        got = canon(rep.eigenvalues)
        assert max(abs(a - b) for a, b in zip(got, oracle)) < 1e-9


def test_classify_shift_invariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        r1, r2, c = rng.uniform(-0.4, 0.4, size=3)
        rep0 = classify((r1, 0.0, r2, 0.0), P_HYP)
        repc = classify((r1, c, r2, c), P_HYP)
        assert rep0.classification == repc.classification
        lam0 = canon(rep0.eigenvalues)
        lamc = canon(z + 2.0 * c for z in repc.eigenvalues)
        assert max(abs(a - b) for a, b in zip(lam0, lamc)) < 1e-12


def test_classify_degenerate_decoupled():
    # alpha -> 0 decouples the components; equal r gives repeated eigenvalues
    # (the pair splitting ~ 2 alpha e^{2r} must sit below the 1e-7 flag)
    rep = classify((0.1, 0.0, 0.1, 0.0), CnlsParams(-1, -1, 1e-8))
    assert rep.classification == "hyperbolic"
    assert rep.degenerate
    assert not classify((0.1, 0.0, 0.1, 0.0), P_HYP).degenerate


# ---------------------------------------------------------------------------
# wme_rhs and f_term
# ---------------------------------------------------------------------------

def test_rhs_annihilates_constants():
    u = ModulationField(SpectralField.from_values(G, np.full(G.N, 0.2)),
                        Z, SpectralField.from_values(G, np.full(G.N, -0.1)), Z, 0.0)
    for out in (wme_rhs(u, P_HYP), f_term(u)):
        for c in out.components:
            assert np.max(np.abs(c.coeffs)) == 0.0


def test_wme_rhs_pointwise_oracle():
    a = 0.1
    u = ModulationField(SpectralField.from_function(G, lambda x: a * np.cos(x)),
                        Z, Z, Z, 0.0)
    p = CnlsParams(1, 1, 0.5)
    rhs = wme_rhs(u, p)
    x = G.x()[::8]
    expect = 2.0 * np.exp(2 * a * np.cos(x)) * (-a * np.sin(x))
    assert np.max(np.abs(rhs.v1.values()[::8] - expect)) < 1e-12


def test_wme_rhs_index_swap():
    u = small_data(0.08)
    p = CnlsParams(-1, 1, 0.4)
    a = wme_rhs(u, p)
    swapped = ModulationField(u.r2, u.v2, u.r1, u.v1, u.T)
    b = wme_rhs(swapped, p.swapped())
    assert np.max(np.abs(a.r1.coeffs - b.r2.coeffs)) < 1e-13
    assert np.max(np.abs(a.v1.coeffs - b.v2.coeffs)) < 1e-13


def test_f_term_symbolic():
    a = 0.1
    u = ModulationField(SpectralField.from_function(G, lambda x: a * np.cos(x)),
                        Z, Z, Z, 0.0)
    F = f_term(u)
    x = G.x()
    assert np.max(np.abs(F.v1.values() - (a * np.sin(x) + a * a * np.sin(2 * x)))) < 1e-12
    assert np.max(np.abs(F.r1.coeffs)) == 0.0
    assert np.max(np.abs(F.r2.coeffs)) == 0.0
    assert np.max(np.abs(F.v2.coeffs)) == 0.0


def test_f_term_parity_decomposition():
    # odd r1 (sine series): the linear part d^3 r is even, the quadratic
    # part ((r_X)^2)_X is odd, and they are recovered exactly by reflection
    r1 = SpectralField.from_function(G, lambda x: 0.2 * np.sin(x) + 0.05 * np.sin(3 * x))
    u = ModulationField(r1, Z, Z, Z, 0.0)
    vals = f_term(u).v1.values()
    reflected = np.concatenate([[vals[0]], vals[1:][::-1]])
    even = 0.5 * (vals + reflected)
    odd = 0.5 * (vals - reflected)
    lin = derivative(r1, 3).values().real
    quad = vals - lin
    assert np.max(np.abs(even - lin)) < 1e-10
    assert np.max(np.abs(odd - quad)) < 1e-10


def test_shift_equivariance():
    u = small_data(0.06)
    p = P_HYP
    shift = np.exp(-1j * G.xi() * (G.L / G.N))

    def shifted(w):
        return ModulationField(*(SpectralField(G, shift * c.coeffs, c.is_real)
                                 for c in w.components), T=w.T)

    visc = ViscositySetting(1e-3, 2)
    for op in (lambda w: wme_rhs(w, p), f_term, lambda w: step_wme(w, 1e-3, p, visc)):
        a = op(shifted(u))
        b = shifted(op(u))
        for ca, cb in zip(a.components, b.components):
            assert np.max(np.abs(ca.coeffs - cb.coeffs)) < 1e-12


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------

def test_constant_is_fixed_point():
    u = ModulationField(SpectralField.from_values(G, np.full(G.N, 0.2)), Z, Z, Z, 0.0)
    out = step_wme(u, 1e-2, P_HYP, ViscositySetting(1e-3, 2))
    for a, b in zip(out.components, u.components):
        assert np.max(np.abs(a.coeffs - b.coeffs)) == 0.0
    # nu > 0: F(const) = 0, under the dispersive CFL of the smaller grid
    g = Grid(2 * np.pi, 64)
    uc = ModulationField(SpectralField.from_values(g, np.full(g.N, 0.2)),
                         *(SpectralField.zero(g) for _ in range(3)), T=0.0)
    out2 = step_perturbed(uc, 1e-3, 0.05, P_HYP, ViscositySetting(1e-3, 4))
    for a, b in zip(out2.components, uc.components):
        assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-16


def test_nu_zero_reduction_bitwise():
    u = small_data()
    visc = ViscositySetting(1e-3, 2)
    a = step_wme(u, 1e-3, P_HYP, visc)
    b = step_perturbed(u, 1e-3, 0.0, P_HYP, visc)
    for ca, cb in zip(a.components, b.components):
        assert np.array_equal(ca.coeffs, cb.coeffs)


def test_step_wme_requires_order2():
    with pytest.raises(ValueError):
        step_wme(small_data(), 1e-3, P_HYP, ViscositySetting(1e-3, 4))


def test_perturbed_requires_order4():
    with pytest.raises(ValueError):
        step_perturbed(small_data(), 1e-4, 0.05, P_HYP, ViscositySetting(1e-3, 2))


def test_viscosity_setting_validation():
    with pytest.raises(ValueError):
        ViscositySetting(-1e-3, 2)
    with pytest.raises(ValueError):
        ViscositySetting(1e-3, 3)


def test_stability_bound_violated():
    with pytest.raises(StabilityBoundViolated):
        step_wme(small_data(), 1.0, P_HYP, ViscositySetting(0.0, 2))


def test_perturbed_first_order_response():
    # ||u(dt) - u0 - dt * (M u_X + nu F)|| / dt is O(dt): Richardson slope 1
    g = Grid(2 * np.pi, 64)
    u = small_data(grid=g, max_mode=6)
    nu = 0.04
    visc = ViscositySetting(0.0, 4)
    rhs0 = wme_rhs(u, P_HYP)
    F0 = f_term(u)
    devs = []
    for dt in (2e-3, 1e-3):
        out = step_perturbed(u, dt, nu, P_HYP, visc)
        dev = 0.0
        for c_out, c_u, c_r, c_f in zip(out.components, u.components,
                                        rhs0.components, F0.components):
            taylor = c_u.coeffs + dt * (c_r.coeffs + nu * c_f.coeffs)
            dev = max(dev, np.max(np.abs(c_out.coeffs - taylor)))
        devs.append(dev / dt)
    slope = np.log2(devs[0] / devs[1])
    assert slope == pytest.approx(1.0, abs=0.15)


def test_beta_self_convergence_ratio():
    u = small_data()
    def final(beta):
        traj = integrate_wme(u, 1e-3, 100, P_HYP, ViscositySetting(beta, 2),
                             sample_every=10 ** 9)
        return traj[-1][1]
    ub, uh, uq = final(1e-3), final(5e-4), final(2.5e-4)
    d1 = sum(gevrey_norm(a - b, (0, 0.25)) ** 2 for a, b in zip(ub.components, uh.components)) ** 0.5
    d2 = sum(gevrey_norm(a - b, (0, 0.25)) ** 2 for a, b in zip(uh.components, uq.components)) ** 0.5
    assert 1.6 <= d1 / d2 <= 2.4


def test_dt_self_convergence_order():
    u = small_data()
    def final(dt):
        traj = integrate_wme(u, dt, round(0.1 / dt), P_HYP, ViscositySetting(1e-3, 2),
                             sample_every=10 ** 9)
        return traj[-1][1]
    a, b, c = final(2e-3), final(1e-3), final(5e-4)
    e1 = sum(gevrey_norm(x - y, (0, 0)) ** 2 for x, y in zip(a.components, b.components)) ** 0.5
    e2 = sum(gevrey_norm(x - y, (0, 0)) ** 2 for x, y in zip(b.components, c.components)) ** 0.5
    assert np.log2(e1 / e2) >= 3.5


def test_gradient_proxy_stays_bounded():
    # hyperbolic small data: l2 norm of the gradient grows < 10% over T = 0.2
    u = small_data()
    traj = integrate_wme(u, 1e-3, 200, P_HYP, ViscositySetting(5e-4, 2), sample_every=20)
    def tv(w):
        return sum(gevrey_norm(derivative(c, 1), (0, 0)) ** 2 for c in w.components) ** 0.5
    series = [tv(w) for _, w in traj]
    assert max(series) <= 1.1 * series[0]


# ---------------------------------------------------------------------------
# admissibility and the strip monitor
# ---------------------------------------------------------------------------

def test_elliptic_rough_data_refused():
    p_foc = CnlsParams(1, 1, 0.3)
    flat = np.zeros(G.N, complex)
    flat[np.abs(G.modes()) <= 20] = 0.01
    flat[0] = 0.0
    rough = ModulationField(*(SpectralField.from_coefficients(G, flat, True)
                              for _ in range(4)), T=0.0)
    with pytest.raises(InsufficientAnalyticity):
        check_data_admissibility(rough, p_foc)
    # analytic elliptic data passes the check
    rep = check_data_admissibility(small_data(), p_foc)
    assert rep.classification == "elliptic"


def test_elliptic_horizon_restriction():
    p_foc = CnlsParams(1, 1, 0.3)
    sched = StripSchedule(0.5, 0.5)
    with pytest.raises(InsufficientAnalyticity):
        integrate_perturbed(small_data(), 1e-3, 2000, 0.0, p_foc,
                            ViscositySetting(1e-3, 2), sched=sched)


def test_monitor_constant_trajectory():
    u = ModulationField(SpectralField.from_function(G, lambda x: 0.05 * np.cos(x)),
                        Z, Z, Z, 0.0)
    sched = StripSchedule(1.0, 2.0)
    R = u.norm((2.0, 1.0))
    traj = [(t, u) for t in (0.0, 0.1, 0.2, 0.3)]
    rep = strip_monitor(traj, sched, 2.0, R)
    assert rep.holds and rep.argmax_T == 0.0
    assert rep.max_norm == pytest.approx(R)


def test_monitor_schedule_exhausted():
    u = small_data()
    sched = StripSchedule(0.5, 2.0)
    with pytest.raises(ScheduleExhausted):
        strip_monitor([(0.3, u)], sched, 2.0, 1.0)


def test_monitor_hyperbolic_holds_and_elliptic_violates():
    m_cut = 25
    u = small_data()
    R0 = u.truncated(m_cut).norm((2.0, 0.5))

    eta = calibrate_eta(P_HYP, R0)
    sched = StripSchedule(0.5, eta)
    n_inside = 8
    dt = 0.8 * sched.lifespan / n_inside
    traj = integrate_wme(u, dt, n_inside, P_HYP, ViscositySetting(5e-4, 2))
    inside = [(T, w) for T, w in traj if T < 0.8 * sched.lifespan]
    rep = strip_monitor(inside, sched, 2.0, 1.05 * R0, mode_cutoff=m_cut)
    assert rep.holds

    # focusing run against a deliberately small eta: the bound must break
    p_foc = CnlsParams(1, 1, 0.3)
    traj_e = integrate_perturbed(u, 1e-3, 400, 0.0, p_foc,
                                 ViscositySetting(1e-3, 2), sample_every=10)
    sched_e = StripSchedule(0.5, 0.5)
    rep_e = strip_monitor(traj_e, sched_e, 2.0, 1.05 * R0, mode_cutoff=m_cut)
    assert not rep_e.holds
    assert rep_e.first_violation_T is not None
    assert rep_e.first_violation_T < sched_e.lifespan


# ---------------------------------------------------------------------------
# trajectory dumps
# ---------------------------------------------------------------------------

def test_modulation_csv_round_trip(tmp_path):
    u = small_data(0.07)
    path = tmp_path / "mod.csv"
    write_modulation_csv(u, path)
    v = read_modulation_csv(path)
    for a, b in zip(u.components, v.components):
        assert np.array_equal(a.coeffs, b.coeffs)


def test_trajectory_dump(tmp_path):
    u = small_data()
    traj = integrate_wme(u, 1e-3, 20, P_HYP, ViscositySetting(1e-3, 2), sample_every=10)
    index = write_trajectory(traj, tmp_path / "traj", StripSchedule(0.5, 0.5), 2.0,
                             mode_cutoff=25)
    lines = open(index).read().splitlines()
    assert lines[0] == "T,path,sigma_T,norm"
    assert len(lines) == 1 + len(traj)
    first = read_modulation_csv(tmp_path / "traj" / "sample_00000.csv")
    for a, b in zip(first.components, u.components):
        assert np.array_equal(a.coeffs, b.coeffs)

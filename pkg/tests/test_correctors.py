"""Corrector hierarchy, assembly, residuals and order fitting."""

import numpy as np
import pytest

from whithamlab.cnls import CnlsParams, ModulationField
from whithamlab.correctors import (
    DegenerateSamples,
    ExpansionBundle,
    OrderUnsupported,
    TimeGridTooCoarse,
    assemble,
    build_bundle,
    corrector_forcing,
    fit_order,
    residual,
    solve_corrector,
    write_residual_csv,
)
from whithamlab.correctors import _integrate_hierarchy
from whithamlab.spectral import Grid, SpectralField, random_band_limited
from whithamlab.whitham import ViscositySetting, _stack, f_term, wme_rhs

P = CnlsParams(-1, -1, 0.3)
G = Grid(2.0 * np.pi, 64)
Z = SpectralField.zero(G)
VISC = ViscositySetting(5e-4, 2)


def generic_u0(seed=5, amp=0.08):
    rng = np.random.default_rng(seed)
    comps = [random_band_limited(G, rng, max_mode=6, decay=0.8,
                                 amplitude=amp, mean_free=True) for _ in range(4)]
    return ModulationField(*comps, T=0.0)


@pytest.fixture(scope="module")
def bundle():
    return build_bundle(generic_u0(), P, VISC, dt=1e-3, n_steps=200, order=2,
                        sample_every=20, richardson=True)


# ---------------------------------------------------------------------------
# forcings
# ---------------------------------------------------------------------------

def test_forcing_one_is_f_term(bundle):
    F1 = corrector_forcing(1, bundle, 0.0)
    ref = f_term(bundle.trajectories[0][0][1])
    for a, b in zip(F1.components, ref.components):
        assert np.array_equal(a.coeffs, b.coeffs)


def test_forcing_one_symbolic():
    a = 0.1
    u0 = ModulationField(SpectralField.from_function(G, lambda x: a * np.cos(x)),
                         Z, Z, Z, 0.0)
    b = ExpansionBundle(order=0, trajectories=((np.float64(0.0), u0),) * 1 and ((（0.0, u0),),) if False else ExpansionBundle(
        order=0, trajectories=(((0.0, u0),),), nu=0.0, p=P, visc=VISC, dt=1e-3)
    F1 = corrector_forcing(1, b, 0.0)
    x = G.x()
    assert np.max(np.abs(F1.v1.values() - (a * np.sin(x) + a * a * np.sin(2 * x)))) < 1e-12


def test_forcing_constant_u0_vanishes():
    uc = ModulationField(SpectralField.from_values(G, np.full(G.N, 0.1)), Z, Z, Z, 0.0)
    b = ExpansionBundle(order=0, trajectories=(((0.0, uc),),), nu=0.0, p=P,
                        visc=VISC, dt=1e-3)
    F1 = corrector_forcing(1, b, 0.0)
    for c in F1.components:
        assert np.max(np.abs(c.coeffs)) == 0.0


def test_forcing_two_matches_nu_derivative(bundle):
    # central second differences in nu of the full right side evaluated on
    # the frozen pair (u0, u1); the hand-coded F2 must match to 1e-5 rel
    T = bundle.times[3]
    i = bundle.sample_index(T)
    u0 = bundle.trajectories[0][i][1]
    u1 = bundle.trajectories[1][i][1]
    F2 = corrector_forcing(2, bundle, T)
    F2c = np.stack([c.coeffs for c in F2.components])

    def full_rhs(nu):
        comps = [SpectralField(G, u0.components[k].coeffs + nu * u1.components[k].coeffs,
                               True) for k in range(4)]
        w = ModulationField(*comps, T=T)
        r = wme_rhs(w, P)
        Fw = f_term(w)
        return np.stack([r.components[k].coeffs + nu * Fw.components[k].coeffs
                         for k in range(4)])

    scale = np.max(np.abs(F2c))
    for h in (1e-3, 1e-4):
        fd = (full_rhs(h) - 2.0 * full_rhs(0.0) + full_rhs(-h)) / (2.0 * h * h)
        assert np.max(np.abs(fd - F2c)) / scale < 1e-5


def test_forcing_order_unsupported(bundle):
    with pytest.raises(OrderUnsupported):
        corrector_forcing(3, bundle, 0.0)


# ---------------------------------------------------------------------------
# corrector solves
# ---------------------------------------------------------------------------

def test_constant_u0_gives_zero_correctors():
    uc = ModulationField(SpectralField.from_values(G, np.full(G.N, 0.1)), Z, Z, Z, 0.0)
    b = build_bundle(uc, P, VISC, dt=1e-3, n_steps=50, order=2, sample_every=10,
                     richardson=False)
    for n in (1, 2):
        for _, u in b.trajectories[n]:
            assert max(np.max(np.abs(c.coeffs)) for c in u.components) == 0.0


def test_corrector_short_time_taylor():
    # u1(dt) = dt F1(u0(0)) + O(dt^2); halving dt quarters the remainder
    u0 = generic_u0()
    F1 = f_term(u0)
    devs = []
    for dt in (2e-3, 1e-3):
        trajs = _integrate_hierarchy(u0, P, ViscositySetting(0.0, 2), dt, 1, 1)
        u1 = trajs[1][-1][1]
        dev = max(np.max(np.abs(cu.coeffs - dt * cf.coeffs))
                  for cu, cf in zip(u1.components, F1.components))
        devs.append(dev)
    assert np.log2(devs[0] / devs[1]) == pytest.approx(2.0, abs=0.2)


def test_corrector_linearity(bundle):
    t1 = solve_corrector(1, bundle, P, VISC, forcing_scale=1.0)
    t2 = solve_corrector(1, bundle, P, VISC, forcing_scale=2.0)
    for (_, a), (_, b) in zip(t1, t2):
        for ca, cb in zip(a.components, b.components):
            assert np.max(np.abs(2.0 * ca.coeffs - cb.coeffs)) < 1e-12


def test_correctors_start_from_zero(bundle):
    for n in (1, 2):
        _, first = bundle.trajectories[n][0]
        assert max(np.max(np.abs(c.coeffs)) for c in first.components) == 0.0


def test_u0_solves_whitham_system(bundle):
    # residual of the extrapolated base trajectory in the nu = 0 equation
    res = residual(bundle.trajectories[0], 0.0, P, check_sampling=False)
    sup = max(np.sqrt(sum(np.sum(np.abs(c.coeffs) ** 2) for c in u.components))
              for _, u in res[1:-1])
    assert sup < 1e-5


def test_bundle_no_blowup_over_monitor_window(bundle):
    # lifespan uniformity: all corrector levels stay bounded on the window
    for n in (0, 1, 2):
        for _, u in bundle.trajectories[n]:
            norms = [np.max(np.abs(c.coeffs)) for c in u.components]
            assert all(np.isfinite(norms))
        sup0 = max(u.norm((0.0, 0.25)) for _, u in bundle.trajectories[0])
        supn = max(u.norm((0.0, 0.25)) for _, u in bundle.trajectories[n])
        assert supn < 1e3 * max(sup0, 1.0)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def test_assemble_nu_zero_is_u0(bundle):
    asm = assemble(bundle, 0.0)
    for (_, a), (_, b) in zip(asm, bundle.trajectories[0]):
        for ca, cb in zip(a.components, b.components):
            assert np.array_equal(ca.coeffs, cb.coeffs)


def test_assemble_order_zero_ignores_nu():
    b0 = build_bundle(generic_u0(), P, VISC, dt=1e-3, n_steps=40, order=0,
                      sample_every=10, richardson=False)
    asm = assemble(b0, 0.37)
    for (_, a), (_, b) in zip(asm, b0.trajectories[0]):
        for ca, cb in zip(a.components, b.components):
            assert np.array_equal(ca.coeffs, cb.coeffs)


def test_assemble_hand_sum(bundle):
    nu = 0.1
    asm = assemble(bundle, nu)
    i = 4
    hand = (_stack(bundle.trajectories[0][i][1])
            + nu * _stack(bundle.trajectories[1][i][1])
            + nu ** 2 * _stack(bundle.trajectories[2][i][1]))
    assert np.max(np.abs(_stack(asm[i][1]) - hand)) < 1e-15


def test_assemble_polynomial_degree(bundle):
    # sampling the assembly at order+2 nus and interpolating recovers the
    # stored correctors (the assembly is a polynomial in nu)
    nus = np.array([0.0, 0.01, 0.02, 0.03])
    i = 5
    V = np.vander(nus, 3, increasing=True)  # columns 1, nu, nu^2
    samples = np.stack([_stack(assemble(bundle, nu)[i][1]).ravel() for nu in nus])
    coefs, *_ = np.linalg.lstsq(V, samples, rcond=None)
    for n in range(3):
        stored = _stack(bundle.trajectories[n][i][1]).ravel()
        assert np.max(np.abs(coefs[n] - stored)) < 1e-10


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def test_residual_constant_solution():
    uc = ModulationField(SpectralField.from_values(G, np.full(G.N, 0.1)), Z, Z, Z, 0.0)
    traj = [(0.01 * k, uc) for k in range(11)]
    res = residual(traj, 0.02, P, check_sampling=True)
    for _, u in res:
        assert max(np.max(np.abs(c.coeffs)) for c in u.components) < 1e-12


def test_residual_of_u0_is_minus_nu_f(bundle):
    nu = 0.02
    res = residual(bundle.trajectories[0], nu, P, check_sampling=True)
    expect = -nu * np.stack([c.coeffs for c in
                             f_term(bundle.trajectories[0][0][1]).components])
    got = _stack(res[0][1])
    assert np.max(np.abs(got - expect)) / np.max(np.abs(expect)) < 1e-2


def test_residual_scaling_slope_one(bundle):
    sups = []
    nus = (0.04, 0.02, 0.01, 0.005)
    for nu in nus:
        res = residual(bundle.trajectories[0], nu, P, check_sampling=False)
        sups.append(max(np.sqrt(sum(np.sum(np.abs(c.coeffs) ** 2)
                                    for c in u.components)) for _, u in res))
    fit = fit_order(nus, sups)
    assert fit.slope == pytest.approx(1.0, abs=0.05)


def test_residual_time_grid_too_coarse():
    # undersampling an oscillatory trajectory must trip the halving check
    u0 = generic_u0()
    trajs = _integrate_hierarchy(u0, P, VISC, 1e-3, 600, 0, sample_every=60)
    with pytest.raises(TimeGridTooCoarse):
        residual(trajs[0], 0.0, P, check_sampling=True, coarse_rel_tol=0.01)


# ---------------------------------------------------------------------------
# fit_order
# ---------------------------------------------------------------------------

def test_fit_order_exact_quadratic():
    fit = fit_order([1e-3, 1e-2, 1e-1], [3.0 * v ** 2 for v in (1e-3, 1e-2, 1e-1)])
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_fit_order_cubic_with_perturbation():
    nus = np.geomspace(1e-3, 1e-1, 7)
    fit = fit_order(nus, [v ** 3 * (1 + 0.01 * v) for v in nus])
    assert fit.slope == pytest.approx(3.0, abs=0.02)


def test_fit_order_constant_samples():
    fit = fit_order([1e-3, 1e-2, 1e-1], [2.5, 2.5, 2.5])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.r_squared == 1.0


def test_fit_order_degenerate():
    with pytest.raises(DegenerateSamples):
        fit_order([1e-3, 1e-2, 1e-1], [1.0, 0.0, 1.0])
    with pytest.raises(DegenerateSamples):
        fit_order([1e-2, 1e-2, 1e-2], [1.0, 1.0, 1.0])


# ---------------------------------------------------------------------------
# report IO
# ---------------------------------------------------------------------------

def test_residual_csv(tmp_path, bundle):
    from whithamlab.correctors import ResidualReport

    nus = (0.04, 0.02, 0.01, 0.005)
    per_time = tuple(tuple((float(T), float(nu)) for T in (0.0, 0.1)) for nu in nus)
    report = ResidualReport(order=0, nus=nus, sup_norms=nus, per_time=per_time,
                            fit=fit_order(nus, nus))
    path = tmp_path / "res.csv"
    write_residual_csv(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "nu,n,T,res_norm"
    assert len(lines) == 1 + len(nus) * 2
    summary = (tmp_path / "res.csv.summary").read_text()
    assert "fitted_order = 1" in summary

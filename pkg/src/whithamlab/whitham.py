"""Quasilinear modulation system, viscous integrators and the strip monitor.

The modulation state u = (r1, v1, r2, v2) obeys

    u_T = M(u) u_X + nu F(D^3 u),

    M(u) = [ -2 v1          -1      0            0
             2 g1 e^{2 r1}  -2 v1   2 a e^{2 r2} 0
             0               0     -2 v2        -1
             2 a e^{2 r1}    0      2 g2 e^{2 r2} -2 v2 ],

    F = (0, r1_XXX + (r1_X^2)_X, 0, r2_XXX + (r2_X^2)_X).

nu = 0 is the multiphase Whitham limit.  Time stepping is an explicit
fourth-order Runge-Kutta with an exact integrating factor on the viscous
term beta d^2/dX^2 (Laplacian smoothing for the Whitham system) or
-beta d^4/dX^4 (bi-Laplacian, needed once the third-order dispersion is
present); both multipliers are dissipative.  The explicit part carries the
usual advective CFL limit dt * xi_kept * ||M||_inf (plus nu * xi_kept^3
for the dispersive term) inside the RK4 stability region.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .cnls import CnlsParams, ModulationField
from .spectral import (
    Grid,
    ScheduleExhausted,
    SpectralField,
    StripSchedule,
    cached_algebra_constant,
    estimate_strip,
)

__all__ = [
    "CharacteristicReport",
    "ViscositySetting",
    "StabilityBoundViolated",
    "InsufficientAnalyticity",
    "StripMonitorReport",
    "m_matrix",
    "classify",
    "wme_rhs",
    "f_term",
    "step_wme",
    "step_perturbed",
    "integrate_wme",
    "integrate_perturbed",
    "check_data_admissibility",
    "strip_monitor",
    "calibrate_eta",
    "write_modulation_csv",
    "read_modulation_csv",
    "write_trajectory",
]

RK4_STABILITY_RADIUS = 2.82


class StabilityBoundViolated(ValueError):
    """Explicit step would leave the RK4 stability region."""


class InsufficientAnalyticity(ValueError):
    """Elliptic or mixed data whose spectrum decays too slowly to evolve."""


@dataclass(frozen=True)
class ViscositySetting:
    """Viscosity strength and differential order of the smoothing term."""

    beta: float
    order: int

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.order not in (2, 4):
            raise ValueError("order must be 2 or 4")


@dataclass(frozen=True)
class CharacteristicReport:
    eigenvalues: tuple[complex, complex, complex, complex]
    classification: str  # hyperbolic | elliptic | mixed
    degenerate: bool


# ---------------------------------------------------------------------------
# Pointwise matrix and eigenvalue typing
# ---------------------------------------------------------------------------

def m_matrix(point, p: CnlsParams) -> np.ndarray:
    """M(u) evaluated entry-wise at one state point (r1, v1, r2, v2)."""
    r1, v1, r2, v2 = (float(c) for c in point)
    if not all(np.isfinite([r1, v1, r2, v2])):
        raise ValueError("point must be finite")
    e1 = np.exp(2.0 * r1)
    e2 = np.exp(2.0 * r2)
    return np.array([
        [-2.0 * v1, -1.0, 0.0, 0.0],
        [2.0 * p.gamma1 * e1, -2.0 * v1, 2.0 * p.alpha * e2, 0.0],
        [0.0, 0.0, -2.0 * v2, -1.0],
        [2.0 * p.alpha * e1, 0.0, 2.0 * p.gamma2 * e2, -2.0 * v2],
    ])


def classify(point, p: CnlsParams,
             imag_tol: float = 1e-9, degeneracy_tol: float = 1e-7) -> CharacteristicReport:
    """Characteristic type of M at a point: hyperbolic, elliptic or mixed.

    An eigenvalue counts as real when |Im| < imag_tol * spectral_radius;
    repeated real eigenvalues (within degeneracy_tol * radius) raise the
    degeneracy flag, which catches weakly hyperbolic parameter sets.
    """
    lam = np.linalg.eigvals(m_matrix(point, p))
    lam = lam[np.lexsort((lam.imag, lam.real))]
    rho = float(np.max(np.abs(lam)))
    if rho == 0.0:
        return CharacteristicReport(tuple(lam), "hyperbolic", True)
    real_mask = np.abs(lam.imag) < imag_tol * rho
    n_real = int(np.count_nonzero(real_mask))
    if n_real == 4:
        kind = "hyperbolic"
    elif n_real == 0:
        kind = "elliptic"
    else:
        kind = "mixed"
    reals = np.sort(lam.real[real_mask])
    degenerate = bool(np.any(np.diff(reals) < degeneracy_tol * rho)) if n_real >= 2 else False
    return CharacteristicReport(tuple(complex(z) for z in lam), kind, degenerate)


# ---------------------------------------------------------------------------
# Vector field on stacked coefficient arrays
# ---------------------------------------------------------------------------

def _stack(u: ModulationField) -> np.ndarray:
    return np.stack([c.coeffs for c in u.components])


def _unstack(C: np.ndarray, grid: Grid, T: float) -> ModulationField:
    comps = [SpectralField.from_coefficients(grid, C[i], is_real=None) for i in range(4)]
    # evolution preserves realness; tiny imaginary residue is projected out
    comps = [c if c.is_real else
             SpectralField.from_values(grid, c.values().real) for c in comps]
    return ModulationField(*comps, T=T)


def _values(C: np.ndarray) -> np.ndarray:
    return (np.fft.ifft(C, axis=-1) * C.shape[-1]).real


def _to_coeffs(vals: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, np.fft.fft(vals, axis=-1) / vals.shape[-1], 0.0)


def _wme_rhs_stack(C: np.ndarray, grid: Grid, p: CnlsParams,
                   xi: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """M(u) u_X for one 4-row block of coefficients, dealiased."""
    vals = _values(C)
    dval = _values(1j * xi * C)
    r1, v1, r2, v2 = vals
    dr1, dv1, dr2, dv2 = dval
    e1 = np.exp(2.0 * r1)
    e2 = np.exp(2.0 * r2)
    rows = np.stack([
        -2.0 * v1 * dr1 - dv1,
        2.0 * p.gamma1 * e1 * dr1 - 2.0 * v1 * dv1 + 2.0 * p.alpha * e2 * dr2,
        -2.0 * v2 * dr2 - dv2,
        2.0 * p.alpha * e1 * dr1 + 2.0 * p.gamma2 * e2 * dr2 - 2.0 * v2 * dv2,
    ])
    return _to_coeffs(rows, mask)


def _f_term_stack(C: np.ndarray, grid: Grid, xi: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """F(D^3 u) = (0, r1_XXX + (r1_X^2)_X, 0, r2_XXX + (r2_X^2)_X)."""
    out = np.zeros_like(C)
    for row, src in ((1, 0), (3, 2)):
        wx = (np.fft.ifft(1j * xi * C[src]) * grid.N).real
        sq_hat = np.where(mask, np.fft.fft(wx * wx) / grid.N, 0.0)
        out[row] = np.where(mask, (1j * xi) ** 3 * C[src], 0.0) + 1j * xi * sq_hat
    return out


def wme_rhs(u: ModulationField, p: CnlsParams) -> ModulationField:
    """Right side M(u) u_X of the Whitham system, dealiased."""
    grid = u.grid
    C = _wme_rhs_stack(_stack(u), grid, p, grid.xi(), grid.dealias_mask())
    return _unstack(C, grid, u.T)


def f_term(u: ModulationField) -> ModulationField:
    """Third-order dispersive polynomial F(D^3 u)."""
    grid = u.grid
    C = _f_term_stack(_stack(u), grid, grid.xi(), grid.dealias_mask())
    return _unstack(C, grid, u.T)


# ---------------------------------------------------------------------------
# Integrating-factor RK4
# ---------------------------------------------------------------------------

def ifrk4_step(C: np.ndarray, dt: float, rhs, lin: np.ndarray) -> np.ndarray:
    """One step of RK4 with exact integrating factor exp(lin * t).

    ``rhs`` maps stacked coefficients to stacked coefficients; ``lin`` is
    the diagonal linear multiplier (broadcastable against C).
    """
    E = np.exp(lin * (0.5 * dt))
    E2 = E * E
    n1 = rhs(C)
    n2 = rhs(E * (C + (0.5 * dt) * n1))
    n3 = rhs(E * C + (0.5 * dt) * n2)
    n4 = rhs(E2 * C + dt * (E * n3))
    return E2 * C + (dt / 6.0) * (E2 * n1 + 2.0 * E * (n2 + n3) + n4)


def _viscosity_multiplier(grid: Grid, visc: ViscositySetting) -> np.ndarray:
    # both orders damp: +beta u_XX -> -beta xi^2, -beta u_XXXX -> -beta xi^4
    return -visc.beta * np.abs(grid.xi()) ** visc.order


def _advective_bound(u: ModulationField, p: CnlsParams) -> float:
    """max over the grid of the row-sum norm of M(u); >= spectral radius."""
    r1, v1, r2, v2 = (c.values() for c in u.components)
    e1 = np.exp(2.0 * r1)
    e2 = np.exp(2.0 * r2)
    rows = np.stack([
        2.0 * np.abs(v1) + 1.0,
        2.0 * e1 + 2.0 * np.abs(v1) + 2.0 * abs(p.alpha) * e2,
        2.0 * np.abs(v2) + 1.0,
        2.0 * abs(p.alpha) * e1 + 2.0 * e2 + 2.0 * np.abs(v2),
    ])
    return float(np.max(rows))


def _check_stability(u: ModulationField, dt: float, nu: float, p: CnlsParams) -> None:
    xi_kept = (2.0 * np.pi / u.grid.L) * u.grid.dealias_cutoff
    z = dt * (xi_kept * _advective_bound(u, p) + nu * xi_kept ** 3)
    if z > RK4_STABILITY_RADIUS:
        raise StabilityBoundViolated(
            f"dt*(xi*||M|| + nu*xi^3) = {z:.3g} exceeds {RK4_STABILITY_RADIUS}")


def step_wme(u: ModulationField, dt: float, p: CnlsParams,
             visc: ViscositySetting) -> ModulationField:
    """One viscous Whitham step u_T = M(u) u_X + beta u_XX."""
    if visc.order != 2:
        raise ValueError("Whitham stepping uses the order-2 (Laplacian) viscosity")
    return step_perturbed(u, dt, 0.0, p, visc)


def step_perturbed(u: ModulationField, dt: float, nu: float, p: CnlsParams,
                   visc: ViscositySetting) -> ModulationField:
    """One step of u_T = M(u) u_X + nu F(D^3 u) + viscosity.

    With nu = 0 this is exactly step_wme (identical arithmetic).  A
    positive nu requires the bi-Laplacian (order 4) whenever beta > 0;
    the Laplacian does not dominate the third-order dispersion.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    if nu > 0 and visc.beta > 0 and visc.order != 4:
        raise ValueError("nu > 0 with beta > 0 requires the order-4 viscosity")
    _check_stability(u, dt, nu, p)
    grid = u.grid
    xi = grid.xi()
    mask = grid.dealias_mask()

    if nu == 0.0:
        def rhs(C):
            return _wme_rhs_stack(C, grid, p, xi, mask)
    else:
        def rhs(C):
            return (_wme_rhs_stack(C, grid, p, xi, mask)
                    + nu * _f_term_stack(C, grid, xi, mask))

    lin = _viscosity_multiplier(grid, visc)
    C = ifrk4_step(_stack(u), dt, rhs, lin)
    return _unstack(C, grid, u.T + dt)


# ---------------------------------------------------------------------------
# Trajectory drivers
# ---------------------------------------------------------------------------

def check_data_admissibility(u0: ModulationField, p: CnlsParams,
                             min_strip: float = 0.1) -> CharacteristicReport:
    """Refuse elliptic/mixed data without a usable analyticity strip.

    Outside the hyperbolic regime only spectrum decay controls the
    evolution, so the decay rate of every non-trivial component must
    reach ``min_strip``.
    """
    mean_point = [c.mean() for c in u0.components]
    report = classify(mean_point, p)
    if report.classification != "hyperbolic":
        for c in u0.components:
            try:
                strip = estimate_strip(c, floor=1e-12)
            except Exception:
                continue  # near-constant component carries no constraint
            if strip < min_strip:
                raise InsufficientAnalyticity(
                    f"{report.classification} data with strip estimate "
                    f"{strip:.3g} < {min_strip}")
    return report


def integrate_perturbed(u0: ModulationField, dt: float, n_steps: int, nu: float,
                        p: CnlsParams, visc: ViscositySetting,
                        sample_every: int = 1,
                        enforce_admissibility: bool = True,
                        min_strip: float = 0.1,
                        sched: StripSchedule | None = None):
    """March the (possibly perturbed) system; returns [(T, field), ...].

    Elliptic runs additionally require a horizon inside half the schedule
    lifespan when a schedule is supplied.
    """
    if enforce_admissibility:
        report = check_data_admissibility(u0, p, min_strip)
        if report.classification != "hyperbolic" and sched is not None:
            horizon = u0.T + n_steps * dt
            if horizon > 0.5 * sched.lifespan:
                raise InsufficientAnalyticity(
                    f"{report.classification} horizon {horizon:.3g} exceeds "
                    f"half the schedule lifespan {sched.lifespan:.3g}")
    out = [(u0.T, u0)]
    u = u0
    for i in range(1, n_steps + 1):
        u = step_perturbed(u, dt, nu, p, visc)
        if i % sample_every == 0 or i == n_steps:
            if out[-1][0] != u.T:
                out.append((u.T, u))
    return out


def integrate_wme(u0: ModulationField, dt: float, n_steps: int, p: CnlsParams,
                  visc: ViscositySetting, **kwargs):
    if visc.order != 2:
        raise ValueError("Whitham integration uses the order-2 viscosity")
    return integrate_perturbed(u0, dt, n_steps, 0.0, p, visc, **kwargs)


# ---------------------------------------------------------------------------
# Strip monitor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StripMonitorReport:
    samples: tuple[tuple[float, float, float], ...]  # (T, sigma_T, norm)
    max_norm: float
    argmax_T: float
    bound: float
    holds: bool
    first_violation_T: float | None


def strip_monitor(trajectory, sched: StripSchedule, s: float, R: float,
                  mode_cutoff: int | None = None) -> StripMonitorReport:
    """Evaluate ||u(T)||_{G^s_{sigma(T)}} along a trajectory against R.

    Timestamps at or past the lifespan sigma0/eta raise ScheduleExhausted.
    An optional mode cutoff restricts the measured band; in double
    precision the exponential weight amplifies the round-off floor of the
    high modes beyond any signal, so measurements use the band that
    actually carries the solution.
    """
    samples = []
    max_norm = -1.0
    argmax = 0.0
    first_violation = None
    for T, u in trajectory:
        if T >= sched.lifespan:
            raise ScheduleExhausted(
                f"sample at T={T} reaches lifespan {sched.lifespan}")
        sigma_T = sched.sigma_at(T)
        if mode_cutoff is not None:
            u = u.truncated(mode_cutoff)
        n = u.norm((s, sigma_T))
        samples.append((float(T), float(sigma_T), float(n)))
        if n > max_norm:
            max_norm, argmax = n, float(T)
        if n > R and first_violation is None:
            first_violation = float(T)
    return StripMonitorReport(tuple(samples), float(max_norm), argmax, float(R),
                              first_violation is None, first_violation)


def calibrate_eta(p: CnlsParams, R: float, s: float = 2.0,
                  c_hat: float | None = None) -> float:
    """Strip shrink rate eta = 2 (||M(0)||_2 + C_hat R e^{2R}).

    C_hat is the measured product-inequality constant at index s; the
    surrogate stands in for the composition bound that the contraction
    argument needs, and errs on the generous side by doubling.
    """
    if c_hat is None:
        c_hat = cached_algebra_constant(float(s))
    m0 = np.linalg.norm(m_matrix((0.0, 0.0, 0.0, 0.0), p), 2)
    return float(2.0 * (m0 + c_hat * R * np.exp(2.0 * R)))


# ---------------------------------------------------------------------------
# Modulation-field CSV and trajectory dumps
# ---------------------------------------------------------------------------

_MOD_COLUMNS = ["re_r1", "im_r1", "re_v1", "im_v1",
                "re_r2", "im_r2", "re_v2", "im_v2"]


def write_modulation_csv(u: ModulationField, path) -> None:
    modes = u.grid.modes().astype(int)
    order = np.argsort(modes)
    xi = u.grid.xi()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["m", "xi"] + _MOD_COLUMNS)
        for i in order:
            row = [modes[i], f"{xi[i]:.17g}"]
            for c in u.components:
                row += [f"{c.coeffs[i].real:.17g}", f"{c.coeffs[i].imag:.17g}"]
            w.writerow(row)


def read_modulation_csv(path, T: float = 0.0) -> ModulationField:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if rows[0] != ["m", "xi"] + _MOD_COLUMNS:
        raise ValueError(f"unexpected header {rows[0]}")
    body = rows[1:]
    n = len(body)
    ms = np.array([int(r[0]) for r in body])
    xis = np.array([float(r[1]) for r in body])
    nz = ms != 0
    L = float(2.0 * np.pi * ms[nz][0] / xis[nz][0])
    grid = Grid(L, n)
    comps = []
    for k in range(4):
        coeffs = np.zeros(n, dtype=np.complex128)
        for r in body:
            m = int(r[0])
            coeffs[m % n] = float(r[2 + 2 * k]) + 1j * float(r[3 + 2 * k])
        comps.append(SpectralField.from_coefficients(grid, coeffs))
    return ModulationField(*comps, T=T)


def write_trajectory(trajectory, dirpath, sched: StripSchedule, s: float,
                     mode_cutoff: int | None = None) -> str:
    """One CSV per sample plus an index file T,path,sigma_T,norm."""
    os.makedirs(dirpath, exist_ok=True)
    index_path = os.path.join(dirpath, "index.csv")
    with open(index_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["T", "path", "sigma_T", "norm"])
        for i, (T, u) in enumerate(trajectory):
            name = f"sample_{i:05d}.csv"
            write_modulation_csv(u, os.path.join(dirpath, name))
            sigma_T = sched.sigma_at(T)
            um = u.truncated(mode_cutoff) if mode_cutoff is not None else u
            w.writerow([f"{T:.17g}", name, f"{sigma_T:.17g}",
                        f"{um.norm((s, sigma_T)):.17g}"])
    return index_path

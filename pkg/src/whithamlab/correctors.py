"""Higher-order corrector hierarchy, assembled approximations and residuals.

Writing the perturbed vector field G(u) = M(u) u_X + nu F(D^3 u) and
expanding u = u0 + nu u1 + nu^2 u2 + ... in powers of nu gives

    order 0:  u0_T = M(u0) u0_X
    order n:  un_T = M(u0) un_X + (DM(u0) un) u0_X + F_n,   un(0) = 0,

with forcings

    F_1 = F(D^3 u0)
    F_2 = (DM(u0) u1) u1_X + 1/2 (D^2M(u0)[u1, u1]) u0_X + DF(D^3 u0)[D^3 u1].

Only the exponential entries of M are nonlinear, so DM and D^2M are a
handful of pointwise products.  The hierarchy is integrated jointly (u0
drives its correctors inside one block system) so Runge-Kutta stages see
u0 at the exact stage times; no interpolation error enters.  Depth is
capped at n = 2: that already exercises one order beyond everything the
validity experiments consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cnls import CnlsParams, ModulationField
from .spectral import Grid, SpectralField
from .whitham import (
    ViscositySetting,
    _f_term_stack,
    _stack,
    _to_coeffs,
    _unstack,
    _values,
    _viscosity_multiplier,
    _wme_rhs_stack,
    ifrk4_step,
)

__all__ = [
    "ExpansionBundle",
    "ResidualReport",
    "OrderFit",
    "OrderUnsupported",
    "TimeGridTooCoarse",
    "DegenerateSamples",
    "MAX_ORDER",
    "corrector_forcing",
    "solve_corrector",
    "build_bundle",
    "assemble",
    "residual",
    "fit_order",
    "write_residual_csv",
]

MAX_ORDER = 2


class OrderUnsupported(ValueError):
    """Corrector depth beyond the implemented hierarchy."""


class TimeGridTooCoarse(ValueError):
    """Time differentiation error is not below the residual signal."""


class DegenerateSamples(ValueError):
    """Order fitting received nonpositive or indistinct samples."""


# ---------------------------------------------------------------------------
# Pointwise derivative blocks of M
# ---------------------------------------------------------------------------

def _m_apply(v0, dw, p: CnlsParams) -> np.ndarray:
    """M(u0) acting on the derivative values dw (4, N)."""
    r1, v1, r2, v2 = v0
    e1 = np.exp(2.0 * r1)
    e2 = np.exp(2.0 * r2)
    a, g1, g2 = p.alpha, p.gamma1, p.gamma2
    dr1, dv1, dr2, dv2 = dw
    return np.stack([
        -2.0 * v1 * dr1 - dv1,
        2.0 * g1 * e1 * dr1 - 2.0 * v1 * dv1 + 2.0 * a * e2 * dr2,
        -2.0 * v2 * dr2 - dv2,
        2.0 * a * e1 * dr1 + 2.0 * g2 * e2 * dr2 - 2.0 * v2 * dv2,
    ])


def _dm_apply(v0, w, dz, p: CnlsParams) -> np.ndarray:
    """(DM(u0) w) acting on derivative values dz, all pointwise (4, N)."""
    r1, _, r2, _ = v0
    e1 = np.exp(2.0 * r1)
    e2 = np.exp(2.0 * r2)
    a, g1, g2 = p.alpha, p.gamma1, p.gamma2
    wr1, wv1, wr2, wv2 = w
    dr1, dv1, dr2, dv2 = dz
    return np.stack([
        -2.0 * wv1 * dr1,
        4.0 * g1 * e1 * wr1 * dr1 - 2.0 * wv1 * dv1 + 4.0 * a * e2 * wr2 * dr2,
        -2.0 * wv2 * dr2,
        4.0 * a * e1 * wr1 * dr1 + 4.0 * g2 * e2 * wr2 * dr2 - 2.0 * wv2 * dv2,
    ])


def _half_d2m_apply(v0, w, dz, p: CnlsParams) -> np.ndarray:
    """(1/2) (D^2M(u0)[w, w]) dz; only the exponential entries survive."""
    r1, _, r2, _ = v0
    e1 = np.exp(2.0 * r1)
    e2 = np.exp(2.0 * r2)
    a, g1, g2 = p.alpha, p.gamma1, p.gamma2
    wr1, _, wr2, _ = w
    dr1, _, dr2, _ = dz
    zero = np.zeros_like(dr1)
    return np.stack([
        zero,
        4.0 * g1 * e1 * wr1 ** 2 * dr1 + 4.0 * a * e2 * wr2 ** 2 * dr2,
        zero,
        4.0 * a * e1 * wr1 ** 2 * dr1 + 4.0 * g2 * e2 * wr2 ** 2 * dr2,
    ])


def _df_apply(C0: np.ndarray, Cw: np.ndarray, grid: Grid,
              xi: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Linearisation of F at u0 in direction w, in coefficient space.

    Component 2 (and 4): w_XXX + 2 (r0_X w_X)_X.
    """
    out = np.zeros_like(Cw)
    for row, src in ((1, 0), (3, 2)):
        wx0 = (np.fft.ifft(1j * xi * C0[src]) * grid.N).real
        wxw = (np.fft.ifft(1j * xi * Cw[src]) * grid.N).real
        cross = np.where(mask, np.fft.fft(2.0 * wx0 * wxw) / grid.N, 0.0)
        out[row] = np.where(mask, (1j * xi) ** 3 * Cw[src], 0.0) + 1j * xi * cross
    return out


def _forcing_stack(n: int, C0: np.ndarray, C1: np.ndarray | None, grid: Grid,
                   p: CnlsParams, xi: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if n == 1:
        return _f_term_stack(C0, grid, xi, mask)
    if n == 2:
        if C1 is None:
            raise ValueError("second-order forcing needs the first corrector")
        v0 = _values(C0)
        d0 = _values(1j * xi * C0)
        w1 = _values(C1)
        dw1 = _values(1j * xi * C1)
        quad = _dm_apply(v0, w1, dw1, p) + _half_d2m_apply(v0, w1, d0, p)
        return _to_coeffs(quad, mask) + _df_apply(C0, C1, grid, xi, mask)
    raise OrderUnsupported(f"forcing implemented for n in (1, 2), got {n}")


# ---------------------------------------------------------------------------
# Bundle type and public forcing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionBundle:
    """Trajectories u0 .. un on one shared time grid.

    ``trajectories[l]`` is the tuple of (T, ModulationField) samples of
    the l-th corrector; every corrector starts from zero data.  ``nu``
    records the perturbation size the bundle was assembled for (0 when
    the bundle is generic), ``dt`` the integrator step behind the samples.
    """

    order: int
    trajectories: tuple[tuple[tuple[float, ModulationField], ...], ...]
    nu: float
    p: CnlsParams
    visc: ViscositySetting
    dt: float

    def __post_init__(self):
        if self.order != len(self.trajectories) - 1:
            raise ValueError("order must match the number of trajectories")
        times0 = [T for T, _ in self.trajectories[0]]
        for traj in self.trajectories[1:]:
            if [T for T, _ in traj] != times0:
                raise ValueError("corrector trajectories must share the time grid")
        for traj in self.trajectories[1:]:
            _, first = traj[0]
            if any(np.any(c.coeffs != 0.0) for c in first.components):
                raise ValueError("correctors must start from zero data")

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(T for T, _ in self.trajectories[0])

    def sample_index(self, T: float) -> int:
        times = np.asarray(self.times)
        i = int(np.argmin(np.abs(times - T)))
        if abs(times[i] - T) > 1e-10 * max(1.0, abs(T)):
            raise ValueError(f"no sample at T = {T}")
        return i


def corrector_forcing(n: int, bundle: ExpansionBundle, T: float) -> ModulationField:
    """Forcing F_n at a stored sample time of the bundle."""
    if n not in (1, 2):
        raise OrderUnsupported(f"n must be 1 or 2, got {n}")
    if bundle.order < n - 1:
        raise ValueError(f"bundle holds only order {bundle.order}, need {n - 1}")
    i = bundle.sample_index(T)
    u0 = bundle.trajectories[0][i][1]
    grid = u0.grid
    C0 = _stack(u0)
    C1 = _stack(bundle.trajectories[1][i][1]) if n == 2 else None
    C = _forcing_stack(n, C0, C1, grid, bundle.p, grid.xi(), grid.dealias_mask())
    return _unstack(C, grid, T)


# ---------------------------------------------------------------------------
# Joint hierarchy integration
# ---------------------------------------------------------------------------

def _hierarchy_rhs(C: np.ndarray, grid: Grid, p: CnlsParams, depth: int,
                   xi: np.ndarray, mask: np.ndarray,
                   forcing_scale: float) -> np.ndarray:
    out = np.empty_like(C)
    C0 = C[0:4]
    out[0:4] = _wme_rhs_stack(C0, grid, p, xi, mask)
    if depth >= 1:
        v0 = _values(C0)
        d0 = _values(1j * xi * C0)
        for n in range(1, depth + 1):
            Cn = C[4 * n: 4 * n + 4]
            wn = _values(Cn)
            dwn = _values(1j * xi * Cn)
            linear = _m_apply(v0, dwn, p) + _dm_apply(v0, wn, d0, p)
            forcing = _forcing_stack(n, C0, C[4:8] if n == 2 else None,
                                     grid, p, xi, mask)
            out[4 * n: 4 * n + 4] = _to_coeffs(linear, mask) + forcing_scale * forcing
    return out


def _integrate_hierarchy(u0: ModulationField, p: CnlsParams, visc: ViscositySetting,
                         dt: float, n_steps: int, depth: int,
                         sample_every: int = 1, forcing_scale: float = 1.0):
    """Joint march of (u0, u1, .., u_depth); correctors start from zero."""
    if depth > MAX_ORDER:
        raise OrderUnsupported(f"hierarchy capped at depth {MAX_ORDER}")
    grid = u0.grid
    xi = grid.xi()
    mask = grid.dealias_mask()
    C = np.zeros((4 * (depth + 1), grid.N), dtype=np.complex128)
    C[0:4] = _stack(u0)
    lin = np.broadcast_to(_viscosity_multiplier(grid, visc), (4 * (depth + 1), grid.N))

    def rhs(state):
        return _hierarchy_rhs(state, grid, p, depth, xi, mask, forcing_scale)

    trajs = [[(u0.T, _unstack(C[4 * n: 4 * n + 4], grid, u0.T))]
             for n in range(depth + 1)]
    T = u0.T
    for i in range(1, n_steps + 1):
        C = ifrk4_step(C, dt, rhs, lin)
        T = u0.T + i * dt
        if i % sample_every == 0 or i == n_steps:
            if trajs[0][-1][0] != T:
                for n in range(depth + 1):
                    trajs[n].append((T, _unstack(C[4 * n: 4 * n + 4], grid, T)))
    return [tuple(t) for t in trajs]


def _extrapolate_trajs(trajs_a, trajs_b):
    """Richardson in the viscosity: 2 * (run at beta/2) - (run at beta)."""
    out = []
    for ta, tb in zip(trajs_a, trajs_b):
        traj = []
        for (T, ua), (_, ub) in zip(ta, tb):
            comps = [SpectralField(ua.grid, 2.0 * ub.components[i].coeffs
                                   - ua.components[i].coeffs, True)
                     for i in range(4)]
            traj.append((T, ModulationField(*comps, T=T)))
        out.append(tuple(traj))
    return out


def build_bundle(u0: ModulationField, p: CnlsParams, visc: ViscositySetting,
                 dt: float, n_steps: int, order: int, sample_every: int = 1,
                 nu: float = 0.0, richardson: bool = True) -> ExpansionBundle:
    """Integrate the hierarchy to the requested order.

    With ``richardson`` the whole hierarchy is run at beta and beta/2 and
    extrapolated, removing the O(beta) viscosity bias from every level;
    the correctors are linear in the trajectory data so extrapolation
    commutes with the hierarchy structure.
    """
    trajs = _integrate_hierarchy(u0, p, visc, dt, n_steps, order, sample_every)
    if richardson and visc.beta > 0:
        half = ViscositySetting(0.5 * visc.beta, visc.order)
        trajs_half = _integrate_hierarchy(u0, p, half, dt, n_steps, order, sample_every)
        trajs = _extrapolate_trajs(trajs, trajs_half)
    return ExpansionBundle(order=order, trajectories=tuple(trajs), nu=nu,
                           p=p, visc=visc, dt=dt)


def solve_corrector(n: int, bundle: ExpansionBundle, p: CnlsParams,
                    visc: ViscositySetting, forcing_scale: float = 1.0):
    """Solve the n-th linear corrector equation on the bundle's time grid.

    Re-integrates the hierarchy jointly from the stored u0 initial data so
    the stages see u0 exactly; the sample times match the bundle's.
    ``forcing_scale`` multiplies F_n (test hook for linearity checks).
    """
    if n < 1:
        raise ValueError("correctors start at n = 1")
    if n > MAX_ORDER:
        raise OrderUnsupported(f"hierarchy capped at depth {MAX_ORDER}")
    times = bundle.times
    u0 = bundle.trajectories[0][0][1]
    n_steps = int(round((times[-1] - times[0]) / bundle.dt))
    sample_every = max(1, n_steps // max(1, len(times) - 1))
    trajs = _integrate_hierarchy(u0, p, visc, bundle.dt, n_steps, n,
                                 sample_every, forcing_scale)
    return trajs[n]


# ---------------------------------------------------------------------------
# Assembly and residuals
# ---------------------------------------------------------------------------

def assemble(bundle: ExpansionBundle, nu: float):
    """Truncated expansion u0 + nu u1 + ... + nu^order u_order, per sample."""
    out = []
    for i, T in enumerate(bundle.times):
        acc = _stack(bundle.trajectories[0][i][1]).copy()
        for n in range(1, bundle.order + 1):
            acc += nu ** n * _stack(bundle.trajectories[n][i][1])
        grid = bundle.trajectories[0][i][1].grid
        out.append((T, _unstack(acc, grid, T)))
    return out


_D1_CENTERED = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D1_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_D1_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def _time_derivative(frames: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order first derivative along axis 0 (5-point stencils)."""
    n = frames.shape[0]
    if n < 5:
        raise TimeGridTooCoarse("need at least 5 samples for the time stencil")
    out = np.empty_like(frames)
    out[0] = np.tensordot(_D1_EDGE0, frames[0:5], axes=(0, 0)) / dt
    out[1] = np.tensordot(_D1_EDGE1, frames[0:5], axes=(0, 0)) / dt
    for i in range(2, n - 2):
        out[i] = np.tensordot(_D1_CENTERED, frames[i - 2:i + 3], axes=(0, 0)) / dt
    out[n - 2] = -np.tensordot(_D1_EDGE1, frames[n - 5:n][::-1], axes=(0, 0)) / dt
    out[n - 1] = -np.tensordot(_D1_EDGE0, frames[n - 5:n][::-1], axes=(0, 0)) / dt
    return out


def _residual_stacks(traj, nu: float, p: CnlsParams):
    times = np.array([T for T, _ in traj])
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=1e-14):
        raise ValueError("residuals need a uniform sample grid")
    grid = traj[0][1].grid
    xi = grid.xi()
    mask = grid.dealias_mask()
    frames = np.stack([_stack(u) for _, u in traj])
    dudt = _time_derivative(frames, float(dts[0]))
    res = np.empty_like(frames)
    for i in range(len(traj)):
        res[i] = (dudt[i] - _wme_rhs_stack(frames[i], grid, p, xi, mask)
                  - nu * _f_term_stack(frames[i], grid, xi, mask))
    return times, res, grid


def residual(traj, nu: float, p: CnlsParams, check_sampling: bool = True,
             coarse_rel_tol: float = 0.25):
    """Defect of a trajectory in the nu-perturbed equation, per sample.

    Res(T) = u_T - M(u) u_X - nu F(D^3 u) with the time derivative taken
    by fourth-order finite differences on the stored samples.  When
    ``check_sampling`` is set, the residual is recomputed from every
    second sample; if the sup of the plain l2 norms moves by more than
    ``coarse_rel_tol`` the sampling is too coarse to trust and
    TimeGridTooCoarse is raised.
    """
    times, res, grid = _residual_stacks(traj, nu, p)
    if check_sampling:
        if len(traj) < 9:
            raise TimeGridTooCoarse("sampling check needs at least 9 samples")
        _, res_coarse, _ = _residual_stacks(traj[::2], nu, p)
        fine_norms = np.sqrt(np.sum(np.abs(res[::2]) ** 2, axis=(1, 2)))
        coarse_norms = np.sqrt(np.sum(np.abs(res_coarse) ** 2, axis=(1, 2)))
        # endpoints use one-sided stencils at both rates; compare interior
        sl = slice(1, -1)
        sup_f = float(np.max(fine_norms[sl]))
        sup_c = float(np.max(coarse_norms[sl]))
        if sup_f > 0 and abs(sup_c - sup_f) > coarse_rel_tol * sup_f:
            raise TimeGridTooCoarse(
                f"halving the sampling moves the residual sup-norm by "
                f"{abs(sup_c - sup_f) / sup_f:.1%} (> {coarse_rel_tol:.0%})")
    return [(float(times[i]), _unstack(res[i], grid, float(times[i])))
            for i in range(len(times))]


# ---------------------------------------------------------------------------
# Order fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    r_squared: float
    n_samples: int


def fit_order(nus, norms) -> OrderFit:
    """Log-log least-squares slope of norms against nus, with R^2."""
    nus = np.asarray(nus, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if len(nus) < 3 or len(set(nus.tolist())) < 3:
        raise DegenerateSamples("need at least 3 distinct samples")
    if np.any(norms <= 0.0) or np.any(nus <= 0.0):
        raise DegenerateSamples("samples must be strictly positive")
    x = np.log(nus)
    y = np.log(norms)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return OrderFit(float(slope), float(intercept), float(r2), len(nus))


@dataclass(frozen=True)
class ResidualReport:
    """Residual norms over a nu grid with the fitted decay order."""

    order: int
    nus: tuple[float, ...]
    sup_norms: tuple[float, ...]
    per_time: tuple[tuple[tuple[float, float], ...], ...]  # per nu: (T, norm)
    fit: OrderFit

    def __post_init__(self):
        if len(self.nus) < 3:
            raise ValueError("need at least 3 nu samples")
        span = max(self.nus) / min(self.nus)
        if span < 8.0:
            raise ValueError(f"nu grid spans factor {span:.3g}; need >= 8")


def write_residual_csv(report: ResidualReport, path) -> None:
    """Rows nu,n,T,res_norm plus a .summary sidecar with the fit."""
    with open(path, "w") as f:
        f.write("nu,n,T,res_norm\n")
        for nu, rows in zip(report.nus, report.per_time):
            for T, norm in rows:
                f.write(f"{nu:.17g},{report.order},{T:.17g},{norm:.17g}\n")
    with open(str(path) + ".summary", "w") as f:
        f.write(f"n = {report.order}\n")
        f.write(f"fitted_order = {report.fit.slope:.17g}\n")
        f.write(f"r_squared = {report.fit.r_squared:.17g}\n")
        f.write(f"nus = {','.join(f'{v:.17g}' for v in report.nus)}\n")
        f.write(f"sup_norms = {','.join(f'{v:.17g}' for v in report.sup_norms)}\n")

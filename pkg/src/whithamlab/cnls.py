"""Coupled nonlinear Schroedinger system and its polar-coordinate form.

The model is the pair

    i d/dt Psi_1 + d^2/dx^2 Psi_1 + (gamma1 |Psi_1|^2 + alpha |Psi_2|^2) Psi_1 = 0
    i d/dt Psi_2 + d^2/dx^2 Psi_2 + (alpha |Psi_1|^2 + gamma2 |Psi_2|^2) Psi_2 = 0

with gamma_j in {-1, +1}, alpha != 0 and beta = gamma1*gamma2 - alpha^2 != 0.

Time stepping is Strang-split: the dispersive half-steps are exact Fourier
multipliers exp(-i xi^2 dt/2) and the nonlinear step is an exact pointwise
phase rotation (the moduli are invariant under it), so plane-wave orbits
are integrated exactly and the only error on generic data is the O(dt^2)
splitting commutator.  Neither substep has a hard stability bound; accuracy
requires the nonlinear phase increment per step to stay well below 2 pi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import Grid, GridMismatch, SpectralField, derivative, gevrey_norm

__all__ = [
    "CnlsParams",
    "CnlsState",
    "PlaneWave",
    "ModulationField",
    "NonexistentWavetrain",
    "IncommensurateWavenumber",
    "VacuumCrossing",
    "plane_wave",
    "background_wave",
    "evaluate_plane_wave",
    "step_cnls",
    "integrate_cnls",
    "invariants",
    "to_polar",
    "rescale_to_slow",
    "write_state_csv",
    "read_state_csv",
]


class NonexistentWavetrain(ValueError):
    """Requested (k, omega) admits no positive squared amplitudes."""


class IncommensurateWavenumber(ValueError):
    """Wavenumber does not fit the periodic grid."""


class VacuumCrossing(ValueError):
    """|Psi| fell below the amplitude floor; the polar chart is invalid."""


AMPLITUDE_FLOOR = 1e-6


@dataclass(frozen=True)
class CnlsParams:
    """Model coefficients (gamma1, gamma2, alpha) with beta = g1*g2 - alpha^2."""

    gamma1: int
    gamma2: int
    alpha: float

    def __post_init__(self):
        if self.gamma1 not in (-1, 1) or self.gamma2 not in (-1, 1):
            raise ValueError("gamma coefficients must be -1 or +1")
        if self.alpha == 0.0:
            raise ValueError("alpha must be nonzero")
        if abs(self.beta) < 1e-10:
            raise ValueError(f"degenerate coupling: beta = {self.beta:g}")

    @property
    def beta(self) -> float:
        return self.gamma1 * self.gamma2 - self.alpha ** 2

    def swapped(self) -> "CnlsParams":
        return CnlsParams(self.gamma2, self.gamma1, self.alpha)


@dataclass(frozen=True)
class CnlsState:
    """Pair of complex fields on a shared grid at physical time t."""

    psi1: SpectralField
    psi2: SpectralField
    t: float

    def __post_init__(self):
        if self.psi1.grid != self.psi2.grid:
            raise GridMismatch("components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.psi1.grid


@dataclass(frozen=True)
class PlaneWave:
    """Two-phase wavetrain Psi_j = psi_j exp(i(k_j x + omega_j t + theta_j))."""

    k: tuple[float, float]
    omega: tuple[float, float]
    theta0: tuple[float, float]
    psi: tuple[float, float]

    def __post_init__(self):
        if not (self.psi[0] > 0 and self.psi[1] > 0):
            raise ValueError("amplitudes must be positive")


@dataclass(frozen=True)
class ModulationField:
    """State u = (r1, v1, r2, v2) of the modulation system at time T.

    r_j is the log-modulus and v_j the local wavenumber (phase derivative)
    of the j-th component; all four are real fields on a shared grid.
    """

    r1: SpectralField
    v1: SpectralField
    r2: SpectralField
    v2: SpectralField
    T: float

    def __post_init__(self):
        comps = self.components
        g = comps[0].grid
        for c in comps:
            if c.grid != g:
                raise GridMismatch("modulation components on different grids")
            if not c.is_real:
                raise ValueError("modulation components must be real fields")

    @property
    def components(self) -> tuple[SpectralField, SpectralField, SpectralField, SpectralField]:
        return (self.r1, self.v1, self.r2, self.v2)

    @property
    def grid(self) -> Grid:
        return self.r1.grid

    def norm(self, idx) -> float:
        """Vector-valued Gevrey norm: root sum of squared component norms."""
        return float(np.sqrt(sum(gevrey_norm(c, idx) ** 2 for c in self.components)))

    def truncated(self, max_mode: int) -> "ModulationField":
        return ModulationField(*(c.truncated(max_mode) for c in self.components), self.T)

    @staticmethod
    def from_components(comps, T: float) -> "ModulationField":
        r1, v1, r2, v2 = comps
        return ModulationField(r1, v1, r2, v2, T)

    @staticmethod
    def zero(grid: Grid, T: float = 0.0) -> "ModulationField":
        z = SpectralField.zero(grid)
        return ModulationField(z, z, z, z, T)


# ---------------------------------------------------------------------------
# Plane-wave family
# ---------------------------------------------------------------------------

def plane_wave(p: CnlsParams, k, omega, theta0=(0.0, 0.0)) -> PlaneWave:
    """Construct the wavetrain with the amplitudes the model dictates.

    psi1^2 = (gamma2 (omega1 + k1^2) - alpha (omega2 + k2^2)) / beta
    psi2^2 = (gamma1 (omega2 + k2^2) - alpha (omega1 + k1^2)) / beta
    """
    k1, k2 = float(k[0]), float(k[1])
    w1, w2 = float(omega[0]), float(omega[1])
    a1 = w1 + k1 ** 2
    a2 = w2 + k2 ** 2
    sq1 = (p.gamma2 * a1 - p.alpha * a2) / p.beta
    sq2 = (p.gamma1 * a2 - p.alpha * a1) / p.beta
    if sq1 <= 0 or sq2 <= 0:
        raise NonexistentWavetrain(
            f"squared amplitudes ({sq1:g}, {sq2:g}) not both positive")
    return PlaneWave(k=(k1, k2), omega=(w1, w2),
                     theta0=(float(theta0[0]), float(theta0[1])),
                     psi=(float(np.sqrt(sq1)), float(np.sqrt(sq2))))


def background_wave(p: CnlsParams) -> PlaneWave:
    """The k = 0 wavetrain with omega_j = gamma_j + alpha and psi = (1, 1)."""
    return plane_wave(p, (0.0, 0.0), (p.gamma1 + p.alpha, p.gamma2 + p.alpha))


def _mode_of(k: float, grid: Grid) -> int:
    m = k * grid.L / (2.0 * np.pi)
    m_int = round(m)
    if abs(m - m_int) > 1e-9 or abs(m_int) > grid.N // 2:
        raise IncommensurateWavenumber(
            f"k = {k:g} is not a grid wavenumber for L = {grid.L:g}, N = {grid.N}")
    return int(m_int)


def evaluate_plane_wave(w: PlaneWave, grid: Grid, t: float) -> CnlsState:
    """Sample the wavetrain exactly (single coefficient per component)."""
    fields = []
    for j in range(2):
        m = _mode_of(w.k[j], grid)
        coeffs = np.zeros(grid.N, dtype=np.complex128)
        coeffs[m % grid.N] = w.psi[j] * np.exp(1j * (w.omega[j] * t + w.theta0[j]))
        fields.append(SpectralField(grid, coeffs, False))
    return CnlsState(fields[0], fields[1], float(t))


# ---------------------------------------------------------------------------
# Split-step integrator
# ---------------------------------------------------------------------------

def _linear_half(coeffs: np.ndarray, xi2: np.ndarray, dt: float) -> np.ndarray:
    return np.exp(-1j * xi2 * (0.5 * dt)) * coeffs


def step_cnls(state: CnlsState, dt: float, p: CnlsParams) -> CnlsState:
    """One Strang step: exact dispersion halves around an exact rotation."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    xi2 = grid.xi() ** 2
    c1 = _linear_half(state.psi1.coeffs, xi2, dt)
    c2 = _linear_half(state.psi2.coeffs, xi2, dt)
    v1 = np.fft.ifft(c1) * grid.N
    v2 = np.fft.ifft(c2) * grid.N
    m1 = np.abs(v1) ** 2
    m2 = np.abs(v2) ** 2
    v1 = v1 * np.exp(1j * dt * (p.gamma1 * m1 + p.alpha * m2))
    v2 = v2 * np.exp(1j * dt * (p.alpha * m1 + p.gamma2 * m2))
    c1 = _linear_half(np.fft.fft(v1) / grid.N, xi2, dt)
    c2 = _linear_half(np.fft.fft(v2) / grid.N, xi2, dt)
    return CnlsState(SpectralField(grid, c1, False), SpectralField(grid, c2, False),
                     state.t + dt)


def integrate_cnls(state: CnlsState, dt: float, n_steps: int, p: CnlsParams,
                   sample_every: int | None = None):
    """March n_steps; yields (step_index, state) at the sampling stride.

    The initial state is emitted first.  ``sample_every=None`` keeps only
    the final state.
    """
    samples = [(0, state)]
    s = state
    for i in range(1, n_steps + 1):
        s = step_cnls(s, dt, p)
        if sample_every is not None and i % sample_every == 0:
            samples.append((i, s))
    if sample_every is None or n_steps % sample_every != 0:
        samples.append((n_steps, s))
    return samples


# ---------------------------------------------------------------------------
# Conserved quantities
# ---------------------------------------------------------------------------

def invariants(state: CnlsState, p: CnlsParams) -> tuple[float, float, float, float]:
    """(mass1, mass2, momentum, hamiltonian) under the coefficient convention.

    mass_j = sum |psihat_j|^2, momentum = sum xi (|psihat_1|^2 + |psihat_2|^2),
    and the energy pairs the dispersive coefficient sum with the grid-mean
    quadrature of the quartic interaction density:

        H = sum xi^2 (|psihat_1|^2 + |psihat_2|^2)
            - mean( g1/2 |Psi_1|^4 + alpha |Psi_1|^2 |Psi_2|^2 + g2/2 |Psi_2|^4 ).
    """
    xi = state.grid.xi()
    a1 = np.abs(state.psi1.coeffs) ** 2
    a2 = np.abs(state.psi2.coeffs) ** 2
    mass1 = float(np.sum(a1))
    mass2 = float(np.sum(a2))
    momentum = float(np.sum(xi * (a1 + a2)))
    kinetic = float(np.sum(xi ** 2 * (a1 + a2)))
    m1 = np.abs(state.psi1.values()) ** 2
    m2 = np.abs(state.psi2.values()) ** 2
    quartic = float(np.mean(0.5 * p.gamma1 * m1 ** 2 + p.alpha * m1 * m2
                            + 0.5 * p.gamma2 * m2 ** 2))
    return mass1, mass2, momentum, kinetic - quartic


# ---------------------------------------------------------------------------
# Polar transform and slow-variable relabeling
# ---------------------------------------------------------------------------

def to_polar(state: CnlsState, p: CnlsParams,
             floor: float = AMPLITUDE_FLOOR) -> ModulationField:
    """Exact transform to (r1, v1, r2, v2).

    r_j = log|Psi_j| pointwise, v_j = Im(conj(Psi_j) dPsi_j/dx) / |Psi_j|^2.
    The x-independent carrier exp(i(gamma_j + alpha)t) cancels from both
    formulas, so no phase unwrapping is needed.
    """
    comps = []
    for f in (state.psi1, state.psi2):
        vals = f.values()
        mod2 = np.abs(vals) ** 2
        if np.min(mod2) < floor ** 2:
            raise VacuumCrossing(
                f"min |Psi| = {np.sqrt(np.min(mod2)):.3g} below floor {floor:g}")
        r = SpectralField.from_values(state.grid, 0.5 * np.log(mod2))
        dpsi = derivative(f, 1).values()
        v = SpectralField.from_values(state.grid,
                                      np.imag(np.conj(vals) * dpsi) / mod2)
        comps.extend([r, v])
    return ModulationField(comps[0], comps[1], comps[2], comps[3], state.t)


def rescale_to_slow(u: ModulationField, eps: float) -> ModulationField:
    """Relabel (x, t) -> (X, T) = (eps x, eps t); coefficients are untouched.

    Mode indices are preserved; the wavenumber of mode m scales by 1/eps
    because the period shrinks to eps L.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = Grid(u.grid.L * eps, u.grid.N)
    comps = [SpectralField(g, c.coeffs.copy(), c.is_real) for c in u.components]
    return ModulationField(*comps, T=u.T * eps)


# ---------------------------------------------------------------------------
# State dump
# ---------------------------------------------------------------------------

def write_state_csv(state: CnlsState, p: CnlsParams, path) -> None:
    """Collocation values as x,re1,im1,re2,im2 plus a key=value sidecar."""
    x = state.grid.x()
    v1 = state.psi1.values()
    v2 = state.psi2.values()
    with open(path, "w") as f:
        f.write("x,re1,im1,re2,im2\n")
        for i in range(state.grid.N):
            f.write(f"{x[i]:.17g},{v1[i].real:.17g},{v1[i].imag:.17g},"
                    f"{v2[i].real:.17g},{v2[i].imag:.17g}\n")
    with open(str(path) + ".meta", "w") as f:
        for key, val in [("L", state.grid.L), ("N", state.grid.N), ("t", state.t),
                         ("gamma1", p.gamma1), ("gamma2", p.gamma2), ("alpha", p.alpha)]:
            f.write(f"{key} = {val!r}\n")


def read_state_csv(path) -> tuple[CnlsState, CnlsParams]:
    meta = {}
    with open(str(path) + ".meta") as f:
        for line in f:
            key, _, val = line.partition("=")
            meta[key.strip()] = eval(val.strip())  # noqa: S307 - trusted sidecar
    grid = Grid(float(meta["L"]), int(meta["N"]))
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    psi1 = SpectralField.from_values(grid, data[:, 1] + 1j * data[:, 2])
    psi2 = SpectralField.from_values(grid, data[:, 3] + 1j * data[:, 4])
    p = CnlsParams(int(meta["gamma1"]), int(meta["gamma2"]), float(meta["alpha"]))
    return CnlsState(psi1, psi2, float(meta["t"])), p

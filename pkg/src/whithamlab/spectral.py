"""Periodic pseudospectral fields and the Gevrey-norm toolkit.

Conventions, fixed once for the whole package:

* A field on ``Grid(L, N)`` is stored through the coefficients of

      u(x) = sum_m  uhat_m exp(i xi_m x),    xi_m = 2 pi m / L,

  with the mode index m running over -N/2+1 .. N/2 in FFT layout (the
  Nyquist slot is read as +N/2).  Coefficients are amplitudes, not
  densities: no L factor enters anywhere, so norms computed here are
  directly comparable between runs.

* The Gevrey norm of index (s, sigma) is the pure coefficient sum

      ||u||^2 = sum_m exp(2 sigma (|xi_m| + 1)) w_s(xi_m) |uhat_m|^2,

  with Sobolev factor w_s(xi) = 1 + |xi|^(2s) for s > 0 and w_0 = 1,
  so (s=0, sigma=0) is the plain l2 norm of the coefficient array.

* Quadrature means the grid mean: a constant-1 field integrates to 1.
  By the discrete Parseval identity the grid mean of |u|^2 equals the
  l2 coefficient sum.

* Nonlinear terms are evaluated by collocation and truncated with the
  2/3 rule: modes with |m| > (N-1)//3 are zeroed.  Quadratic products
  of retained modes are then exactly alias-free.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

__all__ = [
    "Grid",
    "SpectralField",
    "GevreyIndex",
    "StripSchedule",
    "GridMismatch",
    "StripTooWide",
    "FewerThanThreeModes",
    "ScheduleExhausted",
    "gevrey_norm",
    "product",
    "apply_entire",
    "derivative",
    "estimate_strip",
    "shift_constant",
    "random_band_limited",
    "measure_algebra_constant",
    "write_field_csv",
    "read_field_csv",
]

# exp(600) is ~3.8e260; squaring stays finite only through the rescaled
# accumulation in gevrey_norm, anything beyond is refused loudly.
EXPONENT_CAP = 600.0


class GridMismatch(ValueError):
    """Operands live on different grids."""


class StripTooWide(ValueError):
    """sigma*(|xi_max|+1) exceeds the floating-point exponent budget."""


class FewerThanThreeModes(ValueError):
    """Strip estimation needs at least three usable modes."""


class ScheduleExhausted(ValueError):
    """Strip schedule queried past its lifespan sigma0/eta."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid: period L, N collocation points (N even)."""

    L: float
    N: int

    def __post_init__(self):
        if not (self.L > 0):
            raise ValueError(f"period must be positive, got {self.L}")
        if self.N < 8 or self.N % 2 != 0:
            raise ValueError(f"N must be even and >= 8, got {self.N}")

    def x(self) -> np.ndarray:
        return np.arange(self.N) * (self.L / self.N)

    def modes(self) -> np.ndarray:
        """Mode numbers in FFT layout, Nyquist taken as +N/2."""
        m = np.fft.fftfreq(self.N, 1.0 / self.N)
        m[self.N // 2] = self.N // 2
        return m

    def xi(self) -> np.ndarray:
        return (2.0 * np.pi / self.L) * self.modes()

    @property
    def xi_max(self) -> float:
        return (2.0 * np.pi / self.L) * (self.N // 2)

    @property
    def dealias_cutoff(self) -> int:
        """Largest retained |m| under the 2/3 rule (3*cutoff < N strictly)."""
        return (self.N - 1) // 3

    def dealias_mask(self) -> np.ndarray:
        return np.abs(self.modes()) <= self.dealias_cutoff


def _coeffs_from_values(values: np.ndarray) -> np.ndarray:
    return np.fft.fft(values) / len(values)


def _values_from_coeffs(coeffs: np.ndarray) -> np.ndarray:
    return np.fft.ifft(coeffs) * len(coeffs)


def _is_hermitian(coeffs: np.ndarray, rtol: float = 1e-12) -> bool:
    n = len(coeffs)
    mirrored = np.conj(np.roll(coeffs[::-1], 1))
    scale = np.max(np.abs(coeffs))
    if scale == 0.0:
        return True
    # Nyquist has no partner in the -N/2+1..N/2 range; it must be real.
    ok_body = np.allclose(coeffs, mirrored, rtol=0.0, atol=rtol * scale)
    ok_nyq = abs(coeffs[n // 2].imag) <= rtol * scale
    return bool(ok_body and ok_nyq)


@dataclass(frozen=True)
class SpectralField:
    """One periodic scalar field, stored as Fourier coefficients.

    ``is_real`` records that the field is real-valued; the coefficient
    array then satisfies uhat_{-m} = conj(uhat_m).
    """

    grid: Grid
    coeffs: np.ndarray
    is_real: bool

    def __post_init__(self):
        if len(self.coeffs) != self.grid.N:
            raise ValueError("coefficient array length must equal N")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite coefficients")
        self.coeffs.setflags(write=False)

    # -- constructors -------------------------------------------------

    @staticmethod
    def from_values(grid: Grid, values: np.ndarray) -> "SpectralField":
        values = np.asarray(values)
        if len(values) != grid.N:
            raise ValueError("value array length must equal N")
        real = not np.iscomplexobj(values)
        coeffs = _coeffs_from_values(values.astype(np.complex128))
        return SpectralField(grid, coeffs, real)

    @staticmethod
    def from_coefficients(
        grid: Grid, coeffs: np.ndarray, is_real: bool | None = None
    ) -> "SpectralField":
        coeffs = np.asarray(coeffs, dtype=np.complex128).copy()
        if is_real is None:
            is_real = _is_hermitian(coeffs)
        elif is_real and not _is_hermitian(coeffs, rtol=1e-12):
            raise ValueError("realness flag set but coefficients are not Hermitian")
        return SpectralField(grid, coeffs, is_real)

    @staticmethod
    def zero(grid: Grid) -> "SpectralField":
        return SpectralField(grid, np.zeros(grid.N, dtype=np.complex128), True)

    @staticmethod
    def from_function(grid: Grid, fn) -> "SpectralField":
        return SpectralField.from_values(grid, fn(grid.x()))

    # -- basic access -------------------------------------------------

    def values(self) -> np.ndarray:
        vals = _values_from_coeffs(self.coeffs)
        return vals.real if self.is_real else vals

    def mean(self) -> complex | float:
        c0 = self.coeffs[0]
        return c0.real if self.is_real else c0

    def truncated(self, max_mode: int) -> "SpectralField":
        """Zero every coefficient with |m| > max_mode."""
        keep = np.abs(self.grid.modes()) <= max_mode
        return SpectralField(self.grid, np.where(keep, self.coeffs, 0.0), self.is_real)

    # -- arithmetic (pointwise linear, exact in coefficients) ---------

    def _check(self, other: "SpectralField"):
        if self.grid != other.grid:
            raise GridMismatch(f"{self.grid} vs {other.grid}")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs,
                             self.is_real and other.is_real)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs,
                             self.is_real and other.is_real)

    def __mul__(self, scalar: float) -> "SpectralField":
        s = float(scalar)
        return SpectralField(self.grid, self.coeffs * s, self.is_real)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.grid, -self.coeffs, self.is_real)


@dataclass(frozen=True)
class GevreyIndex:
    """Point (s, sigma) on the Gevrey scale: Sobolev exponent and strip width."""

    s: float
    sigma: float

    def __post_init__(self):
        if self.s < 0 or self.sigma < 0:
            raise ValueError("Gevrey index requires s >= 0 and sigma >= 0")


def _as_index(idx) -> GevreyIndex:
    if isinstance(idx, GevreyIndex):
        return idx
    s, sigma = idx
    return GevreyIndex(float(s), float(sigma))


@dataclass(frozen=True)
class StripSchedule:
    """Linearly shrinking analyticity strip sigma(T) = sigma0 - eta*T."""

    sigma0: float
    eta: float

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.eta > 0):
            raise ValueError("require sigma0 > 0 and eta > 0")

    @property
    def lifespan(self) -> float:
        return self.sigma0 / self.eta

    def sigma_at(self, T: float) -> float:
        if T < 0 or T > self.lifespan:
            raise ScheduleExhausted(
                f"T={T} outside [0, {self.lifespan}] for schedule {self}")
        return self.sigma0 - self.eta * T


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def _sobolev_factor(xi: np.ndarray, s: float) -> np.ndarray:
    # s = 0 reduces to the plain l2 coefficient norm by convention.
    if s == 0:
        return np.ones_like(xi)
    return 1.0 + np.abs(xi) ** (2.0 * s)


def gevrey_norm(u: SpectralField, idx) -> float:
    """Discrete Gevrey norm: weighted l2 sum of the coefficients.

    Raises StripTooWide when sigma*(|xi_max|+1) > 600, instead of
    silently returning an inf-contaminated value.
    """
    idx = _as_index(idx)
    xi = u.grid.xi()
    arg = idx.sigma * (np.abs(xi) + 1.0)
    if np.max(arg) > EXPONENT_CAP:
        raise StripTooWide(
            f"sigma*(xi_max+1) = {np.max(arg):.3g} exceeds cap {EXPONENT_CAP}")
    weighted = np.exp(arg) * np.sqrt(_sobolev_factor(xi, idx.s)) * np.abs(u.coeffs)
    peak = np.max(weighted)
    if peak == 0.0:
        return 0.0
    # rescale before squaring so exp(600)-sized weights cannot overflow
    return float(peak * math.sqrt(np.sum((weighted / peak) ** 2)))


# ---------------------------------------------------------------------------
# Pointwise nonlinearities
# ---------------------------------------------------------------------------

def _dealias(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    return np.where(grid.dealias_mask(), coeffs, 0.0)


def product(u: SpectralField, v: SpectralField) -> SpectralField:
    """Dealiased pointwise product via collocation (2/3 rule).

    Exact whenever the combined bandwidth of u and v fits inside the
    retained band |m| <= (N-1)//3.
    """
    u._check(v)
    both_real = u.is_real and v.is_real
    uv = u.values() * v.values()
    coeffs = _dealias(u.grid, _coeffs_from_values(np.asarray(uv, dtype=np.complex128)))
    return SpectralField(u.grid, coeffs, both_real)


ENTIRE_FUNCTIONS = {
    "exp2m1": lambda x: np.expm1(2.0 * x),  # e^{2x} - 1
    "sq": lambda x: x * x,
}


def apply_entire(u: SpectralField, fn: str) -> SpectralField:
    """Apply a named entire function with fn(0) = 0 by collocation.

    Evaluation happens at the grid points, the result is transformed back
    and dealiased.  Only real input fields are accepted.
    """
    if fn not in ENTIRE_FUNCTIONS:
        raise ValueError(f"unknown entire function {fn!r}; have {sorted(ENTIRE_FUNCTIONS)}")
    if not u.is_real:
        raise ValueError("apply_entire requires a real-valued field")
    vals = ENTIRE_FUNCTIONS[fn](u.values())
    coeffs = _dealias(u.grid, _coeffs_from_values(vals.astype(np.complex128)))
    return SpectralField(u.grid, coeffs, True)


def derivative(u: SpectralField, order: int) -> SpectralField:
    """Spectral derivative: uhat_m -> (i xi_m)^order uhat_m, order in 1..4.

    Implemented as repeated multiplication by (i xi) so that composing
    first derivatives reproduces higher orders bit for bit.
    """
    if order not in (1, 2, 3, 4):
        raise ValueError(f"order must be in 1..4, got {order}")
    mult = 1j * u.grid.xi()
    coeffs = u.coeffs
    for _ in range(order):
        coeffs = mult * coeffs
    # odd derivatives of a real field stay real only with a vanishing
    # Nyquist coefficient (the +N/2 slot has no conjugate partner)
    real = u.is_real and (order % 2 == 0 or u.coeffs[u.grid.N // 2] == 0.0)
    return SpectralField(u.grid, coeffs, real)


# ---------------------------------------------------------------------------
# Analyticity-strip estimate
# ---------------------------------------------------------------------------

def estimate_strip(u: SpectralField, floor: float) -> float:
    """Least-squares estimate of the coefficient decay rate.

    Fits log a_m against -xi_m over the positive modes whose folded
    amplitude a_m = max(|uhat_m|, |uhat_-m|) exceeds ``floor``; the slope
    is clamped to >= 0.  Needs at least three usable modes.
    """
    if floor <= np.finfo(float).eps:
        raise ValueError("floor must exceed machine epsilon")
    n = u.grid.N
    c = u.coeffs
    amps = np.abs(c[1:n // 2 + 1]).copy()
    amps[: n // 2 - 1] = np.maximum(amps[: n // 2 - 1], np.abs(c[-1: n // 2: -1]))
    xi_pos = (2.0 * np.pi / u.grid.L) * np.arange(1, n // 2 + 1)
    usable = amps > floor
    if np.count_nonzero(usable) < 3:
        raise FewerThanThreeModes(
            f"only {int(np.count_nonzero(usable))} modes above floor {floor:g}")
    slope = np.polyfit(-xi_pos[usable], np.log(amps[usable]), 1)[0]
    return float(max(slope, 0.0))


# ---------------------------------------------------------------------------
# Exponent-shift constant C(p, delta)
# ---------------------------------------------------------------------------

def shift_constant(p: float, delta: float) -> float:
    """C(p, delta) = max_xi exp(-delta(1+|xi|)) (1+|xi|^{2p})^{1/2}.

    The exact one-dimensional maximum; compares Gevrey norms of different
    indices through ||u||_{s+p, sigma-delta} <= C(p, delta) ||u||_{s, sigma}.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if p < 0:
        raise ValueError("p must be nonnegative")
    if p == 0:
        return math.exp(-delta)

    def neg_log_f(x: float) -> float:
        return delta * (1.0 + x) - 0.5 * math.log1p(x ** (2.0 * p))

    # coarse bracket, then local refinement; the maximiser is at most
    # O(p/delta) since d/dx log f -> -delta + p/x for large x
    hi = 10.0 * (1.0 + 2.0 * p / delta)
    xs = np.linspace(0.0, hi, 20001)
    vals = delta * (1.0 + xs) - 0.5 * np.log1p(xs ** (2.0 * p))
    i = int(np.argmin(vals))
    lo_b = xs[max(i - 1, 0)]
    hi_b = xs[min(i + 1, len(xs) - 1)]
    if lo_b == hi_b:
        best = vals[i]
    else:
        res = optimize.minimize_scalar(neg_log_f, bounds=(lo_b, hi_b), method="bounded",
                                       options={"xatol": 1e-12})
        best = min(res.fun, vals[i])
    return float(math.exp(-best))


# ---------------------------------------------------------------------------
# Random fields and the measured algebra constant
# ---------------------------------------------------------------------------

def random_band_limited(
    grid: Grid,
    rng: np.random.Generator,
    max_mode: int = 10,
    decay: float = 0.4,
    amplitude: float = 1.0,
    mean_free: bool = False,
) -> SpectralField:
    """Random real field with Gaussian coefficients damped like e^{-decay*m}."""
    coeffs = np.zeros(grid.N, dtype=np.complex128)
    for m in range(1, max_mode + 1):
        c = amplitude * math.exp(-decay * m) * (rng.standard_normal() + 1j * rng.standard_normal())
        coeffs[m] = c
        coeffs[-m] = np.conj(c)
    if not mean_free:
        coeffs[0] = amplitude * rng.standard_normal()
    return SpectralField(grid, coeffs, True)


@dataclass(frozen=True)
class AlgebraConstant:
    """Product-inequality constant measured on a random sample.

    ``value`` is the max ratio ||uv|| / (||u|| ||v||) at sigma = 0; the
    per-sigma maxima are kept so sigma-uniformity can be checked (ratios
    only decrease as sigma grows, so the sigma = 0 constant bounds all).
    """

    s: float
    value: float
    ratios_by_sigma: tuple[tuple[float, float], ...]


def measure_algebra_constant(
    s: float,
    sigmas: tuple[float, ...] = (0.0, 0.25, 0.5),
    n_pairs: int = 200,
    seed: int = 20260810,
    grid: Grid | None = None,
    max_mode: int = 10,
) -> AlgebraConstant:
    """Measure C_s in ||uv|| <= C_s ||u|| ||v|| over a fixed random sample.

    The sample mixes three ingredients: deterministic single-harmonic
    pairs and their power chains (cos Kx concentrates the product ratio;
    these are the extremal shapes of the family), random self-pairs and
    power-chain pairs (u^2, u), (u^3, u) as consumed by the composition
    bound, and independent random pairs.
    """
    grid = grid or Grid(2.0 * np.pi, 64)
    rng = np.random.default_rng(seed)

    def pair_stream(rng_s):
        for K in (1, 2, 3):
            base = SpectralField.from_function(grid, lambda x, K=K: np.cos(K * x))
            sq = product(base, base)
            yield base, base
            yield sq, base
            yield product(sq, base), base
        i = 0
        while True:
            u = random_band_limited(grid, rng_s, max_mode=max_mode)
            if i % 4 == 0:
                yield u, u
            elif i % 4 == 2:
                w = product(u, u) if i % 8 == 2 else product(product(u, u), u)
                yield w, u
            else:
                yield u, random_band_limited(grid, rng_s, max_mode=max_mode)
            i += 1

    per_sigma = []
    for sigma in sigmas:
        best = 0.0
        stream = pair_stream(np.random.default_rng(rng.integers(2**63)))
        for _ in range(n_pairs):
            u, v = next(stream)
            nu = gevrey_norm(u, (s, sigma))
            nv = gevrey_norm(v, (s, sigma))
            if nu == 0.0 or nv == 0.0:
                continue
            best = max(best, gevrey_norm(product(u, v), (s, sigma)) / (nu * nv))
        per_sigma.append((float(sigma), float(best)))
    value = per_sigma[0][1] if per_sigma[0][0] == 0.0 else max(r for _, r in per_sigma)
    return AlgebraConstant(s=float(s), value=float(value), ratios_by_sigma=tuple(per_sigma))


@lru_cache(maxsize=8)
def cached_algebra_constant(s: float) -> float:
    """Algebra constant at index s from the default sample (fixed seed)."""
    return measure_algebra_constant(s).value


# ---------------------------------------------------------------------------
# Field CSV round-trip
# ---------------------------------------------------------------------------

def write_field_csv(u: SpectralField, path) -> None:
    """Dump one field as rows m,xi,re,im sorted by mode number."""
    modes = u.grid.modes().astype(int)
    order = np.argsort(modes)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["m", "xi", "re", "im"])
        xi = u.grid.xi()
        for i in order:
            w.writerow([modes[i], f"{xi[i]:.17g}",
                        f"{u.coeffs[i].real:.17g}", f"{u.coeffs[i].imag:.17g}"])


def read_field_csv(path) -> SpectralField:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if rows[0] != ["m", "xi", "re", "im"]:
        raise ValueError(f"unexpected header {rows[0]}")
    body = rows[1:]
    n = len(body)
    ms = np.array([int(r[0]) for r in body])
    xis = np.array([float(r[1]) for r in body])
    nonzero = ms != 0
    if not np.any(nonzero):
        raise ValueError("cannot infer the period from a single-mode file")
    L = float(2.0 * np.pi * ms[nonzero][0] / xis[nonzero][0])
    coeffs = np.zeros(n, dtype=np.complex128)
    for r in body:
        m = int(r[0])
        coeffs[m % n] = float(r[2]) + 1j * float(r[3])
    return SpectralField.from_coefficients(Grid(L, n), coeffs)

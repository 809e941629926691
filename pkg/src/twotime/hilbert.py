"""Harmonic-oscillator eigenbasis, quadrature and free evolution of coefficient tensors.

Everything is in natural units with hbar = 1.  A single particle lives in the
truncated eigenbasis ``phi_0 .. phi_{n_max-1}`` of

    H = p^2 / (2 m) + m omega^2 x^2 / 2,      E_n = omega (n + 1/2).

Two-particle states are coefficient tensors ``c[n_A, n_B]`` over the product
basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss
from scipy.special import gammaln

PI_QUARTER = np.pi ** -0.25

# Gauss-Legendre panel rule used by the adaptive bin integrator.
_GL_ORDER = 24
_GL_NODES, _GL_WEIGHTS = leggauss(_GL_ORDER)


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


def hermite_functions(n: int, xi, derivative: bool = False):
    """Normalized Hermite functions h_0..h_{n-1} at dimensionless points ``xi``.

    Uses the three-term recurrence on the normalized functions so nothing
    overflows for large n.  Returns an array of shape ``(n,) + xi.shape``; with
    ``derivative=True`` also returns d h_k / d xi, which needs h_n as well.
    """
    xi = np.asarray(xi, dtype=float)
    m = n + 1 if derivative else n
    h = np.empty((max(m, 2),) + xi.shape)
    h[0] = PI_QUARTER * np.exp(-0.5 * xi * xi)
    h[1] = np.sqrt(2.0) * xi * h[0]
    for k in range(2, m):
        h[k] = np.sqrt(2.0 / k) * xi * h[k - 1] - np.sqrt((k - 1) / k) * h[k - 2]
    if not derivative:
        return h[:n]
    dh = np.empty((n,) + xi.shape)
    dh[0] = -xi * h[0]
    for k in range(1, n):
        dh[k] = np.sqrt(k / 2.0) * h[k - 1] - np.sqrt((k + 1) / 2.0) * h[k + 1]
    return h[:n], dh


def _hermite_polys(n: int, xi):
    """h_k(xi) * exp(xi^2 / 2): the polynomial parts, for Gauss-Hermite rules."""
    xi = np.asarray(xi, dtype=float)
    p = np.empty((max(n, 2),) + xi.shape)
    p[0] = PI_QUARTER
    p[1] = np.sqrt(2.0) * xi * PI_QUARTER
    for k in range(2, n):
        p[k] = np.sqrt(2.0 / k) * xi * p[k - 1] - np.sqrt((k - 1) / k) * p[k - 2]
    return p[:n]


@dataclass(frozen=True)
class OscillatorBasis:
    """Truncated eigenbasis of a 1D harmonic oscillator.

    ``quad_order`` is the Gauss-Hermite node count; it must be at least
    ``2 * n_max`` so every matrix element of x and x^2 is integrated exactly.
    """

    mass: float = 1.0
    frequency: float = 1.0
    n_max: int = 32
    quad_order: int | None = None
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise DomainError(f"mass must be positive, got {self.mass}")
        if not (self.frequency > 0 and np.isfinite(self.frequency)):
            raise DomainError(f"frequency must be positive, got {self.frequency}")
        if int(self.n_max) != self.n_max or self.n_max < 2:
            raise DomainError(f"n_max must be an integer >= 2, got {self.n_max}")
        order = 2 * self.n_max + 2 if self.quad_order is None else int(self.quad_order)
        if order < 2 * self.n_max:
            raise DomainError(f"quad_order {order} < 2*n_max = {2 * self.n_max}")
        object.__setattr__(self, "quad_order", order)
        xi, w = hermgauss(order)
        # physical nodes; weights include the exp(-xi^2) factor's Jacobian
        object.__setattr__(self, "nodes", xi / self.scale)
        object.__setattr__(self, "weights", w)

    @property
    def scale(self) -> float:
        """Inverse oscillator length sqrt(m omega)."""
        return float(np.sqrt(self.mass * self.frequency))

    @cached_property
    def energies(self) -> np.ndarray:
        return self.frequency * (np.arange(self.n_max) + 0.5)

    @property
    def delta_e(self) -> float:
        return float(self.energies[1] - self.energies[0])

    @property
    def period(self) -> float:
        """Oscillation period 2 pi / (E_1 - E_0) of the two-time correlator."""
        return 2.0 * np.pi / self.delta_e

    @property
    def support_radius(self) -> float:
        """Distance beyond which every phi_n (n < n_max) is below ~1e-20."""
        return (np.sqrt(2.0 * self.n_max + 1.0) + 10.0) / self.scale

    def functions(self, x, derivative: bool = False, n: int | None = None):
        """phi_k(x) for k < n (default n_max); optionally with d phi_k / dx."""
        n = self.n_max if n is None else n
        a = self.scale
        if derivative:
            h, dh = hermite_functions(n, a * np.asarray(x, dtype=float), derivative=True)
            return np.sqrt(a) * h, a * np.sqrt(a) * dh
        return np.sqrt(a) * hermite_functions(n, a * np.asarray(x, dtype=float))

    def _gh_integral(self, kernel) -> np.ndarray:
        """Matrix of integral phi_m(x) kernel(x) phi_n(x) dx by Gauss-Hermite."""
        xi = self.nodes * self.scale
        p = _hermite_polys(self.n_max, xi)
        return (p * (self.weights * kernel(self.nodes))) @ p.T

    @cached_property
    def overlap(self) -> np.ndarray:
        return self._gh_integral(np.ones_like)

    @cached_property
    def x_matrix(self) -> np.ndarray:
        return self._gh_integral(lambda x: x)

    @cached_property
    def x2_matrix(self) -> np.ndarray:
        return self._gh_integral(lambda x: x * x)

    def cumulative_matrix(self, b: float) -> np.ndarray:
        """C(b)_{mn} = integral_{-inf}^{b} phi_m phi_n dx."""
        if b == -np.inf:
            return np.zeros((self.n_max, self.n_max))
        lo = -self.support_radius
        hi = min(b, self.support_radius)
        if hi <= lo:
            return np.zeros((self.n_max, self.n_max))
        return _adaptive_gram(self, lo, hi)


def _panel(basis: OscillatorBasis, lo: float, hi: float) -> np.ndarray:
    half = 0.5 * (hi - lo)
    x = half * _GL_NODES + 0.5 * (hi + lo)
    phi = basis.functions(x)
    return (phi * (half * _GL_WEIGHTS)) @ phi.T


def _adaptive_gram(basis: OscillatorBasis, lo: float, hi: float, tol: float = 1e-15) -> np.ndarray:
    # initial panels no wider than a quarter oscillator length, then bisect
    width = 0.25 / basis.scale
    n0 = max(1, int(np.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, n0 + 1)
    stack = [(a, b, _panel(basis, a, b), 0) for a, b in zip(edges[:-1], edges[1:])]
    total = np.zeros((basis.n_max, basis.n_max))
    while stack:
        a, b, whole, depth = stack.pop()
        mid = 0.5 * (a + b)
        left, right = _panel(basis, a, mid), _panel(basis, mid, b)
        if np.max(np.abs(left + right - whole)) <= tol or depth >= 12:
            total += left + right
        else:
            stack.append((a, mid, left, depth + 1))
            stack.append((mid, b, right, depth + 1))
    return total


def eigenfunction_eval(basis: OscillatorBasis, n: int, x):
    """phi_n(x) for a single level n."""
    if not 0 <= n < basis.n_max:
        raise DomainError(f"level {n} outside 0..{basis.n_max - 1}")
    return basis.functions(x, n=n + 1)[n]


def matrix_element_x(basis: OscillatorBasis, m: int, n: int) -> float:
    """<m|x|n> by Gauss-Hermite quadrature."""
    for k in (m, n):
        if not 0 <= k < basis.n_max:
            raise DomainError(f"level {k} outside 0..{basis.n_max - 1}")
    return float(basis.x_matrix[m, n])


def bin_projection_matrix(basis: OscillatorBasis, interval) -> np.ndarray:
    """Galerkin matrix M_mn = integral over ``interval`` of phi_m phi_n.

    ``interval`` is ``(lo, hi)`` with ``lo < hi``; either end may be infinite.
    Returned as a complex matrix, symmetrized to kill rounding asymmetry.
    """
    lo, hi = (float(v) for v in interval)
    if not lo < hi:
        raise DomainError(f"empty interval ({lo}, {hi})")
    r = basis.support_radius
    lo_c, hi_c = max(lo, -r), min(hi, r)
    if hi_c <= lo_c:
        m = np.zeros((basis.n_max, basis.n_max))
    else:
        m = _adaptive_gram(basis, lo_c, hi_c)
    m = 0.5 * (m + m.T)
    return m.astype(complex)


@dataclass(frozen=True)
class WaveCoefficients:
    """Coefficient tensor c[n_A, n_B] of a two-particle state in the product basis.

    ``normalized=False`` marks branch states whose norm is a probability
    weight rather than one.
    """

    coeffs: np.ndarray
    norm_tolerance: float = 1e-8
    normalized: bool = True

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DomainError(f"coefficient tensor must be square 2D, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficient tensor has non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.normalized and abs(self.norm_squared - 1.0) > self.norm_tolerance:
            raise DomainError(f"state norm^2 {self.norm_squared:.3e} deviates from 1")

    @property
    def n_max(self) -> int:
        return self.coeffs.shape[0]

    @property
    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def check_basis(self, basis: OscillatorBasis) -> None:
        if self.n_max != basis.n_max:
            raise DomainError(f"state has n_max={self.n_max}, basis has {basis.n_max}")

    def support(self) -> tuple[int, int]:
        """Smallest (kA, kB) such that all nonzero coefficients have indices < (kA, kB)."""
        nz = np.nonzero(np.abs(self.coeffs) > 0)
        if nz[0].size == 0:
            return 1, 1
        return int(nz[0].max()) + 1, int(nz[1].max()) + 1

    def swapped(self) -> WaveCoefficients:
        """The state with particles A and B exchanged."""
        return WaveCoefficients(self.coeffs.T, self.norm_tolerance, self.normalized)


def evolve_free(state: WaveCoefficients, basis: OscillatorBasis, t: float) -> WaveCoefficients:
    """Free evolution c_mn -> exp(-i (E_m + E_n) t) c_mn."""
    state.check_basis(basis)
    if not np.isfinite(t):
        raise DomainError(f"time must be finite, got {t}")
    e = basis.energies
    phase = np.exp(-1j * (e[:, None] + e[None, :]) * t)
    return WaveCoefficients(state.coeffs * phase, state.norm_tolerance, state.normalized)


def entangled_state(basis: OscillatorBasis) -> WaveCoefficients:
    """(|0>|1> + |1>|0>) / sqrt(2), the stationary entangled scenario state."""
    c = np.zeros((basis.n_max, basis.n_max), dtype=complex)
    c[0, 1] = c[1, 0] = 1.0 / np.sqrt(2.0)
    return WaveCoefficients(c)


def product_state(basis: OscillatorBasis, n_a: int, n_b: int) -> WaveCoefficients:
    c = np.zeros((basis.n_max, basis.n_max), dtype=complex)
    c[n_a, n_b] = 1.0
    return WaveCoefficients(c)


def product_of(basis: OscillatorBasis, amps_a, amps_b) -> WaveCoefficients:
    """Normalized product state from single-particle amplitude vectors."""
    a = np.zeros(basis.n_max, dtype=complex)
    b = np.zeros(basis.n_max, dtype=complex)
    a[: len(amps_a)] = amps_a
    b[: len(amps_b)] = amps_b
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    return WaveCoefficients(np.outer(a, b))


def random_state(basis: OscillatorBasis, rng: np.random.Generator, levels: int = 4) -> WaveCoefficients:
    """Random normalized state supported on the lowest ``levels`` x ``levels`` block."""
    c = np.zeros((basis.n_max, basis.n_max), dtype=complex)
    block = rng.normal(size=(levels, levels)) + 1j * rng.normal(size=(levels, levels))
    c[:levels, :levels] = block / np.linalg.norm(block)
    return WaveCoefficients(c)


def coherent_amplitudes(basis: OscillatorBasis, alpha: complex) -> np.ndarray:
    """Coefficients exp(-|alpha|^2/2) alpha^n / sqrt(n!) of a coherent state (never has nodes)."""
    n = np.arange(basis.n_max)
    if alpha == 0:
        return (n == 0).astype(complex)
    log_mag = n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1.0) - 0.5 * abs(alpha) ** 2
    return np.exp(log_mag + 1j * n * np.angle(alpha))

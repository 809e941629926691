"""Gaussian pointer states of a von Neumann measuring device."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .hilbert import DomainError, OscillatorBasis, WaveCoefficients

SHORTNESS_TOL = 0.01


@dataclass(frozen=True)
class PointerModel:
    """Pointer with ready state eta(z) = (2 pi sigma^2)^(-1/4) exp(-(z - c)^2 / (4 sigma^2)).

    A window of length ``T_M`` shifts the pointer of outcome ``a`` by ``g a T_M``.
    """

    sigma: float = 0.05
    g: float = 40.0
    T_M: float = 0.01
    ready_center: float = 0.0

    def __post_init__(self):
        for name in ("sigma", "g", "T_M"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v}")
        if not np.isfinite(self.ready_center):
            raise DomainError("ready_center must be finite")

    @classmethod
    def for_gap(cls, gap: float, separation: float = 8.0, sigma: float = 0.05, T_M: float = 0.01) -> PointerModel:
        """Coupling chosen so neighbouring outcomes separate by ``separation`` widths."""
        return cls(sigma=sigma, g=separation * sigma / (gap * T_M), T_M=T_M)

    @property
    def shift_per_eigenvalue(self) -> float:
        return self.g * self.T_M

    def offset(self, a):
        return self.ready_center + self.shift_per_eigenvalue * np.asarray(a, dtype=float)

    def separation_ratio(self, gap: float) -> float:
        return self.shift_per_eigenvalue * gap / self.sigma

    def epsilon(self, gap: float) -> float:
        """Overlap bound exp(-s^2 / 8) for neighbouring outcomes."""
        return float(np.exp(-self.separation_ratio(gap) ** 2 / 8.0))

    def amplitude(self, z, offset: float):
        z = np.asarray(z, dtype=float)
        return (2.0 * np.pi * self.sigma ** 2) ** -0.25 * np.exp(-((z - offset) ** 2) / (4.0 * self.sigma ** 2))

    def overlap(self, o1: float, o2: float) -> float:
        """Integral of eta(z - o1) eta(z - o2) over the whole line."""
        return float(np.exp(-((o1 - o2) ** 2) / (8.0 * self.sigma ** 2)))

    def region_overlap(self, o1: float, o2: float, lo: float, hi: float) -> float:
        """Integral of eta(z - o1) eta(z - o2) over [lo, hi].

        The product is overlap(o1, o2) times a normal density with mean
        (o1 + o2)/2 and standard deviation sigma.
        """
        mid = 0.5 * (o1 + o2)
        mass = ndtr((hi - mid) / self.sigma) - ndtr((lo - mid) / self.sigma)
        return self.overlap(o1, o2) * float(mass)

    def regions(self, offsets) -> list[tuple[float, float]]:
        """Pointer read-out intervals cut at midpoints between sorted offsets."""
        offsets = np.asarray(offsets, dtype=float)
        if np.any(np.diff(offsets) <= 0):
            raise DomainError("pointer offsets must be strictly increasing")
        cuts = np.concatenate([[-np.inf], 0.5 * (offsets[1:] + offsets[:-1]), [np.inf]])
        return list(zip(cuts[:-1], cuts[1:]))

    def sample_ready(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ready_center + self.sigma * rng.standard_normal(n)


def shortness(state: WaveCoefficients, basis: OscillatorBasis, T_M: float) -> float:
    """Distance || e^{-i H T_M} psi - psi || with the global phase removed.

    A global phase is not observable; the remaining distance measures how far
    the free dynamics moves the state during one window.
    """
    e = basis.energies
    p = np.abs(state.coeffs) ** 2
    overlap = abs(np.sum(p * np.exp(-1j * (e[:, None] + e[None, :]) * T_M)))
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * overlap / np.sum(p))))


def shortness_ok(state: WaveCoefficients, basis: OscillatorBasis, T_M: float, tol: float = SHORTNESS_TOL) -> bool:
    return shortness(state, basis, T_M) < tol

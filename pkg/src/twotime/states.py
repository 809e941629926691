"""Projectors and exactly-represented (possibly projected) two-particle states.

A projected state such as ``(Pi_a x 1) U(t) psi`` is not truncated back into the
eigenbasis.  Instead each particle carries a *frame*: the functions

    F_m(tau) = U(tau - t_p) Pi [exp(-i E_m t_p) phi_m]

for the projector ``Pi`` applied at system time ``t_p`` (an unprojected side
uses Pi = 1, so F_m(tau) = exp(-i E_m tau) phi_m).  The state at time tau is
``sum_mn c_mn F^A_m(tau) F^B_n(tau)`` with constant coefficients.  Inner
products only need the frame Gram matrices, which are exact bin integrals,
and pointwise values come from the closed-form propagator.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .hilbert import DomainError, OscillatorBasis, WaveCoefficients, bin_projection_matrix
from .propagator import projected_evolution

IDEMPOTENCY_TOL = 1e-6
SVD_CUTOFF = 1e-15  # relative singular value kept in plain-frame evaluation


@lru_cache(maxsize=4096)
def _bin_gram(basis: OscillatorBasis, lo: float, hi: float) -> np.ndarray:
    g = bin_projection_matrix(basis, (lo, hi))
    g.setflags(write=False)
    return g


@dataclass(frozen=True)
class BinProjector:
    """Projector onto particle positions in ``[lo, hi)``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"empty bin ({self.lo}, {self.hi})")

    def gram(self, basis: OscillatorBasis) -> np.ndarray:
        return _bin_gram(basis, float(self.lo), float(self.hi))

    def contains(self, x):
        return (np.asarray(x) >= self.lo) & (np.asarray(x) < self.hi)

    @property
    def is_full_line(self) -> bool:
        return self.lo == -np.inf and self.hi == np.inf


class MatrixProjector:
    """Orthogonal projector given as a matrix on the truncated eigenbasis."""

    def __init__(self, matrix, tol: float = IDEMPOTENCY_TOL):
        p = np.asarray(matrix, dtype=complex)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DomainError(f"projector must be a square matrix, got shape {p.shape}")
        residual = max(np.max(np.abs(p @ p - p)), np.max(np.abs(p - p.conj().T)))
        if residual > tol:
            raise DomainError(f"not an orthogonal projection (residual {residual:.2e} > {tol:g})")
        self.matrix = p
        self.residual = float(residual)

    def gram(self, basis: OscillatorBasis) -> np.ndarray:
        if self.matrix.shape[0] != basis.n_max:
            raise DomainError("projector dimension does not match basis")
        return self.matrix

    def __eq__(self, other):
        return isinstance(other, MatrixProjector) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


def as_projector(p, basis: OscillatorBasis | None = None):
    """Accept a projector object, a ``(lo, hi)`` interval or a projection matrix."""
    if isinstance(p, (BinProjector, MatrixProjector)):
        return p
    arr = np.asarray(p)
    if arr.shape == (2,) and not np.iscomplexobj(arr):
        return BinProjector(float(arr[0]), float(arr[1]))
    return MatrixProjector(arr)


def _pair_gram(p1, p2, basis: OscillatorBasis) -> np.ndarray:
    """<P1 phi_m, P2 phi_n> for two projectors applied at the same time."""
    if p1 is None and p2 is None:
        return np.eye(basis.n_max, dtype=complex)
    if p1 is None:
        return p2.gram(basis)
    if p2 is None:
        return p1.gram(basis).conj().T
    if isinstance(p1, BinProjector) and isinstance(p2, BinProjector):
        lo, hi = max(p1.lo, p2.lo), min(p1.hi, p2.hi)
        if lo >= hi:
            return np.zeros((basis.n_max, basis.n_max), dtype=complex)
        return _bin_gram(basis, float(lo), float(hi))
    # at least one projector keeps the truncated span, so the product is exact
    return p1.gram(basis).conj().T @ p2.gram(basis)


@dataclass(frozen=True)
class Frame:
    """Single-particle frame: projector applied at system time ``t_proj`` (None = unprojected)."""

    projector: object = None
    t_proj: float = 0.0

    @property
    def projected(self) -> bool:
        return self.projector is not None


EIGEN = Frame()


def cross_gram(f1: Frame, f2: Frame, basis: OscillatorBasis) -> np.ndarray:
    """Matrix <F1_m(tau), F2_n(tau)> (independent of tau)."""
    if f1.projected and f2.projected and f1.t_proj != f2.t_proj:
        raise DomainError("overlap of frames projected at different times is not supported")
    t = f1.t_proj if f1.projected else f2.t_proj
    e = basis.energies
    phase = np.exp(1j * (e[:, None] - e[None, :]) * t)
    return phase * _pair_gram(f1.projector, f2.projector, basis)


def _plain(frame: Frame) -> bool:
    p = frame.projector
    return p is None or (isinstance(p, BinProjector) and p.is_full_line)


def frame_values(frame: Frame, basis: OscillatorBasis, x, tau: float, m_count: int, derivative: bool = False):
    """F_m(x, tau) for m < m_count, optionally with d/dx."""
    e = basis.energies[:m_count]
    shape = (m_count,) + (1,) * np.ndim(x)
    p = frame.projector
    if p is None or (isinstance(p, BinProjector) and p.is_full_line):
        ph = np.exp(-1j * e * tau).reshape(shape)
        if derivative:
            f, df = basis.functions(x, derivative=True, n=m_count)
            return f * ph, df * ph
        return basis.functions(x, n=m_count) * ph, None
    ph0 = np.exp(-1j * e * frame.t_proj).reshape(shape)
    if isinstance(p, BinProjector):
        f, df = projected_evolution(basis, (p.lo, p.hi), tau - frame.t_proj, x, m_count, derivative)
        return f * ph0, (df * ph0 if derivative else None)
    # matrix projector: P phi_m stays in the span and evolves level by level
    mat = p.matrix[:, :m_count]
    ek = basis.energies
    ev = np.exp(-1j * ek * (tau - frame.t_proj))[:, None] * mat
    if derivative:
        f, df = basis.functions(x, derivative=True)
        return np.tensordot(ev.T, f, axes=1) * ph0, np.tensordot(ev.T, df, axes=1) * ph0
    return np.tensordot(ev.T, basis.functions(x), axes=1) * ph0, None


@dataclass(frozen=True)
class FramedState:
    """Two-particle state ``sum c_mn F^A_m F^B_n`` with constant coefficients."""

    basis: OscillatorBasis
    coeffs: np.ndarray
    frame_a: Frame = EIGEN
    frame_b: Frame = EIGEN

    @classmethod
    def from_wave(cls, wave: WaveCoefficients, basis: OscillatorBasis, t: float = 0.0) -> FramedState:
        """Wrap eigenbasis coefficients that describe the state at system time ``t``."""
        wave.check_basis(basis)
        e = basis.energies
        c = wave.coeffs * np.exp(1j * (e[:, None] + e[None, :]) * t)
        return cls(basis, c)

    def frame(self, side: str) -> Frame:
        return self.frame_a if side == "A" else self.frame_b

    def support(self) -> tuple[int, int]:
        nz = np.nonzero(np.abs(self.coeffs) > 0)
        if nz[0].size == 0:
            return 1, 1
        return int(nz[0].max()) + 1, int(nz[1].max()) + 1

    def inner(self, other: FramedState) -> complex:
        ga = cross_gram(self.frame_a, other.frame_a, self.basis)
        gb = cross_gram(self.frame_b, other.frame_b, self.basis)
        return complex(np.sum(self.coeffs.conj() * (ga @ other.coeffs @ gb.T)))

    @property
    def norm_squared(self) -> float:
        return self.inner(self).real

    def scaled(self, factor: complex) -> FramedState:
        return FramedState(self.basis, self.coeffs * factor, self.frame_a, self.frame_b)

    def project(self, side: str, projector, t: float) -> FramedState:
        """Apply a projector to one particle at system time ``t``."""
        projector = as_projector(projector, self.basis)
        frame = self.frame(side)
        if frame.projected:
            if frame.t_proj != t:
                raise DomainError(f"particle {side} was already projected at t={frame.t_proj}")
            if isinstance(frame.projector, BinProjector) and isinstance(projector, BinProjector):
                lo, hi = max(frame.projector.lo, projector.lo), min(frame.projector.hi, projector.hi)
                new = BinProjector(lo, hi) if lo < hi else None
                if new is None:
                    return FramedState(self.basis, np.zeros_like(self.coeffs), self.frame_a, self.frame_b)
                projector = new
            else:
                raise DomainError("repeated projection of a particle must use position bins")
        if isinstance(projector, MatrixProjector) and not frame.projected:
            # a matrix projector keeps the span: apply it in the Schroedinger picture
            e = self.basis.energies
            u = np.exp(-1j * e * t)
            op = (u.conj()[:, None] * projector.matrix) * u[None, :]
            c = op @ self.coeffs if side == "A" else self.coeffs @ op.T
            return FramedState(self.basis, c, self.frame_a, self.frame_b)
        new_frame = Frame(projector, float(t))
        if side == "A":
            return FramedState(self.basis, self.coeffs, new_frame, self.frame_b)
        return FramedState(self.basis, self.coeffs, self.frame_a, new_frame)

    def evaluate(self, x, y, tau: float, derivative: bool = False):
        """psi(x, y, tau); with ``derivative`` also returns (d/dx psi, d/dy psi)."""
        if _plain(self.frame_a) and _plain(self.frame_b):
            return self._evaluate_plain(x, y, tau, derivative)
        ka, kb = self.support()
        c = self.coeffs[:ka, :kb]
        fa, dfa = frame_values(self.frame_a, self.basis, x, tau, ka, derivative)
        fb, dfb = frame_values(self.frame_b, self.basis, y, tau, kb, derivative)
        cb = np.tensordot(c, fb, axes=([1], [0]))  # (ka, ...)
        psi = np.sum(fa * cb, axis=0)
        if not derivative:
            return psi
        dx = np.sum(dfa * cb, axis=0)
        dy = np.sum(fa * np.tensordot(c, dfb, axes=([1], [0])), axis=0)
        return psi, dx, dy

    @cached_property
    def _factors(self):
        ka, kb = self.support()
        u, sv, vh = np.linalg.svd(self.coeffs[:ka, :kb])
        r = max(1, int(np.sum(sv > SVD_CUTOFF * sv[0])))
        return u[:, :r] * sv[:r], vh[:r]

    def _evaluate_plain(self, x, y, tau, derivative):
        # c = U V in low rank; phases go on the factors, basis values stay real
        u, v = self._factors
        e = self.basis.energies
        u = u * np.exp(-1j * e[:u.shape[0]] * tau)[:, None]
        v = v * np.exp(-1j * e[:v.shape[1]] * tau)[None, :]
        shape = np.shape(x)
        fa, dfa = self._real_values(x, u.shape[0], derivative)
        fb, dfb = self._real_values(y, v.shape[1], derivative)

        def side(m, f):
            f = f.reshape(f.shape[0], -1)
            return m.real @ f + 1j * (m.imag @ f)

        ga, gb = side(u.T, fa), side(v, fb)
        psi = np.sum(ga * gb, axis=0).reshape(shape)
        if not derivative:
            return psi
        dx = np.sum(side(u.T, dfa) * gb, axis=0).reshape(shape)
        dy = np.sum(ga * side(v, dfb), axis=0).reshape(shape)
        return psi, dx, dy

    def _real_values(self, x, k, derivative):
        if derivative:
            return self.basis.functions(x, derivative=True, n=k)
        return self.basis.functions(x, n=k), None

    def to_wave(self, tau: float) -> WaveCoefficients:
        """Eigenbasis coefficients at time ``tau``; only for unprojected frames."""
        if self.frame_a.projected or self.frame_b.projected:
            raise DomainError("bin-projected states have no finite eigenbasis expansion")
        e = self.basis.energies
        c = self.coeffs * np.exp(-1j * (e[:, None] + e[None, :]) * tau)
        return WaveCoefficients(c, normalized=False)

    def truncation_leak(self) -> float:
        """Norm that truncating the projected sides back to the basis would lose."""
        ga = self.frame_a.projector.gram(self.basis) if self.frame_a.projected else None
        gb = self.frame_b.projector.gram(self.basis) if self.frame_b.projected else None
        ga = np.eye(self.basis.n_max) if ga is None else ga
        gb = np.eye(self.basis.n_max) if gb is None else gb
        exact = np.sum(self.coeffs.conj() * (ga @ self.coeffs @ gb.T)).real
        kept = np.sum(self.coeffs.conj() * ((ga @ ga) @ self.coeffs @ (gb @ gb).T)).real
        return float(exact - kept)

"""Standard quantum predictions: two-time correlators and joint probabilities."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .hilbert import DomainError, OscillatorBasis, WaveCoefficients, matrix_element_x
from .states import BinProjector, FramedState, MatrixProjector, as_projector

PROJECTION_TOL = 1e-8
IMAG_TOL = 1e-10
TAIL_TOL = 1e-6


class Method(str, Enum):
    HEISENBERG = "heisenberg"
    CLOSED_FORM = "closed_form"
    FACTORIZED = "factorized"
    BINNED = "binned"
    UNMEASURED = "unmeasured"
    MEASURED = "measured"


@dataclass(frozen=True)
class CorrelationResult:
    value: float
    t1: float
    t2: float
    method: Method
    stderr: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DomainError(f"non-finite correlation value {self.value}")


class DiscreteObservable:
    """A = sum_a a P_a on one particle.

    ``projectors`` may be position bins (exact) or matrices on the basis.  The
    matrix representations (Galerkin matrices for bins) are checked for
    orthogonality and completeness; the truncation residual of P^2 = P is
    recorded in ``idempotency_residual`` rather than enforced, since a bin's
    Galerkin matrix is only idempotent up to the amplitude it scatters above
    the cut-off.
    """

    def __init__(self, eigenvalues, projectors, basis: OscillatorBasis, tol: float = PROJECTION_TOL):
        vals = np.asarray(eigenvalues, dtype=float)
        if vals.ndim != 1 or len(vals) != len(projectors):
            raise DomainError("need one projector per eigenvalue")
        if np.any(np.diff(vals) <= 0):
            raise DomainError("eigenvalues must be strictly increasing")
        self.eigenvalues = vals
        self.projectors = tuple(as_projector(p, basis) for p in projectors)
        self.basis = basis
        self.tol = tol
        mats = self.matrices
        self.idempotency_residual = max(float(np.max(np.abs(m @ m - m))) for m in mats)
        total = sum(mats)
        self.completeness_residual = float(np.max(np.abs(total - np.eye(basis.n_max))))
        if self.completeness_residual > tol:
            raise DomainError(f"projectors do not sum to identity (residual {self.completeness_residual:.2e})")
        herm = max(float(np.max(np.abs(m - m.conj().T))) for m in mats)
        if herm > 1e-12:
            raise DomainError(f"projector matrix not Hermitian (residual {herm:.2e})")
        if self._bins_only:
            self._check_disjoint_bins()
        else:
            self.orthogonality_residual = max(
                (float(np.max(np.abs(mats[i] @ mats[j])))
                 for i in range(len(mats)) for j in range(len(mats)) if i != j),
                default=0.0,
            )
            if self.orthogonality_residual > tol:
                raise DomainError(f"projectors not mutually orthogonal ({self.orthogonality_residual:.2e})")

    @property
    def _bins_only(self) -> bool:
        return all(isinstance(p, BinProjector) for p in self.projectors)

    def _check_disjoint_bins(self):
        bins = sorted((p.lo, p.hi) for p in self.projectors)
        for (_, h0), (l1, _) in zip(bins, bins[1:]):
            if l1 < h0:
                raise DomainError("position bins overlap")
        # disjoint bins are exactly orthogonal as operators
        self.orthogonality_residual = 0.0

    @property
    def matrices(self) -> list[np.ndarray]:
        return [p.gram(self.basis) for p in self.projectors]

    @property
    def matrix(self) -> np.ndarray:
        """Galerkin matrix of sum_a a P_a."""
        return sum(a * m for a, m in zip(self.eigenvalues, self.matrices))

    @property
    def min_gap(self) -> float:
        return float(np.min(np.diff(self.eigenvalues))) if len(self.eigenvalues) > 1 else np.inf

    def __len__(self):
        return len(self.eigenvalues)


class BinnedObservable(DiscreteObservable):
    """Detector array: position bins with a representative value per bin.

    The two outer bins are half-infinite; their centres sit at the adjacent
    finite edge -/+ ``delta`` / 2.
    """

    def __init__(self, bin_edges, basis: OscillatorBasis, delta: float | None = None, tol: float = PROJECTION_TOL):
        edges = np.asarray(bin_edges, dtype=float)
        if edges.ndim != 1 or len(edges) < 2:
            raise DomainError("need at least two bin edges")
        if edges[0] != -np.inf or edges[-1] != np.inf:
            raise DomainError("outer bins must be half-infinite (edges start at -inf, end at +inf)")
        if np.any(np.diff(edges) <= 0):
            raise DomainError("bin edges must be strictly increasing")
        finite = edges[1:-1]
        if delta is None:
            delta = float(np.mean(np.diff(finite))) if len(finite) > 1 else 0.0
        self.bin_edges = edges
        self.delta = float(delta)
        if len(edges) == 2:
            centers = np.array([0.0])
        else:
            centers = np.empty(len(edges) - 1)
            centers[1:-1] = 0.5 * (finite[1:] + finite[:-1])
            centers[0] = finite[0] - 0.5 * self.delta
            centers[-1] = finite[-1] + 0.5 * self.delta
        self.centers = centers
        projectors = [BinProjector(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
        super().__init__(centers, projectors, basis, tol)

    @classmethod
    def uniform(cls, n_bins: int, basis: OscillatorBasis, lo: float = -4.0, hi: float = 4.0) -> BinnedObservable:
        """``n_bins`` equal bins over [lo, hi] with the outer two extended to infinity."""
        if n_bins < 1:
            raise DomainError("need at least one bin")
        if n_bins == 1:
            return cls([-np.inf, np.inf], basis, delta=hi - lo)
        edges = np.linspace(lo, hi, n_bins + 1)
        edges[0], edges[-1] = -np.inf, np.inf
        return cls(edges, basis, delta=(hi - lo) / n_bins)

    def bin_index(self, x) -> np.ndarray:
        """Index of the bin containing each position."""
        return np.searchsorted(self.bin_edges[1:-1], np.asarray(x), side="right")

    def value_at(self, x) -> np.ndarray:
        return self.centers[self.bin_index(x)]

    def tail_mass(self, state: WaveCoefficients, side: str = "A") -> float:
        """Marginal probability beyond the finite edges on one particle."""
        if len(self.bin_edges) <= 3:
            return 0.0
        rho = _reduced(state, side)
        outer = self.projectors[0].gram(self.basis) + self.projectors[-1].gram(self.basis)
        return float(np.real(np.sum(outer * rho.T)))


def _reduced(state: WaveCoefficients, side: str) -> np.ndarray:
    c = state.coeffs
    return c @ c.conj().T if side == "A" else c.T @ c.conj()


def _check_tail(obs: DiscreteObservable, state: WaveCoefficients, side: str):
    if isinstance(obs, BinnedObservable):
        tail = obs.tail_mass(state, side)
        if tail > TAIL_TOL:
            warnings.warn(f"tail mass {tail:.2e} beyond the outer bin edges exceeds {TAIL_TOL:g}", stacklevel=3)


def _heisenberg_matrix(mat: np.ndarray, basis: OscillatorBasis, t: float) -> np.ndarray:
    u = np.exp(-1j * basis.energies * t)
    return (u.conj()[:, None] * mat) * u[None, :]


def _expect(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> complex:
    """<psi| A x B |psi> for coefficient matrix c."""
    return complex(np.sum(c.conj() * (a @ c @ b.T)))


def heisenberg_two_time(state: WaveCoefficients, obs_a: DiscreteObservable, obs_b: DiscreteObservable,
                        t1: float, t2: float) -> CorrelationResult:
    """<psi| A(t1) x B(t2) |psi> by dense matrix algebra."""
    if obs_a.basis != obs_b.basis:
        raise DomainError("observables use different bases")
    state.check_basis(obs_a.basis)
    basis = obs_a.basis
    val = _expect(state.coeffs, _heisenberg_matrix(obs_a.matrix, basis, t1), _heisenberg_matrix(obs_b.matrix, basis, t2))
    if abs(val.imag) > IMAG_TOL:
        raise DomainError(f"correlator has imaginary part {val.imag:.2e}")
    return CorrelationResult(val.real, t1, t2, Method.HEISENBERG)


def closed_form_xx(basis: OscillatorBasis, t1: float, t2: float) -> CorrelationResult:
    """|<0|x|1>|^2 cos(dE (t2 - t1)) + <0|x|0><1|x|1> for the entangled 0-1 state."""
    x01 = matrix_element_x(basis, 0, 1)
    x00 = matrix_element_x(basis, 0, 0)
    x11 = matrix_element_x(basis, 1, 1)
    val = x01 * x01 * np.cos(basis.delta_e * (t2 - t1)) + x00 * x11
    return CorrelationResult(float(val), t1, t2, Method.CLOSED_FORM)


def _projector(p, basis):
    p = as_projector(p, basis)
    if isinstance(p, MatrixProjector):
        p.gram(basis)
    return p


def heisenberg_joint(state: WaveCoefficients, pa, pb, t1: float, t2: float, basis: OscillatorBasis) -> float:
    """<psi| P_a(t1) x P_b(t2) |psi>."""
    ga = _heisenberg_matrix(_projector(pa, basis).gram(basis), basis, t1)
    gb = _heisenberg_matrix(_projector(pb, basis).gram(basis), basis, t2)
    return _expect(state.coeffs, ga, gb).real


def factorized_joint(state: WaveCoefficients, pa, pb, t1: float, t2: float, basis: OscillatorBasis) -> float:
    """P_t1(a) P_t2(b | a) (or the reversed order) by project, evolve, project.

    The earlier projection is applied, the state renormalized and carried to
    the later time, where the second projection is applied.  A zero earlier
    probability gives joint probability 0 without forming the conditional.
    """
    pa, pb = _projector(pa, basis), _projector(pb, basis)
    if t1 == t2:
        return joint_equal_time(state, pa, pb, t1, basis)
    first, second = (("A", pa, t1), ("B", pb, t2)) if t1 < t2 else (("B", pb, t2), ("A", pa, t1))
    psi = FramedState.from_wave(state, basis)
    after = psi.project(first[0], first[1], first[2])
    p_first = after.norm_squared
    if p_first <= 0.0:
        return 0.0
    after = after.scaled(1.0 / np.sqrt(p_first))
    # the frames carry free evolution to the later time exactly
    p_cond = after.project(second[0], second[1], second[2]).norm_squared
    return float(p_first * p_cond)


def joint_equal_time(state: WaveCoefficients, pa, pb, t: float, basis: OscillatorBasis) -> float:
    """<psi_t| P_a x P_b |psi_t>."""
    state.check_basis(basis)
    e = basis.energies
    c = state.coeffs * np.exp(-1j * (e[:, None] + e[None, :]) * t)
    ga = _projector(pa, basis).gram(basis)
    gb = _projector(pb, basis).gram(basis)
    return _expect(c, ga, gb).real


def joint_table(state: WaveCoefficients, obs_a: DiscreteObservable, obs_b: DiscreteObservable,
                t1: float, t2: float, method: str = "factorized") -> np.ndarray:
    """Matrix P(a, b) over all outcome pairs."""
    basis = obs_a.basis
    fn = factorized_joint if method == "factorized" else heisenberg_joint
    return np.array([[fn(state, pa, pb, t1, t2, basis) for pb in obs_b.projectors] for pa in obs_a.projectors])


def binned_closed_form_xx(binned: BinnedObservable, state: WaveCoefficients, t1: float, t2: float,
                          binned_b: BinnedObservable | None = None) -> CorrelationResult:
    """sum_ij x_i x_j P(i, j) with P from the factorized pipeline."""
    binned_b = binned if binned_b is None else binned_b
    _check_tail(binned, state, "A")
    _check_tail(binned_b, state, "B")
    table = joint_table(state, binned, binned_b, t1, t2)
    val = float(binned.centers @ table @ binned_b.centers)
    return CorrelationResult(val, t1, t2, Method.BINNED)


def truncation_leak(state: WaveCoefficients, obs: DiscreteObservable) -> float:
    """Norm lost if every projected branch on particle A were truncated back to the basis.

    Sum over outcomes of <psi| (P_a - P_a^2) x 1 |psi> with Galerkin matrices P_a.
    The pipelines never truncate; this only reports how much a truncating
    implementation would lose at the chosen n_max.
    """
    rho = _reduced(state, "A")
    return float(sum(np.real(np.sum((m - m @ m) * rho.T)) for m in obs.matrices))

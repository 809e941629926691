"""Pilot-wave evaluation, guidance velocities, trajectory integration and equilibrium sampling.

Ensembles are stored as arrays (x, y, zA, zB) so the whole population moves
in one vectorized RK4 step.  Pointer coordinates have no kinetic term between
measurement windows, so outside windows they do not move.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hilbert import DomainError, OscillatorBasis, WaveCoefficients
from .pointer import PointerModel
from .sqm import CorrelationResult, Method
from .states import EIGEN, FramedState

NODE_FLOOR = 1e-12
# branches whose pointer factor is below this fraction of the largest one
# at a configuration are left out of the branch sum there
BRANCH_CUTOFF = 1e-12
BLOCK = 4096
GRID_POINTS = 4001
GRADE_SPAN = 0.1


class NodeError(RuntimeError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


@dataclass(frozen=True)
class Configuration:
    x: float
    y: float
    zA: float = 0.0
    zB: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.y, self.zA, self.zB])):
            raise DomainError("configuration coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.zA, self.zB])


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Equal-weight ensemble; ``q`` has shape (n, 4) with columns x, y, zA, zB."""

    q: np.ndarray
    seed: int
    t: float = 0.0
    alive: np.ndarray | None = None
    redraws: int = 0

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        alive = np.ones(len(q), dtype=bool) if self.alive is None else np.array(self.alive, dtype=bool)
        alive.setflags(write=False)
        object.__setattr__(self, "alive", alive)

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def dropouts(self) -> int:
        return int(np.count_nonzero(~self.alive))

    @property
    def members(self) -> list[Configuration]:
        return [Configuration(*row) for row in self.q]

    def moved(self, q, t, alive) -> TrajectoryEnsemble:
        return TrajectoryEnsemble(q, self.seed, t, alive, self.redraws)


@dataclass
class _Term:
    state: FramedState
    offset_a: float | None
    offset_b: float | None


class PilotWave:
    """Sum of branches psi_k(x, y, t) eta(zA - oA_k) eta(zB - oB_k).

    A bare wave is a single branch whose pointers (if any) sit in the ready
    state.  Pointer factors are dropped entirely for devices that are absent.
    """

    def __init__(self, terms, basis: OscillatorBasis, pointer_a: PointerModel | None = None,
                 pointer_b: PointerModel | None = None, node_floor: float = NODE_FLOOR):
        self.terms = [_Term(*t) for t in terms]
        self.basis = basis
        self.pointer_a = pointer_a
        self.pointer_b = pointer_b
        self.node_floor = node_floor
        self.static = self._is_static()

    @classmethod
    def bare(cls, wave: WaveCoefficients, basis: OscillatorBasis, pointer_a=None, pointer_b=None, t0: float = 0.0,
             **kw) -> PilotWave:
        return cls([(FramedState.from_wave(wave, basis, t0), None, None)], basis, pointer_a, pointer_b, **kw)

    def _is_static(self) -> bool:
        """Stationary wave with real coefficients up to a global phase: velocity is zero."""
        if len(self.terms) != 1:
            return False
        st = self.terms[0].state
        if st.frame_a != EIGEN or st.frame_b != EIGEN:
            return False
        c = st.coeffs
        nz = np.abs(c) > 0
        if not nz.any():
            return False
        e = self.basis.energies
        total = (e[:, None] + e[None, :])[nz]
        if np.ptp(total) > 1e-12:
            return False
        vals = c[nz]
        rot = vals * np.exp(-1j * np.angle(vals[0]))
        return bool(np.max(np.abs(rot.imag)) < 1e-14)

    def _pointer_factor(self, pointer, offset, z):
        if pointer is None:
            return None
        return pointer.amplitude(z, pointer.ready_center if offset is None else offset)

    def _factors(self, q):
        """Pointer factor per branch, shape (n_terms, n)."""
        n = q.shape[0]
        w = np.ones((len(self.terms), n))
        for k, term in enumerate(self.terms):
            fa = self._pointer_factor(self.pointer_a, term.offset_a, q[:, 2])
            fb = self._pointer_factor(self.pointer_b, term.offset_b, q[:, 3])
            if fa is not None:
                w[k] *= fa
            if fb is not None:
                w[k] *= fb
        return w

    def evaluate(self, q, t: float, derivative: bool = False, relative: bool = False):
        """Psi(q, t) for configurations ``q`` of shape (n, 4).

        With ``relative`` the pointer factors are divided by their largest
        value per configuration; ratios such as the velocity are unchanged and
        the result no longer underflows far from every pointer offset.
        """
        q = np.atleast_2d(np.asarray(q, dtype=float))
        n = q.shape[0]
        w = self._factors(q)
        wmax = w.max(axis=0)
        if relative:
            w = w / np.where(wmax > 0, wmax, 1.0)
            wmax = np.ones(n)
        psi = np.zeros(n, dtype=complex)
        dx = np.zeros(n, dtype=complex)
        dy = np.zeros(n, dtype=complex)
        for k, term in enumerate(self.terms):
            sel = w[k] > BRANCH_CUTOFF * wmax
            if not sel.any():
                continue
            idx = np.nonzero(sel)[0] if not sel.all() else slice(None)
            out = term.state.evaluate(q[idx, 0], q[idx, 1], t, derivative)
            if derivative:
                psi[idx] += w[k, idx] * out[0]
                dx[idx] += w[k, idx] * out[1]
                dy[idx] += w[k, idx] * out[2]
            else:
                psi[idx] += w[k, idx] * out
        return (psi, dx, dy) if derivative else psi

    def velocity(self, q, t: float):
        """Guidance velocities (vx, vy) and a node mask for configurations ``q``."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        n = q.shape[0]
        if self.static:
            return np.zeros(n), np.zeros(n), np.zeros(n, dtype=bool)
        psi, dx, dy = self.evaluate(q, t, derivative=True, relative=True)
        rho = np.abs(psi) ** 2
        node = ~(rho > self.node_floor)
        safe = np.where(node, 1.0, rho)
        inv_m = 1.0 / self.basis.mass
        vx = inv_m * np.imag(np.conj(psi) * dx) / safe
        vy = inv_m * np.imag(np.conj(psi) * dy) / safe
        vx[node] = 0.0
        vy[node] = 0.0
        return vx, vy, node


def wave_eval(wave: PilotWave, q: Configuration, t: float) -> complex:
    return complex(wave.evaluate(q.as_array()[None, :], t)[0])


def velocity(wave: PilotWave, q: Configuration, t: float) -> Configuration:
    """Velocity of a single configuration; pointers are at rest outside windows."""
    vx, vy, node = wave.velocity(q.as_array()[None, :], t)
    if node[0]:
        raise NodeError(f"density below node floor at {q}")
    return Configuration(float(vx[0]), float(vy[0]), 0.0, 0.0)


def _rk4_step(wave, q, t, h, alive):
    """One RK4 step of the system coordinates; returns new q and node flags."""
    def f(qq, tt):
        vx, vy, node = wave.velocity(qq, tt)
        return np.stack([vx, vy], axis=1), node

    k1, n1 = f(q, t)
    q2 = q.copy()
    q2[:, :2] += 0.5 * h * k1
    k2, n2 = f(q2, t + 0.5 * h)
    q3 = q.copy()
    q3[:, :2] += 0.5 * h * k2
    k3, n3 = f(q3, t + 0.5 * h)
    q4 = q.copy()
    q4[:, :2] += h * k3
    k4, n4 = f(q4, t + h)
    out = q.copy()
    out[:, :2] += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return out, n1 | n2 | n3 | n4


def _rk4_step_graded(wave, q, ts, u, hu, sign=1.0):
    """RK4 step in u with t = ts + sign u^2, where dq/du = 2 sign u v(q, t)."""
    def f(qq, uu):
        if uu == 0.0:  # the u-velocity vanishes at the singular time itself
            return np.zeros((len(qq), 2)), np.zeros(len(qq), dtype=bool)
        vx, vy, node = wave.velocity(qq, ts + sign * uu * uu)
        return 2.0 * sign * uu * np.stack([vx, vy], axis=1), node

    k1, n1 = f(q, u)
    q2 = q.copy()
    q2[:, :2] += 0.5 * hu * k1
    k2, n2 = f(q2, u + 0.5 * hu)
    q3 = q.copy()
    q3[:, :2] += 0.5 * hu * k2
    k3, n3 = f(q3, u + 0.5 * hu)
    q4 = q.copy()
    q4[:, :2] += hu * k3
    k4, n4 = f(q4, u + hu)
    out = q.copy()
    out[:, :2] += hu / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return out, n1 | n2 | n3 | n4


def _time_grid(t0, t1, dt):
    span = t1 - t0
    steps = max(1, int(np.ceil(abs(span) / dt - 1e-9)))
    return np.linspace(t0, t1, steps + 1)


def _pieces(t0, t1, half, span):
    """Split [t0, t1] into (ts, sign, ta, tb) pieces; ts is None for plain steps.

    Singular times are t0 + k half.  Within ``span`` after one the step variable
    is sqrt(t - ts), within ``span`` before the next it is sqrt(ts - t).
    """
    span = min(span, 0.5 * half)
    out = []
    k = 0
    while t0 + k * half < t1:
        s0, s1 = t0 + k * half, t0 + (k + 1) * half
        zones = [(s0, 1.0, s0, s0 + span), (None, 0.0, s0 + span, s1 - span), (s1, -1.0, s1 - span, s1)]
        for ts, sign, a, b in zones:
            a, b = max(a, t0), min(b, t1)
            if b > a:
                out.append((ts, sign, a, b))
        k += 1
    return out


def propagate(wave: PilotWave, q, t0: float, t1: float, dt: float = 1e-3, graded: bool = False,
              alive=None, record=None):
    """Move configurations from t0 to t1 with fixed-step RK4.

    With ``graded`` the wave is taken to have been position-projected at t0.
    It then has a jump at t0 and, because free oscillator motion refocuses the
    cut, again at every half period after it.  Velocities near these times
    behave like 1/sqrt|t - ts|, so within ``GRADE_SPAN`` of each the steps are
    taken in u = sqrt|t - ts|, where they are smooth.  Members that come within
    the node floor are frozen and flagged.  ``record`` (optional callable)
    receives (t, q) after every step.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    q = np.array(q, dtype=float)
    alive = np.ones(len(q), dtype=bool) if alive is None else np.array(alive, dtype=bool)
    if t1 == t0 or wave.static:
        return q, alive
    if graded and t1 < t0:
        raise DomainError("graded start only integrates forward in time")

    def advance(step):
        idx = np.nonzero(alive)[0]
        new, node = step(q[idx])
        q[idx[~node]] = new[~node]
        alive[idx[node]] = False

    if not graded:
        pieces = [(None, 0.0, t0, t1)]
    else:
        pieces = _pieces(t0, t1, 0.5 * wave.basis.period, GRADE_SPAN)
    for ts, sign, a, b in pieces:
        if ts is None:
            grid = _time_grid(a, b, dt)
            for t, t_next in zip(grid[:-1], grid[1:]):
                advance(lambda qq: _rk4_step(wave, qq, t, t_next - t, alive))
                if record is not None:
                    record(t_next, q)
            continue
        n_u = max(8, int(np.ceil(2.0 * (b - a) / dt)))
        us = np.linspace(np.sqrt(abs(a - ts)), np.sqrt(abs(b - ts)), n_u + 1)
        for u, u_next in zip(us[:-1], us[1:]):
            advance(lambda qq: _rk4_step_graded(wave, qq, ts, u, u_next - u, sign))
            if record is not None:
                record(ts + sign * u_next * u_next, q)
    return q, alive


def integrate_trajectory(wave: PilotWave, q0: Configuration, t0: float, t1: float, dt: float = 1e-3,
                         graded: bool = False):
    """Path of one configuration as (times, array of shape (k, 4))."""
    q = q0.as_array()[None, :]
    _, _, node = wave.velocity(q, t0)
    if node[0] and not graded:
        raise NodeError(f"initial configuration {q0} is at a node")
    times, points = [t0], [q[0].copy()]

    def rec(t, qq):
        times.append(t)
        points.append(qq[0].copy())

    _, alive = propagate(wave, q, t0, t1, dt, graded, record=rec)
    if wave.static:
        times.append(t1)
        points.append(q[0].copy())
    path = (np.array(times), np.array(points))
    if not alive[0]:
        raise NodeError("trajectory reached a node", path)
    return path


def _block_generators(seed: int, n: int):
    n_blocks = (n + BLOCK - 1) // BLOCK
    seqs = np.random.SeedSequence(seed).spawn(n_blocks)
    return [(np.random.default_rng(s), k * BLOCK, min(n, (k + 1) * BLOCK)) for k, s in enumerate(seqs)]


def _cumulative_grid(basis: OscillatorBasis, levels: int, grid: np.ndarray) -> np.ndarray:
    """Cum[k] = integral_{-inf}^{grid[k]} phi_m phi_n for m, n < levels (8-point GL per cell)."""
    gx, gw = np.polynomial.legendre.leggauss(8)
    h = np.diff(grid)
    mid = 0.5 * (grid[1:] + grid[:-1])
    pts = mid[:, None] + 0.5 * h[:, None] * gx[None, :]
    phi = basis.functions(pts, n=levels)  # (levels, cells, 8)
    cell = np.einsum("mcg,ncg,g,c->cmn", phi, phi, gw, 0.5 * h)
    cum = np.zeros((len(grid), levels, levels))
    cum[1:] = np.cumsum(cell, axis=0)
    return cum


def _inverse_cdf(grid, cdf, u):
    """Rows of ``cdf`` (one per sample, or a single shared row) inverted at ``u``."""
    if cdf.ndim == 1:
        k = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(grid) - 2)
        lo, hi = cdf[k], cdf[k + 1]
    else:
        k = np.clip((cdf < u[:, None]).sum(axis=1) - 1, 0, len(grid) - 2)
        rows = np.arange(len(u))
        lo, hi = cdf[rows, k], cdf[rows, k + 1]
    frac = np.where(hi > lo, (u - lo) / np.where(hi > lo, hi - lo, 1.0), 0.5)
    return grid[k] + np.clip(frac, 0.0, 1.0) * (grid[k + 1] - grid[k])


class _Sampler:
    """Exact |psi|^2 sampling: x from its marginal, then y from the conditional given x."""

    def __init__(self, wave: WaveCoefficients, basis: OscillatorBasis, grid_points: int = GRID_POINTS):
        ka, kb = wave.support()
        self.basis = basis
        self.c = wave.coeffs[:ka, :kb]
        self.ka, self.kb = ka, kb
        radius = (np.sqrt(2.0 * max(ka, kb) + 1.0) + 8.0) / basis.scale
        self.grid = np.linspace(-radius, radius, grid_points)
        self.cum_a = _cumulative_grid(basis, ka, self.grid)
        self.cum_b = _cumulative_grid(basis, kb, self.grid)
        r = self.c @ self.c.conj().T
        cdf = np.real(np.einsum("kmn,mn->k", self.cum_a, r))
        self.cdf_x = cdf / cdf[-1]

    def draw(self, rng: np.random.Generator, n: int):
        x = _inverse_cdf(self.grid, self.cdf_x, rng.random(n))
        d = np.tensordot(self.c, self.basis.functions(x, n=self.ka), axes=([0], [0]))  # (kb, n)
        outer = (d.conj()[:, None, :] * d[None, :, :]).reshape(self.kb * self.kb, n)
        cdf = np.real(self.cum_b.reshape(len(self.grid), -1) @ outer).T
        cdf /= cdf[:, -1:]
        y = _inverse_cdf(self.grid, cdf, rng.random(n))
        return x, y


def sample_equilibrium(wave: PilotWave, n: int, seed: int, t: float = 0.0) -> TrajectoryEnsemble:
    """i.i.d. draws from |Psi_t|^2 |eta_A|^2 |eta_B|^2 for a bare (pre-measurement) wave.

    The stream is split into fixed blocks, each with its own child seed, so the
    result does not depend on how blocks are scheduled.  Draws landing within
    the node floor are redrawn from the same block stream and counted.
    """
    if n < 1:
        raise DomainError("need at least one sample")
    if len(wave.terms) != 1 or wave.terms[0].state.frame_a.projected or wave.terms[0].state.frame_b.projected:
        raise DomainError("equilibrium sampling needs a bare wave")
    coeffs = wave.terms[0].state.to_wave(t)
    sampler = _Sampler(coeffs, wave.basis)
    q = np.zeros((n, 4))
    redraws = 0
    for rng, lo, hi in _block_generators(seed, n):
        m = hi - lo
        x, y = sampler.draw(rng, m)
        za = wave.pointer_a.sample_ready(rng, m) if wave.pointer_a is not None else np.zeros(m)
        zb = wave.pointer_b.sample_ready(rng, m) if wave.pointer_b is not None else np.zeros(m)
        block = np.stack([x, y, za, zb], axis=1)
        for _ in range(100):
            rho = np.abs(wave.evaluate(block, t, relative=True)) ** 2
            bad = np.nonzero(~(rho > wave.node_floor))[0]
            if bad.size == 0:
                break
            redraws += bad.size
            bx, by = sampler.draw(rng, bad.size)
            block[bad, 0], block[bad, 1] = bx, by
        q[lo:hi] = block
    return TrajectoryEnsemble(q, seed, t, None, redraws)


def exact_moments(wave: WaveCoefficients, basis: OscillatorBasis) -> dict[str, float]:
    """<x>, <y>, <x^2>, <y^2>, <xy> of |psi|^2 from the basis operator matrices."""
    c = wave.coeffs
    x, x2 = basis.x_matrix, basis.x2_matrix
    one = np.eye(basis.n_max)

    def ex(a, b):
        return float(np.real(np.sum(c.conj() * (a @ c @ b.T))))

    return {"x": ex(x, one), "y": ex(one, x), "x2": ex(x2, one), "y2": ex(one, x2), "xy": ex(x, x)}


def sample_moments(q, alive=None) -> dict[str, tuple[float, float]]:
    """Sample means with standard errors for the same moments as ``exact_moments``."""
    q = np.asarray(q)
    if alive is not None:
        q = q[alive]
    x, y = q[:, 0], q[:, 1]
    out = {}
    for name, v in (("x", x), ("y", y), ("x2", x * x), ("y2", y * y), ("xy", x * y)):
        out[name] = (float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v))))
    return out


def equivariance_check(wave: PilotWave, ensemble: TrajectoryEnsemble, t: float) -> dict[str, float]:
    """z-scores of ensemble moments against exact |Psi_t|^2 moments (bare waves)."""
    if len(wave.terms) != 1:
        raise DomainError("equivariance check needs a bare wave")
    exact = exact_moments(wave.terms[0].state.to_wave(t), wave.basis)
    emp = sample_moments(ensemble.q, ensemble.alive)
    return {k: (emp[k][0] - exact[k]) / emp[k][1] for k in exact}


def unmeasured_two_time(ensemble: TrajectoryEnsemble, wave: PilotWave, t1: float, t2: float,
                        dt: float = 1e-3) -> CorrelationResult:
    """Ensemble average of x(t1) y(t2) along unmeasured trajectories."""
    q, alive = np.array(ensemble.q), np.array(ensemble.alive)
    first, second = sorted((t1, t2))
    q, alive = propagate(wave, q, ensemble.t, first, dt, alive=alive)
    at_first = q.copy()
    q, alive = propagate(wave, q, first, second, dt, alive=alive)
    xa = at_first[:, 0] if t1 <= t2 else q[:, 0]
    yb = q[:, 1] if t1 <= t2 else at_first[:, 1]
    prod = (xa * yb)[alive]
    return CorrelationResult(float(prod.mean()), t1, t2, Method.UNMEASURED,
                             stderr=float(prod.std(ddof=1) / np.sqrt(len(prod))))

"""Pointer measurements as branch splitting, and the two-time measured scenario.

During a window of length T_M the coupling -g A p_z dominates and the system
Hamiltonian is dropped: the system is frozen and every outcome's pointer is
shifted by g a T_M.  A measurement whose window ends at lab time t therefore
projects the system at system time ``t - T_M`` minus the length of any earlier
window (the system clock stops while a window is open).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .bohm import NODE_FLOOR, PilotWave, TrajectoryEnsemble, propagate
from .hilbert import DomainError, OscillatorBasis, WaveCoefficients, entangled_state
from .pointer import PointerModel, shortness
from .sqm import CorrelationResult, DiscreteObservable, Method
from .states import BinProjector, FramedState, cross_gram

# outcome branches with less weight than this are dropped (and counted)
ZERO_WEIGHT = 1e-14
MIN_SEPARATION = 4.0
NORM_TOL = 1e-8
MAX_DROPOUT = 0.005


class ProtocolError(RuntimeError):
    """A device was asked to measure twice without being reset."""


@dataclass(frozen=True)
class Branch:
    label: tuple
    state: FramedState
    offset_a: float | None = None
    offset_b: float | None = None

    @property
    def weight(self) -> float:
        return self.state.norm_squared


@dataclass(frozen=True)
class BranchState:
    """Sum of branches psi_label(x, y) eta(zA - oA) eta(zB - oB) at a system time."""

    branches: tuple
    time_stamp: float
    basis: OscillatorBasis
    devices: dict = field(default_factory=dict)
    dropped: dict = field(default_factory=dict)
    notes: tuple = ()

    @classmethod
    def initial(cls, wave: WaveCoefficients, basis: OscillatorBasis, t: float = 0.0) -> BranchState:
        return cls((Branch((None, None), FramedState.from_wave(wave, basis)),), t, basis)

    @property
    def total_norm(self) -> float:
        return float(sum(b.weight for b in self.branches))

    def evolved(self, t: float) -> BranchState:
        """The same state at a later system time (frames carry the free evolution)."""
        return BranchState(self.branches, t, self.basis, self.devices, self.dropped, self.notes)

    def pilot_wave(self, **kw) -> PilotWave:
        pa = self.devices.get("A", (None,))[0]
        pb = self.devices.get("B", (None,))[0]
        return PilotWave([(b.state, b.offset_a, b.offset_b) for b in self.branches], self.basis,
                         kw.pop("pointer_a", pa), kw.pop("pointer_b", pb), **kw)


@dataclass(frozen=True)
class OutcomeRegion:
    """Pointer read-out region; ``None`` on a side means the whole line."""

    label: tuple
    zA_interval: tuple | None = None
    zB_interval: tuple | None = None


def apply_measurement(state: BranchState, device: PointerModel, observable: DiscreteObservable,
                      which: str) -> BranchState:
    """Split every branch by the outcomes of ``observable`` on particle ``which``."""
    if which not in ("A", "B"):
        raise DomainError(f"which must be 'A' or 'B', got {which!r}")
    if which in state.devices:
        raise ProtocolError(f"device {which} has already fired")
    t = state.time_stamp
    pos = 0 if which == "A" else 1
    new, dropped = [], 0
    for br in state.branches:
        for k, (a, proj) in enumerate(zip(observable.eigenvalues, observable.projectors)):
            sub = br.state.project(which, proj, t)
            if sub.norm_squared <= ZERO_WEIGHT:
                dropped += 1
                continue
            label = list(br.label)
            label[pos] = k
            off = float(device.offset(a))
            oa, ob = (off, br.offset_b) if which == "A" else (br.offset_a, off)
            new.append(Branch(tuple(label), sub, oa, ob))
    notes = list(state.notes)
    s = device.separation_ratio(observable.min_gap)
    if s < MIN_SEPARATION:
        notes.append(f"device {which}: separation ratio {s:.3g} < {MIN_SEPARATION:g}")
    devices = dict(state.devices)
    devices[which] = (device, observable)
    tally = dict(state.dropped)
    tally[which] = dropped
    out = BranchState(tuple(new), t, state.basis, devices, tally, tuple(notes))
    if abs(out.total_norm - state.total_norm) > NORM_TOL:
        raise DomainError(f"branch norms changed by {out.total_norm - state.total_norm:.2e} in measurement")
    return out


def _pair_overlaps(pointer, offsets):
    o = np.array([pointer.ready_center if v is None else v for v in offsets])
    return np.exp(-((o[:, None] - o[None, :]) ** 2) / (8.0 * pointer.sigma ** 2)), o


def branch_overlap_report(state: BranchState) -> float:
    """Largest pointer overlap between branches with different labels."""
    nb = len(state.branches)
    if nb < 2:
        return 0.0
    total = np.ones((nb, nb))
    for side, attr in (("A", "offset_a"), ("B", "offset_b")):
        if side in state.devices:
            ov, _ = _pair_overlaps(state.devices[side][0], [getattr(b, attr) for b in state.branches])
            total *= ov
    labels = [b.label for b in state.branches]
    distinct = np.array([[la != lb for lb in labels] for la in labels])
    return float(np.max(total[distinct])) if distinct.any() else 0.0


def _system_pairs(state: BranchState):
    """Branch pairs (i, j) with nonzero system overlap, and the overlaps <psi_i|psi_j>.

    Branches projected onto disjoint bins are exactly orthogonal, so only a
    few pairs survive; they are found from the distinct frames first.
    """
    basis = state.basis
    br = state.branches
    index, grams = {}, {}
    for side in ("a", "b"):
        frames, idx = [], []
        for b in br:
            f = getattr(b.state, f"frame_{side}")
            if f not in frames:
                frames.append(f)
            idx.append(frames.index(f))
        index[side] = np.array(idx)
        grams[side] = [[cross_gram(f1, f2, basis) for f2 in frames] for f1 in frames]
    nz = {s_: np.array([[g.any() for g in row] for row in grams[s_]]) for s_ in ("a", "b")}
    ia, ib = index["a"], index["b"]
    cand = nz["a"][ia][:, ia] & nz["b"][ib][:, ib]
    pi, pj, vals = [], [], []
    for i, j in zip(*np.nonzero(np.triu(cand))):
        ga, gb = grams["a"][ia[i]][ia[j]], grams["b"][ib[i]][ib[j]]
        v = np.sum(br[i].state.coeffs.conj() * (ga @ br[j].state.coeffs @ gb.T))
        pi.append(i)
        pj.append(j)
        vals.append(v)
        if i != j:
            pi.append(j)
            pj.append(i)
            vals.append(np.conj(v))
    return np.array(pi, dtype=int), np.array(pj, dtype=int), np.array(vals, dtype=complex)


def _region_integrals(pointer, o_i, o_j, interval):
    """Integral over ``interval`` of eta(z - o_i) eta(z - o_j) for paired offsets."""
    ov = np.exp(-((o_i - o_j) ** 2) / (8.0 * pointer.sigma ** 2))
    if interval is None:
        return ov
    lo, hi = interval
    mid = 0.5 * (o_i + o_j)
    return ov * (ndtr((hi - mid) / pointer.sigma) - ndtr((lo - mid) / pointer.sigma))


def _check_disjoint(regions):
    def apart(i1, i2):
        return i1 is not None and i2 is not None and (i1[1] <= i2[0] or i2[1] <= i1[0])

    for r1, r2 in itertools.combinations(regions, 2):
        if not (apart(r1.zA_interval, r2.zA_interval) or apart(r1.zB_interval, r2.zB_interval)):
            raise DomainError(f"outcome regions {r1.label} and {r2.label} overlap")


@dataclass(frozen=True)
class BornResult:
    probabilities: dict
    cross_terms: dict
    epsilon: float

    @property
    def max_cross(self) -> float:
        return max((abs(v) for v in self.cross_terms.values()), default=0.0)


def born_probabilities(state: BranchState, regions) -> BornResult:
    """Probability that the pointers end in each region, split into branch-diagonal and cross parts."""
    _check_disjoint(regions)
    pi, pj, sys = _system_pairs(state)
    br = state.branches
    diag = pi == pj
    factors = {}
    for side, attr in (("A", "offset_a"), ("B", "offset_b")):
        if side in state.devices:
            dev = state.devices[side][0]
            o = np.array([dev.ready_center if getattr(b, attr) is None else getattr(b, attr) for b in br])
            factors[side] = (dev, o[pi], o[pj])
    cache = {}

    def side_factor(side, interval):
        key = (side, interval)
        if key not in cache:
            if side in factors:
                dev, oi, oj = factors[side]
                cache[key] = _region_integrals(dev, oi, oj, interval)
            elif interval is None:
                cache[key] = 1.0
            else:
                raise DomainError(f"a region reads pointer {side}, which never fired")
        return cache[key]

    probs, cross = {}, {}
    for reg in regions:
        w = sys * side_factor("A", reg.zA_interval) * side_factor("B", reg.zB_interval)
        probs[reg.label] = float(np.real(np.sum(w)))
        cross[reg.label] = float(np.real(np.sum(w[~diag])))
    return BornResult(probs, cross, branch_overlap_report(state))


def outcome_regions(state: BranchState) -> list[OutcomeRegion]:
    """Midpoint-cut pointer regions for every outcome combination of the fired devices."""
    per_side = {}
    for side in ("A", "B"):
        if side in state.devices:
            dev, obs = state.devices[side]
            per_side[side] = list(enumerate(dev.regions(dev.offset(obs.eigenvalues))))
        else:
            per_side[side] = [(None, None)]
    return [OutcomeRegion((ia, ib), za, zb) for (ia, za), (ib, zb) in itertools.product(per_side["A"], per_side["B"])]


@dataclass(frozen=True)
class Timeline:
    """Lab times t1, t2 at which Alice's and Bob's windows close, and the system times of their projections."""

    t1: float
    t2: float
    tau_a: float
    tau_b: float
    order: str  # "AB", "BA" or "simultaneous"


def scenario_timeline(t1: float, t2: float, T_M: float) -> Timeline:
    """Windows occupy [t - T_M, t].  Overlapping windows count as simultaneous."""
    if min(t1, t2) < T_M:
        raise DomainError(f"measurement times must be at least T_M = {T_M}")
    if abs(t1 - t2) < T_M:
        tau = min(t1, t2) - T_M
        return Timeline(t1, t2, tau, tau, "simultaneous")
    if t1 < t2:
        return Timeline(t1, t2, t1 - T_M, t2 - 2 * T_M, "AB")
    return Timeline(t1, t2, t1 - 2 * T_M, t2 - T_M, "BA")


@dataclass(frozen=True)
class ScenarioResult:
    table: np.ndarray
    cross_terms: np.ndarray
    epsilon: float
    timeline: Timeline
    first: BranchState
    final: BranchState
    wave: WaveCoefficients
    obs_a: DiscreteObservable
    obs_b: DiscreteObservable
    pointer_a: PointerModel
    pointer_b: PointerModel
    shortness: float

    @property
    def basis(self) -> OscillatorBasis:
        return self.final.basis

    @property
    def epsilon_bound(self) -> float:
        return max(self.pointer_a.epsilon(self.obs_a.min_gap), self.pointer_b.epsilon(self.obs_b.min_gap))

    def conditionals(self) -> np.ndarray:
        """P(second outcome | first outcome) from the full table; rows with zero weight are NaN."""
        tab = self.table if self.timeline.order != "BA" else self.table.T
        tot = tab.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, tab / tot, np.nan)


def _table(state: BranchState, k: int, l: int):
    res = born_probabilities(state, outcome_regions(state))
    tab = np.zeros((k, l))
    cross = np.zeros((k, l))
    for (ia, ib), p in res.probabilities.items():
        tab[ia, ib] = p
        cross[ia, ib] = res.cross_terms[(ia, ib)]
    return tab, cross, res.epsilon


def run_two_time_scenario(basis: OscillatorBasis, pointer_a: PointerModel, pointer_b: PointerModel,
                          obs_a: DiscreteObservable, obs_b: DiscreteObservable, t1: float, t2: float,
                          wave: WaveCoefficients | None = None) -> ScenarioResult:
    """Joint outcome table P(a, b) for Alice's window closing at t1 and Bob's at t2."""
    wave = entangled_state(basis) if wave is None else wave
    if pointer_a.T_M != pointer_b.T_M:
        raise DomainError("both devices must use the same window length")
    tl = scenario_timeline(t1, t2, pointer_a.T_M)
    st = BranchState.initial(wave, basis)
    if tl.order == "BA":
        first = apply_measurement(st.evolved(tl.tau_b), pointer_b, obs_b, "B")
        final = apply_measurement(first.evolved(tl.tau_a), pointer_a, obs_a, "A")
    else:
        first = apply_measurement(st.evolved(tl.tau_a), pointer_a, obs_a, "A")
        final = apply_measurement(first.evolved(tl.tau_b), pointer_b, obs_b, "B")
    tab, cross, eps = _table(final, len(obs_a), len(obs_b))
    return ScenarioResult(tab, cross, eps, tl, first, final, wave, obs_a, obs_b, pointer_a, pointer_b,
                          shortness(wave, basis, pointer_a.T_M))


def measured_two_time_correlation(table, obs_a: DiscreteObservable, obs_b: DiscreteObservable,
                                  t1: float = np.nan, t2: float = np.nan) -> CorrelationResult:
    value = float(obs_a.eigenvalues @ np.asarray(table) @ obs_b.eigenvalues)
    return CorrelationResult(value, t1, t2, Method.MEASURED)


def effective_collapse(state: BranchState, label: tuple) -> BranchState:
    """Keep only the branch with ``label``, renormalized."""
    keep = [b for b in state.branches if b.label == tuple(label)]
    if not keep:
        raise DomainError(f"no branch with label {label}")
    p = sum(b.weight for b in keep)
    if p <= 0:
        raise DomainError(f"label {label} has zero probability")
    scale = 1.0 / np.sqrt(p)
    branches = tuple(Branch(b.label, b.state.scaled(scale), b.offset_a, b.offset_b) for b in keep)
    return BranchState(branches, state.time_stamp, state.basis, state.devices, state.dropped, state.notes)


def collapsed_conditionals(result: ScenarioResult) -> np.ndarray:
    """P(second | first) computed from the collapsed first-stage branches.

    Each first outcome's branch is renormalized, carried to the second window
    and measured there; the second pointer's regions give the conditional.
    Rows of outcomes that never occurred are NaN.
    """
    tl = result.timeline
    first_side = "B" if tl.order == "BA" else "A"
    second = ("A", result.pointer_a, result.obs_a, tl.tau_a) if first_side == "B" else \
        ("B", result.pointer_b, result.obs_b, tl.tau_b)
    n_first = len(result.obs_b) if first_side == "B" else len(result.obs_a)
    n_second = len(second[2])
    out = np.full((n_first, n_second), np.nan)
    labels = {b.label for b in result.first.branches}
    for lab in labels:
        k = lab[1] if first_side == "B" else lab[0]
        collapsed = effective_collapse(result.first, lab)
        after = apply_measurement(collapsed.evolved(second[3]), second[1], second[2], second[0])
        res = born_probabilities(after, outcome_regions(after))
        row = np.zeros(n_second)
        for (ia, ib), p in res.probabilities.items():
            row[ib if first_side == "A" else ia] += p
        out[k] = row / row.sum()
    return out


@dataclass(frozen=True)
class SamplerResult:
    counts: np.ndarray
    n_used: int
    dropouts: int
    ambiguous: int = 0

    @property
    def table(self) -> np.ndarray:
        return self.counts / max(self.n_used, 1)

    @property
    def dropout_fraction(self) -> float:
        return self.dropouts / max(self.n_used + self.dropouts, 1)


def _bin_values(obs: DiscreteObservable, coord):
    if not all(isinstance(p, BinProjector) for p in obs.projectors):
        raise DomainError("trajectory read-out needs position-bin observables")
    idx = np.full(len(coord), -1)
    for k, p in enumerate(obs.projectors):
        idx[p.contains(coord)] = k
    return obs.eigenvalues[idx]


def _region_index(pointer, obs, z):
    cuts = [hi for _, hi in pointer.regions(pointer.offset(obs.eigenvalues))][:-1]
    return np.searchsorted(np.asarray(cuts), z, side="right")


def trajectory_outcome_sampler(ensemble: TrajectoryEnsemble, scenario: ScenarioResult, dt: float = 1e-2,
                               with_b: bool = True, max_dropout: float = MAX_DROPOUT,
                               node_floor: float = NODE_FLOOR) -> SamplerResult:
    """Carry each configuration through both windows and tally the pointer read-outs.

    Between windows the system coordinates follow the branch-sum guidance
    field (pointers at rest); inside a window the system is frozen and the
    pointer moves by g a(x) T_M, with a(x) the value of the bin holding x.
    With ``with_b=False`` Bob's window never opens (his pointer stays ready).
    """
    if ensemble.t != 0.0:
        raise DomainError("the ensemble must be sampled at t = 0")
    tl = scenario.timeline
    pa, pb = scenario.pointer_a, scenario.pointer_b
    basis = scenario.basis
    q, alive = np.array(ensemble.q), np.array(ensemble.alive)
    bare = PilotWave.bare(scenario.wave, basis, pa, pb, node_floor=node_floor)
    after_first = scenario.first.pilot_wave(pointer_a=pa, pointer_b=pb, node_floor=node_floor)

    def window(side):
        if side == "A":
            q[:, 2] += pa.g * pa.T_M * _bin_values(scenario.obs_a, q[:, 0])
        else:
            q[:, 3] += pb.g * pb.T_M * _bin_values(scenario.obs_b, q[:, 1])

    if tl.order == "simultaneous":
        q, alive = propagate(bare, q, 0.0, tl.tau_a, dt, alive=alive)
        window("A")
        if with_b:
            window("B")
    else:
        first, second = ("A", "B") if tl.order == "AB" else ("B", "A")
        tau_first, tau_second = (tl.tau_a, tl.tau_b) if tl.order == "AB" else (tl.tau_b, tl.tau_a)
        q, alive = propagate(bare, q, 0.0, tau_first, dt, alive=alive)
        window(first)
        if with_b or first == "B":
            q, alive = propagate(after_first, q, tau_first, tau_second, dt, graded=True, alive=alive)
        if with_b or second == "A":
            window(second)
    ia = _region_index(pa, scenario.obs_a, q[alive, 2])
    k, l = len(scenario.obs_a), len(scenario.obs_b)
    if with_b:
        ib = _region_index(pb, scenario.obs_b, q[alive, 3])
    else:
        ib = np.zeros(len(ia), dtype=int)
        l = 1
    counts = np.zeros((k, l))
    np.add.at(counts, (ia, ib), 1)
    res = SamplerResult(counts, int(alive.sum()), int((~alive).sum()))
    if res.dropout_fraction > max_dropout:
        raise DropoutError(res)
    return res


class DropoutError(RuntimeError):
    def __init__(self, result: SamplerResult):
        super().__init__(f"node dropout fraction {result.dropout_fraction:.2%} exceeds budget")
        self.result = result


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def multinomial_tv_bound(p, n: int, k: float = 4.0) -> float:
    """k sqrt(max p (1 - p) / n), the tolerance for an empirical table of n draws."""
    p = np.asarray(p)
    return k * float(np.sqrt(np.max(p * (1 - p)) / n))


# regression envelope for |measured - closed form|, fitted over 4-32 bins and
# separation ratios 3-8 on the standard delta-t grid (both orders), times 1.5
RECONCILE_C1 = 0.0
RECONCILE_C2 = 0.12


def reconciliation_bound(epsilon: float, delta: float) -> float:
    """Allowed gap between the measured and closed-form correlators: C1 eps + C2 delta^2."""
    return RECONCILE_C1 * epsilon + RECONCILE_C2 * delta ** 2

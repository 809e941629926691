"""Desk-scale invariant suite behind ``twotime verify``."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bohm import Configuration, PilotWave, propagate, sample_equilibrium, equivariance_check, unmeasured_two_time
from .config import ScenarioConfig, parse
from .hilbert import OscillatorBasis, coherent_amplitudes, evolve_free, product_of, random_state, WaveCoefficients
from .measurement import (BranchState, apply_measurement, born_probabilities, collapsed_conditionals,
                          measured_two_time_correlation, outcome_regions, reconciliation_bound,
                          run_two_time_scenario)
from .sqm import (BinnedObservable, closed_form_xx, factorized_joint, heisenberg_joint, heisenberg_two_time,
                  joint_equal_time, joint_table, truncation_leak)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _rng(cfg, k):
    return np.random.default_rng([cfg.monte_carlo.seed, k])


def check_orthonormality(cfg, ctx):
    b = ctx["basis"]
    err = float(np.max(np.abs(b.overlap - np.eye(b.n_max))))
    return err <= 1e-12, f"max |<m|n> - delta| = {err:.1e}"


def check_hermiticity(cfg, ctx):
    b, obs = ctx["basis"], ctx["obs"]
    mats = [b.x_matrix, b.x2_matrix, obs.matrix] + obs.matrices
    err = max(float(np.max(np.abs(m - m.conj().T))) for m in mats)
    return err <= 1e-12, f"max |M - M^H| = {err:.1e}"


def check_partition(cfg, ctx):
    b = ctx["basis"]
    err = max(float(np.max(np.abs(sum(BinnedObservable.uniform(k, b).matrices) - np.eye(b.n_max))))
              for k in (2, 4, 8, 16))
    return err <= 1e-10, f"max |sum P_i - 1| = {err:.1e}"


def check_unitarity(cfg, ctx):
    b = ctx["basis"]
    s = random_state(b, _rng(cfg, 1), levels=min(6, b.n_max))
    err = max(abs(evolve_free(s, b, t).norm_squared - s.norm_squared) for t in (0.3, 17.0, -250.0, 1e3))
    return err <= 1e-14, f"max norm change = {err:.1e}"


def check_factorization(cfg, ctx, draws=50):
    b = ctx["basis"]
    rng = _rng(cfg, 2)
    worst = 0.0
    for _ in range(draws):
        s = random_state(b, rng, levels=min(4, b.n_max))
        obs = BinnedObservable.uniform(int(rng.integers(2, 9)), b)
        i, j = rng.integers(0, len(obs), 2)
        t1, t2 = rng.uniform(0, 6, 2)
        for a, c in ((t1, t2), (t2, t1)):
            f = factorized_joint(s, obs.projectors[i], obs.projectors[j], a, c, b)
            h = heisenberg_joint(s, obs.projectors[i], obs.projectors[j], a, c, b)
            worst = max(worst, abs(f - h))
    return worst <= 1e-10, f"max |factorized - heisenberg| = {worst:.1e} over {draws} draws x 2 orderings"


def check_ordering(cfg, ctx):
    wave, obs = ctx["wave"], ctx["obs"]
    err = max(abs(heisenberg_two_time(wave, obs, obs, t1, t2).value - heisenberg_two_time(wave, obs, obs, t2, t1).value)
              for t1, t2 in cfg.times.grid())
    return err <= 1e-12, f"max |C(t1,t2) - C(t2,t1)| = {err:.1e}"


def check_stationarity(cfg, ctx):
    b, obs = ctx["basis"], ctx["obs"]
    from .hilbert import entangled_state
    psi = entangled_state(b)
    ref = [joint_equal_time(psi, pa, pb, 0.0, b) for pa in obs.projectors for pb in obs.projectors]
    err = 0.0
    for t in (0.7, 3.1, 40.0):
        vals = [joint_equal_time(psi, pa, pb, t, b) for pa in obs.projectors for pb in obs.projectors]
        err = max(err, float(np.max(np.abs(np.subtract(vals, ref)))))
    return err <= 1e-12, f"max single-time change = {err:.1e}"


def check_simplex(cfg, ctx):
    wave, obs = ctx["wave"], ctx["obs"]
    lo, hi, tot = 1.0, 0.0, 0.0
    for t1, t2 in cfg.times.grid():
        tab = joint_table(wave, obs, obs, t1, t2)
        lo, hi = min(lo, tab.min()), max(hi, tab.max())
        tot = max(tot, abs(tab.sum() - 1))
    ok = lo >= -1e-10 and hi <= 1 + 1e-10 and tot <= 1e-8
    return ok, f"min {lo:.1e}, max {hi:.3f}, max |sum - 1| = {tot:.1e}"


def check_refinement(cfg, ctx):
    from .hilbert import entangled_state
    from .sqm import binned_closed_form_xx
    import warnings
    b = ctx["basis"]
    psi = entangled_state(b)
    exact = closed_form_xx(b, 0.0, 0.0).value
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        errs = [abs(binned_closed_form_xx(BinnedObservable.uniform(k, b), psi, 0.0, 0.0).value - exact) for k in (4, 8, 16)]
    ok = errs[0] > errs[1] > errs[2]
    return ok, "errors " + ", ".join(f"{e:.1e}" for e in errs) + " for 4, 8, 16 bins"


def check_real_freeze(cfg, ctx):
    b = ctx["basis"]
    rng = _rng(cfg, 3)
    c = np.zeros((b.n_max, b.n_max))
    k = min(4, b.n_max)
    c[:k, :k] = rng.normal(size=(k, k))
    w = PilotWave.bare(WaveCoefficients(c / np.linalg.norm(c)), b)
    q = np.zeros((1000, 4))
    q[:, :2] = rng.normal(size=(1000, 2))
    vx, vy, node = w.velocity(q, 0.0)
    err = float(np.max(np.hypot(vx, vy)[~node]))
    return err < 1e-12, f"max |v| = {err:.1e} at 1000 configurations"


def _moving_state(b):
    return product_of(b, coherent_amplitudes(b, 0.8 + 0.3j), [1.0, 0.0, np.exp(2.5j)])


def check_equivariance(cfg, ctx):
    b = ctx["basis"]
    wave = _moving_state(b)
    w = PilotWave.bare(wave, b)
    ens = sample_equilibrium(w, cfg.verify.n, cfg.monte_carlo.seed + 7)
    q, alive = propagate(w, ens.q, 0.0, 0.5, 1e-2)
    z = equivariance_check(w, ens.moved(q, 0.5, alive), 0.5)
    worst = max(abs(v) for v in z.values())
    return worst <= 3.0, "z-scores " + ", ".join(f"{k}={v:+.2f}" for k, v in z.items())


def check_continuity(cfg, ctx):
    b = ctx["basis"]
    w = PilotWave.bare(_moving_state(b), b)
    res = []
    for h in (0.02, 0.01):
        x0, y0, t0 = 0.3, -0.2, 0.4
        xs = x0 + h * np.array([-1, 0, 1])
        q = np.zeros((9, 4))
        q[:, 0] = np.repeat(xs, 3)
        q[:, 1] = np.tile(y0 + h * np.array([-1, 0, 1]), 3)

        def rho_j(t):
            psi, dx, dy = w.evaluate(q, t, derivative=True)
            rho = np.abs(psi) ** 2
            return rho, np.imag(psi.conj() * dx) / b.mass, np.imag(psi.conj() * dy) / b.mass

        r_p, _, _ = rho_j(t0 + h)
        r_m, _, _ = rho_j(t0 - h)
        _, jx, jy = rho_j(t0)
        jx, jy = jx.reshape(3, 3), jy.reshape(3, 3)
        div = (jx[2, 1] - jx[0, 1]) / (2 * h) + (jy[1, 2] - jy[1, 0]) / (2 * h)
        drho = (r_p.reshape(3, 3)[1, 1] - r_m.reshape(3, 3)[1, 1]) / (2 * h)
        res.append(abs(drho + div))
    order = np.log2(res[0] / res[1]) if res[1] > 0 else np.inf
    return order > 1.5, f"residuals {res[0]:.1e}, {res[1]:.1e} (observed order {order:.2f})"


def check_determinism(cfg, ctx):
    b = ctx["basis"]
    w = PilotWave.bare(_moving_state(b), b)
    e1 = sample_equilibrium(w, 3000, 99)
    e2 = sample_equilibrium(w, 3000, 99)
    p1, _ = propagate(w, e1.q, 0, 0.2, 1e-2)
    p2, _ = propagate(w, e2.q, 0, 0.2, 1e-2)
    ok = np.array_equal(e1.q, e2.q) and np.array_equal(p1, p2)
    return ok, "bitwise equal ensembles and paths" if ok else "ensembles or paths differ"


def check_unmeasured_constant(cfg, ctx):
    ens, w = ctx.get("ensemble"), ctx.get("bare")
    if ens is None:
        return True, "skipped (unmeasured pipeline not requested)"
    ts = np.linspace(0.5, 4.0, 5)
    vals = [unmeasured_two_time(ens, w, a, c, cfg.monte_carlo.dt) for a in ts for c in ts]
    spread = max(v.value for v in vals) - min(v.value for v in vals)
    sig = max(v.stderr for v in vals)
    return spread < 4 * sig or spread < 1e-12, f"spread {spread:.2e} vs 4 sigma = {4 * sig:.2e}"


def check_norm_conservation(cfg, ctx):
    b, obs, pa = ctx["basis"], ctx["obs"], ctx["pointer_a"]
    st = BranchState.initial(ctx["wave"], b).evolved(0.4)
    s1 = apply_measurement(st, pa, obs, "A")
    s2 = apply_measurement(s1.evolved(1.3), ctx["pointer_b"], obs, "B")
    err = max(abs(s.total_norm - 1) for s in (s1, s2))
    return err <= 1e-8, f"max |sum ||psi_k||^2 - 1| = {err:.1e}"


def _scenarios(cfg, ctx):
    if "scenarios" not in ctx:
        b, obs = ctx["basis"], ctx["obs"]
        ctx["scenarios"] = {(t1, t2): run_two_time_scenario(b, ctx["pointer_a"], ctx["pointer_b"], obs, obs, t1, t2,
                                                             ctx["wave"])
                            for t1, t2 in cfg.times.grid()}
    return ctx["scenarios"]


def check_cross_terms(cfg, ctx):
    worst, ratio = 0.0, 0.0
    for r in _scenarios(cfg, ctx).values():
        worst = max(worst, float(np.max(np.abs(r.cross_terms))))
        ratio = max(ratio, float(np.max(np.abs(r.cross_terms))) - r.epsilon)
    return ratio <= 0, f"max cross term {worst:.1e}"


def check_collapse(cfg, ctx, count=10):
    b, obs = ctx["basis"], ctx["obs"]
    rng = _rng(cfg, 4)
    worst, budget = 0.0, 0.0
    for _ in range(count):
        wave = random_state(b, rng, levels=min(3, b.n_max))
        t1, t2 = rng.uniform(0.05, 3.0, 2)
        r = run_two_time_scenario(b, ctx["pointer_a"], ctx["pointer_b"], obs, obs, t1, t2, wave)
        diff = np.nanmax(np.abs(collapsed_conditionals(r) - r.conditionals()))
        worst = max(worst, diff - r.epsilon)
        budget = max(budget, diff)
    return worst <= 1e-8, f"max conditional difference {budget:.1e} over {count} scenarios"


def check_ordering_symmetry(cfg, ctx):
    b, obs = ctx["basis"], ctx["obs"]
    worst, ok = 0.0, True
    for t1, t2 in cfg.times.grid():
        if t1 == t2:
            continue
        r1 = run_two_time_scenario(b, ctx["pointer_a"], ctx["pointer_b"], obs, obs, t1, t2, ctx["wave"].swapped())
        r2 = run_two_time_scenario(b, ctx["pointer_a"], ctx["pointer_b"], obs, obs, t2, t1, ctx["wave"])
        d = float(np.max(np.abs(r1.table - r2.table.T)))
        worst = max(worst, d)
        ok &= d <= 2 * max(r1.epsilon, r2.epsilon) + 1e-12
    return ok, f"max |P(t1,t2) - P(t2,t1)^T| = {worst:.1e} (swapped state)"


def check_reconciliation(cfg, ctx):
    b, obs = ctx["basis"], ctx["obs"]
    worst, eps, regress = 0.0, 0.0, True
    for (t1, t2), r in _scenarios(cfg, ctx).items():
        m = measured_two_time_correlation(r.table, obs, obs).value
        c = ctx["reference"](t1, t2)
        worst = max(worst, abs(m - c))
        eps = max(eps, r.epsilon)
        regress &= abs(m - c) <= reconciliation_bound(r.epsilon, obs.delta)
    ok = worst <= cfg.verify.reconciliation_tol and eps <= cfg.verify.epsilon_budget and regress
    return ok, (f"max |measured - closed| = {worst:.2e} (tol {cfg.verify.reconciliation_tol}), "
                f"epsilon = {eps:.1e} (budget {cfg.verify.epsilon_budget:g}), regression bound {'ok' if regress else 'violated'}")


def check_discrepancy(cfg, ctx):
    if cfg.state.kind != "entangled01" or "ensemble" not in ctx:
        return True, "skipped (needs the entangled state and the unmeasured pipeline)"
    b = ctx["basis"]
    dt = np.pi / b.delta_e
    u = unmeasured_two_time(ctx["ensemble"], ctx["bare"], 1.0, 1.0 + dt, cfg.monte_carlo.dt)
    c = closed_form_xx(b, 1.0, 1.0 + dt).value
    return abs(u.value - c) >= 0.9, f"unmeasured {u.value:.4f} +- {u.stderr:.4f}, closed form {c:.4f}"


def check_shortness(cfg, ctx):
    from .pointer import shortness
    s = shortness(ctx["wave"], ctx["basis"], ctx["pointer_a"].T_M)
    return s < 0.01, f"|| (U(T_M) - phase) psi || = {s:.2e}"


def check_roundtrip(cfg, ctx):
    again = parse(cfg.to_toml())
    return again == cfg, "parse(serialize(config)) == config"


CHECKS = [
    ("hilbert.orthonormality", check_orthonormality),
    ("hilbert.hermiticity", check_hermiticity),
    ("hilbert.partition_of_unity", check_partition),
    ("hilbert.unitarity", check_unitarity),
    ("sqm.factorization_identity", check_factorization),
    ("sqm.ordering_invariance", check_ordering),
    ("sqm.stationarity", check_stationarity),
    ("sqm.probability_simplex", check_simplex),
    ("sqm.delta_refinement", check_refinement),
    ("bohm.real_wave_freeze", check_real_freeze),
    ("bohm.equivariance", check_equivariance),
    ("bohm.continuity_equation", check_continuity),
    ("bohm.determinism", check_determinism),
    ("bohm.unmeasured_constant", check_unmeasured_constant),
    ("measurement.norm_conservation", check_norm_conservation),
    ("measurement.cross_term_bound", check_cross_terms),
    ("measurement.collapse_theorem", check_collapse),
    ("measurement.ordering_symmetry", check_ordering_symmetry),
    ("measurement.reconciliation", check_reconciliation),
    ("measurement.discrepancy", check_discrepancy),
    ("measurement.shortness", check_shortness),
    ("cli.config_roundtrip", check_roundtrip),
]


def build_context(cfg: ScenarioConfig) -> dict:
    from .runner import heisenberg_two_time_x
    b = cfg.build_basis()
    wave = cfg.build_state(b)
    obs = cfg.build_observable(b)
    ctx = {"basis": b, "wave": wave, "obs": obs, "pointer_a": cfg.pointer_a.model(obs.min_gap),
           "pointer_b": cfg.pointer_b.model(obs.min_gap)}
    if cfg.state.kind == "entangled01":
        ctx["reference"] = lambda t1, t2: closed_form_xx(b, t1, t2).value
    else:
        ctx["reference"] = lambda t1, t2: heisenberg_two_time_x(wave, b, t1, t2)
    if "unmeasured" in cfg.pipelines:
        ctx["bare"] = PilotWave.bare(wave, b, node_floor=cfg.monte_carlo.node_floor)
        ctx["ensemble"] = sample_equilibrium(ctx["bare"], cfg.verify.n, cfg.monte_carlo.seed)
    return ctx


def run_checks(cfg: ScenarioConfig, out=print) -> tuple[list[Check], list[str]]:
    ctx = build_context(cfg)
    warnings_ = []
    leak = truncation_leak(ctx["wave"], ctx["obs"])
    if leak > cfg.verify.leak_warning:
        warnings_.append(f"truncation leak {leak:.3f} exceeds {cfg.verify.leak_warning:g}: "
                         f"n_max = {cfg.basis.n_max} cannot represent the projected states")
    results = []
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            ok, detail = fn(cfg, ctx)
        except Exception as err:  # a crashing check is a failed check
            ok, detail = False, f"error: {type(err).__name__}: {err}"
        results.append(Check(name, bool(ok), detail))
        out(f"{'PASS' if ok else 'FAIL'}  {name:<34} {detail}  [{time.perf_counter() - start:.1f}s]")
    for w in warnings_:
        out(f"WARNING  {w}")
    return results, warnings_

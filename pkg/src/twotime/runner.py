"""Execute a scenario configuration and write CSV, JSON and a plotting script."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bohm import PilotWave, sample_equilibrium, unmeasured_two_time
from .config import ScenarioConfig
from .measurement import (DropoutError, measured_two_time_correlation, run_two_time_scenario,
                          trajectory_outcome_sampler)
from .pointer import shortness
from .sqm import (closed_form_xx, heisenberg_two_time, joint_table, truncation_leak)

log = logging.getLogger(__name__)

COLUMNS = (
    "t1", "t2", "delta_t",
    "closed_form", "heisenberg", "factorized", "binned",
    "unmeasured_bohm", "unmeasured_bohm_stderr",
    "measured_bohm_quadrature", "measured_bohm_trajectory", "measured_bohm_trajectory_stderr",
    "epsilon_actual", "dropouts", "skipped",
)


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


@dataclass
class RunReport:
    rows: list[dict]
    metadata: dict
    diagnostics: dict
    failed: bool = False
    failure: str = ""

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows:
            w.writerow([fmt(row.get(c)) for c in COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"metadata": self.metadata, "diagnostics": self.diagnostics, "rows": self.rows,
                           "failed": self.failed, "failure": self.failure}, indent=2, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


PLOT_SCRIPT = '''"""Plot the two-time correlator against t2 - t1 from a run CSV."""
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
out = sys.argv[2] if len(sys.argv) > 2 else path.rsplit(".", 1)[0] + ".png"
rows = sorted(csv.DictReader(open(path)), key=lambda r: float(r["delta_t"]))


def col(name):
    return [(float(r["delta_t"]), float(r[name])) for r in rows if r[name]]


fig, ax = plt.subplots(figsize=(6, 4))
for name, label, style in (("closed_form", "standard QM", "-"),
                           ("unmeasured_bohm", "unmeasured trajectories", "s"),
                           ("measured_bohm_quadrature", "measured (pointer model)", "o")):
    pts = col(name)
    if pts:
        ax.plot(*zip(*pts), style, label=label)
ax.set_xlabel("t2 - t1")
ax.set_ylabel("<x(t1) y(t2)>")
ax.legend()
fig.tight_layout()
fig.savefig(out, dpi=120)
print(out)
'''


def _row(cfg: ScenarioConfig, ctx: dict, t1: float, t2: float) -> dict:
    basis, wave, obs = ctx["basis"], ctx["wave"], ctx["obs"]
    want = set(cfg.pipelines)
    row = {"t1": t1, "t2": t2, "delta_t": t2 - t1}
    skipped = []
    if "closed_form" in want:
        if cfg.state.kind == "entangled01":
            row["closed_form"] = closed_form_xx(basis, t1, t2).value
        else:
            row["closed_form"] = heisenberg_two_time_x(wave, basis, t1, t2)
    if "heisenberg" in want:
        row["heisenberg"] = heisenberg_two_time(wave, obs, obs, t1, t2).value
    if "factorized" in want:
        row["factorized"] = float(obs.centers @ joint_table(wave, obs, obs, t1, t2) @ obs.centers)
    if "binned" in want:
        row["binned"] = float(obs.centers @ joint_table(wave, obs, obs, t1, t2, method="heisenberg") @ obs.centers)
    if "unmeasured" in want:
        res = unmeasured_two_time(ctx["ensemble"], ctx["bare"], t1, t2, cfg.monte_carlo.dt)
        row["unmeasured_bohm"], row["unmeasured_bohm_stderr"] = res.value, res.stderr
    scenario = None
    if want & {"measured_quadrature", "measured_trajectory"}:
        scenario = run_two_time_scenario(basis, ctx["pointer_a"], ctx["pointer_b"], obs, obs, t1, t2, wave)
        row["epsilon_actual"] = scenario.epsilon
        if "measured_quadrature" in want:
            row["measured_bohm_quadrature"] = measured_two_time_correlation(scenario.table, obs, obs, t1, t2).value
    if "measured_trajectory" in want:
        try:
            samp = trajectory_outcome_sampler(ctx["traj_ensemble"], scenario, cfg.monte_carlo.trajectory_dt,
                                              max_dropout=cfg.monte_carlo.max_dropout,
                                              node_floor=cfg.monte_carlo.node_floor)
        except DropoutError as err:
            row["dropouts"] = err.result.dropouts
            row["skipped"] = f"dropout budget exceeded ({err.result.dropout_fraction:.2%})"
            row["_budget_failure"] = True
            return row
        ab = np.outer(obs.centers, obs.centers)
        p = samp.table
        mean = float(np.sum(ab * p))
        var = float(np.sum(ab * ab * p)) - mean * mean
        row["measured_bohm_trajectory"] = mean
        row["measured_bohm_trajectory_stderr"] = float(np.sqrt(max(var, 0.0) / samp.n_used))
        row["dropouts"] = samp.dropouts
    for name, col in (("unmeasured", "unmeasured_bohm"), ("measured_trajectory", "measured_bohm_trajectory")):
        if name not in want:
            skipped.append(f"{col}: not requested")
    row["skipped"] = "; ".join(skipped)
    return row


def heisenberg_two_time_x(wave, basis, t1, t2) -> float:
    """<x(t1) y(t2)> with the unbinned position operator of the truncated basis."""
    e = basis.energies
    u1, u2 = np.exp(-1j * e * t1), np.exp(-1j * e * t2)
    xa = (u1.conj()[:, None] * basis.x_matrix) * u1[None, :]
    xb = (u2.conj()[:, None] * basis.x_matrix) * u2[None, :]
    c = wave.coeffs
    return float(np.real(np.sum(c.conj() * (xa @ c @ xb.T))))


def prepare(cfg: ScenarioConfig) -> dict:
    basis = cfg.build_basis()
    wave = cfg.build_state(basis)
    obs = cfg.build_observable(basis)
    pa = cfg.pointer_a.model(obs.min_gap)
    pb = cfg.pointer_b.model(obs.min_gap)
    ctx = {"basis": basis, "wave": wave, "obs": obs, "pointer_a": pa, "pointer_b": pb}
    want = set(cfg.pipelines)
    mc = cfg.monte_carlo
    if "unmeasured" in want:
        ctx["bare"] = PilotWave.bare(wave, basis, node_floor=mc.node_floor)
        ctx["ensemble"] = sample_equilibrium(ctx["bare"], mc.n, mc.seed)
    if "measured_trajectory" in want:
        bare = PilotWave.bare(wave, basis, pa, pb, node_floor=mc.node_floor)
        ctx["traj_ensemble"] = sample_equilibrium(bare, mc.trajectory_n, mc.seed + 1)
    return ctx


def diagnostics(cfg: ScenarioConfig, ctx: dict) -> dict:
    basis, wave, obs, pa, pb = (ctx[k] for k in ("basis", "wave", "obs", "pointer_a", "pointer_b"))
    return {
        "truncation_leak": truncation_leak(wave, obs),
        "idempotency_residual": obs.idempotency_residual,
        "tail_mass": max(obs.tail_mass(wave, "A"), obs.tail_mass(wave, "B")),
        "separation_ratio": [pa.separation_ratio(obs.min_gap), pb.separation_ratio(obs.min_gap)],
        "epsilon_bound": max(pa.epsilon(obs.min_gap), pb.epsilon(obs.min_gap)),
        "shortness": shortness(wave, basis, pa.T_M),
        "pointer_a": {"sigma": pa.sigma, "g": pa.g, "T_M": pa.T_M},
        "pointer_b": {"sigma": pb.sigma, "g": pb.g, "T_M": pb.T_M},
        "bin_centers": obs.centers.tolist(),
    }


def run(cfg: ScenarioConfig, threads: int = 1) -> RunReport:
    start = time.perf_counter()
    ctx = prepare(cfg)
    grid = cfg.times.grid()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda tt: _row(cfg, ctx, *tt), grid))
    failed = any(r.pop("_budget_failure", False) for r in rows)
    meta = {
        "version": __version__,
        "seed": cfg.monte_carlo.seed,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "threads": threads,
    }
    diag = diagnostics(cfg, ctx)
    if "ensemble" in ctx:
        diag["unmeasured_redraws"] = ctx["ensemble"].redraws
    log.info("run finished in %.1f s", time.perf_counter() - start)
    return RunReport(rows, meta, diag, failed, "node dropout budget exceeded" if failed else "")


def write_outputs(report: RunReport, cfg: ScenarioConfig) -> dict[str, Path]:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.output.stem + ("_partial" if report.failed else "")
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json", "plot": out / f"plot_{cfg.output.stem}.py"}
    paths["csv"].write_text(report.csv_text())
    paths["json"].write_text(report.to_json())
    paths["plot"].write_text(PLOT_SCRIPT.replace("{csv}", paths["csv"].name))
    return paths

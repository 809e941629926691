"""Scenario configuration: TOML on disk, validated with pydantic."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal

import numpy as np
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .hilbert import OscillatorBasis, WaveCoefficients, entangled_state, product_state
from .pointer import PointerModel
from .sqm import BinnedObservable

PIPELINES = ("closed_form", "heisenberg", "factorized", "binned", "unmeasured",
             "measured_quadrature", "measured_trajectory")


class ConfigError(ValueError):
    """Configuration could not be read or failed validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        raise ValueError("must be finite")
    return v


class BasisConfig(_Strict):
    mass: float = Field(1.0, gt=0)
    frequency: float = Field(1.0, gt=0)
    n_max: int = Field(32, ge=2, le=64)

    _fin = field_validator("mass", "frequency")(_finite)


class Amplitude(_Strict):
    m: int = Field(ge=0)
    n: int = Field(ge=0)
    re: float = 0.0
    im: float = 0.0


class StateConfig(_Strict):
    kind: Literal["entangled01", "product01", "product10", "custom"] = "entangled01"
    coefficients: list[Amplitude] = []

    @model_validator(mode="after")
    def _custom(self):
        if self.kind == "custom" and not self.coefficients:
            raise ValueError("custom state needs a non-empty 'coefficients' list")
        if self.kind != "custom" and self.coefficients:
            raise ValueError("'coefficients' is only used with kind = 'custom'")
        return self


class TimesConfig(_Strict):
    """Either a base ``t1`` with offsets ``delta`` (t2 = t1 + delta) or explicit ``pairs``."""

    t1: float = 1.0
    delta: list[float] = [0.0, math.pi / 4, math.pi / 2, math.pi, 2 * math.pi]
    pairs: list[tuple[float, float]] = []

    _fin = field_validator("t1")(_finite)

    @field_validator("delta")
    @classmethod
    def _fin_list(cls, v):
        for x in v:
            _finite(x)
        return v

    def grid(self) -> list[tuple[float, float]]:
        if self.pairs:
            return [tuple(p) for p in self.pairs]
        return [(self.t1, self.t1 + d) for d in self.delta]


class PointerConfig(_Strict):
    sigma: float = Field(0.05, gt=0)
    T_M: float = Field(0.01, gt=0)
    separation: float | None = Field(8.0, gt=0)
    g: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _one_of(self):
        if (self.separation is None) == (self.g is None):
            raise ValueError("give exactly one of 'separation' and 'g'")
        return self

    def model(self, gap: float) -> PointerModel:
        if self.g is not None:
            return PointerModel(sigma=self.sigma, g=self.g, T_M=self.T_M)
        return PointerModel.for_gap(gap, self.separation, self.sigma, self.T_M)


class BinsConfig(_Strict):
    count: int = Field(8, ge=1)
    lo: float = -4.0
    hi: float = 4.0

    @model_validator(mode="after")
    def _order(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError("need finite lo < hi")
        return self


class MonteCarloConfig(_Strict):
    n: int = Field(100_000, ge=1)
    trajectory_n: int = Field(10_000, ge=1)
    seed: int = Field(12345, ge=0)
    dt: float = Field(1e-3, gt=0)
    trajectory_dt: float = Field(1e-2, gt=0)
    node_floor: float = Field(1e-12, gt=0)
    max_dropout: float = Field(0.005, ge=0, le=1)


class OutputConfig(_Strict):
    dir: str = "out"
    stem: str = "twotime"


class VerifyConfig(_Strict):
    epsilon_budget: float = Field(1e-3, gt=0)
    reconciliation_tol: float = Field(0.02, gt=0)
    leak_warning: float = Field(0.1, gt=0)
    n: int = Field(20_000, ge=100)


class ScenarioConfig(_Strict):
    basis: BasisConfig = BasisConfig()
    state: StateConfig = StateConfig()
    times: TimesConfig = TimesConfig()
    pointer_a: PointerConfig = PointerConfig()
    pointer_b: PointerConfig = PointerConfig()
    bins: BinsConfig = BinsConfig()
    monte_carlo: MonteCarloConfig = MonteCarloConfig()
    pipelines: list[Literal[PIPELINES]] = list(PIPELINES)
    output: OutputConfig = OutputConfig()
    verify: VerifyConfig = VerifyConfig()

    @model_validator(mode="after")
    def _check(self):
        for m in self.state.coefficients:
            if m.m >= self.basis.n_max or m.n >= self.basis.n_max:
                raise ValueError(f"coefficient index ({m.m}, {m.n}) outside n_max = {self.basis.n_max}")
        if self.pointer_a.T_M != self.pointer_b.T_M:
            raise ValueError("pointer_a and pointer_b must share T_M")
        for t1, t2 in self.times.grid():
            if min(t1, t2) < self.pointer_a.T_M:
                raise ValueError(f"times ({t1}, {t2}) must be >= T_M = {self.pointer_a.T_M}")
        return self

    # builders ------------------------------------------------------------
    def build_basis(self) -> OscillatorBasis:
        return OscillatorBasis(self.basis.mass, self.basis.frequency, self.basis.n_max)

    def build_state(self, basis: OscillatorBasis) -> WaveCoefficients:
        kind = self.state.kind
        if kind == "entangled01":
            return entangled_state(basis)
        if kind == "product01":
            return product_state(basis, 0, 1)
        if kind == "product10":
            return product_state(basis, 1, 0)
        c = np.zeros((basis.n_max, basis.n_max), dtype=complex)
        for a in self.state.coefficients:
            c[a.m, a.n] += a.re + 1j * a.im
        norm = np.linalg.norm(c)
        if norm == 0:
            raise ConfigError("state.coefficients: all amplitudes are zero")
        return WaveCoefficients(c / norm)

    def build_observable(self, basis: OscillatorBasis) -> BinnedObservable:
        return BinnedObservable.uniform(self.bins.count, basis, self.bins.lo, self.bins.hi)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None) -> ScenarioConfig:
        data = self.to_dict()
        if seed is not None:
            data["monte_carlo"]["seed"] = seed
        if out_dir is not None:
            data["output"]["dir"] = out_dir
        return validate(data)


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "\n".join(lines)


def validate(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError("invalid configuration:\n" + _describe(err)) from None


def parse(text: str) -> ScenarioConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"TOML syntax error: {err}") from None
    return validate(data)


def load(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {p}: {err}") from None
    return parse(text)

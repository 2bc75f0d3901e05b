"""Experiment configuration: one YAML file per experiment, validated strictly.

Unknown keys are rejected. Errors carry the ``line:column`` of the
offending YAML node when it can be located.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .model import ProblemSpec, spec_from_dict
from .sentinels import INF, is_inf


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


Coef = Union[float, dict[str, Any]]


class Dynamics(_Strict):
    horizon: float = Field(gt=0)
    dim: int = Field(1, ge=1, le=3)
    drift: Union[Coef, list[Coef]] = 0.0
    vol: Union[Coef, list[Any]] = 0.0


class Costs(_Strict):
    eta: Coef
    lambda_: Coef = Field(alias="lambda")
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class Mark(_Strict):
    intensity: float = Field(gt=0)
    gamma: Union[float, str, dict[str, Any]]

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if isinstance(v, str) and v.strip().lower() not in ("inf", "+inf", "infinity"):
            raise ValueError("gamma must be a number, 'inf' or a coefficient mapping")
        return v


class Jumps(_Strict):
    marks: list[Mark] = Field(default_factory=list, max_length=8)


class Bounds(_Strict):
    Lambda: float = Field(gt=0)
    kappa: float = Field(gt=0)
    L: Optional[float] = None


class Numerics(_Strict):
    q: Optional[float] = None
    T0: float = 0.0
    p0: Optional[float] = None


class Problem(_Strict):
    dynamics: Dynamics
    costs: Costs
    jumps: Jumps = Field(default_factory=Jumps)
    bounds: Bounds
    numerics: Numerics = Field(default_factory=Numerics)


class GridSection(_Strict):
    box: list[float] | list[list[float]] = Field(default_factory=lambda: [-3.0, 3.0])
    n_y: int = 129
    n_t: int = 200
    grading: float = 2.0
    cutoff: Optional[float] = None
    insert_cutoff: bool = True
    reaction_substeps: int = 16


class Truncation(_Strict):
    N_schedule: list[float] = Field(default_factory=lambda: [1e2, 1e3, 1e4, 1e5], min_length=1)


class ResidualSection(_Strict):
    n_paths: int = 4000
    meshes: list[int] = Field(default_factory=lambda: [8, 16, 32])
    N: float = 0.5
    horizon: Optional[float] = None
    expect: Literal["auto", "diffusive", "deterministic"] = "auto"


class MCSection(_Strict):
    n_paths: int = Field(10_000, ge=100)
    seed: int = 12345
    x0: float = 1.0
    y0: Union[float, list[float]] = 0.0
    N: float = Field(100.0, gt=0)
    delta: float = Field(0.2, ge=0, lt=1)
    liquidation_paths: int = Field(1000, ge=10)
    liquidation_tol: float = 0.05
    liquidation_safety: float = 2.0
    monotone_paths: int = Field(1000, ge=1)
    residual: ResidualSection = Field(default_factory=ResidualSection)


class _Toggle(_Strict):
    enabled: bool = True

    @model_validator(mode="before")
    @classmethod
    def _from_bool(cls, v):
        return {"enabled": v} if isinstance(v, bool) else v


class Tolerance(_Toggle):
    tol: float = 1e-2


class OracleToggle(_Toggle):
    tol: float = 1e-3


class MonotoneToggle(_Toggle):
    tol: float = 1e-8


class GradientToggle(_Toggle):
    p0: float = 4.0
    T1: float = 0.0
    slack: float = 0.10
    levels: Optional[list[float]] = None


class ComparisonPair(_Strict):
    name: str
    eta: Optional[Coef] = None
    lambda_: Optional[Coef] = Field(None, alias="lambda")
    gammas: Optional[list[Union[float, str, dict[str, Any]]]] = None
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ComparisonToggle(_Toggle):
    N: float = 100.0
    tol: float = 1e-6
    pairs: list[ComparisonPair] = Field(default_factory=list)


class ShiftedToggle(_Toggle):
    delta_fractions: list[float] = Field(default_factory=lambda: [0.1, 0.5])
    tol: float = 1e-6


class Diagnostics(_Strict):
    oracle: OracleToggle = Field(default_factory=OracleToggle)
    sandwich: Tolerance = Field(default_factory=Tolerance)
    monotone_N: MonotoneToggle = Field(default_factory=MonotoneToggle)
    growth: _Toggle = Field(default_factory=_Toggle)
    gradient: GradientToggle = Field(default_factory=GradientToggle)
    comparison: ComparisonToggle = Field(default_factory=ComparisonToggle)
    shifted_bound: ShiftedToggle = Field(default_factory=ShiftedToggle)
    value_identity: _Toggle = Field(default_factory=_Toggle)
    policy_ranking: _Toggle = Field(default_factory=_Toggle)
    liquidation: _Toggle = Field(default_factory=_Toggle)
    state_monotone: _Toggle = Field(default_factory=_Toggle)
    bsde_residual: _Toggle = Field(default_factory=_Toggle)


class Output(_Strict):
    directory: str = "out"


class ExperimentConfig(_Strict):
    problem: Problem
    grid: GridSection = Field(default_factory=GridSection)
    truncation: Truncation = Field(default_factory=Truncation)
    mc: MCSection = Field(default_factory=MCSection)
    diagnostics: Diagnostics = Field(default_factory=Diagnostics)
    output: Output = Field(default_factory=Output)

    @model_validator(mode="after")
    def _cross(self):
        T = self.problem.dynamics.horizon
        sched = self.truncation.N_schedule
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError(f"truncation.N_schedule must be strictly increasing: {sched}")
        if any(n <= 0 for n in sched):
            raise ValueError("truncation.N_schedule entries must be positive")
        T0 = self.problem.numerics.T0
        g = self.diagnostics.gradient
        if g.enabled and not (T0 <= g.T1 < T):
            raise ValueError(f"diagnostics.gradient.T1={g.T1} must lie in [T0, T) = [{T0}, {T})")
        if g.enabled and not g.p0 > 2:
            raise ValueError("diagnostics.gradient.p0 must exceed 2")
        if self.grid.cutoff is not None and not 0 < self.grid.cutoff < T:
            raise ValueError("grid.cutoff must lie in (0, T)")
        fr = self.diagnostics.shifted_bound.delta_fractions
        if any(not 0 < f < 1 for f in fr):
            raise ValueError("diagnostics.shifted_bound.delta_fractions must lie in (0, 1)")
        r = self.mc.residual
        if r.horizon is not None and not 0 < r.horizon <= T:
            raise ValueError("mc.residual.horizon must lie in (0, T]")
        if len(r.meshes) < 2:
            raise ValueError("mc.residual.meshes needs at least two meshes")
        dim = self.problem.dynamics.dim
        y0 = self.mc.y0
        if isinstance(y0, list) and len(y0) != dim:
            raise ValueError(f"mc.y0 has {len(y0)} entries, expected {dim}")
        return self

    # -- derived objects -----------------------------------------------------
    def spec(self) -> ProblemSpec:
        return spec_from_dict(problem_dict(self))

    def y0(self) -> list[float]:
        y0 = self.mc.y0
        return [float(v) for v in y0] if isinstance(y0, list) else [float(y0)] * self.problem.dynamics.dim

    def resolved(self) -> dict[str, Any]:
        return json.loads(json.dumps(self.model_dump(by_alias=True, mode="json"), sort_keys=True))

    def content_hash(self) -> str:
        cfg = self.resolved()
        cfg.pop("output", None)
        return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def problem_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return cfg.problem.model_dump(by_alias=True, mode="python")


def pair_spec(base: ProblemSpec, pair: ComparisonPair) -> ProblemSpec:
    """The dominating spec of a comparison pair: base costs with overrides."""
    from .coefficients import Constant, coefficient_from_dict
    from .sentinels import parse_extended

    gammas = None
    if pair.gammas is not None:
        gammas = []
        for g in pair.gammas:
            if isinstance(g, dict):
                gammas.append(coefficient_from_dict(g))
            else:
                v = parse_extended(g)
                gammas.append(INF if is_inf(v) else Constant(float(v)))
    return base.with_costs(
        eta=None if pair.eta is None else coefficient_from_dict(pair.eta),
        lam=None if pair.lambda_ is None else coefficient_from_dict(pair.lambda_),
        gammas=gammas,
    )


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _locate(node, loc) -> tuple[int, int] | None:
    """Line and column (1-based) of the YAML node at pydantic location ``loc``."""
    best = node.start_mark if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    best = k.start_mark
                    break
            if nxt is None:
                break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            best = node.start_mark
        else:
            break
    return (best.line + 1, best.column + 1) if best is not None else None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigError(f"{where}: YAML parse error: {exc.problem}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            pos = _locate(node, err["loc"])
            where = f"{source}:{pos[0]}:{pos[1]}" if pos else source
            path = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{where}: {path}: {err['msg']}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines)) from None
    try:
        cfg.spec()
    except ConfigError as exc:
        raise ConfigError(f"{source}: problem: {exc}") from None
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))

"""
Configuration for renewal experiment runs.

Two layers:

* ``Settings`` - run-wide defaults from the environment (``.env`` is read
  through python-dotenv); command-line flags override them.
* ``RunConfig`` - a JSON file of scenario specs, validated before anything is
  computed. Unknown keys are rejected and every problem is reported as
  ``path.to.field: message``.
"""

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from renewal import dist, weights
from renewal.asym import Condition, Formula
from renewal.errors import ConfigError, RenewalError
from renewal.exact import DEFAULT_MAX_STEPS, Method
from renewal.harness import Scenario, ScenarioKind

CATALOGUE_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def _optional_float(value: Optional[str]) -> Optional[float]:
    return float(value) if value not in (None, "") else None


@dataclass(frozen=True)
class Settings:
    """Run-wide defaults; ``tolerance``, when set, replaces every scenario's pass tolerance."""

    seed: int = 0
    jobs: int = 1
    out: str = "out"
    tolerance: Optional[float] = None
    log_level: str = "INFO"
    max_steps: int = DEFAULT_MAX_STEPS

    @classmethod
    def from_env(cls, env_file: Optional[str] = None) -> "Settings":
        load_dotenv(env_file)
        try:
            return cls(
                seed=int(os.getenv("RENEWAL_SEED", "0")),
                jobs=int(os.getenv("RENEWAL_JOBS", "1")),
                out=os.getenv("RENEWAL_OUT", "out"),
                tolerance=_optional_float(os.getenv("RENEWAL_TOLERANCE")),
                log_level=os.getenv("RENEWAL_LOG_LEVEL", "INFO"),
                max_steps=int(os.getenv("RENEWAL_MAX_STEPS", str(DEFAULT_MAX_STEPS))),
            )
        except ValueError as e:
            raise ConfigError(f"Invalid environment setting: {e}", path="env")

    def override(self, **flags) -> "Settings":
        """Copy with every non-None flag applied."""
        return replace(self, **{k: v for k, v in flags.items() if v is not None})


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- jump models ---------------------------------------------------------------

class TailSpec(_Spec):
    index: float = Field(gt=0)
    constant: float = Field(1.0, gt=0)

    def build(self) -> dist.TailMajorant:
        return dist.TailMajorant(self.index, self.constant)


class LatticeSpec(_Spec):
    kind: Literal["lattice"]
    offset: int = 0
    probs: List[float] = Field(min_length=1)
    span: int = Field(1, ge=1)
    plus_tail: Optional[TailSpec] = None
    minus_tail: Optional[TailSpec] = None
    label: str = ""

    def build(self) -> dist.JumpModel:
        return dist.lattice(
            self.probs,
            offset=self.offset,
            span=self.span,
            plus_tail=self.plus_tail.build() if self.plus_tail else None,
            minus_tail=self.minus_tail.build() if self.minus_tail else None,
            label=self.label,
        )


class LatticeTableSpec(_Spec):
    """``{"kind": "lattice_table", "table": {"-1": 0.25, "1": 0.75}}``; keys are original values."""

    kind: Literal["lattice_table"]
    table: Dict[int, float] = Field(min_length=1)
    span: int = Field(1, ge=1)
    plus_tail: Optional[TailSpec] = None
    minus_tail: Optional[TailSpec] = None
    label: str = ""

    def build(self) -> dist.JumpModel:
        return dist.lattice_from_table(
            self.table,
            span=self.span,
            plus_tail=self.plus_tail.build() if self.plus_tail else None,
            minus_tail=self.minus_tail.build() if self.minus_tail else None,
            label=self.label,
        )


class ParetoLatticeSpec(_Spec):
    kind: Literal["pareto_lattice"]
    alpha: float = Field(gt=1)
    cut: int = Field(ge=1)
    start: int = Field(1, ge=1)

    def build(self) -> dist.JumpModel:
        return dist.pareto_lattice(self.alpha, self.cut, self.start)


class NormalSpec(_Spec):
    kind: Literal["normal"]
    mean: float
    sd: float = Field(gt=0)

    def build(self) -> dist.JumpModel:
        return dist.normal(self.mean, self.sd)


class ShiftedExponentialSpec(_Spec):
    kind: Literal["shifted_exponential"]
    rate: float = Field(gt=0)
    shift: float = 0.0

    def build(self) -> dist.JumpModel:
        return dist.shifted_exponential(self.rate, self.shift)


class ParetoShiftedSpec(_Spec):
    kind: Literal["pareto_shifted"]
    alpha: float = Field(gt=1)
    shift: float = 0.0
    scale: float = Field(1.0, gt=0)

    def build(self) -> dist.JumpModel:
        return dist.pareto_shifted(self.alpha, self.shift, self.scale)


ModelSpec = Annotated[
    Union[LatticeSpec, LatticeTableSpec, ParetoLatticeSpec, NormalSpec, ShiftedExponentialSpec, ParetoShiftedSpec],
    Field(discriminator="kind"),
]


# -- weights and windows -------------------------------------------------------

class ConstantWeightSpec(_Spec):
    kind: Literal["constant"]
    c: float = 1.0

    def build(self) -> weights.WeightSeq:
        return weights.Constant(self.c)


class PowerWeightSpec(_Spec):
    kind: Literal["power"]
    gamma: float
    c: float = 1.0
    shift: float = Field(0.0, ge=0)

    def build(self) -> weights.WeightSeq:
        return weights.Power(self.gamma, self.c, self.shift)


class HarmonicWeightSpec(_Spec):
    kind: Literal["harmonic"]

    def build(self) -> weights.WeightSeq:
        return weights.harmonic()


class PeriodicWeightSpec(_Spec):
    kind: Literal["periodic"]
    pattern: List[float] = Field(min_length=1)

    def build(self) -> weights.WeightSeq:
        return weights.Periodic(tuple(self.pattern))


class TableWeightSpec(_Spec):
    kind: Literal["table"]
    table: List[float]
    beyond: float = 0.0

    def build(self) -> weights.WeightSeq:
        return weights.Table(tuple(self.table), self.beyond)


class ExpWeightSpec(_Spec):
    kind: Literal["exp"]
    q: float
    base: "WeightSpec"

    def build(self) -> weights.WeightSeq:
        return weights.ExpModulated(self.q, self.base.build())


WeightSpec = Annotated[
    Union[ConstantWeightSpec, PowerWeightSpec, HarmonicWeightSpec, PeriodicWeightSpec, TableWeightSpec, ExpWeightSpec],
    Field(discriminator="kind"),
]
ExpWeightSpec.model_rebuild()


class ConstantWindowSpec(_Spec):
    kind: Literal["constant"]
    d0: int = Field(ge=1)

    def build(self) -> weights.AveragingWindow:
        return weights.AveragingWindow(weights.WindowKind.CONSTANT, d0=self.d0)


class PowerWindowSpec(_Spec):
    kind: Literal["power"]
    delta: float = Field(ge=0, lt=0.5)

    def build(self) -> weights.AveragingWindow:
        return weights.AveragingWindow(weights.WindowKind.POWER, delta=self.delta)


WindowSpec = Annotated[Union[ConstantWindowSpec, PowerWindowSpec], Field(discriminator="kind")]


# -- scenarios -----------------------------------------------------------------

class ScenarioSpec(_Spec):
    name: str = Field(min_length=1)
    kind: ScenarioKind = ScenarioKind.COMPARISON
    description: str = ""
    model: ModelSpec
    weights: WeightSpec = ConstantWeightSpec(kind="constant")
    window: Optional[WindowSpec] = None
    predictor: Formula = Formula.WEIGHTED
    predictor_params: Dict[str, float] = Field(default_factory=dict)
    x_grid: List[float] = Field(default_factory=list)
    delta: float = Field(1.0, gt=0)
    delta_range: Optional[Tuple[float, float]] = None
    method: Method = Method.AUTO
    seed: Optional[int] = None
    tolerance: float = Field(0.01, gt=0)
    paths: int = Field(20_000, ge=2)
    conditions: List[Condition] = Field(default_factory=list)
    lemma3: bool = False
    calibrate_n: Optional[int] = Field(None, ge=1)
    n_list: List[int] = Field(default_factory=list)
    q_list: List[float] = Field(default_factory=list)
    n: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_kind_inputs(self):
        if self.delta_range is not None and not 0 < self.delta_range[0] <= self.delta_range[1]:
            raise ValueError("delta_range must satisfy 0 < low <= high")
        if self.kind == ScenarioKind.COMPARISON and not self.x_grid:
            raise ValueError("comparison scenarios need a non-empty x_grid")
        if self.kind == ScenarioKind.STONE_SHEPP and not self.n_list:
            raise ValueError("stone_shepp scenarios need n_list")
        if self.kind == ScenarioKind.TILT_IDENTITY and not self.q_list:
            raise ValueError("tilt_identity scenarios need q_list")
        if self.kind == ScenarioKind.LEMMA3 and self.n < 1:
            raise ValueError("lemma3 scenarios need n >= 1")
        return self

    def build(self, root_seed: int = 0) -> Scenario:
        return Scenario(
            name=self.name,
            model=self.model.build(),
            kind=self.kind,
            weights=self.weights.build(),
            window=self.window.build() if self.window else None,
            predictor=self.predictor,
            predictor_params=dict(self.predictor_params),
            x_grid=tuple(self.x_grid),
            delta=self.delta,
            delta_range=self.delta_range,
            method=self.method,
            seed=root_seed if self.seed is None else self.seed,
            tolerance=self.tolerance,
            paths=self.paths,
            conditions=tuple(self.conditions),
            lemma3=self.lemma3,
            calibrate_n=self.calibrate_n,
            n_list=tuple(self.n_list),
            q_list=tuple(self.q_list),
            n=self.n,
            description=self.description,
        )


class RunConfig(_Spec):
    scenarios: List[ScenarioSpec] = Field(min_length=1)
    out: Optional[str] = None
    seed: Optional[int] = None
    jobs: Optional[int] = Field(None, ge=1)
    tolerance: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _unique_names(self):
        names = [s.name for s in self.scenarios]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate scenario names: {', '.join(duplicates)}")
        return self


def _error_path(loc) -> str:
    return ".".join(str(part) for part in loc)


def validate_config(data: Any) -> RunConfig:
    """Validate an already parsed document; a single scenario object is accepted too."""
    if isinstance(data, dict) and "scenarios" not in data and "model" in data:
        data = {"scenarios": [data]}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        extra = f" (+{e.error_count() - 1} more)" if e.error_count() > 1 else ""
        raise ConfigError(first["msg"] + extra, path=_error_path(first["loc"])) from e


def load_config(path: str) -> RunConfig:
    """Read and validate a scenario configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON: {e}", path=str(path))
    return validate_config(data)


def build_scenarios(config: RunConfig, root_seed: int = 0) -> List[Scenario]:
    """Turn validated specs into runnable scenarios; model errors carry the scenario path."""
    scenarios = []
    for i, spec in enumerate(config.scenarios):
        try:
            scenarios.append(spec.build(root_seed))
        except RenewalError as e:
            raise ConfigError(str(e), path=f"scenarios.{i}.{spec.name}") from e
    return scenarios


def list_catalogue() -> List[Dict[str, str]]:
    """Bundled scenario files with their names and descriptions."""
    entries = []
    for path in sorted(CATALOGUE_DIR.glob("*.json")):
        config = load_config(str(path))
        for spec in config.scenarios:
            entries.append({"file": path.name, "name": spec.name, "kind": spec.kind.value,
                            "description": spec.description})
    return entries


def catalogue_path(name: str) -> Path:
    """Resolve a bundled scenario file by stem or file name."""
    stem = name[:-5] if name.endswith(".json") else name
    path = CATALOGUE_DIR / f"{stem}.json"
    if not path.exists():
        raise ConfigError(f"No bundled scenario named {name!r}")
    return path


def _parse(adapter: TypeAdapter, data: Any, field: str):
    if isinstance(data, str):
        try:
            text = data if data.lstrip().startswith(("{", "[")) else Path(data).read_text(encoding="utf-8")
            data = json.loads(text)
        except OSError as e:
            raise ConfigError(f"Cannot read {data!r}: {e.strerror}", path=field)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON: {e}", path=field)
    try:
        return adapter.validate_python(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], path=_error_path((field,) + tuple(first["loc"]))) from e


_MODEL = TypeAdapter(ModelSpec)
_WEIGHTS = TypeAdapter(WeightSpec)
_WINDOW = TypeAdapter(WindowSpec)


def parse_model(data: Any) -> dist.JumpModel:
    """Jump model from a JSON string, a JSON file path or a parsed object."""
    spec = _parse(_MODEL, data, "model")
    try:
        return spec.build()
    except RenewalError as e:
        raise ConfigError(str(e), path="model") from e


def parse_weights(data: Any) -> weights.WeightSeq:
    return _parse(_WEIGHTS, data, "weights").build()


def parse_window(data: Any) -> Optional[weights.AveragingWindow]:
    return None if data is None else _parse(_WINDOW, data, "window").build()

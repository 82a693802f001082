"""
Run configuration files: INI-style sections of `key = value` lines, validated into
pydantic models. Every validation failure is re-raised as ConfigError naming the
offending `section.key`.
"""
import configparser
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Type, TypeVar, Union

import pydantic
from pydantic import Field, field_validator, model_validator

from .constants import RSC_GAUSSIAN_SAMPLES, RSC_TAU_SQ_FACTOR
from .exceptions import ConfigError
from .models import (
    CovKind,
    DesignSpec,
    FrameKind,
    HierBaseModel,
    LambdaRule,
    SolverConfig,
    SweepSpec,
    TruthSpec,
    Variant,
    check_eta,
)

logger = logging.getLogger(__name__)

Model = TypeVar("Model", bound=pydantic.BaseModel)
PathLike = Union[str, Path]


class StructureSection(HierBaseModel):
    """Group / frame construction shared by run and rates configs."""
    group_size: Optional[int] = Field(None, ge=1)
    cov_kind: CovKind = CovKind.IDENTITY
    frame_kind: FrameKind = FrameKind.RANDOM_ROWS
    k: Optional[int] = Field(None, ge=1)


class ProblemSection(HierBaseModel):
    n: Optional[int] = Field(None, ge=1)
    d: Optional[int] = Field(None, ge=1)
    design: DesignSpec = DesignSpec()
    seed: int = Field(0, ge=0)
    normalize: bool = True
    data: Optional[Path] = None

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def _check_source(self) -> "ProblemSection":
        if self.data is None and (self.n is None or self.d is None):
            raise ValueError("generated problems need both n and d (or a data directory)")
        return self


class ModelSection(StructureSection):
    variant: Variant = Variant.COORDINATE
    eta: float
    lam: Optional[float] = Field(None, alias="lambda", gt=0)
    lambda_rule: LambdaRule = LambdaRule.COROLLARY

    class Config:
        extra = "forbid"

    @field_validator("eta")
    @classmethod
    def _check_eta(cls, value: float) -> float:
        return check_eta(value)

    @model_validator(mode="after")
    def _check_lambda(self) -> "ModelSection":
        if self.lambda_rule == LambdaRule.EXPLICIT and self.lam is None:
            raise ValueError("an explicit lambda rule needs a lambda value")
        if self.variant == Variant.GROUP and self.group_size is None:
            raise ValueError("the group variant needs group_size")
        return self


class OutputSection(HierBaseModel):
    dir: Path = Path("out")

    class Config:
        extra = "forbid"


class RunConfig(HierBaseModel):
    """A single solve: problem source, hypermodel, solver settings and output directory."""
    problem: ProblemSection
    truth: Optional[TruthSpec] = None
    model: ModelSection
    solver: SolverConfig = SolverConfig()
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def _check_truth(self) -> "RunConfig":
        if self.problem.data is None and self.truth is None:
            raise ValueError("generated problems need a [truth] section")
        return self


class RatesConfig(StructureSection):
    """Certified-bound trials: regime, RSC sampling and λ override."""
    variant: Variant = Variant.COORDINATE
    n: int = Field(..., ge=1)
    d: int = Field(..., ge=1)
    eta: float
    truth: TruthSpec
    trials: int = Field(..., ge=1)
    master_seed: int = Field(0, ge=0)
    design: DesignSpec = DesignSpec()
    lam: Optional[float] = Field(None, alias="lambda", gt=0)
    lambda_scale: float = Field(1.0, gt=0)
    tau_sq_factor: float = Field(RSC_TAU_SQ_FACTOR, ge=0)
    rsc_samples: int = Field(RSC_GAUSSIAN_SAMPLES, ge=1)
    cone_samples: Optional[int] = Field(None, ge=1)
    solver: SolverConfig = SolverConfig()

    class Config:
        extra = "forbid"

    @field_validator("eta")
    @classmethod
    def _check_eta(cls, value: float) -> float:
        return check_eta(value)

    @model_validator(mode="after")
    def _check_groups(self) -> "RatesConfig":
        if self.variant == Variant.GROUP and self.group_size is None:
            raise ValueError("the group variant needs group_size")
        return self


def read_sections(path: PathLike) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as f:
            parser.read_file(f)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    return {name: dict(parser[name]) for name in parser.sections()}


def _take(sections: Dict[str, Dict[str, str]], allowed: Tuple[str, ...]) -> None:
    unknown = set(sections) - set(allowed)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown section [{name}]", key=name)


def _move(raw: Dict[str, str], renames: Dict[str, str]) -> Dict[str, Any]:
    return {renames.get(key, key): value for key, value in raw.items()}


def _validate(model: Type[Model], data: Dict[str, Any], locate: Callable[[tuple], str]) -> Model:
    try:
        return model.model_validate(data)
    except pydantic.ValidationError as e:
        error = e.errors()[0]
        key = locate(tuple(error["loc"]))
        logger.debug("config validation failed at %s: %s", key, error)
        raise ConfigError(error["msg"], key=key)


def _locator(default_section: str, field_keys: Dict[str, str]) -> Callable[[tuple], str]:
    """Map a pydantic error location back to the `section.key` it came from."""
    def locate(loc: tuple) -> str:
        if not loc:
            return default_section
        head = str(loc[0])
        if head in field_keys:
            return field_keys[head]
        if head in ("truth", "solver", "problem", "model", "output", "rsc"):
            return f"{head}.{loc[1]}" if len(loc) > 1 and not isinstance(loc[1], int) else head
        return f"{default_section}.{head}"
    return locate


_GROUP_KEYS = {"size": "group_size", "cov": "cov_kind"}
_FRAME_KEYS = {"kind": "frame_kind", "k": "k"}
_STRUCTURE_LOCATIONS = {
    "group_size": "groups.size",
    "cov_kind": "groups.cov",
    "frame_kind": "frame.kind",
    "k": "frame.k",
}


def _structure_keys(sections: Dict[str, Dict[str, str]]) -> Dict[str, str]:
    keys = _move(sections.get("groups", {}), _GROUP_KEYS)
    keys.update(_move(sections.get("frame", {}), _FRAME_KEYS))
    return keys


def load_run_config(path: PathLike) -> RunConfig:
    """
    Sections: [problem] [truth] [model] [groups] [frame] [solver] [output].

    [truth] is needed for generated problems; `data` in [problem] points to a directory
    written by storage.save_problem instead.
    """
    sections = read_sections(path)
    _take(sections, ("problem", "truth", "model", "groups", "frame", "solver", "output"))
    if "model" not in sections:
        raise ConfigError("missing section [model]", key="model")
    data = {
        "problem": sections.get("problem", {}),
        "model": {**sections["model"], **_structure_keys(sections)},
        "solver": sections.get("solver", {}),
        "output": sections.get("output", {}),
    }
    if "truth" in sections:
        data["truth"] = sections["truth"]

    def locate(loc: tuple) -> str:
        if len(loc) > 1 and loc[0] == "model" and loc[1] in _STRUCTURE_LOCATIONS:
            return _STRUCTURE_LOCATIONS[loc[1]]
        return _locator("problem", {})(loc)

    return _validate(RunConfig, data, locate)


def load_sweep_spec(path: PathLike) -> SweepSpec:
    """Sections: [sweep] [truth] [groups] [frame] [solver]; `lambda` in [sweep] is the explicit value."""
    sections = read_sections(path)
    _take(sections, ("sweep", "truth", "groups", "frame", "solver"))
    for required in ("sweep", "truth"):
        if required not in sections:
            raise ConfigError(f"missing section [{required}]", key=required)
    data = _move(sections["sweep"], {"lambda": "lambda_value"})
    data.update(_structure_keys(sections))
    data["truth"] = sections["truth"]
    data["solver"] = sections.get("solver", {})
    allowed = set(SweepSpec.model_fields)
    for key in data:
        if key not in allowed:
            raise ConfigError("unknown key", key=f"sweep.{key}")
    return _validate(SweepSpec, data, _locator("sweep", {**_STRUCTURE_LOCATIONS, "lambda_value": "sweep.lambda"}))


def load_rates_config(path: PathLike) -> RatesConfig:
    """Sections: [rates] [truth] [rsc] [groups] [frame] [solver]."""
    sections = read_sections(path)
    _take(sections, ("rates", "truth", "rsc", "groups", "frame", "solver"))
    for required in ("rates", "truth"):
        if required not in sections:
            raise ConfigError(f"missing section [{required}]", key=required)
    data: Dict[str, Any] = dict(sections["rates"])
    data.update(_structure_keys(sections))
    data.update(_move(sections.get("rsc", {}), {"samples": "rsc_samples"}))
    data["truth"] = sections["truth"]
    data["solver"] = sections.get("solver", {})
    field_keys = {**_STRUCTURE_LOCATIONS, "rsc_samples": "rsc.samples", "cone_samples": "rsc.cone_samples"}
    return _validate(RatesConfig, data, _locator("rates", field_keys))

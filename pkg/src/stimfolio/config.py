"""Run configuration.

The config file is YAML with optional sections ``formation``, ``design``,
``sim``, ``evaluation``, ``picks``, ``portfolio`` and ``report`` plus the
top-level keys ``seed``, ``workers`` and ``out``. Every key is optional; the
README lists them all with their defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from stimfolio.designs import UNIFORM, Design, DesignRanges
from stimfolio.formation import FormationParams
from stimfolio.fracsim import SimConfig
from stimfolio.portfolio import ANCHOR_RULES, MIN_GRADIENT


@dataclass(frozen=True)
class FormationConfig:
    base: FormationParams = field(default_factory=FormationParams)
    per_well: bool = False


@dataclass(frozen=True)
class DesignConfig:
    ranges: DesignRanges = field(default_factory=DesignRanges)
    n_designs: int = 2000
    base_case: Design = Design(0.25, 0.003, 50.0, 0.2, 1.06e10, UNIFORM)


@dataclass(frozen=True)
class EvaluationConfig:
    levels: tuple[float, ...] = (0.05, 0.10, 0.20)
    n_realizations: int = 200


@dataclass(frozen=True)
class PickConfig:
    pick_start: float = 2.5e-4
    pick_interval: float = 0.1e-4
    repeat_start: float = 2.0e-4
    repeat_stop: float = 2.5e-4
    repeat_interval: float = 0.1e-4
    exl_threshold: float = 1.38e7
    #: EXL-qualifying designs carried into uncertainty evaluation, lowest nominal EV first
    exl_candidates: int = 40


@dataclass(frozen=True)
class PortfolioConfig:
    k: int = 6
    n_mix: int = 12500
    n_exl: int = 6
    anchor_rule: str = MIN_GRADIENT
    n_lambda: int = 11


@dataclass(frozen=True)
class ReportConfig:
    #: uncertainty level shown in fig2bc.csv (default: first level)
    figure_level: float | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 20200
    workers: int = 1
    out: str = "run"
    formation: FormationConfig = field(default_factory=FormationConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    picks: PickConfig = field(default_factory=PickConfig)
    portfolio: PortfolioConfig = field(default_factory=PortfolioConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        counts = {
            "design.n_designs": self.design.n_designs,
            "evaluation.n_realizations": self.evaluation.n_realizations,
            "portfolio.n_mix": self.portfolio.n_mix,
            "portfolio.k": self.portfolio.k,
            "portfolio.n_exl": self.portfolio.n_exl,
            "picks.exl_candidates": self.picks.exl_candidates,
            "workers": self.workers,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value!r}")
        if self.evaluation.n_realizations < 2:
            raise ValueError("evaluation.n_realizations must be >= 2")
        if not self.evaluation.levels:
            raise ValueError("at least one uncertainty level is required")
        for u in self.evaluation.levels:
            if not 0.0 < u < 1.0:
                raise ValueError(f"uncertainty levels must lie in (0, 1), got {u!r}")
        if self.portfolio.anchor_rule not in ANCHOR_RULES:
            raise ValueError(f"unknown anchor_rule {self.portfolio.anchor_rule!r}")
        if self.report.figure_level is not None and self.report.figure_level not in self.evaluation.levels:
            raise ValueError("report.figure_level must be one of the evaluated levels")

    @property
    def figure_level(self) -> float:
        return self.report.figure_level if self.report.figure_level is not None else self.evaluation.levels[0]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def section_digest(self, *sections: str) -> str:
        """Digest of the named top-level sections, used for staleness checks."""
        data = self.to_dict()
        payload = json.dumps({s: data[s] for s in sections}, sort_keys=True, default=repr)
        return hashlib.sha256(payload.encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, mapping: dict | None):
    if not mapping:
        return cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise ValueError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**mapping)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    formation = dict(data.pop("formation", None) or {})
    per_well = bool(formation.pop("per_well", False))
    design = dict(data.pop("design", None) or {})
    ranges = design.pop("ranges", None)
    base_case = design.pop("base_case", None)
    evaluation = dict(data.pop("evaluation", None) or {})
    if "levels" in evaluation:
        evaluation["levels"] = tuple(float(u) for u in evaluation["levels"])

    kwargs = {k: data.pop(k) for k in ("seed", "workers", "out") if k in data}
    sections = {
        "sim": SimConfig,
        "picks": PickConfig,
        "portfolio": PortfolioConfig,
        "report": ReportConfig,
    }
    for name, cls in sections.items():
        kwargs[name] = _build(cls, data.pop(name, None))
    if data:
        raise ValueError(f"unknown config sections: {sorted(data)}")

    design_kwargs = dict(design)
    if ranges:
        design_kwargs["ranges"] = DesignRanges.from_mapping(ranges)
    if base_case:
        design_kwargs["base_case"] = Design(**base_case)
    return RunConfig(
        formation=FormationConfig(base=_build(FormationParams, formation), per_well=per_well),
        design=_build(DesignConfig, design_kwargs),
        evaluation=_build(EvaluationConfig, evaluation),
        **kwargs,
    )


class _ConfigLoader(yaml.SafeLoader):
    """Safe loader that also reads ``1e7`` and ``3.0e10`` as floats (YAML 1.1 wants ``3.0e+10``)."""


_ConfigLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return config_from_dict(yaml.load(fh, Loader=_ConfigLoader) or {})

"""Experiment configuration files.

A config is a YAML mapping with the sections ``urn``, ``cohort``, ``groups``,
``snapshot``, ``output`` and ``amplify``.  Every problem is reported as a
:class:`ConfigError` naming the offending field (``cohort.population``,
``groups[1].bias``...) or, for syntax errors, the line.

Example::

    urn: {blue_initial: 1, red_initial: 1, increment: 1}
    cohort: {population: 1000, horizon: 50, master_seed: 7}
    groups:
      - {name: reference, fraction: 0.5}
      - {name: shifted, fraction: 0.5, bias: 0.01}
    snapshot: {time: 1, horizon: 1, bins: 10, threshold: 0.5}
    output: {directory: out/example, format: csv}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from .cohort import CohortConfig, GroupSpec
from .urn import UrnParameters
from .validation import SnapshotSpec

SECTIONS = ("urn", "cohort", "groups", "snapshot", "output", "amplify")
FORMATS = {"csv": ",", "tsv": "\t"}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` is the dotted path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclass(frozen=True)
class OutputSpec:
    directory: Optional[str] = None
    format: str = "csv"

    @property
    def delimiter(self) -> str:
        return FORMATS[self.format]


@dataclass(frozen=True)
class AmplifySettings:
    resamples: int = 1000
    confidence: float = 0.99
    bootstrap_seed: Optional[int] = None
    power_repetitions: int = 0
    power_population: int = 1000
    alpha: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    cohort: CohortConfig
    snapshot: Optional[SnapshotSpec] = None
    output: OutputSpec = field(default_factory=OutputSpec)
    amplify: AmplifySettings = field(default_factory=AmplifySettings)
    source: str = "<memory>"

    @property
    def urn(self) -> UrnParameters:
        return self.cohort.params

    def as_dict(self) -> Dict[str, Any]:
        """Plain-data echo of the parsed config, as written to run manifests."""
        c = self.cohort
        data: Dict[str, Any] = {
            "urn": c.params.as_dict(),
            "cohort": {
                "population": c.population,
                "horizon": c.horizon,
                "master_seed": c.master_seed,
                "record_full_paths": c.record_full_paths,
            },
            "groups": [
                {
                    "name": g.name,
                    "fraction": g.fraction,
                    "bias": g.bias,
                    **({"initial_override": g.initial_override.as_dict()}
                       if g.initial_override else {}),
                }
                for g in c.groups
            ],
            "output": {"directory": self.output.directory, "format": self.output.format},
            "amplify": {
                "resamples": self.amplify.resamples,
                "confidence": self.amplify.confidence,
                "bootstrap_seed": self.amplify.bootstrap_seed,
                "power_repetitions": self.amplify.power_repetitions,
                "power_population": self.amplify.power_population,
                "alpha": self.amplify.alpha,
            },
        }
        if self.snapshot is not None:
            s = self.snapshot
            data["snapshot"] = {"time": s.time, "horizon": s.horizon, "bins": s.bins,
                                "threshold": s.threshold}
        return data


def _mapping(value, path: str, allowed: Tuple[str, ...]) -> Dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else str(key),
                              f"unknown key (allowed: {', '.join(allowed)})")
    return value


def _number(section: Dict[str, Any], key: str, path: str, default=None, *,
            integer: bool = False, low=None, high=None, low_open=False, high_open=False):
    where = f"{path}.{key}"
    if key not in section:
        if default is None:
            raise ConfigError(where, "required field is missing")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise ConfigError(where, f"expected an integer, got {value!r}")
    if low is not None and (value <= low if low_open else value < low):
        raise ConfigError(where, f"must be {'>' if low_open else '>='} {low}, got {value}")
    if high is not None and (value >= high if high_open else value > high):
        raise ConfigError(where, f"must be {'<' if high_open else '<='} {high}, got {value}")
    return value


def _urn(raw, path: str) -> UrnParameters:
    section = _mapping(raw, path, ("blue_initial", "red_initial", "increment"))
    return UrnParameters(
        blue_initial=_number(section, "blue_initial", path, 1, low=0, low_open=True),
        red_initial=_number(section, "red_initial", path, 1, low=0, low_open=True),
        increment=_number(section, "increment", path, 1, low=0, low_open=True),
    )


def _groups(raw) -> Tuple[GroupSpec, ...]:
    if raw is None:
        return (GroupSpec("all"),)
    if not isinstance(raw, list) or not raw:
        raise ConfigError("groups", "expected a nonempty list of groups")
    groups = []
    for i, item in enumerate(raw):
        path = f"groups[{i}]"
        section = _mapping(item, path, ("name", "fraction", "bias", "initial_override"))
        name = section.get("name")
        if not isinstance(name, str) or not name:
            raise ConfigError(f"{path}.name", "required nonempty string")
        override = section.get("initial_override")
        groups.append(GroupSpec(
            name=name,
            fraction=_number(section, "fraction", path, 1.0 / len(raw), low=0, high=1,
                             low_open=True),
            bias=_number(section, "bias", path, 0.0, low=-1, high=1, low_open=True,
                         high_open=True),
            initial_override=_urn(override, f"{path}.initial_override") if override else None,
        ))
    return tuple(groups)


def parse_config(data: Any, source: str = "<memory>") -> ExperimentConfig:
    top = _mapping(data, "", SECTIONS)
    params = _urn(top.get("urn"), "urn")

    if "cohort" not in top:
        raise ConfigError("cohort", "required section is missing")
    cohort_raw = _mapping(top.get("cohort"), "cohort",
                          ("population", "horizon", "master_seed", "record_full_paths"))
    record = cohort_raw.get("record_full_paths", True)
    if not isinstance(record, bool):
        raise ConfigError("cohort.record_full_paths", f"expected true/false, got {record!r}")
    groups = _groups(top.get("groups"))
    try:
        cohort = CohortConfig(
            population=_number(cohort_raw, "population", "cohort", integer=True, low=2),
            horizon=_number(cohort_raw, "horizon", "cohort", integer=True, low=1),
            params=params,
            groups=groups,
            master_seed=_number(cohort_raw, "master_seed", "cohort", 0, integer=True, low=0,
                                high=2**64 - 1),
            record_full_paths=record,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        # fields are range-checked above; what remains is cross-group consistency
        raise ConfigError("groups", str(exc)) from None

    snapshot = None
    if top.get("snapshot") is not None:
        raw = _mapping(top["snapshot"], "snapshot", ("time", "horizon", "bins", "threshold"))
        snapshot = SnapshotSpec(
            time=_number(raw, "time", "snapshot", 1, integer=True, low=1),
            horizon=_number(raw, "horizon", "snapshot", 1, integer=True, low=1),
            bins=_number(raw, "bins", "snapshot", 10, integer=True, low=2),
            threshold=_number(raw, "threshold", "snapshot", 0.5, low=0, high=1,
                              low_open=True, high_open=True),
        )
        if snapshot.time > cohort.horizon:
            raise ConfigError("snapshot.time",
                              f"snapshot time {snapshot.time} exceeds cohort.horizon {cohort.horizon}")

    out_raw = _mapping(top.get("output"), "output", ("directory", "format"))
    fmt = out_raw.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError("output.format", f"must be one of {sorted(FORMATS)}, got {fmt!r}")
    directory = out_raw.get("directory")
    if directory is not None and not isinstance(directory, str):
        raise ConfigError("output.directory", f"expected a path string, got {directory!r}")

    amp_raw = _mapping(top.get("amplify"), "amplify", (
        "resamples", "confidence", "bootstrap_seed", "power_repetitions",
        "power_population", "alpha"))
    amplify = AmplifySettings(
        resamples=_number(amp_raw, "resamples", "amplify", 1000, integer=True, low=1),
        confidence=_number(amp_raw, "confidence", "amplify", 0.99, low=0, high=1,
                           low_open=True, high_open=True),
        bootstrap_seed=(_number(amp_raw, "bootstrap_seed", "amplify", integer=True, low=0)
                        if amp_raw.get("bootstrap_seed") is not None else None),
        power_repetitions=_number(amp_raw, "power_repetitions", "amplify", 0, integer=True,
                                  low=0),
        power_population=_number(amp_raw, "power_population", "amplify", 1000, integer=True,
                                 low=2),
        alpha=_number(amp_raw, "alpha", "amplify", 0.05, low=0, high=1, low_open=True,
                      high_open=True),
    )
    if 0 < amplify.power_repetitions < 20:
        raise ConfigError("amplify.power_repetitions",
                          "power estimate unreliable: use 0 (skip) or >= 20 repetitions")

    return ExperimentConfig(cohort, snapshot, OutputSpec(directory, fmt), amplify, source)


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("urnaudit.presets").iterdir()
                  if p.name.endswith(".yaml"))


def _read_text(ref: Union[str, Path]) -> Tuple[str, str]:
    path = Path(ref)
    if path.exists():
        return path.read_text(encoding="utf-8"), str(path)
    name = str(ref)
    if name in preset_names():
        return (resources.files("urnaudit.presets").joinpath(f"{name}.yaml")
                .read_text(encoding="utf-8"), f"preset:{name}")
    raise ConfigError("", f"no config file or preset named {name!r} "
                          f"(presets: {', '.join(preset_names())})")


def load_config(ref: Union[str, Path]) -> ExperimentConfig:
    """Load a config from a file path or a bundled preset name."""
    text, source = _read_text(ref)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError("", f"{source}: YAML syntax error at {where}: "
                              f"{getattr(exc, 'problem', exc)}") from None
    return parse_config(data, source)

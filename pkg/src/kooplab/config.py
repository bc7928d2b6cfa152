"""Experiment configuration: JSON documents validated with field-path errors.

A configuration names a system, an evaluation grid, a dataset recipe,
dictionary specs, formulations to fit, and conditions to check. Validation
is eager: referenced system and dictionary names are resolved at load time,
and every complaint carries the dotted path of the offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .consistency import CONDITION_IDS, DEFAULT_TOLERANCE
from .dynamics import ControlledSystem, EvaluationGrid, builtin_system
from .formulations import VARIANTS
from .observables import build_dictionary, joint_dictionary_from_spec

__all__ = [
    "CONFIG_SCHEMA_VERSION",
    "ConfigError",
    "DatasetSection",
    "FormulationSpec",
    "ExperimentConfig",
    "load_config",
    "parse_config",
]

CONFIG_SCHEMA_VERSION = 1

_CONTROL_KINDS = ("zero", "uniform-random", "sinusoid", "prbs")
_DATASET_KINDS = ("discrete-pairs", "continuous-derivative")
_DICTIONARY_ROLES = ("state", "input", "cross")


class ConfigError(ValueError):
    """Invalid configuration; `path` is the dotted field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config error at {path}: {message}")


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(path, message)


def _get_mapping(raw, path: str) -> dict:
    _require(isinstance(raw, dict), path, f"expected an object, got {type(raw).__name__}")
    return raw


@dataclass
class DatasetSection:
    n_samples: int
    seed: int
    control_kind: str = "uniform-random"
    dt: float = 0.1
    kind: str | None = None


@dataclass
class FormulationSpec:
    variant: str
    ridge: float = 0.0


@dataclass
class ExperimentConfig:
    """Validated experiment description; builders construct live objects."""

    system_name: str
    system_params: dict = field(default_factory=dict)
    state_box: list | None = None
    input_box: list | None = None
    points_per_axis: int = 9
    zero_input_grid: bool = False
    dataset: DatasetSection | None = None
    dictionaries: dict = field(default_factory=dict)
    formulations: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    tolerance: float = DEFAULT_TOLERANCE
    out_dir: str = "runs"

    def build_system(self) -> ControlledSystem:
        return builtin_system(self.system_name, **self.system_params)

    def build_grid(self) -> EvaluationGrid:
        system = self.build_system()
        state_box = self.state_box
        if state_box is None:
            state_box = [(-2.0, 2.0)] * system.state_dim
        input_box = self.input_box
        if input_box is None:
            input_box = [(-1.0, 1.0)] * system.input_dim
        grid = EvaluationGrid.from_boxes(state_box, input_box, self.points_per_axis)
        return grid.autonomous() if self.zero_input_grid else grid

    def dictionary(self, role: str):
        """Build the dictionary for a role ('state'/'input'/'cross')."""
        if role not in _DICTIONARY_ROLES:
            raise ValueError(f"unknown dictionary role {role!r}")
        spec = self.dictionaries.get(role)
        if spec is None:
            raise ConfigError(
                f"dictionaries.{role}", "section required for the requested operation"
            )
        if role == "cross":
            return joint_dictionary_from_spec(spec)
        return build_dictionary(spec)

    def sampling_regions(self):
        """State/input boxes reused as dataset sampling regions."""
        system = self.build_system()
        state_box = self.state_box or [(-2.0, 2.0)] * system.state_dim
        input_box = self.input_box or [(-1.0, 1.0)] * system.input_dim
        return state_box, input_box


def _validate_box(raw, path: str, expected_len: int, what: str) -> list:
    _require(isinstance(raw, list) and len(raw) > 0, path, f"expected a list of {what} bounds")
    _require(
        len(raw) == expected_len,
        path,
        f"expected {expected_len} axis bound pair(s), got {len(raw)}",
    )
    box = []
    for i, pair in enumerate(raw):
        entry = f"{path}[{i}]"
        _require(
            isinstance(pair, (list, tuple)) and len(pair) == 2,
            entry, "expected a [low, high] pair",
        )
        lo, hi = pair
        _require(
            isinstance(lo, (int, float)) and isinstance(hi, (int, float)),
            entry, "bounds must be numbers",
        )
        _require(lo < hi, entry, f"low bound must be < high bound, got [{lo}, {hi}]")
        box.append((float(lo), float(hi)))
    return box


def _validate_dataset(raw) -> DatasetSection:
    sec = _get_mapping(raw, "dataset")
    known = {"n_samples", "seed", "control_kind", "dt", "kind"}
    for key in sorted(set(sec) - known):
        raise ConfigError(f"dataset.{key}", "unknown field")
    _require("n_samples" in sec, "dataset.n_samples", "required field is missing")
    n = sec["n_samples"]
    _require(isinstance(n, int) and not isinstance(n, bool) and n >= 1,
             "dataset.n_samples", f"expected an integer >= 1, got {n!r}")
    # determinism contract: any randomized draw must be reproducible
    _require("seed" in sec, "dataset.seed", "required field is missing (sampling must be seeded)")
    seed = sec["seed"]
    _require(isinstance(seed, int) and not isinstance(seed, bool),
             "dataset.seed", f"expected an integer, got {seed!r}")
    control_kind = sec.get("control_kind", "uniform-random")
    _require(control_kind in _CONTROL_KINDS, "dataset.control_kind",
             f"expected one of {', '.join(_CONTROL_KINDS)}, got {control_kind!r}")
    dt = sec.get("dt", 0.1)
    _require(isinstance(dt, (int, float)) and dt > 0, "dataset.dt",
             f"expected a positive number, got {dt!r}")
    kind = sec.get("kind")
    if kind is not None:
        _require(kind in _DATASET_KINDS, "dataset.kind",
                 f"expected one of {', '.join(_DATASET_KINDS)}, got {kind!r}")
    return DatasetSection(n_samples=n, seed=seed, control_kind=control_kind,
                          dt=float(dt), kind=kind)


def _validate_formulations(raw) -> list:
    _require(isinstance(raw, list), "formulations", "expected a list")
    out = []
    for i, entry in enumerate(raw):
        path = f"formulations[{i}]"
        if isinstance(entry, str):
            entry = {"variant": entry}
        entry = _get_mapping(entry, path)
        for key in sorted(set(entry) - {"variant", "ridge"}):
            raise ConfigError(f"{path}.{key}", "unknown field")
        _require("variant" in entry, f"{path}.variant", "required field is missing")
        variant = entry["variant"]
        _require(variant in VARIANTS, f"{path}.variant",
                 f"expected one of {', '.join(VARIANTS)}, got {variant!r}")
        ridge = entry.get("ridge", 0.0)
        _require(isinstance(ridge, (int, float)) and ridge >= 0, f"{path}.ridge",
                 f"expected a number >= 0, got {ridge!r}")
        out.append(FormulationSpec(variant=variant, ridge=float(ridge)))
    seen = set()
    for i, f_spec in enumerate(out):
        _require(f_spec.variant not in seen, f"formulations[{i}].variant",
                 f"duplicate formulation {f_spec.variant!r}")
        seen.add(f_spec.variant)
    return out


def _validate_checks(raw) -> list:
    _require(isinstance(raw, list), "checks", "expected a list")
    out = []
    for i, entry in enumerate(raw):
        _require(isinstance(entry, str), f"checks[{i}]", "expected a condition id string")
        if entry != "all-applicable":
            _require(entry in CONDITION_IDS, f"checks[{i}]",
                     f"unknown condition id {entry!r}")
        out.append(entry)
    if "all-applicable" in out:
        _require(len(out) == 1, "checks",
                 "'all-applicable' cannot be combined with explicit condition ids")
    return out


_DICT_ROLES_BY_VARIANT = {
    "affine": ("state",),
    "separable": ("state", "input"),
    "joint": ("state", "cross"),
    "bilinear": ("state", "input"),
    "eigen": ("state",),
}


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed JSON document into an ExperimentConfig."""
    raw = _get_mapping(raw, "<root>")
    version = raw.get("schema_version")
    _require(version == CONFIG_SCHEMA_VERSION, "schema_version",
             f"expected {CONFIG_SCHEMA_VERSION}, got {version!r}")
    known = {"schema_version", "system", "grid", "dataset", "dictionaries",
             "formulations", "checks", "tolerance", "out_dir"}
    for key in sorted(set(raw) - known):
        raise ConfigError(key, "unknown section")

    system_sec = _get_mapping(raw.get("system"), "system")
    _require("name" in system_sec, "system.name", "required field is missing")
    name = system_sec["name"]
    _require(isinstance(name, str), "system.name", "expected a string")
    params = system_sec.get("params", {})
    params = _get_mapping(params, "system.params")
    try:
        system = builtin_system(name, **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError("system", str(exc)) from exc

    cfg = ExperimentConfig(system_name=name, system_params=dict(params))

    grid_sec = raw.get("grid")
    if grid_sec is not None:
        grid_sec = _get_mapping(grid_sec, "grid")
        for key in sorted(set(grid_sec) - {"state_box", "input_box", "points_per_axis",
                                           "zero_input"}):
            raise ConfigError(f"grid.{key}", "unknown field")
        if "state_box" in grid_sec:
            cfg.state_box = _validate_box(grid_sec["state_box"], "grid.state_box",
                                          system.state_dim, "state")
        if "input_box" in grid_sec:
            cfg.input_box = _validate_box(grid_sec["input_box"], "grid.input_box",
                                          system.input_dim, "input")
        pts = grid_sec.get("points_per_axis", 9)
        _require(isinstance(pts, int) and not isinstance(pts, bool) and pts >= 2,
                 "grid.points_per_axis", f"expected an integer >= 2, got {pts!r}")
        cfg.points_per_axis = pts
        zero_input = grid_sec.get("zero_input", False)
        _require(isinstance(zero_input, bool), "grid.zero_input", "expected a boolean")
        cfg.zero_input_grid = zero_input

    if raw.get("dataset") is not None:
        cfg.dataset = _validate_dataset(raw["dataset"])

    dict_sec = raw.get("dictionaries")
    if dict_sec is not None:
        dict_sec = _get_mapping(dict_sec, "dictionaries")
        for role in sorted(set(dict_sec) - set(_DICTIONARY_ROLES)):
            raise ConfigError(f"dictionaries.{role}",
                              f"unknown role (expected one of {', '.join(_DICTIONARY_ROLES)})")
        for role, spec in dict_sec.items():
            path = f"dictionaries.{role}"
            spec = _get_mapping(spec, path)
            try:
                built = joint_dictionary_from_spec(spec) if role == "cross" \
                    else build_dictionary(spec)
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(path, str(exc)) from exc
            expected_dim = system.input_dim if role == "input" else system.state_dim
            got_dim = built.state_dim if role == "cross" else built.input_dim
            _require(got_dim == expected_dim, path,
                     f"dictionary dimension {got_dim} does not match the "
                     f"system ({expected_dim})")
            if role == "cross":
                _require(built.input_dim == system.input_dim, path,
                         f"dictionary input dimension {built.input_dim} does not "
                         f"match the system ({system.input_dim})")
        cfg.dictionaries = {role: dict(spec) for role, spec in dict_sec.items()}

    if raw.get("formulations") is not None:
        cfg.formulations = _validate_formulations(raw["formulations"])
        for i, f_spec in enumerate(cfg.formulations):
            for role in _DICT_ROLES_BY_VARIANT[f_spec.variant]:
                _require(role in cfg.dictionaries, f"formulations[{i}]",
                         f"variant {f_spec.variant!r} needs a "
                         f"dictionaries.{role} spec")

    if raw.get("checks") is not None:
        cfg.checks = _validate_checks(raw["checks"])

    tolerance = raw.get("tolerance", DEFAULT_TOLERANCE)
    _require(isinstance(tolerance, (int, float)) and tolerance > 0, "tolerance",
             f"expected a positive number, got {tolerance!r}")
    cfg.tolerance = float(tolerance)

    out_dir = raw.get("out_dir", "runs")
    _require(isinstance(out_dir, str) and out_dir != "", "out_dir",
             "expected a non-empty string")
    cfg.out_dir = out_dir
    return cfg


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON config file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON in {path.name}: {exc}") from exc
    return parse_config(raw)

"""Run configuration: defaults, JSON options file, environment and flags.

Precedence, lowest first: DEFAULTS, options file, SURFSTOKES_* environment
variables, explicit overrides (command-line flags). Unknown keys fail closed.
"""
import os
import json
from typing import Any, Dict, Optional

from errors import ConfigError

OPTIONS_ENV = "SURFSTOKES_OPTIONS"
THREADS_ENV = "SURFSTOKES_THREADS"

DEFAULTS: Dict[str, Any] = {
    "surface.kind": "biconcave",
    "surface.c": 0.95,
    "surface.d": 0.96,
    "surface.radius": 1.0,
    "mesh.base_level": 3,
    "mesh.smooth": True,
    "quadrature.degree": None,
    "penalty.eta_override": None,
    "solver.kind": "direct",
    "solver.tol": 1e-10,
    "solver.refine_steps": 2,
    "run.levels": [0, 1, 2, 3],
    "run.orders": [2, 3],
    "run.formulations": ["th", "sf"],
    "output.dir": "results",
}

SURFACE_KINDS = ("sphere", "biconcave", "plane")
SOLVER_KINDS = ("direct", "minres")
FORMULATIONS = ("th", "sf")


def parse_int_list(value) -> list:
    """Accept [0, 1], "0,1,2" or a range "0..3" (inclusive)."""
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    if isinstance(value, int):
        return [value]
    text = str(value).strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty range {text}")
        return list(range(lo, hi + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def parse_str_list(value) -> list:
    if isinstance(value, (list, tuple)):
        return [str(v).strip().lower() for v in value]
    return [v.strip().lower() for v in str(value).split(",") if v.strip()]


def _optional_float(value):
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
        return None
    return float(value)


def _optional_int(value):
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
        return None
    return int(value)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "1", "yes", "on"):
        return True
    if text in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _choice(options):
    def coerce(value):
        text = str(value).strip().lower()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return text
    return coerce


def _formulations(value):
    items = parse_str_list(value)
    for item in items:
        if item not in FORMULATIONS:
            raise ValueError(f"unknown formulation {item!r}")
    return items


COERCE = {
    "surface.kind": _choice(SURFACE_KINDS),
    "surface.c": float,
    "surface.d": float,
    "surface.radius": float,
    "mesh.base_level": int,
    "mesh.smooth": _bool,
    "quadrature.degree": _optional_int,
    "penalty.eta_override": _optional_float,
    "solver.kind": _choice(SOLVER_KINDS),
    "solver.tol": float,
    "solver.refine_steps": int,
    "run.levels": parse_int_list,
    "run.orders": parse_int_list,
    "run.formulations": _formulations,
    "output.dir": str,
}


def coerce_value(key: str, value):
    if key not in COERCE:
        raise ConfigError(f"Unknown configuration key: {key}")
    try:
        return COERCE[key](value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key}: {e}") from e


class RunConfig:
    """Validated flat mapping of dotted configuration keys."""

    def __init__(self, values: Optional[Dict[str, Any]] = None):
        self.values: Dict[str, Any] = dict(DEFAULTS)
        if values:
            self.update(values)

    def update(self, values: Dict[str, Any]) -> None:
        for key, value in values.items():
            self.values[key] = coerce_value(key, value)

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"Unknown configuration key: {key}")
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.values)

    def dump(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.values, f, indent=2, sort_keys=True)
            f.write("\n")

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def __repr__(self) -> str:
        return f"RunConfig({self.values!r})"


def read_options_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Options file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Options file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Options file {path} must contain a JSON object")
    return data


def env_overrides(environ=None) -> Dict[str, Any]:
    """SURFSTOKES_SURFACE_D=0.8 -> {"surface.d": "0.8"} for known keys only."""
    environ = os.environ if environ is None else environ
    found = {}
    for key in DEFAULTS:
        name = "SURFSTOKES_" + key.replace(".", "_").upper()
        if name in environ:
            found[key] = environ[name]
    return found


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                environ=None) -> RunConfig:
    cfg = RunConfig()
    environ = os.environ if environ is None else environ
    path = path or environ.get(OPTIONS_ENV)
    if path:
        cfg.update(read_options_file(path))
    cfg.update(env_overrides(environ))
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def thread_count(environ=None) -> int:
    environ = os.environ if environ is None else environ
    try:
        return max(1, int(environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1

"""Run configuration: sectioned key/value files that round-trip exactly.

Configs are experiment artifacts: the parser is strict (unknown keys are
errors, physical constants must be positive) and the serializer is
canonical, so parse -> serialize -> parse is the identity and a config's
hash identifies the run.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    # grid
    mode: str = "strip2d"
    Lx: float = 1.0
    Ly: float = 1.0
    nx: int = 32
    ny: int = 32
    # potential
    potential_kind: str = "double_well"
    potential_coeffs: tuple = ()
    # constants
    b: float = 1.0
    c: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    # stepper
    scheme: str = "semi_implicit"
    dt: float = 1e-3
    t_end: float = 1.0
    stabilization_S: float | None = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    energy_guard: bool = True
    dt_min: float = 1e-8
    # initial data
    initial_kind: str = "random_fourier"
    initial_amplitude: float = 0.1
    initial_mean: float = 0.0
    initial_modes: int = 3
    initial_path: str = ""
    # io
    output_dir: str = "run_out"
    series_stride: int = 1
    snapshot_stride: int = 0
    plots: bool = True
    # analysis
    probe_window: float = 0.5
    kernel_tol: float = 1e-8
    rate_fit_t_min: float | None = None
    fit_tol: float = 0.1
    # reference equilibrium (prefix of saved .csv/.meta pair)
    reference_path: str = ""
    # run
    seed: int = 0


_LAYOUT = {
    "grid": ("mode", "Lx", "Ly", "nx", "ny"),
    "potential": ("potential_kind", "potential_coeffs"),
    "constants": ("b", "c", "alpha", "beta"),
    "stepper": ("scheme", "dt", "t_end", "stabilization_S", "newton_tol",
                "newton_max_iter", "energy_guard", "dt_min"),
    "initial": ("initial_kind", "initial_amplitude", "initial_mean",
                "initial_modes", "initial_path"),
    "io": ("output_dir", "series_stride", "snapshot_stride", "plots"),
    "analysis": ("probe_window", "kernel_tol", "rate_fit_t_min", "fit_tol"),
    "reference": ("reference_path",),
    "run": ("seed",),
}

_FILE_KEYS = {
    "potential_kind": "kind",
    "potential_coeffs": "coeffs",
    "initial_kind": "kind",
    "initial_amplitude": "amplitude",
    "initial_mean": "mean",
    "initial_modes": "modes",
    "initial_path": "path",
    "reference_path": "psi_path",
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _to_text(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, tuple):
        return ",".join(f"{v:.17g}" for v in value)
    return str(value)


def _from_text(name, text):
    ftype = _FIELD_TYPES[name]
    text = text.strip()
    try:
        if ftype == "bool":
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if ftype == "int":
            return int(text)
        if ftype == "float":
            return float(text)
        if ftype == "float | None":
            return None if text.lower() in ("none", "") else float(text)
        if ftype == "tuple":
            if not text:
                return ()
            return tuple(float(p) for p in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"field {name}: {exc}")


def parse_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (Lx vs lx)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}")
    values = {}
    for section in parser.sections():
        if section not in _LAYOUT:
            raise ConfigError(f"unknown config section [{section}]")
        known = {_FILE_KEYS.get(name, name): name for name in _LAYOUT[section]}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            name = known[key]
            values[name] = _from_text(name, raw)
    cfg = replace(RunConfig(), **values)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    for name in ("b", "c", "alpha", "beta"):
        val = getattr(cfg, name)
        if val <= 0:
            raise ConfigError(
                f"constants.{name} = {val}: physical constants must be "
                "strictly positive"
            )
    if cfg.mode not in ("strip2d", "interval1d"):
        raise ConfigError(f"grid.mode must be strip2d or interval1d, got {cfg.mode!r}")
    if cfg.Ly <= 0 or (cfg.mode == "strip2d" and cfg.Lx <= 0):
        raise ConfigError("grid lengths must be positive")
    if cfg.ny < 4 or (cfg.mode == "strip2d" and cfg.nx < 4):
        raise ConfigError("grid.nx and grid.ny must be at least 4")
    if cfg.dt <= 0 or cfg.t_end <= 0 or cfg.dt_min <= 0:
        raise ConfigError("stepper.dt, stepper.t_end and stepper.dt_min must be positive")
    if cfg.scheme not in ("semi_implicit", "newton"):
        raise ConfigError(f"stepper.scheme must be semi_implicit or newton, got {cfg.scheme!r}")
    if cfg.potential_kind not in ("double_well", "polynomial_custom"):
        raise ConfigError(f"potential.kind unknown: {cfg.potential_kind!r}")
    if cfg.potential_kind == "polynomial_custom" and not cfg.potential_coeffs:
        raise ConfigError("potential.coeffs required for polynomial_custom")
    if cfg.initial_kind not in ("constant", "cosine", "random_fourier", "file"):
        raise ConfigError(f"initial.kind unknown: {cfg.initial_kind!r}")
    if cfg.initial_kind == "file" and not cfg.initial_path:
        raise ConfigError("initial.path required for initial.kind = file")
    if cfg.series_stride < 1 or cfg.snapshot_stride < 0:
        raise ConfigError("io.series_stride must be >= 1 and io.snapshot_stride >= 0")
    if cfg.probe_window <= 0 or cfg.kernel_tol <= 0:
        raise ConfigError("analysis.probe_window and analysis.kernel_tol must be positive")


def serialize_config(cfg):
    out = io.StringIO()
    for section, names in _LAYOUT.items():
        out.write(f"[{section}]\n")
        for name in names:
            key = _FILE_KEYS.get(name, name)
            out.write(f"{key} = {_to_text(getattr(cfg, name))}\n")
        out.write("\n")
    return out.getvalue()


def config_hash(cfg):
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()

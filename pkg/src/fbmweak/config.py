"""Experiment configuration: INI file plus environment overrides, strictly validated.

Sections ``[run]``, ``[spectral]``, ``[solver]`` and ``[heat]`` map onto the
dataclasses below.  Any key may be overridden by ``FBMWEAK_<SECTION>_<KEY>``
(upper case).  Unknown sections, keys or ``FBMWEAK_*`` variables abort before
any computation.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError

EXPERIMENTS = (
    "sample",
    "covariance-test",
    "isometry-test",
    "lemma1-check",
    "solve",
    "example-heat",
    "hypothesis-check",
)
ENV_PREFIX = "FBMWEAK_"
SAMPLERS = ("cholesky", "circulant", "volterra")


def _auto_int(text: str) -> int | None:
    return None if text.strip().lower() == "auto" else int(text)


@dataclass(frozen=True)
class RunConfig:
    hurst: float = 0.7
    horizon_T: float = 1.0
    n_steps: int = 32
    n_paths: int = 10_000
    seed: int = 0
    sampler: str = "cholesky"
    output_dir: str = "."

    def validate(self):
        _require(0.0 < self.hurst < 1.0, "run.hurst must lie in (0, 1)")
        _require(self.horizon_T > 0, "run.horizon_T must be positive")
        _require(2 <= self.n_steps <= 4096, "run.n_steps must lie in [2, 4096]")
        _require(self.n_paths >= 0, "run.n_paths must be non-negative")
        _require(self.seed >= 0, "run.seed must be non-negative")
        _require(self.sampler in SAMPLERS, f"run.sampler must be one of {', '.join(SAMPLERS)}")


@dataclass(frozen=True)
class SpectralConfig:
    eigen_decay_p: float = 2.0
    truncation_N: int = 64

    def validate(self):
        _require(self.eigen_decay_p > 1.0, "spectral.eigen_decay_p must exceed 1 (trace class)")
        _require(1 <= self.truncation_N <= 1024, "spectral.truncation_N must lie in [1, 1024]")


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 0.5
    k: int | None = None
    tol: float = 1e-8
    max_iter: int = 200
    method: str = "picard"
    smoothing_n: int | None = None

    def validate(self):
        _require(0.0 < self.epsilon < 1.0, "solver.epsilon must lie in (0, 1)")
        _require(self.k is None or (self.k > 0 and self.k % 2 == 0), "solver.k must be 'auto' or a positive even integer")
        _require(self.tol > 0, "solver.tol must be positive")
        _require(self.max_iter >= 1, "solver.max_iter must be at least 1")
        _require(self.method in ("picard", "newton"), "solver.method must be picard or newton")
        _require(self.smoothing_n is None or self.smoothing_n >= 1, "solver.smoothing_n must be 'auto' or >= 1")


@dataclass(frozen=True)
class HeatConfig:
    alpha: float = 0.1
    beta: float = 0.0
    gamma: float = 0.5
    L: float = 6.283185307179586
    n_modes: int = 9

    def validate(self):
        _require(self.alpha >= 0 and self.beta >= 0, "heat.alpha and heat.beta must be non-negative")
        _require(self.L > 0, "heat.L must be positive")
        _require(2 <= self.n_modes <= 257, "heat.n_modes must lie in [2, 257]")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    run: RunConfig = field(default_factory=RunConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    heat: HeatConfig = field(default_factory=HeatConfig)

    def validate(self) -> "ExperimentConfig":
        _require(self.experiment in EXPERIMENTS, f"unknown experiment {self.experiment!r}")
        for section in SECTIONS:
            getattr(self, section).validate()
        return self


SECTIONS = {"run": RunConfig, "spectral": SpectralConfig, "solver": SolverConfig, "heat": HeatConfig}
_PARSERS = {"float": float, "int": int, "str": str, "int | None": _auto_int}


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def _convert(section: str, key: str, text: str):
    cls = SECTIONS[section]
    kinds = {f.name: f.type for f in fields(cls)}
    if key not in kinds:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    try:
        return _PARSERS[kinds[key]](text.strip())
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r} as {kinds[key]}") from exc


def parse_text(text: str) -> dict:
    """INI text -> {section: {key: value}} with every section and key checked."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__no_default__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        out[section] = {key: _convert(section, key, val) for key, val in parser.items(section)}
    return out


def env_overrides(environ=None) -> dict:
    """FBMWEAK_<SECTION>_<KEY> variables -> {section: {key: value}}."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in SECTIONS:
            raise ConfigError(f"environment variable {name} names no config section")
        match = {f.name.lower(): f.name for f in fields(SECTIONS[section])}
        if key not in match:
            raise ConfigError(f"environment variable {name} names no key of [{section}]")
        out.setdefault(section, {})[match[key]] = _convert(section, match[key], environ[name])
    return out


def build_config(experiment: str, file_values: dict, env_values: dict, seed=None, output_dir=None) -> ExperimentConfig:
    """Defaults < config file < environment < command-line flags."""
    parts = {}
    for section, cls in SECTIONS.items():
        values = {**file_values.get(section, {}), **env_values.get(section, {})}
        parts[section] = cls(**values)
    run = parts["run"]
    if seed is not None:
        run = replace(run, seed=seed)
    if output_dir is not None:
        run = replace(run, output_dir=output_dir)
    parts["run"] = run
    return ExperimentConfig(experiment, **parts).validate()


def load_config(experiment: str, path, seed=None, output_dir=None, environ=None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return build_config(experiment, parse_text(text), env_overrides(environ), seed, output_dir)

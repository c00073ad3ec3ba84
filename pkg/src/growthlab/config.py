"""Flat key=value experiment configuration with lossless round-tripping.

Keys are namespaced (``model.phi``, ``panel.n_firms``, ``analysis.n_boot``,
``strategy.grid_step``, ``output.dir``); unknown keys are errors so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

from .dgp import ModelParams
from .errors import ConfigError, InvalidParameterError


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"not an integer: {text!r}") from exc


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


@dataclass
class ExperimentConfig:
    """Every knob of a full experiment run, with file round-tripping."""

    # model.*
    phi: float = 0.9
    g_bar: float = 0.0
    nu: float = math.inf
    sigma_u: float = 1.0
    sigma_eps: float = 1.0
    ar_order: int = 2
    discount_rate: float = 0.05
    # panel.*
    n_firms: int = 50
    T: int = 200
    master_seed: int = 0
    # analysis.*
    n_bins: int = 100
    n_boot: int = 1000
    tail_level: float = 0.90
    normalize: bool = False
    min_window: int = 40
    # strategy.*
    grid_step: float = 0.01
    # ingest.* (optional; only the ingest subcommand uses it)
    ingest_csv: str = ""
    # output.*
    output_dir: str = "out"

    _KEYS = {
        "model.phi": ("phi", _parse_float),
        "model.g_bar": ("g_bar", _parse_float),
        "model.nu": ("nu", _parse_float),
        "model.sigma_u": ("sigma_u", _parse_float),
        "model.sigma_eps": ("sigma_eps", _parse_float),
        "model.ar_order": ("ar_order", _parse_int),
        "model.discount_rate": ("discount_rate", _parse_float),
        "panel.n_firms": ("n_firms", _parse_int),
        "panel.T": ("T", _parse_int),
        "panel.master_seed": ("master_seed", _parse_int),
        "analysis.n_bins": ("n_bins", _parse_int),
        "analysis.n_boot": ("n_boot", _parse_int),
        "analysis.tail_level": ("tail_level", _parse_float),
        "analysis.normalize": ("normalize", _parse_bool),
        "analysis.min_window": ("min_window", _parse_int),
        "strategy.grid_step": ("grid_step", _parse_float),
        "ingest.csv": ("ingest_csv", str),
        "output.dir": ("output_dir", str),
    }

    def model_params(self) -> ModelParams:
        try:
            return ModelParams(
                phi=self.phi,
                g_bar=self.g_bar,
                nu=self.nu,
                sigma_u=self.sigma_u,
                sigma_eps=self.sigma_eps,
                ar_order=self.ar_order,
                discount_rate=self.discount_rate,
            )
        except InvalidParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> "ExperimentConfig":
        if self.n_firms < 1 or self.T < 1:
            raise ConfigError("panel.n_firms and panel.T must be >= 1")
        if self.n_bins < 2:
            raise ConfigError("analysis.n_bins must be >= 2")
        if self.n_boot < 1:
            raise ConfigError("analysis.n_boot must be >= 1")
        if not 0.5 <= self.tail_level < 1.0:
            raise ConfigError("analysis.tail_level must be in [0.5, 1)")
        if self.min_window < 2 * self.ar_order + 2:
            raise ConfigError(
                f"analysis.min_window must be >= {2 * self.ar_order + 2} "
                f"for ar_order={self.ar_order}"
            )
        if not 0.0 < self.grid_step < 0.5:
            raise ConfigError("strategy.grid_step must be in (0, 0.5)")
        if not self.output_dir:
            raise ConfigError("output.dir must be set")
        self.model_params()
        return self

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in cls._KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in seen:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            seen.add(key)
            attr, parse = cls._KEYS[key]
            try:
                setattr(cfg, attr, parse(value))
            except ConfigError as exc:
                raise ConfigError(f"line {lineno}: {key}: {exc}") from exc
        return cfg.validate()

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text())

    def to_text(self) -> str:
        lines = []
        for key in sorted(self._KEYS):
            attr, _ = self._KEYS[key]
            lines.append(f"{key}={_format_value(getattr(self, attr))}")
        return "\n".join(lines) + "\n"

    # Location keys identify where files live, not what the experiment is;
    # the hash must survive moving the same experiment to another directory.
    _LOCATION_KEYS = ("ingest.csv", "output.dir")

    def config_hash(self) -> str:
        lines = [
            line
            for line in self.to_text().splitlines()
            if line.split("=", 1)[0] not in self._LOCATION_KEYS
        ]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Scenario keys are the :class:`~jbfmc.model.SystemConfig` field names, plus
``snr_db`` as an alternative to ``noise_power``. Algorithm knobs live in
:class:`PipelineOptions` and sweep keys in :class:`~jbfmc.harness.SweepSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .bigamp import BigAmpOptions
from .completion import CompletionOptions
from .model import ConfigError, SystemConfig, snr_db_to_noise_power

__all__ = [
    "PipelineOptions",
    "parse_key_values",
    "read_key_values",
    "config_from_mapping",
    "load_config",
    "DESK_PROFILE",
    "PUBLISHED_PROFILE",
    "SMALL_NOISELESS_PROFILE",
]

_INT_FIELDS = {"num_bs_antennas", "num_surface_elements", "num_rx_antennas", "pilot_length",
               "num_paths_h", "num_paths_g", "completion_rank", "rng_seed"}
_FLOAT_FIELDS = {"sparsity_level", "noise_power"}


@dataclass(frozen=True)
class PipelineOptions:
    """Algorithm settings shared by every trial of an experiment."""

    max_restarts: int = 10
    max_sweeps: int = 500
    bigamp_tol: float = 1e-6
    damping: float = 0.3
    jitter: bool = False
    completion_max_iter: int = 500
    completion_tol: float = 1e-10
    projection: str = "tangent"
    ist_threshold: float = None

    def bigamp(self) -> BigAmpOptions:
        return BigAmpOptions(max_restarts=self.max_restarts, max_sweeps=self.max_sweeps,
                             tol=self.bigamp_tol, damping=self.damping, jitter=self.jitter)

    def completion(self) -> CompletionOptions:
        return CompletionOptions(max_iter=self.completion_max_iter, tol=self.completion_tol,
                                 projection=self.projection, threshold=self.ist_threshold)


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_OPTION_TYPES = {f.name: f.type for f in fields(PipelineOptions)}


def _convert_option(key, text):
    kind = _OPTION_TYPES[key]
    if kind == "bool":
        return _to_bool(text)
    if kind == "int":
        return int(text)
    if kind == "str":
        return text.strip()
    return float(text)


def parse_key_values(text: str, source: str = "<string>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_key_values(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_key_values(text, str(path))


def config_from_mapping(values: dict, allow_extra=()) -> tuple[SystemConfig, PipelineOptions]:
    """Build (SystemConfig, PipelineOptions) from string values.

    Unknown keys are an error unless listed in ``allow_extra``.
    """
    scenario, options = {}, {}
    values = dict(values)
    if "snr_db" in values:
        if "noise_power" in values:
            raise ConfigError("give either snr_db or noise_power, not both")
        values["noise_power"] = repr(snr_db_to_noise_power(float(values.pop("snr_db"))))
    for key, text in values.items():
        try:
            if key in _INT_FIELDS:
                scenario[key] = int(text)
            elif key in _FLOAT_FIELDS:
                scenario[key] = float(text)
            elif key in _OPTION_TYPES:
                options[key] = _convert_option(key, text)
            elif key in allow_extra:
                continue
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {text!r}") from exc
    missing = [name for name in SystemConfig.field_names()
               if name not in scenario and name != "rng_seed"]
    if missing:
        raise ConfigError(f"missing keys: {', '.join(missing)}")
    return SystemConfig(**scenario), PipelineOptions(**options)


def load_config(path) -> tuple[SystemConfig, PipelineOptions]:
    return config_from_mapping(read_key_values(path))


# Desk-scale scenario used by the trend experiments.
DESK_PROFILE = SystemConfig(
    num_bs_antennas=16, num_surface_elements=32, num_rx_antennas=16, pilot_length=128,
    sparsity_level=0.2, noise_power=0.1, num_paths_h=2, num_paths_g=15, completion_rank=2,
    rng_seed=2024,
)

# Dimensions of the published simulations.
PUBLISHED_PROFILE = SystemConfig(
    num_bs_antennas=64, num_surface_elements=70, num_rx_antennas=64, pilot_length=300,
    sparsity_level=0.2, noise_power=0.1, num_paths_h=4, num_paths_g=35, completion_rank=35,
    rng_seed=2024,
)

# Small noiseless end-to-end scenario.
SMALL_NOISELESS_PROFILE = SystemConfig(
    num_bs_antennas=8, num_surface_elements=16, num_rx_antennas=8, pilot_length=64,
    sparsity_level=0.3, noise_power=1e-12, num_paths_h=2, num_paths_g=7, completion_rank=2,
    rng_seed=7,
)

"""Run configuration.

Values are resolved from (lowest precedence first) model defaults, a key=value
config file, ``PULSE_DTW_*`` environment variables and CLI flags. Nested
sections are addressed with ``__`` (``spring__epsilon=0.4``) or a dot
(``spring.epsilon=0.4``).
"""
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigurationError
from src.logging_config import get_logger

logger = get_logger(__name__)

__version__ = "1.0.0"

ENV_PREFIX = "PULSE_DTW_"

Method = Literal["boosted-st", "boosted-dt", "spring", "adaptive"]


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [float(item) for item in value.split(",") if item.strip()]
    if isinstance(value, (int, float)):
        return [float(value)]
    return value


class SpringConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: Optional[float] = Field(None, ge=0, description="Report threshold on d(x_t, y_m); None calibrates it")
    warmup_factor: float = Field(0.5, gt=0, description="Multiplier on the warm-up median when calibrating epsilon")


class ThresholdConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    peak_fraction: float = Field(0.7, gt=0, lt=1, description="Fraction of the prominence envelope a peak must reach")
    refractory_fraction: float = Field(0.6, gt=0, lt=1, description="Minimum peak spacing as a fraction of cycle length")
    slope_window_s: float = Field(0.3, gt=0, description="Search window before a peak for the onset and max slope")
    decay_cycles: float = Field(4.0, gt=0, description="Threshold e-folding time, in cycle lengths")
    envelope_beats: int = Field(5, ge=1, description="Number of accepted peaks averaged into the envelope")


class RegionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    u_seconds: Optional[float] = Field(None, gt=0, description="Region length; defaults to one batch")
    e: int = Field(10, ge=1, description="DBA iteration cap")


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hr_profile_bpm: List[float] = Field(default_factory=lambda: [72.0])
    fs: float = Field(300.0, ge=100)
    duration_s: float = Field(60.0, gt=0)
    resp_mod_depth: float = Field(0.0, ge=0, lt=1)
    dicrotic_strength: List[float] = Field(default_factory=lambda: [0.3])
    noise_sigma: float = Field(0.0, ge=0)

    @field_validator("hr_profile_bpm", "dicrotic_strength", mode="before")
    @classmethod
    def parse_sequence(cls, v):
        return _split_list(v)

    @field_validator("hr_profile_bpm")
    @classmethod
    def validate_hr_profile(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("hr_profile_bpm must contain at least one value")
        if min(v) < 40 or max(v) > 180:
            raise ValueError(f"hr_profile_bpm values must lie within [40, 180] bpm, got {v}")
        return v

    @field_validator("dicrotic_strength")
    @classmethod
    def validate_dicrotic(cls, v: List[float]) -> List[float]:
        if not v or min(v) < 0:
            raise ValueError("dicrotic_strength must be a non-empty list of non-negative values")
        return v


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Method = "boosted-st"

    alpha: float = Field(0.7, gt=0, description="Lower search bound as a fraction of l_x")
    beta: float = Field(1.3, gt=0, description="Upper search bound as a fraction of l_x")
    gamma: float = Field(5000.0, gt=0, description="Scale of the morphology likelihood exp(-gamma*d)")
    batch_seconds: float = Field(60.0, gt=0)

    f_band_low: float = Field(0.5, gt=0, description="Lowest plausible cycle frequency (Hz)")
    f_band_high: float = Field(3.0, gt=0, description="Highest plausible cycle frequency (Hz)")
    band_fraction: float = Field(0.10, ge=0, le=1, description="Sakoe-Chiba half-width as a fraction of length")

    k: int = Field(3, ge=1, description="Maximum ensemble size")
    region: RegionConfig = Field(default_factory=RegionConfig)

    apply_filter: bool = True
    filter_low_hz: float = Field(0.5, gt=0)
    filter_high_hz: float = Field(5.0, gt=0)
    filter_order: int = Field(4, ge=2)

    tol_ms: float = Field(100.0, gt=0)
    ibi_min_ms: float = Field(600.0, gt=0)
    ibi_max_ms: float = Field(1500.0, gt=0)

    spring: SpringConfig = Field(default_factory=SpringConfig)
    threshold: ThresholdConfig = Field(default_factory=ThresholdConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    input_path: Optional[str] = None
    template_path: Optional[str] = None
    truth_path: Optional[str] = None
    events_path: Optional[str] = None
    output_dir: str = "output"
    fs_override: Optional[float] = Field(None, gt=0)
    export_trace: bool = True

    seed: Optional[int] = 0
    n_jobs: int = Field(1, description="joblib worker count for per-template analyses (-1 = all cores)")

    @field_validator("filter_order")
    @classmethod
    def validate_filter_order(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"filter_order must be even (forward-backward bandpass), got {v}")
        return v

    @field_validator("n_jobs")
    @classmethod
    def validate_n_jobs(cls, v: int) -> int:
        if v == 0:
            raise ValueError("n_jobs must be a positive worker count or -1")
        return v

    @model_validator(mode="after")
    def validate_bounds(self) -> "RunConfig":
        if self.alpha >= self.beta:
            raise ValueError(f"alpha ({self.alpha}) must be smaller than beta ({self.beta})")
        if self.alpha >= 1:
            raise ValueError(f"alpha ({self.alpha}) must be below 1 so the window contains l_x")
        if self.beta <= 1:
            raise ValueError(f"beta ({self.beta}) must exceed 1 so the window contains l_x")
        if self.f_band_low >= self.f_band_high:
            raise ValueError("f_band_low must be smaller than f_band_high")
        if self.filter_low_hz >= self.filter_high_hz:
            raise ValueError("filter_low_hz must be smaller than filter_high_hz")
        if self.ibi_min_ms >= self.ibi_max_ms:
            raise ValueError("ibi_min_ms must be smaller than ibi_max_ms")
        return self

    @property
    def region_seconds(self) -> float:
        return self.region.u_seconds or self.batch_seconds

    def manifest(self) -> Dict[str, Any]:
        return {
            "package": "pulse-dtw",
            "version": __version__,
            "seed": self.seed,
            "created": datetime.now(timezone.utc).isoformat(),
            "config": self.model_dump(mode="json"),
        }


def _nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for raw_key, value in flat.items():
        if value is None:
            continue
        parts = raw_key.strip().lower().replace(".", "__").split("__")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"'{part}' is a section and cannot take a scalar value", field=raw_key)
        node[parts[-1]] = value
    return nested


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _env_values(environ: Mapping[str, str]) -> Dict[str, str]:
    return {key[len(ENV_PREFIX) :]: value for key, value in environ.items() if key.startswith(ENV_PREFIX)}


def build_config(*layers: Mapping[str, Any]) -> RunConfig:
    """Validate merged flat layers into a RunConfig, later layers winning."""
    merged: Dict[str, Any] = {}
    for layer in layers:
        merged = _merge(merged, _nest(layer))

    try:
        return RunConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(loc) for loc in first["loc"]) or "config"
        message = first["msg"].removeprefix("Value error, ")
        logger.error(f"Invalid configuration for '{field}': {message}")
        raise ConfigurationError(f"{field}: {message}", field=field) from e


def load_config(
    config_file: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Resolve the run configuration.

    Args:
        config_file: Optional key=value file (parsed with python-dotenv)
        overrides: CLI flag values; None entries are ignored
        environ: Environment mapping (default: os.environ)

    Returns:
        Validated RunConfig
    """
    file_values: Dict[str, Any] = {}
    if config_file:
        if not os.path.exists(config_file):
            raise ConfigurationError(f"config file not found: {config_file}", field="config")
        file_values = dict(dotenv_values(config_file))
        logger.debug(f"Loaded {len(file_values)} settings from {config_file}")

    env_values = _env_values(os.environ if environ is None else environ)
    if env_values:
        logger.debug(f"Applying {len(env_values)} settings from {ENV_PREFIX}* variables")

    return build_config(file_values, env_values, dict(overrides or {}))

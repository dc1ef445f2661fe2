"""
Handles configuration management for pipeline runs and for the HTTP service.

This module uses `pydantic-settings` to define, validate, and access every
tunable of a run. A run is configured by a TOML file with the sections
[crop], [regions], [style], [paste], [gridmask] and [run]; keys the file omits
fall back to `COURTPRIOR_*` environment variables and then to the defaults
below. Unknown sections or keys are rejected.
"""

import math
from contextvars import ContextVar
from pathlib import Path
from typing import Annotated, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from .errors import ConfigError


CropMode = Literal["as-written", "hull-union"]


class _Section(BaseModel):
    # Unknown keys in a section are errors.
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- [crop] ---


class CannyParams(_Section):
    """Canny thresholds on the Sobel gradient magnitude, and the pre-blur sigma."""

    sigma: Annotated[float, Field(gt=0)] = 1.4
    low: Annotated[float, Field(gt=0)] = 50.0
    high: Annotated[float, Field(gt=0)] = 150.0

    @model_validator(mode="after")
    def _ordered(self):
        if self.low >= self.high:
            raise ValueError(f"canny low ({self.low}) must be below high ({self.high})")
        return self


class HoughParams(_Section):
    """Probabilistic Hough parameters; `min_len` overrides `min_len_frac · min(W, H)`."""

    rho_res: Annotated[float, Field(gt=0)] = 1.0
    theta_res: Annotated[float, Field(gt=0)] = math.pi / 180
    votes_min: Annotated[int, Field(ge=1)] = 80
    min_len: Optional[Annotated[float, Field(ge=0)]] = None
    min_len_frac: Annotated[float, Field(ge=0, le=1)] = 0.1
    max_gap: Annotated[int, Field(ge=0)] = 10
    merge_dist: Annotated[float, Field(ge=0)] = 6.0

    def min_len_for(self, width: int, height: int) -> float:
        if self.min_len is not None:
            return self.min_len
        return self.min_len_frac * min(width, height)


class CropParams(_Section):
    """Static crop bounds as image fractions, the vertical offset, and detection parameters."""

    h_min_frac: Annotated[float, Field(ge=0, le=1)] = 1 / 9
    h_max_frac: Annotated[float, Field(ge=0, le=1)] = 8 / 9
    w_min_frac: Annotated[float, Field(ge=0, le=1)] = 1 / 15
    w_max_frac: Annotated[float, Field(ge=0, le=1)] = 14 / 15
    y_offset: Annotated[int, Field(ge=0)] = 50
    mode: CropMode = "as-written"
    min_area: Annotated[float, Field(ge=0)] = 16.0
    canny: CannyParams = CannyParams()
    hough: HoughParams = HoughParams()

    @model_validator(mode="after")
    def _ordered(self):
        if self.h_min_frac >= self.h_max_frac or self.w_min_frac >= self.w_max_frac:
            raise ValueError("crop min fractions must be below max fractions")
        return self


# --- [regions] ---


class RegionConfig(_Section):
    band_frac: Annotated[float, Field(ge=0, le=1)] = 0.2
    person_categories: list[str] = ["person", "human", "player", "referee", "coach"]
    ball_categories: list[str] = ["ball", "basketball", "sports ball"]


# --- [style] ---


class StyleConfig(_Section):
    """Ranges from which per-object style parameters are drawn."""

    curve_points: Annotated[int, Field(ge=2)] = 4
    curve_jitter: Annotated[float, Field(ge=0, le=255)] = 30.0
    endpoint_jitter: Annotated[float, Field(ge=0, le=127)] = 30.0
    hue_range: tuple[float, float] = (-30.0, 30.0)
    sp_density_range: tuple[float, float] = (0.001, 0.02)
    brightness_range: tuple[float, float] = (0.8, 1.2)

    @model_validator(mode="after")
    def _ranges(self):
        for name in ("hue_range", "sp_density_range", "brightness_range"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} is reversed: {low} > {high}")
        if self.sp_density_range[0] < 0 or self.sp_density_range[1] > 1:
            raise ValueError("sp_density_range must lie in [0, 1]")
        if self.brightness_range[0] <= 0:
            raise ValueError("brightness_range must be positive")
        return self


# --- [paste] ---


class PasteConfig(_Section):
    paste_min: Annotated[int, Field(ge=0)] = 1
    paste_max: Annotated[int, Field(ge=0)] = 4
    visibility_min: Annotated[float, Field(ge=0, le=1)] = 0.1
    min_area: Annotated[float, Field(ge=0)] = 16.0
    max_attempts: Annotated[int, Field(ge=1)] = 50
    feather_px: Annotated[int, Field(ge=0)] = 0
    scale_jitter: bool = False
    scale_range: tuple[float, float] = (0.8, 1.2)
    allow_overlap: bool = False

    @model_validator(mode="after")
    def _ordered(self):
        if self.paste_min > self.paste_max:
            raise ValueError(f"paste_min ({self.paste_min}) exceeds paste_max ({self.paste_max})")
        low, high = self.scale_range
        if not 0 < low <= high:
            raise ValueError(f"invalid scale_range {self.scale_range}")
        return self


# --- [gridmask] ---


class GridMaskConfig(_Section):
    """Variable-intensity GridMask applied to whole output variants."""

    prob: Annotated[float, Field(ge=0, le=1)] = 0.0
    unit_range: tuple[int, int] = (32, 96)
    ratio_range: tuple[float, float] = (0.3, 0.6)
    fill: Annotated[int, Field(ge=0, le=255)] = 114

    @model_validator(mode="after")
    def _ranges(self):
        if not 2 <= self.unit_range[0] <= self.unit_range[1]:
            raise ValueError(f"invalid unit_range {self.unit_range}")
        if not 0 <= self.ratio_range[0] <= self.ratio_range[1] < 1:
            raise ValueError(f"invalid ratio_range {self.ratio_range}")
        return self


# --- [run] ---


class RunConfig(_Section):
    duplication_factor: Annotated[int, Field(ge=1)] = 10
    seed: Annotated[int, Field(ge=0, lt=2**64)] = 0
    workers: Annotated[int, Field(ge=1)] = 1
    output_dir: Path = Path("output")
    split: Optional[str] = None
    group_regex: Optional[str] = None


# The TOML file read by the next AugmentConfig construction; set by load_config.
_config_file: ContextVar[Optional[Path]] = ContextVar("courtprior_config_file", default=None)


class AugmentConfig(BaseSettings):
    """
    Full parameterization of a pipeline run.

    Each attribute is one section of the TOML config file. Values can also be
    supplied through environment variables such as `COURTPRIOR_RUN__SEED=7`.
    """

    crop: CropParams = CropParams()
    regions: RegionConfig = RegionConfig()
    style: StyleConfig = StyleConfig()
    paste: PasteConfig = PasteConfig()
    gridmask: GridMaskConfig = GridMaskConfig()
    run: RunConfig = RunConfig()

    # Nested sections map to variables like COURTPRIOR_PASTE__PASTE_MAX.
    model_config = SettingsConfigDict(
        env_prefix="COURTPRIOR_", env_nested_delimiter="__", extra="forbid"
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # Highest priority first: explicit overrides, then the file, then the environment.
        sources = [init_settings]
        toml_file = _config_file.get()
        if toml_file is not None:
            sources.append(TomlConfigSettingsSource(settings_cls, toml_file=toml_file))
        sources.append(env_settings)
        return tuple(sources)

    def snapshot(self) -> dict:
        """The config as recorded in manifests: execution-only fields are left out."""
        return self.model_dump(mode="json", exclude={"run": {"workers", "output_dir"}})


def load_config(path: Optional[Path] = None, **overrides) -> AugmentConfig:
    """
    Loads and validates a run configuration.

    Args:
        path (Path, optional): A TOML file. When omitted only the environment and
            defaults are used.
        **overrides: Section dictionaries that take precedence over the file
            (for example `run={"workers": 8}`); they are merged key by key.

    Raises:
        ConfigError: If the file is missing or not valid TOML, or any value is invalid.

    Returns:
        AugmentConfig: The validated configuration.
    """
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"cannot read config {path}: no such file")

    token = _config_file.set(Path(path) if path is not None else None)
    try:
        return AugmentConfig(**overrides)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    except ValueError as exc:
        # TOML syntax errors and environment values that cannot be decoded.
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    finally:
        _config_file.reset(token)


class Settings(BaseSettings):
    """
    Defines the HTTP service's environment variables.

    `config_file` optionally points at a run config whose [crop] and [regions]
    sections drive court detection requests.
    """

    config_file: Optional[Path] = None
    log_level: str = "INFO"

    # Read from the environment or a .env file, e.g. COURTPRIOR_API_LOG_LEVEL.
    model_config = SettingsConfigDict(env_file=".env", env_prefix="COURTPRIOR_API_", extra="ignore")


# A single, global instance imported by the service modules.
settings = Settings()

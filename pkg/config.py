import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from features import ExtractionSettings
from losskernel import LossWeights

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class PipelineConfig(BaseModel):
    """Every tunable of the pipeline, with the defaults each stage documents."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # audio / features
    threshold_db: float = -40.0
    frame_ms: float = Field(default=25.0, gt=0)
    hop_ms: float = Field(default=10.0, gt=0)
    pitch_min_hz: float = Field(default=50.0, gt=0)
    pitch_max_hz: float = Field(default=600.0, gt=0)
    voicing_threshold: float = Field(default=0.15, gt=0, lt=1)
    max_duration_s: float = Field(default=20.0, gt=0)
    jobs: int = Field(default=1, ge=1)

    # stats
    sample_sigma: bool = False

    # losses
    lambda_utt: float = Field(default=0.1, ge=0)
    lambda_cate: float = Field(default=100.0, ge=0)
    temperature: float = Field(default=0.07, gt=0)
    grad_eps: float = Field(default=1e-5, gt=0)

    # curriculum
    batch_size: int = Field(default=8, ge=1)

    # chat endpoint
    llm_url: str | None = None
    llm_model: str = "glm-4-9b-chat"
    llm_temperature: float = Field(default=0.7, ge=0)
    llm_attempts: int = Field(default=3, ge=1)
    llm_backoff_s: float = Field(default=0.5, ge=0)
    llm_timeout_s: float = Field(default=30.0, gt=0)
    max_in_flight: int = Field(default=4, ge=1)

    def extraction(self) -> ExtractionSettings:
        return ExtractionSettings(
            threshold_db=self.threshold_db,
            frame_ms=self.frame_ms,
            hop_ms=self.hop_ms,
            pitch_min_hz=self.pitch_min_hz,
            pitch_max_hz=self.pitch_max_hz,
            voicing_threshold=self.voicing_threshold,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_utt=self.lambda_utt, lambda_cate=self.lambda_cate, temperature=self.temperature)


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    """
    Build the effective configuration.

    Values come from the defaults, then the flat TOML file at path, then any
    override that is not None.

    Raises:
        ConfigError: On unknown keys, bad values or an unparsable file.
    """
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                values.update(tomllib.load(f))
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        config = PipelineConfig.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"{'.'.join(map(str, first['loc']))}: {first['msg']}") from e
    if config.pitch_min_hz >= config.pitch_max_hz:
        raise ConfigError(f"pitch_min_hz {config.pitch_min_hz} must be below pitch_max_hz {config.pitch_max_hz}")
    return config

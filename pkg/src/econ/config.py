"""
ECON Configuration

Run configuration is a YAML file with one mapping per section. Every key can be
overridden from the environment with the ECON_ prefix, nested keys joined by
a double underscore (ECON_PREDICTOR__HIDDEN_SIZE=32).
"""

import hashlib
import json
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, PositiveInt, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class Ablation(str, Enum):
    FULL = "full"
    MACRO_ONLY = "A"  # micro trend removed
    MICRO_ONLY = "I"  # macro trend removed
    NONE = "none"
    SENTIMENT_ALL = "sentiment-all"  # daily sentiment of every distinct tweet, no trends
    SENTIMENT_TOPK = "sentiment-topk"  # daily sentiment of the filtered top-k tweets

    @property
    def sentiment_only(self) -> bool:
        return self in (Ablation.SENTIMENT_ALL, Ablation.SENTIMENT_TOPK)

    @property
    def needs_pretraining(self) -> bool:
        return self not in (Ablation.NONE, Ablation.SENTIMENT_ALL, Ablation.SENTIMENT_TOPK)


ABLATION_ORDER = [Ablation.FULL, Ablation.MACRO_ONLY, Ablation.MICRO_ONLY, Ablation.NONE]
SENTIMENT_VARIANTS = [Ablation.SENTIMENT_ALL, Ablation.SENTIMENT_TOPK]
VARIANT_ORDER = ABLATION_ORDER + SENTIMENT_VARIANTS


class DataConfig(BaseModel):
    # Directory holding prices.csv, tweets.jsonl, macro.csv and sectors.csv.
    # Unset means the synthetic generator is used.
    dir: Optional[Path] = None
    trading_hours: Optional[bool] = None

    @property
    def synthetic(self) -> bool:
        return self.dir is None

    @property
    def use_trading_hours(self) -> bool:
        if self.trading_hours is None:
            return not self.synthetic
        return self.trading_hours


class LabelConfig(BaseModel):
    move_band: float = Field(0.005, gt=0)
    vol_threshold: float = Field(0.05, gt=0)

    @model_validator(mode="after")
    def _band_below_threshold(self) -> "LabelConfig":
        if not self.move_band < self.vol_threshold:
            raise ValueError("move_band must be smaller than vol_threshold")
        return self


class SplitConfig(BaseModel):
    train: float = Field(0.7, gt=0, lt=1)
    val: float = Field(0.1, gt=0, lt=1)
    test: float = Field(0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _sums_to_one(self) -> "SplitConfig":
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        return self

    def ratios(self) -> tuple:
        return (self.train, self.val, self.test)


class FilterConfig(BaseModel):
    k: Union[PositiveInt, Literal["auto", "all"]] = "auto"
    candidates: List[PositiveInt] = Field(default_factory=lambda: list(range(1, 11)))
    slack: float = Field(0.05, ge=0, lt=1)
    scorer: Literal["lexicon", "import"] = "lexicon"
    lexicon: Optional[Path] = None
    # Days between the tweets and the movement they are paired with during
    # calibration. Unset: 1 for synthetic data (tweets lead returns), 0 otherwise.
    lag: Optional[int] = Field(None, ge=0)

    def resolved_lag(self, synthetic: bool) -> int:
        if self.lag is None:
            return 1 if synthetic else 0
        return self.lag


class TextConfig(BaseModel):
    max_len: PositiveInt = 48
    min_freq: PositiveInt = 2


class SelfAwareConfig(BaseModel):
    embedding_dim: PositiveInt = 32  # k; tweet and sector embeddings are 2k wide
    learning_rate: float = Field(1e-3, ge=0)
    batch_size: PositiveInt = 64
    epochs: PositiveInt = 30
    patience: PositiveInt = 5


class PredictorConfig(BaseModel):
    hidden_size: PositiveInt = 64
    window: int = Field(5, ge=5, le=15)
    fusion_dim: Optional[PositiveInt] = None  # None keeps the concatenated width
    learning_rate: float = Field(1e-3, ge=0)
    batch_size: PositiveInt = 64
    epochs: PositiveInt = 50
    patience: PositiveInt = 10
    volatility_weight: float = Field(1.0, ge=0)


class SynthConfig(BaseModel):
    n_stocks: int = Field(20, ge=2)
    m_sectors: int = Field(10, ge=1)
    n_days: int = Field(500, ge=10)
    signal_strength: float = Field(0.8, ge=0, le=1)
    noise: float = Field(0.02, ge=0)
    tweet_rate: float = Field(6.0, ge=0)
    signal_tweets: int = Field(3, ge=0)
    n_keywords: int = Field(3, ge=0)
    flat_rate: float = Field(0.1, ge=0, le=1)
    duplicate_rate: float = Field(0.1, ge=0, le=1)
    volume_signal: float = Field(0.25, ge=0)
    volume_noise: float = Field(0.5, ge=0)
    start: date = date(2021, 1, 4)

    @model_validator(mode="after")
    def _sectors_fit(self) -> "SynthConfig":
        if self.m_sectors > self.n_stocks:
            raise ValueError("m_sectors cannot exceed n_stocks")
        return self


class RunConfig(BaseSettings):
    """Everything a pipeline run depends on."""

    model_config = SettingsConfigDict(
        env_prefix="ECON_",
        env_nested_delimiter="__",
        env_file=".env",
        extra="ignore",
    )

    seed: int = 0
    ablation: Ablation = Ablation.FULL
    output_dir: Path = Path("runs/default")
    threads: PositiveInt = 1
    log_level: str = "INFO"

    data: DataConfig = Field(default_factory=DataConfig)
    labels: LabelConfig = Field(default_factory=LabelConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    filter: FilterConfig = Field(default_factory=FilterConfig)
    text: TextConfig = Field(default_factory=TextConfig)
    selfaware: SelfAwareConfig = Field(default_factory=SelfAwareConfig)
    predictor: PredictorConfig = Field(default_factory=PredictorConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls,
        init_settings,
        env_settings,
        dotenv_settings,
        file_secret_settings,
    ):
        # Environment beats the config file.
        return env_settings, dotenv_settings, init_settings, file_secret_settings

    @field_validator("log_level")
    @classmethod
    def _upper_level(cls, value: str) -> str:
        return value.upper()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)

    @classmethod
    def defaults(cls) -> "RunConfig":
        """Built-in defaults, ignoring the environment and .env."""
        return cls.model_construct()

    def override(self, **dotted: Any) -> "RunConfig":
        """Copy with ``section.key`` (or top-level) values replaced; None values are ignored.

        Used for command-line flags, which win over both the file and the environment.
        """
        updates: Dict[str, Any] = {}
        sections: Dict[str, Dict[str, Any]] = {}
        for key, value in dotted.items():
            if value is None:
                continue
            head, _, rest = key.partition(".")
            if rest:
                sections.setdefault(head, {})[rest] = value
            else:
                updates[head] = value
        try:
            for name, changes in sections.items():
                current = getattr(self, name)
                updates[name] = type(current).model_validate({**current.model_dump(), **changes})
            if "ablation" in updates:
                updates["ablation"] = Ablation(updates["ablation"])
            if "seed" in updates:
                updates["seed"] = int(updates["seed"])
            if "output_dir" in updates:
                updates["output_dir"] = Path(updates["output_dir"])
        except AttributeError as exc:
            raise ConfigError(f"unknown config section in override: {exc}") from exc
        except (ValidationError, ValueError) as exc:
            raise ConfigError(f"invalid override: {exc}") from exc
        return self.model_copy(update=updates)

    def digest(self, *sections: str) -> str:
        """Digest of the named sections (all of them when none are named)."""
        dumped = self.model_dump(mode="json")
        if sections:
            dumped = {name: dumped[name] for name in sections}
        return digest_json(dumped)


def digest_json(payload: Any) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_seed(root: int, label: str) -> int:
    """Stable per-stage seed fanned out from the root seed."""
    digest = hashlib.sha256(f"{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


def load_config(path: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """Load a YAML run config; keyword overrides win over the file."""
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for key, value in overrides.items():
        if value is None:
            continue
        _set_dotted(raw, key, value)
    try:
        return RunConfig(**raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _set_dotted(target: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = target
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value

"""Pipeline configuration: defaults, YAML loading, environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .graph import DOMAIN_HOP_BOUNDS

# Default per-question hop distribution. The bucket shares follow the
# empirical skew of the natural-image training split (roughly 71% of
# questions in the 2-hop bucket); the 2-hop bucket is split between h=1
# (attribute lookup) and h=2 chains.
DEFAULT_HOP_DISTRIBUTION = {1: 0.10, 2: 0.61, 3: 0.08, 4: 0.08, 5: 0.13}

DEFAULT_JUDGE_MODELS = [
    "qwen3-30b-a3b-instruct-2507",
    "gemma-3-27b-it",
    "mistral-small-3.2-24b-instruct",
]

DEFAULT_GENERATION_MODEL = "qwen3-30b-a3b-instruct-2507"


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    seed: int = 7
    image_count_range: tuple[int, int] = (1, 6)
    hop_distribution: dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_HOP_DISTRIBUTION)
    )
    qa_per_sample: int = 3
    nodes_per_image: int = 4
    generation_model: str = DEFAULT_GENERATION_MODEL
    judge_models: list[str] = field(default_factory=lambda: list(DEFAULT_JUDGE_MODELS))
    sentence_removal_threshold: float = 0.6
    concurrency: int = 8
    provider_endpoint: Optional[str] = None
    embed_endpoint: Optional[str] = None
    api_key: Optional[str] = None

    def validate(self) -> None:
        lo, hi = self.image_count_range
        if not (1 <= lo <= hi <= 6):
            raise ConfigError(f"image_count_range {self.image_count_range} out of range")
        total = sum(self.hop_distribution.values())
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"hop distribution sums to {total}, not 1")
        max_h = max(hi for _, hi in DOMAIN_HOP_BOUNDS.values())
        for h, w in self.hop_distribution.items():
            if not (1 <= h <= max_h):
                raise ConfigError(f"hop count {h} outside supported bounds")
            if w < 0:
                raise ConfigError(f"negative weight for hop {h}")
        if len(self.judge_models) != 3:
            raise ConfigError("exactly three judge models are required")
        if self.qa_per_sample < 1 or self.concurrency < 1:
            raise ConfigError("qa_per_sample and concurrency must be positive")
        if not (0.0 <= self.sentence_removal_threshold <= 1.0):
            raise ConfigError("sentence_removal_threshold must be in [0, 1]")

    def hop_distribution_for(self, domain: str) -> dict[int, float]:
        """Distribution clipped to the domain's hop bounds and renormalized."""
        lo, hi = DOMAIN_HOP_BOUNDS[domain]
        clipped = {h: w for h, w in self.hop_distribution.items() if lo <= h <= hi}
        total = sum(clipped.values())
        if total <= 0:
            raise ConfigError(f"no hop mass within bounds for domain {domain}")
        return {h: w / total for h, w in clipped.items()}

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        config = cls()
        simple = {
            "seed", "qa_per_sample", "nodes_per_image", "generation_model",
            "judge_models", "sentence_removal_threshold", "concurrency",
            "provider_endpoint", "embed_endpoint",
        }
        for key, value in raw.items():
            if key in simple:
                setattr(config, key, value)
            elif key == "image_count_range":
                config.image_count_range = (int(value[0]), int(value[1]))
            elif key == "hop_distribution":
                config.hop_distribution = {int(k): float(v) for k, v in value.items()}
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        return config

    @classmethod
    def load(cls, path=None) -> "PipelineConfig":
        """Load YAML config (when given) and apply environment overrides.
        Secrets come only from the environment, never the file."""
        raw = {}
        if path is not None:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
            if not isinstance(raw, dict):
                raise ConfigError("config file must contain a mapping")
        config = cls.from_dict(raw)
        if os.environ.get("CROSSQA_ENDPOINT"):
            config.provider_endpoint = os.environ["CROSSQA_ENDPOINT"]
        if os.environ.get("CROSSQA_EMBED_ENDPOINT"):
            config.embed_endpoint = os.environ["CROSSQA_EMBED_ENDPOINT"]
        if os.environ.get("CROSSQA_MODEL"):
            config.generation_model = os.environ["CROSSQA_MODEL"]
        config.api_key = os.environ.get("CROSSQA_API_KEY")
        config.validate()
        return config

"""Run configuration: one JSON document with a validated section per pipeline stage."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import lexicon
from .utils import stable_hash

PRESETS = ("desk", "paper-shape")
VARIANTS = ("full", "stage1-only", "stage2-only")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GraphSection(_Section):
    num_nodes: int = Field(500, ge=2)
    num_topics: int = Field(5, ge=1, le=len(lexicon.TOPICS))
    p_in: float = Field(0.1, ge=0.0, le=1.0)
    p_out: float = Field(0.005, ge=0.0, le=1.0)
    phrases_per_node: tuple[int, int] = (3, 6)
    off_topic_rate: float = Field(0.0, ge=0.0, lt=1.0)
    producer_fraction: float = Field(0.8, gt=0.0, le=1.0)
    eval_fraction: float = Field(0.2, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check(self) -> "GraphSection":
        if not self.p_out < self.p_in:
            raise ValueError("graph needs p_out < p_in (homophily)")
        if self.producer_fraction + self.eval_fraction > 1.0 + 1e-9:
            raise ValueError("producer_fraction + eval_fraction must not exceed 1")
        return self


class EncoderSection(_Section):
    hidden_dims: tuple[int, ...] = (64,)
    fanout: int = Field(10, ge=1)
    epochs: int = Field(300, ge=0)
    lr: float = Field(0.01, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    batch_edges: int = Field(512, ge=2)
    val_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    max_vocab: int = Field(512, ge=8)


class ProducerSection(_Section):
    backend: Literal["template", "remote"] = "template"
    endpoint: str | None = None
    model: str = "chat-model"
    timeout: float = Field(30.0, gt=0)
    max_retries: int = Field(2, ge=0)
    max_concurrent: int = Field(4, ge=1)
    fanout: int = Field(10, ge=1)
    # Test nodes described for the held-out retrieval check; never used for training.
    held_out_pairs: int = Field(80, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "ProducerSection":
        if self.backend == "remote" and not self.endpoint:
            raise ValueError("remote producer backend needs an endpoint")
        return self


class TranslatorSection(_Section):
    num_queries: int = Field(8, ge=1)
    width: int = Field(64, ge=1)
    num_layers: int = Field(4, ge=1)
    num_heads: int = Field(4, ge=1)
    ffn_mult: int = Field(4, ge=1)
    cross_attention_every: int = Field(2, ge=1)
    max_len: int = Field(64, ge=4)
    temperature_init: float = Field(0.07, gt=0)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)


class LmSection(_Section):
    width: int = Field(128, ge=1)
    num_layers: int = Field(4, ge=1)
    num_heads: int = Field(4, ge=1)
    ffn_mult: int = Field(4, ge=1)
    max_positions: int = Field(160, ge=8)
    vocab_size: int = Field(512, ge=16)
    corpus_lines: int = Field(6000, ge=10)
    steps: int = Field(800, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(2e-3, gt=0)
    warmup: int = Field(100, ge=0)
    # Pretrained LMs are keyed by their config and reused across runs from this directory.
    cache_dir: str | None = None


class StageSection(_Section):
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(16, ge=2)
    accumulation: int = Field(1, ge=1)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(0.05, ge=0)


class EvalSection(_Section):
    ks: tuple[int, ...] = (1, 3, 5)
    recall_mode: Literal["binary", "multiclass"] = "multiclass"
    max_new_tokens: int = Field(4, ge=1)
    retrieval_batch: int = Field(16, ge=2)

    @field_validator("ks")
    @classmethod
    def _ks(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if not v or any(k < 1 for k in v) or list(v) != sorted(set(v)):
            raise ValueError("ks must be distinct positive integers in increasing order")
        return v


class SeedSection(_Section):
    graph: int = 0
    split: int = 0
    gm: int = 0
    producer: int = 0
    lm: int = 0
    translator: int = 0
    eval: int = 0


class RunConfig(_Section):
    preset: Literal["desk", "paper-shape"] = "desk"
    graph: GraphSection = GraphSection()
    encoder: EncoderSection = EncoderSection()
    producer: ProducerSection = ProducerSection()
    translator: TranslatorSection = TranslatorSection()
    lm: LmSection = LmSection()
    stage1: StageSection = StageSection(epochs=50)
    stage2: StageSection = StageSection(epochs=10)
    eval: EvalSection = EvalSection()
    seeds: SeedSection = SeedSection()

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if self.translator.width % self.translator.num_heads:
            raise ValueError("translator width must be divisible by its head count")
        if self.lm.width % self.lm.num_heads:
            raise ValueError("lm width must be divisible by its head count")
        if self.encoder.hidden_dims[-1] <= 0:
            raise ValueError("encoder output dimension must be positive")
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        """Every per-run seed set to ``seed``; the LM seed is kept so one frozen LM serves many runs."""
        seeds = self.seeds.model_copy(update={k: seed for k in ("graph", "split", "gm", "producer",
                                                                 "translator", "eval")})
        return self.model_copy(update={"seeds": seeds})

    def updated(self, **sections: dict) -> "RunConfig":
        """Copy with the given sections partially overridden, re-validated."""
        data = self.model_dump()
        for name, patch in sections.items():
            data[name] = {**data[name], **patch}
        return RunConfig.model_validate(data)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)

    def _hashable(self) -> dict:
        data = self.model_dump(mode="json")
        # Where the LM cache lives does not change any result.
        data["lm"].pop("cache_dir")
        return data

    def digest(self) -> str:
        return stable_hash(self._hashable())

    def stage_digest(self, *sections: str) -> str:
        data = self._hashable()
        return stable_hash({name: data[name] for name in sections})


class ConfigFileError(ValueError):
    pass


def preset(name: str) -> RunConfig:
    if name == "desk":
        return RunConfig()
    if name == "paper-shape":
        return RunConfig(
            preset="paper-shape",
            encoder=EncoderSection(hidden_dims=(768, 768), fanout=10),
            translator=TranslatorSection(num_queries=32, width=768, num_layers=12, num_heads=12, max_len=512),
            lm=LmSection(width=4096, num_layers=28, num_heads=32, max_positions=1024, vocab_size=65024),
            stage1=StageSection(lr=1e-6, weight_decay=0.05, accumulation=32),
            stage2=StageSection(lr=1e-6, weight_decay=0.05, accumulation=32),
        )
    raise ConfigFileError(f"unknown preset {name!r}; expected one of {PRESETS}")


def ten_topic(config: RunConfig | None = None) -> RunConfig:
    """The harder 10-topic task used for the stage ablation."""
    return (config or RunConfig()).updated(graph={"num_topics": 10})


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigFileError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigFileError(f"{path}: top level must be an object")
    base = preset(raw.get("preset", "desk")).model_dump()
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    try:
        return RunConfig.model_validate(base)
    except ValidationError as exc:
        raise ConfigFileError(f"{path}: {exc}") from None


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config.to_json() + "\n", encoding="utf-8")

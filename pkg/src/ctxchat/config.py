"""Run configuration: every tunable surfaced in one structured JSON file.

Unknown keys are rejected so typos fail loudly. CLI flags override file
values; the fully-resolved config is echoed into checkpoints and reports.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Raised for malformed or contradictory configuration."""


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0


@dataclass
class CorpusConfig:
    vocab_size: int = 20000
    bucket_bounds: list[int] = field(default_factory=lambda: [10, 15, 25, 50])
    batch_size: int = 32
    max_in_len: int = 50
    max_out_len: int = 50
    window: int = 2  # baseline-2 concat window
    window_both_speakers: bool = True
    val_fraction: float = 0.1


@dataclass
class DAEncoderConfig:
    embed_dim: int = 128
    max_len: int = 25
    windows: list[int] = field(default_factory=lambda: [3, 4, 5, 6, 8])
    filters_per_window: int = 128
    hidden_dim: int = 512
    num_classes: int = 10
    dropout: float = 0.5
    epochs: int = 10

    @property
    def pooled_dim(self) -> int:
        return self.filters_per_window * len(self.windows)


@dataclass
class Seq2SeqConfig:
    mode: str = "baseline1"  # baseline1 | baseline2 | css
    embed_dim: int = 128
    encoder_hidden_per_dir: int = 256
    decoder_hidden: int = 256
    context_dim: int = 512  # must equal the DA encoder hidden_dim in css mode
    epochs: int = 10
    attend_raw_keys: bool = False

    @property
    def encoder_state_dim(self) -> int:
        return 2 * self.encoder_hidden_per_dir

    @property
    def fused_dim(self) -> int:
        return self.encoder_state_dim + self.context_dim


@dataclass
class DecodeConfig:
    mode: str = "greedy"  # greedy | beam
    beam_width: int = 3
    chosen_beam: int = 3
    length_penalty: float = 0.0
    mask_unk: bool = True


@dataclass
class ContextConfig:
    granularity: str = "turn"  # turn | pair
    window_pairs: int = 2
    include_current: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    da: DAEncoderConfig = field(default_factory=DAEncoderConfig)
    seq2seq: Seq2SeqConfig = field(default_factory=Seq2SeqConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    context: ContextConfig = field(default_factory=ContextConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "RunConfig":
        if self.seq2seq.mode not in ("baseline1", "baseline2", "css"):
            raise ConfigError(f"unknown seq2seq mode {self.seq2seq.mode!r}")
        if self.decode.mode not in ("greedy", "beam"):
            raise ConfigError(f"unknown decode mode {self.decode.mode!r}")
        if not 1 <= self.decode.chosen_beam <= self.decode.beam_width:
            raise ConfigError(
                f"chosen_beam {self.decode.chosen_beam} outside 1..beam_width {self.decode.beam_width}"
            )
        if self.context.granularity not in ("turn", "pair"):
            raise ConfigError(f"unknown context granularity {self.context.granularity!r}")
        if self.corpus.bucket_bounds != sorted(self.corpus.bucket_bounds):
            raise ConfigError("bucket_bounds must be ascending")
        return self


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _apply(obj, values: dict, path: str) -> None:
    known = {f.name: f for f in fields(obj)}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}{key!r}")
        current = getattr(obj, key)
        if hasattr(current, "__dataclass_fields__"):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path}{key!r} must be an object")
            _apply(current, val, f"{path}{key}.")
        else:
            setattr(obj, key, val)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional JSON file, then overrides.

    ``overrides`` uses dotted keys ("optimizer.lr") mapping to values, the
    shape the CLI produces from flags.
    """
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        _apply(cfg, raw, "")
    for dotted, val in (overrides or {}).items():
        obj = cfg
        *parents, leaf = dotted.split(".")
        for part in parents:
            if not hasattr(obj, part):
                raise ConfigError(f"unknown config key {dotted!r}")
            obj = getattr(obj, part)
        if not hasattr(obj, leaf):
            raise ConfigError(f"unknown config key {dotted!r}")
        setattr(obj, leaf, val)
    return cfg.validate()

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Any

from polyglot_probe.errors import InputError

FFN_KINDS = ("relu", "gated-silu")
_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the toy decoder-only transformer."""

    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 128
    max_seq_len: int = 64
    ffn_kind: str = "relu"
    seed: int = 0
    tie_unembed: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise InputError(f"{name} must be a positive integer, got {value!r}")
        if self.vocab_size < 2:
            raise InputError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.d_model % self.n_heads != 0:
            raise InputError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if self.ffn_kind not in FFN_KINDS:
            raise InputError(f"ffn_kind must be one of {FFN_KINDS}, got {self.ffn_kind!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed <= _U64_MAX:
            raise InputError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_neurons(self) -> int:
        return self.n_layers * self.d_ff

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class ModelConfig:
    layers_enc: int = 2
    layers_dec: int = 2
    attn_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    medusa_heads: int = 8
    medusa_hidden: int = 64
    vocab_size: int = 32
    max_len: int = 160
    dropout: float = 0.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.d_model % self.attn_heads:
            raise ValueError("d_model must be divisible by attn_heads")
        if self.medusa_heads < 0 or self.layers_enc < 0 or self.layers_dec < 0:
            raise ValueError("layer and head counts must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def num_output_heads(self) -> int:
        return self.medusa_heads + 1

    @classmethod
    def large(cls, vocab_size: int = 100, **overrides: Any) -> ModelConfig:
        """Six encoder/decoder layers, 8 attention heads, d=256, ff=2048, 20 extra heads.

        ``medusa_hidden=125`` is the hidden width that puts the 20 extra heads
        closest to a 1.3M parameter budget.
        """
        base = dict(
            layers_enc=6,
            layers_dec=6,
            attn_heads=8,
            d_model=256,
            d_ff=2048,
            medusa_heads=20,
            medusa_hidden=125,
            vocab_size=vocab_size,
            max_len=512,
            dropout=0.1,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def toy(cls, vocab_size: int, **overrides: Any) -> ModelConfig:
        base = dict(
            layers_enc=2,
            layers_dec=2,
            attn_heads=4,
            d_model=64,
            d_ff=256,
            medusa_heads=8,
            medusa_hidden=64,
            vocab_size=vocab_size,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def replace(self, **changes: Any) -> ModelConfig:
        return dataclasses.replace(self, **changes)

from __future__ import annotations

import enum
import statistics
from dataclasses import dataclass, field


class Strategy(str, enum.Enum):
    BS = "bs"
    BS_OPT = "bs-opt"
    HSBS = "hsbs"
    MSBS = "msbs"


class DraftSource(str, enum.Enum):
    QUERY = "query-fragment"
    MEDUSA = "medusa-heads"


@dataclass(frozen=True)
class Draft:
    tokens: tuple[int, ...]
    source: DraftSource

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class VerificationResult:
    """Outcome of checking one draft against the main head.

    ``bonus`` is the main head's argmax after the accepted prefix, or ``None``
    when no distribution for that position was supplied.
    """

    accepted: int
    bonus: int | None
    flags: tuple[bool, ...]

    def __post_init__(self) -> None:
        if self.accepted != sum(self.flags) or any(self.flags[self.accepted :]):
            raise ValueError("acceptance flags must be a prefix of ones")


@dataclass(frozen=True)
class DecodeConfig:
    """Decoding knobs.

    ``max_len`` caps the number of generated tokens (``<eos>`` included);
    a hypothesis reaching it is finished without ``<eos>``.
    """

    beam_size: int = 10
    max_len: int = 160
    nucleus: float = 0.9975
    draft_len: int = 20
    n_drafts: int = 1
    strategy: Strategy = Strategy.BS
    optimized: bool = True

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0.0 <= self.nucleus <= 1.0:
            raise ValueError("nucleus must lie in [0, 1]")
        if self.draft_len < 1 or self.n_drafts < 1:
            raise ValueError("draft_len and n_drafts must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        object.__setattr__(self, "strategy", Strategy(self.strategy))


@dataclass
class DecodeMetrics:
    """Per-session counters; ``merge`` sums them across sessions."""

    model_calls: int = 0
    encoder_calls: int = 0
    cycles: int = 0
    drafted_tokens: int = 0
    accepted_tokens: int = 0
    batch_sizes: list[int] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_tokens / self.drafted_tokens if self.drafted_tokens else 0.0

    @property
    def mean_batch_size(self) -> float:
        return statistics.fmean(self.batch_sizes) if self.batch_sizes else 0.0

    def record_call(self, rows: int) -> None:
        self.model_calls += 1
        self.batch_sizes.append(rows)

    def merge(self, other: DecodeMetrics) -> DecodeMetrics:
        return DecodeMetrics(
            self.model_calls + other.model_calls,
            self.encoder_calls + other.encoder_calls,
            self.cycles + other.cycles,
            self.drafted_tokens + other.drafted_tokens,
            self.accepted_tokens + other.accepted_tokens,
            self.batch_sizes + other.batch_sizes,
            self.wall_time + other.wall_time,
        )

    def to_dict(self) -> dict:
        return {
            "model_calls": self.model_calls,
            "encoder_calls": self.encoder_calls,
            "cycles": self.cycles,
            "drafted_tokens": self.drafted_tokens,
            "accepted_tokens": self.accepted_tokens,
            "acceptance_rate": self.acceptance_rate,
            "mean_batch_size": self.mean_batch_size,
            "wall_time": self.wall_time,
        }

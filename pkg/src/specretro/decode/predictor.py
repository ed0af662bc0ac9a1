from __future__ import annotations

from collections.abc import Sequence

from specretro.decode.engine import generate
from specretro.decode.types import DecodeConfig, DecodeMetrics
from specretro.smiles_tok import TokenizationError, Vocabulary


class Retrosynthesizer:
    """Single-step predictor: product SMILES in, ranked ``(reactants, logp)`` out.

    ``model_calls`` counts :meth:`predict` invocations (one batched expansion
    each); decoder forward passes accumulate in ``metrics``.
    """

    def __init__(self, model, vocab: Vocabulary, config: DecodeConfig) -> None:
        self.model = model
        self.vocab = vocab
        self.config = config
        self.model_calls = 0
        self.metrics = DecodeMetrics()

    def _encode(self, smiles: str) -> list[int] | None:
        try:
            ids = self.vocab.encode(smiles)
        except TokenizationError:
            return None
        if not ids or len(ids) + 1 > self.model.config.max_len:
            return None
        return ids

    def predict(self, molecules: Sequence[str]) -> list[list[tuple[str, float]]]:
        self.model_calls += 1
        encoded = [self._encode(m) for m in molecules]
        usable = [i for i, ids in enumerate(encoded) if ids is not None]
        out: list[list[tuple[str, float]]] = [[] for _ in molecules]
        if not usable:
            return out
        results, metrics = generate(self.model, [encoded[i] for i in usable], self.config)
        self.metrics = self.metrics.merge(metrics)
        for i, hyps in zip(usable, results):
            out[i] = [(self.vocab.decode(h.tokens), h.logp) for h in hyps]
        return out

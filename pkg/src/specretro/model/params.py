"""Closed-form parameter accounting for :class:`Seq2SeqTransformer`."""

from __future__ import annotations

from specretro.model.config import ModelConfig


def param_breakdown(config: ModelConfig) -> dict[str, int]:
    """Parameter count per tensor group.

    - embedding: ``V*d`` (shared with the output projection)
    - attention block: four ``d x d`` projections with bias
    - feed-forward: ``d*ff + ff + ff*d + d``
    - LayerNorm: ``2d`` each (two per encoder layer, three per decoder layer,
      plus one final norm per non-empty stack)
    - extra head: ``d*h + h + h*d + d`` MLP plus ``2d`` norm
    """
    d, ff, v, h = config.d_model, config.d_ff, config.vocab_size, config.medusa_hidden
    attn = 4 * (d * d + d)
    ffn = d * ff + ff + ff * d + d
    norm = 2 * d
    enc_layer = attn + ffn + 2 * norm
    dec_layer = 2 * attn + ffn + 3 * norm
    return {
        "embedding": v * d,
        "encoder_layers": config.layers_enc * enc_layer,
        "decoder_layers": config.layers_dec * dec_layer,
        "final_norms": norm * (int(config.layers_enc > 0) + int(config.layers_dec > 0)),
        "medusa_heads": config.medusa_heads * (d * h + h + h * d + d + norm),
    }


def count_params(config: ModelConfig) -> tuple[int, int]:
    """Return ``(base_count, medusa_count)``."""
    parts = param_breakdown(config)
    medusa = parts.pop("medusa_heads")
    return sum(parts.values()), medusa


def enumerate_params(model) -> tuple[int, int]:
    """Brute-force count over the allocated tensors of a built model."""
    base = medusa = 0
    for name, p in model.named_parameters():
        if name.startswith("medusa."):
            medusa += p.numel()
        else:
            base += p.numel()
    return base, medusa

"""Encoder-decoder transformer with Medusa heads and an incremental decoder cache.

Logits come out as ``(batch, length, heads, vocab)`` where head 0 is the
ordinary next-token head and head ``k >= 1`` predicts the token ``k + 1``
positions ahead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from specretro.model.config import ModelConfig
from specretro.smiles_tok import PAD_ID

KV = tuple[Tensor, Tensor]


class LengthOverflowError(ValueError):
    pass


class TokenRangeError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderCache:
    """Per-row decoder state for a committed prefix.

    ``self_kv`` holds per-layer self-attention keys/values shaped
    ``(rows, heads, T, head_dim)``; only the first ``lengths[r]`` slots of row
    ``r`` are meaningful. ``cross_kv`` are the encoder-memory projections
    (computed once per source), ``src_pad`` marks padded source positions.
    """

    self_kv: tuple[KV, ...]
    cross_kv: tuple[KV, ...]
    src_pad: Tensor
    lengths: Tensor

    @property
    def rows(self) -> int:
        return int(self.src_pad.shape[0])

    def select(self, index: Tensor | list[int]) -> DecoderCache:
        index = torch.as_tensor(index, dtype=torch.long)
        return DecoderCache(
            tuple((k.index_select(0, index), v.index_select(0, index)) for k, v in self.self_kv),
            tuple((k.index_select(0, index), v.index_select(0, index)) for k, v in self.cross_kv),
            self.src_pad.index_select(0, index),
            self.lengths.index_select(0, index),
        )

    def truncate(self, lengths: Tensor | list[int]) -> DecoderCache:
        """Keep only the first ``lengths[r]`` committed positions of each row."""
        lengths = torch.minimum(torch.as_tensor(lengths, dtype=torch.long), self.lengths)
        t = int(lengths.max()) if lengths.numel() else 0
        return DecoderCache(
            tuple((k[:, :, :t], v[:, :, :t]) for k, v in self.self_kv),
            self.cross_kv,
            self.src_pad,
            lengths,
        )

    @staticmethod
    def concat(caches: list[DecoderCache]) -> DecoderCache:
        if len(caches) == 1:
            return caches[0]
        t_max = max(c.self_kv[0][0].shape[2] if c.self_kv else 0 for c in caches)
        s_max = max(int(c.src_pad.shape[1]) for c in caches)

        def pad_time(x: Tensor, size: int) -> Tensor:
            return F.pad(x, (0, 0, 0, size - x.shape[2])) if x.shape[2] < size else x

        n_layers = len(caches[0].self_kv)
        self_kv = tuple(
            (
                torch.cat([pad_time(c.self_kv[i][0], t_max) for c in caches]),
                torch.cat([pad_time(c.self_kv[i][1], t_max) for c in caches]),
            )
            for i in range(n_layers)
        )
        cross_kv = tuple(
            (
                torch.cat([pad_time(c.cross_kv[i][0], s_max) for c in caches]),
                torch.cat([pad_time(c.cross_kv[i][1], s_max) for c in caches]),
            )
            for i in range(n_layers)
        )
        src_pad = torch.cat([F.pad(c.src_pad, (0, s_max - c.src_pad.shape[1]), value=True) for c in caches])
        lengths = torch.cat([c.lengths for c in caches])
        return DecoderCache(self_kv, cross_kv, src_pad, lengths)


def sinusoid_table(n_positions: int, d_model: int) -> Tensor:
    position = torch.arange(n_positions, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
    table = torch.zeros(n_positions, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : d_model // 2]
    return table


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def project_kv(self, x: Tensor) -> KV:
        return self._split(self.k_proj(x)), self._split(self.v_proj(x))

    def attend(self, x: Tensor, k: Tensor, v: Tensor, allowed: Tensor) -> Tensor:
        q = self._split(self.q_proj(x))
        p = self.dropout.p if self.training else 0.0
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=allowed, dropout_p=p)
        return self.out_proj(out.transpose(1, 2).reshape(x.shape[0], x.shape[1], -1))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float) -> None:
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.dropout(F.relu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.attn_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, allowed: Tensor) -> Tensor:
        h = self.norm1(x)
        k, v = self.attn.project_kv(h)
        x = x + self.dropout(self.attn.attend(h, k, v, allowed))
        return x + self.dropout(self.ff(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.attn_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.attn_heads, cfg.dropout)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: Tensor,
        past: KV,
        cross: KV,
        self_allowed: Tensor,
        cross_allowed: Tensor,
    ) -> tuple[Tensor, KV]:
        h = self.norm1(x)
        k_new, v_new = self.self_attn.project_kv(h)
        k = torch.cat([past[0], k_new], dim=2)
        v = torch.cat([past[1], v_new], dim=2)
        x = x + self.dropout(self.self_attn.attend(h, k, v, self_allowed))
        x = x + self.dropout(self.cross_attn.attend(self.norm2(x), cross[0], cross[1], cross_allowed))
        x = x + self.dropout(self.ff(self.norm3(x)))
        return x, (k_new, v_new)


class MedusaHeads(nn.Module):
    """M independent one-hidden-layer MLPs with residual + LayerNorm, weights stacked."""

    def __init__(self, n_heads: int, d_model: int, hidden: int) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.w1 = nn.Parameter(torch.empty(n_heads, d_model, hidden))
        self.b1 = nn.Parameter(torch.zeros(n_heads, hidden))
        self.w2 = nn.Parameter(torch.zeros(n_heads, hidden, d_model))
        self.b2 = nn.Parameter(torch.zeros(n_heads, d_model))
        self.ln_weight = nn.Parameter(torch.ones(n_heads, d_model))
        self.ln_bias = nn.Parameter(torch.zeros(n_heads, d_model))
        bound = 1.0 / math.sqrt(d_model)
        nn.init.uniform_(self.w1, -bound, bound)

    def forward(self, h: Tensor) -> Tensor:
        # h: (B, L, d) -> (B, L, M, d)
        hidden = F.gelu(torch.einsum("bld,mdh->blmh", h, self.w1) + self.b1)
        out = h.unsqueeze(2) + torch.einsum("blmh,mhd->blmd", hidden, self.w2) + self.b2
        out = F.layer_norm(out, out.shape[-1:])
        return out * self.ln_weight + self.ln_bias


class Seq2SeqTransformer(nn.Module):
    """Pre-norm encoder-decoder with tied embeddings and optional Medusa heads."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        d = config.d_model
        self.embed = nn.Embedding(config.vocab_size, d)
        self.encoder_layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.layers_enc))
        self.decoder_layers = nn.ModuleList(DecoderLayer(config) for _ in range(config.layers_dec))
        self.encoder_norm = nn.LayerNorm(d) if config.layers_enc else nn.Identity()
        self.decoder_norm = nn.LayerNorm(d) if config.layers_dec else nn.Identity()
        self.medusa = MedusaHeads(config.medusa_heads, d, config.medusa_hidden) if config.medusa_heads else None
        self.dropout = nn.Dropout(config.dropout)
        self.register_buffer("positions", sinusoid_table(config.max_len + 1, d), persistent=False)
        nn.init.normal_(self.embed.weight, std=d**-0.5)
        self.meta: dict = {}

    @property
    def num_heads_out(self) -> int:
        return self.config.medusa_heads + 1

    def _check_ids(self, ids: Tensor) -> None:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size):
            raise TokenRangeError(f"token ids must lie in [0, {self.config.vocab_size})")

    def _embed(self, ids: Tensor, positions: Tensor) -> Tensor:
        x = self.embed(ids) * math.sqrt(self.config.d_model)
        x = x + self.positions[positions].to(x.dtype)
        return self.dropout(x)

    def encode(self, src: Tensor) -> DecoderCache:
        """Run the encoder; returns an empty-prefix cache carrying the memory projections."""
        self._check_ids(src)
        if src.shape[1] > self.config.max_len:
            raise LengthOverflowError(f"source length {src.shape[1]} exceeds max_len {self.config.max_len}")
        src_pad = src.eq(PAD_ID)
        pos = torch.arange(src.shape[1]).expand_as(src)
        x = self._embed(src, pos)
        allowed = (~src_pad)[:, None, None, :]
        for layer in self.encoder_layers:
            x = layer(x, allowed)
        memory = self.encoder_norm(x)
        b = src.shape[0]
        hd = self.config.d_model // self.config.attn_heads
        empty = memory.new_zeros(b, self.config.attn_heads, 0, hd)
        cross = tuple(layer.cross_attn.project_kv(memory) for layer in self.decoder_layers)
        return DecoderCache(
            tuple((empty, empty) for _ in self.decoder_layers),
            cross,
            src_pad,
            torch.zeros(b, dtype=torch.long),
        )

    def decode(
        self,
        tokens: Tensor,
        cache: DecoderCache,
        lengths: Tensor | None = None,
        medusa: bool = True,
        return_cache: bool = True,
    ) -> tuple[Tensor, DecoderCache | None]:
        """Feed ``tokens`` (B, N) after each row's cached prefix.

        ``lengths`` gives the number of valid new tokens per row (right padded).
        Returns logits ``(B, N, heads, V)`` (heads = 1 when ``medusa`` is False)
        and the cache extended by the valid new tokens.
        """
        self._check_ids(tokens)
        b, n = tokens.shape
        if lengths is None:
            lengths = torch.full((b,), n, dtype=torch.long)
        past_len = cache.lengths
        if b and int((past_len + lengths).max()) > self.config.max_len + 1:
            raise LengthOverflowError(f"decoder input exceeds max_len {self.config.max_len}")
        c_max = cache.self_kv[0][0].shape[2] if cache.self_kv else 0
        positions = past_len[:, None] + torch.arange(n)[None, :]
        x = self._embed(tokens, positions.clamp(max=self.config.max_len))

        past_ok = torch.arange(c_max)[None, :] < past_len[:, None]  # (B, C)
        causal = torch.ones(n, n, dtype=torch.bool).tril()
        self_allowed = torch.cat(
            [past_ok[:, None, :].expand(b, n, c_max), causal[None].expand(b, n, n)], dim=2
        )[:, None]
        cross_allowed = (~cache.src_pad)[:, None, None, :]

        new_kv = []
        for layer, past, cross in zip(self.decoder_layers, cache.self_kv, cache.cross_kv):
            x, kv = layer(x, past, cross, self_allowed, cross_allowed)
            new_kv.append(kv)
        h = self.decoder_norm(x)

        logits = self.project(h, medusa)
        if not return_cache:
            return logits, None
        return logits, self._extend_cache(cache, new_kv, lengths)

    def project(self, h: Tensor, medusa: bool = True) -> Tensor:
        heads = [h.unsqueeze(2)]
        if medusa and self.medusa is not None:
            heads.append(self.medusa(h))
        stacked = torch.cat(heads, dim=2) if len(heads) > 1 else heads[0]
        return stacked @ self.embed.weight.t()

    def _extend_cache(self, cache: DecoderCache, new_kv: list[KV], lengths: Tensor) -> DecoderCache:
        past_len = cache.lengths
        total = past_len + lengths
        c_max = cache.self_kv[0][0].shape[2] if cache.self_kv else 0
        t_new = int(total.max()) if total.numel() else 0
        t = torch.arange(t_new)[None, :]
        src_index = torch.where(t < past_len[:, None], t, c_max + t - past_len[:, None])
        n_new = new_kv[0][0].shape[2] if new_kv else 0
        src_index = src_index.clamp(max=max(c_max + n_new - 1, 0))
        merged = []
        for (pk, pv), (nk, nv) in zip(cache.self_kv, new_kv):
            k = torch.cat([pk, nk], dim=2)
            v = torch.cat([pv, nv], dim=2)
            idx = src_index[:, None, :, None].expand(k.shape[0], k.shape[1], t_new, k.shape[3])
            merged.append((k.gather(2, idx), v.gather(2, idx)))
        return DecoderCache(tuple(merged), cache.cross_kv, cache.src_pad, total)

    def forward(
        self, src: Tensor, tgt: Tensor, cache: DecoderCache | None = None
    ) -> tuple[Tensor, DecoderCache]:
        """Logits for every decoder position and head.

        Without a cache ``tgt`` is the whole decoder input (bos first); with a
        cache only the new positions are computed and appended.
        """
        if cache is None:
            cache = self.encode(src)
        logits, new_cache = self.decode(tgt, cache)
        return logits, new_cache


def init_model(config: ModelConfig, seed: int | None = None) -> Seq2SeqTransformer:
    """Deterministic initialisation for a given (config, seed)."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(config.seed if seed is None else seed)
    try:
        model = Seq2SeqTransformer(config)
    finally:
        torch.random.set_rng_state(gen_state)
    if config.dtype == "float64":
        model = model.double()
    model.eval()
    return model


def freeze(model: Seq2SeqTransformer) -> Seq2SeqTransformer:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model

"""Test doubles and independent reference implementations."""

from __future__ import annotations

import heapq
import itertools
import math
from types import SimpleNamespace

import numpy as np
import torch

from specretro.model import ModelConfig, init_model
from specretro.plan import expand
from specretro.model.loss import _pad, source_ids
from specretro.model.network import DecoderCache, Seq2SeqTransformer
from specretro.smiles_tok import BOS_ID, EOS_ID, PAD_ID

_extend_cache = Seq2SeqTransformer._extend_cache


def random_toy_model(seed: int, vocab_size: int = 16, d_model: int = 32, medusa_heads: int = 4, eos_boost: float = 3.0):
    """Random float64 model; the ``<eos>`` embedding is scaled so outputs finish at varied lengths."""
    cfg = ModelConfig(
        vocab_size=vocab_size, d_model=d_model, d_ff=64, attn_heads=4, medusa_heads=medusa_heads,
        medusa_hidden=16, max_len=40, dtype="float64",
    )
    model = init_model(cfg, seed)
    with torch.no_grad():
        model.embed.weight[EOS_ID] *= eos_boost
    return model


def naive_beam_search(model, src: list[int], k: int, max_len: int) -> list[tuple[tuple[int, ...], float]]:
    """Reference beam search: full recompute per hypothesis, all V continuations scored."""

    @torch.no_grad()
    def next_logprobs(tokens: tuple[int, ...]) -> list[float]:
        memory = model.encode(_pad([source_ids(src)]))
        logits, _ = model.decode(torch.tensor([[BOS_ID, *tokens]]), memory, medusa=False, return_cache=False)
        row = logits[0, -1, 0].double()
        return (row - torch.logsumexp(row, 0)).tolist()

    beams = [((), 0.0, False)]
    while not all(done for _, _, done in beams):
        pool = [b for b in beams if b[2]]
        for tokens, score, done in beams:
            if done:
                continue
            for t, lp in enumerate(next_logprobs(tokens)):
                new = tokens + (t,)
                pool.append((new, score + lp, t == EOS_ID or len(new) >= max_len))
        pool.sort(key=lambda c: (-c[1], c[0]))
        beams = pool[:k]
    return [(t, s) for t, s, _ in beams]


def brute_force_accepts(dist, draft, p) -> int:
    """Sort the distribution descending and accumulate until each draft token."""
    accepted = 0
    for i, token in enumerate(draft):
        row = [float(x) for x in dist[i]]
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))
        argmax = order[0]
        mass = [row[j] for j in order if row[j] > row[token]] + [row[token]]
        if token == argmax or math.fsum(mass) < p:
            accepted += 1
        else:
            break
    return accepted


class ScriptedModel:
    """Position-driven fake decoder.

    The main head puts almost all mass on ``script[q]`` at output index ``q``
    (``<eos>`` from ``len(script)`` on). Every other token gets a logit that
    falls with ``q`` so that no two deviations tie. Extra head ``k`` either
    points at ``script[q + k]`` (``heads_correct``) or at ``wrong_token``.
    """

    def __init__(self, script, vocab_size: int, medusa_heads: int, heads_correct: bool, wrong_token: int = 4):
        self.script = list(script)
        self.heads_correct = heads_correct
        self.wrong = wrong_token
        self.config = SimpleNamespace(vocab_size=vocab_size, medusa_heads=medusa_heads, max_len=10_000)

    def target(self, q: int) -> int:
        return self.script[q] if q < len(self.script) else EOS_ID

    def encode(self, src: torch.Tensor) -> DecoderCache:
        b = src.shape[0]
        empty = torch.zeros(b, 1, 0, 1, dtype=torch.float64)
        cross = torch.zeros(b, 1, src.shape[1], 1, dtype=torch.float64)
        return DecoderCache(((empty, empty),), ((cross, cross),), src.eq(PAD_ID), torch.zeros(b, dtype=torch.long))

    def decode(self, tokens, cache, lengths=None, medusa=True, return_cache=True):
        b, n = tokens.shape
        if lengths is None:
            lengths = torch.full((b,), n, dtype=torch.long)
        heads = self.config.medusa_heads + 1 if medusa else 1
        v = self.config.vocab_size
        logits = torch.empty(b, n, heads, v, dtype=torch.float64)
        for r in range(b):
            for i in range(n):
                q = int(cache.lengths[r]) + i
                base = -10.0 - 0.01 * q
                logits[r, i] = base + 0.001 * torch.arange(v, dtype=torch.float64)
                logits[r, i, 0, self.target(q)] = 0.0
                for k in range(1, heads):
                    tok = self.target(q + k) if self.heads_correct else self.wrong
                    logits[r, i, k, tok] = 0.0
        new = tokens.to(torch.float64)[:, None, :, None]
        out = _extend_cache(None, cache, [(new, new)], lengths) if return_cache else None
        return logits, out


class EchoHeads:
    """Wraps a model so extra head ``k`` one-hot predicts the main head's greedy token ``k + 1`` ahead."""

    def __init__(self, model):
        self.model = model
        self.config = model.config

    def encode(self, src):
        return self.model.encode(src)

    @torch.no_grad()
    def decode(self, tokens, cache, lengths=None, medusa=True, return_cache=True):
        logits, new = self.model.decode(tokens, cache, lengths, medusa=False)
        if not medusa:
            return logits, new
        b, n, _, v = logits.shape
        m = self.config.medusa_heads
        out = logits.new_full((b, n, m + 1, v), -50.0)
        out[:, :, 0] = logits[:, :, 0]
        if lengths is None:
            lengths = torch.full((b,), n, dtype=torch.long)
        for r in range(b):
            last = int(lengths[r]) - 1
            tok = int(np.argmax(logits[r, last, 0].numpy()))
            state = new.select([r])
            for k in range(1, m + 1):
                if tok != EOS_ID:
                    step, state = self.model.decode(torch.tensor([[tok]]), state, medusa=False)
                    tok = int(np.argmax(step[0, -1, 0].numpy()))
                out[r, last, k, tok] = 0.0
        return out, new


def reference_retro_star(target, model, stock, max_depth, max_iterations):
    """Independent single-pop Retro*-0 used as an oracle for expansion order."""
    if target in stock:
        return []
    cost = {target: 0.0}
    depth = {target: 0}
    reactions: dict[str, list[tuple[str, ...]]] = {}
    version: dict[str, int] = {}
    tick = itertools.count()
    heap: list = []

    def push(m):
        version[m] = next(tick)
        heapq.heappush(heap, (cost[m], version[m], m))

    def solved(m, seen=frozenset()):
        if m in stock:
            return True
        if m in seen:
            return False
        return any(all(solved(p, seen | {m}) for p in r) for r in reactions.get(m, []))

    push(target)
    order = []
    while heap and len(order) < max_iterations and not solved(target):
        c, v, m = heapq.heappop(heap)
        if version.get(m) != v or m in reactions:
            continue
        order.append(m)
        (steps,), _ = expand(model, [m], 10)
        reactions[m] = []
        for step in steps:
            reactions[m].append(step.precursors)
            child_cost = cost[m] - step.logp
            for p in step.precursors:
                if p not in cost:
                    cost[p], depth[p] = child_cost, depth[m] + 1
                elif child_cost < cost[p] and p not in reactions:
                    cost[p], depth[p] = child_cost, depth[m] + 1
                else:
                    continue
                if p not in stock and p not in reactions and depth[p] < max_depth:
                    push(p)
    return order

"""Beam search and speculative beam search over a batched decoder cache.

All strategies work on any model exposing ``encode(src) -> cache`` and
``decode(tokens, cache, lengths, medusa=..., return_cache=...)`` where the
cache supports ``select``, ``truncate`` and ``DecoderCache.concat``.
"""

from __future__ import annotations

import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import torch

from specretro.decode.drafts import extract_query_drafts, medusa_draft
from specretro.decode.types import DecodeConfig, DecodeMetrics, Draft, DraftSource, Strategy
from specretro.decode.verify import verify_draft
from specretro.model.loss import _pad, source_ids
from specretro.model.network import DecoderCache
from specretro.smiles_tok import BOS_ID, EOS_ID, PAD_ID


@dataclass(frozen=True)
class CacheHandle:
    """Row ``row`` of ``cache``, valid for its first ``length`` decoder positions."""

    cache: DecoderCache
    row: int
    length: int


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logp: float
    finished: bool = False
    handle: CacheHandle | None = field(default=None, compare=False, repr=False)

    @property
    def sort_key(self) -> tuple[float, tuple[int, ...]]:
        return (-self.logp, self.tokens)

    def pending(self) -> tuple[int, ...]:
        """Decoder inputs not yet covered by the cache."""
        return ((BOS_ID,) + self.tokens)[self.handle.length :]


@dataclass
class BeamSet:
    """Beams for one source; finished hypotheses stay in the set until the end."""

    source: tuple[int, ...]
    beams: list[Hypothesis]

    @property
    def done(self) -> bool:
        return all(h.finished for h in self.beams)

    def ranked(self) -> list[Hypothesis]:
        return sorted(self.beams, key=lambda h: h.sort_key)


def select_top(candidates: Sequence[Hypothesis], k: int) -> list[Hypothesis]:
    """Deduplicate on tokens (best score kept) and return the ``k`` best."""
    best: dict[tuple[int, ...], Hypothesis] = {}
    for h in candidates:
        prev = best.get(h.tokens)
        if prev is None or h.logp > prev.logp:
            best[h.tokens] = h
    return sorted(best.values(), key=lambda h: h.sort_key)[:k]


def top_tokens(logprobs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries; lower id first on ties."""
    return np.argsort(-logprobs, kind="stable")[:k]


class DecodeSession:
    """Owns the forward passes of one decode run and counts them."""

    def __init__(self, model, metrics: DecodeMetrics | None = None) -> None:
        self.model = model
        self.metrics = metrics if metrics is not None else DecodeMetrics()

    @torch.no_grad()
    def encode(self, sources: Sequence[Sequence[int]]) -> DecoderCache:
        self.metrics.encoder_calls += 1
        return self.model.encode(_pad([source_ids(s) for s in sources]))

    @staticmethod
    def gather(handles: Sequence[CacheHandle]) -> DecoderCache:
        groups: dict[int, tuple[DecoderCache, list[int], list[int]]] = {}
        for i, h in enumerate(handles):
            groups.setdefault(id(h.cache), (h.cache, [], []))
            groups[id(h.cache)][1].append(i)
            groups[id(h.cache)][2].append(h.row)
        parts = []
        order: list[int] = []
        for cache, positions, rows in groups.values():
            parts.append(cache.select(rows))
            order.extend(positions)
        merged = DecoderCache.concat(parts)
        if order != list(range(len(order))):
            merged = merged.select(np.argsort(order).tolist())
        return merged.truncate([h.length for h in handles])

    @torch.no_grad()
    def run(
        self, handles: Sequence[CacheHandle], inputs: Sequence[Sequence[int]], medusa: bool
    ) -> tuple[np.ndarray, DecoderCache]:
        """One decoder call; returns float64 log-probs ``(R, N, heads, V)`` and the new cache."""
        cache = self.gather(handles)
        lengths = torch.tensor([len(x) for x in inputs], dtype=torch.long)
        tokens = _pad(inputs)
        logits, new_cache = self.model.decode(tokens, cache, lengths, medusa=medusa)
        self.metrics.record_call(len(inputs))
        return torch.log_softmax(logits.double(), dim=-1).numpy(), new_cache


def _child(parent_tokens: tuple[int, ...], token: int, logp: float, handle: CacheHandle, max_len: int) -> Hypothesis:
    tokens = parent_tokens + (int(token),)
    return Hypothesis(tokens, logp, token == EOS_ID or len(tokens) >= max_len, handle)


def _initial_beams(enc: DecoderCache, sources: Sequence[Sequence[int]], k: int, replicate: bool) -> list[BeamSet]:
    sets = []
    for b, src in enumerate(sources):
        root = Hypothesis((), 0.0, False, CacheHandle(enc, b, 0))
        beams = [root]
        if replicate:
            beams += [Hypothesis((), -math.inf, False, root.handle) for _ in range(k - 1)]
        sets.append(BeamSet(tuple(int(t) for t in src), beams))
    return sets


def beam_search(
    model, sources: Sequence[Sequence[int]], config: DecodeConfig, optimized: bool | None = None
) -> tuple[list[list[Hypothesis]], DecodeMetrics]:
    """Classic beam search; returns ranked finished hypotheses per source.

    The standard variant keeps ``K`` rows per source in every call (``K``
    copies of ``<bos>`` at the first step, ``<pad>`` fed to finished beams).
    The optimized variant only feeds unfinished beams. Both rank identically.
    """
    optimized = config.optimized if optimized is None else optimized
    started = time.perf_counter()
    session = DecodeSession(model)
    k = config.beam_size
    sets = _initial_beams(session.encode(sources), sources, k, replicate=not optimized)
    while True:
        rows = [
            (s, h)
            for s, bs in enumerate(sets)
            if not bs.done
            for h in bs.beams
            if not (optimized and h.finished)
        ]
        if not rows:
            break
        inputs = [(PAD_ID,) if h.finished else h.pending() for _, h in rows]
        lp, cache = session.run([h.handle for _, h in rows], inputs, medusa=False)
        pools: dict[int, list[Hypothesis]] = {}
        for r, ((s, h), fed) in enumerate(zip(rows, inputs)):
            pool = pools.setdefault(s, [b for b in sets[s].beams if b.finished])
            if h.finished:
                continue
            dist = lp[r, len(fed) - 1, 0]
            handle = CacheHandle(cache, r, h.handle.length + len(fed))
            for t in top_tokens(dist, k):
                pool.append(_child(h.tokens, int(t), h.logp + float(dist[t]), handle, config.max_len))
        for s, pool in pools.items():
            sets[s].beams = select_top(pool, k)
    session.metrics.wall_time = time.perf_counter() - started
    return [bs.ranked() for bs in sets], session.metrics


def speculative_children(
    parent: Hypothesis,
    draft: Sequence[int],
    logprobs: np.ndarray,
    accepted: int,
    k: int,
    cache: DecoderCache,
    row: int,
    max_len: int,
) -> list[Hypothesis]:
    """Candidates from one verified draft.

    ``logprobs[j]`` is the next-token distribution after the parent plus
    ``draft[:j]``; ``cache`` row ``row`` covers the parent and the draft.
    For every accepted prefix length ``j`` the top-``k`` continuations are
    emitted, except the one that re-creates the longer accepted prefix.
    """
    base = 1 + len(parent.tokens)
    out = []
    score = parent.logp
    for j in range(accepted + 1):
        prefix = parent.tokens + tuple(draft[:j])
        if j and draft[j - 1] == EOS_ID:
            out.append(Hypothesis(prefix, score, True, CacheHandle(cache, row, base + j)))
            break
        handle = CacheHandle(cache, row, base + j)
        for t in top_tokens(logprobs[j], k):
            if j < accepted and t == draft[j]:
                continue
            out.append(_child(prefix, int(t), score + float(logprobs[j, t]), handle, max_len))
        if j < accepted:
            score += float(logprobs[j, draft[j]])
    return out


def _clip_draft(tokens: Sequence[int], room: int) -> tuple[int, ...]:
    """Cut at the first ``<eos>`` (kept) and to ``room`` tokens."""
    out = []
    for t in tokens[: max(room, 0)]:
        out.append(int(t))
        if t == EOS_ID:
            break
    return tuple(out)


def _verify(draft: Sequence[int], logprobs: np.ndarray, p: float) -> int:
    return verify_draft(np.exp(logprobs[: len(draft) + 1]), draft, p).accepted


def _msbs_cycle(session: DecodeSession, sets: list[BeamSet], config: DecodeConfig) -> None:
    k = config.beam_size
    rows = [(s, h) for s, bs in enumerate(sets) if not bs.done for h in bs.beams if not h.finished]
    inputs = [h.pending() for _, h in rows]
    lp1, cache1 = session.run([h.handle for _, h in rows], inputs, medusa=True)

    heads = []
    drafts = []
    for r, ((_, h), fed) in enumerate(zip(rows, inputs)):
        last = lp1[r, len(fed) - 1]
        heads.append(last)
        room = min(config.draft_len, config.max_len - len(h.tokens) - 1)
        drafts.append(_clip_draft(medusa_draft(last).tokens, room))
    bases = [CacheHandle(cache1, r, h.handle.length + len(fed)) for r, ((_, h), fed) in enumerate(zip(rows, inputs))]

    with_draft = [r for r, d in enumerate(drafts) if d]
    lp2 = cache2 = None
    if with_draft:
        lp2, cache2 = session.run([bases[r] for r in with_draft], [drafts[r] for r in with_draft], medusa=False)
    slot = {r: i for i, r in enumerate(with_draft)}

    pools = {s: [b for b in bs.beams if b.finished] for s, bs in enumerate(sets) if not bs.done}
    for r, (s, h) in enumerate(rows):
        draft = drafts[r]
        if draft:
            i = slot[r]
            dists = np.concatenate([heads[r][:1], lp2[i, : len(draft), 0]], axis=0)
            accepted = _verify(draft, dists, config.nucleus)
            session.metrics.drafted_tokens += len(draft)
            session.metrics.accepted_tokens += accepted
            pools[s] += speculative_children(h, draft, dists, accepted, k, cache2, i, config.max_len)
        else:
            pools[s] += speculative_children(h, (), heads[r][:1], 0, k, cache1, r, config.max_len)
    for s, pool in pools.items():
        sets[s].beams = select_top(pool, k)


def _hsbs_cycle(session: DecodeSession, sets: list[BeamSet], config: DecodeConfig) -> None:
    k = config.beam_size
    owners = []  # (set index, hypothesis, draft)
    for s, bs in enumerate(sets):
        if bs.done:
            continue
        for h in bs.beams:
            if h.finished:
                continue
            room = min(config.draft_len, config.max_len - len(h.tokens) - 1)
            tail = h.tokens[-1] if h.tokens else None
            drafts = [] if room <= 0 else extract_query_drafts(bs.source, tail, config.n_drafts, room)
            for d in drafts or [Draft((), DraftSource.QUERY)]:
                owners.append((s, h, _clip_draft(d.tokens, room)))
    inputs = [h.pending() + d for _, h, d in owners]
    lp, cache = session.run([h.handle for _, h, _ in owners], inputs, medusa=False)

    best: dict[int, tuple[int, int]] = {}  # id(hypothesis) -> (row, accepted)
    for r, (s, h, draft) in enumerate(owners):
        start = len(h.pending()) - 1
        dists = lp[r, start : start + len(draft) + 1, 0]
        accepted = _verify(draft, dists, config.nucleus) if draft else 0
        if id(h) not in best or accepted > best[id(h)][1]:
            best[id(h)] = (r, accepted)

    pools = {s: [b for b in bs.beams if b.finished] for s, bs in enumerate(sets) if not bs.done}
    for r, accepted in best.values():
        s, h, draft = owners[r]
        start = len(h.pending()) - 1
        dists = lp[r, start : start + len(draft) + 1, 0]
        session.metrics.drafted_tokens += len(draft)
        session.metrics.accepted_tokens += accepted
        pools[s] += speculative_children(h, draft, dists, accepted, k, cache, r, config.max_len)
    for s, pool in pools.items():
        sets[s].beams = select_top(pool, k)


def sbs_cycle(session: DecodeSession, sets: list[BeamSet], config: DecodeConfig) -> None:
    """Advance every unfinished beam set by one speculative cycle, in place."""
    if config.strategy == Strategy.MSBS:
        _msbs_cycle(session, sets, config)
    elif config.strategy == Strategy.HSBS:
        _hsbs_cycle(session, sets, config)
    else:
        raise ValueError(f"sbs_cycle needs a speculative strategy, got {config.strategy.value}")
    session.metrics.cycles += 1


def sbs_generate(
    model, sources: Sequence[Sequence[int]], config: DecodeConfig
) -> tuple[list[list[Hypothesis]], DecodeMetrics]:
    """Speculative beam search until every source has ``K`` finished beams."""
    started = time.perf_counter()
    session = DecodeSession(model)
    sets = _initial_beams(session.encode(sources), sources, config.beam_size, replicate=False)
    while not all(bs.done for bs in sets):
        sbs_cycle(session, sets, config)
    session.metrics.wall_time = time.perf_counter() - started
    return [bs.ranked() for bs in sets], session.metrics


def generate(
    model, sources: Sequence[Sequence[int]], config: DecodeConfig
) -> tuple[list[list[Hypothesis]], DecodeMetrics]:
    """Dispatch on ``config.strategy``."""
    if config.strategy == Strategy.BS:
        return beam_search(model, sources, config, optimized=False)
    if config.strategy == Strategy.BS_OPT:
        return beam_search(model, sources, config, optimized=True)
    return sbs_generate(model, sources, config)

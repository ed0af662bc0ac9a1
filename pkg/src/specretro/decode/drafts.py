"""Draft construction: source fragments (heuristic) and extra-head argmaxes."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from specretro.decode.types import Draft, DraftSource

# Heuristic draft settings per batch size: (number of drafts, draft length).
HSBS_DRAFTS = {1: (10, 10), 4: (3, 10)}
HSBS_DRAFTS_DEFAULT = (1, 20)


def hsbs_settings(batch_size: int) -> tuple[int, int]:
    return HSBS_DRAFTS.get(batch_size, HSBS_DRAFTS_DEFAULT)


def extract_query_drafts(
    src_tokens: Sequence[int], tail_token: int | None, n_drafts: int, draft_len: int
) -> list[Draft]:
    """Up to ``n_drafts`` distinct source fragments of at most ``draft_len`` tokens.

    Fragments start right after each occurrence of ``tail_token`` in the
    source, in order. Remaining slots are filled from evenly spaced offsets.
    """
    if n_drafts < 1 or draft_len < 1:
        raise ValueError("n_drafts and draft_len must be >= 1")
    src = [int(t) for t in src_tokens]
    if not src:
        return []
    starts = [i + 1 for i, t in enumerate(src) if t == tail_token and i + 1 < len(src)]
    span = len(src) - draft_len
    if span <= 0:
        fallback = [0]
    else:
        fallback = sorted({int(round(x)) for x in np.linspace(0, span, n_drafts)})
    seen: set[tuple[int, ...]] = set()
    drafts = []
    for start in starts + fallback:
        frag = tuple(src[start : start + draft_len])
        if frag and frag not in seen:
            seen.add(frag)
            drafts.append(Draft(frag, DraftSource.QUERY))
            if len(drafts) == n_drafts:
                break
    return drafts


def medusa_draft(head_scores: np.ndarray) -> Draft:
    """Greedy draft from one position's ``(heads, V)`` scores.

    Token ``k`` is the argmax of head ``k`` for ``k < heads - 1``: the main
    head proposes the next token and each extra head the one after. The
    draft is capped at ``heads - 1`` tokens so one cycle commits at most
    ``heads`` tokens; the last extra head is therefore not consulted.
    """
    scores = np.asarray(head_scores)
    n = scores.shape[0] - 1
    return Draft(tuple(int(t) for t in np.argmax(scores[:n], axis=-1)), DraftSource.MEDUSA)

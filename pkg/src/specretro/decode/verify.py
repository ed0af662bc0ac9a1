"""Nucleus-style draft verification."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from specretro.decode.types import VerificationResult


def cumulative_mass(dist: np.ndarray, token: int) -> float:
    """Mass of every token strictly more probable than ``token``, plus its own.

    Summed with :func:`math.fsum` so the value does not depend on the
    summation order.
    """
    own = float(dist[token])
    return math.fsum([*dist[dist > own].tolist(), own])


def token_accepted(dist: np.ndarray, token: int, p: float) -> bool:
    if token == int(np.argmax(dist)):
        return True
    return cumulative_mass(dist, token) < p


def verify_draft(dists: np.ndarray | Sequence[Sequence[float]], draft: Sequence[int], p: float) -> VerificationResult:
    """Accept the longest draft prefix whose tokens pass the nucleus test.

    ``dists[i]`` is the main head's next-token distribution in front of
    ``draft[i]``. If a row ``dists[a]`` exists past the accepted prefix its
    argmax becomes the bonus token.
    """
    dists = np.asarray(dists, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[0] < len(draft):
        raise ValueError("need one distribution per draft position")
    accepted = 0
    for i, token in enumerate(draft):
        if not token_accepted(dists[i], int(token), p):
            break
        accepted += 1
    bonus = int(np.argmax(dists[accepted])) if accepted < dists.shape[0] else None
    flags = tuple(i < accepted for i in range(len(draft)))
    return VerificationResult(accepted, bonus, flags)

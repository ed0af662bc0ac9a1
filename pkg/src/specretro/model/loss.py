from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from specretro.smiles_tok import BOS_ID, EOS_ID, PAD_ID


@dataclass
class TrainBatch:
    """Padded teacher-forcing batch.

    ``head_targets[:, :, k]`` is the gold token ``k + 1`` positions after
    decoder input position ``i``; positions past ``<eos>`` hold ``<pad>`` and
    are excluded from the loss.
    """

    src: Tensor
    tgt_in: Tensor
    head_targets: Tensor

    @property
    def pad_mask(self) -> Tensor:
        return self.tgt_in.eq(PAD_ID)


def _pad(seqs: Sequence[Sequence[int]], width: int | None = None) -> Tensor:
    width = width if width is not None else max((len(s) for s in seqs), default=0)
    out = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


def source_ids(ids: Sequence[int]) -> list[int]:
    """Encoder input for a tokenized source: the ids followed by ``<eos>``."""
    return list(ids) + [EOS_ID]


def make_batch(
    sources: Sequence[Sequence[int]], targets: Sequence[Sequence[int]], n_heads: int
) -> TrainBatch:
    src = _pad([source_ids(s) for s in sources])
    tgt_in = _pad([[BOS_ID] + list(t) for t in targets])
    gold = _pad([list(t) + [EOS_ID] for t in targets], tgt_in.shape[1] + n_heads)
    length = tgt_in.shape[1]
    head_targets = torch.stack([gold[:, k : k + length] for k in range(n_heads)], dim=2)
    return TrainBatch(src, tgt_in, head_targets)


def medusa_loss(logits: Tensor, batch: TrainBatch) -> tuple[Tensor, list[Tensor]]:
    """Combined loss: sum over heads of ``CE_k / k`` with the main head numbered 1.

    Each head's cross-entropy is averaged over its own non-masked positions.
    """
    n_heads = logits.shape[2]
    total = logits.new_zeros(())
    per_head = []
    for k in range(n_heads):
        target = batch.head_targets[:, :, k]
        mask = target.ne(PAD_ID)
        if not bool(mask.any()):
            ce = logits.new_zeros(())
        else:
            ce = F.cross_entropy(logits[:, :, k][mask], target[mask])
        per_head.append(ce)
        total = total + ce / (k + 1)
    return total, per_head

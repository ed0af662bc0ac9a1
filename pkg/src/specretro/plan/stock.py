from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class Stock:
    """Building blocks matched by exact string.

    ``raw_count`` is the number of entries before deduplication.
    """

    molecules: frozenset[str]
    raw_count: int = 0

    @classmethod
    def from_iterable(cls, molecules: Iterable[str]) -> Stock:
        items = [m.strip() for m in molecules if m.strip()]
        return cls(frozenset(items), len(items))

    @classmethod
    def from_file(cls, path: str | Path) -> Stock:
        return cls.from_iterable(Path(path).read_text(encoding="utf-8").splitlines())

    def __len__(self) -> int:
        return len(self.molecules)

    def __contains__(self, smiles: object) -> bool:
        return smiles in self.molecules


def in_stock(molecule: str, stock: Stock) -> bool:
    return molecule in stock.molecules

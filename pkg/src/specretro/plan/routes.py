from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

from specretro.plan.search import MoleculeNode, SearchTree


@dataclass(frozen=True)
class RouteTree:
    """A solved synthesis route rooted at ``molecule``.

    ``logp`` is the log-probability of the reaction applied to this molecule
    (0 for stock leaves); ``cost`` is the summed ``-logp`` of the subtree.
    """

    molecule: str
    in_stock: bool
    logp: float = 0.0
    children: tuple[RouteTree, ...] = field(default_factory=tuple)
    cost: float = 0.0

    @property
    def depth(self) -> int:
        return 1 + max(c.depth for c in self.children) if self.children else 0

    def leaves(self) -> list[RouteTree]:
        if not self.children:
            return [self]
        return [leaf for c in self.children for leaf in c.leaves()]

    def to_dict(self) -> dict:
        out: dict = {"molecule": self.molecule, "in_stock": self.in_stock}
        if self.children:
            out["reaction_logp"] = self.logp
            out["children"] = [c.to_dict() for c in self.children]
        return out


def _combine(options: list[list[RouteTree]], limit: int) -> list[tuple[float, tuple[RouteTree, ...]]]:
    """The ``limit`` cheapest picks of one route per child, cheapest first."""
    if not options:
        return [(0.0, ())]

    def cost(idx: tuple[int, ...]) -> float:
        return sum(options[i][j].cost for i, j in enumerate(idx))

    start = tuple(0 for _ in options)
    heap = [(cost(start), start)]
    seen = {start}
    out = []
    while heap and len(out) < limit:
        c, idx = heapq.heappop(heap)
        out.append((c, tuple(options[i][j] for i, j in enumerate(idx))))
        for i in range(len(idx)):
            nxt = idx[:i] + (idx[i] + 1,) + idx[i + 1 :]
            if nxt[i] < len(options[i]) and nxt not in seen:
                seen.add(nxt)
                heapq.heappush(heap, (cost(nxt), nxt))
    return out


def _routes(node: MoleculeNode, limit: int, path: frozenset[int]) -> list[RouteTree]:
    if node.in_stock:
        return [RouteTree(node.smiles, True)]
    if not node.solved or id(node) in path:
        return []
    inner = path | {id(node)}
    found = []
    order = itertools.count()
    for reaction in node.reactions:
        if not reaction.solved:
            continue
        options = [_routes(p, limit, inner) for p in reaction.precursors]
        if any(not o for o in options):
            continue
        for c, children in _combine(options, limit):
            found.append((c - reaction.logp, next(order), children, reaction.logp))
    found.sort(key=lambda x: (x[0], x[1]))
    return [RouteTree(node.smiles, False, logp, children, c) for c, _, children, logp in found[:limit]]


def extract_solved_routes(tree: SearchTree, limit: int = 10) -> list[RouteTree]:
    """Up to ``limit`` distinct routes whose leaves are all in stock, cheapest first."""
    if limit < 1 or not tree.root.solved:
        return []
    return _routes(tree.root, limit, frozenset())

"""AND-OR search over single-step predictions: best-first (Retro*-0) and depth-first."""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Protocol

from specretro.plan.stock import Stock, in_stock
from specretro.smiles_tok import validate_syntactic

logger = logging.getLogger(__name__)


class SingleStepModel(Protocol):
    def predict(self, molecules: Sequence[str]) -> list[list[tuple[str, float]]]: ...


class Algorithm(str, enum.Enum):
    RETRO_STAR = "retro-star"
    DFS = "dfs"


@dataclass(frozen=True)
class PlanConfig:
    """Search limits. ``time_limit=None`` disables the wall-clock cap.

    One iteration pops one batch of up to ``beam_width`` molecules and makes
    exactly one single-step model call, so ``max_iterations`` is also the
    model-call budget.
    """

    max_depth: int = 5
    max_iterations: int = 35000
    time_limit: float | None = 5.0
    expansions: int = 10
    beam_width: int = 1
    algorithm: Algorithm = Algorithm.RETRO_STAR

    def __post_init__(self) -> None:
        if min(self.max_depth, self.max_iterations, self.expansions, self.beam_width) < 1:
            raise ValueError("plan limits must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))


@dataclass(frozen=True)
class ReactionStep:
    product: str
    precursors: tuple[str, ...]
    logp: float
    rank: int


@dataclass(eq=False)
class MoleculeNode:
    smiles: str
    depth: int
    cost: float
    in_stock: bool
    parent: ReactionNode | None = None
    parents: list[ReactionNode] = field(default_factory=list)
    reactions: list[ReactionNode] = field(default_factory=list)
    expanded: bool = False
    solved: bool = False

    @property
    def status(self) -> str:
        if self.solved:
            return "solved"
        if self.expanded:
            return "expanded" if self.reactions else "dead"
        return "open"


@dataclass(eq=False)
class ReactionNode:
    product: MoleculeNode
    precursors: list[MoleculeNode]
    logp: float
    rank: int
    solved: bool = False


@dataclass
class SearchTree:
    root: MoleculeNode
    nodes: dict[str, MoleculeNode]


@dataclass
class PlanResult:
    solved: bool
    route: object | None
    iterations: int
    wall_time: float
    model_calls: int
    nodes_created: int
    expansion_order: list[str]
    tree: SearchTree
    invalid_predictions: int = 0


def expand(
    model: SingleStepModel, molecules: Sequence[str], k: int
) -> tuple[list[list[ReactionStep]], int]:
    """One batched model call; returns cleaned steps per molecule and the invalid count.

    Invalid precursors and self-loops are dropped; duplicate precursor sets keep
    the best-ranked entry; at most ``k`` steps survive per molecule. A failing
    model call yields empty expansions.
    """
    try:
        raw = model.predict(list(molecules))
    except (RuntimeError, ValueError) as err:
        logger.warning("single-step model failed: %s", err)
        return [[] for _ in molecules], 0
    out = []
    invalid = 0
    for product, preds in zip(molecules, raw):
        seen: set[tuple[str, ...]] = set()
        steps = []
        for rank, (reactants, logp) in enumerate(preds):
            parts = tuple(reactants.split("."))
            if not reactants or not all(validate_syntactic(p).valid for p in parts):
                invalid += 1
                continue
            if reactants == product or product in parts:
                continue
            key = tuple(sorted(parts))
            if key in seen:
                continue
            seen.add(key)
            steps.append(ReactionStep(product, parts, float(logp), rank))
        out.append(steps[:k])
    return out, invalid


class Frontier:
    """Min-heap on ``(cost, insertion order)`` with lazy deletion."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, MoleculeNode]] = []
        self._entry: dict[int, int] = {}
        self._seq = itertools.count()

    def push(self, node: MoleculeNode) -> None:
        seq = next(self._seq)
        self._entry[id(node)] = seq
        heapq.heappush(self._heap, (node.cost, seq, node))

    def discard(self, node: MoleculeNode) -> None:
        self._entry.pop(id(node), None)

    def __len__(self) -> int:
        return len(self._entry)

    def pop(self) -> MoleculeNode | None:
        while self._heap:
            _, seq, node = heapq.heappop(self._heap)
            if self._entry.get(id(node)) == seq:
                del self._entry[id(node)]
                return node
        return None


def pop_batch(frontier: Frontier, width: int) -> list[MoleculeNode]:
    """Remove and return up to ``width`` cheapest open molecules."""
    if width < 1:
        raise ValueError("width must be >= 1")
    batch = []
    while len(batch) < width:
        node = frontier.pop()
        if node is None:
            break
        if node.expanded or node.solved:
            continue
        batch.append(node)
    return batch


class _Planner:
    """Shared tree bookkeeping for both search orders."""

    def __init__(self, target: str, model: SingleStepModel, stock: Stock, config: PlanConfig) -> None:
        self.model = model
        self.stock = stock
        self.config = config
        self.started = time.perf_counter()
        root = MoleculeNode(target, 0, 0.0, in_stock(target, stock), solved=in_stock(target, stock))
        self.tree = SearchTree(root, {target: root})
        self.iterations = 0
        self.invalid = 0
        self.order: list[str] = []

    def out_of_budget(self) -> bool:
        if self.iterations >= self.config.max_iterations:
            return True
        limit = self.config.time_limit
        return limit is not None and time.perf_counter() - self.started >= limit

    def expandable(self, node: MoleculeNode) -> bool:
        return not (node.solved or node.expanded) and node.depth < self.config.max_depth

    def expand_batch(self, batch: list[MoleculeNode]) -> list[MoleculeNode]:
        """Expand ``batch`` with one model call; returns touched precursor nodes in rank order."""
        steps_per_node, invalid = expand(self.model, [n.smiles for n in batch], self.config.expansions)
        self.iterations += 1
        self.invalid += invalid
        touched = []
        for node, steps in zip(batch, steps_per_node):
            node.expanded = True
            self.order.append(node.smiles)
            for step in steps:
                touched.extend(self._add_reaction(node, step))
        return touched

    def _add_reaction(self, node: MoleculeNode, step: ReactionStep) -> list[MoleculeNode]:
        cost = node.cost - step.logp
        reaction = ReactionNode(node, [], step.logp, step.rank)
        node.reactions.append(reaction)
        fresh = []
        for smiles in step.precursors:
            child = self.tree.nodes.get(smiles)
            if child is None:
                stocked = in_stock(smiles, self.stock)
                child = MoleculeNode(smiles, node.depth + 1, cost, stocked, reaction, solved=stocked)
                self.tree.nodes[smiles] = child
                fresh.append(child)
            elif cost < child.cost and not child.expanded:
                child.cost, child.depth, child.parent = cost, node.depth + 1, reaction
                fresh.append(child)
            child.parents.append(reaction)
            reaction.precursors.append(child)
        self._update_solved(reaction)
        return fresh

    def _update_solved(self, reaction: ReactionNode) -> None:
        pending = [reaction]
        while pending:
            r = pending.pop()
            if r.solved or not all(p.solved for p in r.precursors):
                continue
            r.solved = True
            if not r.product.solved:
                r.product.solved = True
                pending.extend(r.product.parents)

    def failed(self, node: MoleculeNode, visiting: frozenset[int] = frozenset()) -> bool:
        """True when ``node`` can no longer be solved in this tree."""
        if node.solved:
            return False
        if id(node) in visiting:
            return True
        if not node.expanded:
            return node.depth >= self.config.max_depth
        inner = visiting | {id(node)}
        return all(any(self.failed(p, inner) for p in r.precursors) for r in node.reactions)

    def relevant(self, node: MoleculeNode, visiting: frozenset[int] = frozenset()) -> bool:
        """True when solving ``node`` could still help solve the root."""
        if node is self.tree.root:
            return not node.solved
        if node.solved or id(node) in visiting:
            return False
        inner = visiting | {id(node)}
        return any(
            not r.solved
            and not any(self.failed(p) for p in r.precursors)
            and self.relevant(r.product, inner)
            for r in node.parents
        )

    def result(self) -> PlanResult:
        from specretro.plan.routes import extract_solved_routes

        routes = extract_solved_routes(self.tree, limit=1)
        return PlanResult(
            solved=self.tree.root.solved,
            route=routes[0] if routes else None,
            iterations=self.iterations,
            wall_time=time.perf_counter() - self.started,
            model_calls=self.iterations,
            nodes_created=len(self.tree.nodes),
            expansion_order=self.order,
            tree=self.tree,
            invalid_predictions=self.invalid,
        )


def retro_star(target: str, model: SingleStepModel, stock: Stock, config: PlanConfig) -> PlanResult:
    """Best-first search on cumulative ``-log p``; stops at the first solved route."""
    if not target:
        raise ValueError("empty target")
    planner = _Planner(target, model, stock, config)
    frontier = Frontier()
    if planner.expandable(planner.tree.root):
        frontier.push(planner.tree.root)
    while not planner.tree.root.solved and not planner.out_of_budget():
        batch = pop_batch(frontier, config.beam_width)
        if not batch:
            break
        for child in planner.expand_batch(batch):
            if planner.expandable(child):
                frontier.push(child)
    return planner.result()


def dfs_plan(target: str, model: SingleStepModel, stock: Stock, config: PlanConfig) -> PlanResult:
    """Depth-first search: expand the newest useful molecule, rank-1 reactions first."""
    if not target:
        raise ValueError("empty target")
    planner = _Planner(target, model, stock, config)
    stack = [planner.tree.root] if planner.expandable(planner.tree.root) else []
    while stack and not planner.tree.root.solved and not planner.out_of_budget():
        node = stack.pop()
        if not planner.expandable(node) or not planner.relevant(node):
            continue
        planner.expand_batch([node])
        for reaction in reversed(node.reactions):
            for child in reversed(reaction.precursors):
                if planner.expandable(child):
                    stack.append(child)
    return planner.result()


def plan(target: str, model: SingleStepModel, stock: Stock, config: PlanConfig) -> PlanResult:
    if config.algorithm == Algorithm.DFS:
        return dfs_plan(target, model, stock, config)
    return retro_star(target, model, stock, config)

from specretro.plan.routes import RouteTree, extract_solved_routes
from specretro.plan.search import (
    Algorithm,
    Frontier,
    MoleculeNode,
    PlanConfig,
    PlanResult,
    ReactionNode,
    ReactionStep,
    SearchTree,
    dfs_plan,
    expand,
    plan,
    pop_batch,
    retro_star,
)
from specretro.plan.stock import Stock, in_stock

__all__ = [
    "Algorithm",
    "Frontier",
    "MoleculeNode",
    "PlanConfig",
    "PlanResult",
    "ReactionNode",
    "ReactionStep",
    "RouteTree",
    "SearchTree",
    "Stock",
    "dfs_plan",
    "expand",
    "extract_solved_routes",
    "in_stock",
    "plan",
    "pop_batch",
    "retro_star",
]

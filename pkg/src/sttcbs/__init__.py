"""Conflict-based multi-agent path finding with gamma-distributed travel delays."""
from .instance import AgentTask, DelayModel, Edge, Graph, GraphNode, InstanceError, ProblemInstance, generate_grid
from .lowlevel import Constraint, DirectedEdge, NodeElement, NoPathError, TimedPath, Visit
from .search import BudgetExhausted, Mode, Solution, SolverConfig, solve, solve_deterministic_baseline

__all__ = [
    "AgentTask",
    "BudgetExhausted",
    "Constraint",
    "DelayModel",
    "DirectedEdge",
    "Edge",
    "Graph",
    "GraphNode",
    "InstanceError",
    "Mode",
    "NoPathError",
    "NodeElement",
    "ProblemInstance",
    "Solution",
    "SolverConfig",
    "TimedPath",
    "Visit",
    "generate_grid",
    "solve",
    "solve_deterministic_baseline",
]

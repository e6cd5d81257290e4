"""Scenario-tree solver for delayed mean-field BSDEs with jumps."""

from __future__ import annotations

from .basis import JumpSpec, build_grid, build_tree
from .contraction import c_beta, search_beta
from .generators import builtin
from .infinite import LadderConfig, solve_infinite
from .picard import PicardConfig, solve_finite, verify_solution

__all__ = [
    "JumpSpec",
    "LadderConfig",
    "PicardConfig",
    "build_grid",
    "build_tree",
    "builtin",
    "c_beta",
    "search_beta",
    "solve_finite",
    "solve_infinite",
    "verify_solution",
]

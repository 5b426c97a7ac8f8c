"""treeprm: tree-search process supervision pipeline.

Search verified reasoning trees, aggregate hybrid step/outcome rewards, emit
rationale-enhanced training data, decode with reward-guided greedy search,
and score first-error localization.
"""

__version__ = "0.1.0"

from .domain import (
    Problem,
    ReasoningStep,
    Trajectory,
    VerificationResult,
    answers_equal,
    normalize_answer,
)
from .mcts import RolloutOutcome, SearchConfig, TreeNode, run_search
from .rewards import AggregatedReward, aggregate, node_value, step_label, trajectory_labels

__all__ = [
    "__version__",
    "Problem",
    "ReasoningStep",
    "Trajectory",
    "VerificationResult",
    "answers_equal",
    "normalize_answer",
    "RolloutOutcome",
    "SearchConfig",
    "TreeNode",
    "run_search",
    "AggregatedReward",
    "aggregate",
    "node_value",
    "step_label",
    "trajectory_labels",
]

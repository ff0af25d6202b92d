"""Exact tabular analysis of shutdown-avoidance incentives under retargetable goals."""

from powerseek.mdp import QTable, RewardVector, TabularMdp, optimal_q, visit_count
from powerseek.recurrence import gamma_star, reach_and_revisit, recurrent_states
from powerseek.shutdown import ShutdownScenario, theorem_check, validate_scenario

__version__ = "0.1.0"

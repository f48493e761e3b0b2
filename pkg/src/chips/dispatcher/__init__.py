"""Compute-node selection and remote step orchestration."""

from .nodes import ComputeNode, NoEligibleNode, select_node
from .steps import StepPhase, StepPlan, Dispatcher
from .client import DispatcherClient, DispatcherUnreachable
from .errors import DispatcherError, UnknownStep, DuplicateStep

__all__ = [
    "ComputeNode",
    "NoEligibleNode",
    "select_node",
    "StepPhase",
    "StepPlan",
    "Dispatcher",
    "DispatcherClient",
    "DispatcherUnreachable",
    "DispatcherError",
    "UnknownStep",
    "DuplicateStep",
]

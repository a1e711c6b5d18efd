"""Simulation, exact solution and bound verification for many-server load balancing
with Coxian-2 service times."""

from .model import AggregateState, CoxianParams, SystemConfig, q_to_s
from .policies import I1F, JIQ, JSQ, PolicyKind, pod, routing_distribution

__version__ = "0.1.0"

__all__ = [
    "AggregateState",
    "CoxianParams",
    "I1F",
    "JIQ",
    "JSQ",
    "PolicyKind",
    "SystemConfig",
    "pod",
    "q_to_s",
    "routing_distribution",
]

"""Deterministic SWIM + Lifeguard protocol core."""

from .gossip import GossipQueue
from .membership import MembershipTable, overrides
from .node import Node, ProbeRound, Suspicion
from .timeouts import LocalHealth, gossip_budget, suspicion_bounds, suspicion_timeout

__all__ = [
    "GossipQueue", "LocalHealth", "MembershipTable", "Node", "ProbeRound", "Suspicion",
    "gossip_budget", "overrides", "suspicion_bounds", "suspicion_timeout",
]

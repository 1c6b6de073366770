"""SWIM group membership with the Lifeguard local-health extensions."""

from .config import PRESETS, Config, ConfigError
from .core import Node, suspicion_bounds, suspicion_timeout
from .types import (
    Channel, Envelope, GossipUpdate, MemberRecord, MsgKind, Send, SetTimer, State, StateChange,
)

__version__ = "0.1.0"

__all__ = [
    "PRESETS", "Channel", "Config", "ConfigError", "Envelope", "GossipUpdate", "MemberRecord",
    "MsgKind", "Node", "Send", "SetTimer", "State", "StateChange", "suspicion_bounds",
    "suspicion_timeout",
]

"""Protocol configuration and the five named test configurations."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Any, Dict, Mapping

# Named configurations; each maps to its component toggles.
PRESETS: Dict[str, Dict[str, bool]] = {
    "SWIM": dict(lha_probe=False, lha_suspicion=False, buddy=False),
    "LHA-Probe": dict(lha_probe=True, lha_suspicion=False, buddy=False),
    "LHA-Suspicion": dict(lha_probe=False, lha_suspicion=True, buddy=False),
    "Buddy System": dict(lha_probe=False, lha_suspicion=False, buddy=True),
    "Lifeguard": dict(lha_probe=True, lha_suspicion=True, buddy=True),
}

ENV_PREFIX = "LIFEGUARD_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    """All durations are milliseconds."""

    base_probe_interval: float = 1000.0
    base_probe_timeout: float = 500.0
    indirect_fanout: int = 3
    lhm_max: int = 8
    suspicion_k: int = 3
    alpha: float = 5.0
    beta: float = 6.0
    retransmit_mult: float = 4.0
    gossip_interval: float = 200.0
    gossip_fanout: int = 3
    push_pull_interval: float = 30_000.0
    dead_retention: float = 86_400_000.0
    nack_fraction: float = 0.8
    max_datagram: int = 1400
    lha_probe: bool = True
    lha_suspicion: bool = True
    buddy: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.base_probe_timeout < self.base_probe_interval:
            raise ConfigError("need 0 < base_probe_timeout < base_probe_interval")
        if not 0 < self.nack_fraction < 1:
            raise ConfigError("nack_fraction must be in (0, 1)")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.beta < 1:
            raise ConfigError("beta must be >= 1")
        if self.suspicion_k < 1:
            raise ConfigError("suspicion_k must be >= 1")
        if self.retransmit_mult < 1:
            raise ConfigError("retransmit_mult must be >= 1")
        if self.lhm_max < 0 or self.indirect_fanout < 0 or self.gossip_fanout < 1:
            raise ConfigError("counts must be non-negative (gossip_fanout >= 1)")
        if self.gossip_interval <= 0 or self.push_pull_interval <= 0:
            raise ConfigError("intervals must be positive")

    @property
    def name(self) -> str:
        for name, toggles in PRESETS.items():
            if all(getattr(self, k) == v for k, v in toggles.items()):
                return name
        return "custom"

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "Config":
        """Build one of the named configurations.

        Configurations without local-health-aware suspicion run SWIM's fixed
        suspicion timeout, which is alpha=5, beta=1 unless overridden.
        """
        try:
            toggles = PRESETS[name]
        except KeyError:
            raise ConfigError(f"unknown configuration {name!r}; "
                              f"expected one of {sorted(PRESETS)}") from None
        values: Dict[str, Any] = dict(toggles)
        if not toggles["lha_suspicion"]:
            values.update(alpha=5.0, beta=1.0)
        values.update(overrides)
        return cls(**values)

    def replace(self, **changes: Any) -> "Config":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base: "Config | None" = None) -> "Config":
        """Apply string or typed values (config files, env vars, flags)."""
        base = base or cls()
        fields = {f.name: f for f in dataclasses.fields(cls)}
        changes: Dict[str, Any] = {}
        for raw_key, value in data.items():
            key = raw_key.replace("-", "_").lower()
            if key not in fields:
                raise ConfigError(f"unknown config key {raw_key!r}")
            changes[key] = _coerce(getattr(base, key), value, raw_key)
        return dataclasses.replace(base, **changes)

    @classmethod
    def from_env(cls, base: "Config | None" = None, environ: Mapping[str, str] | None = None) -> "Config":
        environ = os.environ if environ is None else environ
        found = {k[len(ENV_PREFIX):]: v for k, v in environ.items()
                 if k.startswith(ENV_PREFIX) and k != ENV_PREFIX + "PRESET"}
        return cls.from_mapping(found, base)

    def as_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(current: Any, value: Any, key: str) -> Any:
    if not isinstance(value, str):
        return type(current)(value)
    if isinstance(current, bool):
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        return type(current)(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None

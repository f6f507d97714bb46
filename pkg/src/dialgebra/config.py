"""Session configuration: budgets and depths shared across the kernel.

All operations are deterministic given a fixed config. Functions take
explicit ``depth``/``budget`` arguments where it matters; ``DEFAULT``
supplies the fallbacks, matching the CLI's SessionConfig.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class SessionConfig:
    observation_depth: int = 64
    enumeration_budget: int = 100_000
    index_equality_depth: int = 64
    # Bound on reachable-state exploration when trying to close a
    # generator-backed value into a finite (rational) system.
    rational_state_budget: int = 2048
    output_format: str = "text"

    def validated(self) -> "SessionConfig":
        for field in ("observation_depth", "enumeration_budget",
                      "index_equality_depth", "rational_state_budget"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        if self.output_format not in ("text", "json"):
            raise ValueError("output format must be text or json")
        return self


DEFAULT = SessionConfig()

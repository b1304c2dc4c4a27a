"""Integer-microsecond simulation clock."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class SimClock:
    now_us: int = 0

    def advance(self, delta_us: int) -> int:
        if delta_us < 0:
            raise ValueError("clock cannot run backwards")
        self.now_us += delta_us
        return self.now_us

    def advance_to(self, t_us: int) -> int:
        if t_us < self.now_us:
            raise ValueError(f"cannot move clock from {self.now_us} back to {t_us}")
        self.now_us = t_us
        return t_us

    @property
    def now(self) -> float:
        return self.now_us / 1_000_000

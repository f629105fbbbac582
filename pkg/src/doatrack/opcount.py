"""Operation counting for tracker complexity estimates.

Convention: one (complex or real) multiply-accumulate counts as one MAC;
transcendental functions (exp, atan2, sqrt) and comparisons are not counted.
Counters are incremented by the code that performs the work, with counts
derived from the array shapes actually processed.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field


@dataclass
class OpCounter:
    counts: Counter = field(default_factory=Counter)
    frames: int = 0

    def add(self, name: str, n: int) -> None:
        self.counts[name] += int(n)

    def tick(self) -> None:
        self.frames += 1

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def per_frame(self) -> float:
        return self.total / self.frames if self.frames else 0.0

    def macs_per_second(self, frame_rate: float) -> float:
        return self.per_frame() * frame_rate

    def breakdown(self) -> dict[str, float]:
        """Per-frame MACs by category."""
        f = max(self.frames, 1)
        return {k: v / f for k, v in sorted(self.counts.items())}

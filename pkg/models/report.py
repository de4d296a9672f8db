from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


@dataclass
class InequalityReport:
    """Empirical constant of one functional inequality over a finite sample.

    best_constant is a lower bound on the true constant: it is the largest ratio (or
    difference) observed over the samples, never a certified value.
    """
    name: str
    samples: int
    best_constant: float
    worst_case: Dict[str, Any] = field(default_factory=dict)
    holds_with: Optional[float] = None  # declared constant, if any
    spread: float = 0.0  # max - min of the sampled quantity
    note: str = ''
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        if self.best_constant < 0:
            raise ValueError("best_constant must be nonnegative")

    @property
    def violated(self) -> bool:
        return self.holds_with is not None and self.best_constant > self.holds_with * (1 + 1e-12)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'samples': self.samples,
            'best_constant': self.best_constant,
            'worst_case': self.worst_case,
            'holds_with': self.holds_with,
            'violated': self.violated,
            'spread': self.spread,
            'note': self.note,
        }

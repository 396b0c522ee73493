"""Online predicate cost and conditional-selectivity estimation.

Selectivity is estimated by counting accepts among the photos a predicate
actually saw *at its current pipeline position*, so the estimate is
conditioned on the predicates executed before it. When the pipeline order
changes, the conditioning prefix changes, so the counts are discarded
(position_epoch bump) and fresh samples accrue. Cost is intrinsic to the
predicate and survives reorders; it is smoothed with an EMA so drifting
simulated costs are tracked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import AbstractSet

from theia.predicates import PredicateVerdict

# EMA weight for cost updates and the per-position sample floor below which
# a conditional rank is not considered meaningful.
COST_EMA_LAMBDA = 0.2
SAMPLE_FLOOR = 10


class InsufficientSamplesError(RuntimeError):
    """Selectivity was read before any sample arrived at this position."""


def conditional_selectivity(a1: AbstractSet, a2: AbstractSet) -> float:
    """|A1 ∩ A2| / |A2|: acceptance probability of p1 among photos p2 accepts."""
    if not a2:
        raise ValueError("conditional selectivity undefined for empty conditioning set")
    return len(a1 & a2) / len(a2)


def conditional_rank(cost: float, selectivity: float) -> float:
    """cost / (1 - selectivity); infinite when the predicate never filters."""
    if not 0.0 <= selectivity <= 1.0:
        raise ValueError(f"selectivity must be in [0, 1], got {selectivity}")
    if selectivity == 1.0:
        return math.inf
    return cost / (1.0 - selectivity)


@dataclass
class PredicateStats:
    """Running estimates for one predicate at its current pipeline position."""

    samples: int = 0
    accepts: int = 0
    cost_ema: float | None = None
    position_epoch: int = 0

    def record(self, verdict: PredicateVerdict) -> "PredicateStats":
        """Fold in one evaluation made while the predicate held its position."""
        self.samples += 1
        if verdict.accepted:
            self.accepts += 1
        if self.cost_ema is None:
            self.cost_ema = verdict.cpu_time_ms
        else:
            self.cost_ema = (1.0 - COST_EMA_LAMBDA) * self.cost_ema + COST_EMA_LAMBDA * verdict.cpu_time_ms
        return self

    def selectivity_estimate(self) -> float:
        if self.samples == 0:
            raise InsufficientSamplesError("no samples at current pipeline position")
        return self.accepts / self.samples

    def has_enough_samples(self, floor: int = SAMPLE_FLOOR) -> bool:
        return self.samples >= floor

    def reset_position(self) -> None:
        """Discard position-conditioned counts after a reorder moved this predicate."""
        self.position_epoch += 1
        self.samples = 0
        self.accepts = 0

    def rank(self) -> float:
        """Conditional rank from current estimates; requires cost and >=1 sample."""
        if self.cost_ema is None:
            raise InsufficientSamplesError("no cost observation yet")
        return conditional_rank(self.cost_ema, self.selectivity_estimate())

"""Pipeline ordering and device/cloud partitioning for conjunctive queries.

Ordering: predicates are sorted ascending by conditional rank
``cost / (1 - selectivity)``, where selectivity is conditioned on the
predicates executed earlier. Reordered predicates discard their conditioned
counts (the conditioning prefix changed) and re-estimate in place.

Partitioning: a fictitious wireless predicate with cost equal to the
energy-equivalent cost of offloading one photo and selectivity zero is
inserted into the rank order; everything after it runs remotely. Because the
wireless predicate is independent of the pipeline, a change in network cost
only moves the partition point and never permutes the order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from theia.estimator import PredicateStats, SAMPLE_FLOOR, conditional_rank

REPLAN_INTERVAL = 5

# oracle(index, prefix) -> selectivity of predicate `index` conditioned on a
# photo passing every predicate in `prefix`. Must be a set function of the
# prefix (order inside the prefix cannot matter).
SelectivityOracle = Callable[[int, tuple[int, ...]], float]


@dataclass(frozen=True)
class Partition:
    """An evaluation order plus the index of the first offloaded predicate."""

    order: tuple[str, ...]
    offload_index: int

    def __post_init__(self) -> None:
        if len(set(self.order)) != len(self.order):
            raise ValueError("order contains duplicates")
        if not 0 <= self.offload_index <= len(self.order):
            raise ValueError(
                f"offload_index {self.offload_index} out of [0, {len(self.order)}]"
            )

    @property
    def local(self) -> tuple[str, ...]:
        return self.order[: self.offload_index]

    @property
    def remote(self) -> tuple[str, ...]:
        return self.order[self.offload_index :]


@dataclass
class PlannerState:
    """Estimates owned by one (device, query) evaluation loop."""

    stats: dict[str, PredicateStats] = field(default_factory=dict)
    wireless_cost: float = math.inf
    photos_since_replan: int = 0
    sample_floor: int = SAMPLE_FLOOR

    def stats_for(self, key: str) -> PredicateStats:
        return self.stats.setdefault(key, PredicateStats())


def expected_pipeline_cost(costs: Sequence[float], selectivities: Sequence[float]) -> float:
    """Per-photo expected cost of a pipeline: rejected photos skip the rest.

    `selectivities` must be conditioned on the prefix at each position.
    """
    if len(costs) != len(selectivities):
        raise ValueError("costs and selectivities must align")
    total = 0.0
    pass_prob = 1.0
    for cost, sel in zip(costs, selectivities):
        total += pass_prob * cost
        pass_prob *= sel
    return total


def order_by_rank(state: PlannerState, current_order: Sequence[str]) -> list[str]:
    """Re-sort the predicates that have enough samples by conditional rank.

    Sampled predicates are permuted among the positions they already occupy
    (ascending rank, ties by name); predicates below the sample floor hold
    their positions until samples accrue. Every predicate that moves discards
    its conditioned counts.
    """
    current = list(current_order)
    sampled_positions = [
        i
        for i, key in enumerate(current)
        if state.stats_for(key).has_enough_samples(state.sample_floor)
    ]
    ranked = sorted(
        (current[i] for i in sampled_positions),
        key=lambda key: (state.stats[key].rank(), key),
    )
    new_order = list(current)
    for pos, key in zip(sampled_positions, ranked):
        new_order[pos] = key
    for i, key in enumerate(new_order):
        if current[i] != key:
            state.stats[key].reset_position()
    return new_order


def place_pw(
    state: PlannerState, order: Sequence[str], min_samples: Optional[int] = None
) -> Partition:
    """Insert the wireless pseudo-predicate into the rank order.

    Its rank equals the wireless cost (selectivity zero), so the candidate
    offload point is the first position whose predicate out-ranks it. A rank
    tie keeps the predicate local (offloading has latency side-effects the
    cost model ignores). Predicates below the sample floor have no usable
    rank and stay local unless an out-ranked sampled predicate precedes them.

    Rank insertion alone prices a photo that survives every local predicate
    as if it were always transmitted; a fully local pipeline transmits
    nothing, so when every estimate is available the candidate is compared
    against fully-local modeled cost and the cheaper one wins.
    """
    if state.wireless_cost < 0:
        raise ValueError(f"wireless cost must be >= 0, got {state.wireless_cost}")
    floor = state.sample_floor if min_samples is None else min_samples
    n = len(order)
    candidate = n
    for i, key in enumerate(order):
        stats = state.stats_for(key)
        if not stats.has_enough_samples(floor) or stats.cost_ema is None:
            continue
        if stats.rank() > state.wireless_cost:
            candidate = i
            break
    if candidate < n and all(
        state.stats_for(key).has_enough_samples(floor)
        and state.stats_for(key).cost_ema is not None
        for key in order
    ):
        costs = [state.stats[key].cost_ema for key in order]
        sels = [state.stats[key].selectivity_estimate() for key in order]
        pass_prob = 1.0
        offload_cost = 0.0
        for i in range(candidate):
            offload_cost += pass_prob * costs[i]
            pass_prob *= sels[i]
        offload_cost += pass_prob * state.wireless_cost
        if expected_pipeline_cost(costs, sels) <= offload_cost:
            candidate = n
    return Partition(tuple(order), offload_index=candidate)


def replan(state: PlannerState, current: Partition) -> Partition:
    """Recompute order and partition point on the five-photo cadence."""
    if state.photos_since_replan < REPLAN_INTERVAL:
        return current
    state.photos_since_replan = 0
    order = order_by_rank(state, current.order)
    return place_pw(state, order)


def replan_on_network_change(
    state: PlannerState, new_wireless_cost: float, current: Partition
) -> Partition:
    """Move only the wireless predicate; the pipeline order is untouched."""
    if new_wireless_cost < 0:
        raise ValueError(f"wireless cost must be >= 0, got {new_wireless_cost}")
    state.wireless_cost = new_wireless_cost
    return place_pw(state, current.order)


# ---------------------------------------------------------------------------
# Exact-stats heuristics and the exhaustive oracle
# ---------------------------------------------------------------------------


def independent_oracle(selectivities: Sequence[float]) -> SelectivityOracle:
    sels = list(selectivities)

    def oracle(index: int, prefix: tuple[int, ...]) -> float:
        return sels[index]

    return oracle


def accept_set_oracle(accept_sets: Sequence[frozenset], universe_size: int) -> SelectivityOracle:
    """Exact conditional selectivity from explicit accept sets.

    Prefix intersections are memoized by set, so exhaustive enumerations
    that revisit the same conditioning sets stay cheap.
    """
    inters: dict[frozenset, frozenset] = {}

    def intersection(prefix: tuple[int, ...]) -> frozenset:
        key = frozenset(prefix)
        cached = inters.get(key)
        if cached is None:
            cached = intersection(prefix[:-1]) & accept_sets[prefix[-1]] if prefix else None
            if cached is None:  # empty prefix: whole universe, represented lazily
                cached = frozenset(range(universe_size))
            inters[key] = cached
        return cached

    def oracle(index: int, prefix: tuple[int, ...]) -> float:
        if not prefix:
            return len(accept_sets[index]) / universe_size
        conditioning = intersection(prefix)
        if not conditioning:
            # nothing survives the prefix; selectivity is irrelevant
            return 0.0
        return len(accept_sets[index] & conditioning) / len(conditioning)

    return oracle


def greedy_rank_order(costs: Sequence[float], oracle: SelectivityOracle) -> tuple[int, ...]:
    """Conditional-rank ordering with exact statistics.

    Greedily appends the remaining predicate with the lowest rank conditioned
    on the chosen prefix; this is the order the online reorderer converges to
    once its estimates are exact.
    """
    n = len(costs)
    remaining = list(range(n))
    prefix: list[int] = []
    while remaining:
        best = min(
            remaining,
            key=lambda i: (conditional_rank(costs[i], oracle(i, tuple(prefix))), i),
        )
        remaining.remove(best)
        prefix.append(best)
    return tuple(prefix)


def pipeline_cost_with_oracle(
    costs: Sequence[float], oracle: SelectivityOracle, order: Sequence[int]
) -> float:
    """Expected per-photo cost of `order` under exact conditional selectivities."""
    total = 0.0
    pass_prob = 1.0
    prefix: tuple[int, ...] = ()
    for i in order:
        total += pass_prob * costs[i]
        pass_prob *= oracle(i, prefix)
        prefix = prefix + (i,)
    return total


def _pass_prob_table(n: int, oracle: SelectivityOracle) -> np.ndarray:
    """P[mask] = probability a photo passes every predicate in the mask."""
    table = np.ones(1 << n)
    order_of: dict[int, tuple[int, ...]] = {0: ()}
    for mask in range(1, 1 << n):
        low = (mask & -mask).bit_length() - 1
        rest = mask ^ (1 << low)
        prefix = order_of[rest]
        table[mask] = table[rest] * oracle(low, prefix)
        order_of[mask] = prefix + (low,)
    return table


@lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


def brute_force_optimal(
    costs: Sequence[float],
    oracle: SelectivityOracle,
    wireless_cost: float,
) -> tuple[tuple[int, ...], int, float]:
    """Exhaustive search over all n!·(n+1) (order, partition) pairs.

    Minimizes expected per-photo device cost: the local prefix's pipeline
    cost plus (probability the photo passes the whole prefix) x wireless
    cost. `offload_index == n` means fully local and pays no wireless cost.
    Requires a set-consistent oracle. n is capped at 10.
    """
    n = len(costs)
    if n > 10:
        raise ValueError(f"brute force capped at n=10, got {n}")
    if n == 0:
        return (), 0, 0.0
    costs_arr = np.asarray(costs, dtype=np.float64)
    p_table = _pass_prob_table(n, oracle)
    perms = _permutations(n)
    best_cost = math.inf
    best_perm: tuple[int, ...] = ()
    best_k = 0
    for start in range(0, len(perms), 50_000):
        block = perms[start : start + 50_000]
        masks = np.bitwise_or.accumulate(1 << block, axis=1)
        # pass probability before each position (column i: after i predicates)
        pass_before = np.empty_like(block, dtype=np.float64)
        pass_before[:, 0] = 1.0
        pass_before[:, 1:] = p_table[masks[:, :-1]]
        step_cost = pass_before * costs_arr[block]
        local_cum = np.cumsum(step_cost, axis=1)
        device = np.empty((block.shape[0], n + 1))
        pass_after = p_table[masks]  # after k predicates, k = 1..n
        if math.isinf(wireless_cost):
            wireless_term = np.where(pass_after > 0, math.inf, 0.0)
            device[:, 0] = math.inf
        else:
            wireless_term = pass_after * wireless_cost
            device[:, 0] = wireless_cost
        device[:, 1:n] = local_cum[:, : n - 1] + wireless_term[:, : n - 1]
        device[:, n] = local_cum[:, n - 1]
        flat = int(np.argmin(device))
        row, k = divmod(flat, n + 1)
        if device[row, k] < best_cost:
            best_cost = float(device[row, k])
            best_perm = tuple(int(x) for x in block[row])
            best_k = int(k)
    return best_perm, best_k, best_cost


def device_cost_for_partition(
    costs: Sequence[float],
    oracle: SelectivityOracle,
    order: Sequence[int],
    offload_index: int,
    wireless_cost: float,
) -> float:
    """Modeled per-photo device cost of one (order, partition) pair."""
    total = 0.0
    pass_prob = 1.0
    prefix: tuple[int, ...] = ()
    for i in order[:offload_index]:
        total += pass_prob * costs[i]
        pass_prob *= oracle(i, prefix)
        prefix = prefix + (i,)
    if offload_index < len(order) and pass_prob > 0.0:
        total += pass_prob * wireless_cost
    return total

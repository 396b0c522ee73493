"""Seeded random planning instances shared by planner and acceptance tests.

Correlated instances build accept sets from shared uniform draws over a
finite photo universe: predicates thresholding the same draw form nested
chains, predicates on different draws are independent, and two-draw
intersections overlap both families.
"""

from __future__ import annotations

import random

from theia.estimator import PredicateStats
from theia.planner import PlannerState, SelectivityOracle, accept_set_oracle, independent_oracle


def independent_instance(rng: random.Random, n: int) -> tuple[list[float], list[float]]:
    costs = [rng.uniform(1.0, 100.0) for _ in range(n)]
    # selectivities as exact thousandths so stats counters represent them exactly
    sels = [rng.randrange(50, 951) / 1000.0 for _ in range(n)]
    return costs, sels


def correlated_instance(
    rng: random.Random, n: int, universe: int = 512
) -> tuple[list[float], list[frozenset], int]:
    u1 = [rng.random() for _ in range(universe)]
    u2 = [rng.random() for _ in range(universe)]
    costs = []
    accept_sets = []
    for _ in range(n):
        costs.append(rng.uniform(1.0, 100.0))
        kind = rng.random()
        t1 = rng.uniform(0.15, 0.9)
        t2 = rng.uniform(0.15, 0.9)
        if kind < 0.4:  # nested within the first family
            members = {i for i in range(universe) if u1[i] < t1}
        elif kind < 0.8:  # nested within the second family
            members = {i for i in range(universe) if u2[i] < t2}
        else:  # overlaps both families
            members = {i for i in range(universe) if u1[i] < t1 and u2[i] < max(t2, 0.5)}
        if not members:  # degenerate always-reject predicates make cost trivial
            members = {rng.randrange(universe)}
        accept_sets.append(frozenset(members))
    return costs, accept_sets, universe


def exact_state(costs: list[float], sels: list[float], keys: list[str]) -> PlannerState:
    """PlannerState whose estimates equal the given exact values."""
    state = PlannerState()
    for key, cost, sel in zip(keys, costs, sels):
        accepts = round(sel * 1000)
        state.stats[key] = PredicateStats(samples=1000, accepts=accepts, cost_ema=cost)
    return state


def oracle_for_independent(sels: list[float]) -> SelectivityOracle:
    return independent_oracle(sels)


def oracle_for_sets(accept_sets: list[frozenset], universe: int) -> SelectivityOracle:
    return accept_set_oracle(accept_sets, universe)

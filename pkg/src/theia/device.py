"""The emulated smartphone engine.

Holds a photo corpus, executes pushed queries within a budget share, tracks
per-query searched-photo state on disk, offloads promising photos past the
partition point, and streams accepted photos to a result sink as soon as
they are found.

Charging follows a pessimistic reservation: a photo is only started when the
remaining share covers both its per-photo charge and a potential per-result
charge, so a task can never overrun its share.
"""

from __future__ import annotations

import hashlib
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from theia.config import CostModel, NetworkProfile, SimConfig
from theia.energy import EnergyLedger, EnergyModel, fit_energy_model, offload_cost_compute_ms
from theia.estimator import PredicateStats
from theia.planner import (
    Partition,
    PlannerState,
    place_pw,
    replan,
    replan_on_network_change,
)
from theia.predicates import Photo, PredicateRegistry, PredicateVerdict, default_registry, read_photo
from theia.query import QuerySpec, conjunctive_pipeline, evaluate_leaf, evaluate_query, pipeline_keys

# Offloaded predicates run on server hardware this much faster than locally;
# affects execution time only, never device energy.
SERVER_SPEEDUP = 10.0


def derive_seed(*parts) -> int:
    digest = hashlib.blake2b("/".join(str(p) for p in parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


# ---------------------------------------------------------------------------
# Corpus access
# ---------------------------------------------------------------------------


class Corpus(Protocol):
    def ids(self) -> list[str]: ...

    def load(self, photo_id: str) -> Photo: ...


class DirCorpus:
    """Photos stored as <id>.ppm + <id>.meta under one directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.ppm"))

    def load(self, photo_id: str) -> Photo:
        return read_photo(self.directory, photo_id)


class MemCorpus:
    def __init__(self, photos: Sequence[Photo]):
        self._photos = {p.id: p for p in photos}

    def ids(self) -> list[str]:
        return sorted(self._photos)

    def load(self, photo_id: str) -> Photo:
        return self._photos[photo_id]


# ---------------------------------------------------------------------------
# Persistent per-query searched-photo state
# ---------------------------------------------------------------------------


class StateStore:
    """One file per (device, query): newline-separated photo ids, sorted at rest.

    Ids are appended as soon as a photo is selected so a crash or restart
    never forgets work; the file is compacted to sorted order on task
    completion.
    """

    def __init__(self, root: str | Path, device_id: str):
        self.directory = Path(root) / device_id
        self._cache: dict[int, set[str]] = {}

    def _path(self, query_id: int) -> Path:
        return self.directory / f"{query_id}.searched"

    def searched(self, query_id: int) -> set[str]:
        if query_id not in self._cache:
            path = self._path(query_id)
            ids = set()
            if path.exists():
                ids = {line.strip() for line in path.read_text().splitlines() if line.strip()}
            self._cache[query_id] = ids
        return self._cache[query_id]

    def add(self, query_id: int, photo_id: str) -> None:
        ids = self.searched(query_id)
        if photo_id in ids:
            return
        ids.add(photo_id)
        self.directory.mkdir(parents=True, exist_ok=True)
        with self._path(query_id).open("a") as fh:
            fh.write(photo_id + "\n")

    def add_many(self, query_id: int, photo_ids: Sequence[str]) -> None:
        for pid in photo_ids:
            self.add(query_id, pid)

    def compact(self, query_id: int) -> None:
        ids = self.searched(query_id)
        if ids:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._path(query_id).write_text("\n".join(sorted(ids)) + "\n")


# ---------------------------------------------------------------------------
# Offload transport
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RemoteVerdict:
    accepted: bool
    verdicts: dict[str, PredicateVerdict]  # keyed by pipeline key, evaluation order


class TransportError(RuntimeError):
    """Offload request failed; the photo falls back to local evaluation."""


class OffloadTransport(Protocol):
    def evaluate_remote(
        self,
        session_id: str,
        query: QuerySpec,
        device_id: str,
        photo: Photo,
        predicate_keys: Sequence[str],
    ) -> RemoteVerdict: ...


class LoopbackTransport:
    """Evaluates offloaded predicates in place; unit tests and local demos."""

    def __init__(self, registry: Optional[PredicateRegistry] = None, fail: bool = False):
        self.registry = registry or default_registry()
        self.fail = fail
        self.calls = 0

    def evaluate_remote(self, session_id, query, device_id, photo, predicate_keys):
        self.calls += 1
        if self.fail:
            raise TransportError("injected transport failure")
        keys = pipeline_keys(query.leaves())
        by_key = dict(zip(keys, query.leaves()))
        verdicts: dict[str, PredicateVerdict] = {}
        accepted = True
        for key in predicate_keys:
            v = evaluate_leaf(by_key[key], photo, self.registry)
            verdicts[key] = v
            if not v.accepted:
                accepted = False
                break
        return RemoteVerdict(accepted=accepted, verdicts=verdicts)


# ---------------------------------------------------------------------------
# Tasks, results, summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchTask:
    session_id: str
    query: QuerySpec
    budget_share: int
    seed: int
    cost_model: CostModel = field(default_factory=CostModel)
    strategy: str = "partitioned"  # partitioned | local | offload

    def __post_init__(self) -> None:
        if self.strategy not in ("partitioned", "local", "offload"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class DeviceResult:
    session_id: str
    device_id: str
    photo_id: str
    score: float
    predicate_scores: dict[str, float]
    virtual_ts_ms: float


@dataclass
class TaskSummary:
    session_id: str
    device_id: str
    query_id: int
    photos_searched: int = 0
    results: int = 0
    charge_flat: int = 0
    charge_photos: int = 0
    charge_results: int = 0
    exhausted: bool = False
    energy: dict[str, float] = field(default_factory=dict)
    predicate_stats: dict[str, dict[str, float]] = field(default_factory=dict)
    partition_trace: list[tuple[int, int]] = field(default_factory=list)
    # cumulative task energy (mJ) after each evaluated photo
    energy_trace: list[tuple[int, float]] = field(default_factory=list)
    clock_start_ms: float = 0.0
    clock_end_ms: float = 0.0
    task_energy_mj: float = 0.0

    @property
    def total_charge(self) -> int:
        return self.charge_flat + self.charge_photos + self.charge_results


class BudgetRejected(ValueError):
    """The share cannot even cover the flat entry charge."""


ResultSink = Callable[[DeviceResult], None]
PhotoHook = Callable[[int, "DeviceEngine"], None]


# ---------------------------------------------------------------------------
# The engine
# ---------------------------------------------------------------------------


class DeviceEngine:
    def __init__(
        self,
        device_id: str,
        corpus: Corpus,
        state_root: str | Path,
        profile: NetworkProfile,
        config: Optional[SimConfig] = None,
        seed: int = 0,
        registry: Optional[PredicateRegistry] = None,
    ):
        self.device_id = device_id
        self.corpus = corpus
        self.config = config or SimConfig()
        self.profile = profile
        self.registry = registry or default_registry()
        self.seed = seed
        self.state = StateStore(state_root, device_id)
        self.ledger = EnergyLedger()
        self.clock_ms = 0.0
        self.fitted_model: Optional[EnergyModel] = None
        self._network_changed = False
        self._mean_bytes: Optional[float] = None

    # -- hardware truth ----------------------------------------------------

    @property
    def true_model(self) -> EnergyModel:
        return EnergyModel(
            alpha_mw=self.config.alpha_mw,
            beta_mw=self.profile.tx_power_mw,
            idle_mw=self.config.idle_mw,
        )

    def mean_photo_bytes(self) -> float:
        if self._mean_bytes is None:
            ids = self.corpus.ids()
            if not ids:
                return 1.0
            self._mean_bytes = sum(self.corpus.load(pid).nbytes for pid in ids) / len(ids)
        return self._mean_bytes

    # -- network condition changes ------------------------------------------

    def set_network_profile(self, profile: NetworkProfile) -> None:
        """Switch links; the running evaluation loop replans before its next photo."""
        self.profile = profile
        self._network_changed = True

    def inject_delay(self, extra_rtt_ms: float) -> None:
        if extra_rtt_ms < 0:
            raise ValueError("extra rtt must be >= 0")
        self.set_network_profile(self.profile.with_extra_rtt(extra_rtt_ms))

    def current_wireless_cost(self) -> float:
        """pw cost in compute-ms equivalents under current conditions."""
        model = self.fitted_model or self.true_model
        return offload_cost_compute_ms(self.profile, model, max(1, int(self.mean_photo_bytes())))

    # -- bookkeeping helpers -------------------------------------------------

    @staticmethod
    def _pace(pace_scale: float, virtual_ms: float) -> None:
        if pace_scale > 0.0 and virtual_ms > 0.0:
            time.sleep(virtual_ms * pace_scale)

    def _spend_compute(self, cpu_ms: float) -> None:
        self.clock_ms += cpu_ms
        self.ledger.add_compute(self.true_model.compute_mj(cpu_ms))

    def _spend_transmit(self, tx_ms: float) -> None:
        self.clock_ms += tx_ms
        self.ledger.add_transmit(self.true_model.transmit_mj(tx_ms))

    def searched_ids(self, query_id: int) -> set[str]:
        return set(self.state.searched(query_id))

    def mark_cache_searched(self, query_id: int, photo_ids: Sequence[str]) -> None:
        self.state.add_many(query_id, photo_ids)

    # -- the task loop -------------------------------------------------------

    def run_task(
        self,
        task: SearchTask,
        sink: ResultSink,
        transport: Optional[OffloadTransport] = None,
        photo_hook: Optional[PhotoHook] = None,
        pace_scale: float = 0.0,
    ) -> TaskSummary:
        """Execute one search task; `pace_scale` > 0 sleeps that many wall
        seconds per virtual millisecond (latency demos)."""
        transport = transport or LoopbackTransport(self.registry)
        cost = task.cost_model
        query_id = task.query.id
        summary = TaskSummary(
            session_id=task.session_id,
            device_id=self.device_id,
            query_id=query_id,
            clock_start_ms=self.clock_ms,
        )
        energy_base = self.ledger.total_mj
        if task.budget_share < cost.flat_per_device:
            raise BudgetRejected(
                f"share {task.budget_share} below flat entry cost {cost.flat_per_device}"
            )
        remaining = task.budget_share - cost.flat_per_device
        summary.charge_flat = cost.flat_per_device

        pipeline = conjunctive_pipeline(task.query)
        keys = pipeline_keys(pipeline) if pipeline is not None else []
        leaves = dict(zip(keys, pipeline)) if pipeline is not None else {}
        state = PlannerState(sample_floor=self.config.min_rank_samples)
        for key in keys:
            state.stats_for(key)
        # lifetime counts survive reorder resets; they feed user-facing
        # selectivity feedback, not planning
        lifetime: dict[str, list] = {}

        def observe(key: str, verdict: PredicateVerdict) -> None:
            state.stats_for(key).record(verdict)
            agg = lifetime.setdefault(key, [0, 0, 0.0])
            agg[0] += 1
            agg[1] += 1 if verdict.accepted else 0
            agg[2] = verdict.cpu_time_ms

        rng = random.Random(derive_seed(self.seed, query_id, "select"))
        eligible = [pid for pid in self.corpus.ids() if pid not in self.state.searched(query_id)]

        def select_next_photo() -> Optional[str]:
            if not eligible:
                return None
            pid = eligible.pop(rng.randrange(len(eligible)))
            self.state.add(query_id, pid)
            return pid

        def can_afford_photo() -> bool:
            return remaining >= cost.per_photo + cost.per_result

        def emit(photo_id: str, score: float, scores: dict[str, float]) -> None:
            sink(
                DeviceResult(
                    session_id=task.session_id,
                    device_id=self.device_id,
                    photo_id=photo_id,
                    score=score,
                    predicate_scores=dict(scores),
                    virtual_ts_ms=self.clock_ms,
                )
            )

        photo_index = 0
        partition: Optional[Partition] = None
        tx_samples: list[float] = []

        # --- training phase: full evaluation + transfer probes ---
        if pipeline is not None and task.strategy == "partitioned":
            energy_samples: list[tuple[float, float, float]] = []
            trained: list[str] = []
            while len(trained) < self.config.training_photos and can_afford_photo():
                pid = select_next_photo()
                if pid is None:
                    summary.exhausted = True
                    break
                remaining -= cost.per_photo
                summary.charge_photos += cost.per_photo
                photo = self.corpus.load(pid)
                photo_index += 1
                scores: dict[str, float] = {}
                accepted = True
                cpu_total = 0.0
                for key in keys:
                    v = evaluate_leaf(leaves[key], photo, self.registry)
                    observe(key, v)
                    self._spend_compute(v.cpu_time_ms)
                    cpu_total += v.cpu_time_ms
                    scores[key] = v.score
                    accepted = accepted and v.accepted
                energy_samples.append(
                    (cpu_total, 0.0, self.true_model.compute_mj(cpu_total))
                )
                state.photos_since_replan += 1
                summary.photos_searched += 1
                trained.append(pid)
                if accepted:
                    remaining -= cost.per_result
                    summary.charge_results += cost.per_result
                    summary.results += 1
                    emit(pid, min(scores.values()), scores)
                summary.energy_trace.append((photo_index, self.ledger.total_mj - energy_base))
                self._pace(pace_scale, cpu_total)
            for pid in trained[: self.config.training_probes]:
                photo = self.corpus.load(pid)
                tx_ms = self.profile.tx_time_ms(photo.nbytes)
                try:
                    transport.evaluate_remote(task.session_id, task.query, self.device_id, photo, [])
                except TransportError:
                    self._network_changed = True
                self._spend_transmit(tx_ms)
                tx_samples.append(tx_ms)
                energy_samples.append((0.0, tx_ms, self.true_model.transmit_mj(tx_ms)))
            if len(energy_samples) >= 3 and tx_samples and any(s[0] > 0 for s in energy_samples):
                self.fitted_model = fit_energy_model(energy_samples, idle_mw=self.config.idle_mw)
            state.wireless_cost = self.current_wireless_cost()
            state.photos_since_replan = 0
            # cold start: document order; pw placed from training estimates
            partition = place_pw(state, keys, min_samples=1)
        elif pipeline is not None:
            state.wireless_cost = self.current_wireless_cost()
            idx = len(keys) if task.strategy == "local" else 0
            partition = Partition(tuple(keys), idx)

        # --- evaluation loop ---
        while can_afford_photo():
            if photo_hook is not None:
                photo_hook(photo_index + 1, self)
            if self._network_changed and partition is not None and task.strategy == "partitioned":
                partition = replan_on_network_change(state, self.current_wireless_cost(), partition)
                self._network_changed = False
            pid = select_next_photo()
            if pid is None:
                summary.exhausted = True
                break
            remaining -= cost.per_photo
            summary.charge_photos += cost.per_photo
            photo = self.corpus.load(pid)
            photo_index += 1
            photo_clock_start = self.clock_ms
            if pipeline is None:
                verdict = evaluate_query(task.query, photo, self.registry)
                self._spend_compute(verdict.cpu_time_ms)
                accepted = verdict.accepted
                scores = {k: v.score for k, v in verdict.leaf_verdicts.items()}
                score = verdict.score
            else:
                accepted, scores = self._evaluate_partitioned(
                    task, photo, partition, state, leaves, transport, observe
                )
                score = min(scores.values()) if scores else 1.0
            summary.photos_searched += 1
            if accepted:
                remaining -= cost.per_result
                summary.charge_results += cost.per_result
                summary.results += 1
                emit(pid, score, scores)
            summary.energy_trace.append((photo_index, self.ledger.total_mj - energy_base))
            self._pace(pace_scale, self.clock_ms - photo_clock_start)
            if partition is not None:
                state.photos_since_replan += 1
                if task.strategy == "partitioned":
                    partition = replan(state, partition)
                summary.partition_trace.append((photo_index, partition.offload_index))

        self.state.compact(query_id)
        summary.clock_end_ms = self.clock_ms
        summary.task_energy_mj = self.ledger.total_mj - energy_base
        summary.energy = self.ledger.snapshot()
        summary.predicate_stats = {
            key: {"samples": agg[0], "accepts": agg[1], "cost_ema": agg[2]}
            for key, agg in lifetime.items()
        }
        return summary

    def _evaluate_partitioned(
        self,
        task: SearchTask,
        photo: Photo,
        partition: Partition,
        state: PlannerState,
        leaves: dict,
        transport: OffloadTransport,
        observe,
    ) -> tuple[bool, dict[str, float]]:
        scores: dict[str, float] = {}
        for key in partition.local:
            v = evaluate_leaf(leaves[key], photo, self.registry)
            observe(key, v)
            self._spend_compute(v.cpu_time_ms)
            scores[key] = v.score
            if not v.accepted:
                return False, scores
        if not partition.remote:
            return True, scores
        tx_ms = self.profile.tx_time_ms(photo.nbytes)
        try:
            remote = transport.evaluate_remote(
                task.session_id, task.query, self.device_id, photo, list(partition.remote)
            )
        except TransportError:
            # transient fault: finish this photo locally and replan
            self._network_changed = True
            for key in partition.remote:
                v = evaluate_leaf(leaves[key], photo, self.registry)
                observe(key, v)
                self._spend_compute(v.cpu_time_ms)
                scores[key] = v.score
                if not v.accepted:
                    return False, scores
            return True, scores
        self._spend_transmit(tx_ms)
        remote_cpu = sum(v.cpu_time_ms for v in remote.verdicts.values())
        self.clock_ms += remote_cpu / SERVER_SPEEDUP
        for key, v in remote.verdicts.items():
            observe(key, v)
            scores[key] = v.score
        return remote.accepted, scores

"""The search coordinator.

Distributes a budgeted query to selected devices, searches the data cache
before touching any device, collects streamed results into a per-session
record list, maintains the charge ledger, evaluates offloaded photos in the
partition agent, and applies relevance-marked device priority on
resubmission.

Charging: each selected device gets an equal share of the budget. Within a
share the order is flat entry charge, then cache results, then the device's
photo loop; every stage reserves pessimistically so a session can never
exceed its budget.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from theia.config import CostModel, SimConfig
from theia.device import (
    DeviceEngine,
    DeviceResult,
    RemoteVerdict,
    SearchTask,
    derive_seed,
)
from theia.predicates import Photo, PredicateRegistry, decode_ppm, default_registry, encode_ppm
from theia.query import (
    QuerySpec,
    conjunctive_pipeline,
    evaluate_leaf,
    evaluate_query,
    parse_query,
    pipeline_keys,
    serialize_query,
    validate,
)


class BudgetTooSmall(ValueError):
    def __init__(self, budget: int, minimum: int):
        self.minimum = minimum
        super().__init__(f"budget {budget} below minimum {minimum}")


class UnknownSession(KeyError):
    pass


class UnknownRecord(KeyError):
    pass


def allocate_budget(
    budget: int, registered_devices: int, cost_model: CostModel, flat_fraction: float = 0.1
) -> tuple[int, int]:
    """Device count and equal per-device share for one submission.

    A fixed fraction of the budget may go to per-device flat charges, which
    caps the device count; the share is the floor of an equal split.
    """
    minimum = cost_model.minimum_budget()
    if budget < minimum:
        raise BudgetTooSmall(budget, minimum)
    if registered_devices < 1:
        raise ValueError("no registered devices")
    n = int(flat_fraction * budget / cost_model.flat_per_device)
    n = max(1, min(n, registered_devices))
    return n, budget // n


def select_devices(
    n: int,
    registered: Sequence[str],
    relevant_marks: dict[str, int],
    rng: random.Random,
) -> list[str]:
    """Pick devices for one submission.

    First submission (no marks yet): a uniform random subset. Resubmission:
    devices with relevant-marked results first, most marks first (ties by
    id), then random fill from the unmarked.
    """
    if n > len(registered):
        raise ValueError(f"cannot select {n} of {len(registered)} devices")
    pool = sorted(registered)
    marked = sorted(
        (d for d in pool if relevant_marks.get(d, 0) > 0),
        key=lambda d: (-relevant_marks[d], d),
    )
    chosen = marked[:n]
    rest = [d for d in pool if d not in set(chosen)]
    if len(chosen) < n:
        chosen += rng.sample(rest, n - len(chosen))
    return chosen


@dataclass
class ResultRecord:
    session_id: str
    device_id: str
    photo_id: str
    score: float
    predicate_scores: dict[str, float]
    arrival_index: int
    virtual_ts_ms: float
    from_cache: bool = False
    relevance_mark: str = "unset"  # unset | relevant | irrelevant

    def to_json(self) -> dict:
        return {
            "type": "result",
            "session": self.session_id,
            "device_id": self.device_id,
            "photo_id": self.photo_id,
            "score": round(self.score, 9),
            "predicate_scores": {k: round(v, 9) for k, v in self.predicate_scores.items()},
            "arrival_index": self.arrival_index,
            "virtual_ts_ms": round(self.virtual_ts_ms, 6),
            "from_cache": self.from_cache,
            "relevance_mark": self.relevance_mark,
        }


@dataclass
class CompletionRecord:
    session_id: str
    arrival_index: int
    photos_searched: int
    devices_searched: int
    cache_evaluated: int
    results: int
    total_charge: int
    budget: int
    devices: list[str]
    selectivity: dict[str, float]
    elapsed_virtual_ms: float

    def to_json(self) -> dict:
        return {
            "type": "complete",
            "session": self.session_id,
            "arrival_index": self.arrival_index,
            "photos_searched": self.photos_searched,
            "devices_searched": self.devices_searched,
            "cache_evaluated": self.cache_evaluated,
            "results": self.results,
            "total_charge": self.total_charge,
            "budget": self.budget,
            "devices": self.devices,
            "selectivity": {k: round(v, 9) for k, v in self.selectivity.items()},
            "elapsed_virtual_ms": round(self.elapsed_virtual_ms, 6),
        }


class DataCache:
    """Server-side store of photos offloaded from devices; entries immutable."""

    def __init__(self) -> None:
        self._store: dict[tuple[str, str], bytes] = {}
        self._lock = threading.Lock()

    def insert_if_absent(self, device_id: str, photo_id: str, ppm: bytes) -> None:
        with self._lock:
            self._store.setdefault((device_id, photo_id), ppm)

    def get(self, device_id: str, photo_id: str) -> Optional[bytes]:
        return self._store.get((device_id, photo_id))

    def photos_for(self, device_id: str) -> list[str]:
        return sorted(pid for (did, pid) in self._store if did == device_id)

    def __len__(self) -> int:
        return len(self._store)


@dataclass
class _DeviceSlot:
    share: int
    share_remaining: int
    started: bool = False
    done: bool = False
    charge_flat: int = 0
    charge_photos: int = 0
    charge_results: int = 0
    photos_searched: int = 0
    cache_evaluated: int = 0


@dataclass
class Session:
    session_id: str
    query: QuerySpec
    budget: int
    seed: int
    strategy: str
    devices: list[str]
    slots: dict[str, _DeviceSlot]
    status: str = "running"
    records: list[ResultRecord] = field(default_factory=list)
    completion: Optional[CompletionRecord] = None
    selectivity_samples: dict[str, list[int]] = field(default_factory=dict)
    device_summaries: list = field(default_factory=list)
    max_device_elapsed_ms: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def total_charge(self) -> int:
        return sum(
            s.charge_flat + s.charge_photos + s.charge_results for s in self.slots.values()
        )

    @property
    def photos_searched(self) -> int:
        return sum(s.photos_searched for s in self.slots.values())

    def append_record(self, record: ResultRecord) -> ResultRecord:
        with self.lock:
            record.arrival_index = len(self.records)
            self.records.append(record)
        return record

    def stream_lines(self, cursor: int) -> tuple[list[str], int, str]:
        with self.lock:
            stream = [r.to_json() for r in self.records]
            if self.status == "complete" and self.completion is not None:
                stream.append(self.completion.to_json())
            cursor = max(0, cursor)
            lines = [json.dumps(item, sort_keys=True) for item in stream[cursor:]]
            return lines, max(cursor, len(stream)), self.status


class TheiaServer:
    """Coordinates sessions over an attached in-process fleet or remote devices."""

    def __init__(
        self,
        config: Optional[SimConfig] = None,
        registry: Optional[PredicateRegistry] = None,
    ):
        self.config = config or SimConfig()
        self.registry = registry or default_registry()
        self.cache = DataCache()
        self.sessions: dict[str, Session] = {}
        self.engines: dict[str, DeviceEngine] = {}
        self.remote_devices: dict[str, dict] = {}  # id -> {"inbox": [task dicts]}
        self._session_counter = 0
        self._lock = threading.Lock()
        # query_id -> device_id -> set of relevant-marked photo ids
        self.feedback: dict[int, dict[str, set[str]]] = {}

    # -- fleet attachment ----------------------------------------------------

    def attach_engine(self, engine: DeviceEngine) -> None:
        self.engines[engine.device_id] = engine

    def register_remote(self, device_id: str) -> None:
        self.remote_devices.setdefault(device_id, {"inbox": []})

    @property
    def device_ids(self) -> list[str]:
        return sorted(set(self.engines) | set(self.remote_devices))

    # -- feedback ------------------------------------------------------------

    def relevant_mark_counts(self, query_id: int) -> dict[str, int]:
        return {d: len(p) for d, p in self.feedback.get(query_id, {}).items() if p}

    def mark_feedback(self, session_id: str, photo_id: str, device_id: str, relevant: bool) -> dict:
        session = self._session(session_id)
        record = next(
            (
                r
                for r in session.records
                if r.photo_id == photo_id and r.device_id == device_id
            ),
            None,
        )
        if record is None:
            raise UnknownRecord(f"no result for ({device_id}, {photo_id}) in {session_id}")
        record.relevance_mark = "relevant" if relevant else "irrelevant"
        marks = self.feedback.setdefault(session.query.id, {}).setdefault(device_id, set())
        if relevant:
            marks.add(photo_id)
        else:
            marks.discard(photo_id)
        return {"ok": True, "relevance_mark": record.relevance_mark}

    # -- partition agent -----------------------------------------------------

    def partition_agent_evaluate(
        self,
        query: QuerySpec,
        device_id: str,
        photo: Photo,
        predicate_keys: Sequence[str],
        ppm: Optional[bytes] = None,
    ) -> RemoteVerdict:
        """Evaluate the offloaded tail of a pipeline; cache the photo either way."""
        pipeline = conjunctive_pipeline(query)
        if pipeline is None:
            raise ValueError("partition agent only evaluates conjunctive pipelines")
        keys = pipeline_keys(pipeline)
        by_key = dict(zip(keys, pipeline))
        unknown = [k for k in predicate_keys if k not in by_key]
        if unknown:
            raise KeyError(f"predicates not in query: {unknown}")
        self.cache.insert_if_absent(device_id, photo.id, ppm if ppm is not None else encode_ppm(photo.pixels))
        verdicts = {}
        accepted = True
        for key in predicate_keys:
            v = evaluate_leaf(by_key[key], photo, self.registry)
            verdicts[key] = v
            if not v.accepted:
                accepted = False
                break
        return RemoteVerdict(accepted=accepted, verdicts=verdicts)

    # -- session lifecycle ---------------------------------------------------

    def _session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def create_session(
        self,
        query: QuerySpec | str,
        budget: int,
        seed: int,
        strategy: str = "partitioned",
    ) -> Session:
        if isinstance(query, str):
            query = parse_query(query, self.registry)
        findings = validate(query, self.registry)
        if findings:
            raise ValueError(
                "query failed validation: "
                + "; ".join(f"{f.path}: {f.reason}" for f in findings)
            )
        cost = self.config.cost_model
        n, share = allocate_budget(
            budget, len(self.device_ids), cost, self.config.flat_fraction
        )
        rng = random.Random(derive_seed(seed, "select", query.id))
        devices = select_devices(n, self.device_ids, self.relevant_mark_counts(query.id), rng)
        with self._lock:
            self._session_counter += 1
            session_id = f"s{self._session_counter:06d}"
        session = Session(
            session_id=session_id,
            query=query,
            budget=budget,
            seed=seed,
            strategy=strategy,
            devices=devices,
            slots={d: _DeviceSlot(share=share, share_remaining=share) for d in devices},
        )
        self.sessions[session_id] = session
        return session

    def cache_first_search(
        self, session: Session, device_id: str, searched_ids: set[str]
    ) -> list[str]:
        """Evaluate the query on this device's cached photos before the device runs.

        Cache evaluations are free (no per-photo charge, no device energy);
        accepted photos become results and pay the per-result charge from the
        device's share. Returns the ids evaluated so the device can exclude
        them from its own selection.
        """
        slot = session.slots[device_id]
        cost = self.config.cost_model
        evaluated: list[str] = []
        for photo_id in self.cache.photos_for(device_id):
            if photo_id in searched_ids:
                continue
            if slot.share_remaining - cost.flat_per_device < cost.per_result:
                break
            ppm = self.cache.get(device_id, photo_id)
            photo = Photo(id=photo_id, pixels=decode_ppm(ppm), nbytes=len(ppm))
            verdict = evaluate_query(session.query, photo, self.registry)
            evaluated.append(photo_id)
            slot.cache_evaluated += 1
            if verdict.accepted:
                slot.share_remaining -= cost.per_result
                slot.charge_results += cost.per_result
                session.append_record(
                    ResultRecord(
                        session_id=session.session_id,
                        device_id=device_id,
                        photo_id=photo_id,
                        score=verdict.score,
                        predicate_scores={
                            k: v.score for k, v in verdict.leaf_verdicts.items()
                        },
                        arrival_index=-1,
                        virtual_ts_ms=0.0,
                        from_cache=True,
                    )
                )
        return evaluated

    def start_device(self, session_id: str, device_id: str, searched_ids: set[str]) -> dict:
        """Handshake before a device runs its task: cache phase + share left."""
        session = self._session(session_id)
        if device_id not in session.slots:
            raise KeyError(f"device {device_id} not selected for {session_id}")
        slot = session.slots[device_id]
        cache_ids = self.cache_first_search(session, device_id, searched_ids)
        slot.started = True
        return {
            "cache_searched": cache_ids,
            "share_remaining": slot.share_remaining,
            "seed": derive_seed(session.seed, device_id, session.query.id),
            "strategy": session.strategy,
        }

    def record_result(self, result: DeviceResult, ppm: Optional[bytes] = None) -> ResultRecord:
        session = self._session(result.session_id)
        if ppm is not None:
            self.cache.insert_if_absent(result.device_id, result.photo_id, ppm)
        return session.append_record(
            ResultRecord(
                session_id=result.session_id,
                device_id=result.device_id,
                photo_id=result.photo_id,
                score=result.score,
                predicate_scores=result.predicate_scores,
                arrival_index=-1,
                virtual_ts_ms=result.virtual_ts_ms,
            )
        )

    def record_summary(self, session_id: str, device_id: str, summary: dict) -> None:
        """Fold one device's task summary into the session; completes it when last."""
        session = self._session(session_id)
        slot = session.slots[device_id]
        slot.charge_flat += int(summary["charge_flat"])
        slot.charge_photos += int(summary["charge_photos"])
        slot.charge_results += int(summary["charge_results"])
        slot.photos_searched += int(summary["photos_searched"])
        slot.share_remaining -= (
            int(summary["charge_flat"])
            + int(summary["charge_photos"])
            + int(summary["charge_results"])
        )
        for key, st in summary.get("predicate_stats", {}).items():
            agg = session.selectivity_samples.setdefault(key, [0, 0])
            agg[0] += int(st["samples"])
            agg[1] += int(st["accepts"])
        session.max_device_elapsed_ms = max(
            session.max_device_elapsed_ms, float(summary.get("elapsed_ms", 0.0))
        )
        slot.done = True
        if all(s.done for s in session.slots.values()):
            self._complete(session)

    def _complete(self, session: Session) -> None:
        selectivity = {
            key: (acc / samples if samples else 0.0)
            for key, (samples, acc) in sorted(session.selectivity_samples.items())
        }
        elapsed = max([r.virtual_ts_ms for r in session.records], default=0.0)
        elapsed = max(elapsed, session.max_device_elapsed_ms)
        with session.lock:
            completion = CompletionRecord(
                session_id=session.session_id,
                arrival_index=len(session.records),
                photos_searched=session.photos_searched,
                devices_searched=len(session.devices),
                cache_evaluated=sum(s.cache_evaluated for s in session.slots.values()),
                results=len(session.records),
                total_charge=session.total_charge,
                budget=session.budget,
                devices=list(session.devices),
                selectivity=selectivity,
                elapsed_virtual_ms=elapsed,
            )
            session.completion = completion
            session.status = "complete"

    # -- synchronous in-process execution -------------------------------------

    def submit(
        self,
        query: QuerySpec | str,
        budget: int,
        seed: int,
        strategy: str = "partitioned",
        photo_hooks: Optional[dict[str, Callable]] = None,
        wall_clock_scale: float = 0.0,
    ) -> Session:
        """Run one submission over the attached in-process fleet.

        Default mode executes devices sequentially, each on its own virtual
        clock, and merges their result streams by virtual timestamp, which
        models the fleet running in parallel. With `wall_clock_scale` > 0
        devices run on real threads paced to that many wall seconds per
        virtual millisecond and records arrive live.
        """
        session = self.create_session(query, budget, seed, strategy)
        self.run_session(session, photo_hooks=photo_hooks, wall_clock_scale=wall_clock_scale)
        return session

    def run_session(
        self,
        session: Session,
        photo_hooks: Optional[dict[str, Callable]] = None,
        wall_clock_scale: float = 0.0,
    ) -> Session:
        """Execute an already-created session over the in-process fleet."""
        if wall_clock_scale > 0.0:
            return self._run_paced(session, wall_clock_scale)
        transport = InProcessTransport(self)
        staged: list[tuple[float, int, str, DeviceResult, bytes]] = []
        summaries = []
        for device_id in session.devices:
            if device_id not in self.engines:
                continue
            engine = self.engines[device_id]
            start = self.start_device(session.session_id, device_id, engine.searched_ids(session.query.id))
            engine.mark_cache_searched(session.query.id, start["cache_searched"])
            task = SearchTask(
                session_id=session.session_id,
                query=session.query,
                budget_share=start["share_remaining"],
                seed=start["seed"],
                cost_model=self.config.cost_model,
                strategy=session.strategy,
            )
            clock_base = engine.clock_ms
            order = [0]

            def sink(result: DeviceResult, _order=order, _engine=engine, _base=clock_base) -> None:
                _order[0] += 1
                rel_ts = result.virtual_ts_ms - _base
                ppm = encode_ppm(_engine.corpus.load(result.photo_id).pixels)
                staged.append((rel_ts, _order[0], result.device_id, result, ppm))

            hook = (photo_hooks or {}).get(device_id)
            summary = engine.run_task(task, sink, transport=transport, photo_hook=hook)
            summaries.append(summary)
        # merge device streams by virtual time: the fleet runs in parallel
        staged.sort(key=lambda item: (item[0], item[2], item[1]))
        for rel_ts, _, _, result, ppm in staged:
            self.record_result(
                DeviceResult(
                    session_id=result.session_id,
                    device_id=result.device_id,
                    photo_id=result.photo_id,
                    score=result.score,
                    predicate_scores=result.predicate_scores,
                    virtual_ts_ms=rel_ts,
                ),
                ppm=ppm,
            )
        session.device_summaries = summaries
        for summary in summaries:
            self.record_summary(
                session.session_id,
                summary.device_id,
                {
                    "charge_flat": summary.charge_flat,
                    "charge_photos": summary.charge_photos,
                    "charge_results": summary.charge_results,
                    "photos_searched": summary.photos_searched,
                    "predicate_stats": summary.predicate_stats,
                    "elapsed_ms": summary.clock_end_ms - summary.clock_start_ms,
                },
            )
        return session

    def dispatch_session(self, session: Session, wall_clock_scale: float = 0.0) -> None:
        """Queue tasks for remote devices, then run any in-process ones."""
        for device_id in session.devices:
            if device_id in self.engines:
                continue
            self.remote_devices.setdefault(device_id, {"inbox": []})["inbox"].append(
                {
                    "session_id": session.session_id,
                    "query_xml": serialize_query(session.query),
                    "query_id": session.query.id,
                    "strategy": session.strategy,
                }
            )
        if any(d in self.engines for d in session.devices):
            self.run_session(session, wall_clock_scale=wall_clock_scale)

    def _run_paced(self, session: Session, scale: float) -> Session:
        transport = InProcessTransport(self)
        summaries: dict[str, object] = {}

        def run_one(device_id: str) -> None:
            engine = self.engines[device_id]
            start = self.start_device(
                session.session_id, device_id, engine.searched_ids(session.query.id)
            )
            engine.mark_cache_searched(session.query.id, start["cache_searched"])
            task = SearchTask(
                session_id=session.session_id,
                query=session.query,
                budget_share=start["share_remaining"],
                seed=start["seed"],
                cost_model=self.config.cost_model,
                strategy=session.strategy,
            )

            def sink(result: DeviceResult) -> None:
                ppm = encode_ppm(engine.corpus.load(result.photo_id).pixels)
                self.record_result(result, ppm=ppm)

            summaries[device_id] = engine.run_task(
                task, sink, transport=transport, pace_scale=scale
            )

        threads = [
            threading.Thread(target=run_one, args=(d,), daemon=True)
            for d in session.devices
            if d in self.engines
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for device_id in session.devices:
            if device_id not in summaries:
                continue
            summary = summaries[device_id]
            session.device_summaries.append(summary)
            self.record_summary(
                session.session_id,
                device_id,
                {
                    "charge_flat": summary.charge_flat,
                    "charge_photos": summary.charge_photos,
                    "charge_results": summary.charge_results,
                    "photos_searched": summary.photos_searched,
                    "predicate_stats": summary.predicate_stats,
                    "elapsed_ms": summary.clock_end_ms - summary.clock_start_ms,
                },
            )
        return session

    # -- result stream ---------------------------------------------------------

    def stream_results(self, session_id: str, cursor: int = 0) -> tuple[list[str], int, str]:
        return self._session(session_id).stream_lines(cursor)


class InProcessTransport:
    """Offload transport that calls the partition agent directly."""

    def __init__(self, server: TheiaServer, fail: bool = False):
        self.server = server
        self.fail = fail

    def evaluate_remote(self, session_id, query, device_id, photo, predicate_keys):
        if self.fail:
            from theia.device import TransportError

            raise TransportError("injected transport failure")
        return self.server.partition_agent_evaluate(query, device_id, photo, predicate_keys)

"""Deterministic virtual-time execution engine for multi-party training.

Party workers run over a discrete-event queue: each iteration reads peer
snapshots at its start time and commits its block update after a simulated
compute+communication delay.  A bounded-staleness gate parks readers whose
local iteration would run more than ``tau_bound`` iterations ahead of any
peer; synchronous mode is exactly that gate with bound zero, which makes
every round a barriered Jacobi sweep.  OS threads never decide ordering,
so identical configurations replay bit-identically.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .aggregation import TreeTopology, build_tree, distinct_tree, masked_aggregate
from .algorithms import AlgoConfig, DivergenceError, PartyWorker
from .data import PartyShard
from .objective import full_objective


class SimulationComplete(Exception):
    pass


@dataclass(order=True)
class Event:
    time: float
    party_id: int
    seq: int
    kind: str = field(compare=False)  # "step" | "commit" | "refresh-commit"
    payload: object = field(compare=False, default=None)


class EventQueue:
    """Min-heap over (virtual time, party id, push sequence)."""

    def __init__(self):
        self._heap: list[Event] = []
        self._seq = 0

    def push(self, time: float, party_id: int, kind: str, payload=None):
        heapq.heappush(self._heap, Event(time, party_id, self._seq, kind, payload))
        self._seq += 1

    def pop(self) -> Event | None:
        """Next event in virtual-time order; None signals completion."""
        if not self._heap:
            return None
        return heapq.heappop(self._heap)

    def __len__(self):
        return len(self._heap)


def virtual_time_advance(queue: EventQueue) -> Event | None:
    """Pop the minimum-virtual-time event (ties: lower party id, then
    earlier scheduling order)."""
    return queue.pop()


@dataclass
class SchedulerConfig:
    """Execution-model knobs: mode, staleness bound, speeds, latency."""

    mode: str = "async"            # async | sync
    seed: int = 0
    straggler_profile: object = None  # None -> all 1.0; float -> party 0 slowed
    tau_bound: int | None = None   # max local-iteration lead over any peer
    alpha_lat: float = 50e-6       # seconds per message
    beta_bw: float = 1e-9          # seconds per byte
    flop_time: float = 1e-8        # seconds per multiplication
    record_every: int | None = None  # commits between records; default q
    mask_mode: str = "uniform"

    def __post_init__(self):
        if self.mode not in ("async", "sync"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.tau_bound is not None and self.tau_bound < 0:
            raise ValueError("tau_bound must be >= 0")
        for name in ("alpha_lat", "beta_bw", "flop_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def speeds(self, q: int) -> np.ndarray:
        prof = self.straggler_profile
        if prof is None:
            s = np.ones(q)
        elif np.isscalar(prof):
            s = np.ones(q)
            s[0] = float(prof)
        else:
            s = np.asarray(prof, dtype=np.float64)
            if s.shape != (q,):
                raise ValueError(f"straggler profile must have length {q}")
        if np.any(s <= 0) or np.any(s > 1):
            raise ValueError("speed factors must lie in (0, 1]")
        return s

    def effective_tau(self) -> int | None:
        return 0 if self.mode == "sync" else self.tau_bound


@dataclass
class GlobalClock:
    t: int = 0                     # total committed block updates
    per_party_k: list[int] = field(default_factory=list)


@dataclass
class RunRecord:
    t: int
    comm_rounds: int
    messages: int
    bytes: int
    sim_comm_time: float
    sim_compute_time: float
    wall_time: float
    objective: float


CSV_HEADER = "t,comm_rounds,messages,bytes,sim_comm_time_s,sim_compute_time_s,objective"


@dataclass
class CostLedger:
    """Cumulative communication / computation counters for one run."""

    comm_rounds: int = 0   # scalar aggregations (one per theta_i)
    traversals: int = 0    # tree round trips (one per batch aggregation)
    messages: int = 0      # logical scalar payload hops
    bytes: int = 0
    sim_comm_time: float = 0.0   # summed over parties
    sim_compute_time: float = 0.0


@dataclass
class TrainRun:
    """Time-stamped training trace plus the final shards."""

    records: list[RunRecord]
    shards: list[PartyShard]
    ledger: CostLedger
    clock: GlobalClock
    per_party_compute: np.ndarray
    per_party_comm: np.ndarray
    max_staleness: int
    wall_time: float
    budget: int
    mode: str
    diverged: bool = False

    @property
    def final_objective(self) -> float:
        return self.records[-1].objective

    @property
    def q(self) -> int:
        return len(self.shards)

    def comm_time_mean(self) -> float:
        return float(self.per_party_comm.sum() / self.q)

    def compute_time(self) -> float:
        """CT2-style compute time: virtual wall minus mean communication."""
        return self.wall_time - self.comm_time_mean()

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.t},{r.comm_rounds},{r.messages},{r.bytes},"
                f"{r.sim_comm_time:.17g},{r.sim_compute_time:.17g},"
                f"{r.objective:.17g}"
            )
        return "\n".join(lines) + "\n"


class Simulator:
    """Drives q PartyWorkers over the event queue until budget or target."""

    def __init__(
        self,
        shards: list[PartyShard],
        algo: AlgoConfig,
        sched: SchedulerConfig,
    ):
        if not shards:
            raise ValueError("no shards")
        n = shards[0].n
        if any(s.n != n for s in shards):
            raise ValueError("shards disagree on sample count")
        self.shards = shards
        self.algo = algo
        self.sched = sched
        self.n = n
        self.q = len(shards)
        self.speeds = sched.speeds(self.q)
        self.tau = sched.effective_tau()
        self.workers = [PartyWorker(s, algo, n) for s in shards]
        self.mask_rng = np.random.default_rng([sched.seed, 90001])
        self.t1 = build_tree(self.q, seed=[sched.seed, 11])
        self.t2 = distinct_tree(self.t1, seed=[sched.seed, 13])
        self.ledger = CostLedger()
        self.clock = GlobalClock(t=0, per_party_k=[0] * self.q)
        self.party_comm = np.zeros(self.q)
        self.party_compute = np.zeros(self.q)
        self.max_staleness = 0
        self.anchor_theta_cache: dict[int, np.ndarray] = {}

    # -- peer snapshots ----------------------------------------------------

    def snapshot_peer_components(
        self, requesting_party: int, sample_indices: np.ndarray
    ) -> tuple[np.ndarray, list[int]]:
        """Every party's predictor components for the given samples, from
        each party's current (possibly mid-training) block, plus each
        party's local iteration count as the staleness tag."""
        comps = np.empty((self.q, len(sample_indices)))
        tags = []
        for pid, shard in enumerate(self.shards):
            comps[pid] = shard.local_features[sample_indices] @ shard.w_block
            tags.append(self.clock.per_party_k[pid])
        return comps, tags

    def _aggregate(self, comps: np.ndarray) -> tuple[np.ndarray, int, float]:
        """Masked tree aggregation; returns (theta, scalar count, comm secs)."""
        theta, transcript = masked_aggregate(
            comps, self.t1, self.t2, self.mask_rng, mask_mode=self.sched.mask_mode
        )
        batch = comps.shape[1]
        comm_time = 2 * (self.q - 1) * (
            self.sched.alpha_lat + self.sched.beta_bw * 8.0 * batch
        )
        self._pending_transcript = transcript
        return np.atleast_1d(theta), batch, comm_time

    # -- main loop ----------------------------------------------------------

    def run(self, budget: int | None = None, target: float | None = None) -> TrainRun:
        budget = budget if budget is not None else 21 * self.n
        record_every = self.sched.record_every or self.q
        records: list[RunRecord] = []
        queue = EventQueue()
        parked: list[int] = []
        scheduled = [False] * self.q
        done = False

        def snapshot_record(wall: float) -> RunRecord:
            comm_mean = float(self.party_comm.sum() / self.q)
            # a diverged model may overflow here; the record check below
            # turns the resulting non-finite objective into DivergenceError
            with np.errstate(over="ignore", invalid="ignore"):
                obj = full_objective(self.shards, self.algo.lam)
            return RunRecord(
                t=self.clock.t,
                comm_rounds=self.ledger.comm_rounds,
                messages=self.ledger.messages,
                bytes=self.ledger.bytes,
                sim_comm_time=comm_mean,
                sim_compute_time=wall - comm_mean,
                wall_time=wall,
                objective=obj,
            )

        records.append(snapshot_record(0.0))
        if target is not None and records[0].objective <= target:
            return self._finish(records, 0.0, budget)

        for pid in range(self.q):
            queue.push(0.0, pid, "step")
            scheduled[pid] = True

        wall = 0.0
        while True:
            ev = virtual_time_advance(queue)
            if ev is None or done:
                break
            wall = ev.time
            pid = ev.party_id
            worker = self.workers[pid]

            if ev.kind == "step":
                scheduled[pid] = False
                if done:
                    continue
                if self.tau is not None:
                    peer_ks = [
                        self.clock.per_party_k[j] for j in range(self.q) if j != pid
                    ]
                    if peer_ks and min(peer_ks) < worker.local_k - self.tau:
                        parked.append(pid)
                        continue
                self._execute_read(worker, pid, ev.time, queue)
                continue

            # commit events
            kind, payload = ev.kind, ev.payload
            if kind == "commit":
                delta, counters = payload
                worker.shard.w_block += delta
                self.clock.per_party_k[pid] += 1
                self.clock.t += 1
                self._charge(pid, counters)
                should_record = (
                    self.clock.t % record_every == 0 or self.clock.t >= budget
                )
                if should_record:
                    rec = snapshot_record(ev.time)
                    records.append(rec)
                    if not np.isfinite(rec.objective):
                        raise DivergenceError(
                            "objective diverged",
                            last_record=records[-2] if len(records) > 1 else None,
                            train_run=self._finish(records[:-1], wall, budget, diverged=True),
                        )
                    if target is not None and rec.objective <= target:
                        done = True
                if self.clock.t >= budget:
                    done = True
            elif kind == "refresh-commit":
                counters = payload
                self._charge(pid, counters)
            else:
                raise RuntimeError(f"unknown event kind {kind!r}")

            if done:
                break
            # release parked readers and reschedule this party
            if not scheduled[pid]:
                queue.push(ev.time, pid, "step")
                scheduled[pid] = True
            still_parked = []
            for other in parked:
                if not scheduled[other]:
                    queue.push(ev.time, other, "step")
                    scheduled[other] = True
                else:
                    still_parked.append(other)
            parked = still_parked

        return self._finish(records, wall, budget)

    def _execute_read(self, worker: PartyWorker, pid: int, now: float, queue: EventQueue):
        if worker.wants_refresh():
            comps, _tags = self.snapshot_peer_components(pid, np.arange(self.n))
            theta, scalars, comm_time = self._aggregate(comps)
            mults = worker.do_refresh(theta)
            compute_time = mults * self.sched.flop_time / self.speeds[pid]
            counters = dict(
                comm_rounds=scalars,
                traversals=1,
                messages=self._pending_transcript.message_count,
                bytes=self._pending_transcript.byte_count,
                comm_time=comm_time,
                compute_time=compute_time,
            )
            queue.push(now + compute_time + comm_time, pid, "refresh-commit", counters)
            return

        batch = worker.sample_batch()
        comps, tags = self.snapshot_peer_components(pid, batch)
        staleness = max(0, worker.local_k - min(tags))
        self.max_staleness = max(self.max_staleness, staleness)
        theta, scalars, comm_time = self._aggregate(comps)
        delta = worker.do_step(theta, batch)
        compute_time = worker.step_cost() * self.sched.flop_time / self.speeds[pid]
        counters = dict(
            comm_rounds=scalars,
            traversals=1,
            messages=self._pending_transcript.message_count,
            bytes=self._pending_transcript.byte_count,
            comm_time=comm_time,
            compute_time=compute_time,
        )
        queue.push(now + compute_time + comm_time, pid, "commit", (delta, counters))

    def _charge(self, pid: int, counters: dict):
        self.ledger.comm_rounds += counters["comm_rounds"]
        self.ledger.traversals += counters["traversals"]
        self.ledger.messages += counters["messages"]
        self.ledger.bytes += counters["bytes"]
        self.ledger.sim_comm_time += counters["comm_time"]
        self.ledger.sim_compute_time += counters["compute_time"]
        self.party_comm[pid] += counters["comm_time"]
        self.party_compute[pid] += counters["compute_time"]

    def _finish(self, records, wall, budget, diverged=False) -> TrainRun:
        return TrainRun(
            records=records,
            shards=self.shards,
            ledger=self.ledger,
            clock=self.clock,
            per_party_compute=self.party_compute.copy(),
            per_party_comm=self.party_comm.copy(),
            max_staleness=self.max_staleness,
            wall_time=wall,
            budget=budget,
            mode=self.sched.mode,
            diverged=diverged,
        )


def run(
    shards: list[PartyShard],
    algo: AlgoConfig,
    sched: SchedulerConfig,
    budget: int | None = None,
    target: float | None = None,
) -> TrainRun:
    """Train the shards in place and return the instrumented trace."""
    return Simulator(shards, algo, sched).run(budget=budget, target=target)

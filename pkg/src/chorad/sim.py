"""Deterministic simulation of a projected application.

One process hosts every role executor; a seeded scheduler picks which ready
task advances next, so a (program, config, seed) triple always produces the
identical run — same trace hash, same final stores, same message tallies.
Function calls and adaptation lookups are serviced synchronously in the
step that issues them, which keeps them inside the deterministic order.

Besides single seeded runs, the module can exhaustively enumerate schedules
for small applications by replaying choice prefixes (generators cannot be
snapshotted, so paths are re-run from the start; fine at the sizes where
exhaustion is feasible at all).

The simulator reports, never judges: callers decide whether a deadlock is a
bug or the expected outcome of a negative test.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Union

from .adapt import AdaptationManager
from .ast import Program, Value
from .project import ProjectedApp, project
from .runtime import (
    KIND_MSG,
    KIND_ACK,
    INPUT_FUNCTION,
    Message,
    RoleExecutor,
    classify_message,
)
from .services import FunctionTable, ServiceError

log = logging.getLogger("chorad.sim")

TERMINATED = "terminated"
DEADLOCK = "deadlock"
STEP_LIMIT = "stepLimit"
ERROR = "error"


@dataclass(frozen=True)
class TimelineEvent:
    """Something the outside world does while the run is in flight.

    Fires immediately before the scheduler picks the task for step
    ``at_step`` (0-based count of completed steps).
    """

    at_step: int
    kind: str  # "publish" | "env"
    server: str = "s0"
    source: str = ""
    key: str = ""
    value: Value = 0


@dataclass
class SimConfig:
    seed: int = 0
    max_steps: int = 500_000
    inputs: dict[str, list[Value]] = field(default_factory=dict)
    services_factory: Callable[[], dict[str, FunctionTable]] | None = None
    manager_factory: Callable[[], AdaptationManager] | None = None
    timeline: list[TimelineEvent] = field(default_factory=list)
    collect_trace: bool = False
    hash_trace: bool = True  # exploration turns this off; it only needs outcomes


@dataclass
class SimReport:
    outcome: str
    steps: int
    final_states: dict[str, dict[str, Value]]
    message_counts: dict[str, int]
    trace_hash: str
    trace: list[str] | None
    applied_rules: list[tuple[str, str]]
    op_ledger: dict[str, dict[str, int]]
    leaks: list[str]
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == TERMINATED and not self.leaks


Target = Union[Program, ProjectedApp]


def _as_app(target: Target) -> ProjectedApp:
    if isinstance(target, ProjectedApp):
        return target
    return project(target)


class _World:
    """One run's mutable state; built fresh for every (re)execution."""

    def __init__(self, app: ProjectedApp, config: SimConfig):
        self.app = app
        self.config = config
        self.executors: dict[str, RoleExecutor] = {}
        roles = app.roles
        for role in roles:
            ex = RoleExecutor(role, app.per_role[role], starter=app.starter,
                              roles=roles, address=role,
                              includes=app.includes)
            ex.start()
            self.executors[role] = ex
        self.inputs = {r: list(v) for r, v in config.inputs.items()}
        self.services = config.services_factory() if config.services_factory else {}
        self.manager = config.manager_factory() if config.manager_factory else None
        self._warned_no_manager = False
        self.timeline = sorted(config.timeline, key=lambda e: e.at_step)
        self._timeline_pos = 0
        self.steps = 0
        self.counts: Counter[str] = Counter()
        self.op_ledger: dict[str, dict[str, int]] = {}
        self.applied: list[tuple[str, str]] = []
        self.trace: list[str] | None = [] if config.collect_trace else None
        self._hashing = config.hash_trace or config.collect_trace
        self._hash = hashlib.sha256()
        self.failure: str | None = None

    # -- bookkeeping ---------------------------------------------------------

    def _note(self, line: str) -> None:
        if not self._hashing:
            return
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        if self.trace is not None:
            self.trace.append(line)

    def _count_message(self, msg: Message) -> None:
        self.counts[classify_message(msg)] += 1
        if msg.kind == KIND_MSG:
            entry = self.op_ledger.setdefault(msg.op, {"sent": 0, "acked": 0})
            entry["sent"] += 1
        elif msg.kind == KIND_ACK:
            entry = self.op_ledger.setdefault(msg.op, {"sent": 0, "acked": 0})
            entry["acked"] += 1

    # -- timeline ------------------------------------------------------------

    def fire_due_events(self) -> None:
        while (self._timeline_pos < len(self.timeline)
               and self.timeline[self._timeline_pos].at_step <= self.steps):
            ev = self.timeline[self._timeline_pos]
            self._timeline_pos += 1
            if ev.kind == "publish":
                self._publish(ev)
            elif ev.kind == "env":
                if self.manager is not None:
                    self.manager.env.set(ev.key, ev.value)
                self._note(f"@env:{ev.key}={ev.value!r}")
            else:
                raise ValueError(f"unknown timeline event kind {ev.kind!r}")

    def _publish(self, ev: TimelineEvent) -> None:
        if self.manager is None:
            log.warning("timeline publish ignored: no adaptation manager")
            return
        for handle in self.manager.servers():
            if handle.server_id == ev.server:
                violations = handle.publish(ev.source)  # type: ignore[attr-defined]
                bad = [v for v in violations if v.severity == "error"]
                if bad:
                    raise ValueError(
                        f"timeline publish rejected: {bad[0].message}")
                self._note(f"@publish:{ev.server}")
                return
        raise ValueError(f"timeline publish: no server '{ev.server}' registered")

    # -- scheduling ----------------------------------------------------------

    def ready_entries(self) -> list[tuple[str, int]]:
        entries: list[tuple[str, int]] = []
        for role in self.app.roles:
            for tid in self.executors[role].ready_tids():
                entries.append((role, tid))
        return entries

    def advance(self, role: str, tid: int) -> None:
        ex = self.executors[role]
        outcome = ex.step(tid)
        self.steps += 1
        self._note(outcome.trace)
        for msg in outcome.outbound:
            self._count_message(msg)
            target = self.executors.get(msg.to)
            if target is None:
                self.failure = f"{role}: message addressed to unknown role '{msg.to}'"
                return
            target.deliver(msg)
        if outcome.ext is not None:
            self._service(ex, outcome.ext.tid, outcome.ext.kind, outcome.ext.payload)
        if ex.failure and self.failure is None:
            self.failure = f"{role}: {ex.failure}"

    # -- out-of-band requests --------------------------------------------------

    def _service(self, ex: RoleExecutor, tid: int, kind: str, payload) -> None:
        if kind == "call":
            fn, args = payload
            self._service_call(ex, tid, fn, list(args))
        elif kind == "match":
            (request,) = payload
            self._service_match(ex, tid, request)
        else:
            ex.fail_ext(tid, f"unknown request kind '{kind}'")

    def _service_call(self, ex: RoleExecutor, tid: int, fn: str, args: list) -> None:
        if fn == INPUT_FUNCTION:
            queue = self.inputs.get(ex.role)
            if not queue:
                ex.fail_ext(tid, f"no input left for role '{ex.role}'")
                return
            ex.complete_ext(tid, queue.pop(0))
            return
        try:
            address, _proto = ex.includes[fn]
        except KeyError:
            ex.fail_ext(tid, f"function '{fn}' is not included")
            return
        table = self.services.get(address)
        if table is None:
            ex.fail_ext(tid, f"no service at '{address}'")
            return
        self.counts["middleware"] += 2  # request and reply
        try:
            value = table.call(fn, args)
        except ServiceError as exc:
            ex.fail_ext(tid, str(exc))
            return
        ex.complete_ext(tid, value)

    def _service_match(self, ex: RoleExecutor, tid: int, request: dict) -> None:
        if self.manager is None:
            if not self._warned_no_manager:
                log.info("no adaptation manager; scopes run their defaults")
                self._warned_no_manager = True
            ex.complete_ext(tid, {"matched": False})
            return
        self.counts["middleware"] += 2  # request and reply
        response = self.manager.handle_match(request)
        if response.get("matched"):
            self.applied.append((str(request.get("scope")), response.get("rule")))
        ex.complete_ext(tid, response)

    # -- verdicts ---------------------------------------------------------------

    def finish(self, outcome: str, error: str | None = None) -> SimReport:
        leaks: list[str] = []
        if outcome == TERMINATED:
            for role in self.app.roles:
                for key, n in sorted(self.executors[role].pending_by_key().items()):
                    leaks.append(f"{role}: {n} unconsumed {key[0]}/{key[1]} from {key[2]}")
            for op, entry in sorted(self.op_ledger.items()):
                if entry["sent"] != entry["acked"]:
                    leaks.append(
                        f"op '{op}': {entry['sent']} sent but {entry['acked']} acked")
        if outcome == DEADLOCK and error is None:
            stuck = []
            for role in self.app.roles:
                for key in self.executors[role].waiting_keys():
                    stuck.append(f"{role} waits on {key[0]}/{key[1]} from {key[2]}")
            error = "; ".join(stuck) or "no task is ready"
        return SimReport(
            outcome=outcome,
            steps=self.steps,
            final_states={r: self.executors[r].snapshot() for r in self.app.roles},
            message_counts=dict(self.counts),
            trace_hash=self._hash.hexdigest(),
            trace=self.trace,
            applied_rules=self.applied,
            op_ledger=self.op_ledger,
            leaks=leaks,
            error=error,
        )


def _execute(app: ProjectedApp, config: SimConfig,
             choose: Callable[[list[tuple[str, int]]], int | None],
             ) -> tuple[SimReport | None, _World, int]:
    """Run until done or until ``choose`` declines (returns None).

    Returns (report, world, open_choices); report is None iff the chooser
    declined while ``open_choices`` schedules were still available.
    """
    world = _World(app, config)
    while True:
        if world.failure:
            return world.finish(ERROR, world.failure), world, 0
        world.fire_due_events()
        entries = world.ready_entries()
        if not entries:
            if all(world.executors[r].finished() for r in app.roles):
                return world.finish(TERMINATED), world, 0
            return world.finish(DEADLOCK), world, 0
        if world.steps >= config.max_steps:
            return world.finish(STEP_LIMIT, "step budget exhausted"), world, 0
        pick = choose(entries)
        if pick is None:
            return None, world, len(entries)
        role, tid = entries[pick]
        world.advance(role, tid)


def simulate(target: Target, config: SimConfig | None = None) -> SimReport:
    """One seeded, reproducible run."""
    config = config or SimConfig()
    app = _as_app(target)
    rng = random.Random(config.seed)
    report, _world, _open = _execute(app, config,
                                     lambda entries: rng.randrange(len(entries)))
    assert report is not None
    return report


@dataclass
class ExplorationReport:
    paths: int
    outcomes: dict[str, int]
    deadlocks: list[tuple[int, ...]]
    complete: bool
    finals: dict[str, int]

    @property
    def deadlock_free(self) -> bool:
        return self.complete and not self.deadlocks \
            and set(self.outcomes) <= {TERMINATED}

    @property
    def deterministic(self) -> bool:
        """Every explored schedule reached the same final stores."""
        return len(self.finals) <= 1


def explore(target: Target, config: SimConfig | None = None, *,
            max_paths: int = 20_000, reduce: bool = False) -> ExplorationReport:
    """Enumerate schedules of a (small) application by prefix replay.

    A path is the sequence of indices picked into the ready list at genuine
    decision points.  Paths beyond ``max_paths`` leave ``complete`` False;
    the verdict then only covers the explored portion.

    With ``reduce`` on, steps at *different* roles are treated as commuting
    and only same-role alternatives (parallel branches) fan out.  That is
    sound for outcome questions here because mailbox keys carry the sending
    role — no two roles ever race on one queue — and deadlock (an empty
    ready set) does not depend on the order commuting steps ran in.  Leave
    it off to also exercise the runtime's own independence assumptions.
    """
    config = config or SimConfig()
    if config.hash_trace:
        config = replace(config, hash_trace=False)
    app = _as_app(target)
    outcomes: Counter[str] = Counter()
    finals: Counter[str] = Counter()
    deadlocks: list[tuple[int, ...]] = []
    stack: list[tuple[int, ...]] = [()]
    paths = 0
    complete = True
    while stack:
        if paths >= max_paths:
            complete = False
            break
        prefix = stack.pop()
        cursor = iter(prefix)
        pending = [0]

        def choose(entries: list[tuple[str, int]]) -> int | None:
            if reduce:
                first = entries[0][0]
                sub = [i for i, e in enumerate(entries) if e[0] == first]
            else:
                sub = list(range(len(entries)))
            # Forced moves are not branch points; prefixes record only
            # genuine decisions, which keeps replays short.
            if len(sub) == 1:
                return sub[0]
            k = next(cursor, None)
            if k is None:
                pending[0] = len(sub)
                return None
            return sub[k]

        report, _world, _open = _execute(app, config, choose)
        if report is None:
            # Ran past the prefix: fan out one branch per available choice.
            for i in range(pending[0] - 1, -1, -1):
                stack.append(prefix + (i,))
            continue
        paths += 1
        outcomes[report.outcome] += 1
        if report.outcome == DEADLOCK:
            deadlocks.append(prefix)
        key = json.dumps(report.final_states, sort_keys=True, default=repr)
        finals[key] += 1
    return ExplorationReport(paths=paths, outcomes=dict(outcomes),
                             deadlocks=deadlocks, complete=complete,
                             finals=dict(finals))


def count_categories(report: SimReport, *names: str) -> int:
    return sum(report.message_counts.get(n, 0) for n in names)


def count_overhead(target: Target, config: SimConfig | None = None) -> dict[str, int]:
    """Message counts by category for one run — the adaptation-cost meter."""
    return dict(simulate(target, config).message_counts)


@dataclass
class DeadlockSummary:
    seeds: int
    deadlocks: int
    leaky: int
    outcomes: dict[str, int]
    counterexample: list[str] | None  # trace of the first bad seed, if any

    @property
    def clean(self) -> bool:
        return self.deadlocks == 0 and self.leaky == 0 \
            and set(self.outcomes) <= {TERMINATED}


def explore_deadlocks(target: Target, seeds: int = 1000,
                      base: SimConfig | None = None) -> DeadlockSummary:
    """Sweep `seeds` distinct schedules, counting deadlocks and leaks.

    Any timeline (mid-run publications, env writes) and input scripts ride
    along on ``base``.  The first misbehaving seed is re-run with tracing
    on, so the summary carries a replayable counterexample.
    """
    base = base or SimConfig()
    app = _as_app(target)
    outcomes: Counter[str] = Counter()
    deadlocks = 0
    leaky = 0
    counterexample: list[str] | None = None
    for seed in range(seeds):
        report = simulate(app, replace(base, seed=seed, hash_trace=False))
        outcomes[report.outcome] += 1
        bad = report.outcome == DEADLOCK or bool(report.leaks)
        if report.outcome == DEADLOCK:
            deadlocks += 1
        if report.leaks:
            leaky += 1
        if bad and counterexample is None:
            replay = simulate(app, replace(base, seed=seed, collect_trace=True,
                                           hash_trace=False))
            counterexample = replay.trace
    return DeadlockSummary(seeds=seeds, deadlocks=deadlocks, leaky=leaky,
                           outcomes=dict(outcomes), counterexample=counterexample)

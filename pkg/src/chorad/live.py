"""Live execution: role threads, TCP deployments, middleware processes.

The same :class:`~chorad.runtime.RoleExecutor` that powers the simulator
runs here under real concurrency.  Each role is a thread that advances its
executor whenever a task is ready and sleeps on a condition variable
otherwise; message deliveries wake it.  Sends, external calls and
adaptation lookups all happen outside the executor lock, so a slow peer or
service never blocks intake.

Two deployment shapes:

* :func:`run_all` hosts every role of an application in one process with an
  in-memory transport — same code paths, no sockets to clean up.  Services
  and the manager may be in-process objects or remote addresses.
* :func:`run_role` hosts one role behind a TCP listener.  Non-starting
  roles need only the starter's address; everyone learns the full
  role/address map from the readiness barrier.

The middleware halves live here too: :func:`serve_manager`,
:func:`serve_rule_server` and :func:`serve_functions` wrap the in-process
objects behind the line protocol, and the ``Remote*`` classes are the
matching client stubs.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Union

from .adapt import AdaptationManager, AdaptationServer, Environment
from .ast import Program, Value
from .net import (
    DEFAULT_TIMEOUT,
    JsonLineServer,
    NetError,
    request,
    send_line,
    start_server,
)
from .project import ProjectedApp, project
from .runtime import INPUT_FUNCTION, ExtRequest, Message, RoleExecutor
from .services import FunctionTable, ServiceError, handle_call_request

log = logging.getLogger("chorad.live")

ManagerRef = Union[AdaptationManager, str, None]


def _as_app(target: Union[Program, ProjectedApp]) -> ProjectedApp:
    if isinstance(target, ProjectedApp):
        return target
    return project(target)


# =========================================================================
# One live role
# =========================================================================


class _LiveRole:
    """Drives one executor on the calling thread; wakes on deliveries."""

    def __init__(self, executor: RoleExecutor, *,
                 send: Callable[[Message], None],
                 call: Callable[[str, str, list[Value]], Value],
                 match: Callable[[dict], dict],
                 stall_timeout: float):
        self.executor = executor
        self._send = send
        self._call = call
        self._match = match
        self.stall_timeout = stall_timeout
        self.cv = threading.Condition()
        self.error: str | None = None
        self._stop = False

    def deliver(self, msg: Message) -> None:
        with self.cv:
            self.executor.deliver(msg)
            self.cv.notify_all()

    def stop(self, reason: str) -> None:
        with self.cv:
            self._stop = True
            if self.error is None:
                self.error = reason
            self.cv.notify_all()

    def run(self) -> None:
        ex = self.executor
        while True:
            with self.cv:
                while True:
                    if self._stop or ex.failure or ex.finished():
                        break
                    ready = ex.ready_tids()
                    if ready:
                        break
                    if not self.cv.wait(self.stall_timeout):
                        self.error = "stalled: no progress and nothing arrived"
                        return
                if self._stop or ex.failure or ex.finished():
                    if ex.failure and self.error is None:
                        self.error = ex.failure
                    return
                outcome = ex.step(ready[0])
            # Everything below happens outside the lock: peers may deliver
            # to us while we send, call out, or wait on the middleware.
            try:
                for msg in outcome.outbound:
                    self._send(msg)
                if outcome.ext is not None:
                    self._service(outcome.ext)
            except NetError as exc:
                self.stop(str(exc))
                return

    def _service(self, ext: ExtRequest) -> None:
        ex = self.executor
        if ext.kind == "call":
            fn, args = ext.payload
            try:
                value = self._call(ex.role, fn, list(args))
            except ServiceError as exc:
                with self.cv:
                    ex.fail_ext(ext.tid, str(exc))
                    self.cv.notify_all()
                return
            with self.cv:
                ex.complete_ext(ext.tid, value)
                self.cv.notify_all()
        elif ext.kind == "match":
            (req,) = ext.payload
            response = self._match(req)
            with self.cv:
                ex.complete_ext(ext.tid, response)
                self.cv.notify_all()
        else:
            with self.cv:
                ex.fail_ext(ext.tid, f"unknown request kind '{ext.kind}'")
                self.cv.notify_all()


# =========================================================================
# Shared service plumbing
# =========================================================================


class _CallRouter:
    """Answers function calls from scripts, local tables, or the network."""

    def __init__(self, services: dict[str, FunctionTable] | None,
                 inputs: dict[str, list[Value]] | None,
                 input_fn: Callable[[str, list[Value]], Value] | None,
                 timeout: float,
                 dynamic_includes: Callable[[str], dict[str, tuple[str, Any]]]):
        self.services = services or {}
        self.inputs = {r: list(v) for r, v in (inputs or {}).items()}
        self.input_fn = input_fn
        self.timeout = timeout
        self.dynamic_includes = dynamic_includes
        self._lock = threading.Lock()

    def __call__(self, role: str, fn: str, args: list[Value]) -> Value:
        if fn == INPUT_FUNCTION:
            return self._input(role, args)
        includes = self.dynamic_includes(role)
        try:
            address, _proto = includes[fn]
        except KeyError:
            raise ServiceError(f"function '{fn}' is not included") from None
        table = self.services.get(address)
        if table is not None:
            return table.call(fn, args)
        reply = request(address, {"kind": "call", "fn": fn, "args": args},
                        timeout=self.timeout)
        if reply.get("kind") == "result":
            value = reply.get("value")
            if isinstance(value, (int, bool, str)):
                return value
            raise ServiceError(f"'{fn}' answered with a non-value")
        raise ServiceError(str(reply.get("message", f"'{fn}' failed remotely")))

    def _input(self, role: str, args: list[Value]) -> Value:
        with self._lock:
            queue = self.inputs.get(role)
            if queue:
                return queue.pop(0)
        if self.input_fn is not None:
            return self.input_fn(role, args)
        raise ServiceError(f"no input left for role '{role}'")


def _make_matcher(manager: ManagerRef, timeout: float) -> Callable[[dict], dict]:
    warned = [False]

    def match(req: dict) -> dict:
        if manager is None:
            return {"matched": False}
        if isinstance(manager, AdaptationManager):
            return manager.handle_match(req)
        try:
            reply = request(manager, {"kind": "matchReq", "request": req},
                            timeout=timeout)
        except NetError as exc:
            if not warned[0]:
                log.warning("adaptation manager unreachable, running defaults: %s",
                            exc)
                warned[0] = True
            return {"matched": False}
        if reply.get("kind") == "matchResp":
            return reply
        return {"matched": False}

    return match


# =========================================================================
# All roles in one process
# =========================================================================


@dataclass
class LiveReport:
    final_states: dict[str, dict[str, Value]]
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def run_all(target: Union[Program, ProjectedApp], *,
            inputs: dict[str, list[Value]] | None = None,
            services: dict[str, FunctionTable] | None = None,
            manager: ManagerRef = None,
            input_fn: Callable[[str, list[Value]], Value] | None = None,
            timeout: float = DEFAULT_TIMEOUT,
            stall_timeout: float = 30.0) -> LiveReport:
    """Run every role of the application as a thread in this process."""
    app = _as_app(target)
    table: dict[str, _LiveRole] = {}

    def send(msg: Message) -> None:
        peer = table.get(msg.to)
        if peer is None:
            raise NetError(f"no role '{msg.to}' in this deployment")
        peer.deliver(msg)

    router = _CallRouter(services, inputs, input_fn, timeout,
                         lambda role: table[role].executor.includes)
    match = _make_matcher(manager, timeout)
    for role in app.roles:
        ex = RoleExecutor(role, app.per_role[role], starter=app.starter,
                          roles=app.roles, address=role, includes=app.includes)
        ex.start()
        table[role] = _LiveRole(ex, send=send, call=router, match=match,
                                stall_timeout=stall_timeout)
    threads = {
        role: threading.Thread(target=live.run, name=f"role-{role}", daemon=True)
        for role, live in table.items()
    }
    for t in threads.values():
        t.start()
    errors: dict[str, str] = {}
    for role, t in threads.items():
        t.join(timeout=stall_timeout * 2)
        if t.is_alive():
            table[role].stop("did not finish in time")
            errors[role] = "did not finish in time"
    for role, live in table.items():
        if live.error and role not in errors:
            errors[role] = live.error
    return LiveReport(
        final_states={r: table[r].executor.snapshot() for r in app.roles},
        errors=errors,
    )


# =========================================================================
# One role over TCP
# =========================================================================


def run_role(target: Union[Program, ProjectedApp], role: str, *,
             address: str,
             starter_address: str | None = None,
             manager: ManagerRef = None,
             services: dict[str, FunctionTable] | None = None,
             inputs: dict[str, list[Value]] | None = None,
             input_fn: Callable[[str, list[Value]], Value] | None = None,
             timeout: float = DEFAULT_TIMEOUT,
             stall_timeout: float = 60.0) -> dict[str, Value]:
    """Host one role behind a TCP listener; blocks until it finishes.

    Returns the role's final variable store; raises ``RuntimeError`` when
    the role fails or stalls.
    """
    app = _as_app(target)
    if role not in app.per_role:
        raise ValueError(f"role '{role}' is not part of this program")
    ex = RoleExecutor(role, app.per_role[role], starter=app.starter,
                      roles=app.roles, includes=app.includes,
                      locations=dict(app.locations))
    if starter_address:
        ex.locations[app.starter] = starter_address

    live: _LiveRole | None = None

    def on_wire(obj: dict) -> dict | None:
        if obj.get("kind") == "ping":
            return {"kind": "pong", "role": role}
        msg = Message(kind=obj.get("kind", ""), op=obj.get("op", ""),
                      frm=obj.get("from", ""), to=obj.get("to", ""),
                      data=obj.get("data"), seq=obj.get("seq", 0))
        assert live is not None
        live.deliver(msg)
        return None

    server = start_server(address, on_wire)
    ex.address = server.address
    ex.start()

    def send(msg: Message) -> None:
        peer = ex.locations.get(msg.to)
        if peer is None:
            raise NetError(f"no known address for role '{msg.to}'")
        send_line(peer, _wire_dict(msg), timeout=timeout)

    router = _CallRouter(services, inputs, input_fn, timeout,
                         lambda _role: ex.includes)
    live = _LiveRole(ex, send=send, call=router,
                     match=_make_matcher(manager, timeout),
                     stall_timeout=stall_timeout)
    try:
        live.run()
    finally:
        server.shutdown()
        server.server_close()
    if live.error:
        raise RuntimeError(f"role '{role}' failed: {live.error}")
    return ex.snapshot()


def _wire_dict(msg: Message) -> dict:
    return {"kind": msg.kind, "op": msg.op, "from": msg.frm, "to": msg.to,
            "data": msg.data, "seq": msg.seq}


# =========================================================================
# Middleware processes
# =========================================================================


class RemoteRuleServer:
    """Manager-side stub for a rule server reached over TCP."""

    def __init__(self, server_id: str, address: str,
                 timeout: float = DEFAULT_TIMEOUT):
        self.server_id = server_id
        self.address = address
        self.timeout = timeout

    def match(self, req: dict, env: dict) -> dict | None:
        reply = request(self.address,
                        {"kind": "matchReq", "request": req, "env": env},
                        timeout=self.timeout)
        if reply.get("kind") == "matchResp" and reply.get("matched"):
            return reply
        return None


def make_manager_handler(manager: AdaptationManager) -> Callable[[dict], dict]:
    def handler(obj: dict) -> dict:
        kind = obj.get("kind")
        if kind == "matchReq":
            result = manager.handle_match(obj.get("request") or {})
            return {"kind": "matchResp", **result}
        if kind == "register":
            addr = obj.get("address", "")
            sid = obj.get("server") or addr
            manager.register(RemoteRuleServer(sid, addr))
            return {"kind": "registered", "server": sid}
        if kind == "envSet":
            manager.env.set(obj["key"], obj["value"])
            return {"kind": "envOk"}
        if kind == "envGet":
            key = obj["key"]
            return {"kind": "envValue", "key": key, "value": manager.env.get(key)}
        if kind == "envSnapshot":
            return {"kind": "envState", "values": manager.env.snapshot()}
        if kind == "ping":
            return {"kind": "pong", "role": "manager"}
        return {"kind": "error", "message": f"unknown request kind {kind!r}"}

    return handler


def make_rule_server_handler(server: AdaptationServer) -> Callable[[dict], dict]:
    def handler(obj: dict) -> dict:
        kind = obj.get("kind")
        if kind == "publish":
            from .parser import ParseError

            before = len(server.rules())
            try:
                violations = server.publish(obj.get("rules", ""))
            except ParseError as exc:
                return {"kind": "error",
                        "diagnostics": [d.render() for d in exc.diagnostics]}
            errors = [v.render() for v in violations if v.severity == "error"]
            warnings = [v.render() for v in violations if v.severity != "error"]
            if errors:
                return {"kind": "error", "diagnostics": errors}
            return {"kind": "published",
                    "rules": len(server.rules()) - before,
                    "warnings": warnings}
        if kind == "matchReq":
            result = server.match(obj.get("request") or {}, obj.get("env") or {})
            return {"kind": "matchResp", **(result or {"matched": False})}
        if kind == "ping":
            return {"kind": "pong", "role": "server"}
        return {"kind": "error", "message": f"unknown request kind {kind!r}"}

    return handler


def serve_manager(address: str,
                  env: dict[str, Value] | None = None
                  ) -> tuple[JsonLineServer, AdaptationManager]:
    manager = AdaptationManager(Environment(env or {}))
    server = start_server(address, make_manager_handler(manager))
    return server, manager


def serve_rule_server(address: str, server_id: str = "s0",
                      manager_address: str | None = None,
                      ) -> tuple[JsonLineServer, AdaptationServer]:
    rules = AdaptationServer(server_id)
    server = start_server(address, make_rule_server_handler(rules))
    if manager_address:
        request(manager_address,
                {"kind": "register", "server": server_id,
                 "address": server.address})
    return server, rules


def serve_functions(address: str, table: FunctionTable) -> JsonLineServer:
    return start_server(address, lambda obj: handle_call_request(table, obj))

"""External function services.

Programs call functions that live outside any role (``include ... from``).
A :class:`FunctionTable` is one service's worth of named behaviours; the
same table backs in-process simulation and the TCP service command, so a
scenario exercised in the simulator talks to byte-identical behaviours when
deployed live.

The behaviours are deliberately small and composable: fixed values, scripted
reply sequences, integer addition, string prefixing, alphabet shifting
(whole strings or single-character successor steps) and shared buffers
(named text buffers, a positional character store) cover every bundled
scenario.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

from .ast import Value
from .runtime import render


class ServiceError(Exception):
    pass


def shift_text(text: str, offset: int) -> str:
    """Shift letters through the alphabet, wrapping; other chars pass through."""
    out = []
    for ch in text:
        if "a" <= ch <= "z":
            out.append(chr((ord(ch) - ord("a") + offset) % 26 + ord("a")))
        elif "A" <= ch <= "Z":
            out.append(chr((ord(ch) - ord("A") + offset) % 26 + ord("A")))
        else:
            out.append(ch)
    return "".join(out)


TIMER_NAMES = ("startTimer", "endTimer", "stopTimer", "start", "end")


class FunctionTable:
    """Named behaviours plus the shared state some of them close over."""

    def __init__(self) -> None:
        self._functions: dict[str, Callable[[list[Value]], Value]] = {}
        self._buffers: dict[str, str] = {}
        self._chars: dict[int, str] = {}
        self._lock = threading.Lock()

    # -- registration ------------------------------------------------------

    def register(self, name: str, fn: Callable[[list[Value]], Value]) -> "FunctionTable":
        self._functions[name] = fn
        return self

    def fixed(self, name: str, value: Value) -> "FunctionTable":
        return self.register(name, lambda args: value)

    def scripted(self, name: str, values: Sequence[Value]) -> "FunctionTable":
        remaining = list(values)

        def fn(args: list[Value]) -> Value:
            with self._lock:
                if not remaining:
                    raise ServiceError(f"'{name}' has no scripted replies left")
                return remaining.pop(0)

        return self.register(name, fn)

    def shifter(self, name: str = "shift") -> "FunctionTable":
        def fn(args: list[Value]) -> Value:
            if len(args) != 2 or not isinstance(args[0], str) \
                    or not isinstance(args[1], int) or isinstance(args[1], bool):
                raise ServiceError(f"'{name}' needs (text, offset)")
            return shift_text(args[0], args[1])

        return self.register(name, fn)

    def successors(self) -> "FunctionTable":
        """Single-character alphabet steps: getNext and getDoubleNext."""
        def step(name: str, offset: int) -> None:
            def fn(args: list[Value]) -> Value:
                if len(args) != 1 or not isinstance(args[0], str) \
                        or len(args[0]) != 1:
                    raise ServiceError(f"'{name}' needs a single character")
                return shift_text(args[0], offset)

            self.register(name, fn)

        step("getNext", 1)
        step("getDoubleNext", 2)
        return self

    def char_buffer(self) -> "FunctionTable":
        """A positional character store: setNthChar / getNthChar."""
        def get_fn(args: list[Value]) -> Value:
            if len(args) != 1 or not isinstance(args[0], int) \
                    or isinstance(args[0], bool):
                raise ServiceError("'getNthChar' needs an index")
            with self._lock:
                try:
                    return self._chars[args[0]]
                except KeyError:
                    raise ServiceError(
                        f"no character at index {args[0]}") from None

        def set_fn(args: list[Value]) -> Value:
            if len(args) != 2 or not isinstance(args[0], int) \
                    or isinstance(args[0], bool) or not isinstance(args[1], str):
                raise ServiceError("'setNthChar' needs (index, char)")
            with self._lock:
                self._chars[args[0]] = args[1]
            return args[1]

        self.register("getNthChar", get_fn)
        return self.register("setNthChar", set_fn)

    def prefixer(self, name: str, prefix: str) -> "FunctionTable":
        def fn(args: list[Value]) -> Value:
            if len(args) != 1:
                raise ServiceError(f"'{name}' needs one argument")
            return prefix + render(args[0])

        return self.register(name, fn)

    def adder(self, name: str = "add") -> "FunctionTable":
        def fn(args: list[Value]) -> Value:
            if len(args) != 2 or not all(
                    isinstance(a, int) and not isinstance(a, bool) for a in args):
                raise ServiceError(f"'{name}' needs two integers")
            return args[0] + args[1]

        return self.register(name, fn)

    def buffers(self, get_name: str = "bufferGet",
                set_name: str = "bufferSet") -> "FunctionTable":
        def get_fn(args: list[Value]) -> Value:
            if len(args) != 1:
                raise ServiceError(f"'{get_name}' needs a buffer name")
            with self._lock:
                return self._buffers.get(render(args[0]), "")

        def set_fn(args: list[Value]) -> Value:
            if len(args) != 2:
                raise ServiceError(f"'{set_name}' needs (name, text)")
            value = render(args[1])
            with self._lock:
                self._buffers[render(args[0])] = value
            return value

        self.register(get_name, get_fn)
        return self.register(set_name, set_fn)

    def timers(self) -> "FunctionTable":
        # Measurement hooks from the performance scenarios; they carry no
        # semantics here, so every spelling reports a constant.
        for name in TIMER_NAMES:
            self.fixed(name, 0)
        return self

    # -- use ---------------------------------------------------------------

    def names(self) -> list[str]:
        return sorted(self._functions)

    def call(self, name: str, args: list[Value]) -> Value:
        try:
            fn = self._functions[name]
        except KeyError:
            raise ServiceError(f"no function named '{name}' here") from None
        return fn(list(args))


def handle_call_request(table: FunctionTable, request: dict) -> dict:
    """One request/response exchange of the function-service protocol."""
    if request.get("kind") != "call":
        return {"kind": "error", "message": "expected a call request"}
    fn = request.get("fn")
    args = request.get("args", [])
    if not isinstance(fn, str) or not isinstance(args, list):
        return {"kind": "error", "message": "malformed call request"}
    try:
        value = table.call(fn, args)
    except ServiceError as exc:
        return {"kind": "error", "message": str(exc)}
    except Exception as exc:  # service bugs must surface as protocol errors
        return {"kind": "error", "message": f"{type(exc).__name__}: {exc}"}
    if not isinstance(value, (int, bool, str)):
        return {"kind": "error", "message": f"'{fn}' produced a non-value"}
    return {"kind": "result", "value": value}

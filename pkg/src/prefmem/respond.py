"""Responder adapters: the stand-in for a downstream language model.

The builtin responder verbalizes the category probe.  The external
responder forwards each turn to a subprocess over a line-delimited wire
format and reads one reply line back; every record carries the same four
fields (type, text, soft_prompt, categories).  A handshake must succeed
before the first query, and any protocol failure falls back to the builtin
responder rather than crashing the session.
"""

from __future__ import annotations

import json
import selectors
import shlex
import subprocess

from .errors import PrefmemError


class AdapterError(PrefmemError):
    """External responder violated the wire protocol."""


def wire_record(type_: str, text: str = "", soft_prompt=(),
                categories=()) -> str:
    return json.dumps({"type": type_, "text": text,
                       "soft_prompt": [float(v) for v in soft_prompt],
                       "categories": list(categories)}, ensure_ascii=False)


class BuiltinResponder:
    name = "builtin"

    def respond(self, text: str, soft_prompt, categories, wrote: bool) -> str:
        top_name, top_p = categories[0]["name"], categories[0]["p"]
        if wrote:
            return f"Noted, you prefer {top_name} (p={top_p:.2f})."
        return f"Okay. (no preference detected; leaning {top_name})"

    def close(self) -> None:
        pass


class ExternalResponder:
    """Synchronous request/response over a child process's stdio."""

    name = "external"

    def __init__(self, command: str, timeout: float = 5.0):
        if not command:
            raise AdapterError("external responder needs a command")
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, text=True, bufsize=1)
        except OSError as exc:
            raise AdapterError(f"could not start responder: {exc}") from exc
        self._handshake()

    def _read_line(self) -> str:
        sel = selectors.DefaultSelector()
        sel.register(self.proc.stdout, selectors.EVENT_READ)
        try:
            if not sel.select(self.timeout):
                raise AdapterError(f"responder did not answer within "
                                   f"{self.timeout}s")
        finally:
            sel.close()
        line = self.proc.stdout.readline()
        if not line:
            raise AdapterError("responder closed its output")
        return line

    def _round_trip(self, record: str) -> dict:
        if self.proc.poll() is not None:
            raise AdapterError("responder process exited")
        try:
            self.proc.stdin.write(record + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterError(f"responder pipe failed: {exc}") from exc
        line = self._read_line()
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"responder sent invalid JSON: "
                               f"{exc.msg}") from exc
        if not isinstance(obj, dict) or "type" not in obj:
            raise AdapterError("responder record lacks a type field")
        return obj

    def _handshake(self) -> None:
        obj = self._round_trip(wire_record("handshake", text="prefmem"))
        if obj["type"] != "handshake":
            raise AdapterError(f"expected handshake reply, got "
                               f"{obj['type']!r}")

    def respond(self, text: str, soft_prompt, categories, wrote: bool) -> str:
        obj = self._round_trip(wire_record("query", text=text,
                                           soft_prompt=soft_prompt,
                                           categories=categories))
        if obj["type"] != "response" or not isinstance(obj.get("text"), str):
            raise AdapterError("responder reply is not a response record")
        return obj["text"]

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()


def make_responder(mode: str, command: str | None = None,
                   timeout: float = 5.0):
    """Build the configured responder; external failures surface as
    (BuiltinResponder, warning) rather than an exception."""
    if mode == "builtin":
        return BuiltinResponder(), None
    try:
        return ExternalResponder(command or "", timeout), None
    except AdapterError as exc:
        return BuiltinResponder(), (f"external responder unavailable "
                                    f"({exc}); using builtin responder")

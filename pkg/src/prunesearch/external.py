"""Evaluator that delegates to a child process over line-delimited JSON.

Every message is one UTF-8 JSON object per line on the child's stdin/stdout::

    -> {"id": 0, "type": "hello", "protocol_version": 1}
    <- {"id": 0, "protocol_version": 1}
    -> {"id": 7, "type": "evaluate", "proposal": {"conv1": {"scheme": "filter", "rate": 2.5}, ...}}
    <- {"id": 7, "accuracy": 71.3, "latency_ms": 88.0}
    <- {"id": 7, "error": "out of memory"}

Responses are matched to requests by ``id``.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from typing import Optional, Sequence

from .evaluators import EvaluationError
from .network import PruningProposal

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 3600.0


class ExternalEvaluator:
    kind = "external"

    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT_S, cwd: Optional[str] = None):
        if not command:
            raise ValueError("external evaluator needs a command")
        self.command = list(command)
        self.timeout = timeout
        self.cwd = cwd
        self._proc = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._next_id = 1

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def start(self):
        if self._proc is not None:
            return
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
                cwd=self.cwd,
            )
        except OSError as e:
            raise EvaluationError(f"cannot start evaluator {self.command!r}: {e}") from e
        self._lines = queue.Queue()
        threading.Thread(target=_pump, args=(self._proc.stdout, self._lines), daemon=True).start()
        reply = self._roundtrip({"id": 0, "type": "hello", "protocol_version": PROTOCOL_VERSION}, None)
        if reply.get("protocol_version") != PROTOCOL_VERSION:
            self.close()
            raise EvaluationError(f"handshake failed: unexpected reply {reply!r}")

    def _roundtrip(self, message: dict, index: Optional[int]) -> dict:
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            self.close()
            raise EvaluationError(f"evaluator pipe closed: {e}", index) from e
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close(kill=True)
            raise EvaluationError(f"timed out after {self.timeout:g} s", index) from None
        if line is None:
            self.close()
            raise EvaluationError("evaluator exited", index)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            self.close()
            raise EvaluationError(f"malformed response {line.strip()!r}", index) from None
        if not isinstance(reply, dict) or reply.get("id") != message["id"]:
            self.close()
            raise EvaluationError(f"response id mismatch: {line.strip()!r}", index)
        return reply

    def measure(self, proposals: Sequence[PruningProposal]) -> list[tuple[float, float]]:
        self.start()
        out = []
        for i, p in enumerate(proposals):
            req = {"id": self._next_id, "type": "evaluate", "proposal": p.to_dict()}
            self._next_id += 1
            reply = self._roundtrip(req, i)
            if "error" in reply:
                self.close()
                raise EvaluationError(f"evaluator reported: {reply['error']}", i)
            try:
                acc = float(reply["accuracy"])
                lat = float(reply["latency_ms"])
            except (KeyError, TypeError, ValueError):
                self.close()
                raise EvaluationError(f"malformed response {reply!r}", i) from None
            if lat < 0:
                self.close()
                raise EvaluationError(f"negative latency {lat}", i)
            out.append((acc, lat))
        return out

    def close(self, kill: bool = False):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        if kill:
            proc.kill()
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


def _pump(stream, lines: queue.Queue):
    for line in stream:
        lines.put(line)
    lines.put(None)

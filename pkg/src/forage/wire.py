"""Newline-delimited JSON protocol that lets an external process act as the policy.

Request, one line per decision::

    {"episode_id": ..., "step": ..., "question": ..., "trajectory_text": ...,
     "actions": [{"kind": "search"|"answer", "payload": ...}, ...]}

Response::

    {"action_index": i, "log_prob": optional float}

The peer is either a child process (stdin/stdout) or a TCP server.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import subprocess
import threading
from dataclasses import dataclass
from typing import IO, Any, Sequence

from .env import Action, Chooser, EnvState

DEFAULT_TIMEOUT = 30.0


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyRequest:
    episode_id: str
    step: int
    question: str
    trajectory_text: str
    actions: tuple[Action, ...]

    def to_record(self) -> dict[str, Any]:
        return {
            "episode_id": self.episode_id,
            "step": self.step,
            "question": self.question,
            "trajectory_text": self.trajectory_text,
            "actions": [a.to_record() for a in self.actions],
        }


@dataclass(frozen=True)
class PolicyResponse:
    action_index: int
    log_prob: float | None = None


def encode_request(req: PolicyRequest) -> str:
    return json.dumps(req.to_record(), ensure_ascii=False, separators=(",", ":")) + "\n"


def decode_request(line: str) -> PolicyRequest:
    try:
        rec = json.loads(line)
        return PolicyRequest(
            str(rec["episode_id"]),
            int(rec["step"]),
            rec["question"],
            rec["trajectory_text"],
            tuple(Action.from_record(a) for a in rec["actions"]),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed request: {exc}") from exc


def encode_response(resp: PolicyResponse) -> str:
    rec: dict[str, Any] = {"action_index": resp.action_index}
    if resp.log_prob is not None:
        rec["log_prob"] = resp.log_prob
    return json.dumps(rec) + "\n"


def decode_response(line: str, n_actions: int | None = None) -> PolicyResponse:
    try:
        rec = json.loads(line)
    except ValueError as exc:
        raise ProtocolError(f"malformed response {line.strip()[:80]!r}") from exc
    if not isinstance(rec, dict) or "action_index" not in rec:
        raise ProtocolError("response lacks action_index")
    index = rec["action_index"]
    if isinstance(index, bool) or not isinstance(index, int):
        raise ProtocolError(f"action_index must be an integer, got {index!r}")
    if index < 0 or (n_actions is not None and index >= n_actions):
        raise ProtocolError(f"action_index {index} out of range for {n_actions} actions")
    log_prob = rec.get("log_prob")
    if log_prob is not None:
        if isinstance(log_prob, bool) or not isinstance(log_prob, (int, float)) or not math.isfinite(log_prob):
            raise ProtocolError(f"log_prob must be a finite number, got {log_prob!r}")
        log_prob = float(log_prob)
    return PolicyResponse(index, log_prob)


class _LineReader:
    """Background reader so ``readline`` can time out on pipes and sockets alike."""

    def __init__(self, stream: IO[str]):
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream: IO[str]) -> None:
        try:
            for line in stream:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def readline(self, timeout: float) -> str:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError(f"no response within {timeout:g}s") from None
        if line is None:
            self._lines.put(None)
            raise ProtocolError("peer closed the connection")
        return line


class ExternalPolicy:
    """Client side of the protocol. Use :meth:`spawn` or :meth:`connect`."""

    def __init__(self, writer: IO[str], reader: IO[str], timeout: float = DEFAULT_TIMEOUT, closer=None):
        self._writer = writer
        self._reader = _LineReader(reader)
        self.timeout = timeout
        self._closer = closer
        self._episodes = 0

    @classmethod
    def spawn(cls, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT) -> ExternalPolicy:
        proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, encoding="utf-8", bufsize=1
        )

        def close() -> None:
            # EOF on stdin asks the child to exit; the reader thread then sees EOF too
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=1)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
            proc.stdout.close()

        return cls(proc.stdin, proc.stdout, timeout, close)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> ExternalPolicy:
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        reader = sock.makefile("r", encoding="utf-8")
        writer = sock.makefile("w", encoding="utf-8")

        def close() -> None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            for f in (writer, reader):
                try:
                    f.close()
                except OSError:
                    pass
            sock.close()

        return cls(writer, reader, timeout, close)

    def close(self) -> None:
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self) -> ExternalPolicy:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(self, req: PolicyRequest) -> PolicyResponse:
        try:
            self._writer.write(encode_request(req))
            self._writer.flush()
        except (OSError, ValueError) as exc:
            raise ProtocolError(f"cannot write request: {exc}") from exc
        return decode_response(self._reader.readline(self.timeout), len(req.actions))

    def choose(self, state: EnvState, legal: Sequence[Action]) -> tuple[int, float | None]:
        if state.step == 0:
            self._episodes += 1
        req = PolicyRequest(f"{state.task_id}#{self._episodes}", state.step, state.question, state.trajectory_text, tuple(legal))
        resp = self.request(req)
        return resp.action_index, resp.log_prob

    def chooser(self) -> Chooser:
        def choose(state: EnvState, legal: list[Action]):
            index, log_prob = self.choose(state, legal)
            return index, 0.0 if log_prob is None else log_prob, 0.0, {}

        return choose


def external_policy_roundtrip(policy: ExternalPolicy, state: EnvState, legal: Sequence[Action]) -> Action:
    index, _ = policy.choose(state, legal)
    return legal[index]

"""Per-session run coordination: event fan-out to WebSocket subscribers,
human-input delivery, and the single-active-run lock.

Publishers are engine threads; consumers are async WebSocket handlers. Each
subscriber owns a bounded thread-safe queue (1024 frames); instead of silently
skipping frames on overflow the subscriber is flagged and its connection is
closed with an explicit code.
"""

from __future__ import annotations

import queue
import threading

from agentloom.messages import RunEvent

SUBSCRIBER_BUFFER = 1024

WS_SUBPROTOCOL = "agentloom.v1"
WS_CLOSE_UNKNOWN_SESSION = 4404
WS_CLOSE_OVERFLOW = 4408


class Subscriber:
    def __init__(self):
        self.frames: queue.Queue[str] = queue.Queue(maxsize=SUBSCRIBER_BUFFER)
        self.overflowed = False

    def poll(self, timeout: float = 0.25) -> str | None:
        try:
            return self.frames.get(timeout=timeout)
        except queue.Empty:
            return None


class SessionRuntime:
    """Live, in-process state for one session."""

    def __init__(self):
        self._lock = threading.Lock()
        self._running = False
        self.subscribers: list[Subscriber] = []
        self.input_queue: queue.Queue[str] = queue.Queue()
        self.cancel = threading.Event()

    def begin_run(self) -> bool:
        with self._lock:
            if self._running:
                return False
            self._running = True
        self.cancel.clear()
        # stale inputs from a previous run must not answer a new prompt
        while not self.input_queue.empty():
            try:
                self.input_queue.get_nowait()
            except queue.Empty:
                break
        return True

    def end_run(self) -> None:
        with self._lock:
            self._running = False

    @property
    def running(self) -> bool:
        with self._lock:
            return self._running

    def subscribe(self) -> Subscriber:
        sub = Subscriber()
        with self._lock:
            self.subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscriber) -> None:
        with self._lock:
            if sub in self.subscribers:
                self.subscribers.remove(sub)

    def has_subscribers(self) -> bool:
        with self._lock:
            return bool(self.subscribers)

    def publish(self, event: RunEvent) -> None:
        frame = event.to_frame()
        with self._lock:
            subs = list(self.subscribers)
        for sub in subs:
            try:
                sub.frames.put_nowait(frame)
            except queue.Full:
                sub.overflowed = True


class RunHub:
    """Registry of SessionRuntime objects, one per session id."""

    def __init__(self):
        self._lock = threading.Lock()
        self._sessions: dict[str, SessionRuntime] = {}

    def runtime(self, session_id: str) -> SessionRuntime:
        with self._lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = SessionRuntime()
            return self._sessions[session_id]


class WsInputSource:
    """Human input fed by WebSocket frames; degrades to auto-reply when nobody
    is connected to answer."""

    def __init__(self, runtime: SessionRuntime, on_waiting=None):
        self._runtime = runtime
        self._on_waiting = on_waiting

    @property
    def interactive(self) -> bool:
        return self._runtime.has_subscribers()

    def request(self, prompt) -> str | None:
        from agentloom.engine import RunCancelled

        if self._on_waiting:
            self._on_waiting(True)
        try:
            while True:
                if self._runtime.cancel.is_set():
                    raise RunCancelled()
                try:
                    return self._runtime.input_queue.get(timeout=0.25)
                except queue.Empty:
                    if not self._runtime.has_subscribers():
                        return ""  # everyone disconnected; degrade to auto-reply
        finally:
            if self._on_waiting:
                self._on_waiting(False)

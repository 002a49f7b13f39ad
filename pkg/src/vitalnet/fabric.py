"""Discrete-event body-area radio fabric: registry, TDMA schedule, power ledger.

A virtual clock advances slot by slot through fixed superframes. Slot 0 of
every superframe is the beacon; data slots each belong to at most one node,
so a valid schedule can never collide. Frames are newline-delimited JSON
(version field ``v``), sized to fit one slot at the configured bitrate. The
power ledger charges each node for its sensor and controller continuously and
for the radio only while it transmits in its own slot or listens to beacons,
which is what makes the schedule's duty-cycle bound testable.

``FrameListener`` is the ingest socket equivalent of the radio module's
server: it accepts newline-delimited frames on a TCP port (default 60000) and
survives malformed lines and mid-stream disconnects.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

logger = logging.getLogger(__name__)

WIRE_VERSION = 1
DEFAULT_LISTEN_ADDR = "127.0.0.1"
DEFAULT_LISTEN_PORT = 60000  # radio module's factory default

# Table-driven supply currents, mA
SENSOR_MA = 0.023
CONTROLLER_MA = 40.0
RADIO_MA = 38.0


class FabricError(Exception):
    pass


class CapacityError(FabricError):
    """No free data slot remains in the superframe."""


class ConflictError(FabricError):
    """Duplicate node id at registration."""


class FrameSizeError(FabricError):
    """Encoded frame does not fit one slot at the configured bitrate."""


class WireError(ValueError):
    """Line is not a valid version-1 frame."""


def encode_frame_line(fields: dict) -> str:
    """One frame per line: JSON with sorted keys and a version marker."""
    data = dict(fields)
    data["v"] = WIRE_VERSION
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def decode_frame_line(line: str) -> dict:
    line = line.strip()
    if not line:
        raise WireError("empty line")
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"not valid JSON: {exc}") from None
    if not isinstance(data, dict) or data.get("v") != WIRE_VERSION:
        raise WireError(f"missing or unsupported version field: {line[:60]!r}")
    for key in ("src", "seq", "kind"):
        if key not in data:
            raise WireError(f"frame missing {key!r}")
    return data


@dataclass
class NodeDescriptor:
    node_id: str
    kind: str  # "accel" | "oximeter"
    patient_id: str
    config: dict = field(default_factory=dict)
    assigned_slot: int | None = None


@dataclass
class TdmaSchedule:
    """Slot map for one superframe; slot 0 is reserved for the beacon."""

    superframe_len: int = 8
    slot_duration_s: float = 0.05
    assignments: dict[int, list[str]] = field(default_factory=dict)

    BEACON_SLOT = 0

    def __post_init__(self) -> None:
        if self.superframe_len < 2:
            raise ValueError("superframe needs a beacon slot plus at least one data slot")
        if self.slot_duration_s <= 0:
            raise ValueError("slot duration must be positive")

    @property
    def superframe_s(self) -> float:
        return self.superframe_len * self.slot_duration_s

    def owners(self, slot: int) -> list[str]:
        return self.assignments.get(slot, [])

    def assign_lowest_free(self, node_id: str) -> int:
        for slot in range(1, self.superframe_len):
            if not self.assignments.get(slot):
                self.assignments[slot] = [node_id]
                return slot
        raise CapacityError(
            f"no free slot: {self.superframe_len - 1} data slots all assigned"
        )

    def force_assign(self, slot: int, node_id: str) -> None:
        """Deliberately break the one-node-per-slot invariant (fault injection)."""
        self.assignments.setdefault(slot, []).append(node_id)


@dataclass
class Frame:
    src: str
    seq: int
    line: str  # encoded wire line, newline excluded
    t_tx: float = -1.0  # delivery time, set by the fabric


class Fabric:
    """Single-threaded discrete-event loop owning the virtual clock.

    Register nodes, enqueue their frames, then ``run_until`` a target time;
    delivered frames go to the sink callback in transmission order. All state
    lives on this object, so equal inputs replay to identical timelines.
    """

    def __init__(
        self,
        schedule: TdmaSchedule | None = None,
        bitrate_bps: float = 250_000.0,
        queue_limit: int = 64,
        sink: Callable[[Frame], None] | None = None,
    ):
        self.schedule = schedule or TdmaSchedule()
        self.bitrate_bps = bitrate_bps
        self.queue_limit = queue_limit
        self.sink = sink
        self.registry: dict[str, NodeDescriptor] = {}
        self.queues: dict[str, deque[Frame]] = {}
        self._seq: dict[str, int] = {}
        self.collisions = 0
        self.drops = 0
        self.delivered_count = 0
        self._slot_cursor = 0  # absolute slot index, next to process
        # power accounting: base accrual is identical for every registered
        # node, so track global elapsed totals plus per-node join offsets
        self._elapsed_s = 0.0
        self._superframes = 0
        self._joined: dict[str, tuple[float, int]] = {}
        self._tx_s: dict[str, float] = {}

    # ------------------------------------------------------------- registry

    @property
    def now(self) -> float:
        return self._slot_cursor * self.schedule.slot_duration_s

    @property
    def max_frame_bytes(self) -> int:
        return int(self.schedule.slot_duration_s * self.bitrate_bps / 8)

    def register_node(self, desc: NodeDescriptor) -> int:
        """Admit a node: lowest-index free data slot, deterministic."""
        if desc.node_id in self.registry:
            raise ConflictError(f"node id {desc.node_id!r} already registered")
        slot = self.schedule.assign_lowest_free(desc.node_id)
        desc.assigned_slot = slot
        self.registry[desc.node_id] = desc
        self.queues[desc.node_id] = deque()
        self._seq[desc.node_id] = 0
        self._joined[desc.node_id] = (self._elapsed_s, self._superframes)
        self._tx_s[desc.node_id] = 0.0
        logger.debug("registered %s in slot %d", desc.node_id, slot)
        return slot

    def patient_nodes(self, patient_id: str) -> list[NodeDescriptor]:
        """Registry grouping: every node worn by one patient."""
        return [d for d in self.registry.values() if d.patient_id == patient_id]

    # --------------------------------------------------------------- queuing

    def enqueue(self, node_id: str, fields: dict) -> Frame:
        if node_id not in self.registry:
            raise FabricError(f"unknown node {node_id!r}")
        seq = self._seq[node_id]
        self._seq[node_id] = seq + 1
        fields = dict(fields)
        fields["src"] = node_id
        fields["seq"] = seq
        line = encode_frame_line(fields)
        if len(line) + 1 > self.max_frame_bytes:
            raise FrameSizeError(
                f"frame is {len(line) + 1} bytes; slot carries {self.max_frame_bytes}"
            )
        frame = Frame(src=node_id, seq=seq, line=line)
        q = self.queues[node_id]
        if len(q) >= self.queue_limit:
            q.popleft()  # freshness beats history for monitoring data
            self.drops += 1
        q.append(frame)
        return frame

    # ------------------------------------------------------------------ loop

    def run_until(self, t: float) -> list[Frame]:
        """Process every slot ending at or before t; return frames delivered."""
        delivered: list[Frame] = []
        slot_d = self.schedule.slot_duration_s
        n_slots = self.schedule.superframe_len
        while (self._slot_cursor + 1) * slot_d <= t + 1e-12:
            k = self._slot_cursor
            slot_in_frame = k % n_slots
            slot_start = k * slot_d
            if slot_in_frame == self.schedule.BEACON_SLOT:
                self._superframes += 1  # every registered node listens here
                self._slot_cursor += 1
                self._elapsed_s += slot_d
                continue
            owners = [o for o in self.schedule.owners(slot_in_frame) if o in self.queues]
            active = [o for o in owners if self.queues[o]]
            if len(active) > 1:
                # simultaneous transmissions garble the slot: drop them all
                self.collisions += 1
                for owner in active:
                    self.queues[owner].popleft()
                    self.drops += 1
            elif len(active) == 1:
                owner = active[0]
                q = self.queues[owner]
                budget = self.max_frame_bytes
                sent_any = False
                while q and budget >= len(q[0].line) + 1:
                    frame = q.popleft()
                    budget -= len(frame.line) + 1
                    frame.t_tx = slot_start
                    delivered.append(frame)
                    sent_any = True
                if sent_any:
                    self._tx_s[owner] += slot_d
            self._slot_cursor += 1
            self._elapsed_s += slot_d
        self.delivered_count += len(delivered)
        if self.sink is not None:
            for frame in delivered:
                self.sink(frame)
        return delivered

    # ----------------------------------------------------------------- power

    def power_snapshot(self) -> dict[str, dict[str, float]]:
        """Accumulated charge per node in mA*s, split by component.

        Radio charge covers transmit slots actually used plus one beacon
        listen per superframe; the controller and sensor draw continuously.
        """
        out = {}
        slot_d = self.schedule.slot_duration_s
        for node_id, (j_elapsed, j_frames) in self._joined.items():
            alive = self._elapsed_s - j_elapsed
            beacons = (self._superframes - j_frames) * slot_d
            tx = self._tx_s[node_id]
            out[node_id] = {
                "sensor_mas": SENSOR_MA * alive,
                "controller_mas": CONTROLLER_MA * alive,
                "radio_mas": RADIO_MA * (tx + beacons),
                "radio_tx_s": tx,
                "radio_beacon_s": beacons,
                "alive_s": alive,
            }
        return out

    def metrics(self) -> dict[str, float]:
        return {
            "collisions": self.collisions,
            "drops": self.drops,
            "delivered": self.delivered_count,
            "virtual_time_s": self.now,
        }


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        listener: FrameListener = self.server.listener  # type: ignore[attr-defined]
        buffer = b""
        while True:
            try:
                chunk = self.request.recv(4096)
            except (ConnectionResetError, OSError):
                break
            if not chunk:
                break
            buffer += chunk
            while b"\n" in buffer:
                raw, _, buffer = buffer.partition(b"\n")
                listener._ingest_line(raw)
        # whatever is left in the buffer is a partial frame: discard quietly


class _ThreadedServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class FrameListener:
    """Line-oriented TCP ingest endpoint for frames (in-process or loopback).

    Decoded frames are handed to ``on_frame``; malformed lines increment
    ``malformed_count`` and never kill the stream.
    """

    def __init__(
        self,
        host: str = DEFAULT_LISTEN_ADDR,
        port: int = DEFAULT_LISTEN_PORT,
        on_frame: Callable[[dict], None] | None = None,
    ):
        self.host = host
        self.port = port
        self.on_frame = on_frame
        self.malformed_count = 0
        self.received_count = 0
        self._server: _ThreadedServer | None = None
        self._thread: threading.Thread | None = None
        self._lock = threading.Lock()

    def _ingest_line(self, raw: bytes) -> None:
        try:
            fields = decode_frame_line(raw.decode("utf-8", errors="strict"))
        except (WireError, UnicodeDecodeError) as exc:
            with self._lock:
                self.malformed_count += 1
            logger.warning("rejected frame line: %s", exc)
            return
        with self._lock:
            self.received_count += 1
        if self.on_frame is not None:
            self.on_frame(fields)

    def start(self) -> "FrameListener":
        try:
            self._server = _ThreadedServer((self.host, self.port), _LineHandler)
        except OSError as exc:
            raise OSError(f"cannot bind {self.host}:{self.port}: {exc}") from exc
        self._server.listener = self  # type: ignore[attr-defined]
        self.port = self._server.server_address[1]  # resolves port 0
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="frame-listener", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "FrameListener":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def wifly_listen(
    host: str = DEFAULT_LISTEN_ADDR,
    port: int = DEFAULT_LISTEN_PORT,
    on_frame: Callable[[dict], None] | None = None,
) -> FrameListener:
    """Open the ingest endpoint (default port 60000) and return its handle."""
    return FrameListener(host=host, port=port, on_frame=on_frame).start()


def send_frames(host: str, port: int, lines: list[str]) -> None:
    """Push encoded frame lines to a listener over one TCP connection."""
    with socket.create_connection((host, port), timeout=5) as sock:
        payload = "".join(line + "\n" for line in lines).encode()
        sock.sendall(payload)

"""Per-patient relay: aggregate node emissions, suppress unchanged uploads.

The relay composes one vitals packet per second from the freshest fragments
of each sensor, then applies change detection against the last transmitted
packet: the first packet always goes out, later ones only when a monitored
field moved beyond its threshold. Fall packets bypass suppression outright.
Uploads go to the record server in batches with exponential backoff and are
made idempotent by the server's (patient, time) dedup key.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import requests

from vitalnet.accel import StateId
from vitalnet.scenario import LatLon

logger = logging.getLogger(__name__)

BACKOFF_CAP_S = 60.0


@dataclass(frozen=True)
class VitalsPacket:
    """The unit relayed node -> relay -> server."""

    patient_id: str
    t: float
    activity: int
    spo2: float  # percent
    hr: float  # bpm
    location: LatLon
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "t": self.t,
            "activity": self.activity,
            "spo2": self.spo2,
            "hr": self.hr,
            "lat": self.location.lat,
            "lon": self.location.lon,
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, data: dict) -> "VitalsPacket":
        return cls(
            patient_id=data["patient_id"],
            t=float(data["t"]),
            activity=int(data["activity"]),
            spo2=float(data["spo2"]),
            hr=float(data["hr"]),
            location=LatLon(float(data["lat"]), float(data["lon"])),
            flags=tuple(data.get("flags", ())),
        )


@dataclass(frozen=True)
class DeltaConfig:
    """Change thresholds for suppression; ``exact`` compares fields literally."""

    spo2_pts: float = 1.0
    hr_bpm: float = 1.0
    location_m: float = 10.0
    exact: bool = False
    fall_bypass: bool = True


@dataclass
class DeltaState:
    """Mutable change-detection state: the last transmitted packet per field."""

    last_sent: VitalsPacket | None = None
    transmissions: int = 0
    suppressed: int = 0


def should_send(
    current: VitalsPacket, state: DeltaState, config: DeltaConfig = DeltaConfig()
) -> tuple[bool, DeltaState]:
    """Decide transmission and return the updated state.

    First packet always transmits. Afterwards a packet transmits iff any
    monitored field changed beyond its threshold (or at all, in exact mode).
    On transmit the reference becomes the current packet; on suppression it
    is left untouched, so slow drift eventually crosses a threshold.
    """
    send = False
    if state.last_sent is None:
        send = True
    elif config.fall_bypass and current.activity == int(StateId.FALLING):
        send = True  # safety overrides bandwidth saving
    elif config.exact:
        send = (
            current.activity != state.last_sent.activity
            or current.spo2 != state.last_sent.spo2
            or current.hr != state.last_sent.hr
            or current.location != state.last_sent.location
        )
    else:
        prev = state.last_sent
        send = (
            current.activity != prev.activity
            or abs(current.spo2 - prev.spo2) >= config.spo2_pts
            or abs(current.hr - prev.hr) >= config.hr_bpm
            or current.location.distance_m(prev.location) >= config.location_m
        )
    if send:
        return True, DeltaState(
            last_sent=current,
            transmissions=state.transmissions + 1,
            suppressed=state.suppressed,
        )
    return False, replace(state, suppressed=state.suppressed + 1)


class AuthError(Exception):
    """Terminal credential failure; never retried."""


class TransportError(Exception):
    """Server unreachable or erroring after all retries."""


class MhsClient:
    """HTTP client for the record server with token auth and capped backoff."""

    def __init__(
        self,
        base_url: str,
        principal: str,
        password: str,
        backoff_base_s: float = 0.5,
        max_tries: int = 8,
        sleep: Callable[[float], None] = time.sleep,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.principal = principal
        self.password = password
        self.backoff_base_s = backoff_base_s
        self.max_tries = max_tries
        self.sleep = sleep
        self.session = session or requests.Session()
        self.token: str | None = None
        self.role: str | None = None

    def login(self) -> str:
        resp = self._raw(
            "POST", "/login",
            json={"principal": self.principal, "password": self.password},
            retry=True, authed=False,
        )
        self.token = resp["token"]
        self.role = resp.get("role")
        return self.token

    def _headers(self) -> dict:
        if self.token is None:
            self.login()
        return {"Authorization": f"Bearer {self.token}"}

    def _raw(self, method, path, json=None, params=None, retry=True, authed=True):
        tries = 0
        while True:
            tries += 1
            try:
                resp = self.session.request(
                    method,
                    self.base_url + path,
                    json=json,
                    params=params,
                    headers=self._headers() if authed else {},
                    timeout=30,
                )
            except requests.RequestException as exc:
                if retry and tries < self.max_tries:
                    self._backoff(tries, str(exc))
                    continue
                raise TransportError(f"{method} {path}: {exc}") from exc
            if resp.status_code in (401, 403):
                raise AuthError(f"{method} {path}: {resp.status_code} {resp.text}")
            if resp.status_code >= 500:
                if retry and tries < self.max_tries:
                    self._backoff(tries, f"server {resp.status_code}")
                    continue
                raise TransportError(f"{method} {path}: {resp.status_code}")
            if resp.status_code >= 400:
                raise TransportError(f"{method} {path}: {resp.status_code} {resp.text}")
            return resp.json()

    def _backoff(self, tries: int, why: str) -> None:
        delay = min(self.backoff_base_s * (2 ** (tries - 1)), BACKOFF_CAP_S)
        logger.warning("retrying in %.1fs after %s", delay, why)
        self.sleep(delay)

    # ----------------------------------------------------------- operations

    def enter_data(self, packets: list) -> dict:
        encoded = [p.to_json() if isinstance(p, VitalsPacket) else p for p in packets]
        return self._raw("POST", "/enterData", json={"packets": encoded})

    def collect_data(self, patient_id: str, t_start=None, t_end=None, cursor=None, limit=None) -> dict:
        params = {"patient_id": patient_id}
        for key, val in (("t_start", t_start), ("t_end", t_end), ("cursor", cursor), ("limit", limit)):
            if val is not None:
                params[key] = val
        return self._raw("GET", "/collectData", params=params)

    def download_info(self, patient_id: str, after: int = 0) -> dict:
        return self._raw("GET", "/downloadInfo", params={"patient_id": patient_id, "after": after})

    def upload_info(self, patient_id: str, kind: str, text: str, at: float | None = None) -> dict:
        body = {"patient_id": patient_id, "kind": kind, "text": text}
        if at is not None:
            body["at"] = at
        return self._raw("POST", "/uploadInfo", json=body)

    def add_patient(self, demographics: dict, idempotency_key: str | None = None) -> dict:
        headers = self._headers()
        if idempotency_key:
            headers["Idempotency-Key"] = idempotency_key
        resp = self.session.post(
            self.base_url + "/patients", json=demographics, headers=headers, timeout=30
        )
        if resp.status_code in (401, 403):
            raise AuthError(f"POST /patients: {resp.status_code}")
        if resp.status_code >= 400:
            raise TransportError(f"POST /patients: {resp.status_code} {resp.text}")
        return resp.json()

    def list_alerts(self, after: int = 0) -> dict:
        return self._raw("GET", "/alerts", params={"mode": "list", "after": after})


class UploadWorker:
    """Background uploader fed through a bounded queue (FIFO, single worker).

    Keeps the relay loop free of transport stalls while preserving batch
    order. ``close`` drains the queue and returns per-batch outcomes.
    """

    def __init__(self, client: MhsClient, maxsize: int = 16):
        self.client = client
        self._queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self.outcomes: list[dict] = []
        self._thread = threading.Thread(target=self._run, name="uploader", daemon=True)
        self._thread.start()

    def submit(self, batch: list[VitalsPacket]) -> None:
        if batch:
            self._queue.put(batch)

    def _run(self) -> None:
        while True:
            batch = self._queue.get()
            if batch is None:
                return
            try:
                ack = self.client.enter_data(batch)
                self.outcomes.append({"ok": True, "count": len(batch), "ack": ack})
            except (AuthError, TransportError) as exc:
                self.outcomes.append({"ok": False, "count": len(batch), "error": str(exc)})

    def close(self) -> list[dict]:
        self._queue.put(None)
        self._thread.join()
        return self.outcomes


class CinRelay:
    """Relay loop state for one patient.

    Feed it decoded frames (any order within a second), then call ``tick`` at
    each whole-second boundary; completed packets run through change
    detection, and transmitted ones accumulate until ``take_pending`` hands
    them to an uploader.
    """

    def __init__(
        self,
        patient_id: str,
        delta: DeltaConfig = DeltaConfig(),
        location_at: Callable[[float], LatLon] | None = None,
    ):
        self.patient_id = patient_id
        self.delta_config = delta
        self.location_at = location_at or (lambda t: LatLon(0.0, 0.0))
        self.delta = DeltaState()
        self._activity: tuple[float, int] | None = None  # (t, state)
        self._spo2: float | None = None
        self._hr: float | None = None
        self._flags: tuple[str, ...] = ()
        self.composed: list[tuple[VitalsPacket, bool]] = []
        self._pending: list[VitalsPacket] = []
        self.info_cursor = 0

    @property
    def bs_data2(self) -> VitalsPacket | None:
        return self.delta.last_sent

    def ingest_frame(self, fields: dict) -> None:
        kind = fields.get("kind")
        if kind == "activity":
            self._activity = (float(fields["t"]), int(fields["state"]))
        elif kind == "oxi":
            if fields.get("spo2") is not None:
                self._spo2 = float(fields["spo2"])
            if fields.get("hr") is not None:
                self._hr = float(fields["hr"])
            self._flags = tuple(fields.get("flags", ()))

    def tick(self, t: float) -> VitalsPacket | None:
        """Compose the packet for second ``t``; returns it when transmitted."""
        if self._activity is None or self._spo2 is None or self._hr is None:
            return None  # packet must be complete before relaying starts
        packet = VitalsPacket(
            patient_id=self.patient_id,
            t=t,
            activity=self._activity[1],
            spo2=self._spo2,
            hr=self._hr,
            location=self.location_at(t),
            flags=self._flags,
        )
        send, self.delta = should_send(packet, self.delta, self.delta_config)
        self.composed.append((packet, send))
        if send:
            self._pending.append(packet)
            return packet
        return None

    def take_pending(self) -> list[VitalsPacket]:
        batch, self._pending = self._pending, []
        return batch

    def download_info(self, client: MhsClient) -> list[dict]:
        """Items newer than the sync cursor; cursor advances only on success."""
        resp = client.download_info(self.patient_id, after=self.info_cursor)
        items = resp.get("items", [])
        if items:
            self.info_cursor = max(item["id"] for item in items)
        return items

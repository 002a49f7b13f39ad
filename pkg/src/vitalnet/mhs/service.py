"""HTTP record server: auth, ingest, retrieval, alerts, practitioner uploads.

Endpoints (JSON bodies; bearer token on everything except /login and /health):

    POST   /login          {principal, password} -> {token, role, expires_in_s}
    POST   /patients       demographics -> {patient_id}   [practitioner]
    GET    /patients/{id}  record summary                  [practitioner]
    DELETE /patients/{id}  tombstone the record            [practitioner]
    POST   /enterData      {packets: [...]} -> per-packet dispositions
    GET    /collectData    ?patient_id&t_start&t_end&cursor&limit [practitioner]
    POST   /uploadInfo     {patient_id, kind, text, at?}   [practitioner]
    GET    /downloadInfo   ?patient_id&after=<item id>
    GET    /alerts         server-sent event stream; ?mode=list for a snapshot

Patients authenticate with a principal equal to their patient id and may only
touch their own data. Ingested packets are validated, deduplicated on
(patient_id, t), written to the event log, fsynced, and only then
acknowledged, so an acked packet survives any crash. Risk is scored at ingest
time and stored with the packet, keeping history stable under later
configuration changes.
"""

from __future__ import annotations

import bisect
import json
import logging
import queue
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from vitalnet.mhs import risk as risk_mod
from vitalnet.mhs.auth import (
    AuthFailure,
    Forbidden,
    Session,
    TokenTable,
    User,
    verify_password,
)
from vitalnet.mhs.risk import RiskModel
from vitalnet.mhs.store import EventLog, read_snapshot, write_snapshot

logger = logging.getLogger(__name__)

INFO_KINDS = ("recommendation", "prescription", "consultation_slot")
SPO2_RANGE = (0.0, 97.0)
HR_RANGE = (30.0, 245.0)


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(message)


def _require(cond: bool, status: int, message: str) -> None:
    if not cond:
        raise ApiError(status, message)


class Records:
    """Event-sourced record state; every mutation flows through ``apply``."""

    def __init__(self) -> None:
        self.patients: dict[str, dict] = {}
        self.packets: dict[str, list[dict]] = {}
        self.packet_keys: set[tuple[str, float]] = set()
        self.info: dict[str, list[dict]] = {}
        self.alerts: list[dict] = []
        self.idem: dict[str, str] = {}
        self.counters = {"patient": 0, "info": 0, "alert": 0}

    # ------------------------------------------------------------- mutation

    def apply(self, event: dict) -> dict | None:
        """Apply one event; returns the alert it raised, if any."""
        kind = event["type"]
        if kind == "patient_add":
            pid = event["patient_id"]
            self.patients[pid] = {
                "demographics": event["demographics"],
                "deleted": False,
            }
            self.packets.setdefault(pid, [])
            self.info.setdefault(pid, [])
            self.counters["patient"] = max(
                self.counters["patient"], event.get("counter", 0)
            )
            if event.get("idem_key"):
                self.idem[event["idem_key"]] = pid
            return None
        if kind == "patient_delete":
            self.patients[event["patient_id"]]["deleted"] = True
            return None
        if kind == "packet":
            packet = event["packet"]
            pid = packet["patient_id"]
            entry = {
                "packet": packet,
                "risk": event["risk"],
                "severity": event.get("severity"),
                "causes": event.get("causes", []),
                "alert_id": event.get("alert_id"),
            }
            seq = self.packets.setdefault(pid, [])
            keys = [e["packet"]["t"] for e in seq]
            seq.insert(bisect.bisect_right(keys, packet["t"]), entry)
            self.packet_keys.add((pid, float(packet["t"])))
            if event.get("alert_id") is not None:
                alert = {
                    "id": event["alert_id"],
                    "patient_id": pid,
                    "t": packet["t"],
                    "severity": event["severity"],
                    "cause": ",".join(event.get("causes", [])),
                    "risk": event["risk"],
                    "lat": packet["lat"],
                    "lon": packet["lon"],
                    "spo2": packet["spo2"],
                    "hr": packet["hr"],
                    "activity": packet["activity"],
                }
                self.alerts.append(alert)
                self.counters["alert"] = max(self.counters["alert"], event["alert_id"])
                return alert
            return None
        if kind == "info":
            item = event["item"]
            self.info.setdefault(item["patient_id"], []).append(item)
            self.counters["info"] = max(self.counters["info"], item["id"])
            return None
        logger.warning("ignoring unknown event type %r", kind)
        return None

    # -------------------------------------------------------------- queries

    def live_patient(self, pid: str) -> dict:
        rec = self.patients.get(pid)
        _require(rec is not None and not rec["deleted"], 404, f"unknown patient {pid!r}")
        return rec  # type: ignore[return-value]

    def latest_packet(self, pid: str) -> dict | None:
        seq = self.packets.get(pid) or []
        return seq[-1] if seq else None

    def prev_before(self, pid: str, t: float) -> dict | None:
        seq = self.packets.get(pid) or []
        keys = [e["packet"]["t"] for e in seq]
        i = bisect.bisect_left(keys, t)
        return seq[i - 1]["packet"] if i > 0 else None

    # ------------------------------------------------------------ snapshots

    def to_snapshot(self) -> dict:
        return {
            "patients": self.patients,
            "packets": self.packets,
            "info": self.info,
            "alerts": self.alerts,
            "idem": self.idem,
            "counters": self.counters,
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "Records":
        rec = cls()
        rec.patients = data["patients"]
        rec.packets = data["packets"]
        rec.info = data["info"]
        rec.alerts = data["alerts"]
        rec.idem = data["idem"]
        rec.counters = data["counters"]
        rec.packet_keys = {
            (pid, float(e["packet"]["t"]))
            for pid, seq in rec.packets.items()
            for e in seq
        }
        return rec


@dataclass
class ServerConfig:
    data_dir: Path
    users: list[User]
    host: str = "127.0.0.1"
    port: int = 0  # 0: pick a free port
    risk: RiskModel = field(default_factory=RiskModel)
    token_ttl_s: float = 8 * 3600.0
    snapshot_every: int = 1000

    @classmethod
    def from_file(cls, path: str | Path, data_dir: Path, host: str, port: int) -> "ServerConfig":
        raw = json.loads(Path(path).read_text())
        users = [
            User(u["principal"], u["role"], u["password_hash"]) for u in raw["users"]
        ]
        risk = RiskModel.from_json(raw.get("risk", {}))
        return cls(
            data_dir=data_dir, users=users, host=host, port=port, risk=risk,
            token_ttl_s=float(raw.get("token_ttl_s", 8 * 3600.0)),
            snapshot_every=int(raw.get("snapshot_every", 1000)),
        )


class MhsServer:
    """Owns the record state, the event log, and the HTTP front end."""

    def __init__(self, config: ServerConfig):
        self.config = config
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self.records = Records()
        snap = read_snapshot(config.data_dir)
        offset = 0
        if snap is not None:
            state, offset = snap
            self.records = Records.from_snapshot(state)
        self.log = EventLog(Path(config.data_dir) / "events.log")
        replayed = 0
        for end, event in self.log.replay(from_offset=offset):
            self.records.apply(event)
            replayed += 1
        logger.info("recovered state: %d replayed events past snapshot", replayed)
        self._events_since_snapshot = 0
        self.users = {u.principal: u for u in config.users}
        self.tokens = TokenTable(ttl_s=config.token_ttl_s)
        self.lock = threading.RLock()
        self.subscribers: list[tuple[queue.Queue, Session]] = []
        self.stopping = threading.Event()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # ----------------------------------------------------------- lifecycle

    def start(self) -> "MhsServer":
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer((self.config.host, self.config.port), handler)
        self._httpd.daemon_threads = True
        self.config.port = self._httpd.server_address[1]
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, name="mhs-http", daemon=True
        )
        self._thread.start()
        logger.info("record server on %s", self.base_url)
        return self

    def stop(self) -> None:
        self.stopping.set()
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
        self.log.close()

    def __enter__(self) -> "MhsServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def base_url(self) -> str:
        return f"http://{self.config.host}:{self.config.port}"

    # ------------------------------------------------------------ mutation

    def commit(self, events: list[dict]) -> list[dict | None]:
        """Durably append events, apply them, snapshot on interval.

        Returns per-event alerts. Callers hold ``self.lock``.
        """
        offset = self.log.append_many(events)
        alerts = [self.records.apply(e) for e in events]
        self._events_since_snapshot += len(events)
        if self._events_since_snapshot >= self.config.snapshot_every:
            write_snapshot(self.config.data_dir, self.records.to_snapshot(), offset)
            self._events_since_snapshot = 0
        return alerts

    def fan_out(self, alert: dict) -> None:
        with self.lock:
            targets = list(self.subscribers)
        for q, session in targets:
            if _may_see(session, alert["patient_id"]):
                q.put(alert)
                alert.setdefault("delivered_to", {})[session.role] = True

    def subscribe(self, session: Session) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self.lock:
            self.subscribers.append((q, session))
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self.lock:
            self.subscribers = [(qq, s) for qq, s in self.subscribers if qq is not q]


def _may_see(session: Session, patient_id: str) -> bool:
    return session.role == "practitioner" or session.principal == patient_id


def _validate_packet(p: dict) -> str | None:
    """Reason string when the packet is malformed, else None."""
    required = ("patient_id", "t", "activity", "spo2", "hr", "lat", "lon")
    for key in required:
        if key not in p:
            return f"missing field {key!r}"
    try:
        t = float(p["t"])
        activity = int(p["activity"])
        spo2 = float(p["spo2"])
        hr = float(p["hr"])
        float(p["lat"]), float(p["lon"])
    except (TypeError, ValueError):
        return "non-numeric field"
    if activity not in (1, 2, 3, 4):
        return f"activity {activity} outside 1-4"
    if not SPO2_RANGE[0] <= spo2 <= SPO2_RANGE[1]:
        return f"spo2 {spo2} outside {SPO2_RANGE}"
    if not HR_RANGE[0] <= hr <= HR_RANGE[1]:
        return f"hr {hr} outside {HR_RANGE}"
    return None


def _make_handler(server: MhsServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        srv = server

        # ------------------------------------------------------- plumbing

        def log_message(self, fmt, *args):  # route through logging, not stderr
            logger.debug("%s " + fmt, self.address_string(), *args)

        def _send_json(self, status: int, body: dict) -> None:
            payload = json.dumps(body).encode()
            self.send_response(status)
            self._cors()
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def _cors(self) -> None:
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header(
                "Access-Control-Allow-Headers",
                "Authorization, Content-Type, Idempotency-Key, Last-Event-ID",
            )
            self.send_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS")

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length).decode())
            except json.JSONDecodeError as exc:
                raise ApiError(400, f"invalid JSON body: {exc}") from None

        def _session(self) -> Session:
            header = self.headers.get("Authorization") or ""
            token = header[7:] if header.startswith("Bearer ") else None
            if token is None:
                token = (self._query().get("token") or [None])[0]
            try:
                return server.tokens.check(token)
            except AuthFailure as exc:
                raise ApiError(401, str(exc)) from None

        def _query(self) -> dict:
            return parse_qs(urlparse(self.path).query)

        def _route(self, method: str) -> None:
            path = urlparse(self.path).path
            try:
                self._dispatch(method, path)
            except ApiError as exc:
                self._send_json(exc.status, {"error": exc.message})
            except Forbidden as exc:
                self._send_json(403, {"error": str(exc)})
            except BrokenPipeError:
                pass
            except Exception as exc:  # noqa: BLE001 — surface as 500, keep serving
                logger.exception("handler error")
                self._send_json(500, {"error": f"internal error: {exc}"})

        def do_GET(self) -> None:
            self._route("GET")

        def do_POST(self) -> None:
            self._route("POST")

        def do_DELETE(self) -> None:
            self._route("DELETE")

        def do_OPTIONS(self) -> None:
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        # ------------------------------------------------------- dispatch

        def _dispatch(self, method: str, path: str) -> None:
            if method == "GET" and path == "/health":
                with server.lock:
                    n = sum(1 for p in server.records.patients.values() if not p["deleted"])
                self._send_json(200, {"ok": True, "patients": n})
                return
            if method == "POST" and path == "/login":
                self._login()
                return
            session = self._session()
            if method == "POST" and path == "/patients":
                self._add_patient(session)
            elif method in ("GET", "DELETE") and re.fullmatch(r"/patients/[^/]+", path):
                pid = path.rsplit("/", 1)[1]
                if method == "GET":
                    self._view_patient(session, pid)
                else:
                    self._delete_patient(session, pid)
            elif method == "POST" and path == "/enterData":
                self._enter_data(session)
            elif method == "GET" and path == "/collectData":
                self._collect_data(session)
            elif method == "POST" and path == "/uploadInfo":
                self._upload_info(session)
            elif method == "GET" and path == "/downloadInfo":
                self._download_info(session)
            elif method == "GET" and path == "/alerts":
                self._alerts(session)
            else:
                raise ApiError(404, f"no route {method} {path}")

        # ------------------------------------------------------ endpoints

        def _login(self) -> None:
            body = self._body()
            principal = body.get("principal", "")
            password = body.get("password", "")
            user = server.users.get(principal)
            if user is None or not verify_password(password, user.password_hash):
                raise ApiError(401, "bad principal or password")
            session = server.tokens.issue(user)
            self._send_json(
                200,
                {
                    "token": session.token,
                    "role": session.role,
                    "expires_in_s": server.config.token_ttl_s,
                },
            )

        def _require_practitioner(self, session: Session) -> None:
            if session.role != "practitioner":
                raise ApiError(403, "practitioner role required")

        def _add_patient(self, session: Session) -> None:
            self._require_practitioner(session)
            body = self._body()
            idem_key = self.headers.get("Idempotency-Key")
            with server.lock:
                if idem_key and idem_key in server.records.idem:
                    self._send_json(
                        200, {"patient_id": server.records.idem[idem_key], "replayed": True}
                    )
                    return
                requested = body.get("patient_id")
                natural = body.get("national_id")
                if natural:
                    for pid, rec in server.records.patients.items():
                        if (
                            not rec["deleted"]
                            and rec["demographics"].get("national_id") == natural
                        ):
                            raise ApiError(409, f"national_id already registered to {pid}")
                if requested:
                    if requested in server.records.patients:
                        raise ApiError(409, f"patient id {requested!r} already exists")
                    pid = requested
                    counter = server.records.counters["patient"]
                else:
                    counter = server.records.counters["patient"] + 1
                    pid = f"p-{counter:04d}"
                event = {
                    "type": "patient_add",
                    "patient_id": pid,
                    "demographics": body,
                    "counter": counter,
                }
                if idem_key:
                    event["idem_key"] = idem_key
                server.commit([event])
            self._send_json(201, {"patient_id": pid})

        def _view_patient(self, session: Session, pid: str) -> None:
            self._require_practitioner(session)
            with server.lock:
                rec = server.records.live_patient(pid)
                seq = server.records.packets.get(pid) or []
                latest = seq[-1] if seq else None
                body = {
                    "patient_id": pid,
                    "demographics": rec["demographics"],
                    "monitoring_status": "active" if seq else "no_data",
                    "history_len": len(seq),
                    "first_t": seq[0]["packet"]["t"] if seq else None,
                    "last_t": seq[-1]["packet"]["t"] if seq else None,
                    "latest": latest,
                    "alert_count": sum(
                        1 for a in server.records.alerts if a["patient_id"] == pid
                    ),
                    "info_count": len(server.records.info.get(pid) or []),
                }
            self._send_json(200, body)

        def _delete_patient(self, session: Session, pid: str) -> None:
            self._require_practitioner(session)
            with server.lock:
                server.records.live_patient(pid)  # 404 when already gone
                server.commit([{"type": "patient_delete", "patient_id": pid}])
            self._send_json(200, {"patient_id": pid, "deleted": True})

        def _enter_data(self, session: Session) -> None:
            body = self._body()
            packets = body.get("packets")
            _require(isinstance(packets, list), 400, "body needs a packets list")
            results = []
            alerts_to_send = []
            with server.lock:
                rec = server.records
                events = []
                batch_prev: dict[str, dict] = {}
                for p in packets:
                    reason = _validate_packet(p)
                    if reason is None and not _may_see(session, p["patient_id"]):
                        reason = "not authorized for this patient"
                    if reason is None:
                        patient = rec.patients.get(p["patient_id"])
                        if patient is None:
                            reason = "unknown patient"
                        elif patient["deleted"]:
                            reason = "patient deleted"
                    if reason is not None:
                        results.append(
                            {"patient_id": p.get("patient_id"), "t": p.get("t"),
                             "status": "rejected", "reason": reason}
                        )
                        continue
                    pid = p["patient_id"]
                    t = float(p["t"])
                    if (pid, t) in rec.packet_keys or any(
                        e["packet"]["t"] == t and e["packet"]["patient_id"] == pid
                        for e in events
                        if e["type"] == "packet"
                    ):
                        results.append({"patient_id": pid, "t": t, "status": "deduped"})
                        continue
                    prev = batch_prev.get(pid) or rec.prev_before(pid, t)
                    decision = risk_mod.decide(p, prev, server.config.risk)
                    alert_id = None
                    if decision.alert:
                        alert_id = rec.counters["alert"] + 1 + sum(
                            1 for e in events if e["type"] == "packet" and e.get("alert_id")
                        )
                    events.append(
                        {
                            "type": "packet",
                            "packet": p,
                            "risk": decision.probability,
                            "severity": decision.severity,
                            "causes": list(decision.causes),
                            "alert_id": alert_id,
                        }
                    )
                    batch_prev[pid] = p
                    results.append(
                        {"patient_id": pid, "t": t, "status": "accepted",
                         "risk": decision.probability, "severity": decision.severity,
                         "alert_id": alert_id}
                    )
                if events:
                    raised = server.commit(events)
                    alerts_to_send = [a for a in raised if a is not None]
            for alert in alerts_to_send:
                server.fan_out(alert)
            counts = {
                "accepted": sum(1 for r in results if r["status"] == "accepted"),
                "deduped": sum(1 for r in results if r["status"] == "deduped"),
                "rejected": sum(1 for r in results if r["status"] == "rejected"),
            }
            self._send_json(200, {**counts, "results": results})

        def _collect_data(self, session: Session) -> None:
            self._require_practitioner(session)
            q = self._query()
            pid = (q.get("patient_id") or [None])[0]
            _require(pid is not None, 400, "patient_id required")
            try:
                t_start = float(q["t_start"][0]) if "t_start" in q else None
                t_end = float(q["t_end"][0]) if "t_end" in q else None
                cursor = int(q["cursor"][0]) if "cursor" in q else 0
                limit = int(q["limit"][0]) if "limit" in q else 500
            except ValueError as exc:
                raise ApiError(400, f"malformed range parameter: {exc}") from None
            with server.lock:
                server.records.live_patient(pid)
                seq = server.records.packets.get(pid) or []
                window = [
                    e for e in seq
                    if (t_start is None or e["packet"]["t"] >= t_start)
                    and (t_end is None or e["packet"]["t"] <= t_end)
                ]
                page = window[cursor : cursor + limit]
                next_cursor = cursor + limit if cursor + limit < len(window) else None
            self._send_json(
                200,
                {"patient_id": pid, "packets": page, "next_cursor": next_cursor,
                 "total": len(window)},
            )

        def _upload_info(self, session: Session) -> None:
            self._require_practitioner(session)
            body = self._body()
            pid = body.get("patient_id")
            kind = body.get("kind")
            text = (body.get("text") or "").strip()
            _require(kind in INFO_KINDS, 400, f"kind must be one of {INFO_KINDS}")
            _require(bool(text), 400, "item text must not be empty")
            with server.lock:
                server.records.live_patient(pid)
                item_id = server.records.counters["info"] + 1
                item = {
                    "id": item_id, "patient_id": pid, "kind": kind, "text": text,
                    "author": session.principal,
                }
                if body.get("at") is not None:
                    item["at"] = float(body["at"])
                server.commit([{"type": "info", "item": item}])
            self._send_json(201, {"item_id": item_id})

        def _download_info(self, session: Session) -> None:
            q = self._query()
            pid = (q.get("patient_id") or [None])[0]
            _require(pid is not None, 400, "patient_id required")
            if not _may_see(session, pid):
                raise ApiError(403, "not authorized for this patient")
            after = int((q.get("after") or ["0"])[0])
            kind = (q.get("kind") or [None])[0]
            with server.lock:
                server.records.live_patient(pid)
                items = [
                    i for i in server.records.info.get(pid, [])
                    if i["id"] > after and (kind is None or i["kind"] == kind)
                ]
            if kind == "consultation_slot":
                items.sort(key=lambda i: (i.get("at", float("inf")), i["id"]))
            cursor = max((i["id"] for i in items), default=after)
            self._send_json(200, {"items": items, "cursor": cursor})

        # ---------------------------------------------------------- alerts

        def _visible_alerts(self, session: Session, after: int) -> list[dict]:
            with server.lock:
                return [
                    dict(a) for a in server.records.alerts
                    if a["id"] > after and _may_see(session, a["patient_id"])
                ]

        def _alerts(self, session: Session) -> None:
            q = self._query()
            mode = (q.get("mode") or ["stream"])[0]
            after_raw = (q.get("last_event_id") or [None])[0]
            if after_raw is None:
                after_raw = self.headers.get("Last-Event-ID")
            try:
                after = int(after_raw) if after_raw is not None else 0
            except ValueError:
                after = 0  # unknown resume id: replay the retention window
            with server.lock:
                max_id = server.records.counters["alert"]
            if after > max_id:
                after = 0  # unknown (future) id: full replay
            if mode == "list":
                self._send_json(200, {"alerts": self._visible_alerts(session, after)})
                return
            # server-sent event stream
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.end_headers()
            sub = server.subscribe(session)
            try:
                for alert in self._visible_alerts(session, after):
                    self._write_event(alert)
                while not server.stopping.is_set():
                    try:
                        alert = sub.get(timeout=0.25)
                    except queue.Empty:
                        self.wfile.write(b": ping\n\n")
                        self.wfile.flush()
                        continue
                    self._write_event(alert)
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                server.unsubscribe(sub)

        def _write_event(self, alert: dict) -> None:
            data = json.dumps({k: v for k, v in alert.items() if k != "delivered_to"})
            self.wfile.write(f"id: {alert['id']}\ndata: {data}\n\n".encode())
            self.wfile.flush()

    return Handler

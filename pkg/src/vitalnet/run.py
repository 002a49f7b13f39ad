"""End-to-end scenario engine: generators -> nodes -> fabric -> relay -> server.

One virtual second at a time: node emissions due that second are framed and
queued, the fabric delivers them slot by slot, the relay composes and filters
the vitals packet, and batches go up to the record server through the
background uploader. Everything is driven by the virtual clock and seeded
generators, so a (scenario, seed, fs, slots) tuple replays to identical
reports.
"""

from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from vitalnet.accel import AccelNode, NodeEmission
from vitalnet.fabric import Fabric, Frame, NodeDescriptor, TdmaSchedule, decode_frame_line
from vitalnet.mhs.auth import User, hash_password
from vitalnet.mhs.service import MhsServer, ServerConfig
from vitalnet.oximeter import OximeterNode, OxiReading
from vitalnet.relay import CinRelay, DeltaConfig, MhsClient, UploadWorker, VitalsPacket
from vitalnet.scenario import ScenarioScript
from vitalnet.synth import gen_accel_trace, gen_ppg

logger = logging.getLogger(__name__)

DEMO_PRACTITIONER = ("dr-demo", "demo-doc-pw")
DEMO_PATIENT_PW = "demo-pat-pw"


@dataclass
class RunConfig:
    script: ScenarioScript
    patient_id: str = "p-demo"
    fs_accel: float = 50.0
    fs_ppg: float = 100.0
    slots: int = 8
    exact_delta: bool = False
    upload_every_s: float = 5.0
    server_url: str | None = None  # external server; in-process when None
    serve_port: int = 0
    practitioner: tuple[str, str] = DEMO_PRACTITIONER
    patient_password: str = DEMO_PATIENT_PW
    data_dir: Path | None = None  # in-process server state
    inject_slot_conflict: bool = False  # fault injection: double-book slot 1


@dataclass
class RunResult:
    config: RunConfig
    emissions: list[NodeEmission] = field(default_factory=list)
    readings: list[OxiReading] = field(default_factory=list)
    composed: list[tuple[VitalsPacket, bool]] = field(default_factory=list)
    delivered_frames: list[dict] = field(default_factory=list)
    fabric_metrics: dict = field(default_factory=dict)
    power: dict = field(default_factory=dict)
    slot_map: dict = field(default_factory=dict)
    upload_outcomes: list[dict] = field(default_factory=list)
    server_packets: list[dict] = field(default_factory=list)
    server_alerts: list[dict] = field(default_factory=list)
    server_latest: dict | None = None
    bs_data2: VitalsPacket | None = None
    info_items: list[dict] = field(default_factory=list)
    invariant_failures: list[str] = field(default_factory=list)

    @property
    def transmissions(self) -> int:
        return sum(1 for _, sent in self.composed if sent)

    @property
    def suppressed(self) -> int:
        return sum(1 for _, sent in self.composed if not sent)


def demo_users(patient_id: str) -> list[User]:
    principal, password = DEMO_PRACTITIONER
    return [
        User(principal, "practitioner", hash_password(password)),
        User(patient_id, "patient", hash_password(DEMO_PATIENT_PW)),
    ]


def run_scenario(config: RunConfig) -> RunResult:
    script = config.script
    script.validate()
    result = RunResult(config=config)
    own_server: MhsServer | None = None
    tmp_dir: tempfile.TemporaryDirectory | None = None
    try:
        if config.server_url is None:
            data_dir = config.data_dir
            if data_dir is None:
                tmp_dir = tempfile.TemporaryDirectory(prefix="vitalnet-mhs-")
                data_dir = Path(tmp_dir.name)
            own_server = MhsServer(
                ServerConfig(
                    data_dir=Path(data_dir),
                    users=demo_users(config.patient_id),
                    host="127.0.0.1",
                    port=config.serve_port,
                )
            ).start()
            base_url = own_server.base_url
        else:
            base_url = config.server_url
        _run_against(base_url, config, result)
    finally:
        if own_server is not None:
            own_server.stop()
        if tmp_dir is not None:
            tmp_dir.cleanup()
    return result


def _run_against(base_url: str, config: RunConfig, result: RunResult) -> None:
    script = config.script
    doc = MhsClient(base_url, *config.practitioner)
    doc.login()
    try:
        doc.add_patient(
            {"patient_id": config.patient_id, "name": "Scenario Patient"},
            idempotency_key=f"run-{config.patient_id}",
        )
    except Exception as exc:
        # an existing record from a previous run against this server is fine
        logger.info("patient registration: %s", exc)

    # ground truth and node pipelines (deterministic, precomputable)
    accel_trace = gen_accel_trace(script, config.fs_accel)
    ppg_trace = gen_ppg(script, fs=config.fs_ppg)
    accel_node = AccelNode(fs=config.fs_accel)
    oxi_node = OximeterNode()
    result.emissions = list(accel_node.process(accel_trace.samples()))
    result.readings = list(oxi_node.process(ppg_trace))
    by_second_accel = {int(e.t): e for e in result.emissions}
    by_second_oxi = {int(r.t): r for r in result.readings}

    # fabric with one accel and one oximeter node for the patient
    fabric = Fabric(schedule=TdmaSchedule(superframe_len=config.slots))
    accel_id = f"{config.patient_id}-accel"
    oxi_id = f"{config.patient_id}-oxi"
    for node_id, kind in ((accel_id, "accel"), (oxi_id, "oximeter")):
        fabric.register_node(
            NodeDescriptor(node_id=node_id, kind=kind, patient_id=config.patient_id)
        )
    if config.inject_slot_conflict:
        # deliberately break the one-node-per-slot invariant so the collision
        # detector (and the nonzero exit path) can be demonstrated end to end
        fabric.schedule.force_assign(1, oxi_id)
    result.slot_map = {
        d.node_id: d.assigned_slot for d in fabric.registry.values()
    }

    relay = CinRelay(
        config.patient_id,
        delta=DeltaConfig(exact=config.exact_delta),
        location_at=lambda t: script.segment_at(t).location,
    )

    def deliver(frame: Frame) -> None:
        fields = decode_frame_line(frame.line)
        result.delivered_frames.append(fields)
        relay.ingest_frame(fields)

    fabric.sink = deliver

    patient_client = MhsClient(base_url, config.patient_id, config.patient_password)
    patient_client.login()
    uploader = UploadWorker(patient_client)

    horizon = int(script.total_duration_s)
    for sec in range(1, horizon + 1):
        if sec in by_second_accel:
            em = by_second_accel[sec]
            fabric.enqueue(
                accel_id,
                {"kind": "activity", "patient": config.patient_id, "t": float(sec),
                 "state": int(em.state), "mode": em.mode.value},
            )
        if sec in by_second_oxi:
            reading = by_second_oxi[sec]
            fabric.enqueue(
                oxi_id,
                {"kind": "oxi", "patient": config.patient_id, "t": float(sec),
                 "spo2": reading.spo2, "hr": reading.hr,
                 "flags": reading.flag_names()},
            )
        fabric.run_until(float(sec + 1))
        relay.tick(float(sec))
        if sec % int(config.upload_every_s) == 0:
            uploader.submit(relay.take_pending())
    uploader.submit(relay.take_pending())
    result.upload_outcomes = uploader.close()

    result.composed = relay.composed
    result.bs_data2 = relay.bs_data2
    result.fabric_metrics = fabric.metrics()
    result.power = fabric.power_snapshot()
    result.info_items = relay.download_info(patient_client)

    collected = doc.collect_data(config.patient_id, limit=1_000_000)
    result.server_packets = collected["packets"]
    result.server_latest = collected["packets"][-1] if collected["packets"] else None
    result.server_alerts = doc.list_alerts().get("alerts", [])

    _check_invariants(result)


def _check_invariants(result: RunResult) -> None:
    fail = result.invariant_failures
    if result.fabric_metrics.get("collisions", 0) != 0:
        fail.append(f"collisions = {result.fabric_metrics['collisions']} (expected 0)")
    seq_by_src: dict[str, int] = {}
    for fields in result.delivered_frames:
        src, seq = fields["src"], fields["seq"]
        prev = seq_by_src.get(src, -1)
        if seq != prev + 1:
            fail.append(f"frame seq gap for {src}: {prev} -> {seq}")
        seq_by_src[src] = seq

    script = result.config.script
    if script.noise.get("accel", 0.0) == 0.0:
        bounds = script.boundaries()
        for em in result.emissions:
            t0, t1 = em.window.t_start, em.window.t_start + 1.0
            interior = not any(t0 < b < t1 for b in bounds[1:-1])
            if not interior:
                continue
            expected = script.segment_at((t0 + t1) / 2).activity
            if int(em.state) != expected:
                fail.append(
                    f"window at t={t0:g}: classified {int(em.state)}, scripted {expected}"
                )

    for outcome in result.upload_outcomes:
        if not outcome["ok"]:
            fail.append(f"upload failed: {outcome['error']}")

    if result.bs_data2 is not None:
        if result.server_latest is None:
            fail.append("relay transmitted but server holds no packets")
        else:
            latest = result.server_latest["packet"]
            mine = result.bs_data2.to_json()
            if any(latest[k] != mine[k] for k in ("t", "activity", "spo2", "hr")):
                fail.append(
                    f"server latest {latest['t']} != relay reference {mine['t']}"
                )

    n_slots = result.config.slots
    for node_id, charge in result.power.items():
        alive = charge["alive_s"]
        if alive > 0 and charge["radio_tx_s"] > alive / n_slots + 1e-9:
            fail.append(f"{node_id} radio duty {charge['radio_tx_s'] / alive:.3f} > 1/{n_slots}")

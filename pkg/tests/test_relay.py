import random

import pytest
import requests

from tests.conftest import DOC_PW, PAT_PW
from vitalnet.relay import (
    AuthError,
    CinRelay,
    DeltaConfig,
    DeltaState,
    MhsClient,
    TransportError,
    UploadWorker,
    VitalsPacket,
    should_send,
)
from vitalnet.scenario import LatLon

LOC = LatLon(-25.73, 28.21)


def packet(t=0.0, activity=1, spo2=96.0, hr=75.0, loc=LOC, pid="p-demo"):
    return VitalsPacket(
        patient_id=pid, t=t, activity=activity, spo2=spo2, hr=hr, location=loc
    )


def run_stream(packets, config=DeltaConfig()):
    state = DeltaState()
    sent = []
    for p in packets:
        ok, state = should_send(p, state, config)
        if ok:
            sent.append(p)
    return sent, state


def fig2_literal_oracle(packets):
    """Hand-executed reference: first reading stored, send on any difference."""
    sent = []
    bs_data2 = None
    for p in packets:
        if bs_data2 is None:
            bs_data2 = p
            sent.append(p)  # first packet primes the reference and uploads
        elif (p.activity, p.spo2, p.hr, p.location) != (
            bs_data2.activity, bs_data2.spo2, bs_data2.hr, bs_data2.location
        ):
            sent.append(p)
            bs_data2 = p
    return sent


# ----------------------------------------------------------------- suppression


def test_equal_stream_sends_once():
    sent, state = run_stream([packet(t=float(k)) for k in range(10)])
    assert len(sent) == 1
    assert state.suppressed == 9
    assert state.last_sent.t == 0.0


def test_aabbba_transmits_three():
    # values [A,A,B,B,B,A] on one field -> transmissions [A,B,A]
    hrs = [70, 70, 80, 80, 80, 70]
    sent, _ = run_stream([packet(t=float(k), hr=hr) for k, hr in enumerate(hrs)])
    assert [p.hr for p in sent] == [70, 80, 70]


def test_subthreshold_spo2_suppressed():
    sent, _ = run_stream([packet(t=0.0, spo2=96.0), packet(t=1.0, spo2=96.4)])
    assert len(sent) == 1


def test_threshold_spo2_sent():
    sent, _ = run_stream([packet(t=0.0, spo2=96.0), packet(t=1.0, spo2=95.0)])
    assert len(sent) == 2


def test_small_location_move_suppressed_big_sent():
    near = LatLon(LOC.lat, LOC.lon + 0.00005)  # ~5 m
    far = LatLon(LOC.lat, LOC.lon + 0.0002)  # ~20 m
    sent, _ = run_stream([packet(t=0), packet(t=1, loc=near), packet(t=2, loc=far)])
    assert len(sent) == 2
    assert sent[1].location == far


def test_fall_packets_bypass_suppression():
    stream = [packet(t=float(k), activity=4, hr=80.0) for k in range(5)]
    sent, _ = run_stream([packet(t=-1.0)] + stream)
    assert len(sent) == 6  # safety overrides bandwidth saving


def test_exact_mode_matches_literal_oracle():
    rng = random.Random(4)
    stream = []
    hr = 70.0
    for k in range(200):
        if rng.random() < 0.1:
            hr += 0.25  # below the threshold-mode tolerance, still a change
        stream.append(packet(t=float(k), hr=hr))
    sent_exact, _ = run_stream(stream, DeltaConfig(exact=True, fall_bypass=False))
    assert [p.t for p in sent_exact] == [p.t for p in fig2_literal_oracle(stream)]


def test_threshold_equals_literal_on_full_crossings():
    # when every change crosses its threshold, both modes agree
    rng = random.Random(7)
    stream = []
    hr, spo2, act = 70.0, 96.0, 1
    for k in range(500):
        roll = rng.random()
        if roll < 0.03:
            hr += rng.choice([-5.0, 5.0])
        elif roll < 0.05:
            spo2 = max(50.0, spo2 - 2.0)
        elif roll < 0.06:
            act = rng.choice([1, 2, 3])
        stream.append(packet(t=float(k), hr=hr, spo2=spo2, activity=act))
    sent_thresh, _ = run_stream(stream)
    assert [p.t for p in sent_thresh] == [p.t for p in fig2_literal_oracle(stream)]


def test_transmissions_equal_changes_plus_one():
    rng = random.Random(11)
    change_at = sorted(rng.sample(range(1, 1000), 37))
    stream = []
    hr = 70.0
    for k in range(1000):
        if k in change_at:
            hr += 2.0
        stream.append(packet(t=float(k), hr=hr))
    sent, state = run_stream(stream)
    assert state.transmissions == 38  # k changes + the first packet
    assert len(fig2_literal_oracle(stream)) == 38


# ---------------------------------------------------------------- relay loop


def test_relay_waits_for_complete_packet():
    relay = CinRelay("p-demo", location_at=lambda t: LOC)
    assert relay.tick(1.0) is None  # nothing known yet
    relay.ingest_frame({"kind": "activity", "t": 1.0, "state": 2})
    assert relay.tick(2.0) is None  # still no oximeter reading
    relay.ingest_frame({"kind": "oxi", "t": 2.0, "spo2": 95.0, "hr": 70.0, "flags": []})
    sent = relay.tick(3.0)
    assert sent is not None and sent.activity == 2 and sent.spo2 == 95.0
    assert relay.bs_data2 == sent


def test_relay_carries_forward_latest_fragments():
    relay = CinRelay("p-demo", location_at=lambda t: LOC)
    relay.ingest_frame({"kind": "activity", "t": 1.0, "state": 2})
    relay.ingest_frame({"kind": "oxi", "t": 1.0, "spo2": 95.0, "hr": 70.0, "flags": []})
    relay.tick(1.0)
    relay.ingest_frame({"kind": "activity", "t": 2.0, "state": 3})
    sent = relay.tick(2.0)
    assert sent.activity == 3 and sent.spo2 == 95.0  # oxi carried forward


# -------------------------------------------------------------------- uploads


def make_client(server, principal="p-demo", password=PAT_PW, **kw):
    sleeps = []
    client = MhsClient(
        server.base_url, principal, password,
        backoff_base_s=0.01, sleep=sleeps.append, **kw,
    )
    return client, sleeps


def seed_patient(server):
    doc = MhsClient(server.base_url, "dr-a", DOC_PW, sleep=lambda s: None)
    doc.login()
    doc.add_patient({"patient_id": "p-demo", "name": "Demo"})
    return doc


def test_upload_session_acks_batch(mhs):
    seed_patient(mhs)
    client, _ = make_client(mhs)
    ack = client.enter_data([packet(t=float(k)) for k in range(5)])
    assert ack["accepted"] == 5


def test_upload_retries_through_outage_without_duplicates(mhs):
    seed_patient(mhs)
    client, sleeps = make_client(mhs)
    client.login()
    real = client.session.request
    failures = {"left": 2}

    def flaky(method, url, **kw):
        if failures["left"] > 0 and url.endswith("/enterData"):
            failures["left"] -= 1
            raise requests.ConnectionError("injected outage")
        return real(method, url, **kw)

    client.session.request = flaky
    batch = [packet(t=float(k)) for k in range(4)]
    ack = client.enter_data(batch)
    assert ack["accepted"] == 4
    assert len(sleeps) == 2  # two backoffs for two failures
    # redelivery after success dedups server-side
    ack2 = client.enter_data(batch)
    assert ack2["accepted"] == 0 and ack2["deduped"] == 4


def test_backoff_grows_and_caps():
    client = MhsClient("http://127.0.0.1:1", "x", "y", backoff_base_s=20.0,
                       max_tries=5, sleep=lambda s: None)
    sleeps = []
    client.sleep = sleeps.append
    with pytest.raises(TransportError):
        client._raw("GET", "/health", retry=True, authed=False)
    assert sleeps == [20.0, 40.0, 60.0, 60.0]  # doubling, capped at 60s


def test_bad_credentials_terminal(mhs):
    client, sleeps = make_client(mhs, password="wrong")
    with pytest.raises(AuthError):
        client.enter_data([packet(t=0.0)])
    assert sleeps == []  # auth failures never retry


def test_upload_worker_preserves_order(mhs):
    seed_patient(mhs)
    client, _ = make_client(mhs)
    worker = UploadWorker(client)
    worker.submit([packet(t=0.0)])
    worker.submit([packet(t=1.0, hr=80.0)])
    outcomes = worker.close()
    assert [o["ok"] for o in outcomes] == [True, True]


# -------------------------------------------------------------- download info


def test_download_info_cursor_loop(mhs):
    doc = seed_patient(mhs)
    relay = CinRelay("p-demo", location_at=lambda t: LOC)
    client, _ = make_client(mhs)
    assert relay.download_info(client) == []  # no new items, cursor unchanged
    assert relay.info_cursor == 0
    doc.upload_info("p-demo", "recommendation", "walk daily")
    doc.upload_info("p-demo", "prescription", "2x daily")
    items = relay.download_info(client)
    assert [i["kind"] for i in items] == ["recommendation", "prescription"]
    assert relay.download_info(client) == []  # cursor advanced

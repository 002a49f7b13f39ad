"""Run reports: delimited outputs, a plain-text summary, and rendered figures.

Every value written here derives from the virtual clock and seeded state, so
two runs of the same scenario produce byte-identical files. Figures are
rendered with the Agg backend straight to PNG next to the CSVs; matplotlib is
imported lazily so the core pipeline never needs a display stack.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from pathlib import Path

from vitalnet.run import RunResult
from vitalnet.scenario import format_scenario
from vitalnet.synth import AccelTrace, PpgTrace

logger = logging.getLogger(__name__)


def fmt(x) -> str:
    """Stable scalar formatting for delimited output."""
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_report(result: RunResult, report_dir: str | Path, figures: bool = True) -> list[Path]:
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name, header, rows):
        path = out / name
        write_csv(path, header, rows)
        written.append(path)

    emit(
        "windows.csv",
        ["t_start", "max_dev_x", "max_dev_y", "max_dev_z", "dominant", "state", "mode"],
        (
            [e.window.t_start, *e.window.max_abs_dev, e.window.dominant_axis,
             int(e.state), e.mode.value]
            for e in result.emissions
        ),
    )
    emit(
        "readings.csv",
        ["t", "spo2", "hr", "flags"],
        ([r.t, r.spo2, r.hr, "|".join(r.flag_names())] for r in result.readings),
    )
    emit(
        "packets.csv",
        ["t", "activity", "spo2", "hr", "lat", "lon", "sent"],
        (
            [p.t, p.activity, p.spo2, p.hr, p.location.lat, p.location.lon, int(sent)]
            for p, sent in result.composed
        ),
    )
    emit(
        "fabric.csv",
        ["node_id", "slot", "sensor_mas", "controller_mas", "radio_mas",
         "radio_tx_s", "radio_beacon_s", "alive_s"],
        (
            [node_id, result.slot_map.get(node_id),
             c["sensor_mas"], c["controller_mas"], c["radio_mas"],
             c["radio_tx_s"], c["radio_beacon_s"], c["alive_s"]]
            for node_id, c in sorted(result.power.items())
        ),
    )
    emit(
        "alerts.csv",
        ["id", "t", "patient_id", "severity", "cause", "risk", "lat", "lon"],
        (
            [a["id"], a["t"], a["patient_id"], a["severity"], a["cause"],
             a["risk"], a["lat"], a["lon"]]
            for a in result.server_alerts
        ),
    )

    summary = out / "summary.txt"
    summary.write_text(render_summary(result))
    written.append(summary)

    if figures:
        written.extend(render_figures(result, out))
    return written


def render_summary(result: RunResult) -> str:
    config = result.config
    script = config.script
    lines = []
    push = lines.append
    push("scenario run report")
    push("===================")
    push(f"seed {script.seed}, duration {script.total_duration_s:g}s, "
         f"segments {len(script.segments)}")
    push(f"fs_accel {config.fs_accel:g} Hz, fs_ppg {config.fs_ppg:g} Hz, "
         f"slots {config.slots}, exact_delta {config.exact_delta}")
    push("")
    push("classification")
    push("--------------")
    counts = Counter(int(e.state) for e in result.emissions)
    for state in (1, 2, 3, 4):
        push(f"  state {state}: {counts.get(state, 0)} windows")
    confusion = Counter()
    bounds = script.boundaries()
    for e in result.emissions:
        t0, t1 = e.window.t_start, e.window.t_start + 1.0
        if any(t0 < b < t1 for b in bounds[1:-1]):
            continue
        scripted = script.segment_at((t0 + t1) / 2).activity
        confusion[(scripted, int(e.state))] += 1
    push("  scripted -> classified (interior windows):")
    for (scripted, got), n in sorted(confusion.items()):
        marker = "" if scripted == got else "   <-- mismatch"
        push(f"    {scripted} -> {got}: {n}{marker}")
    push("")
    push("relay")
    push("-----")
    push(f"  packets composed: {len(result.composed)}")
    push(f"  transmissions:    {result.transmissions}")
    push(f"  suppressed:       {result.suppressed}")
    ratio = result.suppressed / len(result.composed) if result.composed else 0.0
    push(f"  suppression:      {100 * ratio:.1f}%")
    push("")
    push("fabric")
    push("------")
    m = result.fabric_metrics
    push(f"  collisions: {m.get('collisions', 0)}")
    push(f"  drops:      {m.get('drops', 0)}")
    push(f"  delivered:  {m.get('delivered', 0)} frames")
    for node_id, c in sorted(result.power.items()):
        alive = c["alive_s"] or 1.0
        duty = (c["radio_tx_s"] + c["radio_beacon_s"]) / alive
        total = c["sensor_mas"] + c["controller_mas"] + c["radio_mas"]
        push(f"  {node_id}: charge {total:.1f} mA*s, radio duty {100 * duty:.2f}%")
    push("")
    push("server")
    push("------")
    push(f"  stored packets: {len(result.server_packets)}")
    push(f"  alerts:         {len(result.server_alerts)}")
    for a in result.server_alerts:
        push(f"    t={a['t']:g} {a['severity']} ({a['cause']})")
    push(f"  info items downloaded: {len(result.info_items)}")
    push("")
    push("invariants")
    push("----------")
    if result.invariant_failures:
        for failure in result.invariant_failures:
            push(f"  FAIL {failure}")
    else:
        push("  all held")
    push("")
    push("scenario script")
    push("---------------")
    lines.extend("  " + line for line in format_scenario(script).splitlines())
    return "\n".join(lines) + "\n"


def render_figures(result: RunResult, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []

    def save(fig, name):
        path = out / name
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        written.append(path)

    script = result.config.script
    # activity timeline: scripted segments vs classified windows
    fig, ax = plt.subplots(figsize=(9, 3), dpi=110)
    if result.emissions:
        ts = [e.window.t_start for e in result.emissions]
        states = [int(e.state) for e in result.emissions]
        ax.step(ts, states, where="post", label="classified", lw=1.8)
    bounds = script.boundaries()
    scripted_t, scripted_s = [], []
    for i, seg in enumerate(script.segments):
        scripted_t += [bounds[i], bounds[i + 1]]
        scripted_s += [seg.activity, seg.activity]
    ax.plot(scripted_t, scripted_s, ls="--", c="gray", label="scripted")
    ax.set_yticks([1, 2, 3, 4], ["rest", "walk", "run", "fall"])
    ax.set_xlabel("t [s]")
    ax.set_title("activity classification")
    ax.legend(loc="upper left")
    fig.tight_layout()
    save(fig, "activity_timeline.png")

    # vitals trend with transmissions and alerts
    fig, axes = plt.subplots(2, 1, figsize=(9, 4.5), dpi=110, sharex=True)
    if result.composed:
        ts = [p.t for p, _ in result.composed]
        axes[0].plot(ts, [p.spo2 for p, _ in result.composed], lw=1.5)
        axes[1].plot(ts, [p.hr for p, _ in result.composed], lw=1.5, c="tab:red")
        sent_t = [p.t for p, sent in result.composed if sent]
        for ax, key in ((axes[0], "spo2"), (axes[1], "hr")):
            vals = {p.t: getattr(p, key) for p, _ in result.composed}
            ax.plot(sent_t, [vals[t] for t in sent_t], "o", ms=3, c="black",
                    label="transmitted")
    for a in result.server_alerts:
        for ax in axes:
            ax.axvline(a["t"], c="orange", alpha=0.6, lw=1)
    axes[0].set_ylabel("SpO2 [%]")
    axes[1].set_ylabel("HR [bpm]")
    axes[1].set_xlabel("t [s]")
    axes[0].set_title("vitals relayed to server (lines: alerts)")
    axes[0].legend(loc="lower left")
    fig.tight_layout()
    save(fig, "vitals.png")

    # per-node charge split
    fig, ax = plt.subplots(figsize=(7, 3.2), dpi=110)
    nodes = sorted(result.power)
    xs = range(len(nodes))
    sensor = [result.power[n]["sensor_mas"] for n in nodes]
    controller = [result.power[n]["controller_mas"] for n in nodes]
    radio = [result.power[n]["radio_mas"] for n in nodes]
    ax.bar(xs, controller, label="controller 40 mA")
    ax.bar(xs, radio, bottom=controller, label="radio 38 mA (duty-cycled)")
    tops = [c + r for c, r in zip(controller, radio)]
    ax.bar(xs, sensor, bottom=tops, label="sensor 0.023 mA")
    ax.set_xticks(list(xs), nodes)
    ax.set_ylabel("charge [mA*s]")
    ax.set_title("power ledger")
    ax.legend()
    fig.tight_layout()
    save(fig, "power.png")
    return written


def export_accel_csv(trace: AccelTrace, path: str | Path) -> None:
    # repr keeps full float precision so offline replay is bit-exact
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z"])
        for i in range(len(trace)):
            writer.writerow([repr(float(trace.t[i])), repr(float(trace.x[i])),
                             repr(float(trace.y[i])), repr(float(trace.z[i]))])


def export_ppg_csv(trace: PpgTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"# i_in1={trace.i_in1!r} i_in2={trace.i_in2!r} fs={trace.fs!r}"])
        writer.writerow(["t", "i1", "i2"])
        for i in range(len(trace)):
            writer.writerow([repr(float(trace.t[i])), repr(float(trace.i1[i])),
                             repr(float(trace.i2[i]))])

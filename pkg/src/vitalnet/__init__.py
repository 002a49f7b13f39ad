"""Body-sensor-network health monitoring, desk scale.

Simulated wearable nodes (triaxial accelerometer, dual-wavelength pulse
oximeter) feed a TDMA-scheduled virtual radio fabric; a per-patient relay
suppresses unchanged readings and uploads the rest to a record server that
scores risk and streams alerts to clinicians.
"""

__version__ = "0.1.0"

from vitalnet.scenario import ScenarioScript, Segment, parse_scenario
from vitalnet.synth import OpticalConstants, gen_accel_trace, gen_ppg

__all__ = [
    "ScenarioScript",
    "Segment",
    "parse_scenario",
    "OpticalConstants",
    "gen_accel_trace",
    "gen_ppg",
]

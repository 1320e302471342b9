"""Deterministic longitudinal simulation of the three-vehicle braking scenario.

Two lanes: the ego vehicle (EV) cruises in the left lane; the target vehicle
(TV) follows a preceding vehicle (PV) in the right lane. The PV brakes at a
trigger point, the TV comes under pressure and wants the left lane, and the
EV brakes iff the prediction stack anticipates the left lane change. The
with/without-prediction pair of runs demonstrates the anticipation benefit.

Dynamics are constant-acceleration per tick with an exact stop (no reversing
and no backward creep in the stopping tick). The lane is a discrete flag that
flips once the TV has been committed to the change for the configured
crossing duration.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

from .features import (
    DEFAULT_PRESET,
    FeatureVector,
    KinematicSnapshot,
    compute_ttc,
    features_from_snapshot,
)
from .protocol import actuation_for
from .table import PredictionTable, lookup

LEFT, RIGHT = "left", "right"


@dataclass
class VehicleState:
    vid: str
    lane: str
    s: float
    v: float
    a: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    """All scenario knobs; every field round-trips through the key=value file."""

    tick_dt: float = 1.0 / 15.0
    duration_s: float = 20.0
    perception_rate_hz: float = 15.0
    prediction_enabled: bool = True
    rng_seed: int = 0
    vehicle_length: float = 4.0
    a_max: float = 8.0

    ev_s0: float = -10.0
    ev_v0: float = 10.0
    tv_s0: float = 0.0
    tv_v0: float = 10.0
    pv_s0: float = 50.0
    pv_v0: float = 10.0

    pv_brake_trigger_s: float = 80.0
    pv_brake_decel: float = 3.0
    pv_final_speed: float = 2.0

    tv_urgency_ttc: float = 6.0
    # 1.5x the TV's emergency stopping distance from its initial speed.
    tv_gap_threshold: float = 12.5
    tv_crossing_duration: float = 1.5
    tv_emergency_ttc: float = 1.5
    tv_emergency_clear_ttc: float = 3.0
    tv_emergency_decel: float = 6.0

    ev_brake_decel: float = 3.5

    def __post_init__(self) -> None:
        if self.tick_dt <= 0:
            raise ValueError("tick_dt must be positive")
        if self.perception_rate_hz <= 0:
            raise ValueError("perception_rate_hz must be positive")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


_CONFIG_BOOL_FIELDS = ("prediction_enabled",)
_CONFIG_INT_FIELDS = ("rng_seed",)


def save_scenario_config(config: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in config.to_dict().items():
            fh.write(f"{key}={value!r}\n" if isinstance(value, float) else f"{key}={value}\n")


def load_scenario_config(path) -> ScenarioConfig:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            text = text.strip()
            if key in _CONFIG_BOOL_FIELDS:
                values[key] = text.lower() in ("1", "true", "yes", "on")
            elif key in _CONFIG_INT_FIELDS:
                values[key] = int(text)
            else:
                values[key] = float(text)
    return ScenarioConfig(**values)


def scenario_config_from_dict(data: Mapping) -> ScenarioConfig:
    return ScenarioConfig(**dict(data))


# --- integration --------------------------------------------------------------

def step_vehicle(state: VehicleState, dt: float, a_max: float) -> None:
    """Advance one tick under constant acceleration with an exact stop."""
    a = max(-a_max, min(a_max, state.a))
    if a < 0 and state.v + a * dt <= 0:
        if state.v > 0:
            tau = state.v / -a
            state.s += state.v * tau + 0.5 * a * tau * tau
        state.v = 0.0
    else:
        state.s += state.v * dt + 0.5 * a * dt * dt
        state.v = max(0.0, state.v + a * dt)
    state.a = a


# --- vehicle policies ----------------------------------------------------------

class PVController:
    """Cruise, then brake down to the final speed once past the trigger point."""

    def __init__(self, config: ScenarioConfig):
        self._c = config

    def update(self, pv: VehicleState, dt: float) -> None:
        c = self._c
        if pv.s >= c.pv_brake_trigger_s and pv.v > c.pv_final_speed:
            pv.a = max(-c.pv_brake_decel, (c.pv_final_speed - pv.v) / dt)
        else:
            pv.a = 0.0


class TVController:
    """Keep lane; change left when pressured and the merge gap is open;
    emergency-brake (with hysteresis) when the preceding TTC collapses."""

    KEEPING, CHANGING, DONE = "keeping", "changing", "done"

    def __init__(self, config: ScenarioConfig):
        self._c = config
        self.phase = self.KEEPING
        self.change_begin_t: float | None = None
        self.crossing_t: float | None = None
        self._emergency = False

    def update(self, t: float, tv: VehicleState, ev: VehicleState, pv: VehicleState) -> None:
        c = self._c
        if self.phase == self.CHANGING:
            tv.a = 0.0
            if t - self.change_begin_t >= c.tv_crossing_duration:
                tv.lane = LEFT
                self.crossing_t = t
                self.phase = self.DONE
            return
        if self.phase == self.DONE:
            tv.a = 0.0
            return

        gap_ahead = pv.s - tv.s - c.vehicle_length
        ttc = compute_ttc(KinematicSnapshot(max(gap_ahead, 0.0), tv.v, pv.v))
        urgent = 0.0 <= ttc < c.tv_urgency_ttc
        merge_gap = tv.s - ev.s - c.vehicle_length
        if urgent and merge_gap >= c.tv_gap_threshold:
            self.phase = self.CHANGING
            self.change_begin_t = t
            self._emergency = False
            tv.a = 0.0
            return
        if self._emergency and (not 0.0 <= ttc < c.tv_emergency_clear_ttc):
            self._emergency = False
        if not self._emergency and 0.0 <= ttc < c.tv_emergency_ttc:
            self._emergency = True
        tv.a = -c.tv_emergency_decel if self._emergency and tv.v > 0 else 0.0


class EVController:
    """Cruise until a BRAKE command arrives, then decelerate to a stop.

    BRAKE latches: later CRUISE commands cannot release the brake before
    standstill, which avoids oscillation if predictions flicker.
    """

    def __init__(self, config: ScenarioConfig):
        self._c = config
        self._braking = False
        self.brake_onset_t: float | None = None

    def update(self, t: float, ev: VehicleState, command: str | None) -> None:
        if command == "BRAKE" and not self._braking:
            self._braking = True
            self.brake_onset_t = t
        ev.a = -self._c.ev_brake_decel if self._braking and ev.v > 0 else 0.0


# --- transports -----------------------------------------------------------------

class InProcessTransport:
    """Direct table lookup standing in for the deployed channel."""

    def __init__(self, table: PredictionTable):
        self._table = table
        self.latencies: list[float] = []

    def predict(self, features: FeatureVector, timestamp_ms: int):
        started = time.perf_counter()
        pred = lookup(self._table, features)
        command = actuation_for(pred.intention)
        self.latencies.append(time.perf_counter() - started)
        return pred.intention, (pred.p_llc, pred.p_lk, pred.p_rlc), command

    def close(self) -> None:
        pass


class SocketTransport:
    """Round trip through a live prediction server plus its actuation stream."""

    def __init__(self, client, actuation_listener):
        self._client = client
        self._actuation = actuation_listener
        self.latencies: list[float] = []

    def predict(self, features: FeatureVector, timestamp_ms: int):
        started = time.perf_counter()
        result = self._client.request(features, timestamp_ms)
        command = self._actuation.read_command()
        self.latencies.append(time.perf_counter() - started)
        msg = result.prediction
        return msg.intention, (msg.p_llc, msg.p_lk, msg.p_rlc), command

    def close(self) -> None:
        self._client.close()
        self._actuation.close()


# --- trace ----------------------------------------------------------------------

_TRACE_COLUMNS = (
    "t",
    "ev_s", "ev_v", "ev_a", "ev_lane",
    "tv_s", "tv_v", "tv_a", "tv_lane",
    "pv_s", "pv_v", "pv_a", "pv_lane",
    "features", "intention", "actuation",
)


@dataclass(frozen=True)
class TickRecord:
    t: float
    ev_s: float
    ev_v: float
    ev_a: float
    ev_lane: str
    tv_s: float
    tv_v: float
    tv_a: float
    tv_lane: str
    pv_s: float
    pv_v: float
    pv_a: float
    pv_lane: str
    features: str
    intention: str
    actuation: str


@dataclass(frozen=True)
class ScenarioTrace:
    config: ScenarioConfig
    records: tuple[TickRecord, ...]

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# lanewatch-trace v1\n")
            fh.write(f"# config={json.dumps(self.config.to_dict(), sort_keys=True)}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_TRACE_COLUMNS)
            for r in self.records:
                writer.writerow(
                    [repr(r.t)]
                    + [repr(r.ev_s), repr(r.ev_v), repr(r.ev_a), r.ev_lane]
                    + [repr(r.tv_s), repr(r.tv_v), repr(r.tv_a), r.tv_lane]
                    + [repr(r.pv_s), repr(r.pv_v), repr(r.pv_a), r.pv_lane]
                    + [r.features, r.intention, r.actuation]
                )

    @classmethod
    def load_csv(cls, path) -> "ScenarioTrace":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            magic = fh.readline().strip()
            if magic != "# lanewatch-trace v1":
                raise ValueError(f"{path}: not a lanewatch trace file")
            config_line = fh.readline().strip()
            if not config_line.startswith("# config="):
                raise ValueError(f"{path}: missing config line")
            config = scenario_config_from_dict(json.loads(config_line[len("# config=") :]))
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != _TRACE_COLUMNS:
                raise ValueError(f"{path}: unexpected trace header {header}")
            records = []
            for row in reader:
                if not row:
                    continue
                records.append(
                    TickRecord(
                        t=float(row[0]),
                        ev_s=float(row[1]), ev_v=float(row[2]), ev_a=float(row[3]), ev_lane=row[4],
                        tv_s=float(row[5]), tv_v=float(row[6]), tv_a=float(row[7]), tv_lane=row[8],
                        pv_s=float(row[9]), pv_v=float(row[10]), pv_a=float(row[11]), pv_lane=row[12],
                        features=row[13], intention=row[14], actuation=row[15],
                    )
                )
        return cls(config=config, records=tuple(records))


# --- metrics --------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioMetrics:
    anticipation_horizon: float | None
    ev_brake_lead: float | None
    first_llc_time: float | None
    crossing_time: float | None
    ev_brake_onset_time: float | None
    tv_emergency_onset_time: float | None
    tv_min_accel: float
    min_gap_tv_ev: float | None
    min_gap_tv_pv: float | None
    collision_flag: bool
    ticks: int
    wall_time_s: float | None = None
    loop_rate_hz: float | None = None
    latency_mean_s: float | None = None
    latency_p99_s: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def save_metrics(metrics: ScenarioMetrics, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in metrics.to_dict().items():
            if value is None:
                continue
            fh.write(f"{key}={value!r}\n" if isinstance(value, float) else f"{key}={value}\n")


def load_metrics(path) -> dict:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, text = line.partition("=")
            if key in ("collision_flag",):
                values[key] = text == "True"
            elif key in ("ticks",):
                values[key] = int(text)
            else:
                values[key] = float(text)
    return values


def _same_lane_gap(lead_s: float, follow_s: float, length: float) -> float:
    return lead_s - follow_s - length


def metrics_from_trace(trace: ScenarioTrace) -> ScenarioMetrics:
    """Recompute every trace-derivable metric (the report path uses this too)."""
    c = trace.config
    first_llc = None
    crossing = None
    brake_onset = None
    emergency_onset = None
    tv_min_accel = math.inf
    min_gap_tv_ev = None
    min_gap_tv_pv = None
    collision = False
    for r in trace.records:
        if first_llc is None and r.intention == "LLC":
            first_llc = r.t
        if crossing is None and r.tv_lane == LEFT:
            crossing = r.t
        if brake_onset is None and r.ev_a < 0:
            brake_onset = r.t
        if emergency_onset is None and r.tv_a <= -c.tv_emergency_decel + 1e-9:
            emergency_onset = r.t
        tv_min_accel = min(tv_min_accel, r.tv_a)
        pairs = [
            (r.tv_s, r.tv_lane, r.ev_s, r.ev_lane, "tv_ev"),
            (r.tv_s, r.tv_lane, r.pv_s, r.pv_lane, "tv_pv"),
        ]
        for s1, lane1, s2, lane2, tag in pairs:
            if lane1 != lane2:
                continue
            gap = _same_lane_gap(max(s1, s2), min(s1, s2), c.vehicle_length)
            if tag == "tv_ev":
                min_gap_tv_ev = gap if min_gap_tv_ev is None else min(min_gap_tv_ev, gap)
            else:
                min_gap_tv_pv = gap if min_gap_tv_pv is None else min(min_gap_tv_pv, gap)
            if gap <= 0:
                collision = True
    anticipation = None
    if first_llc is not None and crossing is not None:
        anticipation = crossing - first_llc
    brake_lead = None
    if brake_onset is not None and crossing is not None:
        brake_lead = crossing - brake_onset
    return ScenarioMetrics(
        anticipation_horizon=anticipation,
        ev_brake_lead=brake_lead,
        first_llc_time=first_llc,
        crossing_time=crossing,
        ev_brake_onset_time=brake_onset,
        tv_emergency_onset_time=emergency_onset,
        tv_min_accel=tv_min_accel if trace.records else 0.0,
        min_gap_tv_ev=min_gap_tv_ev,
        min_gap_tv_pv=min_gap_tv_pv,
        collision_flag=collision,
        ticks=len(trace.records),
    )


# --- main loop ------------------------------------------------------------------

def _perceive(tv: VehicleState, others: Sequence[VehicleState], length: float,
              t: float) -> KinematicSnapshot:
    """The TV's view of its preceding vehicle (same lane, ahead, nearest)."""
    ahead = [o for o in others if o.lane == tv.lane and o.s > tv.s]
    if not ahead:
        return KinematicSnapshot(math.inf, tv.v, tv.v, t)
    lead = min(ahead, key=lambda o: o.s)
    return KinematicSnapshot(max(lead.s - tv.s - length, 0.0), tv.v, lead.v, t)


def run_scenario(config: ScenarioConfig, transport=None,
                 preset: Mapping[str, str] = DEFAULT_PRESET) -> tuple[ScenarioTrace, ScenarioMetrics]:
    """Run the full perception -> prediction -> actuation -> dynamics loop.

    transport must expose predict(features, timestamp_ms) -> (intention,
    (p_llc, p_lk, p_rlc), actuation_command); it is required when
    config.prediction_enabled and ignored otherwise.
    """
    if config.prediction_enabled and transport is None:
        raise ValueError("prediction is enabled but no transport was provided")
    ev = VehicleState("EV", LEFT, config.ev_s0, config.ev_v0)
    tv = VehicleState("TV", RIGHT, config.tv_s0, config.tv_v0)
    pv = VehicleState("PV", RIGHT, config.pv_s0, config.pv_v0)
    ev_ctrl = EVController(config)
    tv_ctrl = TVController(config)
    pv_ctrl = PVController(config)

    n_ticks = round(config.duration_s / config.tick_dt)
    perception_every = max(1, round(1.0 / (config.tick_dt * config.perception_rate_hz)))
    records = []
    last_command: str | None = None
    wall_start = time.perf_counter()
    for k in range(n_ticks):
        t = k * config.tick_dt
        features_token = ""
        intention = ""
        actuation = ""
        if k % perception_every == 0:
            snapshot = _perceive(tv, (ev, pv), config.vehicle_length, t)
            features = features_from_snapshot(snapshot, preset)
            features_token = features.token()
            if config.prediction_enabled:
                intention, _, command = transport.predict(features, int(t * 1000))
                last_command = command
                actuation = command
        ev_ctrl.update(t, ev, last_command if config.prediction_enabled else None)
        tv_ctrl.update(t, tv, ev, pv)
        pv_ctrl.update(pv, config.tick_dt)
        records.append(
            TickRecord(
                t=t,
                ev_s=ev.s, ev_v=ev.v, ev_a=ev.a, ev_lane=ev.lane,
                tv_s=tv.s, tv_v=tv.v, tv_a=tv.a, tv_lane=tv.lane,
                pv_s=pv.s, pv_v=pv.v, pv_a=pv.a, pv_lane=pv.lane,
                features=features_token, intention=intention, actuation=actuation,
            )
        )
        for state in (ev, tv, pv):
            step_vehicle(state, config.tick_dt, config.a_max)
    wall = time.perf_counter() - wall_start

    trace = ScenarioTrace(config=config, records=tuple(records))
    metrics = metrics_from_trace(trace)
    latencies = sorted(getattr(transport, "latencies", []) or [])
    if latencies:
        p99 = latencies[min(len(latencies) - 1, int(math.ceil(0.99 * len(latencies))) - 1)]
        metrics = replace(
            metrics,
            wall_time_s=wall,
            loop_rate_hz=len(records) / wall if wall > 0 else None,
            latency_mean_s=sum(latencies) / len(latencies),
            latency_p99_s=p99,
        )
    else:
        metrics = replace(metrics, wall_time_s=wall,
                          loop_rate_hz=len(records) / wall if wall > 0 else None)
    return trace, metrics

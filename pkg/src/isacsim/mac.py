"""Discrete-event MAC simulation: the C/M/B mode machine and packet traffic.

A device idles in C (communication), hops to M (monostatic capture, transmit
separator enabled) whenever it starts transmitting anything — DATA or the ACK
it owes a peer — and drops back to C a short timer after the transmission
ends. Receiving a peer's packet from C opens a B (bistatic capture) episode
that closes when the reception completes. The separator must be engaged
exactly while in M: engaging it during a reception shreds the incoming
packet, which is the whole point of the state machine.

Channel access is a deliberately small CSMA abstraction: one shared medium,
a device defers while the medium is busy and retries after a random number
of 9 us backoff slots. Packet success is a logistic function of link SNR
with per-MCS midpoints documented in ``success_probability``.

Randomness is split into two independent streams — one for everything that
affects communications (backoff, loss draws), one for sensing-side noise —
so that a run with sensing disabled consumes the communications stream
identically and produces bit-identical delay/loss statistics.
"""

import csv as _csv
import heapq
from collections import namedtuple
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import cancel
from .channel import los_gain
from .estimate import TxSchedule
from .ofdm import MAX_FRAME_S, MCS_TABLE, RadioConfig, packet_duration
from .sigcore import power_to_dbm, dbm_to_power


class MacState(Enum):
    C = "C"
    M = "M"
    B = "B"


EVENT_KINDS = (
    "TxStart",
    "TxComplete",
    "RxStart",
    "RxComplete",
    "TimerExpiry",
    "CalibrationDue",
)

# actions emitted by the transition table
ENABLE_SEPARATOR = "enable-separator"
DISABLE_SEPARATOR = "disable-separator"
ARM_TIMER = "arm-timer"
CONTINUE_BURST = "continue-burst"
BISTATIC_CAPTURE = "bistatic-capture"
END_CAPTURE = "end-capture"
DEFER_BISTATIC = "defer-bistatic"
CALIBRATE = "calibrate-dummy-load"
VIOLATION = "protocol-violation"


@dataclass(frozen=True)
class MacEvent:
    kind: str
    payload: str = ""


_TRANSITIONS = {
    (MacState.C, "TxStart"): (MacState.M, ENABLE_SEPARATOR),
    (MacState.M, "TxStart"): (MacState.M, CONTINUE_BURST),
    (MacState.M, "TxComplete"): (MacState.M, ARM_TIMER),
    (MacState.M, "TimerExpiry"): (MacState.C, DISABLE_SEPARATOR),
    (MacState.C, "RxStart"): (MacState.B, BISTATIC_CAPTURE),
    (MacState.B, "RxComplete"): (MacState.C, END_CAPTURE),
    # a reception that lands while the device is still in its own post-tx
    # window is handled for communications but produces no bistatic capture;
    # (C, RxComplete) is the tail of such a reception when the window closed
    # while it was still in the air
    (MacState.M, "RxStart"): (MacState.M, DEFER_BISTATIC),
    (MacState.M, "RxComplete"): (MacState.M, DEFER_BISTATIC),
    (MacState.C, "RxComplete"): (MacState.C, DEFER_BISTATIC),
    (MacState.C, "CalibrationDue"): (MacState.C, CALIBRATE),
}


def step(state, event):
    """One deterministic transition. Undefined pairs leave the state alone
    and report a protocol violation instead of raising."""
    kind = event.kind if isinstance(event, MacEvent) else str(event)
    if kind not in EVENT_KINDS:
        raise ValueError(f"unknown MAC event kind {kind!r}")
    new_state, action = _TRANSITIONS.get((state, kind), (state, VIOLATION))
    return new_state, action


def success_probability(snr_db, mcs):
    """Logistic packet-success curve.

    Midpoint grows with spectral efficiency: 2 + 4 * (bits/symbol * coding
    rate) dB, width 1.5 dB — e.g. 6 dB for qpsk-1/2, 20 dB for qam64-3/4.
    """
    eff = mcs.bits_per_symbol * mcs.coding_rate
    midpoint = 2.0 + 4.0 * eff
    return 1.0 / (1.0 + np.exp(-(snr_db - midpoint) / 1.5))


# ---------------------------------------------------------------------------
# traffic


@dataclass
class TrafficModel:
    """Parametric packet-arrival process (renewal/burst, seeded)."""

    kind: str
    rate_hz: float = 40.0
    bursts_per_s: float = 30.0
    burst_low: int = 1
    burst_high: int = 8
    intra_gap_s: float = 0.002
    jitter_s: float = 0.003
    median_gap_s: float = 0.02
    gap_sigma: float = 1.2
    gaming_burst_high: int = 3
    gaming_intra_gap_s: float = 0.006
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("regular", "streaming", "gaming"):
            raise ValueError(f"unknown traffic kind {self.kind!r}")

    @classmethod
    def regular(cls, rate_hz=40.0, seed=0):
        return cls("regular", rate_hz=rate_hz, seed=seed)

    @classmethod
    def streaming(cls, seed=0, **kw):
        return cls("streaming", seed=seed, **kw)

    @classmethod
    def gaming(cls, seed=0, **kw):
        return cls("gaming", seed=seed, **kw)


def generate_traffic(model, duration, seed=None, start=0.0):
    """Seeded packet schedule for one device.

    regular: exact constant spacing. streaming: burst anchors at
    ``bursts_per_s`` with jitter, 1-8 packets per burst a couple of
    milliseconds apart. gaming: short bursts separated by heavy-tailed
    lognormal pauses (gap coefficient of variation > 1).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(model.seed if seed is None else seed)
    times = []
    if model.kind == "regular":
        n = int(np.floor(duration * model.rate_hz - 1e-9)) + 1
        times = start + np.arange(n) / model.rate_hz
        return TxSchedule(times)
    if model.kind == "streaming":
        n_bursts = int(np.ceil(duration * model.bursts_per_s))
        for k in range(n_bursts):
            anchor = k / model.bursts_per_s + rng.uniform(0.0, model.jitter_s)
            size = int(rng.integers(model.burst_low, model.burst_high + 1))
            for i in range(size):
                t = anchor + i * model.intra_gap_s
                if t < duration:
                    times.append(start + t)
    else:  # gaming
        t = rng.lognormal(np.log(model.median_gap_s), model.gap_sigma)
        while t < duration:
            size = int(rng.integers(1, model.gaming_burst_high + 1))
            for i in range(size):
                tt = t + i * model.gaming_intra_gap_s
                if tt < duration:
                    times.append(start + tt)
            t = (times[-1] - start) + rng.lognormal(
                np.log(model.median_gap_s), model.gap_sigma
            )
    return TxSchedule(np.asarray(times))


# ---------------------------------------------------------------------------
# scenario


@dataclass
class MacDevice:
    device_id: str
    pos: tuple = (0.0, 0.0, 0.0)
    heading_deg: float = 0.0
    traffic: TrafficModel = None
    peer_id: str = None
    mcs: str = "qpsk-1/2"


LogEntry = namedtuple("LogEntry", "time device event state_before state_after action")
CsiRecord = namedtuple("CsiRecord", "time kind device tx_device values")


@dataclass
class ScenarioResult:
    log: list
    csi_records: list
    stats: dict
    violations: list
    n_events: int = 0
    invariant_checks: int = 0
    separator_mismatches: int = 0
    separator_penalty_db: float = 0.0


class _DeviceCtx:
    __slots__ = ("dev", "state", "separator_on", "m_timer_deadline", "mcs",
                 "last_tx_complete", "m_entered_at")

    def __init__(self, dev):
        self.dev = dev
        self.state = MacState.C
        self.separator_on = False
        self.m_timer_deadline = None
        if dev.mcs not in MCS_TABLE:
            raise ValueError(f"unknown MCS {dev.mcs!r}")
        self.mcs = MCS_TABLE[dev.mcs]
        self.last_tx_complete = None
        self.m_entered_at = None


def measure_forced_separator_penalty(cfg=None, noise_floor_dbm=-85.0,
                                     clean_snr_db=15.0, seed=0):
    """How many dB a frozen separator costs a packet it was never meant for.

    Calibrates a separator on synthetic leakage, then passes a clean remote
    packet through its correction chain and compares matched-template SNRs.
    """
    cfg = cfg or RadioConfig()
    rng = np.random.default_rng([seed, 91])
    from .ofdm import training_burst
    from .sigcore import SampleBuffer, avg_power

    burst = training_burst(cfg, n_extra=8)
    tx = np.asarray(burst.samples)
    tx = tx * np.sqrt(dbm_to_power(5.0) / avg_power(tx))
    tx_buf = SampleBuffer(tx, cfg.sample_rate)
    leak = cancel.make_leakage(rng)
    state = cancel.CancellatorState().to_dummy_load()
    state = cancel.calibrate(state, tx_buf, leak,
                             noise_floor_dbm=noise_floor_dbm, rng=rng)
    state = state.to_antenna()
    noise_power = dbm_to_power(noise_floor_dbm)
    template = tx
    remote_gain = np.sqrt(noise_power * 10 ** (clean_snr_db / 10.0)
                          / avg_power(template))
    clean, separated = cancel.measure_separator_harm(
        SampleBuffer(template, cfg.sample_rate), state, remote_gain,
        noise_floor_dbm, rng,
    )
    return float(clean - separated)


def run_scenario(devices, geometry, traffic, duration, seed=0, cfg=None,
                 timer_s=1e-3, sifs_s=16e-6, n_symbols=20, ack_symbols=2,
                 noise_floor_dbm=-85.0, tx_power_dbm=15.0, link_snr_db=None,
                 sensing_enabled=True, force_separator=False,
                 collect_csi=False, max_csi=256, cal_interval_s=None,
                 log=True, backoff_slot_s=9e-6, max_events=None):
    """Event-driven run of the full scenario.

    ``geometry`` may be None (no CSI materialization) or a
    channel.ScenarioGeometry whose targets are used to synthesize actual CSI
    values when ``collect_csi`` is on. ``traffic`` is the default
    TrafficModel for devices that don't carry their own. Paired runs that
    differ only in ``sensing_enabled`` produce identical delay/loss numbers;
    ``force_separator`` models the incompatible always-on separator and
    charges its measured SNR penalty to every reception.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not devices:
        raise ValueError("need at least one device")
    ids = [d.device_id for d in devices]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate device ids")
    cfg = cfg or RadioConfig()

    ctxs = {d.device_id: _DeviceCtx(d) for d in devices}
    for i, d in enumerate(devices):
        if d.peer_id is None and len(devices) > 1:
            d.peer_id = devices[(i + 1) % len(devices)].device_id
        if d.peer_id is not None and d.peer_id not in ctxs:
            raise ValueError(f"unknown peer {d.peer_id!r}")

    rng_comms = np.random.default_rng([seed, 17])
    rng_sense = np.random.default_rng([seed, 29])

    penalty_db = 0.0
    if force_separator:
        penalty_db = measure_forced_separator_penalty(
            cfg, noise_floor_dbm, seed=seed)

    def link_snr(tx_dev, rx_dev):
        if link_snr_db is not None:
            return float(link_snr_db)
        d = float(np.linalg.norm(np.asarray(tx_dev.pos, dtype=float)
                                 - np.asarray(rx_dev.pos, dtype=float)))
        amp = los_gain(max(d, 0.1), cfg, tx_power=dbm_to_power(tx_power_dbm))
        return power_to_dbm(abs(amp) ** 2) - noise_floor_dbm

    data_duration = packet_duration(n_symbols, cfg)
    ack_duration = packet_duration(ack_symbols, cfg)

    heap = []
    seq = 0

    def push(t, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, payload))
        seq += 1

    for d in devices:
        model = d.traffic if d.traffic is not None else traffic
        if model is None:
            raise ValueError(f"device {d.device_id!r} has no traffic model")
        sched = generate_traffic(
            model, duration,
            seed=np.random.default_rng([seed, ids.index(d.device_id), 5]
                                       ).integers(0, 2**32),
        )
        for t in sched.times:
            push(float(t), "pkt-due", (d.device_id, float(t), "DATA"))
        if cal_interval_s:
            push(cal_interval_s, "calibration", (d.device_id,))

    entries = []
    violations = []
    csi_records = []
    delays = []
    successes = []
    rx_snrs = []
    medium_free_at = 0.0
    n_events = 0
    invariant_checks = 0
    separator_mismatches = 0

    def record(t, dev_id, event_kind, before, after, action):
        if log:
            entries.append(LogEntry(t, dev_id, event_kind, before.value,
                                    after.value, action))
        if action == VIOLATION:
            violations.append(LogEntry(t, dev_id, event_kind, before.value,
                                       after.value, action))

    def apply_step(t, ctx, event_kind, payload=""):
        nonlocal separator_mismatches, invariant_checks
        before = ctx.state
        after, action = step(before, MacEvent(event_kind, payload))
        ctx.state = after
        if action == ENABLE_SEPARATOR:
            ctx.separator_on = True
            ctx.m_entered_at = t
            ctx.m_timer_deadline = None
        elif action == CONTINUE_BURST:
            ctx.m_timer_deadline = None  # re-armed at this burst's TxComplete
        elif action == DISABLE_SEPARATOR:
            ctx.separator_on = False
            ctx.m_timer_deadline = None
        elif action == ARM_TIMER:
            ctx.m_timer_deadline = t + timer_s
            ctx.last_tx_complete = t
            push(ctx.m_timer_deadline, "timer",
                 (ctx.dev.device_id, ctx.m_timer_deadline))
        record(t, ctx.dev.device_id, event_kind, before, after, action)
        invariant_checks += 1
        if ctx.separator_on != (ctx.state == MacState.M):
            separator_mismatches += 1
        return action

    def synth_csi(t, kind, rx_dev, tx_dev):
        if not collect_csi or len(csi_records) >= max_csi:
            return
        values = None
        if geometry is not None and geometry.targets:
            from .channel import ScenarioGeometry, synthesize_csi_series
            g = ScenarioGeometry(
                tx_pos=tx_dev.pos, rx_pos=rx_dev.pos,
                targets=geometry.targets,
                tx_power_dbm=geometry.tx_power_dbm,
                n_antennas=geometry.n_antennas,
                include_los=kind == "bi",
            )
            values = synthesize_csi_series(
                g, cfg, np.array([t]), snr_db=30.0, rng=rng_sense)[0]
        csi_records.append(CsiRecord(t, kind, rx_dev.device_id,
                                     tx_dev.device_id, values))

    while heap:
        t, _, kind, payload = heapq.heappop(heap)
        n_events += 1
        if max_events is not None and n_events > max_events:
            break

        if kind == "pkt-due":
            dev_id, sched_t, ptype = payload
            ctx = ctxs[dev_id]
            if t < medium_free_at:
                backoff = backoff_slot_s * int(rng_comms.integers(0, 16))
                push(medium_free_at + backoff, "pkt-due",
                     (dev_id, sched_t, ptype))
                continue
            dur = data_duration if ptype == "DATA" else ack_duration
            medium_free_at = t + dur
            if sensing_enabled:
                apply_step(t, ctx, "TxStart", ptype)
                if ctx.state == MacState.M:
                    synth_csi(t, "mono", ctx.dev, ctx.dev)
            if ptype == "DATA":
                delays.append(t - sched_t)
            push(t + dur, "tx-complete", (dev_id,))
            peer = ctx.dev.peer_id
            if peer is not None:
                rx_ctx = ctxs[peer]
                if sensing_enabled:
                    was_c = rx_ctx.state == MacState.C
                    apply_step(t, rx_ctx, "RxStart", ptype)
                    if was_c and rx_ctx.state == MacState.B:
                        synth_csi(t, "bi", rx_ctx.dev, ctx.dev)
                push(t + dur, "rx-complete", (peer, dev_id, ptype, sched_t))

        elif kind == "tx-complete":
            (dev_id,) = payload
            if sensing_enabled:
                apply_step(t, ctxs[dev_id], "TxComplete")

        elif kind == "timer":
            dev_id, deadline = payload
            ctx = ctxs[dev_id]
            if ctx.m_timer_deadline != deadline:
                continue  # superseded by a later transmission
            if sensing_enabled:
                apply_step(t, ctx, "TimerExpiry")

        elif kind == "rx-complete":
            rx_id, tx_id, ptype, sched_t = payload
            rx_ctx = ctxs[rx_id]
            if sensing_enabled:
                apply_step(t, rx_ctx, "RxComplete")
            snr = link_snr(ctxs[tx_id].dev, rx_ctx.dev)
            if force_separator:
                snr -= penalty_db
            ok = rng_comms.random() < success_probability(snr, rx_ctx.mcs)
            if ptype == "DATA":
                successes.append(ok)
                rx_snrs.append(snr)
                if ok:
                    push(t + sifs_s, "pkt-due", (rx_id, t + sifs_s, "ACK"))

        elif kind == "calibration":
            (dev_id,) = payload
            ctx = ctxs[dev_id]
            if ctx.state == MacState.C:
                if sensing_enabled:
                    apply_step(t, ctx, "CalibrationDue")
                nxt = t + cal_interval_s
            else:
                nxt = t + 0.005  # busy; retry shortly
            if nxt < duration:
                push(nxt, "calibration", (dev_id,))

    delays_ms = 1e3 * np.asarray(delays) if delays else np.zeros(1)
    stats = {
        "n_data": len(successes),
        "delay_ms_p50": float(np.percentile(delays_ms, 50)),
        "delay_ms_p95": float(np.percentile(delays_ms, 95)),
        "loss_rate": float(1.0 - np.mean(successes)) if successes else 0.0,
        "mean_rx_snr_db": float(np.mean(rx_snrs)) if rx_snrs else float("nan"),
    }
    return ScenarioResult(entries, csi_records, stats, violations,
                          n_events=n_events,
                          invariant_checks=invariant_checks,
                          separator_mismatches=separator_mismatches,
                          separator_penalty_db=penalty_db)


# ---------------------------------------------------------------------------
# exports


def write_event_log(path, entries):
    """Line format: time_s device state_before event state_after action."""
    with open(path, "w") as fh:
        for e in entries:
            fh.write(f"{e.time:.9f} {e.device} {e.state_before} {e.event} "
                     f"{e.state_after} {e.action}\n")


def write_comms_csv(path, rows):
    """CSV: (scenario, delay_ms_p50, delay_ms_p95, loss_rate)."""
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["scenario", "delay_ms_p50", "delay_ms_p95", "loss_rate"])
        for name, stats in rows:
            writer.writerow([
                name,
                f"{stats['delay_ms_p50']:.4f}",
                f"{stats['delay_ms_p95']:.4f}",
                f"{stats['loss_rate']:.6f}",
            ])


def m_episodes(entries):
    """(enter_time, exit_time, last_tx_complete) for every M dwell in a log."""
    episodes = []
    current = {}
    last_txc = {}
    for e in entries:
        if e.action == ENABLE_SEPARATOR:
            current[e.device] = e.time
            last_txc[e.device] = None
        elif e.event == "TxComplete" and e.device in current:
            last_txc[e.device] = e.time
        elif e.action == DISABLE_SEPARATOR and e.device in current:
            episodes.append((current.pop(e.device), e.time,
                             last_txc.get(e.device)))
    return episodes


MAX_M_DWELL_S = MAX_FRAME_S  # per-transmission cap; timer extends past it


__all__ = [
    "MacState",
    "MacEvent",
    "EVENT_KINDS",
    "step",
    "success_probability",
    "TrafficModel",
    "generate_traffic",
    "MacDevice",
    "LogEntry",
    "CsiRecord",
    "ScenarioResult",
    "run_scenario",
    "measure_forced_separator_penalty",
    "write_event_log",
    "write_comms_csv",
    "m_episodes",
    "ENABLE_SEPARATOR",
    "DISABLE_SEPARATOR",
    "ARM_TIMER",
    "CONTINUE_BURST",
    "BISTATIC_CAPTURE",
    "END_CAPTURE",
    "DEFER_BISTATIC",
    "CALIBRATE",
    "VIOLATION",
]

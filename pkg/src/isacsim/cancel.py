"""Transmit self-interference separation for a simultaneously listening radio.

A device that keeps its receiver open while transmitting sees its own signal
leak in tens of dB above any echo of interest. The separator removes it in
three stages: a fixed front-end isolation (circulator or hybrid coupler), a
single complex analog tap fitted to the dominant internal coupling, and a
short adaptive FIR canceller trained on the known preamble. Calibration runs
with the antenna port switched to a dummy load so nothing from the air
contaminates the fit; the frozen taps are then used live.

The simulator synthesizes leakage, echoes, and noise as separate component
streams and sums them, so per-component power through every stage is exactly
measurable; cancellation corrections are charged to the leakage component.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .sigcore import SampleBuffer, avg_power, db, dbm_to_power, from_db

# default power budget (dB figures are relative unless suffixed _dbm)
DEFAULT_TX_POWER_DBM = 5.0
DEFAULT_LEAKAGE_DB = -13.0
DEFAULT_NOISE_FLOOR_DBM = -85.0
DEFAULT_FIRST_STAGE_DB = 12.0
DEFAULT_SECONDARY_FRACTION = 1e-4
DEFAULT_DIGITAL_TAPS = 16

FIRST_STAGE_KINDS = ("circulator", "hybrid_coupler")

PORT_ANTENNA = "antenna"
PORT_DUMMY_LOAD = "dummy_load"


class ProtocolViolation(RuntimeError):
    """An operation was invoked in a state its protocol forbids."""


# ---------------------------------------------------------------------------
# component bookkeeping


@dataclass
class ComponentBuffer:
    """A received buffer kept as separately addressable additive parts.

    Conventional component names are "leakage", "reflection", and "noise";
    any names are accepted. All parts share one sample grid.
    """

    components: dict
    sample_rate: float
    start_time: float = 0.0

    def __post_init__(self):
        sizes = set()
        clean = {}
        for name, arr in self.components.items():
            arr = np.asarray(arr, dtype=np.complex128)
            sizes.add(arr.shape)
            clean[name] = arr
        if len(sizes) > 1:
            raise ValueError("all components must share one length")
        self.components = clean

    def __len__(self):
        for arr in self.components.values():
            return len(arr)
        return 0

    @classmethod
    def from_parts(cls, sample_rate, start_time=0.0, **parts):
        return cls({k: v for k, v in parts.items() if v is not None},
                   sample_rate, start_time)

    def component(self, name):
        if name not in self.components:
            return np.zeros(len(self), dtype=np.complex128)
        return self.components[name]

    def combined(self):
        total = np.zeros(len(self), dtype=np.complex128)
        for arr in self.components.values():
            total = total + arr
        return SampleBuffer(total, self.sample_rate, self.start_time)

    def power(self, name=None):
        if name is None:
            return avg_power(self.combined().samples)
        return avg_power(self.component(name))

    def copy(self):
        return ComponentBuffer(
            {k: v.copy() for k, v in self.components.items()},
            self.sample_rate,
            self.start_time,
        )

    def add_to(self, name, values):
        """Accumulate ``values`` into one component (created if missing)."""
        if name in self.components:
            self.components[name] = self.components[name] + values
        else:
            base = np.zeros(len(self), dtype=np.complex128)
            self.components = {**self.components, name: base + values}


# ---------------------------------------------------------------------------
# the leakage path


@dataclass
class LeakageChannel:
    """Internal tx->rx coupling as a short FIR.

    ``stability_s`` is the span over which the coupling stays essentially
    itself (correlation 0.95 after that long). ``antenna_contribution`` is
    the fraction of coupling energy contributed by the antenna port rather
    than the hardware path; it must be small (<= 0.1) for dummy-load
    calibration to transfer, and defaults to zero.
    """

    taps: np.ndarray
    stability_s: float = 600.0
    antenna_contribution: float = 0.0

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.complex128)
        if self.taps.ndim != 1 or self.taps.size == 0:
            raise ValueError("taps must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("taps must be finite")
        if self.stability_s <= 0:
            raise ValueError("stability_s must be positive")
        if not 0.0 <= self.antenna_contribution <= 0.1:
            raise ValueError("antenna_contribution must lie in [0, 0.1]")

    def energy(self):
        return float(np.sum(np.abs(self.taps) ** 2))

    def evolved(self, dt, rng):
        """Slow coupling drift: correlation 0.95 after ``stability_s``."""
        if dt <= 0:
            return self
        rho = 0.95 ** (dt / self.stability_s)
        scale = np.sqrt(max(0.0, 1.0 - rho**2) * self.energy() / self.taps.size / 2)
        wobble = scale * (
            rng.standard_normal(self.taps.size)
            + 1j * rng.standard_normal(self.taps.size)
        )
        return replace(self, taps=rho * self.taps + wobble)

    def at_port(self, port, rng=None):
        """Coupling seen at a port; the antenna adds a small extra piece."""
        if port == PORT_DUMMY_LOAD or self.antenna_contribution == 0.0:
            return self.taps
        rng = np.random.default_rng(0) if rng is None else rng
        extra = rng.standard_normal(self.taps.size) + 1j * rng.standard_normal(
            self.taps.size
        )
        extra *= np.sqrt(
            self.antenna_contribution * self.energy() / np.sum(np.abs(extra) ** 2)
        )
        return self.taps + extra


def make_leakage(rng, leakage_db=DEFAULT_LEAKAGE_DB, main_delay=1, n_taps=3,
                 secondary_fraction=DEFAULT_SECONDARY_FRACTION, **kwargs):
    """Random coupling FIR: one dominant tap plus a weak trailing tail.

    ``leakage_db`` is total coupling energy relative to the transmit signal;
    ``secondary_fraction`` is the share of that energy left outside the
    dominant tap (this is what the single analog tap cannot reach).
    """
    if not 0 <= main_delay < n_taps:
        raise ValueError("main_delay must index into the taps")
    total = from_db(leakage_db)
    taps = np.zeros(n_taps, dtype=np.complex128)
    taps[main_delay] = np.sqrt(total * (1.0 - secondary_fraction)) * np.exp(
        2j * np.pi * rng.uniform()
    )
    others = [i for i in range(n_taps) if i != main_delay]
    if others and secondary_fraction > 0:
        raw = rng.standard_normal(len(others)) + 1j * rng.standard_normal(len(others))
        raw *= np.sqrt(total * secondary_fraction / np.sum(np.abs(raw) ** 2))
        taps[others] = raw
    return LeakageChannel(taps, **kwargs)


# ---------------------------------------------------------------------------
# separator state


@dataclass
class CancellatorState:
    """Fitted separator settings for one device."""

    analog_tap: complex = 0.0
    analog_delay: int = 0
    digital_taps: np.ndarray = None
    calibrated_at: float = None
    port: str = PORT_ANTENNA
    log: list = field(default_factory=list)

    def __post_init__(self):
        if self.digital_taps is None:
            self.digital_taps = np.zeros(DEFAULT_DIGITAL_TAPS, dtype=np.complex128)
        self.digital_taps = np.asarray(self.digital_taps, dtype=np.complex128)
        if self.port not in (PORT_ANTENNA, PORT_DUMMY_LOAD):
            raise ValueError("unknown port")

    @property
    def calibrated(self):
        return self.calibrated_at is not None

    def to_dummy_load(self):
        return replace(self, port=PORT_DUMMY_LOAD)

    def to_antenna(self):
        return replace(self, port=PORT_ANTENNA)


def _delayed(samples, delay):
    out = np.zeros_like(samples)
    if delay == 0:
        out[:] = samples
    elif delay < len(samples):
        out[delay:] = samples[: len(samples) - delay]
    return out


# ---------------------------------------------------------------------------
# stages


def first_stage(rx, kind="circulator", isolation_db=DEFAULT_FIRST_STAGE_DB):
    """Front-end isolation: attenuates the internal coupling only.

    Both supported devices give the same isolation figure; over-the-air
    components are untouched, which is why this stage operates on the
    bookkept leakage component.
    """
    if kind not in FIRST_STAGE_KINDS:
        raise ValueError(f"kind must be one of {FIRST_STAGE_KINDS}")
    if not isinstance(rx, ComponentBuffer):
        raise TypeError("first_stage needs component bookkeeping (ComponentBuffer)")
    out = rx.copy()
    if "leakage" in out.components:
        out.components["leakage"] = out.components["leakage"] * np.sqrt(
            from_db(-isolation_db)
        )
    return out


def analog_cancel(rx, tx_ref, state):
    """Add the single analog correction ``analog_tap * tx_ref`` (delayed)."""
    ref = tx_ref.samples if isinstance(tx_ref, SampleBuffer) else np.asarray(tx_ref)
    correction = state.analog_tap * _delayed(ref, state.analog_delay)
    if isinstance(rx, ComponentBuffer):
        out = rx.copy()
        out.add_to("leakage", correction)
        return out
    return SampleBuffer(rx.samples + correction, rx.sample_rate, rx.start_time)


def digital_cancel(rx, tx_ref, state, adapt=False, adapt_span=None, mu=0.1,
                   n_passes=4):
    """Subtract the adaptive-FIR estimate of the remaining coupling.

    The correction spans the whole reference; when ``adapt`` is set, taps are
    first updated by normalized LMS using only the first ``adapt_span``
    samples (the preamble), never the payload.
    """
    if not state.calibrated:
        raise ProtocolViolation("digital cancellation before calibration")
    ref = tx_ref.samples if isinstance(tx_ref, SampleBuffer) else np.asarray(tx_ref)
    taps = state.digital_taps
    if adapt:
        span = len(ref) if adapt_span is None else min(adapt_span, len(ref))
        desired = (
            rx.combined().samples if isinstance(rx, ComponentBuffer) else rx.samples
        )
        taps = kernels.nlms_fir(
            ref[:span], desired[:span], len(taps), mu=mu, n_passes=n_passes,
            taps_init=taps,
        )
        state.digital_taps = taps
    correction = -kernels.fir_apply(ref, taps)
    if isinstance(rx, ComponentBuffer):
        out = rx.copy()
        out.add_to("leakage", correction)
        return out
    return SampleBuffer(rx.samples + correction, rx.sample_rate, rx.start_time)


def calibrate(state, tx_ref, leak, noise_floor_dbm=DEFAULT_NOISE_FLOOR_DBM,
              rng=None, kind="circulator", isolation_db=DEFAULT_FIRST_STAGE_DB,
              timestamp=0.0, mu=0.1, n_passes=4):
    """Fit the analog tap and digital FIR against the dummy-load coupling.

    The port must already be on the dummy load so the fit sees coupling and
    noise only. The analog tap is the least-squares single-tap optimum over
    a scanned alignment; the digital FIR is then adapted on the post-analog
    residual. Returns a new calibrated state whose log records the residual
    (relative to the raw coupling power) after each stage.
    """
    if state.port != PORT_DUMMY_LOAD:
        raise ProtocolViolation("calibration requires the dummy-load port")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    ref = tx_ref.samples if isinstance(tx_ref, SampleBuffer) else np.asarray(tx_ref)
    taps_seen = leak.at_port(PORT_DUMMY_LOAD)
    if len(state.digital_taps) < len(taps_seen):
        raise ValueError("digital FIR must be at least as long as the coupling")

    leakage = kernels.fir_apply(ref, taps_seen)
    noise = np.zeros_like(leakage)
    if noise_floor_dbm is not None:
        noise = np.sqrt(dbm_to_power(noise_floor_dbm) / 2.0) * (
            rng.standard_normal(len(ref)) + 1j * rng.standard_normal(len(ref))
        )
    raw_power = avg_power(leakage)
    if raw_power == 0.0:
        # nothing to cancel; zero out the corrections
        cleared = replace(
            state,
            analog_tap=0.0,
            analog_delay=0,
            digital_taps=np.zeros_like(state.digital_taps),
            calibrated_at=timestamp,
        )
        cleared.log = state.log + [(timestamp, "digital", float("-inf"),
                                    PORT_DUMMY_LOAD)]
        return cleared

    rx = leakage * np.sqrt(from_db(-isolation_db)) + noise
    log = list(state.log)
    log.append((timestamp, "first_stage", db(avg_power(rx) / raw_power),
                PORT_DUMMY_LOAD))

    # single complex degree of freedom, alignment scanned over the FIR span
    best = None
    for delay in range(len(state.digital_taps)):
        shifted = _delayed(ref, delay)
        denom = np.vdot(shifted, shifted).real
        if denom == 0.0:
            continue
        tap = -np.vdot(shifted, rx) / denom
        residual = rx + tap * shifted
        p = avg_power(residual)
        if best is None or p < best[0]:
            best = (p, delay, tap, residual)
    _, analog_delay, analog_tap, post_analog = best
    log.append((timestamp, "analog", db(avg_power(post_analog) / raw_power),
                PORT_DUMMY_LOAD))

    digital_taps = kernels.nlms_fir(
        ref, post_analog, len(state.digital_taps), mu=mu, n_passes=n_passes
    )
    post_digital = post_analog - kernels.fir_apply(ref, digital_taps)
    log.append((timestamp, "digital", db(avg_power(post_digital) / raw_power),
                PORT_DUMMY_LOAD))

    return replace(
        state,
        analog_tap=analog_tap,
        analog_delay=analog_delay,
        digital_taps=digital_taps,
        calibrated_at=timestamp,
        log=log,
    )


def separator_pipeline(rx, state, mode, tx_ref=None, kind="circulator",
                       isolation_db=DEFAULT_FIRST_STAGE_DB, force=False):
    """Route a received buffer through the separator according to MAC state.

    Only the monitoring state ("M") cancels; the communicating ("C") and
    blocked ("B") states pass the buffer through untouched because filtering
    someone else's packet would wreck it. Forcing cancellation in C/B is the
    protocol violation that experiment reproduces deliberately.
    """
    key = getattr(mode, "name", mode)
    if key in ("C", "B"):
        if force:
            raise ProtocolViolation(f"cancellation forced in {key}-state")
        return rx
    if key != "M":
        raise ValueError(f"unknown MAC state {mode!r}")
    if not state.calibrated:
        raise ProtocolViolation("separator used before calibration")
    if tx_ref is None:
        raise ValueError("M-state separation needs the transmit reference")
    out = first_stage(rx, kind=kind, isolation_db=isolation_db)
    out = analog_cancel(out, tx_ref, state)
    return digital_cancel(out, tx_ref, state)


def params_for_power(tx_power_dbm, table):
    """Linear-fit the tx-power -> cancellation curve and evaluate it."""
    pairs = [(float(p), float(c)) for p, c in table]
    if len(pairs) < 2:
        raise ValueError("need at least two calibration pairs")
    x = np.array([p for p, _ in pairs])
    y = np.array([c for _, c in pairs])
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope * tx_power_dbm + intercept)


# ---------------------------------------------------------------------------
# scene assembly and harm measurement


def assemble_rx(tx, leak, noise_floor_dbm=None, reflection=None, rng=None,
                port=PORT_ANTENNA):
    """Build the bookkept receive buffer: coupling + optional echo + noise."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    ref = tx.samples if isinstance(tx, SampleBuffer) else np.asarray(tx)
    fs = tx.sample_rate if isinstance(tx, SampleBuffer) else 1.0
    t0 = tx.start_time if isinstance(tx, SampleBuffer) else 0.0
    parts = {"leakage": kernels.fir_apply(ref, leak.at_port(port, rng))}
    if reflection is not None:
        refl = (
            reflection.samples
            if isinstance(reflection, SampleBuffer)
            else np.asarray(reflection)
        )
        parts["reflection"] = refl
    if noise_floor_dbm is not None:
        parts["noise"] = np.sqrt(dbm_to_power(noise_floor_dbm) / 2.0) * (
            rng.standard_normal(len(ref)) + 1j * rng.standard_normal(len(ref))
        )
    return ComponentBuffer(parts, fs, t0)


def template_snr_db(template, received, noise_power=None):
    """Effective SNR of a known waveform inside a received buffer.

    Fits a single complex gain of the template by least squares; everything
    the scaled template fails to explain counts as noise-plus-distortion.
    """
    p = template.samples if isinstance(template, SampleBuffer) else np.asarray(template)
    y = received.samples if isinstance(received, SampleBuffer) else np.asarray(received)
    n = min(len(p), len(y))
    p, y = p[:n], y[:n]
    gain = np.vdot(p, y) / np.vdot(p, p).real
    err = y - gain * p
    denom = avg_power(err) if noise_power is None else noise_power
    if denom == 0.0:
        return float("inf")
    return db(np.abs(gain) ** 2 * avg_power(p) / denom)


def measure_separator_harm(template, state, remote_gain, noise_floor_dbm, rng):
    """SNR cost of running the separator over someone else's packet.

    The remote packet shares the standard preamble, so the frozen corrections
    (built from the local transmit reference) land right on top of it; the
    front-end isolation is not involved because it only touches the internal
    coupling. Returns (clean_snr_db, separated_snr_db).
    """
    ref = template.samples if isinstance(template, SampleBuffer) else np.asarray(template)
    noise = np.sqrt(dbm_to_power(noise_floor_dbm) / 2.0) * (
        rng.standard_normal(len(ref)) + 1j * rng.standard_normal(len(ref))
    )
    clean = remote_gain * ref + noise
    correction = state.analog_tap * _delayed(ref, state.analog_delay)
    correction -= kernels.fir_apply(ref, state.digital_taps)
    separated = clean + correction
    return (
        template_snr_db(ref, clean),
        template_snr_db(ref, separated),
    )


def write_calibration_log(path, entries):
    """CSV export of calibration-stage residuals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "stage", "residual_db", "port"])
        for time_s, stage, residual_db, port in entries:
            writer.writerow([f"{time_s:.6f}", stage, f"{residual_db:.3f}", port])


__all__ = [
    "ProtocolViolation",
    "ComponentBuffer",
    "LeakageChannel",
    "make_leakage",
    "CancellatorState",
    "first_stage",
    "analog_cancel",
    "digital_cancel",
    "calibrate",
    "separator_pipeline",
    "params_for_power",
    "assemble_rx",
    "template_snr_db",
    "measure_separator_harm",
    "write_calibration_log",
    "DEFAULT_TX_POWER_DBM",
    "DEFAULT_LEAKAGE_DB",
    "DEFAULT_NOISE_FLOOR_DBM",
    "DEFAULT_FIRST_STAGE_DB",
    "PORT_ANTENNA",
    "PORT_DUMMY_LOAD",
]

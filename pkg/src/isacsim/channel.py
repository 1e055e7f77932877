"""Multipath scene simulation and receive-clock impairments.

Everything the receiver sees is built here: each propagation path contributes
a delayed, amplitude-scaled copy of the transmit waveform, moving scatterers
rotate the carrier phase as their two-hop path length changes, the receiver's
clock error smears phase across packets and subcarriers, and complex Gaussian
noise floors the result.

Conventions
-----------
* Positions are length-3 vectors in meters; times in seconds.
* A reflected path's received amplitude obeys the two-hop spreading law
  ``alpha**2 = P * g_tx * g_rx * lam**2 * rcs / ((4*pi)**3 * (r_tx*r_rx)**2)``.
* The direct tx->rx amplitude is normalized so the reflected-to-direct power
  ratio equals ``rcs * L / (4*pi * (r_tx*r_rx)**2)`` (see ``power_ratio``).
* Receiver clock terms rotate sample n by ``exp(-2j*pi*(cfo_hz*t + cpo))``;
  a sampling-rate skew ``sfo`` and a fractional timing offset ``pdd_extra``
  appear as phase ramps over the FFT bin index within each symbol window.
* Antenna 0 is the phase reference of a uniform linear array; element i sits
  ``i * array_spacing_wl`` wavelengths along the array axis.
"""

from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .config import ConfigError, read_flat_config
from .ofdm import SPEED_OF_LIGHT, RadioConfig, burst_symbol_spans
from .sigcore import SampleBuffer, TWO_PI, complex_noise, dbm_to_power, power_to_dbm

_MIN_RANGE = 1e-9


# ---------------------------------------------------------------------------
# amplitudes and geometry scalars


def path_gain(tx_range, rx_range, rcs, cfg, tx_power=1.0, gain_tx=1.0, gain_rx=1.0):
    """Received field amplitude of one reflected (two-hop) path.

    Accepts scalars or arrays for the ranges. A zero or negative range is a
    degenerate scene and raises. ``rcs=0`` gives exactly zero.
    """
    tx_range = np.asarray(tx_range, dtype=np.float64)
    rx_range = np.asarray(rx_range, dtype=np.float64)
    if np.any(tx_range <= 0) or np.any(rx_range <= 0):
        raise ValueError("path ranges must be positive (scatterer on top of a node?)")
    if rcs < 0:
        raise ValueError("rcs must be non-negative")
    if tx_power < 0:
        raise ValueError("tx_power must be non-negative")
    lam = cfg.wavelength
    a2 = (
        tx_power
        * gain_tx
        * gain_rx
        * lam**2
        * rcs
        / ((4.0 * np.pi) ** 3 * (tx_range * rx_range) ** 2)
    )
    out = np.sqrt(a2)
    return float(out) if out.ndim == 0 else out


def los_gain(distance, cfg, tx_power=1.0, gain_tx=1.0, gain_rx=1.0):
    """Direct tx->rx field amplitude over separation ``distance``.

    Normalized so that ``path_gain(r_tx, r_rx, rcs, ...)`` relative to this
    amplitude reproduces ``power_ratio`` exactly.
    """
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance <= 0):
        raise ValueError("direct-path distance must be positive")
    lam = cfg.wavelength
    a2 = tx_power * gain_tx * gain_rx * lam**2 / ((4.0 * np.pi) ** 2 * distance)
    out = np.sqrt(a2)
    return float(out) if out.ndim == 0 else out


def power_ratio(los_distance, tx_range, rx_range, rcs=1.0):
    """Reflected-to-direct power ratio in dB: ``rcs*L / (4*pi*(r_tx*r_rx)**2)``.

    Requires a bistatic layout: a zero separation has no direct path to
    compare against and raises.
    """
    if los_distance <= 0:
        raise ValueError("reflected-to-direct ratio needs tx/rx separation > 0")
    if tx_range <= 0 or rx_range <= 0:
        raise ValueError("path ranges must be positive")
    if rcs < 0:
        raise ValueError("rcs must be non-negative")
    ratio = rcs * los_distance / (4.0 * np.pi * (tx_range * rx_range) ** 2)
    return 10.0 * np.log10(ratio)


def bistatic_projection(tx_pos, rx_pos, target_pos, displacement):
    """Two-hop path-length change when the target moves by ``displacement``.

    Positive when the move lengthens ``|target-tx| + |target-rx|``. Motion
    tangent to the constant-path-length ellipsoid through the target returns
    (numerically) zero. Raises if the target sits on either node.
    """
    tx_pos = np.asarray(tx_pos, dtype=np.float64)
    rx_pos = np.asarray(rx_pos, dtype=np.float64)
    p0 = np.asarray(target_pos, dtype=np.float64)
    p1 = p0 + np.asarray(displacement, dtype=np.float64)

    def _length(p):
        r_tx = np.linalg.norm(p - tx_pos)
        r_rx = np.linalg.norm(p - rx_pos)
        if r_tx < _MIN_RANGE or r_rx < _MIN_RANGE:
            raise ValueError("target position coincides with tx or rx")
        return r_tx + r_rx

    return _length(p1) - _length(p0)


def path_length(tx_pos, rx_pos, target_pos):
    """Two-hop distance tx -> target -> rx (vectorized over rows of target_pos)."""
    tx_pos = np.asarray(tx_pos, dtype=np.float64)
    rx_pos = np.asarray(rx_pos, dtype=np.float64)
    p = np.asarray(target_pos, dtype=np.float64)
    r_tx = np.linalg.norm(p - tx_pos, axis=-1)
    r_rx = np.linalg.norm(p - rx_pos, axis=-1)
    if np.any(r_tx < _MIN_RANGE) or np.any(r_rx < _MIN_RANGE):
        raise ValueError("target position coincides with tx or rx")
    return r_tx + r_rx


def delta_r_series(tx_pos, rx_pos, trajectory, times):
    """Per-step two-hop path-length changes along a trajectory."""
    times = np.asarray(times, dtype=np.float64)
    pos = trajectory_positions(trajectory, times)
    lengths = path_length(tx_pos, rx_pos, pos)
    return np.diff(lengths)


# ---------------------------------------------------------------------------
# trajectories


def linear_trajectory(start, velocity):
    """Constant-velocity position function of absolute time."""
    start = np.asarray(start, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)

    def position(t):
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            return start + float(t) * velocity
        return start[None, :] + t[:, None] * velocity[None, :]

    return position


def breathing_trajectory(center, amplitude_m=0.005, rate_hz=0.25,
                         direction=(1.0, 0.0, 0.0), phase=0.0):
    """Small sinusoidal sway around ``center`` (chest-motion scale by default)."""
    center = np.asarray(center, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise ValueError("direction must be non-zero")
    unit = direction / norm

    def position(t):
        t = np.asarray(t, dtype=np.float64)
        sway = amplitude_m * np.sin(TWO_PI * rate_hz * t + phase)
        if t.ndim == 0:
            return center + float(sway) * unit
        return center[None, :] + sway[:, None] * unit[None, :]

    return position


def trajectory_positions(trajectory, times):
    """Evaluate a position function at many times -> (n, 3) array."""
    times = np.asarray(times, dtype=np.float64)
    pos = np.asarray(trajectory(times), dtype=np.float64)
    if pos.shape == (3,):
        pos = np.broadcast_to(pos, (times.size, 3)).copy()
    return pos


# ---------------------------------------------------------------------------
# scene description


@dataclass
class PropagationPath:
    """One arrival at the receiver.

    ``index`` is bookkeeping: 0 is the internal tx->rx coupling, 1 the
    direct over-the-air path, 2+ scatterers. Geometry can be given as a fixed
    ``position``, a ``trajectory`` (callable t -> position), or raw ranges;
    an explicit ``amplitude`` (linear field gain on the transmit waveform)
    overrides the spreading law, and an explicit ``delay`` overrides the
    geometric one.
    """

    index: int = 2
    position: object = None
    trajectory: object = None
    tx_range: float = None
    rx_range: float = None
    rcs: float = 1.0
    aoa_deg: float = None
    amplitude: float = None
    delay: float = None
    label: str = ""

    def __post_init__(self):
        if self.position is not None:
            self.position = np.asarray(self.position, dtype=np.float64)
        if self.delay is not None and self.delay < 0:
            raise ValueError("path delay must be non-negative")
        if self.rcs < 0:
            raise ValueError("rcs must be non-negative")
        for r in (self.tx_range, self.rx_range):
            if r is not None and r <= 0:
                raise ValueError("path ranges must be positive")
        if self.trajectory is not None and not callable(self.trajectory):
            raise ValueError("trajectory must be callable")

    def position_at(self, t):
        if self.trajectory is not None:
            return np.asarray(self.trajectory(t), dtype=np.float64)
        return self.position


@dataclass
class ImpairmentProfile:
    """Receive-clock error terms relative to the transmitter.

    ``cpo`` is a cycle-scaled constant offset (the rotation applied is
    ``exp(-2j*pi*cpo)``), kept in [0, 2*pi). ``sfo`` is the fractional
    sampling-rate skew, ``pdd_extra`` an additional (possibly fractional)
    sampling offset in samples on top of whatever the packet detector
    realizes. ``drift`` optionally holds per-sqrt-second random-walk
    deviations, e.g. ``{"cfo_hz": 0.5}``.
    """

    cfo_hz: float = 0.0
    cpo: float = 0.0
    sfo: float = 0.0
    pdd_extra: float = 0.0
    drift: dict = None

    def __post_init__(self):
        if not 0.0 <= self.cpo < TWO_PI:
            raise ValueError("cpo must lie in [0, 2*pi)")
        if abs(self.sfo) >= 1e-3:
            raise ValueError("sfo skew beyond 1000 ppm is not supported")

    @classmethod
    def monostatic(cls, cpo=0.0):
        """Shared tx/rx clock: no frequency, rate, or timing error; fixed cpo."""
        return cls(cfo_hz=0.0, cpo=cpo, sfo=0.0, pdd_extra=0.0)

    @classmethod
    def sample(cls, cfg, rng, ppm=20.0, fractional_timing=True):
        """Draw a device-boot profile: +/-ppm clock errors, uniform cpo."""
        cfo = rng.uniform(-ppm, ppm) * 1e-6 * cfg.carrier_freq
        sfo = rng.uniform(-ppm, ppm) * 1e-6
        cpo = rng.uniform(0.0, TWO_PI)
        eps = rng.uniform(0.0, 1.0) if fractional_timing else 0.0
        return cls(cfo_hz=cfo, cpo=cpo, sfo=sfo, pdd_extra=eps)

    def evolve(self, dt, rng):
        """Random-walk step of the drifting quantities over dt seconds."""
        if not self.drift or dt <= 0:
            return self
        scale = np.sqrt(dt)
        updates = {}
        for name in ("cfo_hz", "cpo", "sfo", "pdd_extra"):
            std = self.drift.get(name, 0.0)
            if std:
                updates[name] = getattr(self, name) + rng.normal(0.0, std * scale)
        if "cpo" in updates:
            updates["cpo"] = updates["cpo"] % TWO_PI
        return replace(self, **updates) if updates else self


@dataclass
class ScenarioGeometry:
    """Node placement, antenna array, and the scatterers in the scene."""

    tx_pos: object = (0.0, 0.0, 0.0)
    rx_pos: object = (0.0, 0.0, 0.0)
    targets: tuple = ()
    tx_power_dbm: float = 5.0
    gain_tx: float = 1.0
    gain_rx: float = 1.0
    n_antennas: int = 1
    array_spacing_wl: float = 0.5
    boresight_deg: float = 0.0
    include_los: bool = True

    def __post_init__(self):
        self.tx_pos = np.asarray(self.tx_pos, dtype=np.float64)
        self.rx_pos = np.asarray(self.rx_pos, dtype=np.float64)
        if self.tx_pos.shape != (3,) or self.rx_pos.shape != (3,):
            raise ValueError("positions must be 3-vectors")
        self.targets = tuple(self.targets)
        if self.n_antennas < 1:
            raise ValueError("need at least one receive antenna")

    @property
    def los_distance(self):
        return float(np.linalg.norm(self.rx_pos - self.tx_pos))

    @property
    def monostatic(self):
        return self.los_distance < _MIN_RANGE

    def aoa_of(self, position):
        """Arrival angle (degrees) of a point, measured from array boresight."""
        d = np.asarray(position, dtype=np.float64) - self.rx_pos
        ang = np.degrees(np.arctan2(d[..., 1], d[..., 0])) - self.boresight_deg
        return (ang + 180.0) % 360.0 - 180.0


def steering_vector(aoa_deg, n_antennas, spacing_wl=0.5):
    """Array response of a uniform linear array, element 0 as phase reference."""
    idx = np.arange(n_antennas)
    return np.exp(-2j * np.pi * idx * spacing_wl * np.sin(np.radians(aoa_deg)))


ResolvedPath = namedtuple(
    "ResolvedPath", "index alpha delay aoa_deg trajectory length0 label source"
)


def resolve_paths(geom, cfg, t=0.0, include_los=None, tx_power=None):
    """Freeze the scene at time t into (amplitude, delay, angle) arrivals.

    The direct tx->rx path is prepended for bistatic layouts unless
    disabled. ``tx_power`` defaults to 1.0 so amplitudes act as field gains
    on the actual transmit waveform; pass a linear power to bake it in.
    """
    if include_los is None:
        include_los = geom.include_los
    if tx_power is None:
        tx_power = 1.0
    resolved = []
    if include_los and not geom.monostatic:
        dist = geom.los_distance
        resolved.append(
            ResolvedPath(
                index=1,
                alpha=los_gain(dist, cfg, tx_power, geom.gain_tx, geom.gain_rx),
                delay=dist / SPEED_OF_LIGHT,
                aoa_deg=float(geom.aoa_of(geom.tx_pos)),
                trajectory=None,
                length0=dist,
                label="direct",
                source=None,
            )
        )
    for p in geom.targets:
        pos = p.position_at(t)
        if pos is not None:
            r_tx = float(np.linalg.norm(pos - geom.tx_pos))
            r_rx = float(np.linalg.norm(pos - geom.rx_pos))
            if r_tx < _MIN_RANGE or r_rx < _MIN_RANGE:
                raise ValueError("scatterer position coincides with tx or rx")
        else:
            r_tx, r_rx = p.tx_range, p.rx_range
        if p.delay is not None:
            delay = p.delay
        elif r_tx is not None and r_rx is not None:
            delay = (r_tx + r_rx) / SPEED_OF_LIGHT
        else:
            raise ValueError("path needs a position, ranges, or an explicit delay")
        if p.amplitude is not None:
            alpha = p.amplitude
        elif r_tx is not None and r_rx is not None:
            alpha = path_gain(
                r_tx, r_rx, p.rcs, cfg, tx_power, geom.gain_tx, geom.gain_rx
            )
        else:
            raise ValueError("path needs ranges/position or an explicit amplitude")
        if p.aoa_deg is not None:
            aoa = p.aoa_deg
        elif pos is not None:
            aoa = float(geom.aoa_of(pos))
        else:
            aoa = 0.0
        resolved.append(
            ResolvedPath(
                index=p.index,
                alpha=alpha,
                delay=delay,
                aoa_deg=aoa,
                trajectory=p.trajectory,
                length0=delay * SPEED_OF_LIGHT,
                label=p.label,
                source=p,
            )
        )
    return resolved


# ---------------------------------------------------------------------------
# waveform-level propagation


def _fractional_delay(samples, n_out, delay_s, sample_rate):
    """Delay by an arbitrary time via a frequency-domain phase ramp."""
    npad = n_out + int(np.ceil(delay_s * sample_rate)) + 64
    spec = np.fft.fft(samples, npad)
    f = np.fft.fftfreq(npad, d=1.0 / sample_rate)
    spec *= np.exp(-2j * np.pi * f * delay_s)
    return np.fft.ifft(spec)[:n_out]


def _resample_skewed(samples, sample_rate, sfo):
    """Evaluate the band-limited signal on a (1+sfo)-spaced sample grid."""
    n = len(samples)
    t_skewed = np.arange(n) * (1.0 + sfo) / sample_rate
    if n <= 16384:
        spec = np.fft.fft(samples) / n
        f = np.fft.fftfreq(n, d=1.0 / sample_rate)
        return kernels.ndft_direct(f, spec, -t_skewed)
    # long buffers: linear interpolation is plenty for sub-ppm skews
    t = np.arange(n) / sample_rate
    return np.interp(t_skewed, t, samples.real) + 1j * np.interp(
        t_skewed, t, samples.imag
    )


def propagate(tx, geom, cfg, imp=None, noise_floor_dbm=None, t0=None, rng=None):
    """Push a transmit waveform through the scene; one buffer per antenna.

    Each resolved path adds a delayed, scaled copy with carrier rotation
    ``exp(-2j*pi*f_c*delay)``; moving scatterers additionally rotate by the
    running two-hop path-length change. Receiver clock terms and per-antenna
    noise are applied on top. Outputs cover the same sample window as the
    input (energy delayed past its end is dropped).
    """
    if not isinstance(tx, SampleBuffer):
        tx = SampleBuffer(np.asarray(tx), cfg.sample_rate)
    if t0 is None:
        t0 = tx.start_time
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n = len(tx)
    fs = tx.sample_rate
    t_abs = t0 + np.arange(n) / fs

    imp = imp if imp is not None else ImpairmentProfile()
    extra_delay = imp.pdd_extra / fs  # realized as extra lateness of every path

    paths = resolve_paths(geom, cfg, t=t0)
    out = np.zeros((geom.n_antennas, n), dtype=np.complex128)
    for p in paths:
        delay = p.delay + extra_delay
        y = _fractional_delay(tx.samples, n, delay, fs)
        y *= p.alpha * np.exp(-2j * np.pi * cfg.carrier_freq * p.delay)
        if p.trajectory is not None:
            lengths = path_length(
                geom.tx_pos, geom.rx_pos, trajectory_positions(p.trajectory, t_abs)
            )
            y *= np.exp(
                -2j * np.pi * cfg.carrier_freq * (lengths - p.length0) / SPEED_OF_LIGHT
            )
        steer = steering_vector(p.aoa_deg, geom.n_antennas, geom.array_spacing_wl)
        out += steer[:, None] * y[None, :]

    if imp.cfo_hz != 0.0 or imp.cpo != 0.0:
        out *= np.exp(-2j * np.pi * (imp.cfo_hz * t_abs + imp.cpo))[None, :]
    if imp.sfo != 0.0:
        for i in range(geom.n_antennas):
            out[i] = _resample_skewed(out[i], fs, imp.sfo)
    if noise_floor_dbm is not None:
        for i in range(geom.n_antennas):
            out[i] += complex_noise(n, noise_floor_dbm, rng)
    return [SampleBuffer(out[i], fs, t0) for i in range(geom.n_antennas)]


# ---------------------------------------------------------------------------
# symbol-level clock impairments


def apply_clock_impairments(buf, cfg, imp, n_symbols=None, start=0):
    """Stamp clock error onto a training burst at symbol granularity.

    Symbol l's samples (cyclic prefix included; the short training field
    rides with l=0) get the block rotation
    ``exp(-2j*pi*(l*cfo_hz/(df*n_fft) + cpo))``, and each analysis window is
    re-spun in the frequency domain by ``exp(-2j*pi*k*(sfo+pdd_extra)/n_fft)``
    over the raw FFT bin index k, with cyclic prefixes rebuilt to match. The
    measured subcarrier phases then follow the clock-error model exactly,
    which is what makes phase-accuracy checks meaningful.
    """
    values = (buf.samples if isinstance(buf, SampleBuffer) else np.asarray(buf)).copy()
    fs = buf.sample_rate if isinstance(buf, SampleBuffer) else cfg.sample_rate
    t_start = buf.start_time if isinstance(buf, SampleBuffer) else 0.0
    n = cfg.fft_size
    cp = cfg.cyclic_prefix_len
    avail = len(values) - start
    if avail < cfg.preamble_len:
        raise ValueError("buffer too short for a training burst")
    if n_symbols is None:
        n_symbols = 2 + max(0, (avail - cfg.preamble_len) // (n + cp))
    spans = burst_symbol_spans(cfg, n_symbols)
    if start + spans[-1][1] > len(values):
        raise ValueError("buffer too short for requested symbol count")

    skew = imp.sfo + imp.pdd_extra
    if skew != 0.0:
        ramp = np.exp(-2j * np.pi * np.arange(n) * skew / n)
        for l, (_, _, win) in enumerate(spans):
            w0 = start + win
            spun = np.fft.ifft(np.fft.fft(values[w0 : w0 + n]) * ramp)
            values[w0 : w0 + n] = spun
            if l == 0:
                values[start + cfg.stf_len : start + cfg.ltf_window_offset] = spun[
                    -cfg.ltf_cp_len :
                ]
            elif l >= 2:
                values[w0 - cp : w0] = spun[-cp:]

    step = imp.cfo_hz / (cfg.subcarrier_spacing * n)
    for l, (lo, hi, _) in enumerate(spans):
        values[start + lo : start + hi] *= np.exp(-2j * np.pi * (l * step + imp.cpo))
    return SampleBuffer(values, fs, t_start)


# ---------------------------------------------------------------------------
# packet-rate channel synthesis


def synthesize_csi_series(geom, cfg, times, imp=None, snr_db=None, rng=None,
                          include_los=None):
    """Per-packet channel matrices for a sequence of measurement times.

    Returns an (n_packets, n_antennas, n_used) complex array. Each path
    contributes ``alpha * exp(-2j*pi*(f_c + f_k) * tau(t))`` with the exact
    two-hop delay at each packet time, so scatterer motion shows up as
    carrier-phase rotation across packets. Clock impairments add the packet
    rotation ``exp(-2j*pi*(cfo_hz*t + cpo))`` and a fixed phase ramp over the
    FFT bin index. ``snr_db`` sets per-subcarrier noise relative to the
    strongest path's power.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D array")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    tx_power = dbm_to_power(geom.tx_power_dbm)
    paths = resolve_paths(geom, cfg, t=times[0], include_los=include_los,
                          tx_power=tx_power)

    n_l = times.size
    n_ant = geom.n_antennas
    freqs = cfg.carrier_freq + cfg.subcarrier_freqs()
    out = np.zeros((n_l, n_ant, cfg.n_used), dtype=np.complex128)
    strongest = 0.0
    for p in paths:
        if p.trajectory is not None:
            pos = trajectory_positions(p.trajectory, times)
            r_tx = np.linalg.norm(pos - geom.tx_pos, axis=1)
            r_rx = np.linalg.norm(pos - geom.rx_pos, axis=1)
            if np.any(r_tx < _MIN_RANGE) or np.any(r_rx < _MIN_RANGE):
                raise ValueError("scatterer trajectory crosses tx or rx")
            tau = (r_tx + r_rx) / SPEED_OF_LIGHT
            if p.source is not None and p.source.amplitude is not None:
                alpha = np.full(n_l, p.source.amplitude)
            else:
                alpha = path_gain(r_tx, r_rx, p.source.rcs, cfg, tx_power,
                                  geom.gain_tx, geom.gain_rx)
            aoa = geom.aoa_of(pos)
        else:
            tau = np.full(n_l, p.delay)
            alpha = np.full(n_l, p.alpha)
            aoa = np.full(n_l, p.aoa_deg)
        steer = np.exp(
            -2j
            * np.pi
            * np.arange(n_ant)[None, :]
            * geom.array_spacing_wl
            * np.sin(np.radians(aoa))[:, None]
        )
        core = np.exp(-2j * np.pi * tau[:, None] * freqs[None, :])
        out += alpha[:, None, None] * steer[:, :, None] * core[:, None, :]
        strongest = max(strongest, float(np.mean(np.abs(alpha) ** 2)))

    if imp is not None:
        packet_phase = np.exp(-2j * np.pi * (imp.cfo_hz * times + imp.cpo))
        skew = imp.sfo + imp.pdd_extra
        ramp = np.exp(-2j * np.pi * cfg.used_bins * skew / cfg.fft_size)
        out *= packet_phase[:, None, None] * ramp[None, None, :]

    if snr_db is not None:
        if strongest == 0.0:
            raise ValueError("cannot scale noise to an all-zero scene")
        noise_dbm = power_to_dbm(strongest) - snr_db
        noise = complex_noise(out.size, noise_dbm, rng).reshape(out.shape)
        out += noise
    return out


# ---------------------------------------------------------------------------
# scenario files


_SCENARIO_SCALARS = {
    "seed": ("seed", int),
    "noise_floor_dbm": ("noise_floor_dbm", float),
}

_RADIO_KEYS = {
    "radio.carrier_freq_hz": ("carrier_freq", float),
    "radio.sample_rate_hz": ("sample_rate", float),
    "radio.fft_size": ("fft_size", int),
    "radio.cyclic_prefix_len": ("cyclic_prefix_len", int),
}

_GEOMETRY_KEYS = {
    "geometry.tx_pos": ("tx_pos", None),
    "geometry.rx_pos": ("rx_pos", None),
    "geometry.tx_power_dbm": ("tx_power_dbm", float),
    "geometry.gain_tx": ("gain_tx", float),
    "geometry.gain_rx": ("gain_rx", float),
    "geometry.n_antennas": ("n_antennas", int),
    "geometry.array_spacing_wl": ("array_spacing_wl", float),
    "geometry.boresight_deg": ("boresight_deg", float),
    "geometry.include_los": ("include_los", bool),
}

_IMPAIRMENT_KEYS = {
    "impairment.cfo_hz": ("cfo_hz", float),
    "impairment.cpo": ("cpo", float),
    "impairment.sfo": ("sfo", float),
    "impairment.pdd_extra": ("pdd_extra", float),
}

_TARGET_FIELDS = {
    "position",
    "velocity",
    "rcs",
    "aoa_deg",
    "amplitude",
    "delay_s",
    "breath_amplitude_m",
    "breath_rate_hz",
    "label",
}


@dataclass
class Scenario:
    """A parsed scene: radio settings, geometry, clock error, noise, seed."""

    radio: RadioConfig
    geometry: ScenarioGeometry
    impairments: ImpairmentProfile
    noise_floor_dbm: float = None
    seed: int = 0
    raw: dict = field(default_factory=dict)


def _target_from_fields(name, fields):
    unknown = set(fields) - _TARGET_FIELDS
    if unknown:
        raise ConfigError(f"unknown {name} key(s): {', '.join(sorted(unknown))}")
    position = fields.get("position")
    trajectory = None
    if "breath_amplitude_m" in fields or "breath_rate_hz" in fields:
        if position is None:
            raise ConfigError(f"{name}: breathing motion needs a position")
        if "velocity" in fields:
            raise ConfigError(f"{name}: give velocity or breathing, not both")
        trajectory = breathing_trajectory(
            position,
            amplitude_m=float(fields.get("breath_amplitude_m", 0.005)),
            rate_hz=float(fields.get("breath_rate_hz", 0.25)),
        )
        position = None
    elif "velocity" in fields:
        if position is None:
            raise ConfigError(f"{name}: velocity needs a starting position")
        trajectory = linear_trajectory(position, fields["velocity"])
        position = None
    return PropagationPath(
        index=2,
        position=position,
        trajectory=trajectory,
        rcs=float(fields.get("rcs", 1.0)),
        aoa_deg=fields.get("aoa_deg"),
        amplitude=fields.get("amplitude"),
        delay=fields.get("delay_s"),
        label=str(fields.get("label", name)),
    )


def scenario_from_dict(values):
    """Build a Scenario from flat dotted keys; unknown keys raise ConfigError."""
    radio_kwargs = {}
    geom_kwargs = {}
    imp_kwargs = {}
    scalars = {}
    target_fields = {}
    for key, value in values.items():
        if key in _SCENARIO_SCALARS:
            name, cast = _SCENARIO_SCALARS[key]
            scalars[name] = cast(value)
        elif key in _RADIO_KEYS:
            name, cast = _RADIO_KEYS[key]
            radio_kwargs[name] = cast(value)
        elif key in _GEOMETRY_KEYS:
            name, cast = _GEOMETRY_KEYS[key]
            geom_kwargs[name] = cast(value) if cast else value
        elif key in _IMPAIRMENT_KEYS:
            name, cast = _IMPAIRMENT_KEYS[key]
            imp_kwargs[name] = cast(value)
        elif key.startswith("target") and "." in key:
            prefix, _, fieldname = key.partition(".")
            target_fields.setdefault(prefix, {})[fieldname] = value
        else:
            raise ConfigError(f"unknown scenario key: {key}")
    targets = [
        _target_from_fields(name, fields)
        for name, fields in sorted(target_fields.items())
    ]
    geometry = ScenarioGeometry(targets=tuple(targets), **geom_kwargs)
    return Scenario(
        radio=RadioConfig(**radio_kwargs),
        geometry=geometry,
        impairments=ImpairmentProfile(**imp_kwargs),
        noise_floor_dbm=scalars.get("noise_floor_dbm"),
        seed=scalars.get("seed", 0),
        raw=dict(values),
    )


def load_scenario(path):
    """Read a ``key = value`` scene description file."""
    return scenario_from_dict(read_flat_config(path))


__all__ = [
    "path_gain",
    "los_gain",
    "power_ratio",
    "bistatic_projection",
    "path_length",
    "delta_r_series",
    "linear_trajectory",
    "breathing_trajectory",
    "trajectory_positions",
    "PropagationPath",
    "ImpairmentProfile",
    "ScenarioGeometry",
    "steering_vector",
    "ResolvedPath",
    "resolve_paths",
    "propagate",
    "apply_clock_impairments",
    "synthesize_csi_series",
    "Scenario",
    "scenario_from_dict",
    "load_scenario",
]

"""Channel-feature estimation from packet-time CSI.

The centerpiece is a sparse delay/Doppler estimator that works directly on
irregularly spaced packets: it builds the nonuniform dictionary whose atoms
are ``exp(-2j*pi*(f_c+f_k)*tau_i) * exp(-2j*pi*nu_j*T_l)`` and solves an
l1-penalized least-squares problem with ADMM. Classical baselines (inverse
transform across subcarriers, subspace pseudospectra for delay and angle,
packet-rate FFT Doppler) are included because their failure modes under
irregular sampling are exactly what the sparse path fixes.
"""

import csv as _csv
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .channel import steering_vector
from .ofdm import SPEED_OF_LIGHT, CsiMatrix
from .sigcore import TWO_PI


# ---------------------------------------------------------------------------
# schedules and containers


@dataclass
class TxSchedule:
    """Packet transmit times; gaps may be anything as long as time moves on."""

    times: np.ndarray
    packet_ids: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1 or self.times.size == 0:
            raise ValueError("schedule needs a non-empty 1-D time sequence")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("schedule times must be strictly increasing")
        if self.packet_ids is None:
            self.packet_ids = np.arange(self.times.size)
        self.packet_ids = np.asarray(self.packet_ids)
        if self.packet_ids.shape != self.times.shape:
            raise ValueError("packet_ids must pair with times")

    def __len__(self):
        return self.times.size

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0])

    def is_uniform(self, rtol=1e-6):
        if len(self) < 3:
            return True
        gaps = np.diff(self.times)
        return bool(np.all(np.abs(gaps - gaps[0]) <= rtol * gaps[0]))


@dataclass
class FeatureVector:
    """Sparse coefficients on a delay x Doppler grid."""

    delay_grid: np.ndarray
    doppler_grid: np.ndarray
    coefficients: np.ndarray
    converged: bool = True

    def __post_init__(self):
        self.delay_grid = np.asarray(self.delay_grid, dtype=np.float64)
        self.doppler_grid = np.asarray(self.doppler_grid, dtype=np.float64)
        self.coefficients = np.asarray(self.coefficients, dtype=np.complex128)
        if self.coefficients.shape != (self.delay_grid.size, self.doppler_grid.size):
            raise ValueError("coefficient grid must be (n_delays, n_dopplers)")
        if self.coefficients.size and not np.all(np.isfinite(self.coefficients)):
            raise ValueError("coefficients must be finite")

    def dominant(self, min_doppler_hz=None):
        """(delay_s, doppler_hz, coefficient) of the largest atom.

        ``min_doppler_hz`` restricts the search to atoms moving at least
        that fast; that is how a caller pulls a moving target out of static
        clutter sharing the capture, which delay-only estimators cannot do.
        """
        mags = np.abs(self.coefficients)
        if min_doppler_hz is not None:
            moving = np.abs(self.doppler_grid) >= min_doppler_hz
            if not np.any(moving):
                raise ValueError("no atoms beyond the Doppler cutoff")
            mags = np.where(moving[None, :], mags, 0.0)
        i, j = np.unravel_index(np.argmax(mags), mags.shape)
        return (
            float(self.delay_grid[i]),
            float(self.doppler_grid[j]),
            complex(self.coefficients[i, j]),
        )

    def delay_profile(self):
        """Peak magnitude over Doppler for each candidate delay."""
        if self.coefficients.size == 0:
            return np.zeros(0)
        return np.max(np.abs(self.coefficients), axis=1)

    def support(self, rel=0.05):
        mags = np.abs(self.coefficients)
        if mags.size == 0 or mags.max() == 0:
            return np.zeros_like(mags, dtype=bool)
        return mags >= rel * mags.max()


@dataclass
class SensingEstimate:
    """One device's view of one target."""

    tof: float = None
    range_m: float = None
    aoa_deg: float = None
    velocity: float = None
    confidence: float = 1.0

    def __post_init__(self):
        if self.tof is not None and self.range_m is None:
            self.range_m = SPEED_OF_LIGHT * self.tof / 2.0
        elif self.range_m is not None and self.tof is None:
            self.tof = 2.0 * self.range_m / SPEED_OF_LIGHT
        elif self.tof is not None and self.range_m is not None:
            if not np.isclose(self.range_m, SPEED_OF_LIGHT * self.tof / 2.0,
                              rtol=1e-6):
                raise ValueError("range and time-of-flight disagree")
        if self.aoa_deg is not None and not -90.0 <= self.aoa_deg <= 90.0:
            raise ValueError("arrival angle must lie in [-90, 90] degrees")


# ---------------------------------------------------------------------------
# ADMM lasso


LassoResult = namedtuple("LassoResult", "coefficients converged iterations objectives")


def _soft_threshold(x, kappa):
    mags = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mags > kappa, 1.0 - kappa / np.maximum(mags, 1e-300), 0.0)
    return x * scale


def _conjugate_gradient(op, b, x0, max_iters=50, tol=1e-10):
    x = x0.copy()
    r = b - op(x)
    p = r.copy()
    rs = np.vdot(r, r).real
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b)
    for _ in range(max_iters):
        if np.sqrt(rs) <= tol * b_norm:
            break
        ap = op(p)
        alpha = rs / np.vdot(p, ap).real
        x += alpha * p
        r -= alpha * ap
        rs_new = np.vdot(r, r).real
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def _gram_norm_estimate(apply_a, apply_a_adjoint, seed_vec, n_iters=12):
    """Power-iteration estimate of the largest eigenvalue of A^H A."""
    norm = np.linalg.norm(seed_vec)
    if norm == 0.0:
        return 1.0
    v = seed_vec / norm
    lam = 1.0
    for _ in range(n_iters):
        w = apply_a_adjoint(apply_a(v)).reshape(-1)
        lam = np.linalg.norm(w)
        if lam == 0.0:
            return 1.0
        v = w / lam
    return float(lam)


def admm_lasso(apply_a, apply_a_adjoint, y, lam, rho=None, max_iters=200,
               tol=1e-6, cg_iters=50):
    """Solve min 0.5*||A x - y||^2 + lam*||x||_1 with operator access only.

    The quadratic subproblem is solved by warm-started conjugate gradients on
    the normal equations, so only ``apply_a`` and its adjoint are needed.
    When ``rho`` is not given it is set to a power-iteration estimate of
    ||A||^2, which damps the splitting enough that the objective decreases
    essentially monotonically instead of ringing toward the optimum.
    Returns a LassoResult whose ``converged`` flag is False when the stopping
    criteria were not met within ``max_iters`` — callers must check it rather
    than trust a silently truncated solve. The solve stops when the primal
    residual is small and either the dual residual is small too or the
    objective has been stationary (relative change below ``tol``) for five
    consecutive iterations; the latter matters for highly coherent
    dictionaries, where near-identical neighboring atoms trade coefficient
    mass at a vanishing rate long after the objective has settled.
    """
    if lam <= 0 or (rho is not None and rho <= 0):
        raise ValueError("lam and rho must be positive")
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    aty = apply_a_adjoint(y).reshape(-1)
    n = aty.size
    test = apply_a(np.zeros(n, dtype=np.complex128)).reshape(-1)
    if test.size != y.size:
        raise ValueError("operator output size does not match y")
    if rho is None:
        rho = max(_gram_norm_estimate(apply_a, apply_a_adjoint, aty), 1e-8)

    def normal_op(v):
        return apply_a_adjoint(apply_a(v)).reshape(-1) + rho * v

    x = np.zeros(n, dtype=np.complex128)
    z = np.zeros(n, dtype=np.complex128)
    u = np.zeros(n, dtype=np.complex128)
    objectives = []
    converged = False
    iterations = 0
    stalled = 0
    sqrt_n = np.sqrt(n)
    for it in range(max_iters):
        iterations = it + 1
        x = _conjugate_gradient(
            normal_op, aty + rho * (z - u), x, max_iters=cg_iters
        )
        z_old = z
        z = _soft_threshold(x + u, lam / rho)
        u = u + x - z

        resid = apply_a(z).reshape(-1) - y
        objectives.append(0.5 * np.vdot(resid, resid).real
                          + lam * np.sum(np.abs(z)))
        if len(objectives) >= 2 and abs(objectives[-1] - objectives[-2]) <= (
            tol * max(1.0, abs(objectives[-2]))
        ):
            stalled += 1
        else:
            stalled = 0

        r_norm = np.linalg.norm(x - z)
        s_norm = rho * np.linalg.norm(z - z_old)
        eps_pri = sqrt_n * tol + tol * max(np.linalg.norm(x), np.linalg.norm(z))
        eps_dual = sqrt_n * tol + tol * rho * np.linalg.norm(u)
        if r_norm <= eps_pri and (s_norm <= eps_dual or stalled >= 5):
            converged = True
            break
    return LassoResult(z, converged, iterations, np.asarray(objectives))


# ---------------------------------------------------------------------------
# sparse delay/Doppler estimation


def default_delay_grid():
    return np.arange(0.0, 500e-9 + 1e-12, 5e-9)


def default_doppler_grid():
    return np.arange(-60.0, 60.0 + 1e-9, 0.25)


def csi_array_from_matrices(csi_list, antenna=0):
    """Stack packet CSI matrices into (n_packets, n_sub) plus timestamps."""
    rows = [np.asarray(c.values)[antenna, 0, :] for c in csi_list]
    times = np.array([c.timestamp for c in csi_list])
    return np.asarray(rows), times


def _series_2d(csi_series, antenna=0):
    arr = np.asarray(csi_series, dtype=np.complex128)
    if arr.ndim == 3:
        arr = arr[:, antenna, :]
    if arr.ndim != 2:
        raise ValueError("csi series must be (packets, subcarriers)")
    return arr


def dictionary_matrices(sched, cfg, delay_grid, doppler_grid):
    """The separable nonuniform dictionary: per-subcarrier and per-packet parts."""
    freqs = cfg.carrier_freq + cfg.subcarrier_freqs()
    d_mat = np.exp(-2j * np.pi * np.outer(freqs, delay_grid))
    g_mat = np.exp(-2j * np.pi * np.outer(sched.times, doppler_grid))
    return d_mat, g_mat


def estimate_features_sparse(csi_series, sched, cfg, delay_grid=None,
                             doppler_grid=None, lam_frac=0.1, rho=None,
                             max_iters=80, tol=1e-3, antenna=0):
    """Sparse delay/Doppler atoms straight from irregular packet times.

    The observed series is modeled as the dictionary ``D Gamma G^T``
    evaluated at the actual transmit instants, so nothing assumes uniform
    sampling. ``lam_frac`` scales the l1 weight relative to the largest
    correlation with the data. The default tolerance is loose because peak
    positions stabilize long before the coefficients between near-identical
    neighboring atoms do; tighten it when the coefficient values themselves
    matter.
    """
    if isinstance(sched, (list, tuple, np.ndarray)):
        sched = TxSchedule(np.asarray(sched))
    if isinstance(csi_series, (list, tuple)) and csi_series and isinstance(
        csi_series[0], CsiMatrix
    ):
        csi_series, stamps = csi_array_from_matrices(csi_series, antenna)
        if not np.allclose(stamps, sched.times, atol=1e-9):
            raise ValueError("CSI timestamps disagree with the schedule")
    h = _series_2d(csi_series, antenna)
    if h.shape[0] != len(sched):
        raise ValueError("need one CSI row per scheduled packet")
    if h.size == 0:
        raise ValueError("empty CSI series")
    delay_grid = default_delay_grid() if delay_grid is None else np.asarray(delay_grid)
    doppler_grid = (
        default_doppler_grid() if doppler_grid is None else np.asarray(doppler_grid)
    )
    d_mat, g_mat = dictionary_matrices(sched, cfg, delay_grid, doppler_grid)
    n_l, n_k = h.shape
    n_d, n_v = delay_grid.size, doppler_grid.size
    scale = 1.0 / np.sqrt(n_l * n_k)

    def apply_a(flat):
        gamma = flat.reshape(n_d, n_v)
        return (g_mat @ gamma.T @ d_mat.T).reshape(-1) * scale

    def apply_at(flat):
        y2 = flat.reshape(n_l, n_k)
        return (d_mat.conj().T @ y2.T @ g_mat.conj()).reshape(-1) * scale

    y = h.reshape(-1)
    lam = lam_frac * float(np.max(np.abs(apply_at(y))))
    if lam == 0.0:
        coef = np.zeros((n_d, n_v), dtype=np.complex128)
        return FeatureVector(delay_grid, doppler_grid, coef, converged=True)
    result = admm_lasso(apply_a, apply_at, y, lam, rho=rho, max_iters=max_iters,
                        tol=tol)
    coef = result.coefficients.reshape(n_d, n_v)
    return FeatureVector(delay_grid, doppler_grid, coef,
                         converged=result.converged)


def matched_filter_peak(csi_series, sched, cfg, delay_grid, doppler_grid):
    """Dense correlation search over the same dictionary (baseline oracle)."""
    if isinstance(sched, (list, tuple, np.ndarray)):
        sched = TxSchedule(np.asarray(sched))
    h = _series_2d(csi_series)
    d_mat, g_mat = dictionary_matrices(sched, cfg, delay_grid, doppler_grid)
    corr = np.abs(d_mat.conj().T @ h.T @ g_mat.conj())
    i, j = np.unravel_index(np.argmax(corr), corr.shape)
    return float(delay_grid[i]), float(doppler_grid[j])


# ---------------------------------------------------------------------------
# classical range baselines


def _single_csi(csi, antenna=0):
    if isinstance(csi, CsiMatrix):
        return np.asarray(csi.values)[antenna, 0, :]
    arr = np.asarray(csi, dtype=np.complex128)
    if arr.ndim == 3:
        arr = arr[:, antenna, :]
    if arr.ndim == 2:
        # coherent packet averaging: the traditional pre-processing step,
        # and the reason slow-moving targets wash out of this baseline
        arr = arr.mean(axis=0)
    return arr


def ifft_range_profile(csi, cfg, pad_factor=1, antenna=0):
    """Coarse power-delay profile from an inverse transform across bins."""
    h = _single_csi(csi, antenna)
    if h.size < 2:
        raise ValueError("need at least two subcarriers")
    n = cfg.fft_size * pad_factor
    spec = np.zeros(n, dtype=np.complex128)
    spec[np.asarray(cfg.used_bins) * pad_factor] = h
    profile = np.abs(np.fft.ifft(spec))
    delays = np.arange(n) / (cfg.sample_rate * pad_factor)
    ranges = SPEED_OF_LIGHT * delays / 2.0
    return ranges, profile


def range_ifft(csi, cfg, antenna=0):
    """Strongest bin of the inverse-transform profile, as a monostatic range.

    Resolution is hard-limited by the swept bandwidth: c/(2B), i.e. 7.5 m
    bins for a 20 MHz channel.
    """
    ranges, profile = ifft_range_profile(csi, cfg, antenna=antenna)
    half = len(profile) // 2 + 1
    return float(ranges[int(np.argmax(profile[:half]))])


MusicResult = namedtuple("MusicResult", "values degraded grid spectrum")


def _top_peaks(grid, spectrum, count):
    interior = np.zeros(spectrum.size, dtype=bool)
    if spectrum.size >= 3:
        interior[1:-1] = (spectrum[1:-1] >= spectrum[:-2]) & (
            spectrum[1:-1] >= spectrum[2:]
        )
    interior[0] = spectrum.size > 1 and spectrum[0] > spectrum[1]
    interior[-1] = spectrum.size > 1 and spectrum[-1] > spectrum[-2]
    candidates = np.flatnonzero(interior)
    if candidates.size < count:
        extras = np.argsort(spectrum)[::-1]
        candidates = np.unique(np.concatenate([candidates, extras[:count]]))
    order = candidates[np.argsort(spectrum[candidates])[::-1]]
    return grid[order[:count]]


def _contiguous_runs(signed):
    """Split a sorted signed-index array into runs with unit spacing."""
    breaks = np.flatnonzero(np.diff(signed) != 1)
    return np.split(np.arange(signed.size), breaks + 1)


def range_music(csi, n_paths, cfg, grid=None, subarray_len=16, antenna=0):
    """Subspace delay pseudospectrum with frequency smoothing.

    CSI bins are grouped into contiguous equally spaced runs, and sliding
    subarrays of ``subarray_len`` bins inside each run (across all packets)
    supply the covariance snapshots; smoothing over start offsets is what
    decorrelates same-scene static paths.
    """
    if n_paths < 1:
        raise ValueError("need at least one path to look for")
    if subarray_len <= n_paths:
        raise ValueError("subarray too short for the requested model order")
    arr = np.asarray(csi.values)[None, antenna, 0, :] if isinstance(
        csi, CsiMatrix
    ) else np.asarray(csi, dtype=np.complex128)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim == 3:
        arr = arr[:, antenna, :]

    signed = cfg.signed_index()
    order = np.argsort(signed)
    signed_sorted = signed[order]
    arr = arr[:, order]

    snapshots = []
    for run in _contiguous_runs(signed_sorted):
        if run.size < subarray_len:
            continue
        block = arr[:, run]
        for start in range(run.size - subarray_len + 1):
            snapshots.append(block[:, start : start + subarray_len])
    if not snapshots:
        raise ValueError("no contiguous bin run is as long as the subarray")
    stack = np.concatenate(snapshots, axis=0)  # (n_snapshots, subarray_len)
    degraded = stack.shape[0] < subarray_len
    cov = (stack.T @ stack.conj()) / stack.shape[0]

    _, vecs = np.linalg.eigh(cov)
    noise = vecs[:, : subarray_len - n_paths]
    if grid is None:
        grid = np.arange(0.0, 500e-9, 1e-9)
    grid = np.asarray(grid, dtype=np.float64)
    steer = np.exp(
        -2j
        * np.pi
        * cfg.subcarrier_spacing
        * np.outer(np.arange(subarray_len), grid)
    )
    denom = np.sum(np.abs(noise.conj().T @ steer) ** 2, axis=0)
    spectrum = 1.0 / np.maximum(denom, 1e-18)
    delays = _top_peaks(grid, spectrum, n_paths)
    ranges = SPEED_OF_LIGHT * delays / 2.0
    return MusicResult(ranges, degraded, grid, spectrum)


def aoa_music(csi, n_sources, spacing_wl=0.5, grid=None):
    """Subspace arrival-angle pseudospectrum over the antenna dimension."""
    arr = np.asarray(csi, dtype=np.complex128)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ValueError("need (packets, antennas, subcarriers) CSI")
    n_ant = arr.shape[1]
    if not 1 <= n_sources < n_ant:
        raise ValueError("source count must be below the antenna count")
    snapshots = np.moveaxis(arr, 1, 2).reshape(-1, n_ant)
    degraded = snapshots.shape[0] < n_ant
    cov = (snapshots.T @ snapshots.conj()) / snapshots.shape[0]
    _, vecs = np.linalg.eigh(cov)
    noise = vecs[:, : n_ant - n_sources]
    if grid is None:
        grid = np.arange(-90.0, 90.0 + 1e-9, 0.5)
    grid = np.asarray(grid, dtype=np.float64)
    steer = np.stack(
        [steering_vector(theta, n_ant, spacing_wl) for theta in grid], axis=1
    )
    denom = np.sum(np.abs(noise.conj().T @ steer) ** 2, axis=0)
    spectrum = 1.0 / np.maximum(denom, 1e-18)
    angles = _top_peaks(grid, spectrum, n_sources)
    return MusicResult(angles, degraded, grid, spectrum)


# ---------------------------------------------------------------------------
# velocity


def velocity_fft(csi_series, sched, cfg, pad_factor=8, remove_static=True,
                 antenna=0):
    """Packet-rate Doppler peak, monostatic velocity magnitude.

    Only defined for uniform schedules — the transform has no notion of
    sample positions, which is this baseline's defining weakness. The packet
    rate must exceed twice the Doppler being measured (a 3.5 m/s target at
    2.4 GHz needs > 112 packets/s) or the peak aliases.
    """
    if isinstance(sched, (list, tuple, np.ndarray)):
        sched = TxSchedule(np.asarray(sched))
    if not sched.is_uniform():
        raise ValueError("transform baseline requires a uniform schedule")
    h = _series_2d(csi_series, antenna)
    if h.shape[0] != len(sched):
        raise ValueError("need one CSI row per scheduled packet")
    if remove_static and h.shape[0] >= 8:
        h = h - h.mean(axis=0, keepdims=True)
    n_fft = pad_factor * h.shape[0]
    spec = np.fft.fft(h, n=n_fft, axis=0)
    power = np.sum(np.abs(spec) ** 2, axis=1)
    dt = float(np.mean(np.diff(sched.times))) if len(sched) > 1 else 1.0
    freqs = np.fft.fftfreq(n_fft, d=dt)
    f_peak = freqs[int(np.argmax(power))]
    return abs(f_peak) * cfg.wavelength / 2.0


def snap_to_uniform(csi_series, sched):
    """Naive regularization: snap each uniform grid slot to the nearest packet.

    This is the obvious (and wrong) way to feed irregular packets to the
    transform baseline; it exists to measure how badly that goes.
    """
    if isinstance(sched, (list, tuple, np.ndarray)):
        sched = TxSchedule(np.asarray(sched))
    h = _series_2d(csi_series)
    times = sched.times
    grid = np.linspace(times[0], times[-1], len(sched))
    idx = np.clip(np.searchsorted(times, grid), 0, len(times) - 1)
    left = np.maximum(idx - 1, 0)
    choose_left = np.abs(times[left] - grid) <= np.abs(times[idx] - grid)
    nearest = np.where(choose_left, left, idx)
    return h[nearest], TxSchedule(grid, sched.packet_ids)


def velocity_sparse(csi_series, sched, cfg, delay_grid=None, doppler_grid=None,
                    **solver_kwargs):
    """Velocity magnitude from the dominant sparse Doppler atom."""
    if isinstance(sched, (list, tuple, np.ndarray)):
        sched = TxSchedule(np.asarray(sched))
    if len(sched) < 8:
        raise ValueError("need at least 8 packets for the sparse estimator")
    if delay_grid is None:
        delay_grid = np.arange(0.0, 300e-9, 10e-9)
    feats = estimate_features_sparse(
        csi_series, sched, cfg, delay_grid=delay_grid, doppler_grid=doppler_grid,
        **solver_kwargs,
    )
    _, doppler, _ = feats.dominant()
    return abs(doppler) * cfg.wavelength / 2.0


# ---------------------------------------------------------------------------
# localization


def localize_single(est, device_pos=(0.0, 0.0), heading_deg=0.0):
    """Place the target from one device's range and arrival angle."""
    if est.range_m is None or est.aoa_deg is None:
        raise ValueError("localization needs both a range and an angle")
    ang = np.radians(heading_deg + est.aoa_deg)
    device_pos = np.asarray(device_pos, dtype=np.float64)
    return device_pos + est.range_m * np.array([np.cos(ang), np.sin(ang)])


def write_estimates_csv(path, rows):
    """CSV export: (trial, truth_range_m, est_range_m, method, snr_db, schedule_kind)."""
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["trial", "truth_range_m", "est_range_m", "method", "snr_db",
             "schedule_kind"]
        )
        for row in rows:
            trial, truth, est, method, snr, kind = row
            writer.writerow(
                [trial, f"{truth:.4f}", f"{est:.4f}", method, f"{snr:.2f}", kind]
            )


__all__ = [
    "TxSchedule",
    "FeatureVector",
    "SensingEstimate",
    "LassoResult",
    "admm_lasso",
    "default_delay_grid",
    "default_doppler_grid",
    "csi_array_from_matrices",
    "dictionary_matrices",
    "estimate_features_sparse",
    "matched_filter_peak",
    "ifft_range_profile",
    "range_ifft",
    "MusicResult",
    "range_music",
    "aoa_music",
    "velocity_fft",
    "snap_to_uniform",
    "velocity_sparse",
    "localize_single",
    "write_estimates_csv",
]

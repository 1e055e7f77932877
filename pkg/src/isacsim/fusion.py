"""Multi-device fusion: sensing messages, an in-process bus, and ML grids.

Each device reduces its CSI processing to a compact sensing message — where
the device sits, when it looked, and the (range, angle) it measured with a
confidence weight. A coordinator collects messages from any number of
devices and fuses them on a common ground grid by summing per-observation
Gaussian log-likelihoods, then picking the best cell with sub-cell quadratic
refinement. One device gives the classic single-view fix; several devices
shrink the error because their range/angle uncertainty ellipses intersect.
"""

import heapq
import warnings
from dataclasses import dataclass, field

import numpy as np

from .estimate import localize_single


def wrap_deg(angle):
    """Wrap degrees into [-180, 180)."""
    return (np.asarray(angle) + 180.0) % 360.0 - 180.0


@dataclass
class SensingMessage:
    """One device's observation at one instant.

    Pose fields locate the device on the ground plane; ``aoa_deg`` may be
    NaN for a range-only observation (single-antenna device).
    """

    device_id: str
    t_s: float
    x_m: float
    y_m: float
    heading_deg: float
    range_m: float
    aoa_deg: float = float("nan")
    confidence: float = 1.0

    def __post_init__(self):
        for name in ("t_s", "x_m", "y_m", "heading_deg", "range_m", "confidence"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.range_m < 0:
            raise ValueError("range_m must be non-negative")
        if self.confidence <= 0:
            raise ValueError("confidence must be positive")

    def to_line(self):
        """device_id, t_s, x_m, y_m, heading_deg, range_m, aoa_deg, confidence"""
        return (
            f"{self.device_id},{self.t_s:.6f},{self.x_m:.3f},{self.y_m:.3f},"
            f"{self.heading_deg:.2f},{self.range_m:.4f},{self.aoa_deg:.3f},"
            f"{self.confidence:.4f}"
        )

    @classmethod
    def from_line(cls, line):
        parts = [p.strip() for p in line.strip().split(",")]
        if len(parts) != 8:
            raise ValueError(f"expected 8 fields, got {len(parts)}")
        return cls(parts[0], *map(float, parts[1:]))

    @classmethod
    def from_estimate(cls, device_id, t_s, pose, est):
        """Build a message from a SensingEstimate and a (x, y, heading) pose."""
        x, y, heading = pose
        aoa = est.aoa_deg if est.aoa_deg is not None else float("nan")
        return cls(device_id, t_s, x, y, heading, est.range_m, aoa,
                   est.confidence)


def write_messages(path, messages):
    with open(path, "w") as fh:
        fh.write("device_id,t_s,x_m,y_m,heading_deg,range_m,aoa_deg,confidence\n")
        for m in messages:
            fh.write(m.to_line() + "\n")


def read_messages(path):
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line or (i == 0 and line.startswith("device_id")):
                continue
            out.append(SensingMessage.from_line(line))
    return out


class MessageBus:
    """In-process pub/sub that delivers in timestamp order.

    Messages are queued on publish and handed to subscribers on flush(),
    ordered by message timestamp plus the bus latency (publish order breaks
    ties). Publishing to a topic nobody subscribed to warns and drops."""

    def __init__(self, latency_s=0.0):
        if latency_s < 0:
            raise ValueError("latency must be non-negative")
        self.latency_s = latency_s
        self._subs = {}
        self._queue = []
        self._seq = 0
        self.n_delivered = 0
        self.n_dropped = 0

    def subscribe(self, topic, callback):
        self._subs.setdefault(topic, []).append(callback)

    def collector(self, topic):
        """Subscribe a plain list; returns it."""
        sink = []
        self.subscribe(topic, sink.append)
        return sink

    def publish(self, topic, message):
        if topic not in self._subs:
            warnings.warn(f"no subscribers for topic {topic!r}; message dropped")
            self.n_dropped += 1
            return
        heapq.heappush(
            self._queue, (message.t_s + self.latency_s, self._seq, topic, message)
        )
        self._seq += 1

    def flush(self):
        """Deliver everything queued, in delivery-time order."""
        delivered = 0
        while self._queue:
            _, _, topic, message = heapq.heappop(self._queue)
            for cb in self._subs.get(topic, ()):
                cb(message)
            delivered += 1
        self.n_delivered += delivered
        return delivered


# ---------------------------------------------------------------------------
# maximum-likelihood grid fusion


@dataclass
class LikelihoodGrid:
    """Log-likelihood surface over ground-plane cells."""

    xs: np.ndarray
    ys: np.ndarray
    loglik: np.ndarray  # shape (len(ys), len(xs))

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        self.loglik = np.asarray(self.loglik, dtype=np.float64)
        if self.loglik.shape != (len(self.ys), len(self.xs)):
            raise ValueError("loglik shape must be (len(ys), len(xs))")
        if not np.all(np.isfinite(self.loglik)):
            raise ValueError("loglik must be finite")

    def argmax(self):
        iy, ix = np.unravel_index(np.argmax(self.loglik), self.loglik.shape)
        return int(ix), int(iy)


@dataclass
class FusionResult:
    x_m: float
    y_m: float
    grid: LikelihoodGrid
    n_messages: int
    cell_x: float = 0.0
    cell_y: float = 0.0


def _default_bounds(messages, margin):
    xs = np.array([m.x_m for m in messages])
    ys = np.array([m.y_m for m in messages])
    reach = np.array([m.range_m for m in messages]) + margin
    return (
        float(np.min(xs - reach)),
        float(np.max(xs + reach)),
        float(np.min(ys - reach)),
        float(np.max(ys + reach)),
    )


def message_loglik(message, x, y, sigma_range=0.5, sigma_aoa_deg=5.0):
    """Gaussian log-likelihood (up to constants) of one observation at (x, y)."""
    dx = np.asarray(x, dtype=np.float64) - message.x_m
    dy = np.asarray(y, dtype=np.float64) - message.y_m
    r = np.hypot(dx, dy)
    ll = -0.5 * ((r - message.range_m) / sigma_range) ** 2
    if np.isfinite(message.aoa_deg):
        aoa = np.degrees(np.arctan2(dy, dx)) - message.heading_deg
        diff = wrap_deg(aoa - message.aoa_deg)
        ll = ll - 0.5 * (diff / sigma_aoa_deg) ** 2
    return message.confidence * ll


def _refine_axis(values, idx, step):
    """Sub-cell peak offset from a 3-point parabola; clamped to half a cell."""
    if idx <= 0 or idx >= len(values) - 1:
        return 0.0
    left, mid, right = values[idx - 1], values[idx], values[idx + 1]
    denom = left - 2.0 * mid + right
    if denom >= -1e-12:
        return 0.0
    offset = 0.5 * (left - right) / denom
    return float(np.clip(offset, -0.5, 0.5)) * step


def fuse_ml(messages, sigma_range=0.5, sigma_aoa_deg=5.0, cell_m=0.25,
            bounds=None, margin=1.0):
    """Maximum-likelihood target position from any number of messages.

    Sums per-message Gaussian log-likelihoods over a ground grid (range
    always; angle when the message carries one), takes the best cell, and
    refines each axis with a three-point parabola. Raises on an empty
    message list."""
    messages = list(messages)
    if not messages:
        raise ValueError("need at least one sensing message")
    if cell_m <= 0:
        raise ValueError("cell size must be positive")
    if bounds is None:
        bounds = _default_bounds(messages, margin)
    x_lo, x_hi, y_lo, y_hi = bounds
    if not (x_hi > x_lo and y_hi > y_lo):
        raise ValueError("bounds must span a nonzero area")
    xs = np.arange(x_lo + cell_m / 2, x_hi, cell_m)
    ys = np.arange(y_lo + cell_m / 2, y_hi, cell_m)
    grid_x, grid_y = np.meshgrid(xs, ys)
    loglik = np.zeros_like(grid_x)
    for m in messages:
        loglik += message_loglik(m, grid_x, grid_y, sigma_range, sigma_aoa_deg)
    grid = LikelihoodGrid(xs, ys, loglik)
    ix, iy = grid.argmax()
    x = xs[ix] + _refine_axis(loglik[iy, :], ix, cell_m)
    y = ys[iy] + _refine_axis(loglik[:, ix], iy, cell_m)
    return FusionResult(float(x), float(y), grid, len(messages),
                        cell_x=float(xs[ix]), cell_y=float(ys[iy]))


def fuse_single(message, **kw):
    """Closed-form single-message fix (range + angle along the heading)."""
    if not np.isfinite(message.aoa_deg):
        raise ValueError("single-message fix needs an angle observation")
    from .estimate import SensingEstimate

    est = SensingEstimate(range_m=message.range_m, aoa_deg=message.aoa_deg,
                          confidence=message.confidence)
    return localize_single(est, device_pos=(message.x_m, message.y_m),
                           heading_deg=message.heading_deg)


__all__ = [
    "SensingMessage",
    "MessageBus",
    "LikelihoodGrid",
    "FusionResult",
    "fuse_ml",
    "fuse_single",
    "message_loglik",
    "wrap_deg",
    "write_messages",
    "read_messages",
]

"""Frame-interpolating DVS model.

Each pixel keeps a reference log level. Between consecutive frames the log
intensity is taken to vary linearly in time, evaluated at integer
microseconds::

    L(t0) = l_prev,  L(t1) = l_next,
    L(t)  = l_prev + (l_next - l_prev) * (t - t0) / (t1 - t0)   otherwise

Whenever L reaches ``ref + theta_on`` (or ``ref - theta_off``) an ON (OFF)
event fires and the reference moves by exactly one threshold. Reaching the
level exactly counts. The event timestamp is the floor of the real crossing
time: with ``t_hit`` the first integer microsecond at which L has reached
the level, the event is stamped ``t_hit`` if L equals the level there and
``t_hit - 1`` otherwise (never earlier than ``t0``).

An event less than ``max(refractory_us, 1)`` microseconds after the pixel's
previous emitted event is dropped, but the reference still advances. The
1 us floor keeps (pixel, polarity, t) unique when the refractory period is 0.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import rng
from .render import row_bands
from .scene import ConfigError

NEVER = -(2**62)


class Event(NamedTuple):
    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class DvsParams:
    theta_on: float = 0.2
    theta_off: float = 0.2
    refractory_us: int = 1000
    log_eps: float = 1e-3
    leak_rate_hz: float = 0.1
    noise_seed: int = 0
    noise_enabled: bool = False

    def __post_init__(self) -> None:
        if not self.theta_on > 0:
            raise ConfigError("theta_on", "must be > 0")
        if not self.theta_off > 0:
            raise ConfigError("theta_off", "must be > 0")
        if not (isinstance(self.refractory_us, int) and self.refractory_us >= 0):
            raise ConfigError("refractory_us", "must be a non-negative integer")
        if not self.log_eps > 0:
            raise ConfigError("log_eps", "must be > 0")
        if not self.leak_rate_hz >= 0:
            raise ConfigError("leak_rate_hz", "must be >= 0")
        if not (isinstance(self.noise_seed, int) and 0 <= self.noise_seed < 2**64):
            raise ConfigError("noise_seed", "must be an unsigned 64-bit integer")


@dataclass
class PixelState:
    ref_level: float
    last_event_t: int = NEVER


def _strictly_sorted(t, x, y, p) -> bool:
    if len(t) < 2:
        return True
    # compare neighbours directly; differences would wrap for t >= 2**63
    later = np.zeros(len(t) - 1, dtype=bool)
    tied = np.ones(len(t) - 1, dtype=bool)
    for a in (t, y, x, p):
        later |= tied & (a[1:] > a[:-1])
        tied &= a[1:] == a[:-1]
    return bool(later.all())


@dataclass(frozen=True, eq=False)
class EventStream:
    """Events as parallel arrays, sorted by (t, y, x, polarity) with no duplicates."""

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        conv = {"t": np.uint64, "x": np.uint16, "y": np.uint16, "p": np.int8}
        for name, dtype in conv.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event field arrays differ in length")
        if n:
            if int(self.x.max()) >= self.width or int(self.y.max()) >= self.height:
                raise ValueError("event coordinates outside the sensor")
            if not np.isin(self.p, (-1, 1)).all():
                raise ValueError("polarity must be +1 or -1")
        if not _strictly_sorted(self.t, self.x, self.y, self.p):
            raise ValueError("events not strictly sorted by (t, y, x, polarity)")

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0)
        return cls(width, height, z, z, z, z)

    @classmethod
    def from_arrays(cls, width: int, height: int, t, x, y, p) -> "EventStream":
        """Build from unsorted arrays; sorts and drops exact duplicates."""
        t = np.asarray(t, dtype=np.uint64)
        x = np.asarray(x, dtype=np.uint16)
        y = np.asarray(y, dtype=np.uint16)
        p = np.asarray(p, dtype=np.int8)
        order = np.lexsort((p, x, y, t))
        t, x, y, p = t[order], x[order], y[order], p[order]
        if len(t) > 1:
            dup = (np.diff(t) == 0) & (np.diff(x) == 0) & (np.diff(y) == 0) & (np.diff(p) == 0)
            keep = np.concatenate([[True], ~dup])
            t, x, y, p = t[keep], x[keep], y[keep], p[keep]
        return cls(width, height, t, x, y, p)

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event]) -> "EventStream":
        cols = list(zip(*events)) if events else [(), (), (), ()]
        return cls.from_arrays(width, height, *cols)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for e in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(*e)

    def events(self) -> list:
        return list(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            (self.width, self.height) == (other.width, other.height)
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "txyp")
        )


def log_intensity(i, log_eps: float):
    return np.log(np.asarray(i, dtype=np.float64) + log_eps)


def _interp(lp, ln, t, t0: int, t1: int):
    val = lp + (ln - lp) * (t - t0) / (t1 - t0)
    return np.where(t >= t1, ln, np.where(t <= t0, lp, val))


def _crossing_times(lp, ln, level, t0: int, t1: int, rising: bool) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        est = t0 + (t1 - t0) * (level - lp) / (ln - lp)
    est = np.where(np.isfinite(est), est, t0)
    c = np.clip(np.ceil(est), t0, t1).astype(np.int64)

    def reached(tt):
        val = _interp(lp, ln, tt, t0, t1)
        return val >= level if rising else val <= level

    # walk the analytic estimate onto the first integer time that reached the level
    while True:
        back = (c > t0) & reached(c - 1)
        if not back.any():
            break
        c = c - back
    while True:
        fwd = ~reached(c)
        if not fwd.any():
            break
        c = c + fwd
    exact = _interp(lp, ln, c, t0, t1) == level
    return np.maximum(np.where(exact, c, c - 1), t0)


def _crossings(lp, ln, ref, last, t0: int, t1: int, params: DvsParams):
    """Vectorized per-pixel crossings for one frame pair; updates ``ref`` and ``last`` in place."""
    refractory = max(params.refractory_us, 1)
    out_idx, out_t, out_p = [], [], []
    for polarity, step in ((1, params.theta_on), (-1, -params.theta_off)):
        active = np.arange(len(ref))
        while active.size:
            level = ref[active] + step
            lnext = ln[active]
            ok = lnext >= level if polarity > 0 else lnext <= level
            active, level = active[ok], level[ok]
            if not active.size:
                break
            ts = _crossing_times(lp[active], ln[active], level, t0, t1, polarity > 0)
            emit = ts - last[active] >= refractory
            fired = active[emit]
            out_idx.append(fired)
            out_t.append(ts[emit])
            out_p.append(np.full(fired.size, polarity, dtype=np.int8))
            last[fired] = ts[emit]
            ref[active] = level
    if not out_idx:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int8)
    return np.concatenate(out_idx), np.concatenate(out_t), np.concatenate(out_p)


def pixel_crossings(l_prev: float, l_next: float, state: PixelState, t0_us: int, t1_us: int,
                    params: DvsParams, x: int = 0, y: int = 0) -> tuple:
    """Events at one pixel between two frames, plus the updated state."""
    if not t0_us < t1_us:
        raise ValueError("need t0_us < t1_us")
    ref = np.array([state.ref_level], dtype=np.float64)
    last = np.array([state.last_event_t], dtype=np.int64)
    _, ts, ps = _crossings(np.array([float(l_prev)]), np.array([float(l_next)]), ref, last,
                           int(t0_us), int(t1_us), params)
    events = [Event(int(t), x, y, int(p)) for t, p in zip(ts.tolist(), ps.tolist())]
    return events, PixelState(float(ref[0]), int(last[0]))


def frame_time_us(timestamp_s: float) -> int:
    return int(round(timestamp_s * 1e6))


def _band_events(logs: list, times: list, rows: slice, width: int, params: DvsParams):
    ref = logs[0][rows].ravel().copy()
    last = np.full(ref.size, NEVER, dtype=np.int64)
    parts = []
    for k in range(1, len(logs)):
        lp = logs[k - 1][rows].ravel()
        ln = logs[k][rows].ravel()
        idx, ts, ps = _crossings(lp, ln, ref, last, times[k - 1], times[k], params)
        if idx.size:
            parts.append((idx, ts, ps))
    if not parts:
        z = np.zeros(0, np.int64)
        return z, z, z, np.zeros(0, np.int8)
    idx = np.concatenate([a[0] for a in parts])
    ts = np.concatenate([a[1] for a in parts])
    ps = np.concatenate([a[2] for a in parts])
    return ts, idx % width, idx // width + rows.start, ps


def frames_to_events(frames: Sequence, params: DvsParams, workers: int = 1) -> "EventStream":
    """Convert an ordered sequence of luminance frames into a sorted event stream.

    The first frame only initializes the per-pixel reference levels.
    Row bands are independent and may run on several threads; the merged
    stream is sorted, so the output does not depend on ``workers``.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    h, w = frames[0].pixels.shape
    for f in frames:
        if f.pixels.shape != (h, w):
            raise ValueError(f"frame dimensions {f.pixels.shape[::-1]} differ from {(w, h)}")
    times = [frame_time_us(f.timestamp) for f in frames]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("frame timestamps must be strictly increasing (at microsecond resolution)")
    logs = [log_intensity(f.pixels, params.log_eps) for f in frames]

    bands = row_bands(h, workers)
    if len(bands) == 1:
        results = [_band_events(logs, times, bands[0], w, params)]
    else:
        with ThreadPoolExecutor(len(bands)) as ex:
            results = list(ex.map(lambda rows: _band_events(logs, times, rows, w, params), bands))
    cols = [np.concatenate([r[i] for r in results]) for i in range(4)]
    return EventStream.from_arrays(w, h, *cols)


def inject_noise(stream: EventStream, params: DvsParams, t0_us: int, t1_us: int) -> EventStream:
    """Add leak ON events: an independent Poisson process per pixel on [t0_us, t1_us].

    Inter-arrival gaps come from the counter RNG keyed on (noise_seed,
    pixel index, draw number), so the result is reproducible. Returns the
    input unchanged when noise is disabled or the rate is zero.
    """
    if not params.noise_enabled or params.leak_rate_hz == 0 or t1_us <= t0_us:
        return stream
    w, h = stream.width, stream.height
    pixels = np.arange(w * h, dtype=np.uint64)
    streams = (np.uint64(rng.DOMAIN_NOISE) << np.uint64(40)) | pixels
    clock = np.full(w * h, float(t0_us))
    alive = np.arange(w * h)
    mean_gap_us = 1e6 / params.leak_rate_hz
    found_t, found_pix = [], []
    k = 0
    while alive.size:
        u = rng.uniform_array(params.noise_seed, streams[alive], k)
        clock[alive] += -np.log1p(-u) * mean_gap_us
        inside = clock[alive] <= t1_us
        alive = alive[inside]
        found_t.append(np.floor(clock[alive]).astype(np.int64))
        found_pix.append(alive)
        k += 1
    nt = np.concatenate(found_t)
    npix = np.concatenate(found_pix)
    t = np.concatenate([stream.t.astype(np.int64), nt])
    x = np.concatenate([stream.x, (npix % w).astype(np.uint16)])
    y = np.concatenate([stream.y, (npix // w).astype(np.uint16)])
    p = np.concatenate([stream.p, np.ones(nt.size, dtype=np.int8)])
    return EventStream.from_arrays(w, h, t, x, y, p)

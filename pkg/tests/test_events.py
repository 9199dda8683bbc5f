import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dvs_brute_force
from seadvs.events import (
    DvsParams,
    Event,
    EventStream,
    PixelState,
    frames_to_events,
    inject_noise,
    log_intensity,
    pixel_crossings,
)
from seadvs.render import LuminanceFrame
from seadvs.scene import ConfigError

NO_REFRACTORY = DvsParams(refractory_us=0)


def frames_from(arrays, dt=1e-3):
    return [LuminanceFrame(a.shape[1], a.shape[0], k * dt, np.asarray(a, dtype=np.float32)) for k, a in enumerate(arrays)]


def assert_sorted(stream):
    keys = list(zip(stream.t.tolist(), stream.y.tolist(), stream.x.tolist(), stream.p.tolist()))
    assert all(a < b for a, b in zip(keys, keys[1:]))


def test_log_intensity_examples():
    assert log_intensity(0.0, 1.0) == 0.0
    assert log_intensity(math.e - 0.001, 0.001) == pytest.approx(1.0, abs=1e-15)
    assert log_intensity(2.5, 0.001) == pytest.approx(0.91669, abs=1e-5)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_log_intensity_increasing(a, b):
    a, b = sorted((a, b))
    assert log_intensity(a, 1e-3) <= log_intensity(b, 1e-3)
    if b - a > 1e-9 * (b + 1e-3):  # gaps float64 can resolve
        assert log_intensity(a, 1e-3) < log_intensity(b, 1e-3)


def test_no_change_no_events():
    state = PixelState(0.3)
    events, new = pixel_crossings(0.3, 0.3, state, 0, 1000, NO_REFRACTORY)
    assert events == [] and new == state


def test_three_on_events():
    events, state = pixel_crossings(0.0, 0.65, PixelState(0.0), 0, 1000, NO_REFRACTORY)
    assert [e.t for e in events] == [307, 615, 923]
    assert [e.t for e in events] == [math.floor(1000 * 0.2 * k / 0.65) for k in (1, 2, 3)]
    assert all(e.polarity == 1 for e in events)
    assert state.ref_level == pytest.approx(0.6, abs=1e-12)


def test_exact_threshold_at_endpoint_counts():
    p = DvsParams(theta_off=0.25)
    events, state = pixel_crossings(0.5, 0.25, PixelState(0.5), 0, 1000, p)
    assert events == [Event(1000, 0, 0, -1)]
    assert state.ref_level == 0.25


def test_pixel_crossings_needs_interval():
    with pytest.raises(ValueError):
        pixel_crossings(0.0, 1.0, PixelState(0.0), 5, 5, NO_REFRACTORY)


def test_identical_frames_empty():
    a = np.random.default_rng(0).random((6, 5))
    assert len(frames_to_events(frames_from([a, a, a]), DvsParams())) == 0


def test_two_by_one_example():
    lp = np.array([[1.0, math.exp(0.0) - 1e-3]])
    ln = np.array([[1.0, math.exp(0.65) - 1e-3]])
    frames = [LuminanceFrame(2, 1, 0.0, lp.astype(np.float64)), LuminanceFrame(2, 1, 1e-3, ln.astype(np.float64))]
    # float64 pixels keep the log levels at exactly 0 and 0.65 within rounding
    stream = frames_to_events(frames, NO_REFRACTORY)
    assert [(e.t, e.x, e.y, e.polarity) for e in stream] == [(307, 1, 0, 1), (615, 1, 0, 1), (923, 1, 0, 1)]


def test_errors():
    a = np.ones((4, 4))
    with pytest.raises(ValueError, match="at least 2"):
        frames_to_events(frames_from([a]), DvsParams())
    with pytest.raises(ValueError, match="dimensions"):
        frames_to_events(frames_from([a, np.ones((4, 5))]), DvsParams())
    bad = frames_from([a, a])
    bad = [bad[1], bad[0]]
    with pytest.raises(ValueError, match="increasing"):
        frames_to_events(bad, DvsParams())


@pytest.mark.parametrize(
    "kw,field",
    [({"theta_on": 0}, "theta_on"), ({"theta_off": -1}, "theta_off"), ({"log_eps": 0}, "log_eps"),
     ({"refractory_us": -1}, "refractory_us"), ({"leak_rate_hz": -1}, "leak_rate_hz")],
)
def test_params_validation(kw, field):
    with pytest.raises(ConfigError) as err:
        DvsParams(**kw)
    assert err.value.field == field


@pytest.mark.parametrize("trial", range(10))
def test_matches_brute_force_oracle_multi_frame(trial):
    gen = np.random.default_rng(1000 + trial)
    arrays = [gen.random((3, 4)) * gen.choice([0.01, 1, 50]) for _ in range(4)]
    params = DvsParams(theta_on=float(gen.uniform(0.05, 0.4)), theta_off=float(gen.uniform(0.05, 0.4)),
                       refractory_us=int(gen.choice([0, 1, 7, 150])))
    frames = frames_from(arrays, dt=7e-4)
    stream = frames_to_events(frames, params)
    logs = [log_intensity(f.pixels, params.log_eps).tolist() for f in frames]
    times = [round(f.timestamp * 1e6) for f in frames]
    expected = dvs_brute_force(logs, times, params.theta_on, params.theta_off, params.refractory_us)
    assert [tuple(e) for e in stream] == expected


@given(st.floats(1e-3, 10), st.floats(1.01, 20), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_polarity_follows_global_change(base, gain, n):
    a = np.random.default_rng(n).random((5, 5)) * base + 1e-3
    up = frames_to_events(frames_from([a, a * gain]), NO_REFRACTORY)
    down = frames_to_events(frames_from([a * gain, a]), NO_REFRACTORY)
    assert np.all(up.p == 1) and np.all(down.p == -1)


@given(st.floats(0, 100), st.integers(2, 6))
@settings(max_examples=20, deadline=None)
def test_constant_sequence_is_silent(value, n):
    a = np.full((3, 3), value)
    assert len(frames_to_events(frames_from([a] * n), NO_REFRACTORY)) == 0


def test_refractory_caps_one_event_per_pair():
    gen = np.random.default_rng(5)
    arrays = [gen.random((8, 8)) * 100 for _ in range(5)]
    params = DvsParams(refractory_us=1000 * 10)
    stream = frames_to_events(frames_from(arrays, dt=1e-3), params)
    pair = (stream.t.astype(np.int64) - 1) // 1000
    keys = list(zip(pair.tolist(), stream.x.tolist(), stream.y.tolist()))
    assert len(keys) == len(set(keys))


def test_suppressed_events_still_move_reference():
    params = DvsParams(refractory_us=10_000)
    events, state = pixel_crossings(0.0, 0.65, PixelState(0.0), 0, 1000, params)
    assert [e.t for e in events] == [307]
    assert state.ref_level == pytest.approx(0.6, abs=1e-12)
    assert state.last_event_t == 307


def test_worker_count_does_not_change_stream():
    gen = np.random.default_rng(11)
    arrays = [gen.random((37, 29)) * 5 for _ in range(6)]
    frames = frames_from(arrays, dt=1 / 30)
    one = frames_to_events(frames, DvsParams())
    many = frames_to_events(frames, DvsParams(), workers=7)
    assert one == many and len(one) > 0
    assert_sorted(one)


def test_stream_is_strictly_sorted():
    gen = np.random.default_rng(2)
    stream = frames_to_events(frames_from([gen.random((10, 10)) for _ in range(4)]), NO_REFRACTORY)
    assert len(stream) > 0
    assert_sorted(stream)


def test_stream_validation():
    with pytest.raises(ValueError):
        EventStream(4, 4, [5, 3], [0, 0], [0, 0], [1, 1])
    with pytest.raises(ValueError):
        EventStream(4, 4, [5, 5], [0, 0], [0, 0], [1, 1])
    with pytest.raises(ValueError):
        EventStream(4, 4, [1], [4], [0], [1])
    with pytest.raises(ValueError):
        EventStream(4, 4, [1], [0], [0], [0])
    s = EventStream.from_arrays(4, 4, [5, 3, 5], [1, 2, 0], [0, 0, 0], [1, -1, 1])
    assert [tuple(e) for e in s] == [(3, 2, 0, -1), (5, 0, 0, 1), (5, 1, 0, 1)]


# -- noise ---------------------------------------------------------------------

def noisy(rate=10.0, seed=0, enabled=True):
    return DvsParams(leak_rate_hz=rate, noise_seed=seed, noise_enabled=enabled)


def test_noise_zero_rate_is_identity():
    s = EventStream.from_arrays(2, 2, [1, 2], [0, 1], [0, 1], [1, -1])
    assert inject_noise(s, noisy(rate=0.0), 0, 1_000_000) is s
    assert inject_noise(s, noisy(enabled=False), 0, 1_000_000) is s


def test_noise_poisson_count_and_reproducible():
    empty = EventStream.empty(1, 1)
    a = inject_noise(empty, noisy(), 0, 1_000_000)
    b = inject_noise(empty, noisy(), 0, 1_000_000)
    assert 2 <= len(a) <= 25
    assert a == b
    assert np.all(a.p == 1)
    assert np.all((a.t >= 0) & (a.t <= 1_000_000))


def test_noise_seed_sensitivity():
    empty = EventStream.empty(4, 4)
    a = inject_noise(empty, noisy(seed=1), 0, 1_000_000)
    b = inject_noise(empty, noisy(seed=2), 0, 1_000_000)
    assert sorted(a) != sorted(b)


def test_noise_rate_matches_expectation():
    from oracles import poisson_interval

    empty = EventStream.empty(40, 25)
    s = inject_noise(empty, noisy(rate=5.0, seed=3), 0, 2_000_000)
    lo, hi = poisson_interval(40 * 25 * 5.0 * 2.0)
    assert lo <= len(s) <= hi


def test_noise_merges_sorted():
    gen = np.random.default_rng(4)
    base = frames_to_events(frames_from([gen.random((6, 6)) for _ in range(3)], dt=0.01), DvsParams())
    out = inject_noise(base, noisy(rate=50.0), 0, 20_000)
    assert len(out) > len(base)
    assert_sorted(out)
    assert set(base) <= set(out)

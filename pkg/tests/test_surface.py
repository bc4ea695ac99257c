import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evgassom.errors import GeometryMismatch, PatchLargerThanSensor, TimestampRegression
from evgassom.events import Event, EventStream, SensorGeometry
from evgassom.surface import (
    RegionState,
    SurfaceArray,
    count_fires,
    maybe_fire,
    surface_update,
    tile_regions,
    total_activity,
)

ON, OFF = 1, 0


def eager_run(grid, stream, tau_f, threshold):
    """Reference: one RegionState per region, every cell decayed on every event."""
    states = [
        RegionState(grid.patch_width, grid.geometry.num_types, grid.origin(k), k)
        for k in range(grid.num_regions)
    ]
    out = []
    for e in stream:
        for k in grid.covering(e.x, e.y):
            surface_update(states[k], e, tau_f)
            s = maybe_fire(states[k], threshold)
            if s is not None:
                out.append(s)
    return states, out


def random_stream(rng, geometry, n, max_gap):
    t = np.cumsum(rng.integers(0, max_gap + 1, n))
    return EventStream(
        geometry,
        t=t,
        x=rng.integers(0, geometry.width, n),
        y=rng.integers(0, geometry.height, n),
        p=rng.integers(0, geometry.num_types, n),
    )


class TestTiling:
    def test_exact_fit(self):
        g = tile_regions(SensorGeometry(10, 10, 2), 10, 4)
        assert g.regions == [(0, 0)]

    def test_two_per_axis(self):
        g = tile_regions(SensorGeometry(14, 14, 2), 10, 4)
        assert sorted(g.regions) == [(0, 0), (0, 4), (4, 0), (4, 4)]

    def test_full_sensor_count_matches_enumeration(self):
        geo = SensorGeometry(128, 128, 2)
        g = tile_regions(geo, 10, 4)
        brute = [(x0, y0) for y0 in range(0, 128, 4) for x0 in range(0, 128, 4) if x0 + 10 <= 128 and y0 + 10 <= 128]
        assert g.num_regions == 900
        assert g.regions == brute

    def test_patch_too_large(self):
        with pytest.raises(PatchLargerThanSensor):
            tile_regions(SensorGeometry(8, 20, 2), 10, 4)

    @given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 12), st.integers(1, 6), st.data())
    @settings(max_examples=200, deadline=None)
    def test_covering_matches_brute_force(self, W, H, w, stride, data):
        if w > min(W, H):
            return
        g = tile_regions(SensorGeometry(W, H, 1), w, stride)
        for x0, y0 in g.regions:
            assert x0 + w <= W and y0 + w <= H
        x = data.draw(st.integers(0, W - 1))
        y = data.draw(st.integers(0, H - 1))
        brute = [k for k, (x0, y0) in enumerate(g.regions) if x0 <= x < x0 + w and y0 <= y < y0 + w]
        assert g.covering(x, y) == brute


class TestSurfaceUpdate:
    def test_single_delta(self):
        s = surface_update(RegionState(4, 2), Event(2, 3, 0, ON), 1000.0)
        expected = np.zeros((2, 4, 4))
        expected[ON, 3, 2] = 1.0
        np.testing.assert_array_equal(s.S, expected)

    def test_decay_by_e(self):
        s = RegionState(4, 2)
        surface_update(s, Event(0, 0, 0, OFF), 1000.0)
        surface_update(s, Event(1, 1, 1000, ON), 1000.0)
        assert s.S[OFF, 0, 0] == pytest.approx(math.exp(-1), abs=1e-12)
        assert s.S[OFF, 0, 0] == pytest.approx(0.367879, abs=1e-6)

    def test_zero_gap_accumulates(self):
        s = RegionState(4, 2)
        surface_update(s, Event(1, 1, 7, ON), 10.0)
        surface_update(s, Event(1, 1, 7, ON), 10.0)
        assert s.S[ON, 1, 1] == 2.0

    def test_regression_raises(self):
        s = surface_update(RegionState(4, 2), Event(0, 0, 10, ON), 10.0)
        with pytest.raises(TimestampRegression):
            surface_update(s, Event(0, 0, 9, ON), 10.0)

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 1), st.integers(0, 5000)), min_size=1, max_size=40), st.floats(10, 1e4))
    @settings(max_examples=200, deadline=None)
    def test_matches_closed_form(self, evs, tau):
        s = RegionState(4, 2)
        t = 0
        times = []
        for x, y, p, gap in evs:
            t += gap
            times.append(t)
            before = s.S.copy()
            prev = s.t_last
            surface_update(s, Event(x, y, t, p), tau)
            step = before * (math.exp(-(t - prev) / tau) if prev is not None else 1.0)
            step[p, y, x] += 1.0
            np.testing.assert_allclose(s.S, step, rtol=0, atol=1e-12)
        # whole-history closed form: sum of exp(-(t_end - t_i)/tau) per cell
        closed = np.zeros((2, 4, 4))
        for (x, y, p, _), ti in zip(evs, times):
            closed[p, y, x] += math.exp(-(t - ti) / tau)
        np.testing.assert_allclose(s.S, closed, rtol=0, atol=1e-9)
        assert total_activity(s) == pytest.approx(closed.sum(), abs=1e-9)
        assert (s.S >= 0).all()


class TestFire:
    def test_activity_forty_simultaneous(self):
        s = RegionState(10, 2)
        for i in range(40):
            surface_update(s, Event(i % 10, i // 10, 0, ON), 1e4)
        assert total_activity(s) == 40.0
        # strict comparison: 40 does not exceed a threshold of 40
        assert maybe_fire(s, 40.0) is None
        assert total_activity(s) == 40.0

    def test_below_threshold_untouched(self):
        s = RegionState(4, 2)
        s.S[:] = 39.5 / s.S.size
        before = s.S.copy()
        assert maybe_fire(s, 40.0) is None
        np.testing.assert_array_equal(s.S, before)

    def test_two_equal_cells(self):
        s = RegionState(4, 2)
        s.S[ON, 0, 0] = s.S[OFF, 2, 1] = 25.0
        s.t_last = 9
        out = maybe_fire(s, 40.0)
        D = 32
        a = (1 - 2 / D) / math.sqrt(2 * (1 - 2 / D) ** 2 + (D - 2) * (2 / D) ** 2)
        assert out.x[ON * 16 + 0] == pytest.approx(a, abs=1e-12)
        assert out.x[OFF * 16 + 2 * 4 + 1] == pytest.approx(a, abs=1e-12)
        assert abs(out.x.sum()) < 1e-9
        assert np.linalg.norm(out.x) == pytest.approx(1.0, abs=1e-9)
        assert out.t == 9
        assert not s.S.any()

    def test_flatten_order(self):
        s = RegionState(3, 2)
        s.S[1, 2, 0] = 50.0
        out = maybe_fire(s, 40.0)
        assert int(np.argmax(out.x)) == 1 * 9 + 2 * 3 + 0

    def test_constant_surface_dropped(self):
        s = RegionState(2, 1)
        s.S[:] = 20.0
        assert maybe_fire(s, 40.0) is None
        assert s.degenerate == 1
        assert not s.S.any()


class TestLazyKernel:
    @given(st.integers(0, 2**31), st.sampled_from([(3, 1), (4, 2), (5, 5), (6, 4)]), st.floats(50, 5000), st.floats(1, 12))
    @settings(max_examples=60, deadline=None)
    def test_matches_eager(self, seed, ws, tau, thr):
        w, stride = ws
        rng = np.random.default_rng(seed)
        geo = SensorGeometry(int(rng.integers(w, 14)), int(rng.integers(w, 14)), int(rng.integers(1, 4)))
        grid = tile_regions(geo, w, stride)
        stream = random_stream(rng, geo, 300, int(rng.integers(0, 3 * tau)))
        states, ref = eager_run(grid, stream, tau, thr)
        arr = SurfaceArray(grid, tau, thr)
        batches = list(arr.feed(stream))
        got_t = np.concatenate([b.t for b in batches]) if batches else np.zeros(0)
        got_k = np.concatenate([b.region for b in batches]) if batches else np.zeros(0)
        got_x = np.concatenate([b.x for b in batches]) if batches else np.zeros((0, grid.dim))
        assert [s.t for s in ref] == got_t.tolist()
        assert [s.region_index for s in ref] == got_k.tolist()
        for s, x in zip(ref, got_x):
            np.testing.assert_allclose(x, s.x, rtol=0, atol=1e-9)
        assert arr.degenerate == sum(st_.degenerate for st_ in states)
        for k, st_ in enumerate(states):
            if st_.t_last is not None:
                np.testing.assert_allclose(arr.surface(k), st_.S, rtol=0, atol=1e-9)

    def test_long_gap_rebases_without_overflow(self):
        geo = SensorGeometry(4, 4, 1)
        grid = tile_regions(geo, 4, 1)
        stream = EventStream(geo, t=[0, 10**12, 10**12 + 5], x=[0, 1, 2], y=[0, 0, 0], p=[0, 0, 0])
        arr = SurfaceArray(grid, 10.0, 100.0)
        list(arr.feed(stream))
        S = arr.surface(0)
        assert np.isfinite(S).all()
        assert S[0, 0, 1] == pytest.approx(math.exp(-0.5), abs=1e-12)
        assert S[0, 0, 2] == pytest.approx(1.0, abs=1e-12)

    def test_small_output_buffer(self):
        rng = np.random.default_rng(4)
        geo = SensorGeometry(20, 20, 2)
        grid = tile_regions(geo, 6, 2)
        stream = random_stream(rng, geo, 3000, 5)
        big = list(SurfaceArray(grid, 1e3, 8.0).feed(stream))
        small = list(SurfaceArray(grid, 1e3, 8.0, batch_bytes=1).feed(stream))
        assert len(small) > len(big)
        np.testing.assert_array_equal(np.concatenate([b.x for b in big]), np.concatenate([b.x for b in small]))

    def test_emitted_vectors_are_normalized(self):
        rng = np.random.default_rng(1)
        geo = SensorGeometry(32, 32, 2)
        grid = tile_regions(geo, 10, 4)
        arr = SurfaceArray(grid, 1e4, 40.0)
        X = np.concatenate([b.x for b in arr.feed(random_stream(rng, geo, 20000, 20))])
        assert len(X) > 100
        assert np.abs(X.sum(axis=1)).max() < 1e-9
        assert np.abs(np.linalg.norm(X, axis=1) - 1).max() < 1e-9

    def test_geometry_mismatch(self):
        grid = tile_regions(SensorGeometry(16, 16, 2), 4, 2)
        with pytest.raises(GeometryMismatch):
            list(SurfaceArray(grid, 1.0, 1.0).feed(EventStream(SensorGeometry(16, 16, 1))))

    def test_fed_in_pieces(self):
        rng = np.random.default_rng(2)
        geo = SensorGeometry(16, 16, 2)
        grid = tile_regions(geo, 4, 2)
        s = random_stream(rng, geo, 4000, 30)
        whole = np.concatenate([b.x for b in SurfaceArray(grid, 500.0, 6.0).feed(s)])
        arr = SurfaceArray(grid, 500.0, 6.0)
        parts = [b.x for b in arr.feed(s.select(np.arange(2000)))] + [b.x for b in arr.feed(s.select(np.arange(2000, 4000)))]
        np.testing.assert_allclose(np.concatenate(parts), whole, atol=1e-12)
        with pytest.raises(TimestampRegression):
            list(arr.feed(s))


def test_activity_bound_on_fire_count():
    # every fire consumes more than T_s units of undecayed input, and each event
    # contributes one unit to each covering region
    rng = np.random.default_rng(3)
    geo = SensorGeometry(24, 24, 2)
    grid = tile_regions(geo, 8, 4)
    s = random_stream(rng, geo, 5000, 1)
    thr = 10.0
    n = count_fires(grid, s, 1e9, thr)
    deliveries = sum(len(grid.covering(e.x, e.y)) for e in s)
    assert 0 < n <= deliveries / thr


def test_disjoint_regions_are_independent():
    rng = np.random.default_rng(5)
    geo = SensorGeometry(16, 8, 2)
    grid = tile_regions(geo, 8, 8)
    assert grid.num_regions == 2
    left = random_stream(rng, SensorGeometry(8, 8, 2), 800, 50)
    right = random_stream(rng, SensorGeometry(8, 8, 2), 800, 50)

    def merged():
        t = np.concatenate([left.t, right.t]).astype(np.int64)
        x = np.concatenate([left.x, right.x + 8])
        order = np.argsort(t, kind="stable")
        return EventStream(geo, t=t[order], x=x[order], y=np.concatenate([left.y, right.y])[order], p=np.concatenate([left.p, right.p])[order])

    def per_region(stream):
        out = {0: [], 1: []}
        for b in SurfaceArray(grid, 300.0, 5.0).feed(stream):
            for t, k, x in zip(b.t, b.region, b.x):
                out[int(k)].append((int(t), x))
        return out

    a = per_region(merged())
    # interleave the two regions' events differently; timestamps of region 1 unchanged
    t = np.concatenate([right.t, left.t]).astype(np.int64)
    x = np.concatenate([right.x + 8, left.x])
    y = np.concatenate([right.y, left.y])
    p = np.concatenate([right.p, left.p])
    order = np.argsort(t, kind="stable")
    b = per_region(EventStream(geo, t=t[order], x=x[order], y=y[order], p=p[order]))
    for k in (0, 1):
        assert [t for t, _ in a[k]] == [t for t, _ in b[k]]
        for (_, xa), (_, xb) in zip(a[k], b[k]):
            np.testing.assert_array_equal(xa, xb)

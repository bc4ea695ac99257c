"""Leaky-integrator spatiotemporal surfaces over overlapping sensor patches.

Two implementations live here:

``RegionState`` + ``surface_update`` / ``maybe_fire``
    Eager, one region at a time, written for clarity. Every cell of the
    surface is decayed on every event. Used as the reference in tests.

``SurfaceArray``
    All regions of a grid at once, driven by a numba kernel. Decay is lazy:
    each region stores its surface relative to a decay epoch ``t_ref`` so an
    event costs O(1) instead of O(w*w*P). This is what the pipeline runs.

Sample vectors are flattened type-major then row-major
(``index = p*w*w + ly*w + lx``), mean-subtracted and scaled to unit norm.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numba
import numpy as np

from .errors import GeometryMismatch, PatchLargerThanSensor, TimestampRegression
from .events import Event, EventStream, SensorGeometry

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class RegionGrid:
    """Square ``w x w`` patches at spacing ``stride``, fully inside the sensor.

    Regions are indexed row-major over the grid: ``k = ky * nx + kx``.
    """

    geometry: SensorGeometry
    patch_width: int
    stride: int
    nx: int
    ny: int

    @property
    def num_regions(self) -> int:
        return self.nx * self.ny

    @property
    def dim(self) -> int:
        return self.patch_width**2 * self.geometry.num_types

    @property
    def regions(self) -> list[tuple[int, int]]:
        """Origins ``(x0, y0)`` in region-index order."""
        return [(kx * self.stride, ky * self.stride) for ky in range(self.ny) for kx in range(self.nx)]

    @property
    def output_geometry(self) -> SensorGeometry:
        return SensorGeometry(self.nx, self.ny, 1)

    def origin(self, k: int) -> tuple[int, int]:
        ky, kx = divmod(k, self.nx)
        return kx * self.stride, ky * self.stride

    def covering(self, x: int, y: int) -> list[int]:
        """Indices of every region whose square contains pixel ``(x, y)``, ascending."""
        kxs = _axis_cover(x, self.patch_width, self.stride, self.nx)
        kys = _axis_cover(y, self.patch_width, self.stride, self.ny)
        return [ky * self.nx + kx for ky in kys for kx in kxs]


def _axis_cover(c: int, w: int, stride: int, n: int) -> range:
    lo = max(0, -(-(c - w + 1) // stride))
    hi = min(n - 1, c // stride)
    return range(lo, hi + 1)


def tile_regions(geometry: SensorGeometry, w: int, stride: int) -> RegionGrid:
    if stride < 1 or w < 1:
        raise ValueError("patch width and stride must be >= 1")
    if w > min(geometry.width, geometry.height):
        raise PatchLargerThanSensor(
            f"{w}x{w} patch does not fit a {geometry.width}x{geometry.height} sensor"
        )
    nx = (geometry.width - w) // stride + 1
    ny = (geometry.height - w) // stride + 1
    return RegionGrid(geometry, w, stride, nx, ny)


# --- eager reference ---------------------------------------------------------


class SampleVector(NamedTuple):
    x: np.ndarray
    t: int
    region_index: int


@dataclass
class RegionState:
    """Surface of one region, indexed ``S[p, y, x]`` in local coordinates."""

    patch_width: int
    num_types: int
    origin: tuple[int, int] = (0, 0)
    region_index: int = 0
    S: np.ndarray = field(default=None)
    t_last: int | None = None
    forward: object = None
    degenerate: int = 0

    def __post_init__(self):
        if self.S is None:
            self.S = np.zeros((self.num_types, self.patch_width, self.patch_width))


def surface_update(state: RegionState, event: Event, tau_f: float) -> RegionState:
    """Decay every cell by ``exp(-dt/tau_f)``, then add 1 at the event's cell."""
    if state.t_last is not None:
        if event.t < state.t_last:
            raise TimestampRegression(f"event at t={event.t} precedes t_last={state.t_last}")
        state.S *= math.exp(-(event.t - state.t_last) / tau_f)
    lx, ly = event.x - state.origin[0], event.y - state.origin[1]
    if not (0 <= lx < state.patch_width and 0 <= ly < state.patch_width):
        raise ValueError(f"event at ({event.x}, {event.y}) lies outside region {state.region_index}")
    state.S[event.p, ly, lx] += 1.0
    state.t_last = event.t
    return state


def total_activity(state: RegionState) -> float:
    return float(state.S.sum())


def normalize_sample(v: np.ndarray) -> np.ndarray | None:
    """Mean-subtract and scale to unit norm; None if the vector is constant."""
    v = v - v.mean()
    n = np.linalg.norm(v)
    if n < DEGENERATE_NORM:
        return None
    return v / n


def maybe_fire(state: RegionState, threshold: float) -> SampleVector | None:
    """Emit a sample if activity strictly exceeds ``threshold``.

    On a fire the surface is reset. Constant surfaces are dropped (counted in
    ``state.degenerate``) because a zero vector has no direction.
    """
    if total_activity(state) <= threshold:
        return None
    x = normalize_sample(state.S.reshape(-1))
    state.S[:] = 0.0
    if x is None:
        state.degenerate += 1
        return None
    return SampleVector(x, state.t_last, state.region_index)


# --- lazy kernel -------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _surface_kernel(
    t, x, y, p, start, w, stride, nx, ny, tau_f, threshold,
    stored, t_ref, t_last, act, out_x, out_t, out_k,
):
    """Process events from ``start`` until input or output space runs out.

    Returns ``(next_event, n_out, n_degenerate)``.
    """
    cap = out_x.shape[0]
    per_event = ((w + stride - 1) // stride) ** 2
    ww = w * w
    dim = stored.shape[1]
    n_out = 0
    n_deg = 0
    i = start
    n = t.shape[0]
    while i < n:
        if cap - n_out < per_event:
            break
        ti = t[i]
        xi = x[i]
        yi = y[i]
        pi = p[i]
        kx_lo = max(0, -((w - 1 - xi) // stride))
        kx_hi = min(nx - 1, xi // stride)
        ky_lo = max(0, -((w - 1 - yi) // stride))
        ky_hi = min(ny - 1, yi // stride)
        for ky in range(ky_lo, ky_hi + 1):
            for kx in range(kx_lo, kx_hi + 1):
                k = ky * nx + kx
                gap = (ti - t_ref[k]) / tau_f
                # rebase the decay epoch before exp(gap) can overflow
                if gap > 40.0:
                    scale = math.exp(-gap)
                    for d in range(dim):
                        stored[k, d] *= scale
                    t_ref[k] = ti
                    gap = 0.0
                lx = xi - kx * stride
                ly = yi - ky * stride
                stored[k, pi * ww + ly * w + lx] += math.exp(gap)
                act[k] = act[k] * math.exp(-(ti - t_last[k]) / tau_f) + 1.0
                t_last[k] = ti
                if act[k] > threshold:
                    decay = math.exp(-(ti - t_ref[k]) / tau_f)
                    mean = 0.0
                    for d in range(dim):
                        mean += stored[k, d]
                    mean = mean * decay / dim
                    ss = 0.0
                    for d in range(dim):
                        v = stored[k, d] * decay - mean
                        out_x[n_out, d] = v
                        ss += v * v
                        stored[k, d] = 0.0
                    act[k] = 0.0
                    t_ref[k] = ti
                    nrm = math.sqrt(ss)
                    if nrm < 1e-12:
                        n_deg += 1
                    else:
                        for d in range(dim):
                            out_x[n_out, d] /= nrm
                        out_t[n_out] = ti
                        out_k[n_out] = k
                        n_out += 1
        i += 1
    return i, n_out, n_deg


class FireBatch(NamedTuple):
    """A run of output samples, in emission order."""

    t: np.ndarray  # (n,) int64 microseconds
    region: np.ndarray  # (n,) int64 region index
    x: np.ndarray  # (n, D) unit-norm, zero-mean samples


class SurfaceArray:
    """Lazily-decayed surfaces for every region of ``grid``.

    State persists across ``feed`` calls so long streams can be processed in
    pieces.
    """

    def __init__(self, grid: RegionGrid, tau_f: float, threshold: float, batch_bytes: int = 1 << 25):
        self.grid = grid
        self.tau_f = float(tau_f)
        self.threshold = float(threshold)
        K, D = grid.num_regions, grid.dim
        self.stored = np.zeros((K, D))
        self.t_ref = np.zeros(K)
        self.t_last = np.zeros(K)
        self.act = np.zeros(K)
        self.degenerate = 0
        per_event = (-(-grid.patch_width // grid.stride)) ** 2
        self.capacity = max(4 * per_event, batch_bytes // (8 * D))

    def surface(self, k: int, t: float | None = None) -> np.ndarray:
        """Materialized surface of region ``k`` at time ``t`` (default: last event), as ``S[p, y, x]``."""
        if t is None:
            t = self.t_last[k]
        w, P = self.grid.patch_width, self.grid.geometry.num_types
        return (self.stored[k] * math.exp(-(t - self.t_ref[k]) / self.tau_f)).reshape(P, w, w)

    def feed(self, stream: EventStream) -> Iterator[FireBatch]:
        if stream.geometry != self.grid.geometry:
            raise GeometryMismatch(f"stream geometry {stream.geometry} != grid geometry {self.grid.geometry}")
        if len(stream) == 0:
            return
        t = stream.t.astype(np.float64)
        if t[0] < self.t_last.max():
            raise TimestampRegression("stream starts before previously fed events")
        x, y, p = stream.x, stream.y, stream.p
        g = self.grid
        out_x = np.empty((self.capacity, g.dim))
        out_t = np.empty(self.capacity)
        out_k = np.empty(self.capacity, np.int64)
        i = 0
        while i < len(t):
            i, n, deg = _surface_kernel(
                t, x, y, p, i, g.patch_width, g.stride, g.nx, g.ny, self.tau_f, self.threshold,
                self.stored, self.t_ref, self.t_last, self.act, out_x, out_t, out_k,
            )
            self.degenerate += deg
            if n:
                yield FireBatch(out_t[:n].astype(np.int64), out_k[:n].copy(), out_x[:n].copy())
        if self.degenerate:
            log.debug("%d degenerate (constant) surfaces dropped", self.degenerate)


def count_fires(grid: RegionGrid, stream: EventStream, tau_f: float, threshold: float) -> int:
    return sum(len(b.t) for b in SurfaceArray(grid, tau_f, threshold).feed(stream))

"""Event-camera emulation of static images viewed under fixational drift.

A gaze trajectory is a 2-D random walk (arcmin) sampled every ``step_dt``
that jumps back to the centre when it leaves a circular boundary. Images are
shown one after another for ``presentation_interval`` seconds each, some of
them rotated. Each trajectory sample renders a frame of log intensity seen
through the sensor; per-pixel threshold crossings between consecutive frames
become on/off events, with timestamps interpolated inside the step.

Frames are sampled from the *log* image with bilinear interpolation and edge
replication outside the image, so a uniform image never produces events and
negating the log image exactly swaps on and off events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyProgram
from .events import OFF, ON, EventStream, SensorGeometry

ARCMIN_PER_DEGREE = 60.0
US = 1_000_000


@dataclass(frozen=True)
class DriftParams:
    diffusion: float = 40.0  # arcmin^2 / s
    step_dt: float = 0.025  # s
    boundary: float = 30.0
    boundary_unit: str = "deg"  # or "arcmin"
    pixels_per_degree: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.diffusion < 0 or self.step_dt <= 0 or self.boundary <= 0 or self.pixels_per_degree <= 0:
            raise ValueError("drift parameters must be positive")
        if self.boundary_unit not in ("deg", "arcmin"):
            raise ValueError(f"boundary_unit must be 'deg' or 'arcmin', got {self.boundary_unit!r}")

    @property
    def boundary_arcmin(self) -> float:
        return self.boundary * (ARCMIN_PER_DEGREE if self.boundary_unit == "deg" else 1.0)

    @property
    def step_us(self) -> int:
        return int(round(self.step_dt * US))


@dataclass(frozen=True)
class StimulusProgram:
    images: Sequence[np.ndarray]
    presentation_interval: float = 2.0  # s
    rotate_fraction: float = 0.3
    rotation_range: tuple[float, float] = (0.0, 180.0)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rotate_fraction <= 1.0:
            raise ValueError("rotate_fraction must lie in [0, 1]")
        if self.presentation_interval <= 0:
            raise ValueError("presentation_interval must be positive")

    @property
    def interval_us(self) -> int:
        return int(round(self.presentation_interval * US))

    @property
    def duration(self) -> float:
        return len(self.images) * self.presentation_interval


@dataclass(frozen=True)
class DvsParams:
    sensor: SensorGeometry = SensorGeometry(128, 128, 2)
    contrast_threshold: float = 0.15
    intensity_floor: float = 1e-2
    background_rate: float = 0.0  # Hz per pixel, Poisson, random polarity
    seed: int = 0

    def __post_init__(self):
        if not self.contrast_threshold > 0:
            raise ValueError("contrast_threshold must be positive")
        if self.intensity_floor < 0 or self.background_rate < 0:
            raise ValueError("intensity_floor and background_rate must be non-negative")


class Presentation(NamedTuple):
    t_start: float  # s
    image_index: int
    rotation: float  # degrees


def gen_drift_trajectory(params: DriftParams, duration: float) -> np.ndarray:
    """Gaze samples ``(t [s], x [arcmin], y [arcmin])`` from 0 through ``duration``.

    Each step adds independent normal increments of variance
    ``diffusion * step_dt / 2`` per axis, so the mean squared radial
    displacement grows as ``diffusion * t``.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(math.ceil(duration / params.step_dt - 1e-9))
    rng = np.random.default_rng(params.seed)
    steps = rng.normal(0.0, math.sqrt(params.diffusion * params.step_dt / 2.0), size=(n, 2))
    out = np.zeros((n + 1, 3))
    out[:, 0] = np.arange(n + 1) * params.step_us / US
    pos = np.zeros(2)
    limit2 = params.boundary_arcmin**2
    for i in range(n):
        pos = pos + steps[i]
        if pos @ pos > limit2:
            pos = np.zeros(2)
        out[i + 1, 1:] = pos
    return out


def linear_trajectory(velocity_arcmin_s: tuple[float, float], duration: float, step_dt: float = 0.025) -> np.ndarray:
    """Constant-velocity gaze path, e.g. for drifting-grating probes."""
    n = int(math.ceil(duration / step_dt - 1e-9))
    t = np.arange(n + 1) * step_dt
    return np.stack([t, t * velocity_arcmin_s[0], t * velocity_arcmin_s[1]], axis=1)


def schedule(program: StimulusProgram) -> list[Presentation]:
    """Presentation start times, image order, and seeded rotations."""
    n = len(program.images)
    if n == 0:
        raise EmptyProgram("stimulus program has no images")
    rng = np.random.default_rng(program.seed)
    n_rot = int(round(program.rotate_fraction * n))
    rotated = np.zeros(n, bool)
    rotated[rng.choice(n, size=n_rot, replace=False)] = True
    lo, hi = program.rotation_range
    angles = rng.uniform(lo, hi, size=n)
    return [
        Presentation(i * program.presentation_interval, i, float(angles[i]) if rotated[i] else 0.0)
        for i in range(n)
    ]


def _sample_frame(log_image: np.ndarray, sensor: SensorGeometry, angle_deg: float, offset_px) -> np.ndarray:
    h, w = log_image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    v, u = np.mgrid[0 : sensor.height, 0 : sensor.width].astype(np.float64)
    qx = u - (sensor.width - 1) / 2.0 + offset_px[0]
    qy = v - (sensor.height - 1) / 2.0 + offset_px[1]
    if angle_deg:
        a = math.radians(angle_deg)
        ca, sa = math.cos(a), math.sin(a)
        qx, qy = ca * qx + sa * qy, -sa * qx + ca * qy
    return ndimage.map_coordinates(log_image, [qy + cy, qx + cx], order=1, mode="nearest")


def _crossings(L_prev, L_new, L_ref, C, t0, step_us):
    """Threshold crossings between two frames. Updates ``L_ref`` in place."""
    d = L_new - L_ref
    n = np.floor(np.abs(d) / C).astype(np.int64)
    idx = np.flatnonzero(n)
    if idx.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64)
    counts = n.ravel()[idx]
    sign = np.sign(d.ravel()[idx])
    pix = np.repeat(idx, counts)
    k = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts) + 1
    s = np.repeat(sign, counts)
    level = L_ref.ravel()[pix] + s * k * C
    lp, ln = L_prev.ravel()[pix], L_new.ravel()[pix]
    # a pixel that did not move within the step was already past the level
    # when the step began (e.g. right after a presentation change)
    span = ln - lp
    moving = span != 0
    frac = np.zeros_like(level)
    frac[moving] = np.clip((level[moving] - lp[moving]) / span[moving], 0.0, 1.0)
    t = t0 + np.floor(frac * step_us).astype(np.int64)
    L_ref.ravel()[idx] += sign * counts * C
    pol = np.where(s > 0, ON, OFF)
    return t, pix, pol


def render_events(
    program: StimulusProgram,
    trajectory: np.ndarray,
    dvs: DvsParams,
    pixels_per_degree: float = 60.0,
) -> EventStream:
    """Emulate the sensor over the whole program along ``trajectory``.

    ``trajectory`` rows are ``(t [s], gaze_x [arcmin], gaze_y [arcmin])`` at
    a fixed step, starting at t = 0.
    """
    pres = schedule(program)
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj[-1, 0] < program.duration - 1e-9:
        raise ValueError(f"trajectory ends at {traj[-1, 0]} s, program lasts {program.duration} s")
    sensor = dvs.sensor
    C = dvs.contrast_threshold
    logs = [np.log(np.asarray(im, dtype=np.float64) + dvs.intensity_floor) for im in program.images]
    times_us = np.round(traj[:, 0] * US).astype(np.int64)
    px_per_arcmin = pixels_per_degree / ARCMIN_PER_DEGREE
    interval = program.interval_us
    end_us = len(pres) * interval
    rng = np.random.default_rng(dvs.seed)

    def frame(i):
        p = pres[min(times_us[i] // interval, len(pres) - 1)]
        return _sample_frame(logs[p.image_index], sensor, p.rotation, traj[i, 1:] * px_per_arcmin)

    L_prev = frame(0)
    L_ref = L_prev.copy()
    ts, pixs, pols = [], [], []
    for i in range(1, len(traj)):
        if times_us[i - 1] >= end_us:
            break
        t0, step = times_us[i - 1], times_us[i] - times_us[i - 1]
        L_new = frame(i)
        t, pix, pol = _crossings(L_prev, L_new, L_ref, C, t0, step)
        if dvs.background_rate > 0:
            m = rng.poisson(dvs.background_rate * step / US * sensor.width * sensor.height)
            t = np.concatenate([t, t0 + rng.integers(0, step, m)])
            pix = np.concatenate([pix, rng.integers(0, sensor.width * sensor.height, m)])
            pol = np.concatenate([pol, rng.integers(0, 2, m)])
        order = np.lexsort((pol, pix, t))
        ts.append(t[order])
        pixs.append(pix[order])
        pols.append(pol[order])
        L_prev = L_new
    if not ts:
        return EventStream(sensor)
    pix = np.concatenate(pixs)
    return EventStream(sensor, t=np.concatenate(ts), x=pix % sensor.width, y=pix // sensor.width, p=np.concatenate(pols))


def simulate(
    program: StimulusProgram, drift: DriftParams, dvs: DvsParams
) -> tuple[EventStream, list[int]]:
    """Drift trajectory + rendering. Returns the stream and the presentation
    change times in microseconds (excluding t = 0)."""
    if not len(program.images):
        raise EmptyProgram("stimulus program has no images")
    traj = gen_drift_trajectory(drift, program.duration)
    stream = render_events(program, traj, dvs, drift.pixels_per_degree)
    bounds = [i * program.interval_us for i in range(1, len(program.images))]
    return stream, bounds


# --- stimuli -----------------------------------------------------------------


def grating(shape: tuple[int, int], wavelength: float, orientation_deg: float, phase: float = 0.0,
            contrast: float = 0.9, mean: float = 0.5) -> np.ndarray:
    """Sinusoidal grating; ``orientation_deg`` is the direction of modulation."""
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    a = math.radians(orientation_deg)
    u = x * math.cos(a) + y * math.sin(a)
    return mean * (1.0 + contrast * np.sin(2 * np.pi * u / wavelength + phase))


IMAGE_SUFFIXES = {".pgm", ".png", ".pnm", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp"}


def load_images(directory) -> list[np.ndarray]:
    """Grayscale images in ``directory`` (sorted by name), scaled to [0, 1]."""
    from PIL import Image

    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    images = []
    for p in paths:
        with Image.open(p) as im:
            a = np.asarray(im.convert("I") if im.mode in ("I;16", "I") else im.convert("L"), dtype=np.float64)
        images.append(a / (65535.0 if a.max() > 255 else 255.0))
    return images

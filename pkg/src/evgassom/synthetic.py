"""Synthetic stimuli: training image sets and a 10-class shape dataset."""

from __future__ import annotations

import math

import numpy as np

from .drift_sim import DriftParams, DvsParams, StimulusProgram, grating, simulate
from .events import EventStream, SensorGeometry

SHAPES = (
    "disk", "square", "triangle", "cross", "hbar",
    "vbar", "diagonal", "ring", "ell", "ex",
)


def pink_noise(shape: tuple[int, int], seed: int = 0) -> np.ndarray:
    """1/f-amplitude noise in [0, 1], a stand-in for natural image statistics."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.rfftfreq(shape[1])[None, :]
    f = np.sqrt(fx**2 + fy**2)
    f[0, 0] = 1.0
    spec = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f
    spec[0, 0] = 0.0
    img = np.fft.irfft2(spec, s=shape)
    img -= img.min()
    return img / img.max()


def natural_images(side: int, names=None) -> list[np.ndarray]:
    """scikit-image sample photographs, grayscale, resized to ``side x side``."""
    from skimage import color, data, transform

    names = names or ("camera", "moon", "coins", "brick", "grass", "gravel", "text", "page", "horse")
    out = []
    for n in names:
        im = getattr(data, n)()
        if im.ndim == 3:
            im = color.rgb2gray(im[..., :3])
        im = im.astype(np.float64)
        im = (im - im.min()) / (im.max() - im.min())
        out.append(transform.resize(im, (side, side), anti_aliasing=True))
    return out


def training_images(side: int, n_natural: int, n_gratings: int, seed: int = 0) -> list[np.ndarray]:
    """Interleaved natural images and random oriented gratings.

    Falls back to 1/f noise when scikit-image is unavailable.
    """
    rng = np.random.default_rng(seed)
    try:
        nat = natural_images(side)[:n_natural]
    except ImportError:
        nat = []
    nat += [pink_noise((side, side), seed + i) for i in range(n_natural - len(nat))]
    grats = [
        grating((side, side), rng.uniform(6, 16), rng.uniform(0, 180), rng.uniform(0, 2 * np.pi))
        for _ in range(n_gratings)
    ]
    out = []
    for i in range(max(len(nat), len(grats))):
        out += nat[i : i + 1] + grats[i : i + 1]
    return out


def shape_image(kind: str, side: int, rng: np.random.Generator) -> np.ndarray:
    """A bright shape on a dark background with random scale, offset, and rotation jitter."""
    y, x = np.mgrid[0:side, 0:side].astype(np.float64)
    c = (side - 1) / 2.0
    cx, cy = c + rng.uniform(-2, 2), c + rng.uniform(-2, 2)
    a = math.radians(rng.uniform(-10, 10))
    u = (x - cx) * math.cos(a) + (y - cy) * math.sin(a)
    v = -(x - cx) * math.sin(a) + (y - cy) * math.cos(a)
    s = side * rng.uniform(0.28, 0.34)
    t = s * 0.22
    if kind == "disk":
        m = u**2 + v**2 < s**2
    elif kind == "square":
        m = (abs(u) < s * 0.85) & (abs(v) < s * 0.85)
    elif kind == "triangle":
        m = (v < s * 0.7) & (v > -s * 0.9 + 1.6 * abs(u))
    elif kind == "cross":
        m = ((abs(u) < t) & (abs(v) < s)) | ((abs(v) < t) & (abs(u) < s))
    elif kind == "hbar":
        m = (abs(v) < t * 1.5) & (abs(u) < s)
    elif kind == "vbar":
        m = (abs(u) < t * 1.5) & (abs(v) < s)
    elif kind == "diagonal":
        m = (abs(u - v) < t * 2.0) & (abs(u + v) < s * 1.6)
    elif kind == "ring":
        r2 = u**2 + v**2
        m = (r2 < s**2) & (r2 > (s - 2 * t) ** 2)
    elif kind == "ell":
        m = ((abs(u + s * 0.6) < t) & (abs(v) < s)) | ((abs(v - s * 0.8) < t) & (u > -s * 0.8) & (u < s))
    elif kind == "ex":
        m = ((abs(u - v) < t * 1.4) | (abs(u + v) < t * 1.4)) & (u**2 + v**2 < (s * 1.2) ** 2)
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return np.where(m, 0.85, 0.15)


def shape_recording(
    kind: str, seed: int, sensor_side: int = 32, duration: float = 0.5,
    pixels_per_degree: float = 60.0, contrast_threshold: float = 0.15,
) -> EventStream:
    """One recording: a jittered shape viewed under fixational drift."""
    rng = np.random.default_rng(seed)
    img = shape_image(kind, sensor_side + 8, rng)
    program = StimulusProgram([img], presentation_interval=duration, rotate_fraction=0.0, seed=seed)
    drift = DriftParams(seed=seed, pixels_per_degree=pixels_per_degree)
    dvs = DvsParams(sensor=SensorGeometry(sensor_side, sensor_side, 2), contrast_threshold=contrast_threshold)
    stream, _ = simulate(program, drift, dvs)
    return stream


def shape_dataset(per_class: int, seed: int = 0, **kwargs) -> list[tuple[EventStream, str]]:
    """``per_class`` recordings of each of the 10 shapes, class-major order."""
    return [
        (shape_recording(kind, seed * 100_003 + ci * 1009 + i, **kwargs), kind)
        for ci, kind in enumerate(SHAPES)
        for i in range(per_class)
    ]

"""Probing trained layer-1 banks with drifting gratings.

Orientation selectivity of node r is ``(max - min) / (max + mean)`` of its
mean response over gratings drifting at evenly spaced orientations.

Phase invariance (slowness) compares, over the samples a node wins, the
variance of its subspace energy with the variance of the squared response of
its single best basis vector. A quadrature pair has nearly constant energy
while each vector alone oscillates with the grating phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .drift_sim import DvsParams, StimulusProgram, grating, linear_trajectory, render_events
from .events import SensorGeometry
from .gassom import SubspaceBank, responses
from .surface import SurfaceArray, tile_regions


@dataclass(frozen=True)
class GratingProbe:
    wavelength: float = 10.0  # pixels
    speed: float = 20.0  # pixels / s
    duration: float = 1.0  # s
    sensor_side: int = 64
    contrast: float = 0.9
    contrast_threshold: float = 0.15


def grating_samples(config, orientation_deg: float, probe: GratingProbe = GratingProbe()) -> np.ndarray:
    """Layer-1 surface samples (N, D) from one grating drifting along its modulation axis."""
    S = probe.sensor_side
    pad = int(math.ceil(probe.speed * probe.duration)) * 2 + 8
    img = grating((S + pad, S + pad), probe.wavelength, orientation_deg, contrast=probe.contrast)
    a = math.radians(orientation_deg)
    # 1 arcmin per pixel at 60 pixels per degree
    v = (probe.speed * math.cos(a), probe.speed * math.sin(a))
    dvs = DvsParams(sensor=SensorGeometry(S, S, 2), contrast_threshold=probe.contrast_threshold)
    program = StimulusProgram([img], presentation_interval=probe.duration, rotate_fraction=0.0)
    stream = render_events(program, linear_trajectory(v, probe.duration), dvs, pixels_per_degree=60.0)
    surfaces = SurfaceArray(tile_regions(stream.geometry, config.patch_width, config.stride), config.tau_f, config.fire_threshold)
    batches = [b.x for b in surfaces.feed(stream)]
    return np.concatenate(batches) if batches else np.zeros((0, tile_regions(stream.geometry, config.patch_width, config.stride).dim))


def orientation_samples(config, n_orientations: int = 8, probe: GratingProbe = GratingProbe()) -> list[np.ndarray]:
    return [grating_samples(config, 180.0 * i / n_orientations, probe) for i in range(n_orientations)]


def tuning_curves(bank: SubspaceBank, samples: list[np.ndarray]) -> np.ndarray:
    """Mean response, shape (n_orientations, R)."""
    return np.stack([responses(bank, X).mean(axis=0) for X in samples])


def selectivity_index(tuning: np.ndarray) -> np.ndarray:
    mx, mn, mean = tuning.max(axis=0), tuning.min(axis=0), tuning.mean(axis=0)
    return (mx - mn) / (mx + mean)


def slowness_ratios(bank: SubspaceBank, samples: list[np.ndarray], min_wins: int = 20) -> np.ndarray:
    """Per node: var(energy) / var(best single basis squared response) over won samples.

    NaN for nodes winning fewer than ``min_wins`` samples.
    """
    X = np.concatenate(samples)
    winners = np.argmax(responses(bank, X), axis=1)
    out = np.full(bank.R, np.nan)
    for r in range(bank.R):
        won = X[winners == r]
        if len(won) < min_wins:
            continue
        c2 = (won @ bank.bases[r].T) ** 2
        best = int(np.argmax(c2.mean(axis=0)))
        single = c2[:, best].var()
        out[r] = c2.sum(axis=1).var() / single if single > 0 else np.inf
    return out

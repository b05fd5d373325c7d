"""
Synthetic radargrams for desk-scale experiments

Each record is a straight flight line over Greenland-like coordinates with
smoothly varying layer thicknesses. The shallow layers each carry their own
low-frequency accumulation pattern at a record-specific amplitude. Every deep
layer is a depth-dependent blend of those shallow patterns, and the weight of
each pattern is set by the amplitude of the shallow layer below it, so
predicting a deep layer means relating shallow layers to one another. A small
layer-specific component is not predictable at all.
"""

from typing import List

import numpy as np
import structlog

from common.errors import InsufficientDataError
from dataio.records import DEFAULT_WIDTH, RadargramRecord

logger = structlog.get_logger(__name__)

DEFAULT_BOUNDARIES = 21
SHALLOW_LAYERS = 5

LAT_RANGE = (66.0, 79.0)
LON_RANGE = (-58.0, -32.0)
THICKNESS_RANGE = (5.0, 25.0)
AMPLITUDE_RANGE = (0.5, 1.5)
PATTERN_STRENGTH = 0.25
MIXING_WIDTH = 0.9
LAYER_NOISE = 0.04


def _low_frequency(rng: np.random.Generator, u: np.ndarray) -> np.ndarray:
    """Sum of 2-4 slow sinusoids across the columns, scaled into [-1, 1]"""
    n_terms = int(rng.integers(2, 5))
    cycles = rng.uniform(0.3, 3.0, size=n_terms)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_terms)
    amplitudes = rng.uniform(0.3, 1.0, size=n_terms)
    waves = amplitudes[:, None] * np.sin(2.0 * np.pi * cycles[:, None] * u[None, :] + phases[:, None])
    return waves.sum(axis=0) / amplitudes.sum()


def deep_mixing(n_deep: int, n_shallow: int) -> np.ndarray:
    """(n_deep, n_shallow) row-stochastic weights; the dominant shallow layer moves with depth"""
    centres = np.linspace(0.0, n_shallow - 1.0, n_deep) if n_deep > 1 else np.zeros(1)
    offsets = centres[:, None] - np.arange(n_shallow)[None, :]
    weights = np.exp(-0.5 * (offsets / MIXING_WIDTH) ** 2)
    return weights / weights.sum(axis=1, keepdims=True)


def _synth_record(record_id: str, rng: np.random.Generator, width: int, n_boundaries: int) -> RadargramRecord:
    u = np.linspace(0.0, 1.0, width)

    lat0 = rng.uniform(*LAT_RANGE)
    lon0 = rng.uniform(*LON_RANGE)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    track_deg = rng.uniform(0.02, 0.08)
    lat = lat0 + track_deg * np.cos(heading) * u + 1e-4 * _low_frequency(rng, u)
    lon = lon0 + track_deg * np.sin(heading) / np.cos(np.radians(lat0)) * u + 1e-4 * _low_frequency(rng, u)

    n_layers = n_boundaries - 1
    n_shallow = min(SHALLOW_LAYERS, n_layers)
    depth = np.linspace(0.0, 1.0, n_layers) if n_layers > 1 else np.zeros(1)
    accumulation = rng.uniform(0.8, 1.2)
    base = np.clip(accumulation * (20.0 - 10.0 * depth) * rng.uniform(0.95, 1.05, size=n_layers), *THICKNESS_RANGE)
    strength = PATTERN_STRENGTH * (1.0 - 0.4 * depth)

    patterns = np.stack([_low_frequency(rng, u) for _ in range(n_shallow)])
    amplitudes = rng.uniform(*AMPLITUDE_RANGE, size=n_shallow)
    anomaly = np.empty((n_layers, width))
    anomaly[:n_shallow] = amplitudes[:, None] * patterns
    if n_layers > n_shallow:
        # pattern i reaches the deep layers at the amplitude of shallow layer i + 1
        coupled = np.roll(amplitudes, -1)[:, None] * patterns
        anomaly[n_shallow:] = deep_mixing(n_layers - n_shallow, n_shallow) @ coupled

    layer_noise = np.stack([_low_frequency(rng, u) for _ in range(n_layers)])
    thickness = base[:, None] * (1.0 + strength[:, None] * anomaly + LAYER_NOISE * layer_noise)

    top = rng.uniform(20.0, 60.0) + 2.0 * _low_frequency(rng, u)
    boundaries = np.vstack([top, top + np.cumsum(thickness, axis=0)])
    return RadargramRecord(record_id, width, lat, lon, boundaries).validate()


def synth_generate(
    count: int, seed: int, width: int = DEFAULT_WIDTH, n_layers: int = DEFAULT_BOUNDARIES
) -> List[RadargramRecord]:
    """Generate ``count`` records deterministically from ``seed``.

    ``n_layers`` counts boundary lines, so the default 21 yields 20 thickness
    layers and every record passes ``filter_complete(.., 20)``.
    """
    if count < 1:
        raise InsufficientDataError(f"count must be at least 1, got {count}")
    if n_layers < 2:
        raise InsufficientDataError(f"need at least 2 boundaries per record, got {n_layers}")
    children = np.random.SeedSequence(seed).spawn(count)
    records = [
        _synth_record(f"synth-{seed}-{i:04d}", np.random.default_rng(child), width, n_layers)
        for i, child in enumerate(children)
    ]
    logger.info("synthetic records generated", count=count, seed=seed, width=width, boundaries=n_layers)
    return records

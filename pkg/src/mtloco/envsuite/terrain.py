"""Track realisation: piecewise obstacle profile plus midpoint-displacement noise."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._kernels.layout import KIND_CODES, SEG_WIDTH
from .config import TerrainSpec

PIT_DEPTH = 0.5
NOISE_KNOT_SPACING = 2.0
NOISE_OCTAVES = 4


def midpoint_displacement(n_knots: int, z_max: float, rng, octaves: int = NOISE_OCTAVES) -> np.ndarray:
    """1-D fractal profile with ``(n_knots - 1) * 2**octaves + 1`` samples.

    Coarse knots are uniform in [-z_max/2, z_max/2]; each octave inserts
    midpoints displaced by a uniform draw whose amplitude halves per octave
    (z_max/4, z_max/8, ...), so |h| < z_max always.
    """
    h = rng.uniform(-0.5 * z_max, 0.5 * z_max, size=n_knots)
    amp = 0.25 * z_max
    for _ in range(octaves):
        mid = 0.5 * (h[:-1] + h[1:]) + rng.uniform(-amp, amp, size=h.size - 1)
        out = np.empty(2 * h.size - 1)
        out[0::2] = h
        out[1::2] = mid
        h = out
        amp *= 0.5
    return h


@dataclass
class RealizedTrack:
    spec: TerrainSpec
    grid_res: float
    noise: np.ndarray      # fractal noise sampled on the grid

    @property
    def xs(self) -> np.ndarray:
        return np.arange(self.noise.size) * self.grid_res

    @property
    def base(self) -> np.ndarray:
        """Obstacle profile on the grid (computed on demand; the dynamics only read the noise)."""
        return np.array([base_height(self.spec, float(x)) for x in self.xs])

    @property
    def heights(self) -> np.ndarray:
        return self.base + self.noise

    def segment_array(self) -> np.ndarray:
        out = np.zeros((len(self.spec.segments), SEG_WIDTH))
        for k, (x0, s) in enumerate(zip(self.spec.starts(), self.spec.segments)):
            out[k] = (x0, KIND_CODES[s.kind], s.param, s.direction)
        return out

    def obstacles(self) -> list[dict]:
        return [{"kind": s.kind, "start": x0, "end": x0 + s.length, "param": s.param, "direction": s.direction}
                for x0, s in zip(self.spec.starts(), self.spec.segments) if s.kind != "flat"]

    def height_at(self, x: float) -> float:
        return base_height(self.spec, x) + float(np.interp(x, np.arange(self.noise.size) * self.grid_res, self.noise))


def base_height(spec: TerrainSpec, x: float) -> float:
    """Obstacle profile h(x) without noise.  Baffles are overhead and leave the ground flat."""
    level = 0.0
    for x0, s in zip(spec.starts(), spec.segments):
        x1 = x0 + s.length
        if s.kind == "stair":
            n_steps = max(1, int(round(s.length / 0.3)))
            if x >= x1:
                level += s.direction * s.param * n_steps
                continue
            if x >= x0:
                k = min(n_steps, int((x - x0) / (s.length / n_steps)) + 1)
                return level + s.direction * s.param * k
        elif s.kind == "slope":
            rise = s.direction * math.tan(s.param) * s.length
            if x >= x1:
                level += rise
                continue
            if x >= x0:
                return level + s.direction * math.tan(s.param) * (x - x0)
        elif x0 <= x < x1:
            if s.kind == "bar":
                return level + s.param
            if s.kind == "pit":
                return level - PIT_DEPTH
            return level
    return level


def generate_track(spec: TerrainSpec, rng, grid_res: float = 0.05) -> RealizedTrack:
    n_grid = int(math.floor(spec.track_length / grid_res + 1e-9)) + 1
    xs = np.arange(n_grid) * grid_res
    if spec.z_max > 0:
        n_knots = int(math.ceil(spec.track_length / NOISE_KNOT_SPACING)) + 1
        prof = midpoint_displacement(n_knots, spec.z_max, rng)
        px = np.linspace(0.0, (n_knots - 1) * NOISE_KNOT_SPACING, prof.size)
        noise = np.interp(xs, px, prof)
    else:
        noise = np.zeros(n_grid)
    return RealizedTrack(spec, grid_res, noise)

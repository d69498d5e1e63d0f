"""Piecewise terrain height profiles h(x) for the sagittal plane."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

TERRAIN_KINDS = ("flat", "slope", "stairs", "stairs_down", "irregular")
# Vertical faces are replaced by ramps this wide so contact normals stay defined.
EDGE_WIDTH = 0.01


@dataclass(frozen=True)
class TerrainProfile:
    kind: str = "flat"
    start: float = 0.6          # x where the feature begins
    grade: float = 0.25         # slope rise per metre
    slope_length: float = 3.0
    rise: float = 0.10          # stair height
    run: float = 0.20           # stair tread depth
    steps: int = 12
    block_width: float = 0.25
    max_elevation: float = 0.10
    blocks: int = 80
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TERRAIN_KINDS:
            raise ValueError(f"unknown terrain {self.kind!r}; choose from {TERRAIN_KINDS}")

    @cached_property
    def block_heights(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0.0, self.max_elevation, self.blocks)

    def height(self, x) -> np.ndarray:
        return self.height_and_slope(x)[0]

    def slope(self, x) -> np.ndarray:
        return self.height_and_slope(x)[1]

    def height_and_slope(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(x), np.zeros_like(x)
        if self.kind == "slope":
            u = x - self.start
            on = (u > 0) & (u < self.slope_length)
            h = self.grade * np.clip(u, 0.0, self.slope_length)
            return h, np.where(on, self.grade, 0.0)
        if self.kind in ("stairs", "stairs_down"):
            return self._stairs(x, -1.0 if self.kind == "stairs_down" else 1.0)
        return self._irregular(x)

    def _stairs(self, x, sign):
        u = (x - self.start) / self.run
        k = np.floor(u)
        frac_m = (u - k) * self.run
        ramp = np.clip(frac_m / EDGE_WIDTH, 0.0, 1.0)
        level = np.where(u < 0, 0.0, np.minimum(k + ramp, self.steps))
        on_edge = (u >= 0) & (frac_m < EDGE_WIDTH) & (k < self.steps)
        h = sign * self.rise * level
        dh = np.where(on_edge, sign * self.rise / EDGE_WIDTH, 0.0)
        return h, dh

    def _irregular(self, x):
        heights = self.block_heights
        u = (x - self.start) / self.block_width
        k = np.clip(np.floor(u).astype(int), 0, self.blocks - 1)
        frac_m = (u - np.floor(u)) * self.block_width
        cur = heights[k]
        prev_h = np.where(k >= 1, heights[np.maximum(k - 1, 0)], 0.0)
        ramp = np.clip(frac_m / EDGE_WIDTH, 0.0, 1.0)
        inside = (u >= 0) & (u < self.blocks)
        h = np.where(inside, prev_h + (cur - prev_h) * ramp,
                     np.where(u >= self.blocks, heights[-1], 0.0))
        dh = np.where(inside & (frac_m < EDGE_WIDTH), (cur - prev_h) / EDGE_WIDTH, 0.0)
        return h, dh


# Rough ground surrounds the spawn point; slopes and stairs lie ahead of it.
IRREGULAR_START = -5.0


def make_terrain(kind: str, seed: int = 0, **kwargs) -> TerrainProfile:
    if kind == "irregular":
        kwargs.setdefault("start", IRREGULAR_START)
    return TerrainProfile(kind=kind, seed=seed, **kwargs)


def scan_offsets(nx: int, dx: float) -> np.ndarray:
    """Longitudinal offsets of the scan grid, centred on the base."""
    return dx * (np.arange(nx) - (nx - 1) / 2.0)


def terrain_height_scan(base_x, base_z, terrain: TerrainProfile, nx: int, ny: int,
                        dx: float) -> np.ndarray:
    """Terrain height minus base height on an ``nx`` by ``ny`` grid.

    The planar world has no lateral variation, so the ``ny`` lateral rows are
    copies of the longitudinal profile. Output is ``(N, nx * ny)``, row-major
    over (lateral, longitudinal).
    """
    base_x = np.atleast_1d(np.asarray(base_x, dtype=float))
    base_z = np.atleast_1d(np.asarray(base_z, dtype=float))
    xs = base_x[:, None] + scan_offsets(nx, dx)[None, :]
    rel = terrain.height(xs) - base_z[:, None]
    return np.tile(rel, (1, ny))

"""Deterministic synthetic scenes: a procedural world, a camera trajectory,
and exact ground truth for frames, expanded frames, and flows.

A scene is a value-noise world sampled through a moving crop window.  Because
the world is static, the true flow between any two frames is the constant
origin difference, which makes propagation testable to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import CanvasSpec, ChannelGrid, FlowField
from .seeding import seeded_generator

TRAJECTORY_KINDS = ("static", "pan", "pan_cycle")


@dataclass(frozen=True)
class TrajectorySpec:
    """Camera path: static, constant pan, or back-and-forth pan.

    ``delta`` is the per-frame origin step (dy, dx); ``period`` is the number
    of frames a pan_cycle moves forward before reversing.
    """

    kind: str = "pan"
    start_y: float = 0.0
    start_x: float = 0.0
    delta_y: float = 0.0
    delta_x: float = 0.0
    period: int = 4

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "pan_cycle" and self.period < 1:
            raise ValueError("pan_cycle needs period >= 1")

    def origins(self, n_frames: int) -> list[tuple[float, float]]:
        out = []
        for k in range(n_frames):
            if self.kind == "static":
                step = 0.0
            elif self.kind == "pan":
                step = float(k)
            else:
                phase = k % (2 * self.period)
                step = float(phase if phase <= self.period else 2 * self.period - phase)
            out.append((self.start_y + step * self.delta_y, self.start_x + step * self.delta_x))
        return out


def _bilinear_sample(plane: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(int)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(int)
    fy = ys - y0
    fx = xs - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    a = plane[y0, x0]
    b = plane[y0, x1]
    c = plane[y1, x0]
    d = plane[y1, x1]
    return a + fx * (b - a) + fy * (c - a) + fx * fy * (d - c - b + a)


def _value_noise(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Multi-octave value noise in [0, 1] with per-pixel variance."""
    acc = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    for scale, weight in ((16, 0.5), (8, 0.3), (4, 0.2)):
        lat_h = math.ceil(h / scale) + 1
        lat_w = math.ceil(w / scale) + 1
        lattice = rng.random((lat_h, lat_w))
        acc += weight * _bilinear_sample(lattice, ys / scale, xs / scale)
    acc += 0.10 * rng.random((h, w))
    lo, hi = acc.min(), acc.max()
    return (acc - lo) / (hi - lo)


@dataclass(frozen=True)
class SyntheticScene:
    """World, trajectory, and derived ground truth for one synthetic run."""

    world: ChannelGrid
    origins: tuple[tuple[float, float], ...]
    crop_h: int
    crop_w: int
    spec: CanvasSpec
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "origins", tuple((float(y), float(x)) for y, x in self.origins))
        wh, ww = self.world.height, self.world.width
        for oy, ox in self.origins:
            ey = oy - self.spec.offset_y
            ex = ox - self.spec.offset_x
            if ey < 0 or ex < 0 or ey + self.spec.canvas_h > wh or ex + self.spec.canvas_w > ww:
                raise ValueError(
                    f"trajectory escapes world: expanded crop at ({ey}, {ex}) "
                    f"with size {self.spec.canvas_h}x{self.spec.canvas_w}"
                )

    @property
    def num_frames(self) -> int:
        return len(self.origins)

    def _crop(self, oy: float, ox: float, h: int, w: int) -> ChannelGrid:
        if float(oy).is_integer() and float(ox).is_integer():
            iy, ix = int(oy), int(ox)
            return ChannelGrid(self.world.data[:, iy : iy + h, ix : ix + w])
        ys, xs = np.mgrid[0:h, 0:w].astype(float)
        planes = [_bilinear_sample(c, ys + oy, xs + ox) for c in self.world.data]
        return ChannelGrid(np.stack(planes))

    def frame(self, i: int) -> ChannelGrid:
        oy, ox = self.origins[i]
        return self._crop(oy, ox, self.crop_h, self.crop_w)

    def frames(self) -> list[ChannelGrid]:
        return [self.frame(i) for i in range(self.num_frames)]

    def gt_expanded(self, i: int) -> ChannelGrid:
        """The ground-truth content of frame i's whole expanded canvas."""
        oy, ox = self.origins[i]
        return self._crop(
            oy - self.spec.offset_y, ox - self.spec.offset_x, self.spec.canvas_h, self.spec.canvas_w
        )

    def gt_flow(self, src: int, dst: int) -> FlowField:
        """The field on frame ``src``'s grid whose displacement samples frame
        ``dst``: constant origin difference origin_src - origin_dst."""
        oy_s, ox_s = self.origins[src]
        oy_d, ox_d = self.origins[dst]
        return FlowField.constant(self.crop_h, self.crop_w, ox_s - ox_d, oy_s - oy_d)


def generate_scene(
    seed: int,
    world_h: int,
    world_w: int,
    crop_h: int,
    crop_w: int,
    n_frames: int,
    trajectory: TrajectorySpec,
    spec: CanvasSpec,
) -> SyntheticScene:
    """Build a scene whose world is fully determined by ``seed``."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if (crop_h, crop_w) != (spec.orig_h, spec.orig_w):
        raise ValueError("crop size must match the canvas spec's original size")
    rng = seeded_generator(seed, "world")
    planes = [_value_noise(rng, world_h, world_w) for _ in range(3)]
    world = ChannelGrid(np.stack(planes))
    return SyntheticScene(
        world=world,
        origins=tuple(trajectory.origins(n_frames)),
        crop_h=crop_h,
        crop_w=crop_w,
        spec=spec,
        seed=seed,
    )


def stand_in_encode(frame: ChannelGrid, s: int) -> ChannelGrid:
    """Block-mean encoder: each s x s block becomes one latent cell."""
    if s < 1:
        raise ValueError("downsample factor must be >= 1")
    if frame.height % s or frame.width % s:
        raise ValueError(f"factor {s} must divide frame dims {frame.height}x{frame.width}")
    if s == 1:
        return frame
    c, h, w = frame.data.shape
    blocks = frame.data.reshape(c, h // s, s, w // s, s)
    # anchor-shift mean: exact on block-constant inputs (mean of zeros is 0)
    anchors = frame.data[:, ::s, ::s]
    deltas = blocks - anchors[:, :, None, :, None]
    return ChannelGrid(anchors + deltas.mean(axis=(2, 4), dtype=np.float64))


def stand_in_decode(latent: ChannelGrid, s: int) -> ChannelGrid:
    """Nearest-neighbor decoder, the inverse of stand_in_encode on
    block-constant images."""
    if s < 1:
        raise ValueError("downsample factor must be >= 1")
    if s == 1:
        return latent
    return ChannelGrid(np.repeat(np.repeat(latent.data, s, axis=1), s, axis=2))

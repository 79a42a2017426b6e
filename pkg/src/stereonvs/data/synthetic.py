"""Procedural stereo sequences with exact ground-truth geometry.

A scene is a stack of fronto-parallel textured planes: an infinite backdrop
plus up to three floating rectangles at nearer depths.  Cameras translate
along +x on a short track; every view of every frame is rendered
analytically by intersecting pixel rays with the planes, so the stereo pair
is consistent with the ground-truth disparity by construction and occlusion
masks are exact.

Textures are band-limited value noise evaluated in world coordinates from a
hashed integer lattice, with per-plane wavelengths chosen so the *image*
space frequency is depth-independent.  All planes share one lattice; planes
differ by a small color tint, which keeps depth edges low-contrast (floor
rounding in the forward-map oracle stays sub-1%% of dynamic range) while the
noise itself makes local stereo matching well-posed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..geometry import CameraModel, Pose
from .sequences import StereoFrame

# image-space (wavelength px, amplitude) octaves of the shared texture
DEFAULT_OCTAVES = ((14.0, 0.12), (7.0, 0.035))
TINT_RANGE = 0.05


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    n_frames: int = 5
    spacing_m: float = 0.25
    fx: float = 64.0
    baseline: float = 0.5
    min_planes: int = 1
    max_planes: int = 4
    background_depth: Tuple[float, float] = (8.0, 14.0)
    foreground_depth: Tuple[float, float] = (2.5, 7.0)
    octaves: Tuple[Tuple[float, float], ...] = DEFAULT_OCTAVES

    def __post_init__(self):
        if self.min_planes < 1 or self.max_planes < self.min_planes:
            raise ValueError("plane count range must satisfy 1 <= min <= max")
        if self.n_frames < 1:
            raise ValueError("need at least one frame")

    @property
    def camera(self) -> CameraModel:
        return CameraModel(fx=self.fx, fy=self.fx, cx=(self.width - 1) / 2.0,
                           cy=(self.height - 1) / 2.0, baseline=self.baseline)


def _splitmix(x: np.ndarray) -> np.ndarray:
    z = (x + np.uint64(0x9E3779B97F4A7C15))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _lattice(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic pseudo-random lattice values in [0, 1)."""
    mixed = (ix.astype(np.uint64) * np.uint64(0xD6E8FEB86659FD93)
             ^ iy.astype(np.uint64) * np.uint64(0xA3B195354A39B70D)
             ^ np.uint64(salt))
    return _splitmix(mixed).astype(np.float64) / 2.0 ** 64


def _smooth(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _value_noise(wx: np.ndarray, wy: np.ndarray, wavelength: float, salt: int) -> np.ndarray:
    """Smoothly interpolated lattice noise in [0, 1], any world coordinates."""
    u = wx / wavelength
    v = wy / wavelength
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = _smooth(u - i0)
    fv = _smooth(v - j0)
    v00 = _lattice(i0, j0, salt)
    v01 = _lattice(i0 + 1, j0, salt)
    v10 = _lattice(i0, j0 + 1, salt)
    v11 = _lattice(i0 + 1, j0 + 1, salt)
    top = v00 * (1 - fu) + v01 * fu
    bot = v10 * (1 - fu) + v11 * fu
    return top * (1 - fv) + bot * fv


@dataclass(frozen=True)
class Plane:
    depth: float
    tint: np.ndarray                      # (3,) additive color offset
    rect: Optional[Tuple[float, float, float, float]] = None  # x0, x1, y0, y1 (world)

    def contains(self, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
        if self.rect is None:
            return np.ones_like(wx, dtype=bool)
        x0, x1, y0, y1 = self.rect
        return (wx >= x0) & (wx <= x1) & (wy >= y0) & (wy <= y1)


class SyntheticScene:
    """Layered-plane scene with analytic rendering and exact ground truth."""

    def __init__(self, seed: int, cfg: SceneConfig = SceneConfig()):
        self.seed = seed
        self.cfg = cfg
        self.cam = cfg.camera
        rng = np.random.default_rng([seed, 0x53434E])
        self.texture_salt = int(rng.integers(0, 2 ** 62))
        n_planes = int(rng.integers(cfg.min_planes, cfg.max_planes + 1))
        bg_depth = float(rng.uniform(*cfg.background_depth))
        planes: List[Plane] = []
        track_len = (cfg.n_frames - 1) * cfg.spacing_m + cfg.baseline
        for _ in range(n_planes - 1):
            depth = float(rng.uniform(*cfg.foreground_depth))
            half_w = depth * cfg.width / cfg.fx / 2.0
            half_h = depth * cfg.height / cfg.fx / 2.0
            cx_w = float(rng.uniform(0.0, track_len)) + float(rng.uniform(-0.5, 0.5)) * half_w
            cy_w = float(rng.uniform(-0.4, 0.4)) * half_h
            sx = float(rng.uniform(0.25, 0.6)) * half_w
            sy = float(rng.uniform(0.25, 0.6)) * half_h
            tint = rng.uniform(-TINT_RANGE, TINT_RANGE, size=3)
            planes.append(Plane(depth=depth, tint=tint,
                                rect=(cx_w - sx, cx_w + sx, cy_w - sy, cy_w + sy)))
        planes.append(Plane(depth=bg_depth, tint=rng.uniform(-TINT_RANGE, TINT_RANGE, 3)))
        self.planes = sorted(planes, key=lambda p: p.depth)

    # -- camera track ---------------------------------------------------------

    def __len__(self) -> int:
        return self.cfg.n_frames

    def left_cam_x(self, frame: int) -> float:
        return frame * self.cfg.spacing_m

    def pose(self, frame: int) -> Pose:
        """Camera-to-world pose of the left camera of a frame."""
        return Pose(np.eye(3), np.array([self.left_cam_x(frame), 0.0, 0.0]))

    # -- analytic rendering ---------------------------------------------------

    def _ray_slopes(self):
        cfg, cam = self.cfg, self.cam
        ys, xs = np.meshgrid(np.arange(cfg.height, dtype=np.float64),
                             np.arange(cfg.width, dtype=np.float64), indexing="ij")
        return (xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy

    def _texture(self, wx: np.ndarray, wy: np.ndarray, plane: Plane) -> np.ndarray:
        out = np.empty((3,) + wx.shape)
        scale = plane.depth / self.cam.fx  # meters per pixel on this plane
        for ch in range(3):
            acc = np.full(wx.shape, 0.5)
            for octave, (wl_px, amp) in enumerate(self.cfg.octaves):
                salt = self.texture_salt + 1013 * ch + 9176 * octave
                acc = acc + amp * (_value_noise(wx, wy, wl_px * scale, salt) - 0.5)
            out[ch] = acc + plane.tint[ch]
        return np.clip(out, 0.0, 1.0)

    def render(self, cam_x: float):
        """Render the scene from a camera at world (cam_x, 0, 0).

        Returns (rgb (3,H,W), depth (H,W), plane index map (H,W)).
        """
        sx, sy = self._ray_slopes()
        h, w = sx.shape
        rgb = np.zeros((3, h, w))
        depth = np.zeros((h, w))
        plane_id = np.full((h, w), -1, dtype=np.int64)
        remaining = np.ones((h, w), dtype=bool)
        for k, plane in enumerate(self.planes):
            wx = cam_x + plane.depth * sx
            wy = plane.depth * sy
            hit = remaining & plane.contains(wx, wy)
            if not hit.any():
                continue
            tex = self._texture(wx, wy, plane)
            rgb[:, hit] = tex[:, hit]
            depth[hit] = plane.depth
            plane_id[hit] = k
            remaining &= ~hit
        return rgb, depth, plane_id

    def frame(self, i: int) -> StereoFrame:
        if not 0 <= i < len(self):
            raise IndexError(f"frame {i} out of range [0, {len(self)})")
        left, _, _ = self.render(self.left_cam_x(i))
        right, _, _ = self.render(self.left_cam_x(i) + self.cfg.baseline)
        return StereoFrame(index=i, left=left.astype(np.float32),
                           right=right.astype(np.float32), pose=self.pose(i))

    def gt_depth(self, i: int) -> np.ndarray:
        """Ground-truth depth of the left view of a frame, meters."""
        _, depth, _ = self.render(self.left_cam_x(i))
        return depth

    def gt_disparity(self, i: int) -> np.ndarray:
        return self.cam.fx * self.cam.baseline / self.gt_depth(i)

    def visibility_from(self, i: int, other_cam_x: float) -> np.ndarray:
        """Mask of left-view pixels of frame i whose surface point is seen
        unoccluded and in-frame from a camera at ``other_cam_x``."""
        cam = self.cam
        cam_x = self.left_cam_x(i)
        sx, sy = self._ray_slopes()
        _, depth, plane_id = self.render(cam_x)
        wx = cam_x + depth * sx
        wy = depth * sy
        px = cam.fx * (wx - other_cam_x) / depth + cam.cx
        py = cam.fy * wy / depth + cam.cy
        visible = (px >= 0) & (px <= self.cfg.width - 1) & \
                  (py >= 0) & (py <= self.cfg.height - 1)
        for j, plane in enumerate(self.planes):
            if plane.rect is None:
                continue
            nearer = plane.depth < depth
            if not nearer.any():
                continue
            t = plane.depth / depth
            qx = other_cam_x + (wx - other_cam_x) * t
            qy = wy * t
            blocked = nearer & (plane_id != j) & plane.contains(qx, qy)
            visible &= ~blocked
        return visible

    def stereo_occlusion_mask(self, i: int) -> np.ndarray:
        """Left-view pixels visible in the right view (non-occluded, in frame)."""
        return self.visibility_from(i, self.left_cam_x(i) + self.cfg.baseline)


def generate_scene(seed: int, cfg: SceneConfig = SceneConfig()) -> SyntheticScene:
    return SyntheticScene(seed, cfg)


def generate_scenes(base_seed: int, count: int,
                    cfg: SceneConfig = SceneConfig()) -> List[SyntheticScene]:
    rng = np.random.default_rng([base_seed, 0xDA7A])
    seeds = rng.integers(0, 2 ** 62, size=count)
    return [SyntheticScene(int(s), cfg) for s in seeds]

"""Camera model, disparity/depth conversion, backward warping and forward mapping.

Coordinate conventions, used everywhere in the package:

* a pixel is addressed by the homogeneous vector [x, y, 1] where x is the
  column and y is the row;
* the camera looks down +z, x grows rightwards, y grows downwards;
* a rectified stereo pair has the right camera displaced by +x, so the left
  view samples the right image at ``x - d`` (configurable via
  ``StereoConvention``);
* a relative pose maps source-camera coordinates to target-camera
  coordinates: ``X_target = R @ X_source + T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .tensor import Tensor, concat, make_op

POSE_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the stereo baseline in meters."""
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.baseline <= 0:
            raise ValueError("stereo baseline must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform [R|T]; maps source-camera points into the target frame."""
    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got {R.shape}")
        if np.abs(R.T @ R - np.eye(3)).max() > POSE_ORTHO_TOL:
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > POSE_ORTHO_TOL:
            raise ValueError("R must be a proper rotation (det = +1)")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self after other: x -> self(other(x))."""
        return Pose(self.R @ other.R, self.R @ other.T + self.T)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.T)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (3, ...) points."""
        flat = points.reshape(3, -1)
        out = self.R @ flat + self.T[:, None]
        return out.reshape(points.shape)

    def is_identity(self, tol: float = 1e-12) -> bool:
        return (np.abs(self.R - np.eye(3)).max() <= tol
                and np.abs(self.T).max() <= tol)


@dataclass
class DisparityMap:
    """Per-pixel disparity in pixels at full image resolution."""
    values: np.ndarray
    d_min: float
    d_max: float

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"disparity map must be HxW, got {self.values.shape}")


@dataclass
class WarpedView:
    """Forward-mapped RGB image plus validity mask (1 = received a color)."""
    rgb: np.ndarray
    mask: np.ndarray
    dropped_behind: int = 0
    dropped_outside: int = 0

    def __post_init__(self):
        if self.rgb.shape[0] != 3 or self.rgb.shape[1:] != self.mask.shape:
            raise ValueError(
                f"rgb {self.rgb.shape} and mask {self.mask.shape} are inconsistent")


@dataclass(frozen=True)
class StereoConvention:
    """Sign convention for rectified-stereo warping.

    The default (+1) is the standard arrangement: right camera displaced
    towards +x, so reconstructing the left view samples the right image at
    ``x - d``.
    """
    right_of_left: int = 1


def disparity_to_depth(disp: np.ndarray, cam: CameraModel,
                       d_floor: float = 0.5) -> Tuple[np.ndarray, int]:
    """Z = fx * B / d, with disparities clamped to a positive floor.

    Returns the depth map in meters and the number of clamped pixels.
    """
    if d_floor <= 0:
        raise ValueError("disparity floor must be positive")
    values = disp.values if isinstance(disp, DisparityMap) else np.asarray(disp)
    clamped = int(np.count_nonzero(values < d_floor))
    safe = np.maximum(values, d_floor)
    return cam.fx * cam.baseline / safe, clamped


def bilinear_sample(img: Tensor, grid: Tensor) -> Tensor:
    """Differentiable bilinear sampling of (C, H, W) at absolute coordinates.

    ``grid`` is (2, H', W') holding source (x, y) per target pixel.
    Out-of-bounds coordinates clamp to the border; gradients flow into both
    the image and the grid (zero grid-gradient where a coordinate clamped).
    """
    if img.ndim != 3:
        raise ValueError(f"img must be (C, H, W), got {img.shape}")
    if grid.ndim != 3 or grid.shape[0] != 2:
        raise ValueError(f"grid must be (2, H, W), got {grid.shape}")
    c, h, w = img.shape
    if h < 2 or w < 2:
        raise ValueError(f"bilinear_sample needs at least 2x2 images, got {img.shape}")
    gx_raw, gy_raw = grid.data[0], grid.data[1]
    inb_x = (gx_raw >= 0) & (gx_raw <= w - 1)
    inb_y = (gy_raw >= 0) & (gy_raw <= h - 1)
    gx = np.clip(gx_raw, 0, w - 1)
    gy = np.clip(gy_raw, 0, h - 1)
    x0 = np.minimum(np.floor(gx), w - 2).astype(np.intp)
    y0 = np.minimum(np.floor(gy), h - 2).astype(np.intp)
    x1 = x0 + 1
    y1 = y0 + 1
    wx = gx - x0
    wy = gy - y0

    v00 = img.data[:, y0, x0]
    v01 = img.data[:, y0, x1]
    v10 = img.data[:, y1, x0]
    v11 = img.data[:, y1, x1]
    top = v00 * (1 - wx) + v01 * wx
    bot = v10 * (1 - wx) + v11 * wx
    out = top * (1 - wy) + bot * wy

    def backward(g):
        if img.requires_grad:
            dimg = np.zeros_like(img.data)
            flat = dimg.reshape(c, -1)
            g00 = g * ((1 - wx) * (1 - wy))
            g01 = g * (wx * (1 - wy))
            g10 = g * ((1 - wx) * wy)
            g11 = g * (wx * wy)
            i00 = (y0 * w + x0).ravel()
            i01 = (y0 * w + x1).ravel()
            i10 = (y1 * w + x0).ravel()
            i11 = (y1 * w + x1).ravel()
            for ch in range(c):
                np.add.at(flat[ch], i00, g00[ch].ravel())
                np.add.at(flat[ch], i01, g01[ch].ravel())
                np.add.at(flat[ch], i10, g10[ch].ravel())
                np.add.at(flat[ch], i11, g11[ch].ravel())
            img._accumulate(dimg)
        if grid.requires_grad:
            dx = ((v01 - v00) * (1 - wy) + (v11 - v10) * wy) * g
            dy = ((v10 - v00) * (1 - wx) + (v11 - v01) * wx) * g
            dgrid = np.stack([dx.sum(axis=0) * inb_x, dy.sum(axis=0) * inb_y])
            grid._accumulate(dgrid)

    return make_op(np.ascontiguousarray(out), (img, grid), backward)


def _base_grid(h: int, w: int, dtype) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.meshgrid(np.arange(h, dtype=dtype), np.arange(w, dtype=dtype),
                         indexing="ij")
    return xs, ys


def warp_stereo(x_other: Tensor, disp: Tensor, direction: str,
                convention: StereoConvention = StereoConvention()) -> Tuple[Tensor, np.ndarray]:
    """Backward-warp the other stereo image onto this view's pixel grid.

    direction "left" reconstructs the left view by sampling ``x_other`` (the
    right image) at ``x - d``; "right" samples the left image at ``x + d``.
    Accepts (C, H, W) images or (H, W) scalar fields (e.g. disparity maps).
    Returns the warped field and a boolean mask of pixels whose sample
    coordinate stayed in bounds.
    """
    if direction not in ("left", "right"):
        raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")
    squeeze = x_other.ndim == 2
    img = x_other.reshape(1, *x_other.shape) if squeeze else x_other
    if disp.ndim != 2:
        raise ValueError(f"disparity must be (H, W), got {disp.shape}")
    h, w = disp.shape
    if img.shape[1:] != (h, w):
        raise ValueError(f"image {x_other.shape} does not match disparity {disp.shape}")
    sign = -convention.right_of_left if direction == "left" else convention.right_of_left
    xs, ys = _base_grid(h, w, img.dtype)
    gx = Tensor(xs) + disp * float(sign)
    grid = concat([gx.reshape(1, h, w), Tensor(ys).reshape(1, h, w)], axis=0)
    out = bilinear_sample(img, grid)
    valid = (grid.data[0] >= 0) & (grid.data[0] <= w - 1)
    if squeeze:
        out = out.reshape(h, w)
    return out, valid


def forward_map(src_rgb: np.ndarray, depth: np.ndarray, cam: CameraModel,
                pose: Pose) -> WarpedView:
    """Project source pixels into the target camera (Eq.-style forward warp).

    Each source pixel is back-projected with its depth, transformed by the
    relative pose, re-projected, and written at the floor of its target
    coordinates.  Collisions keep the smallest target-frame depth; pixels
    behind the camera or landing outside the frame are dropped and counted.
    """
    src_rgb = np.asarray(src_rgb)
    depth = np.asarray(depth)
    if src_rgb.ndim != 3 or src_rgb.shape[0] != 3:
        raise ValueError(f"src_rgb must be (3, H, W), got {src_rgb.shape}")
    if depth.shape != src_rgb.shape[1:]:
        raise ValueError(f"depth {depth.shape} does not match image {src_rgb.shape}")
    if np.any(depth <= 0):
        raise ValueError("forward_map requires strictly positive depth")
    h, w = depth.shape
    xs, ys = _base_grid(h, w, np.float64)
    rays = np.stack([(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy,
                     np.ones_like(xs)])
    pts = rays * depth
    pts_t = pose.apply(pts)
    z = pts_t[2]
    front = z > 0
    dropped_behind = int(np.count_nonzero(~front))
    zsafe = np.where(front, z, 1.0)
    # the 1e-9 nudge keeps exact-integer projections (identity pose, integer
    # shifts) from flooring one pixel low due to last-ulp roundoff
    xt = np.floor(cam.fx * pts_t[0] / zsafe + cam.cx + 1e-9).astype(np.int64)
    yt = np.floor(cam.fy * pts_t[1] / zsafe + cam.cy + 1e-9).astype(np.int64)
    in_frame = front & (xt >= 0) & (xt < w) & (yt >= 0) & (yt < h)
    dropped_outside = int(np.count_nonzero(front & ~in_frame))

    rgb = np.zeros_like(src_rgb)
    mask = np.zeros((h, w), dtype=src_rgb.dtype)
    flat_src = src_rgb.reshape(3, -1)[:, in_frame.ravel()]
    flat_tgt = (yt[in_frame] * w + xt[in_frame])
    zv = z[in_frame]
    # Nearest depth must win: write far-to-near so later (nearer) writes stick.
    order = np.argsort(-zv, kind="stable")
    tgt = flat_tgt[order]
    rgb.reshape(3, -1)[:, tgt] = flat_src[:, order]
    mask.reshape(-1)[tgt] = 1
    return WarpedView(rgb=rgb, mask=mask, dropped_behind=dropped_behind,
                      dropped_outside=dropped_outside)


def warp_reference_set(views: Sequence[np.ndarray], depths: Sequence[np.ndarray],
                       cam: CameraModel, poses: Sequence[Pose]) -> List[WarpedView]:
    """Forward-map every reference view to the target camera, order preserved."""
    if not (len(views) == len(depths) == len(poses)):
        raise ValueError("views, depths and poses must have equal length")
    if len(views) == 0:
        raise ValueError("need at least one reference view")
    return [forward_map(v, d, cam, p) for v, d, p in zip(views, depths, poses)]

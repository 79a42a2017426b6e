"""KITTI-odometry-format sequences: loader, and writer for synthetic exports.

Expected layout under a dataset root:

    sequences/<id>/image_2/%06d.png     left color frames
    sequences/<id>/image_3/%06d.png     right color frames
    sequences/<id>/calib.txt            "P2:"/"P3:" projection rows (12 floats)
    sequences/<id>/depth_2/%06d.png     optional 16-bit ground-truth depth
                                        (meters * 256), written for synthetic data
    poses/<id>.txt                      one 3x4 row-major pose per frame
                                        (left camera to world)

Intrinsics come from P2; the stereo baseline is recovered from the
projection offsets as (P2[0,3] - P3[0,3]) / fx, which reduces to
-P3[0,3]/fx when the left camera carries no offset (as in our exports).
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from ..geometry import CameraModel, Pose
from .sequences import StereoFrame

DEPTH_PNG_SCALE = 256.0


class KittiFormatError(ValueError):
    pass


def _parse_float_row(text: str, count: int, where: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != count:
        raise KittiFormatError(f"{where}: expected {count} values, found {len(parts)}")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise KittiFormatError(f"{where}: {exc}") from exc


def parse_calib(path: Path) -> Dict[str, np.ndarray]:
    if not path.exists():
        raise FileNotFoundError(f"calibration file not found: {path}")
    entries: Dict[str, np.ndarray] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if ":" not in line:
            raise KittiFormatError(f"{path}:{lineno}: missing 'NAME:' prefix")
        name, _, rest = line.partition(":")
        entries[name.strip()] = _parse_float_row(rest, 12, f"{path}:{lineno}").reshape(3, 4)
    for required in ("P2", "P3"):
        if required not in entries:
            raise KittiFormatError(f"{path}: missing projection matrix '{required}'")
    return entries


def camera_from_calib(entries: Dict[str, np.ndarray]) -> CameraModel:
    p2, p3 = entries["P2"], entries["P3"]
    fx, fy = p2[0, 0], p2[1, 1]
    baseline = (p2[0, 3] - p3[0, 3]) / fx
    return CameraModel(fx=fx, fy=fy, cx=p2[0, 2], cy=p2[1, 2], baseline=baseline)


def parse_poses(path: Path) -> List[Pose]:
    if not path.exists():
        raise FileNotFoundError(f"poses file not found: {path}")
    poses = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        row = _parse_float_row(line, 12, f"{path}:{lineno}").reshape(3, 4)
        try:
            poses.append(Pose(row[:, :3], row[:, 3]))
        except ValueError as exc:
            raise KittiFormatError(f"{path}:{lineno}: {exc}") from exc
    return poses


def _load_image(path: Path) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _center_crop(arr: np.ndarray, crop_h: int, crop_w: int) -> np.ndarray:
    h, w = arr.shape[-2:]
    if crop_h > h or crop_w > w:
        raise ValueError(f"crop ({crop_h}, {crop_w}) exceeds frame size ({h}, {w})")
    top = (h - crop_h) // 2
    left = (w - crop_w) // 2
    return np.ascontiguousarray(arr[..., top:top + crop_h, left:left + crop_w])


class KittiSequence:
    """Lazy frame access over one sequence directory."""

    def __init__(self, root, seq_id: str, crop: Optional[tuple] = None):
        self.root = Path(root)
        self.seq_id = seq_id
        self.crop = crop
        seq_dir = self.root / "sequences" / seq_id
        if not seq_dir.is_dir():
            raise FileNotFoundError(f"sequence directory not found: {seq_dir}")
        self.left_dir = seq_dir / "image_2"
        self.right_dir = seq_dir / "image_3"
        self.depth_dir = seq_dir / "depth_2"
        for d in (self.left_dir, self.right_dir):
            if not d.is_dir():
                raise FileNotFoundError(f"image directory not found: {d}")
        self.calib = parse_calib(seq_dir / "calib.txt")
        self._cam_full = camera_from_calib(self.calib)
        self.poses = parse_poses(self.root / "poses" / f"{seq_id}.txt")
        self.left_files = sorted(self.left_dir.glob("*.png"))
        right_files = sorted(self.right_dir.glob("*.png"))
        if len(self.left_files) != len(right_files):
            raise KittiFormatError(
                f"{seq_dir}: {len(self.left_files)} left frames but "
                f"{len(right_files)} right frames")
        if len(self.poses) != len(self.left_files):
            raise KittiFormatError(
                f"{seq_dir}: {len(self.left_files)} frames but {len(self.poses)} poses")
        if not self.left_files:
            raise KittiFormatError(f"{seq_dir}: no frames found")

    @property
    def cam(self) -> CameraModel:
        if self.crop is None:
            return self._cam_full
        with Image.open(self.left_files[0]) as img:
            w, h = img.size
        ch, cw = self.crop
        c = self._cam_full
        return CameraModel(fx=c.fx, fy=c.fy, cx=c.cx - (w - cw) // 2,
                           cy=c.cy - (h - ch) // 2, baseline=c.baseline)

    def __len__(self) -> int:
        return len(self.left_files)

    def _maybe_crop(self, arr: np.ndarray) -> np.ndarray:
        if self.crop is None:
            return arr
        return _center_crop(arr, *self.crop)

    def frame(self, i: int) -> StereoFrame:
        if not 0 <= i < len(self):
            raise IndexError(f"frame {i} out of range [0, {len(self)})")
        left = self._maybe_crop(_load_image(self.left_files[i]))
        right = self._maybe_crop(_load_image(self.right_dir / self.left_files[i].name))
        return StereoFrame(index=i, left=left, right=right, pose=self.poses[i])

    def pose(self, i: int) -> Pose:
        return self.poses[i]

    def has_gt_depth(self) -> bool:
        return self.depth_dir.is_dir()

    def gt_depth(self, i: int) -> np.ndarray:
        path = self.depth_dir / self.left_files[i].name
        if not path.exists():
            raise FileNotFoundError(f"ground-truth depth not found: {path}")
        with Image.open(path) as img:
            arr = np.asarray(img, dtype=np.float64) / DEPTH_PNG_SCALE
        return self._maybe_crop(arr)


def load_kitti_sequence(root, seq_id: str, crop: Optional[tuple] = None) -> KittiSequence:
    return KittiSequence(root, seq_id, crop=crop)


def discover_sequences(root) -> List[str]:
    seq_root = Path(root) / "sequences"
    if not seq_root.is_dir():
        raise FileNotFoundError(f"no sequences/ directory under {root}")
    return sorted(p.name for p in seq_root.iterdir() if p.is_dir())


def _save_png(path: Path, rgb: np.ndarray):
    arr = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)


def _save_depth_png(path: Path, depth: np.ndarray):
    q = np.round(depth * DEPTH_PNG_SCALE)
    if q.max() > 65535:
        raise ValueError("depth exceeds 16-bit PNG range (max 255.996 m)")
    Image.fromarray(q.astype(np.uint16), mode="I;16").save(path)


def export_kitti_layout(scenes: Sequence, root, with_depth: bool = True) -> List[str]:
    """Write synthetic scenes as KITTI-layout sequences; returns sequence ids."""
    root = Path(root)
    (root / "poses").mkdir(parents=True, exist_ok=True)
    ids = []
    for si, scene in enumerate(scenes):
        seq_id = f"{si:02d}"
        ids.append(seq_id)
        seq_dir = root / "sequences" / seq_id
        (seq_dir / "image_2").mkdir(parents=True, exist_ok=True)
        (seq_dir / "image_3").mkdir(parents=True, exist_ok=True)
        if with_depth:
            (seq_dir / "depth_2").mkdir(parents=True, exist_ok=True)
        cam = scene.cam
        p2 = np.zeros((3, 4))
        p2[:3, :3] = cam.K
        p3 = p2.copy()
        p3[0, 3] = -cam.fx * cam.baseline
        lines = []
        for name, mat in (("P0", p2), ("P1", p3), ("P2", p2), ("P3", p3)):
            values = " ".join(f"{v:.12e}" for v in mat.reshape(-1))
            lines.append(f"{name}: {values}")
        (seq_dir / "calib.txt").write_text("\n".join(lines) + "\n")
        pose_lines = []
        for i in range(len(scene)):
            fr = scene.frame(i)
            _save_png(seq_dir / "image_2" / f"{i:06d}.png", fr.left)
            _save_png(seq_dir / "image_3" / f"{i:06d}.png", fr.right)
            if with_depth:
                _save_depth_png(seq_dir / "depth_2" / f"{i:06d}.png", scene.gt_depth(i))
            pose = fr.pose
            row = np.hstack([pose.R, pose.T.reshape(3, 1)]).reshape(-1)
            pose_lines.append(" ".join(f"{v:.12e}" for v in row))
        (root / "poses" / f"{seq_id}.txt").write_text("\n".join(pose_lines) + "\n")
    return ids

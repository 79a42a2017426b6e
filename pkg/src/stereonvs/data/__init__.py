from .evaluation import EvalReport, evaluate
from .kitti import KittiSequence, export_kitti_layout, load_kitti_sequence
from .sequences import (SequenceSample, StereoFrame, StereoPairProvider,
                        WindowProvider, eligible_centers, sample_window)
from .synthetic import SceneConfig, SyntheticScene, generate_scene, generate_scenes

__all__ = [
    "EvalReport", "evaluate",
    "KittiSequence", "export_kitti_layout", "load_kitti_sequence",
    "SequenceSample", "StereoFrame", "StereoPairProvider", "WindowProvider",
    "eligible_centers", "sample_window",
    "SceneConfig", "SyntheticScene", "generate_scene", "generate_scenes",
]

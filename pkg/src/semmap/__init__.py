"""Semantic sparse voxel mapping from RGB-D frames.

Subpackages by responsibility: :mod:`semmap.geom` (rigid transforms and
the camera model), :mod:`semmap.pnp` (reprojection-error pose
refinement), :mod:`semmap.semantic` (label distributions and fusion),
:mod:`semmap.octree` (the probabilistic semantic occupancy map),
:mod:`semmap.ingest` (datasets, label rasters, synthetic scenes),
:mod:`semmap.evaltraj` (ATE/RPE trajectory metrics), and
:mod:`semmap.cli` (the ``semmap`` command line).
"""

__version__ = "0.1.0"

from .geom import AxisRemap, CameraIntrinsics, EulerAngles, Pose, compose, invert
from .semantic import FusionConfig, LabelTable, SemanticDistribution, SemanticPoint, fuse
from .octree import MapConfig, SemanticOctree, VoxelState
from .ingest import LabeledFrame, SceneSpec, Trajectory
from .evaltraj import AteReport, RpeReport, ate, rpe
from .pnp import Correspondence, RefineConfig, RefineResult, refine_pose

__all__ = [
    "AxisRemap",
    "AteReport",
    "CameraIntrinsics",
    "Correspondence",
    "EulerAngles",
    "FusionConfig",
    "LabelTable",
    "LabeledFrame",
    "MapConfig",
    "Pose",
    "RefineConfig",
    "RefineResult",
    "RpeReport",
    "SceneSpec",
    "SemanticDistribution",
    "SemanticOctree",
    "SemanticPoint",
    "Trajectory",
    "VoxelState",
    "ate",
    "compose",
    "fuse",
    "invert",
    "refine_pose",
    "rpe",
]

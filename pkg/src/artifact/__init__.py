"""Photometrically monitored ensemble distillation for depth completion."""
__version__ = "0.1.0"

from .distill import Teacher, TeacherSet, distill, ensemble_select, stereo_fuse
from .geometry import Intrinsics, PoseSE3, warp_image
from .grid import DepthMap, ImageBuf, Pyramid, build_pyramid
from .kernels import BACKEND
from .metrics import MetricReport, evaluate

__all__ = [
    "BACKEND", "DepthMap", "ImageBuf", "Intrinsics", "MetricReport", "PoseSE3", "Pyramid", "Teacher",
    "TeacherSet", "build_pyramid", "distill", "ensemble_select", "evaluate", "stereo_fuse", "warp_image",
]

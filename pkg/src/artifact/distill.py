"""Monitored ensemble distillation.

Every teacher depth map is scored by how well it reconstructs the target
image from the source views. The distilled depth takes, per pixel, the
completion teacher with the smallest error. A stereo teacher can then replace
pixels where its own error is strictly lower.
"""
from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics, warp_image
from .grid import DepthMap, ImageBuf
from .losses import DEFAULT_W_PH, DEFAULT_W_ST, combined_map, masked_argmin, min_reprojection

KINDS = ("completion", "stereo")
NONE = -1
DEFAULT_SIGMA = 0.1
# Reprojection errors are snapped to this grid. Differences below it are
# floating-point noise from projection round-off, and snapping turns them into
# exact ties that the lowest-index rule resolves.
ERROR_QUANTUM = 1e-12


@dataclass(frozen=True)
class Teacher:
    name: str
    depth: DepthMap
    kind: str = "completion"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"teacher kind must be one of {KINDS}, got {self.kind!r}")


class TeacherSet:
    def __init__(self, entries):
        entries = [e if isinstance(e, Teacher) else Teacher(*e) for e in entries]
        if not entries:
            raise ValueError("teacher set is empty")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError(f"teacher names are not unique: {names}")
        shape = entries[0].depth.shape
        for e in entries:
            if e.depth.shape != shape:
                raise ValueError(f"teacher {e.name!r} has shape {e.depth.shape}, expected {shape}")
        self.entries = tuple(entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def shape(self):
        return self.entries[0].depth.shape

    @property
    def names(self):
        return [e.name for e in self.entries]

    def indices(self, kind):
        return [i for i, e in enumerate(self.entries) if e.kind == kind]


@dataclass(frozen=True, eq=False)
class ErrorMap:
    teacher: str
    value: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.value, dtype=np.float64)
        m = np.asarray(self.valid, dtype=bool)
        if v.shape != m.shape:
            raise ValueError("error value and mask shapes differ")
        v = np.where(m, v, 0.0)
        if not np.all(np.isfinite(v)) or (v < 0).any():
            raise ValueError("errors must be finite and non-negative")
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "valid", m)

    @property
    def shape(self):
        return self.value.shape


@dataclass(frozen=True, eq=False)
class DistilledDepth:
    depth: DepthMap
    confidence: np.ndarray
    selection: np.ndarray  # teacher index into the TeacherSet, NONE where unselected
    error: ErrorMap  # error of the selected teacher at each selected pixel

    @property
    def shape(self):
        return self.depth.shape


def confidence_from_error(err, sigma=DEFAULT_SIGMA):
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return np.exp(-np.asarray(err) / sigma)


def teacher_error_map(depth: DepthMap, name, target: ImageBuf, sources, poses, K: Intrinsics,
                      w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST) -> ErrorMap:
    maps = []
    for src, pose in zip(sources, poses):
        recon, valid = warp_image(src, depth, K, pose)
        maps.append(combined_map(target, recon, valid, w_ph, w_st))
    best = min_reprojection(maps)
    return ErrorMap(name, np.round(best.value / ERROR_QUANTUM) * ERROR_QUANTUM, best.valid)


def teacher_error_maps(teachers: TeacherSet, target: ImageBuf, sources, poses, K: Intrinsics,
                       w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST):
    """One reprojection error map per teacher (combined loss, minimum over sources)."""
    if len(sources) == 0:
        raise ValueError("need at least one source view")
    if len(sources) != len(poses):
        raise ValueError(f"{len(sources)} sources but {len(poses)} poses")
    if teachers.shape != target.shape:
        raise ValueError(f"teacher maps {teachers.shape} do not match target {target.shape}")
    for s in sources:
        if s.shape != target.shape:
            raise ValueError(f"source {s.shape} does not match target {target.shape}")
    return [teacher_error_map(t.depth, t.name, target, sources, poses, K, w_ph, w_st) for t in teachers]


def _errors_for(teachers, errors, kind):
    idx = teachers.indices(kind)
    if len(errors) == len(teachers):
        return idx, [errors[i] for i in idx]
    if len(errors) == len(idx):
        return idx, list(errors)
    raise ValueError(f"{len(errors)} error maps for {len(idx)} {kind} teachers ({len(teachers)} total)")


def ensemble_select(teachers: TeacherSet, errors, sigma=DEFAULT_SIGMA) -> DistilledDepth:
    """Per pixel, take the completion teacher with the lowest error.

    ``errors`` may be aligned with all teachers or with the completion
    teachers only. A teacher is a candidate at a pixel only if both its depth
    and its error are valid there. Ties go to the lowest index.
    """
    idx, errs = _errors_for(teachers, errors, "completion")
    if not idx:
        raise ValueError("no completion teachers to select from")
    for e in errs:
        if e.shape != teachers.shape:
            raise ValueError(f"error map {e.teacher!r} has shape {e.shape}, expected {teachers.shape}")
    vals = np.stack([e.value for e in errs])
    cand = np.stack([e.valid & teachers[i].depth.valid for i, e in zip(idx, errs)])
    local, anyv = masked_argmin(vals, cand)
    depths = np.stack([teachers[i].depth.depth for i in idx])
    depth = np.where(anyv, np.take_along_axis(depths, local[None], axis=0)[0], 0.0)
    err = np.where(anyv, np.take_along_axis(vals, local[None], axis=0)[0], 0.0)
    selection = np.where(anyv, np.asarray(idx)[local], NONE)
    conf = np.where(anyv, confidence_from_error(err, sigma), 0.0)
    return DistilledDepth(DepthMap(depth, anyv), conf, selection, ErrorMap("distilled", err, anyv))


def stereo_fuse(distilled: DistilledDepth, distilled_errors: ErrorMap, stereo: DepthMap,
                stereo_error: ErrorMap, stereo_index, sigma=DEFAULT_SIGMA) -> DistilledDepth:
    """Replace distilled pixels with the stereo depth where its error is strictly lower.

    Pixels with no distilled selection count as infinite error, so a valid
    stereo estimate fills them.
    """
    shape = distilled.shape
    for name, a in (("distilled errors", distilled_errors), ("stereo", stereo), ("stereo error", stereo_error)):
        if a.shape != shape:
            raise ValueError(f"{name} shape {a.shape} != distilled shape {shape}")
    d_err = np.where(distilled_errors.valid, distilled_errors.value, np.inf)
    s_ok = stereo.valid & stereo_error.valid
    take = s_ok & (stereo_error.value < d_err)
    depth = np.where(take, stereo.depth, distilled.depth.depth)
    valid = distilled.depth.valid | take
    err = np.where(take, stereo_error.value, distilled.error.value)
    selection = np.where(take, stereo_index, distilled.selection)
    conf = np.where(take, confidence_from_error(stereo_error.value, sigma), distilled.confidence)
    return DistilledDepth(DepthMap(depth, valid), conf, selection, ErrorMap("distilled", err, valid))


def distill(teachers: TeacherSet, target: ImageBuf, sources, poses, K: Intrinsics, w_ph=DEFAULT_W_PH,
            w_st=DEFAULT_W_ST, sigma=DEFAULT_SIGMA):
    """Full pipeline: error maps, completion-teacher selection, then stereo fusion.

    Returns ``(distilled, error_maps)`` with one error map per teacher.
    """
    errors = teacher_error_maps(teachers, target, sources, poses, K, w_ph, w_st)
    result = ensemble_select(teachers, errors, sigma)
    for i in teachers.indices("stereo"):
        result = stereo_fuse(result, result.error, teachers[i].depth, errors[i], i, sigma)
    return result, errors


def selection_histogram(distilled: DistilledDepth, teachers: TeacherSet):
    """Fraction of selected pixels taken from each teacher, in teacher order."""
    sel = distilled.selection
    picked = sel[sel != NONE]
    if picked.size and (picked.min() < 0 or picked.max() >= len(teachers)):
        raise ValueError("selection index out of range")
    counts = np.bincount(picked, minlength=len(teachers)).astype(np.float64)
    total = counts.sum()
    fractions = counts / total if total > 0 else counts
    return [(t.name, float(f)) for t, f in zip(teachers, fractions)]

"""Readers and writers for depth/image rasters, calibration, poses, scene
manifests and AS2D weight files.

Depth PNGs follow the KITTI convention: 16-bit grayscale, ``depth_m =
stored / 256``, stored 0 = invalid. That quantisation is the only lossy step;
PFM files round-trip float32 data bit for bit.
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Intrinsics, PoseSE3, nearest_rotation
from .grid import DepthMap, ImageBuf

DEPTH_SCALE = 256.0
MAX_STORED = 65535
POSE_CONVENTION = "T_tgt_to_src: p_src = R @ p_tgt + t"
ORTHONORMAL_TOL = 1e-6
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class FormatError(ValueError):
    """Base class for every file-format failure."""


class UnreadableFileError(FormatError):
    pass


class BitDepthError(FormatError):
    pass


class ChannelCountError(FormatError):
    pass


class PFMHeaderError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class ElementCountError(FormatError):
    pass


class NotARotationError(FormatError):
    pass


class ManifestSchemaError(FormatError):
    pass


class MissingFileError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# PNG


def png_header(data):
    """``(width, height, bit_depth, color_type)`` from the IHDR chunk."""
    if len(data) < 33 or data[:8] != _PNG_SIGNATURE or data[12:16] != b"IHDR":
        raise UnreadableFileError("not a PNG file")
    width, height, bit_depth, color_type = struct.unpack(">IIBB", data[16:26])
    return width, height, bit_depth, color_type


def _decode_png(path, data):
    try:
        with Image.open(path) as im:
            im.load()
            return np.array(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise UnreadableFileError(f"cannot decode {path}: {exc}") from None


def read_depth_png16(path) -> DepthMap:
    data = _read_bytes(path)
    _, _, bit_depth, color_type = png_header(data)
    if color_type != 0:
        raise ChannelCountError(f"{path}: depth PNG must be single-channel grayscale (color type {color_type})")
    if bit_depth != 16:
        raise BitDepthError(f"{path}: depth PNG must be 16-bit, found {bit_depth}-bit")
    stored = _decode_png(path, data).astype(np.uint16)
    valid = stored > 0
    return DepthMap(stored.astype(np.float64) / DEPTH_SCALE, valid)


def quantize_depth(depth: DepthMap):
    """Depth map -> uint16 array on the 1/256 m grid. Raises if a valid depth is not representable."""
    q = np.rint(depth.depth * DEPTH_SCALE)
    if (q[depth.valid] > MAX_STORED).any():
        raise ValueError(f"depth above {MAX_STORED / DEPTH_SCALE:.3f} m cannot be stored in a 16-bit PNG")
    if (q[depth.valid] < 1).any():
        raise ValueError(f"valid depth below {0.5 / DEPTH_SCALE} m would round to the invalid sentinel")
    return np.where(depth.valid, q, 0).astype(np.uint16)


def write_depth_png16(depth: DepthMap, path):
    Image.fromarray(quantize_depth(depth)).save(path, format="PNG")


def read_image(path) -> ImageBuf:
    """PNG (8/16-bit, gray or RGB; alpha dropped) or PFM image with values in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return ImageBuf(read_pfm(path).astype(np.float64))
    data = _read_bytes(path)
    _, _, bit_depth, color_type = png_header(data)
    if bit_depth not in (8, 16):
        raise BitDepthError(f"{path}: unsupported image bit depth {bit_depth}")
    arr = _decode_png(path, data)
    if arr.ndim == 3 and arr.shape[2] in (2, 4):
        arr = arr[..., :-1]
    scale = 65535.0 if bit_depth == 16 else 255.0
    return ImageBuf(arr.astype(np.float64) / scale)


def write_image_png8(img: ImageBuf, path):
    a = np.rint(img.data * 255.0).astype(np.uint8)
    Image.fromarray(a[..., 0] if img.channels == 1 else a).save(path, format="PNG")


def write_mask_png(mask, path):
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path, format="PNG")


# ---------------------------------------------------------------------------
# PFM


def _header_tokens(data):
    """First three whitespace-delimited header tokens plus the payload offset."""
    tokens, pos = [], 0
    n = len(data)
    while len(tokens) < 4 and pos < n:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            break
        tokens.append(data[start:pos])
        if len(tokens) == 4:
            break
    if len(tokens) < 4 or pos >= n:
        raise PFMHeaderError("PFM header is incomplete")
    # exactly one whitespace byte separates the scale from the raster
    return tokens, pos + 1


def read_pfm(path):
    """Read a PFM file into a float32 array, top row first ((H, W) or (H, W, 3))."""
    data = _read_bytes(path)
    tokens, offset = _header_tokens(data)
    kind = tokens[0]
    if kind == b"PF":
        channels = 3
    elif kind == b"Pf":
        channels = 1
    else:
        raise PFMHeaderError(f"{path}: bad PFM magic {kind[:8]!r}")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise PFMHeaderError(f"{path}: malformed PFM dimensions or scale") from None
    if width <= 0 or height <= 0 or scale == 0 or not np.isfinite(scale):
        raise PFMHeaderError(f"{path}: invalid PFM dimensions {width}x{height} or scale {scale}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * channels
    payload = data[offset:offset + count * 4]
    if len(payload) < count * 4:
        raise TruncatedPayloadError(f"{path}: expected {count * 4} payload bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.ascontiguousarray(arr.reshape(shape)[::-1])


def write_pfm(obj, path, little_endian=True):
    """Write an array, ImageBuf or DepthMap as PFM (float32, bottom row first)."""
    if isinstance(obj, ImageBuf):
        arr = obj.data[..., 0] if obj.channels == 1 else obj.data
    elif isinstance(obj, DepthMap):
        arr = obj.depth
    else:
        arr = np.asarray(obj)
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM holds HxW or HxWx3 data, got shape {arr.shape}")
    h, w = arr.shape[:2]
    dtype = "<f4" if little_endian else ">f4"
    scale = b"-1.0" if little_endian else b"1.0"
    body = np.ascontiguousarray(arr[::-1], dtype=dtype).tobytes()
    Path(path).write_bytes(magic + b"\n" + f"{w} {h}".encode() + b"\n" + scale + b"\n" + body)


def read_depth(path) -> DepthMap:
    """Depth from a 16-bit PNG or a PFM (non-positive or non-finite = invalid)."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        arr = read_pfm(path)
        if arr.ndim != 2:
            raise ChannelCountError(f"{path}: depth PFM must be single-channel")
        return DepthMap(arr.astype(np.float64))
    return read_depth_png16(path)


def write_depth(depth: DepthMap, path):
    if Path(path).suffix.lower() == ".pfm":
        write_pfm(depth, path)
    else:
        write_depth_png16(depth, path)


def raster_size(path):
    """``(height, width)`` from a PNG or PFM header without decoding the raster."""
    path = Path(path)
    data = _read_bytes(path)
    if data[:8] == _PNG_SIGNATURE:
        w, h, _, _ = png_header(data)
        return h, w
    tokens, _ = _header_tokens(data[:256])
    try:
        return int(tokens[2]), int(tokens[1])
    except ValueError:
        raise PFMHeaderError(f"{path}: malformed PFM dimensions") from None


# ---------------------------------------------------------------------------
# calibration and poses


def _numbers(text, path):
    try:
        return np.array([float(t) for t in text.split()], dtype=np.float64)
    except ValueError:
        raise FormatError(f"{path}: non-numeric entry") from None


def parse_intrinsics_text(text, path="<text>") -> Intrinsics:
    vals = _numbers(text, path)
    if vals.size != 9:
        raise ElementCountError(f"{path}: intrinsics need 9 numbers (3x3), found {vals.size}")
    k = vals.reshape(3, 3)
    if k[0, 1] != 0 or k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0 or k[2, 2] != 1:
        raise FormatError(f"{path}: expected a zero-skew pinhole matrix with last row 0 0 1")
    try:
        return Intrinsics(k[0, 0], k[1, 1], k[0, 2], k[1, 2])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def parse_intrinsics(path) -> Intrinsics:
    return parse_intrinsics_text(_read_bytes(path).decode("utf-8", "replace"), path)


def pose_from_matrix(m, source="<matrix>") -> PoseSE3:
    m = np.asarray(m, dtype=np.float64)
    if m.size != 16:
        raise ElementCountError(f"{source}: pose needs 16 numbers (4x4), found {m.size}")
    m = m.reshape(4, 4)
    if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], rtol=0, atol=ORTHONORMAL_TOL):
        raise FormatError(f"{source}: last pose row must be 0 0 0 1")
    r = m[:3, :3]
    if np.abs(r.T @ r - np.eye(3)).max() > ORTHONORMAL_TOL:
        raise NotARotationError(f"{source}: rotation block is not orthonormal within {ORTHONORMAL_TOL}")
    if np.linalg.det(r) < 0:
        raise NotARotationError(f"{source}: rotation block is a reflection (det = -1)")
    return PoseSE3(nearest_rotation(r), m[:3, 3])


def parse_pose_text(text, path="<text>") -> PoseSE3:
    return pose_from_matrix(_numbers(text, path), path)


def parse_pose(path) -> PoseSE3:
    return parse_pose_text(_read_bytes(path).decode("utf-8", "replace"), path)


def format_pose(pose: PoseSE3):
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in pose.matrix) + "\n"


def format_intrinsics(K: Intrinsics):
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in K.matrix) + "\n"


# ---------------------------------------------------------------------------
# scene manifest


@dataclass(frozen=True)
class FrameEntry:
    image: Path
    sparse_depth: Path = None
    pose: PoseSE3 = None  # target camera -> this frame


@dataclass(frozen=True)
class TeacherEntry:
    name: str
    kind: str
    depth: Path


@dataclass(frozen=True)
class SceneManifest:
    path: Path
    frames: tuple
    intrinsics: Intrinsics
    target: int
    teachers: tuple
    ground_truth: Path = None
    size: tuple = field(default=None)

    @property
    def source_indices(self):
        return [i for i in range(len(self.frames)) if i != self.target]


def _req(obj, key, kind, where):
    if key not in obj:
        raise ManifestSchemaError(f"{where}: missing required key {key!r}")
    val = obj[key]
    if not isinstance(val, kind):
        raise ManifestSchemaError(f"{where}: {key!r} must be {getattr(kind, '__name__', kind)}")
    return val


def _resolve(base, rel, where):
    if not isinstance(rel, str) or not rel:
        raise ManifestSchemaError(f"{where}: path must be a non-empty string")
    p = (base / rel).resolve()
    if not p.is_file():
        raise MissingFileError(f"{where}: file not found: {rel}")
    return p


def load_manifest(path) -> SceneManifest:
    """Parse and validate a scene manifest (JSON); paths are relative to its directory.

    Schema::

        {
          "convention": "T_tgt_to_src: p_src = R @ p_tgt + t",
          "intrinsics": "K.txt" | {"fx": .., "fy": .., "cx": .., "cy": ..},
          "target": 0,
          "frames": [{"image": "...", "sparse_depth": "..." (optional),
                      "pose": "pose.txt" | [[4x4]] (optional for the target)}],
          "teachers": [{"name": "...", "kind": "completion" | "stereo", "depth": "..."}],
          "ground_truth": "..." (optional)
        }
    """
    path = Path(path).resolve()
    base = path.parent
    try:
        doc = json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestSchemaError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ManifestSchemaError(f"{path}: top level must be an object")
    conv = doc.get("convention", POSE_CONVENTION)
    if conv != POSE_CONVENTION:
        raise ManifestSchemaError(f"{path}: unsupported pose convention {conv!r}")

    intr = doc.get("intrinsics")
    if isinstance(intr, str):
        K = parse_intrinsics(_resolve(base, intr, "intrinsics"))
    elif isinstance(intr, dict):
        try:
            K = Intrinsics(float(intr["fx"]), float(intr["fy"]), float(intr["cx"]), float(intr["cy"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestSchemaError(f"intrinsics: {exc}") from None
    else:
        raise ManifestSchemaError("intrinsics: must be a file path or an object with fx, fy, cx, cy")

    raw_frames = _req(doc, "frames", list, "manifest")
    if not raw_frames:
        raise ManifestSchemaError("frames: at least one frame is required")
    target = doc.get("target", 0)
    if not isinstance(target, int) or isinstance(target, bool) or not 0 <= target < len(raw_frames):
        raise ManifestSchemaError(f"target: must be a frame index in 0..{len(raw_frames) - 1}")

    frames = []
    for i, fr in enumerate(raw_frames):
        where = f"frames[{i}]"
        if not isinstance(fr, dict):
            raise ManifestSchemaError(f"{where}: must be an object")
        image = _resolve(base, _req(fr, "image", str, where), where + ".image")
        sparse = fr.get("sparse_depth")
        sparse = _resolve(base, sparse, where + ".sparse_depth") if sparse is not None else None
        pose = fr.get("pose")
        if pose is None:
            if i != target:
                raise ManifestSchemaError(f"{where}: pose is required for non-target frames")
            pose = PoseSE3.identity()
        elif isinstance(pose, str):
            pose = parse_pose(_resolve(base, pose, where + ".pose"))
        elif isinstance(pose, list):
            pose = pose_from_matrix(pose, where + ".pose")
        else:
            raise ManifestSchemaError(f"{where}.pose: must be a file path or a 4x4 list")
        if i == target and (not np.allclose(pose.rotation, np.eye(3)) or np.any(pose.translation != 0)):
            raise ManifestSchemaError(f"{where}: the target frame's pose must be the identity")
        frames.append(FrameEntry(image, sparse, pose))

    raw_teachers = doc.get("teachers", [])
    if not isinstance(raw_teachers, list):
        raise ManifestSchemaError("teachers: must be a list")
    teachers, seen = [], set()
    for i, t in enumerate(raw_teachers):
        where = f"teachers[{i}]"
        if not isinstance(t, dict):
            raise ManifestSchemaError(f"{where}: must be an object")
        name = _req(t, "name", str, where)
        kind = t.get("kind", "completion")
        if kind not in ("completion", "stereo"):
            raise ManifestSchemaError(f"{where}.kind: must be 'completion' or 'stereo'")
        if name in seen:
            raise ManifestSchemaError(f"{where}: duplicate teacher name {name!r}")
        seen.add(name)
        teachers.append(TeacherEntry(name, kind, _resolve(base, _req(t, "depth", str, where), where + ".depth")))

    gt = doc.get("ground_truth")
    gt = _resolve(base, gt, "ground_truth") if gt is not None else None

    size = None
    rasters = [f.image for f in frames] + [f.sparse_depth for f in frames if f.sparse_depth]
    rasters += [t.depth for t in teachers] + ([gt] if gt else [])
    for p in rasters:
        hw = raster_size(p)
        if size is None:
            size = hw
        elif hw != size:
            raise DimensionMismatchError(f"{p.name} is {hw[0]}x{hw[1]}, expected {size[0]}x{size[1]}")
    return SceneManifest(path, tuple(frames), K, target, tuple(teachers), gt, size)


@dataclass
class SceneData:
    manifest: SceneManifest
    images: list
    sparse: list
    teachers: list  # (name, DepthMap, kind)
    ground_truth: DepthMap = None

    @property
    def target_image(self):
        return self.images[self.manifest.target]

    @property
    def source_images(self):
        return [self.images[i] for i in self.manifest.source_indices]

    @property
    def source_poses(self):
        return [self.manifest.frames[i].pose for i in self.manifest.source_indices]


def load_scene(manifest: SceneManifest) -> SceneData:
    images = [read_image(f.image) for f in manifest.frames]
    sparse = [read_depth(f.sparse_depth) if f.sparse_depth else None for f in manifest.frames]
    # images may carry a different channel count, but sizes were checked eagerly
    teachers = [(t.name, read_depth(t.depth), t.kind) for t in manifest.teachers]
    gt = read_depth(manifest.ground_truth) if manifest.ground_truth else None
    return SceneData(manifest, images, sparse, teachers, gt)


def write_manifest(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def export_scene(scene, out_dir, teachers=(), target=0, sparse=None, ground_truth=True,
                 image_format="png", depth_format="png"):
    """Write a :class:`~artifact.synth.SynthScene` and its teachers as a manifest.

    ``teachers`` holds ``(name, DepthMap, kind)`` triples for the target view;
    ``sparse`` optionally holds one sparse DepthMap per frame. Scene poses map
    the reference camera into each frame and are re-expressed relative to
    ``target``. Returns the manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    img_ext = ".pfm" if image_format == "pfm" else ".png"
    dep_ext = ".pfm" if depth_format == "pfm" else ".png"
    (out / "K.txt").write_text(format_intrinsics(scene.intrinsics))
    inv = scene.poses[target].inverse()
    frames = []
    for i, (img, _, pose) in enumerate(scene.frames):
        entry = {"image": f"frame_{i}{img_ext}"}
        if img_ext == ".pfm":
            write_pfm(img, out / entry["image"])
        else:
            write_image_png8(img, out / entry["image"])
        if sparse is not None and sparse[i] is not None:
            entry["sparse_depth"] = f"sparse_{i}{dep_ext}"
            write_depth(sparse[i], out / entry["sparse_depth"])
        if i != target:
            entry["pose"] = f"pose_{target}_to_{i}.txt"
            (out / entry["pose"]).write_text(format_pose(pose.compose(inv)))
        frames.append(entry)
    doc = {"convention": POSE_CONVENTION, "intrinsics": "K.txt", "target": target, "frames": frames,
           "teachers": []}
    for name, depth, kind in teachers:
        fname = f"teacher_{name}{dep_ext}"
        write_depth(depth, out / fname)
        doc["teachers"].append({"name": name, "kind": kind, "depth": fname})
    if ground_truth:
        doc["ground_truth"] = f"ground_truth{dep_ext}"
        write_depth(scene.depths[target], out / doc["ground_truth"])
    path = out / "manifest.json"
    write_manifest(path, doc)
    return path


# ---------------------------------------------------------------------------
# AS2D weight files

_WEIGHT_MAGIC = b"AS2D"
_WEIGHT_VERSION = 1


def save_weights(tensors, path):
    """Write a name -> array mapping as JSON (``.json``) or the binary tensor format.

    Binary layout, little-endian: ``b"AS2D"``, uint32 version, uint32 count,
    then per tensor: uint32 name length, UTF-8 name, uint32 ndim, ndim x uint32
    dims, prod(dims) x float32.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = {
            "format": "as2d-weights",
            "version": _WEIGHT_VERSION,
            "tensors": {
                k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
                for k, v in sorted(tensors.items())
            },
        }
        path.write_text(json.dumps(doc) + "\n")
        return
    out = [_WEIGHT_MAGIC, struct.pack("<II", _WEIGHT_VERSION, len(tensors))]
    for k, v in sorted(tensors.items()):
        a = np.asarray(v, dtype="<f4")
        name = k.encode("utf-8")
        out.append(struct.pack("<I", len(name)) + name)
        out.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    path.write_bytes(b"".join(out))


def load_weights(path):
    """Inverse of :func:`save_weights`; returns name -> float64 array."""
    path = Path(path)
    data = _read_bytes(path)
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(data.decode("utf-8"))
            if doc.get("format") != "as2d-weights":
                raise ValueError("not an as2d-weights document")
            return {
                k: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
                for k, t in doc["tensors"].items()
            }
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise FormatError(f"{path}: bad weight manifest ({exc})") from None
    if data[:4] != _WEIGHT_MAGIC:
        raise FormatError(f"{path}: not an AS2D weight file")
    pos = 4
    try:
        version, count = struct.unpack_from("<II", data, pos)
        pos += 8
        if version != _WEIGHT_VERSION:
            raise FormatError(f"{path}: unsupported weight file version {version}")
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 4
            if pos + size > len(data):
                raise TruncatedPayloadError(f"{path}: tensor {name!r} is truncated")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=pos).astype(np.float64).reshape(shape)
            pos += size
    except struct.error:
        raise TruncatedPayloadError(f"{path}: weight file is truncated") from None
    return tensors


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()



"""On-disk formats: tensor containers, frame datasets, traces and PPM images.

A model container is a pair of files sharing a base path::

    <base>.manifest.json   layer specs, tensor records, checksum
    <base>.weights.bin     float32 little-endian tensors, back to back

Frame datasets are ``FRM1`` binaries (class-index bytes) with a
``<base>.palette.json`` sidecar.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numba import njit

from .errors import ChecksumError, FormatError, ShapeError

MODEL_KINDS = ("vae", "lstm", "rgae", "bundle")
LAYER_KINDS = ("conv", "deconv", "dense", "lstm")
ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)

FRAME_MAGIC = b"FRM1"
_FRAME_HEADER = struct.Struct("<4sIHHB")

TRACE_HEADER = ("frame", "cell", "hidden_value", "a0", "a1", "a2")


@njit(cache=True)
def _fnv1a(data, h, prime):
    for b in data:
        h ^= np.uint64(b)
        h *= prime
    return h


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    buf = np.frombuffer(data, dtype=np.uint8)
    return int(_fnv1a(buf, FNV_OFFSET, FNV_PRIME))


@dataclass
class TensorRecord:
    name: str
    shape: list[int]
    byte_offset: int = 0
    dtype: str = "float32"

    @property
    def nbytes(self) -> int:
        return 4 * math.prod(self.shape)


@dataclass
class LayerSpec:
    """One layer of a feed-forward or recurrent stack.

    ``kernel``, ``stride``, ``padding`` and ``output_padding`` are (rows, cols)
    pairs; dense layers may carry ``out_shape`` to reshape their output into
    a C x H x W map.
    """

    kind: str
    name: str
    activation: str = "identity"
    in_channels: int = 0
    out_channels: int = 0
    kernel: list[int] = field(default_factory=lambda: [1, 1])
    stride: list[int] = field(default_factory=lambda: [1, 1])
    padding: list[int] = field(default_factory=lambda: [0, 0])
    output_padding: list[int] = field(default_factory=lambda: [0, 0])
    out_shape: list[int] | None = None
    role: str = ""


@dataclass
class ModelManifest:
    model_kind: str
    layers: list[LayerSpec] = field(default_factory=list)
    tensors: list[TensorRecord] = field(default_factory=list)
    latent_dim: int = 0
    checksum: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelManifest":
        try:
            layers = [LayerSpec(**ls) for ls in d.get("layers", [])]
            tensors = [TensorRecord(**tr) for tr in d["tensors"]]
            return cls(
                model_kind=d["model_kind"],
                layers=layers,
                tensors=tensors,
                latent_dim=int(d.get("latent_dim", 0)),
                checksum=d.get("checksum", ""),
                meta=dict(d.get("meta", {})),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc


def container_paths(base) -> tuple[Path, Path]:
    base = str(base)
    for suffix in (".manifest.json", ".weights.bin"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return Path(base + ".manifest.json"), Path(base + ".weights.bin")


def validate_manifest(manifest: ModelManifest) -> None:
    """Structural checks that do not need the blob."""
    if manifest.model_kind not in MODEL_KINDS:
        raise FormatError(f"unknown model_kind {manifest.model_kind!r}")
    names = [t.name for t in manifest.tensors]
    if len(set(names)) != len(names):
        raise FormatError("tensor names must be unique")
    for t in manifest.tensors:
        if t.dtype != "float32":
            raise FormatError(f"tensor {t.name}: unsupported dtype {t.dtype!r}")
        if not t.shape or any(int(s) < 1 for s in t.shape):
            raise FormatError(f"tensor {t.name}: shape must be positive, got {t.shape}")
        if t.byte_offset < 0:
            raise FormatError(f"tensor {t.name}: negative byte offset")
    for layer in manifest.layers:
        if layer.kind not in LAYER_KINDS:
            raise FormatError(f"layer {layer.name}: unknown kind {layer.kind!r}")
        if layer.activation not in ACTIVATIONS:
            raise FormatError(f"layer {layer.name}: unknown activation {layer.activation!r}")
    if manifest.model_kind == "vae" and manifest.meta.get("config") == "reference":
        n_conv = sum(1 for layer in manifest.layers if layer.kind == "conv")
        if n_conv != 4:
            raise FormatError(f"reference VAE configuration needs 4 conv layers, got {n_conv}")
    if manifest.model_kind == "lstm" and int(manifest.meta.get("cells", 0)) < 1:
        raise FormatError("lstm manifest must declare a positive cell count")


def save_model(manifest: ModelManifest, tensors: dict[str, np.ndarray], path) -> ModelManifest:
    """Write ``manifest`` and ``tensors`` as a container at base ``path``.

    Byte offsets and the checksum are (re)computed here; the updated manifest
    is returned.
    """
    blob = bytearray()
    records = []
    for rec in manifest.tensors:
        if rec.name not in tensors:
            raise ShapeError(f"missing tensor {rec.name!r}")
        arr = np.asarray(tensors[rec.name])
        if list(arr.shape) != [int(s) for s in rec.shape]:
            raise ShapeError(f"tensor {rec.name}: shape {list(arr.shape)} != manifest {rec.shape}")
        records.append(TensorRecord(rec.name, [int(s) for s in rec.shape], len(blob)))
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out = ModelManifest(
        model_kind=manifest.model_kind,
        layers=list(manifest.layers),
        tensors=records,
        latent_dim=manifest.latent_dim,
        checksum=f"{fnv1a64(bytes(blob)):016x}",
        meta=dict(manifest.meta),
    )
    validate_manifest(out)
    mpath, bpath = container_paths(path)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    bpath.write_bytes(bytes(blob))
    mpath.write_text(out.to_json() + "\n")
    return out


def load_model(path) -> tuple[ModelManifest, dict[str, np.ndarray]]:
    mpath, bpath = container_paths(path)
    try:
        raw = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: malformed JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"{mpath}: manifest must be a JSON object")
    manifest = ModelManifest.from_dict(raw)
    validate_manifest(manifest)
    blob = bpath.read_bytes()
    digest = f"{fnv1a64(blob):016x}"
    if digest != manifest.checksum:
        raise ChecksumError(f"{bpath}: checksum {digest} does not match manifest {manifest.checksum}")
    tensors = {}
    for rec in manifest.tensors:
        end = rec.byte_offset + rec.nbytes
        if end > len(blob):
            raise FormatError(f"tensor {rec.name} overruns blob ({end} > {len(blob)})")
        arr = np.frombuffer(blob, dtype="<f4", count=math.prod(rec.shape), offset=rec.byte_offset)
        tensors[rec.name] = arr.reshape(rec.shape).astype(np.float32)
    return manifest, tensors


def records_for(tensors: dict[str, np.ndarray]) -> list[TensorRecord]:
    """Tensor records in insertion order, offsets filled in by save_model."""
    return [TensorRecord(name, list(np.shape(arr))) for name, arr in tensors.items()]


def save_bundle(tensors: dict[str, np.ndarray], path, meta: dict | None = None) -> ModelManifest:
    """Persist loose named arrays (latents, heatmaps) in the container format."""
    manifest = ModelManifest("bundle", tensors=records_for(tensors), meta=meta or {})
    return save_model(manifest, tensors, path)


# -- frame datasets ----------------------------------------------------------

@dataclass
class FrameDataset:
    frames: np.ndarray  # (count, height, width) uint8
    class_count: int
    palette: dict[int, tuple] | None = None

    @property
    def count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


def frame_paths(base) -> tuple[Path, Path]:
    base = str(base)
    for suffix in (".frm", ".palette.json"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return Path(base + ".frm"), Path(base + ".palette.json")


def save_frames(dataset: FrameDataset, path) -> None:
    frames = np.asarray(dataset.frames)
    if frames.ndim != 3:
        raise ShapeError(f"frames must be (count, height, width), got {frames.shape}")
    if not 1 <= dataset.class_count <= 255:
        raise FormatError("class_count must fit in one byte")
    if frames.size and int(frames.max()) >= dataset.class_count:
        raise FormatError("frame value exceeds class_count")
    fpath, ppath = frame_paths(path)
    fpath.parent.mkdir(parents=True, exist_ok=True)
    n, h, w = frames.shape
    header = _FRAME_HEADER.pack(FRAME_MAGIC, n, h, w, dataset.class_count)
    fpath.write_bytes(header + np.ascontiguousarray(frames, dtype=np.uint8).tobytes())
    if dataset.palette is not None:
        doc = {str(k): list(v) for k, v in sorted(dataset.palette.items())}
        ppath.write_text(json.dumps(doc, indent=1) + "\n")


def load_frames(path) -> FrameDataset:
    fpath, ppath = frame_paths(path)
    data = fpath.read_bytes()
    if len(data) < _FRAME_HEADER.size:
        raise FormatError(f"{fpath}: truncated header")
    magic, n, h, w, cc = _FRAME_HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise FormatError(f"{fpath}: bad magic {magic!r}")
    body = data[_FRAME_HEADER.size:]
    if len(body) != n * h * w:
        raise FormatError(f"{fpath}: expected {n * h * w} frame bytes, found {len(body)}")
    frames = np.frombuffer(body, dtype=np.uint8).reshape(n, h, w).copy()
    if frames.size and int(frames.max()) >= cc:
        raise FormatError(f"{fpath}: frame byte {int(frames.max())} >= class_count {cc}")
    palette = None
    if ppath.exists():
        try:
            raw = json.loads(ppath.read_text())
            palette = {int(k): (v[0], int(v[1]), int(v[2]), int(v[3])) for k, v in raw.items()}
        except (ValueError, IndexError, TypeError) as exc:
            raise FormatError(f"{ppath}: malformed palette ({exc})") from exc
    return FrameDataset(frames, cc, palette)


# -- traces --------------------------------------------------------------------

def write_trace(path, hidden: np.ndarray, actions: np.ndarray) -> None:
    """One CSV row per (frame, cell); actions are repeated per cell."""
    hidden = np.asarray(hidden, dtype=float)
    actions = np.asarray(actions, dtype=float)
    if hidden.ndim != 2 or actions.shape != (hidden.shape[0], 3):
        raise ShapeError("trace needs hidden (T, C) and actions (T, 3)")
    if not np.all((hidden > 0) & (hidden < 1)):
        raise FormatError("hidden values must lie strictly inside (0, 1)")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_HEADER)
        for t in range(hidden.shape[0]):
            a = [_num(v) for v in actions[t]]
            for c in range(hidden.shape[1]):
                out.writerow([t, c, repr(float(hidden[t, c]))] + a)


def read_trace(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise FormatError(f"{path}: expected header {','.join(TRACE_HEADER)}")
    body = rows[1:]
    if not body:
        raise FormatError(f"{path}: empty trace")
    frames = np.array([int(r[0]) for r in body])
    cells = np.array([int(r[1]) for r in body])
    T, C = frames.max() + 1, cells.max() + 1
    if len(body) != T * C or set(frames.tolist()) != set(range(T)):
        raise FormatError(f"{path}: frame indices must be contiguous from 0 with every cell present")
    hidden = np.full((T, C), np.nan)
    actions = np.zeros((T, 3))
    for r, t, c in zip(body, frames, cells):
        hidden[t, c] = float(r[2])
        actions[t] = [float(v) for v in r[3:6]]
    if np.isnan(hidden).any():
        raise FormatError(f"{path}: duplicate (frame, cell) rows")
    if not np.all((hidden > 0) & (hidden < 1)):
        raise FormatError(f"{path}: hidden values outside (0, 1)")
    return hidden, actions


def _num(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


# -- images ----------------------------------------------------------------------

def ppm_bytes(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    if h < 1 or w < 1:
        raise ShapeError("image must be at least 1x1")
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image, dtype=np.uint8).tobytes()


def write_ppm(image: np.ndarray, path) -> None:
    data = ppm_bytes(image)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise FormatError(f"{path}: not a binary P6 PPM written by this toolkit")
    w, h = (int(s) for s in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3).copy()


def palette_lut(palette: dict[int, tuple], class_count: int) -> np.ndarray:
    lut = np.zeros((max(class_count, max(palette) + 1), 3), dtype=np.uint8)
    for idx, entry in palette.items():
        lut[idx] = entry[1:4]
    return lut


def render_frame(frame: np.ndarray, palette: dict[int, tuple]) -> np.ndarray:
    """Class-index frame -> (H, W, 3) uint8 via the palette."""
    frame = np.asarray(frame)
    lut = palette_lut(palette, int(frame.max()) + 1 if frame.size else 1)
    return lut[frame]


def gray_to_rgb(values: np.ndarray) -> np.ndarray:
    """Map values already in [0, 1] to a gray RGB image."""
    g = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.repeat(g[..., None], 3, axis=-1)


def join_images(images, axis: int, gap: int = 2) -> np.ndarray:
    """Concatenate RGB images along ``axis`` with white ``gap``-pixel separators."""
    parts = []
    for n, img in enumerate(images):
        if n and gap:
            shape = list(img.shape)
            shape[axis] = gap
            parts.append(np.full(shape, 255, dtype=np.uint8))
        parts.append(img)
    return np.concatenate(parts, axis=axis)

"""Volume / label-volume data model and bit-exact MVOL file I/O.

A :class:`Volume` is a 3D field of Hounsfield Units (HU) indexed as
``voxels[x, y, z]``; the axial frame index is ``z``.  A :class:`LabelVolume`
holds one semantic class code per voxel.  Both are immutable after
construction and safe to share across workers.

MVOL container layout (all integers little-endian)::

    magic "MVOL" (4 B) | version u16 = 1 | nx, ny, nz u32 | sx, sy, sz f32
    | dtype u8 (0 = i16 HU, 1 = u8 labels) | payload, x-fastest order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

HU_MIN = -1024
HU_MAX = 32767

# Label codes (stable on-disk values).
EXTERIOR_AIR = 0
SUPPORT = 1
BANDAGE = 2
BODY = 3
METAL = 4
HOLLOW = 5
UNKNOWN = 255

LABEL_NAMES = {
    EXTERIOR_AIR: "exterior_air",
    SUPPORT: "support",
    BANDAGE: "bandage",
    BODY: "body",
    METAL: "metal",
    HOLLOW: "hollow",
    UNKNOWN: "unknown",
}
VALID_LABELS = frozenset(LABEL_NAMES)

# Fixed overlay palette (RGB), one entry per class.
LABEL_COLORS = {
    EXTERIOR_AIR: (0, 0, 0),
    SUPPORT: (160, 110, 40),
    BANDAGE: (230, 210, 80),
    BODY: (200, 60, 60),
    METAL: (80, 200, 230),
    HOLLOW: (80, 80, 220),
    UNKNOWN: (120, 120, 120),
}

MVOL_MAGIC = b"MVOL"
MVOL_VERSION = 1
DTYPE_HU = 0
DTYPE_LABELS = 1

_HEADER = struct.Struct("<4sH3I3fB")  # 31 bytes

AXES = ("axial", "coronal", "sagittal")


class FormatError(Exception):
    """File is not a readable MVOL container."""


class TruncatedError(FormatError):
    """Header-declared dims do not match the payload size."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Volume:
    """3D scalar field of radiodensity in HU with voxel spacing in mm."""

    voxels: np.ndarray  # int16, shape (nx, ny, nz)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"voxels must be a non-empty 3D array, got shape {v.shape}")
        if v.dtype != np.int16:
            raise ValueError(f"voxels must be int16 HU, got {v.dtype}")
        if v.min() < HU_MIN or v.max() > HU_MAX:
            raise ValueError(f"HU values outside [{HU_MIN}, {HU_MAX}]")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise ValueError(f"spacing must be three positive floats, got {self.spacing}")
        object.__setattr__(self, "voxels", _freeze(v))
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Volume)
            and self.spacing == other.spacing
            and self.voxels.shape == other.voxels.shape
            and bool(np.array_equal(self.voxels, other.voxels))
        )


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Per-voxel semantic class codes, dims matching a paired Volume."""

    labels: np.ndarray  # uint8, shape (nx, ny, nz)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        a = np.asarray(self.labels)
        if a.ndim != 3 or min(a.shape) < 1:
            raise ValueError(f"labels must be a non-empty 3D array, got shape {a.shape}")
        if a.dtype != np.uint8:
            raise ValueError(f"labels must be uint8 codes, got {a.dtype}")
        present = np.unique(a)
        bad = [int(c) for c in present if int(c) not in VALID_LABELS]
        if bad:
            raise ValueError(f"unknown label codes present: {bad}")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise ValueError(f"spacing must be three positive floats, got {self.spacing}")
        object.__setattr__(self, "labels", _freeze(a))
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabelVolume)
            and self.spacing == other.spacing
            and self.labels.shape == other.labels.shape
            and bool(np.array_equal(self.labels, other.labels))
        )

    def mask(self, label: int) -> np.ndarray:
        """Boolean (nx, ny, nz) mask of one class."""
        return self.labels == label


# ---------------------------------------------------------------------------
# MVOL I/O
# ---------------------------------------------------------------------------

def _write_mvol(path, payload_array: np.ndarray, spacing, dtype_code: int) -> None:
    nx, ny, nz = payload_array.shape
    header = _HEADER.pack(MVOL_MAGIC, MVOL_VERSION, nx, ny, nz, *spacing, dtype_code)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload_array.tobytes(order="F"))


def _read_mvol(path, expect_dtype: int) -> tuple[np.ndarray, tuple[float, float, float]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MVOL_MAGIC:
        raise FormatError(f"{path}: not an MVOL file")
    if len(raw) < _HEADER.size:
        raise TruncatedError(f"{path}: file ends inside the {_HEADER.size}-byte header")
    magic, version, nx, ny, nz, sx, sy, sz, dtype_code = _HEADER.unpack_from(raw)
    if version != MVOL_VERSION:
        raise FormatError(f"{path}: unsupported MVOL version {version}")
    if dtype_code != expect_dtype:
        kinds = {DTYPE_HU: "HU volume", DTYPE_LABELS: "label volume"}
        raise FormatError(
            f"{path}: expected {kinds[expect_dtype]}, file holds {kinds.get(dtype_code, dtype_code)}"
        )
    np_dtype = np.dtype("<i2") if dtype_code == DTYPE_HU else np.dtype("u1")
    n = nx * ny * nz
    payload = raw[_HEADER.size:]
    if len(payload) != n * np_dtype.itemsize:
        raise TruncatedError(
            f"{path}: header declares {n} voxels "
            f"({n * np_dtype.itemsize} B) but payload has {len(payload)} B"
        )
    arr = np.frombuffer(payload, dtype=np_dtype).reshape((nx, ny, nz), order="F")
    return arr, (sx, sy, sz)


def save_volume(v: Volume, path) -> None:
    """Write an HU volume; ``load_volume(save_volume(v))`` is bit-exact."""
    _write_mvol(path, v.voxels.astype("<i2", copy=False), v.spacing, DTYPE_HU)


def load_volume(path) -> Volume:
    arr, spacing = _read_mvol(path, DTYPE_HU)
    return Volume(arr.astype(np.int16, copy=False), spacing)


def save_labels(lv: LabelVolume, path) -> None:
    _write_mvol(path, lv.labels, lv.spacing, DTYPE_LABELS)


def load_labels(path) -> LabelVolume:
    arr, spacing = _read_mvol(path, DTYPE_LABELS)
    return LabelVolume(arr, spacing)


def mvol_kind(path) -> str:
    """Peek at a file's dtype code: ``"hu"`` or ``"labels"``."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if head[:4] != MVOL_MAGIC:
        raise FormatError(f"{path}: not an MVOL file")
    if len(head) < _HEADER.size:
        raise TruncatedError(f"{path}: file ends inside the {_HEADER.size}-byte header")
    code = _HEADER.unpack(head)[-1]
    if code == DTYPE_HU:
        return "hu"
    if code == DTYPE_LABELS:
        return "labels"
    raise FormatError(f"{path}: unknown dtype code {code}")


# ---------------------------------------------------------------------------
# Slicing and display windowing
# ---------------------------------------------------------------------------

def get_slice(vol: Volume | LabelVolume, axis: str, index: int) -> np.ndarray:
    """Extract a 2D slice.

    axial fixes z -> (nx, ny); coronal fixes y -> (nx, nz);
    sagittal fixes x -> (ny, nz).
    """
    arr = vol.voxels if isinstance(vol, Volume) else vol.labels
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    ax = 2 - AXES.index(axis)  # axial -> 2, coronal -> 1, sagittal -> 0
    if not 0 <= index < arr.shape[ax]:
        raise IndexError(f"{axis} index {index} out of range [0, {arr.shape[ax]})")
    if axis == "axial":
        return arr[:, :, index]
    if axis == "coronal":
        return arr[:, index, :]
    return arr[index, :, :]


def window_to_image(slice_hu: np.ndarray, center: float, width: float) -> np.ndarray:
    """Map HU to 8-bit grayscale: saturate at center +/- width/2, linear between.

    Rounding is half-up, so center maps to 128 for even widths.
    """
    if width <= 0:
        raise ValueError(f"window width must be positive, got {width}")
    lo = center - width / 2.0
    frac = (np.asarray(slice_hu, dtype=np.float64) - lo) / width
    byte = np.floor(frac * 255.0 + 0.5)
    return np.clip(byte, 0, 255).astype(np.uint8)


def save_png(image: np.ndarray, path) -> None:
    """Save a 2D (x, y) grayscale image or (x, y, 3) RGB image as PNG.

    The first array axis is x, so the image is transposed into the
    row-major raster order PNG viewers expect.
    """
    from PIL import Image

    if image.ndim == 2:
        Image.fromarray(image.T).save(path)
    elif image.ndim == 3 and image.shape[2] == 3:
        Image.fromarray(np.swapaxes(image, 0, 1)).save(path)
    else:
        raise ValueError(f"expected (x, y) or (x, y, 3) image, got shape {image.shape}")


def label_overlay(gray: np.ndarray, label_slice: np.ndarray, alpha: float = 0.4) -> np.ndarray:
    """Blend fixed per-class colors over a windowed grayscale slice."""
    rgb = np.repeat(gray[:, :, None], 3, axis=2).astype(np.float64)
    tint = np.zeros_like(rgb)
    for code, color in LABEL_COLORS.items():
        sel = label_slice == code
        if sel.any():
            tint[sel] = color
    blend = (1.0 - alpha) * rgb + alpha * tint
    return np.clip(np.floor(blend + 0.5), 0, 255).astype(np.uint8)

"""Weakly supervised segmentation of wrapped bodies in volumetric CT."""

from .volume import (
    BANDAGE,
    BODY,
    EXTERIOR_AIR,
    HOLLOW,
    METAL,
    SUPPORT,
    UNKNOWN,
    FormatError,
    LabelVolume,
    TruncatedError,
    Volume,
    get_slice,
    load_labels,
    load_volume,
    mvol_kind,
    save_labels,
    save_volume,
    window_to_image,
)
from .phantom import PhantomSpec, generate_phantom

__version__ = "0.1.0"

__all__ = [
    "BANDAGE", "BODY", "EXTERIOR_AIR", "HOLLOW", "METAL", "SUPPORT", "UNKNOWN",
    "FormatError", "TruncatedError", "Volume", "LabelVolume",
    "get_slice", "window_to_image",
    "load_labels", "load_volume", "save_labels", "save_volume", "mvol_kind",
    "PhantomSpec", "generate_phantom",
    "__version__",
]

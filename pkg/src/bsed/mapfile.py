"""Attribution-map file format and heatmap rendering.

File layout: one ASCII header line ``BSEDMAP 1 <H> <W>\\n`` followed by
H*W little-endian IEEE-754 float32 values, row-major. The float payload
round-trips bit-exactly.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as _PILImage

from .core import AttributionMap, Image

MAGIC = b"BSEDMAP"
VERSION = 1


class MapFormatError(ValueError):
    """Malformed attribution-map file."""


def map_to_bytes(amap: AttributionMap) -> bytes:
    header = f"BSEDMAP {VERSION} {amap.height} {amap.width}\n".encode("ascii")
    payload = np.ascontiguousarray(amap.values, dtype="<f4").tobytes()
    return header + payload


def write_map(amap: AttributionMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(map_to_bytes(amap))


def map_from_bytes(data: bytes) -> AttributionMap:
    nl = data.find(b"\n")
    if nl < 0:
        raise MapFormatError("missing header line")
    parts = data[:nl].split(b" ")
    if len(parts) != 4 or parts[0] != MAGIC:
        raise MapFormatError(f"bad header {data[:nl]!r}")
    if parts[1] != str(VERSION).encode():
        raise MapFormatError(f"unsupported version {parts[1]!r}")
    try:
        h, w = int(parts[2]), int(parts[3])
    except ValueError as exc:
        raise MapFormatError("non-integer dimensions") from exc
    payload = data[nl + 1 :]
    if len(payload) != h * w * 4:
        raise MapFormatError(f"payload size {len(payload)} != {h}*{w}*4")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return AttributionMap(values.astype(np.float64))


def read_map(path) -> AttributionMap:
    with open(path, "rb") as fh:
        return map_from_bytes(fh.read())


def heatmap_rgba(amap: AttributionMap, gain: float = 1.0) -> np.ndarray:
    """Diverging overlay: positive red, negative blue, zero transparent.

    Alpha scales with |value| relative to the map's absolute maximum.
    """
    v = amap.values
    peak = float(np.abs(v).max())
    rgba = np.zeros((amap.height, amap.width, 4), dtype=np.uint8)
    if peak == 0.0:
        return rgba
    alpha = np.clip(np.abs(v) / peak * gain, 0.0, 1.0)
    rgba[..., 0] = np.where(v > 0, 255, 0)
    rgba[..., 2] = np.where(v < 0, 255, 0)
    rgba[..., 3] = np.rint(alpha * 255.0).astype(np.uint8)
    return rgba


def write_heatmap_png(amap: AttributionMap, path, image: Image | None = None, gain: float = 1.0) -> None:
    """Write the overlay PNG, optionally composited over the source image."""
    overlay = _PILImage.fromarray(heatmap_rgba(amap, gain=gain), mode="RGBA")
    if image is not None:
        if (image.height, image.width) != (amap.height, amap.width):
            raise MapFormatError("image and map dimensions differ")
        base = _PILImage.fromarray(image.to_uint8(), mode="RGB").convert("RGBA")
        overlay = _PILImage.alpha_composite(base, overlay)
    overlay.save(path)

"""16-bit PGM and raw float32 image IO.

PGM files follow the Netpbm P5 convention: maxval 65535, sample bytes
big-endian. Depth PGMs store integer millimeters; heatmap PGMs store
round(value * 65535) for values in [0, 1]. Raw depth files are float32
little-endian with a JSON sidecar holding dimensions and intrinsics.
"""

from __future__ import annotations

import json

import numpy as np

from .geometry import CameraIntrinsics

PGM_MAXVAL = 65535


class ImageFormatError(ValueError):
    """Raised for malformed PGM or raw depth files."""


def _write_pgm16(path, samples: np.ndarray) -> None:
    h, w = samples.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(samples.astype(">u2").tobytes())


def _read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with # comments allowed; a single whitespace byte ends the header.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ImageFormatError(f"not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != PGM_MAXVAL:
        raise ImageFormatError(f"expected 16-bit PGM (maxval {PGM_MAXVAL}), got {maxval}")
    need = w * h * 2
    payload = data[pos : pos + need]
    if len(payload) != need:
        raise ImageFormatError("PGM payload shorter than header promises")
    return np.frombuffer(payload, dtype=">u2").reshape(h, w)


def save_depth_pgm(path, depth_mm: np.ndarray) -> None:
    """Depth in millimeters to 16-bit PGM; values clamped to [0, 65535]."""
    samples = np.clip(np.rint(depth_mm), 0, PGM_MAXVAL).astype(np.uint16)
    _write_pgm16(path, samples)


def load_depth_pgm(path) -> np.ndarray:
    """16-bit PGM back to float depth in millimeters (0 = missing)."""
    return _read_pgm16(path).astype(np.float64)


def save_heatmap_pgm(path, heatmap: np.ndarray) -> None:
    """Values in [0, 1] to 16-bit PGM via round(value * 65535)."""
    h = np.asarray(heatmap, dtype=np.float64)
    if h.min() < 0.0 or h.max() > 1.0:
        raise ValueError("heatmap values must lie in [0, 1]")
    _write_pgm16(path, np.rint(h * PGM_MAXVAL).astype(np.uint16))


def load_heatmap_pgm(path) -> np.ndarray:
    """16-bit PGM back to floats in [0, 1]."""
    return _read_pgm16(path).astype(np.float64) / PGM_MAXVAL


def _sidecar_path(path) -> str:
    return str(path) + ".json"


def save_depth_raw(path, values_mm: np.ndarray, intrinsics: CameraIntrinsics) -> None:
    """Raw float32 little-endian depth plus a JSON sidecar at <path>.json."""
    arr = np.ascontiguousarray(values_mm, dtype="<f4")
    h, w = arr.shape
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise ValueError("depth dimensions disagree with intrinsics")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    sidecar = {
        "dtype": "float32_le",
        "height": h,
        "width": w,
        "units": "mm",
        "intrinsics": {
            "fx": intrinsics.fx,
            "fy": intrinsics.fy,
            "cx": intrinsics.cx,
            "cy": intrinsics.cy,
            "width": intrinsics.width,
            "height": intrinsics.height,
        },
    }
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_depth_raw(path) -> tuple[np.ndarray, CameraIntrinsics]:
    """Read a raw float32 depth file and its sidecar."""
    try:
        with open(_sidecar_path(path), "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError as exc:
        raise ImageFormatError(f"missing sidecar {_sidecar_path(path)}") from exc
    except json.JSONDecodeError as exc:
        raise ImageFormatError(f"bad sidecar JSON: {exc}") from exc
    if sidecar.get("dtype") != "float32_le":
        raise ImageFormatError(f"unsupported raw dtype {sidecar.get('dtype')!r}")
    h, w = int(sidecar["height"]), int(sidecar["width"])
    intr = CameraIntrinsics(**sidecar["intrinsics"])
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) != h * w * 4:
        raise ImageFormatError("raw payload size disagrees with sidecar dims")
    values = np.frombuffer(blob, dtype="<f4").reshape(h, w).astype(np.float32)
    return values, intr

"""Binary container with a canonical JSON header and raw little-endian payloads.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header,
then the raw array payloads in the order the header declares them. The header
JSON is serialized canonically (sorted keys, no whitespace), so identical
content always produces identical bytes and round-trips are bit-exact.
"""

from __future__ import annotations

import contextlib
import json

import numpy as np

MAGIC_LEN = 8

# Allowed payload dtypes, little-endian on disk.
_DTYPES = {"f4": "<f4", "f8": "<f8", "i4": "<i4", "i8": "<i8", "u1": "|u1"}


class ContainerError(ValueError):
    """Raised for malformed container files."""


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _open_maybe(path_or_file, mode):
    """Open a path, or pass a file-like object through unclosed."""
    if hasattr(path_or_file, "read" if "r" in mode else "write"):
        return contextlib.nullcontext(path_or_file)
    return open(path_or_file, mode)


def write_container(path, magic: str, meta: dict, arrays: dict) -> None:
    """Write meta and named arrays under the given 8-char magic.

    arrays is an ordered name -> ndarray mapping; each array is stored raw in
    little-endian order. meta must be JSON-serializable.
    """
    magic_bytes = magic.encode("ascii")
    if len(magic_bytes) != MAGIC_LEN:
        raise ValueError(f"magic must be exactly {MAGIC_LEN} ASCII bytes, got {magic!r}")

    layouts = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        code = arr.dtype.str.lstrip("<>|=")
        if code not in _DTYPES:
            raise ValueError(f"unsupported payload dtype {arr.dtype} for {name!r}")
        le = arr.astype(_DTYPES[code], copy=False)
        layouts.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(le).tobytes())

    header = _canonical_json(
        {"arrays": layouts, "endianness": "little", "meta": meta, "version": 1}
    )
    with _open_maybe(path, "wb") as fh:
        fh.write(magic_bytes)
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, magic: str) -> tuple[dict, dict]:
    """Read (meta, arrays) back; verifies magic and payload sizes."""
    magic_bytes = magic.encode("ascii")
    with _open_maybe(path, "rb") as fh:
        got = fh.read(MAGIC_LEN)
        if got != magic_bytes:
            raise ContainerError(f"bad magic: expected {magic_bytes!r}, got {got!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise ContainerError("truncated header length")
        header_len = int(np.frombuffer(raw_len, dtype="<u4")[0])
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise ContainerError("truncated header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"header is not valid JSON: {exc}") from exc
        if header.get("version") != 1 or header.get("endianness") != "little":
            raise ContainerError("unsupported container version or endianness")

        arrays = {}
        for layout in header["arrays"]:
            dtype = np.dtype(_DTYPES[layout["dtype"]])
            shape = tuple(int(s) for s in layout["shape"])
            n_bytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            blob = fh.read(n_bytes)
            if len(blob) != n_bytes:
                raise ContainerError(f"truncated payload for {layout['name']!r}")
            arrays[layout["name"]] = (
                np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
            )
        trailing = fh.read(1)
        if trailing:
            raise ContainerError("trailing bytes after declared payloads")
    return header["meta"], arrays

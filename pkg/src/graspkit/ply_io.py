"""PLY point cloud reader and writer.

Supports ASCII and binary-little-endian PLY with a vertex element carrying
x, y, z and optionally nx, ny, nz (plus red, green, blue, which are kept as
colors in [0, 1]). Unknown scalar properties are skipped. Elements after the
vertex element (faces and the like) are ignored on read.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    """Raised for malformed or unsupported PLY content."""


def _parse_header(fh):
    """Returns (fmt, vertex_count, vertex_props, leading_list_elements)."""
    line = fh.readline().strip()
    if line != b"ply":
        raise PlyError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_code or None for lists)])
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyError("unexpected end of header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format":
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary_little_endian"
            else:
                raise PlyError(f"unsupported PLY format {parts[1]!r}")
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise PlyError("property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], None))
            else:
                code = _PLY_DTYPES.get(parts[1])
                if code is None:
                    raise PlyError(f"unknown property type {parts[1]!r}")
                elements[-1][2].append((parts[2], code))
        else:
            raise PlyError(f"unrecognized header line {line!r}")
    if fmt is None:
        raise PlyError("PLY header missing format line")

    vertex = None
    leading = []
    for name, count, props in elements:
        if name == "vertex":
            vertex = (count, props)
            break
        leading.append((name, count, props))
    if vertex is None:
        raise PlyError("PLY file has no vertex element")
    return fmt, vertex[0], vertex[1], leading


def load_ply(path) -> PointCloud:
    """Read a PLY file into a PointCloud."""
    with open(path, "rb") as fh:
        fmt, count, props, leading = _parse_header(fh)
        names = [n for n, _ in props]
        if any(c is None for _, c in props):
            raise PlyError("list properties on the vertex element are unsupported")
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise PlyError(f"vertex element missing property {axis!r}")

        if fmt == "binary_little_endian":
            if leading:
                # Cannot seek past unknown binary elements that precede vertex.
                if any(any(c is None for _, c in p) for _, _, p in leading):
                    raise PlyError("binary element with list properties precedes vertex")
                skip = sum(
                    cnt * sum(np.dtype(c).itemsize for _, c in p)
                    for _, cnt, p in leading
                )
                fh.seek(skip, 1)
            dtype = np.dtype([(n, "<" + c) for n, c in props])
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise PlyError("binary payload shorter than header promises")
            data = np.frombuffer(buf, dtype=dtype)
        else:
            rows = []
            skip_rows = sum(cnt for _, cnt, _ in leading)
            seen = 0
            for raw in fh:
                text = raw.strip()
                if not text:
                    continue
                if skip_rows:
                    skip_rows -= 1
                    continue
                rows.append(text.split())
                seen += 1
                if seen == count:
                    break
            if seen != count:
                raise PlyError("ASCII payload shorter than header promises")
            arr = np.asarray(rows, dtype=np.float64)
            if arr.shape[1] != len(props):
                raise PlyError("ASCII row width does not match property list")
            dtype = np.dtype([(n, "<" + c) for n, c in props])
            data = np.zeros(count, dtype=dtype)
            for i, (n, _) in enumerate(props):
                data[n] = arr[:, i]

    points = np.stack(
        [data["x"], data["y"], data["z"]], axis=1
    ).astype(np.float64)

    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = np.stack([data["nx"], data["ny"], data["nz"]], axis=1).astype(np.float64)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.maximum(norm, 1e-300)
    elif any(n in names for n in ("nx", "ny", "nz")):
        raise PlyError("partial normal properties (need all of nx, ny, nz)")

    colors = None
    if all(n in names for n in ("red", "green", "blue")):
        cols = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.float64)
        if any(dict(props)[n] == "u1" for n in ("red", "green", "blue")):
            cols = cols / 255.0
        colors = cols

    return PointCloud(points, normals, colors)


def save_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write a PointCloud as PLY (binary little-endian by default)."""
    n = len(cloud)
    props = [("x", "f4"), ("y", "f4"), ("z", "f4")]
    if cloud.normals is not None:
        props += [("nx", "f4"), ("ny", "f4"), ("nz", "f4")]
    if cloud.colors is not None:
        props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]

    dtype = np.dtype([(name, "<" + code) for name, code in props])
    data = np.zeros(n, dtype=dtype)
    data["x"], data["y"], data["z"] = cloud.points.T.astype(np.float32)
    if cloud.normals is not None:
        data["nx"], data["ny"], data["nz"] = cloud.normals.T.astype(np.float32)
    if cloud.colors is not None:
        cols = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        data["red"], data["green"], data["blue"] = cols.T

    type_names = {"f4": "float", "u1": "uchar"}
    header = ["ply"]
    header.append(
        "format binary_little_endian 1.0" if binary else "format ascii 1.0"
    )
    header.append(f"element vertex {n}")
    header += [f"property {type_names[code]} {name}" for name, code in props]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(data.tobytes())
        else:
            for row in data:
                cells = [
                    str(int(row[name])) if code == "u1" else repr(float(row[name]))
                    for name, code in props
                ]
                fh.write((" ".join(cells) + "\n").encode("ascii"))

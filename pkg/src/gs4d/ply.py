"""Minimal PLY vertex-element reader/writer (ASCII and binary little-endian)."""

from __future__ import annotations

import numpy as np

from .errors import FormatError

_PLY_TO_NUMPY = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def read_vertices(path) -> dict[str, np.ndarray]:
    """Read the vertex element of a PLY file into {property: 1-D array}."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"ply"):
        raise FormatError(f"{path}: not a PLY file (missing 'ply' magic)")
    try:
        header_end = data.index(b"end_header\n") + len(b"end_header\n")
    except ValueError:
        raise FormatError(f"{path}: unterminated PLY header") from None
    header = data[:header_end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # (name, count, [(prop_name, ply_type)])
    for line in header[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before any element")
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], ("list", tok[2], tok[3])))
            else:
                elements[-1][2].append((tok[2], tok[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format '{fmt}'")

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise FormatError(f"{path}: no vertex element")
    if elements and elements[0][0] != "vertex":
        raise FormatError(f"{path}: vertex must be the first element")
    _, count, props = vertex
    if any(isinstance(t, tuple) for _, t in props):
        raise FormatError(f"{path}: list properties on vertices are not supported")
    for name, t in props:
        if t not in _PLY_TO_NUMPY:
            raise FormatError(f"{path}: unsupported property type '{t}'")

    if fmt == "binary_little_endian":
        dtype = np.dtype([(name, "<" + _PLY_TO_NUMPY[t]) for name, t in props])
        body = data[header_end:header_end + count * dtype.itemsize]
        if len(body) < count * dtype.itemsize:
            raise FormatError(f"{path}: truncated vertex data")
        rec = np.frombuffer(body, dtype=dtype, count=count)
    else:
        text = data[header_end:].decode("ascii")
        rows = [r.split() for r in text.splitlines() if r.strip()][:count]
        if len(rows) < count:
            raise FormatError(f"{path}: truncated vertex data")
        cols = np.asarray(rows, dtype=np.float64)
        if cols.shape[1] != len(props):
            raise FormatError(f"{path}: wrong column count in ASCII body")
        rec = np.zeros(count, dtype=[(name, _PLY_TO_NUMPY[t]) for name, t in props])
        for j, (name, _) in enumerate(props):
            rec[name] = cols[:, j]
    return {name: np.ascontiguousarray(rec[name]) for name, _ in props}


def write_vertices(path, columns: list[tuple[str, str, np.ndarray]]):
    """Write a binary little-endian PLY with one vertex element.

    ``columns`` is a list of (property_name, ply_type, values).
    """
    counts = {len(v) for _, _, v in columns}
    if len(counts) != 1:
        raise FormatError("all PLY columns must have the same length")
    n = counts.pop()
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {t} {name}" for name, t, _ in columns]
    header += ["end_header", ""]
    dtype = np.dtype([(name, "<" + _PLY_TO_NUMPY[t]) for name, t, _ in columns])
    rec = np.zeros(n, dtype=dtype)
    for name, _, values in columns:
        rec[name] = values
    with open(path, "wb") as f:
        f.write("\n".join(header).encode("ascii"))
        f.write(rec.tobytes())

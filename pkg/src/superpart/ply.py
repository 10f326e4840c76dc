"""Minimal PLY reader/writer for vertex-only point clouds.

Only the ``vertex`` element is interpreted. Other elements are tolerated when
they come after the vertex block (ASCII and binary) or when they only carry
scalar properties (binary).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_DTYPE_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
                 "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}

FORMATS = ("ply_ascii", "ply_binary_le")


class PlyError(ValueError):
    """Raised when a PLY file cannot be parsed."""


@dataclass
class _Element:
    name: str
    count: int
    properties: list = field(default_factory=list)  # (name, dtype str) or (name, ("list", cnt, item))
    line: int = 0

    @property
    def scalar_only(self) -> bool:
        return all(isinstance(t, str) for _, t in self.properties)

    def dtype(self, endian: str) -> np.dtype:
        return np.dtype([(n, endian + t) for n, t in self.properties])


def _parse_header(raw: bytes):
    if not raw.startswith(b"ply"):
        raise PlyError("malformed header at line 1 (byte 0): missing 'ply' magic")
    end = raw.find(b"end_header")
    if end < 0:
        raise PlyError("malformed header: no 'end_header' line found")
    nl = raw.find(b"\n", end)
    if nl < 0:
        raise PlyError(f"malformed header at byte {end}: 'end_header' not terminated by newline")
    body_offset = nl + 1
    lines = raw[:body_offset].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: list[_Element] = []
    for lineno, line in enumerate(lines, start=1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            if len(tok) != 3:
                raise PlyError(f"malformed header at line {lineno}: {line!r}")
            if tok[1] == "ascii":
                fmt = "ply_ascii"
            elif tok[1] == "binary_little_endian":
                fmt = "ply_binary_le"
            else:
                raise PlyError(f"unsupported PLY format {tok[1]!r} at line {lineno}")
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"malformed element declaration at line {lineno}: {line!r}")
            elements.append(_Element(tok[1], int(tok[2]), line=lineno))
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"property before any element at line {lineno}")
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _SCALAR_TYPES or tok[3] not in _SCALAR_TYPES:
                    raise PlyError(f"malformed list property at line {lineno}: {line!r}")
                elements[-1].properties.append(
                    (tok[4], ("list", _SCALAR_TYPES[tok[2]], _SCALAR_TYPES[tok[3]])))
            else:
                if len(tok) != 3 or tok[1] not in _SCALAR_TYPES:
                    raise PlyError(f"unknown property type at line {lineno}: {line!r}")
                elements[-1].properties.append((tok[2], _SCALAR_TYPES[tok[1]]))
        else:
            raise PlyError(f"unrecognized header keyword at line {lineno}: {line!r}")
    if fmt is None:
        raise PlyError("malformed header: missing 'format' line")
    return fmt, elements, body_offset, len(lines)


def read_ply(path: str | os.PathLike, expect_format: str | None = None) -> tuple[dict, str]:
    """Read the vertex element of a PLY file.

    Returns ``(columns, format)`` where ``columns`` maps property names to
    1-D numpy arrays in file order.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    fmt, elements, offset, header_lines = _parse_header(raw)
    if expect_format is not None and expect_format != fmt:
        raise PlyError(f"expected {expect_format} but file header declares {fmt}")
    names = [e.name for e in elements]
    if "vertex" not in names:
        raise PlyError("malformed header: no 'vertex' element")
    vidx = names.index("vertex")

    if fmt == "ply_ascii":
        return _read_ascii(raw[offset:], elements, vidx, header_lines), fmt

    for el in elements[:vidx]:
        if not el.scalar_only:
            raise PlyError(f"cannot skip list-valued element {el.name!r} (header line {el.line}) "
                           "preceding the vertex element in binary PLY")
        offset += el.count * el.dtype("<").itemsize
    vert = elements[vidx]
    if not vert.scalar_only:
        raise PlyError(f"list properties on vertex element (header line {vert.line}) are unsupported")
    dt = vert.dtype("<")
    need = vert.count * dt.itemsize
    if offset + need > len(raw):
        have = max(0, len(raw) - offset)
        raise PlyError(f"truncated payload: vertex block needs {need} bytes at byte offset "
                       f"{offset} but only {have} remain (record {have // dt.itemsize} incomplete)")
    data = np.frombuffer(raw, dtype=dt, count=vert.count, offset=offset)
    return {n: np.array(data[n]) for n, _ in vert.properties}, fmt


def _read_ascii(body: bytes, elements, vidx, header_lines) -> dict:
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    for el in elements[:vidx]:
        pos += el.count
    vert = elements[vidx]
    if not vert.scalar_only:
        raise PlyError(f"list properties on vertex element (header line {vert.line}) are unsupported")
    if pos + vert.count > len(lines):
        raise PlyError(f"truncated payload: expected {vert.count} vertex lines starting at line "
                       f"{header_lines + pos + 1}, file ends at line {header_lines + len(lines)}")
    nprop = len(vert.properties)
    cols = [[] for _ in range(nprop)]
    for r in range(vert.count):
        tok = lines[pos + r].split()
        if len(tok) < nprop:
            raise PlyError(f"truncated vertex record at line {header_lines + pos + r + 1}: "
                           f"expected {nprop} values, got {len(tok)}")
        for c in range(nprop):
            cols[c].append(tok[c])
    out = {}
    for c, (name, t) in enumerate(vert.properties):
        try:
            out[name] = np.array(cols[c], dtype=np.float64).astype(t) if t[0] == "f" \
                else np.array(cols[c], dtype=np.int64).astype(t)
        except ValueError as exc:
            raise PlyError(f"bad value for property {name!r} in vertex block "
                           f"starting at line {header_lines + pos + 1}: {exc}") from None
    return out


def write_ply(path: str | os.PathLike, columns: list[tuple[str, np.ndarray]],
              fmt: str = "ply_binary_le") -> None:
    """Write ``columns`` (ordered ``(name, array)`` pairs) as a vertex element."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown PLY format {fmt!r}")
    if not columns:
        raise ValueError("no columns to write")
    n = len(columns[0][1])
    header = ["ply",
              "format " + ("ascii" if fmt == "ply_ascii" else "binary_little_endian") + " 1.0",
              f"element vertex {n}"]
    dts = []
    for name, arr in columns:
        arr = np.asarray(arr)
        if len(arr) != n:
            raise ValueError(f"column {name!r} has length {len(arr)}, expected {n}")
        code = arr.dtype.str[1:]
        if code not in _DTYPE_TO_PLY:
            raise ValueError(f"unsupported dtype {arr.dtype} for column {name!r}")
        header.append(f"property {_DTYPE_TO_PLY[code]} {name}")
        dts.append((name, "<" + code))
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    rec = np.empty(n, dtype=np.dtype(dts))
    for name, arr in columns:
        rec[name] = arr
    with open(path, "wb") as fh:
        fh.write(head)
        if fmt == "ply_binary_le":
            fh.write(rec.tobytes())
        else:
            for row in rec:
                fh.write((" ".join(_fmt_ascii(v) for v in row) + "\n").encode("ascii"))


def _fmt_ascii(v) -> str:
    if isinstance(v, np.floating):
        return np.format_float_positional(v, unique=True, trim="-")
    return str(int(v))

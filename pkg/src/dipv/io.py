"""Readers for XYZ, OFF and ASCII PLY point files, and an exact XYZ writer.

Only vertex positions are read: OFF faces and PLY faces or extra vertex
properties are skipped. Malformed input raises :class:`CloudFileError`
carrying the 1-based line number.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from dipv.errors import InvalidInput
from dipv.geometry import PointCloud

FORMATS = ("xyz", "off", "ply")


class CloudFileError(InvalidInput):
    def __init__(self, path, line: int | None, message: str):
        self.path, self.line = str(path), line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


def _content_lines(text: str):
    """(line number, stripped text) for non-blank lines, '#' comments removed."""
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line


def _floats(path, no, fields, count):
    if len(fields) < count:
        raise CloudFileError(path, no, f"expected {count} numbers, got {len(fields)}")
    try:
        vals = [float(f) for f in fields[:count]]
    except ValueError:
        raise CloudFileError(path, no, f"not a number in {' '.join(fields)!r}") from None
    if not all(np.isfinite(vals)):
        raise CloudFileError(path, no, "non-finite coordinate")
    return vals


def _finish(path, rows) -> PointCloud:
    if not rows:
        raise CloudFileError(path, None, "no points found")
    return PointCloud(np.array(rows, dtype=np.float64))


def parse_xyz(text: str, path="<xyz>") -> PointCloud:
    rows = []
    for no, line in _content_lines(text):
        fields = line.replace(",", " ").split()
        if len(fields) != 3:
            raise CloudFileError(path, no, f"expected 'x y z', got {len(fields)} fields")
        rows.append(_floats(path, no, fields, 3))
    return _finish(path, rows)


def parse_off(text: str, path="<off>") -> PointCloud:
    lines = list(_content_lines(text))
    if not lines:
        raise CloudFileError(path, None, "empty file")
    no, head = lines[0]
    if not head.startswith("OFF"):
        raise CloudFileError(path, no, "missing OFF header")
    rest = head[3:].split()
    pos = 1
    if not rest:  # counts on the following line
        if len(lines) < 2:
            raise CloudFileError(path, no, "missing vertex/face counts")
        no, counts_line = lines[1]
        rest, pos = counts_line.split(), 2
    try:
        n_vert = int(rest[0])
    except (ValueError, IndexError):
        raise CloudFileError(path, no, "bad vertex count") from None
    if n_vert < 1:
        raise CloudFileError(path, no, "vertex count must be >= 1")
    body = lines[pos : pos + n_vert]
    if len(body) < n_vert:
        raise CloudFileError(path, None, f"file ends after {len(body)} of {n_vert} vertices")
    rows = [_floats(path, n, ln.split(), 3) for n, ln in body]
    return _finish(path, rows)


def parse_ply(text: str, path="<ply>") -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFileError(path, 1, "missing 'ply' magic line")
    elements = []  # [name, count, [property names]]
    fmt = None
    i = 1
    while True:
        if i >= len(lines):
            raise CloudFileError(path, None, "header has no end_header")
        no, fields = i + 1, lines[i].split()
        i += 1
        if not fields or fields[0] in ("comment", "obj_info"):
            continue
        key = fields[0]
        if key == "end_header":
            break
        if key == "format":
            fmt = fields[1] if len(fields) > 1 else ""
            if fmt != "ascii":
                raise CloudFileError(path, no, f"only ascii PLY is supported, got {fmt!r}")
        elif key == "element":
            try:
                elements.append([fields[1], int(fields[2]), []])
            except (IndexError, ValueError):
                raise CloudFileError(path, no, "bad element line") from None
        elif key == "property":
            if not elements:
                raise CloudFileError(path, no, "property before any element")
            if len(fields) >= 5 and fields[1] == "list":
                elements[-1][2].append(("list", fields[4]))
            elif len(fields) >= 3:
                elements[-1][2].append(("scalar", fields[2]))
            else:
                raise CloudFileError(path, no, "bad property line")
        else:
            raise CloudFileError(path, no, f"unknown header keyword {key!r}")
    if fmt is None:
        raise CloudFileError(path, None, "header has no format line")
    rows = []
    for name, count, props in elements:
        if name != "vertex":
            # skip this element's lines
            taken = 0
            while taken < count and i < len(lines):
                if lines[i].strip():
                    taken += 1
                i += 1
            continue
        names = [p[1] for p in props]
        if any(kind == "list" for kind, _ in props):
            raise CloudFileError(path, None, "list properties on vertices are not supported")
        try:
            cols = [names.index(a) for a in ("x", "y", "z")]
        except ValueError:
            raise CloudFileError(path, None, "vertex element lacks x, y, z properties") from None
        while len(rows) < count:
            if i >= len(lines):
                raise CloudFileError(path, None, f"file ends after {len(rows)} of {count} vertices")
            no, fields = i + 1, lines[i].split()
            i += 1
            if not fields:
                continue
            if len(fields) != len(props):
                raise CloudFileError(path, no, f"expected {len(props)} values, got {len(fields)}")
            vals = _floats(path, no, fields, len(fields))
            rows.append([vals[c] for c in cols])
    return _finish(path, rows)


_PARSERS = {"xyz": parse_xyz, "off": parse_off, "ply": parse_ply}


def detect_format(path) -> str:
    ext = Path(path).suffix.lower().lstrip(".")
    if ext in ("xyz", "txt", "pts"):
        return "xyz"
    if ext in _PARSERS:
        return ext
    raise CloudFileError(path, None, f"unknown file extension {ext!r} (use .xyz, .off or .ply)")


def read_cloud(path, fmt: str | None = None) -> PointCloud:
    """Read a point file; the format comes from ``fmt`` or the extension."""
    fmt = fmt or detect_format(path)
    if fmt not in _PARSERS:
        raise InvalidInput(f"unknown format {fmt!r}")
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError:
        raise CloudFileError(path, None, "not a text file") from None
    return _PARSERS[fmt](text, path)


def format_xyz(cloud: PointCloud) -> str:
    """One 'x y z' line per point with 17 significant digits (round-trips exactly)."""
    return "".join(" ".join(format(float(v), ".17g") for v in p) + "\n" for p in cloud.points)


def write_xyz(cloud: PointCloud, path) -> None:
    Path(path).write_text(format_xyz(cloud))

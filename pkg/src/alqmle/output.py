"""Pinned text formats and atomic file output.

Reals are written with 17 significant digits (``format(x, ".17g")``), which
round-trips every double exactly. Files are UTF-8 with LF line endings and
are written to a temporary file in the target directory, then renamed.
JSON is rendered by a small writer here rather than :mod:`json` because the
standard encoder only offers the shortest round-trip repr for floats.
"""

import csv
import hashlib
import io
import math
import os
import tempfile

import numpy as np

from alqmle.exceptions import DomainError

__all__ = [
    "format_real",
    "format_cell",
    "render_csv",
    "render_json",
    "write_atomic",
    "write_csv",
    "write_json",
    "sha256_file",
    "read_csv_table",
    "read_series_csv",
]


def format_real(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def format_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_real(value)
    return str(value)


def render_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def _json_scalar(value):
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        # JSON has no NaN/Infinity literals
        return format_real(value) if math.isfinite(value) else "null"
    if isinstance(value, str):
        return _escape(value)
    raise TypeError(f"cannot render {type(value).__name__} as JSON")


def _escape(text):
    out = ['"']
    for ch in text:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _render(value, depth):
    pad = "  " * (depth + 1)
    end = "  " * depth
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{_escape(str(k))}: {_render(v, depth + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in value):
            return "[" + ", ".join(_json_scalar(v) for v in value) + "]"
        items = [pad + _render(v, depth + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return _json_scalar(value)


def render_json(obj):
    """Indented JSON text; keys keep insertion order, reals use 17 digits."""
    return _render(obj, 0) + "\n"


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows):
    return write_atomic(path, render_csv(header, rows))


def write_json(path, obj):
    return write_atomic(path, render_json(obj))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def read_csv_table(path):
    """Header and float matrix of a numeric CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise DomainError(f"{path}: non-numeric cell ({exc})") from None
    if body and data.shape[1] != len(header):
        raise DomainError(f"{path}: rows do not match the header width")
    return header, data.reshape(len(body), len(header))


def read_series_csv(path, p=None):
    """Series matrix from a CSV written by ``simulate`` (a leading ``t``
    column is dropped)."""
    header, data = read_csv_table(path)
    if header and header[0] == "t":
        header, data = header[1:], data[:, 1:]
    if p is not None and len(header) != p:
        raise DomainError(f"{path}: expected {p} columns, found {len(header)}")
    return data

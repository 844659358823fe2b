"""CSV serialization with exact float round-trip."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path


class OutputExistsError(FileExistsError):
    pass


def format_value(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(int(value))
    if isinstance(value, float):
        value = float(value)  # numpy float64 subclasses float but reprs differently
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        # shortest representation that parses back to the same double
        return repr(value)
    if hasattr(value, "item"):  # numpy scalars
        return format_value(value.item())
    return str(value)


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    width = len(columns)
    for row in rows:
        if len(row) != width:
            raise ValueError(f"row has {len(row)} values, header has {width}")
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def emit_csv(columns, rows, path, overwrite: bool = False) -> Path:
    """Write a header plus rows as UTF-8 CSV with LF line endings."""
    path = Path(path)
    text = render_csv(columns, rows)
    if path.exists() and not overwrite:
        raise OutputExistsError(f"{path} exists; pass overwrite to replace it")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def read_csv(path) -> tuple[list[str], list[list]]:
    """Parse a CSV written by :func:`emit_csv`; numeric cells become int or float."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [[_parse_cell(v) for v in row] for row in reader]
    return columns, rows


def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text

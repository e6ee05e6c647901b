"""CSV and JSON emitters used by every module.

Each CSV starts with a ``# units:`` comment line followed by a header row.
Floats are written with ``repr`` so reruns are byte-identical.
"""

import csv
import io
import json

import numpy as np


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(header, rows, units):
    """Render rows as CSV text.

    ``units`` maps column name to a unit string; missing names are written
    as ``1`` (dimensionless).
    """
    buf = io.StringIO()
    unit_items = ", ".join(f"{name}={units.get(name, '1')}" for name in header)
    buf.write(f"# units: {unit_items}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, units):
    text = csv_text(header, rows, units)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def read_csv(path):
    """Return (units line, header, rows as strings)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return first, header, rows


def complex_pair(z):
    z = complex(z)
    return [z.real, z.imag]


def dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text

"""Shared delimited-text conventions for manifests, pair tables and outputs.

One header row; tab-delimited if the header contains a tab, else comma.
Outputs are always written with ``\\n`` line endings.
"""

import csv
import io


class TableError(ValueError):
    pass


def sniff_delimiter(header_line):
    return "\t" if "\t" in header_line else ","


def read_table(path, required=()):
    """Parse a delimited file into ``[(line_number, {column: value})]``.

    Blank lines and lines starting with ``#`` are skipped.  An empty file yields
    no rows; a non-empty file must have a header naming every ``required``
    column.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise TableError(f"cannot read {path}: {exc}") from exc
    lines = [
        (i, ln) for i, ln in enumerate(text.splitlines(), start=1)
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not lines:
        return []
    header_no, header = lines[0]
    delim = sniff_delimiter(header)
    columns = [c.strip().lower() for c in next(csv.reader([header], delimiter=delim))]
    missing = [c for c in required if c not in columns]
    if missing:
        raise TableError(f"line {header_no}: header lacks column(s) {', '.join(missing)}")
    rows = []
    for lineno, ln in lines[1:]:
        values = next(csv.reader([ln], delimiter=delim))
        if len(values) > len(columns):
            raise TableError(f"line {lineno}: {len(values)} fields, header has {len(columns)}")
        values += [""] * (len(columns) - len(values))
        rows.append((lineno, dict(zip(columns, values))))
    return rows


def format_table(columns, rows, delimiter=","):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def write_table(path, columns, rows, delimiter=","):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(format_table(columns, rows, delimiter))


def fmt_float(v):
    """Round-trippable float text (shortest repr)."""
    return repr(float(v))

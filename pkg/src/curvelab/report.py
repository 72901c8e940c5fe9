"""Structured residual records and their serialization."""
import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

SCHEMA_VERSION = 1


def fmt_float(x):
    """Fixed 17-significant-digit text for a float; non-finite as strings."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _plain(obj):
    # numpy scalars/arrays -> builtin containers, floats kept as floats
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _encode(o, indent):
    pad = "  " * indent
    if isinstance(o, bool) or o is None:
        return json.dumps(o)
    if isinstance(o, float):
        if math.isfinite(o):
            return fmt_float(o)
        return json.dumps(fmt_float(o))
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{pad}  {json.dumps(k)}: {_encode(v, indent + 1)}"
                 for k, v in sorted(o.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(o, list):
        return "[" + ", ".join(_encode(v, indent + 1) for v in o) + "]"
    return json.dumps(o)


def dumps(obj):
    """Deterministic JSON: sorted keys, floats with 17 significant digits.

    Non-finite floats are written as the strings ``"inf"``, ``"-inf"`` and
    ``"nan"``.
    """
    return _encode(_plain(obj), 0) + "\n"


@dataclass
class CheckReport:
    """Outcome of one numerical inequality or identity check.

    ``worst_residual`` follows the convention *positive means violated*; the
    verdict is ``worst_residual <= tolerance``.
    """

    name: str
    anchor: str
    worst_residual: float
    tolerance: float
    worst_location: Any = None
    detail_table: Optional[list] = None
    params: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        r = float(self.worst_residual)
        if math.isnan(r):
            return False
        return r <= float(self.tolerance)

    @property
    def passed(self) -> bool:
        return self.verdict

    def to_dict(self):
        d = {
            "name": self.name,
            "anchor": self.anchor,
            "worst_residual": float(self.worst_residual),
            "tolerance": float(self.tolerance),
            "location": _plain(self.worst_location),
            "verdict": "pass" if self.verdict else "fail",
        }
        for key in ("K", "N", "t"):
            if key in self.params:
                d[key] = _plain(self.params[key])
        extra = {k: v for k, v in self.params.items() if k not in ("K", "N", "t")}
        if extra:
            d["params"] = _plain(extra)
        if self.notes:
            d["notes"] = list(self.notes)
        if self.detail_table is not None:
            d["detail"] = _plain(self.detail_table)
        return d

    def summary(self):
        mark = "PASS" if self.verdict else "FAIL"
        return (f"[{mark}] {self.name}: worst={fmt_float(self.worst_residual)} "
                f"tol={fmt_float(self.tolerance)} at {self.worst_location}")

    def __str__(self):
        return self.summary()


CSV_COLUMNS = ("name", "anchor", "K", "N", "t", "worst_residual", "location",
               "verdict")


def reports_to_json(reports, **meta):
    payload = {"schema": SCHEMA_VERSION,
               "reports": [r.to_dict() if isinstance(r, CheckReport) else r
                           for r in reports]}
    payload.update(meta)
    return dumps(payload)


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        d = r.to_dict()
        row = []
        for c in CSV_COLUMNS:
            v = d.get(c, "")
            if isinstance(v, float):
                v = fmt_float(v)
            elif isinstance(v, (list, tuple)):
                v = " ".join(str(x) for x in v)
            elif v is None:
                v = ""
            row.append(v)
        w.writerow(row)
    return buf.getvalue()


def table_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt_float(row[c]) if isinstance(row.get(c), (float, np.floating))
                    else row.get(c, "") for c in columns])
    return buf.getvalue()

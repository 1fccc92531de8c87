"""CSV / JSON-lines serialization of shot records and scan points."""
from __future__ import annotations

import csv
import dataclasses
import io
import json

from .analysis import ScanPoint
from .protocol import ShotRecord

RECORD_FIELDS = [f.name for f in dataclasses.fields(ShotRecord)]
_TYPES = {f.name: f.type for f in dataclasses.fields(ShotRecord)}


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def _parse(name, text):
    kind = _TYPES[name]
    if kind == "bool":
        if text not in ("true", "false"):
            raise ValueError(f"bad boolean {text!r} in column {name}")
        return text == "true"
    if kind == "int":
        return int(text)
    return text


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_cell(getattr(r, k)) for k in RECORD_FIELDS])
    return buf.getvalue()


def records_from_csv(text: str) -> list[ShotRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != RECORD_FIELDS:
        raise ValueError(f"unexpected columns {reader.fieldnames}")
    return [ShotRecord(**{k: _parse(k, row[k]) for k in RECORD_FIELDS}) for row in reader]


def records_to_jsonl(records) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def records_from_jsonl(text: str) -> list[ShotRecord]:
    return [ShotRecord(**json.loads(line)) for line in text.splitlines() if line.strip()]


SCAN_FIELDS = ["scheme", "time_s", "errors", "trials", "error_rate", "wilson_low",
               "wilson_high", "model", "model_asymptote", "model_finite"]


def scan_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SCAN_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def scan_from_csv(text: str, scheme: str | None = "nm935") -> list[ScanPoint]:
    points = []
    for row in csv.DictReader(io.StringIO(text)):
        if scheme is not None and row.get("scheme", scheme) != scheme:
            continue
        points.append(ScanPoint(float(row["time_s"]), int(row["errors"]), int(row["trials"])))
    return points

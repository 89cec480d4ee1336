"""Raw input records (id, text, lat, lon) from CSV or JSONL files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass


@dataclass
class RawRecord:
    id: str
    text: str
    lat: float
    lon: float

    def __post_init__(self):
        self.lat = float(self.lat)
        self.lon = float(self.lon)
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"record {self.id!r}: coordinate out of range "
                             f"({self.lat}, {self.lon})")


REQUIRED_COLUMNS = ("id", "text", "lat", "lon")


def read_raw(path: str) -> list:
    """Load raw records; format chosen by extension (.csv or .jsonl)."""
    if str(path).endswith(".jsonl"):
        return _read_jsonl(path)
    return _read_csv(path)


def _read_csv(path: str) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"CSV missing required columns: {missing}")
        for rownum, row in enumerate(reader, start=2):
            try:
                out.append(RawRecord(id=row["id"], text=row["text"] or "",
                                     lat=row["lat"], lon=row["lon"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"bad record at line {rownum}: {exc}") from exc
    return out


def _read_jsonl(path: str) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(RawRecord(id=rec["id"], text=rec.get("text") or "",
                                     lat=rec["lat"], lon=rec["lon"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"bad record at line {lineno}: {exc}") from exc
    return out

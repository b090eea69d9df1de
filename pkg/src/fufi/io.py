"""Dataset directory format.

A dataset directory holds ``manifest.json``, ``flows.bin`` (little-endian
float32, row-major, sample-major), ``externals.csv`` (one row per sample,
``ticket_price`` empty when absent) and optionally ``geo.bin``.
"""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .errors import DatasetFormatError
from .grid import ExternalRecord, FlowDataset, GeoFeatureStack

FORMAT_VERSION = 1
DTYPES = {"f32le": np.dtype("<f4")}
EXTERNAL_COLUMNS = [
    "timestamp_iso8601",
    "day_of_week",
    "hour_of_day",
    "weather_id",
    "temperature_c",
    "wind_speed_mph",
    "is_holiday",
    "ticket_price",
]


def _dtype(tag):
    try:
        return DTYPES[tag]
    except KeyError:
        raise DatasetFormatError(f"unknown dtype tag {tag!r}; supported: {sorted(DTYPES)}") from None


def _write_payload(path, arr):
    np.ascontiguousarray(arr, dtype=DTYPES["f32le"]).tofile(path)


def _read_payload(path, shape, tag):
    dtype = _dtype(tag)
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise DatasetFormatError(
            f"size mismatch in {os.path.basename(path)}: manifest shape {list(shape)} needs {expected} bytes, file has {actual}"
        )
    return np.fromfile(path, dtype=dtype).reshape(shape).astype(np.float32)


def save_dataset(ds: FlowDataset, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    columns = EXTERNAL_COLUMNS if ds.externals is not None else EXTERNAL_COLUMNS[:1]
    manifest = {
        "format_version": FORMAT_VERSION,
        "shape": list(ds.flows.shape),
        "dtype": "f32le",
        "order": "row-major",
        "interval_minutes": int(ds.interval_minutes),
        "external_columns": columns,
        "weather_vocab": int(ds.weather_vocab),
        "has_ticket_price": bool(ds.has_ticket_price),
        "upscale_n": ds.upscale_n,
    }
    _write_payload(os.path.join(directory, "flows.bin"), ds.flows)
    if ds.geo is not None:
        raw = ds.geo.raw
        manifest["geo"] = {"shape": list(raw.shape), "poi_channels": int(ds.geo.poi_density.shape[0]), "dtype": "f32le"}
        _write_payload(os.path.join(directory, "geo.bin"), raw)
    with open(os.path.join(directory, "externals.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for t, ts in enumerate(ds.timestamps):
            row = [str(ts)]
            if ds.externals is not None:
                rec = ds.externals[t]
                row += [
                    rec.day_of_week,
                    rec.hour_of_day,
                    rec.weather_id,
                    repr(float(rec.temperature_c)),
                    repr(float(rec.wind_speed_mph)),
                    rec.is_holiday,
                    "" if rec.ticket_price is None else repr(float(rec.ticket_price)),
                ]
            writer.writerow(row)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def parse_external_row(row: dict) -> ExternalRecord:
    """Build an :class:`ExternalRecord` from a CSV/JSON row of strings or numbers."""
    price = row.get("ticket_price")
    return ExternalRecord(
        day_of_week=int(row["day_of_week"]),
        hour_of_day=int(row["hour_of_day"]),
        weather_id=int(row["weather_id"]),
        temperature_c=float(row["temperature_c"]),
        wind_speed_mph=float(row["wind_speed_mph"]),
        is_holiday=int(row["is_holiday"]),
        ticket_price=None if price in (None, "") else float(price),
    )


def load_dataset(directory) -> FlowDataset:
    try:
        with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DatasetFormatError(f"{directory} has no manifest.json") from None
    for key in ("shape", "dtype", "order", "interval_minutes", "external_columns"):
        if key not in manifest:
            raise DatasetFormatError(f"manifest is missing {key!r}")
    if manifest["order"] != "row-major":
        raise DatasetFormatError(f"unsupported order {manifest['order']!r}")
    shape = tuple(int(v) for v in manifest["shape"])
    if len(shape) != 3:
        raise DatasetFormatError(f"manifest shape must be [T, H, W], got {list(shape)}")
    flows = _read_payload(os.path.join(directory, "flows.bin"), shape, manifest["dtype"])

    with open(os.path.join(directory, "externals.csv"), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != shape[0]:
        raise DatasetFormatError(f"alignment check failed: {shape[0]} samples but {len(rows)} external rows")
    timestamps = np.array([r["timestamp_iso8601"] for r in rows], dtype="datetime64[s]")
    columns = manifest["external_columns"]
    externals = None
    if len(columns) > 1:
        missing = set(EXTERNAL_COLUMNS) - set(columns)
        if missing:
            raise DatasetFormatError(f"external_columns lacks {sorted(missing)}")
        externals = [parse_external_row(r) for r in rows]

    geo = None
    if "geo" in manifest:
        g = manifest["geo"]
        raw = _read_payload(os.path.join(directory, "geo.bin"), tuple(g["shape"]), g.get("dtype", "f32le"))
        c_poi = int(g["poi_channels"])
        geo = GeoFeatureStack(raw[:c_poi], raw[c_poi:])

    try:
        return FlowDataset(
            flows=flows,
            timestamps=timestamps,
            interval_minutes=int(manifest["interval_minutes"]),
            externals=externals,
            geo=geo,
            weather_vocab=int(manifest.get("weather_vocab", 16)),
            has_ticket_price=bool(manifest.get("has_ticket_price", False)),
            upscale_n=manifest.get("upscale_n"),
        )
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from exc

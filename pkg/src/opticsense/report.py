"""Report documents: deterministic JSON payload, CSV tables, atomic writes."""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REPORT_FORMAT = "opticsense-report"
REPORT_VERSION = 1


def plain(obj):
    """Convert numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


@dataclass
class Report:
    """One run's results.  ``timestamp`` is the only wall-clock field."""

    kind: str
    payload: dict = field(default_factory=dict)
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION, "kind": self.kind,
                "timestamp": self.timestamp, "payload": plain(self.payload)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def payload_json(self) -> str:
        """Canonical payload text; equal across identical runs."""
        return json.dumps(plain(self.payload), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        if data.get("format") != REPORT_FORMAT:
            raise ValueError("not a report document")
        if data.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {data.get('version')!r}")
        return cls(data["kind"], data["payload"], data.get("timestamp", ""))

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))


def now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def atomic_write(path, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(rows: list[dict], columns: list[str] | None = None) -> str:
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _cell(v):
    v = plain(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary_text(payload: dict) -> str:
    """Human-readable digest of a simulate payload."""
    lines = []
    lay = payload.get("layer", {})
    if lay:
        lines.append(
            f"layer      {lay['kind']} K={lay['kernel_size']} {lay['in_channels']}x"
            f"{lay['in_height']}x{lay['in_width']} -> {lay['out_channels']} ch, "
            f"stride {lay['stride']} pad {lay['padding']}")
    sch = payload.get("schedule", {})
    if sch:
        lines.append(f"schedule   {sch['total_cycles']} cycles, {sch['remap_count']} rounds, "
                     f"utilization {sch['utilization']:.4f}, {sch['macs_per_cycle']} MACs/cycle")
    perf = payload.get("perf", {})
    if perf:
        lines.append(f"latency    {perf['latency'] * 1e6:.3f} us "
                     f"(compute {perf['compute_latency'] * 1e6:.3f}, tuning "
                     f"{perf['tuning_latency'] * 1e6:.3f})")
        lines.append(f"energy     {perf['energy'] * 1e6:.4f} uJ, frame rate "
                     f"{perf['frame_rate']:.1f} fps, {perf['power_per_pixel'] * 1e6:.4g} uW/pixel")
        lines.append(f"throughput {perf['throughput'] / 1e12:.4g} TOp/s, efficiency "
                     f"{perf['efficiency'] / 1e12:.4g} TOp/s/W ({perf['ops_accounting']})")
    ev = payload.get("eval")
    if ev:
        lines.append(f"accuracy   {ev['accuracy']:.4f} ({ev['correct']}/{ev['total']}) "
                     f"{ev['config_id']} mode={ev['mode']} seed={ev['seed']}")
    for name, ok in sorted(payload.get("checks", {}).items()):
        lines.append(f"check      {name}: {'ok' if ok else 'FAILED'}")
    return "\n".join(lines) + "\n"

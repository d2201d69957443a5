"""On-disk layout of a run, and replay from it.

A run directory holds::

    spec.json            configuration snapshot
    observations.jsonl   one Observation per line, in acquisition order
    decisions.jsonl      one BO decision per line
    ledger.jsonl         latency ledger entries
    metrics.csv          ReconReport rows
    curve_<name>.csv     learning curves, benchmark tables, spectra summaries
    events.jsonl         feedback events
    fields/<name>.*      images as JSON header + float32 raw + 8-bit PGM
    models.json          fitted models
    summary.json         status and headline numbers
    manifest.json        every file above with its size and sha256

Files are written only when the record has content for them.  Every writer is
deterministic, so writing the same record twice gives identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Callable, Iterator

from ..feedback import FeedbackEvent, events_to_jsonl
from ..fields import read_field, write_field
from ..ledger import LatencyLedger
from ..recon import REPORT_COLUMNS, ReconReport
from ..scope import Observation, observations_from_jsonl, observations_to_jsonl
from .runner import RunRecord

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


class ChecksumError(IOError):
    """A file listed in a manifest is missing or does not match its checksum."""


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _read_csv(text: str) -> list[dict]:
    return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO(text))]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _artifact_class(rel: str) -> str:
    if rel.startswith("fields/"):
        return "image"
    return {
        "spec.json": "spec",
        "observations.jsonl": "observations",
        "decisions.jsonl": "decisions",
        "ledger.jsonl": "ledger",
        "metrics.csv": "metrics",
        "events.jsonl": "events",
        "models.json": "models",
        "summary.json": "summary",
    }.get(rel, "curve" if rel.startswith("curve_") else "other")


def write_outputs(record: RunRecord, out_dir) -> Path:
    """Write ``record`` under ``out_dir`` and return the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        texts: dict[str, str] = {"spec.json": _dumps(record.spec)}
        if record.observations:
            texts["observations.jsonl"] = observations_to_jsonl(record.observations)
        if record.decisions:
            texts["decisions.jsonl"] = _jsonl(record.decisions)
        if record.ledger.entries:
            texts["ledger.jsonl"] = _jsonl(record.ledger.to_rows())
        if record.reports:
            texts["metrics.csv"] = _csv([r.row() for r in record.reports], REPORT_COLUMNS)
        for name, rows in sorted(record.curves.items()):
            if rows:
                texts[f"curve_{name}.csv"] = _csv(rows, rows[0].keys())
        if record.events:
            texts["events.jsonl"] = events_to_jsonl(record.events)
        if record.models:
            texts["models.json"] = _dumps(record.models)
        if record.summary or record.status != "ok":
            texts["summary.json"] = _dumps({"status": record.status, "error": record.error,
                                            "summary": record.summary})
        written = []
        for rel, text in texts.items():
            (out / rel).write_text(text)
            written.append(rel)
        if record.fields:
            (out / "fields").mkdir(exist_ok=True)
            for name, fld in sorted(record.fields.items()):
                for p in write_field(fld, out / "fields" / name, name=name):
                    written.append(p.relative_to(out).as_posix())
        files = [{"path": rel, "class": _artifact_class(rel), "bytes": (out / rel).stat().st_size,
                  "sha256": _sha256(out / rel)} for rel in sorted(written)]
        manifest = out / MANIFEST
        manifest.write_text(_dumps({"format": FORMAT_VERSION, "files": files}))
    except OSError as exc:
        raise OSError(f"writing run outputs to {out}: {exc}") from exc
    return manifest


def artifact_classes(manifest_path) -> set[str]:
    data = json.loads(Path(manifest_path).read_text())
    return {f["class"] for f in data["files"]}


def verify(manifest_path) -> list[dict]:
    """Check every listed file; raises :class:`ChecksumError` naming the first bad one."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    data = json.loads(manifest_path.read_text())
    for entry in data["files"]:
        path = root / entry["path"]
        if not path.exists():
            raise ChecksumError(f"{entry['path']}: listed in manifest but missing")
        if _sha256(path) != entry["sha256"]:
            raise ChecksumError(f"{entry['path']}: checksum mismatch")
    return data["files"]


def replay(manifest_path) -> RunRecord:
    """Rebuild the RunRecord stored next to ``manifest_path``, after verifying checksums."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST
    files = verify(manifest_path)
    root = manifest_path.parent
    present = {f["path"] for f in files}

    def text(rel):
        return (root / rel).read_text() if rel in present else None

    record = RunRecord(spec=json.loads(text("spec.json")))
    if (t := text("observations.jsonl")) is not None:
        record.observations = observations_from_jsonl(t)
    if (t := text("decisions.jsonl")) is not None:
        record.decisions = [json.loads(line) for line in t.splitlines()]
    if (t := text("ledger.jsonl")) is not None:
        record.ledger = LatencyLedger.from_rows(json.loads(line) for line in t.splitlines())
    if (t := text("metrics.csv")) is not None:
        record.reports = [ReconReport(str(r["method"]), float(r["rmse"]), float(r["psnr"]),
                                      float(r["frac_sampled"]), int(r["n_obs"]),
                                      None if r["seed"] == "" else int(r["seed"]))
                          for r in _read_csv(t)]
    for rel in sorted(present):
        if rel.startswith("curve_") and rel.endswith(".csv"):
            record.curves[rel[len("curve_"):-len(".csv")]] = _read_csv(text(rel))
    if (t := text("events.jsonl")) is not None:
        record.events = [FeedbackEvent.from_dict(json.loads(line)) for line in t.splitlines()]
    if (t := text("models.json")) is not None:
        record.models = json.loads(t)
    if (t := text("summary.json")) is not None:
        s = json.loads(t)
        record.status, record.error, record.summary = s["status"], s["error"], s["summary"]
    for rel in sorted(present):
        if rel.startswith("fields/") and rel.endswith(".json"):
            name = rel[len("fields/"):-len(".json")]
            record.fields[name] = read_field(root / "fields" / name)
    return record


def stream(record: RunRecord, wait: Callable[[float], None] | None = None) -> Iterator[list[Observation]]:
    """Re-emit stored observations one logical line at a time, in ``t_sim`` order.

    ``wait`` is called with the simulated gap before each line, so a consumer can
    pace delivery however it likes; nothing here sleeps.
    """
    obs = sorted(record.observations, key=lambda o: o.t_sim)
    t_prev = obs[0].t_sim if obs else 0.0
    buf: list[Observation] = []
    for o in obs:
        if buf and o.line != buf[-1].line:
            yield buf
            buf = []
        if not buf and wait is not None:
            wait(o.t_sim - t_prev)
        if not buf:
            t_prev = o.t_sim
        buf.append(o)
    if buf:
        yield buf

"""Artifact plumbing: deterministic CSV/JSON emission and run manifests.

CSV files use a fixed column order and 17 significant digits so identical
runs produce byte-identical artifacts. JSON payloads carry a schema tag.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

MANIFEST_SCHEMA = "reentrain.manifest/1"


class ArtifactError(OSError):
    """I/O failure while writing an artifact, annotated with the path."""


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def write_csv(path: str, rows: Sequence[dict], columns: Sequence[str]):
    """Write ``rows`` (dicts) using the fixed ``columns`` order.

    Floats are emitted with 17 significant digits; an empty row list still
    produces the header so downstream readers see the schema.
    """
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in columns])
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc


def read_csv(path: str) -> list[dict]:
    """Read a CSV written by :func:`write_csv`; numbers become floats."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            out = []
            for row in reader:
                parsed = {}
                for key, val in row.items():
                    if val in ("true", "false"):
                        parsed[key] = val == "true"
                    else:
                        try:
                            parsed[key] = float(val)
                        except ValueError:
                            parsed[key] = val
                out.append(parsed)
            return out
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc


def write_json(path: str, payload: dict):
    try:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc


def read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc


@dataclass
class Manifest:
    """Resolved configuration echoed next to every artifact bundle."""

    experiment: str
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    status: str = "ok"
    error: Optional[str] = None

    def save(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        payload = dict(schema=MANIFEST_SCHEMA, **asdict(self))
        write_json(os.path.join(out_dir, "manifest.json"), payload)

    @classmethod
    def load(cls, out_dir: str) -> "Manifest":
        payload = read_json(os.path.join(out_dir, "manifest.json"))
        if payload.pop("schema", None) != MANIFEST_SCHEMA:
            raise ArtifactError(f"unrecognized manifest schema in {out_dir}")
        return cls(**payload)

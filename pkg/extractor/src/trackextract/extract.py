"""Run encoders over a sequence table and emit track files plus a manifest.

Outputs follow the consumer's wire formats exactly: track files are
"BLF1"-magic binaries (u8 modality code, u32 length, u32 dim, little-endian
float32 payload) and the manifest is the documented JSON schema, so the
training toolkit can load the results directly.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import EXPECTED_DIMS
from .sequences import (
    InternalStopError,
    SequenceError,
    normalize_mrna,
    to_dna,
    translate_cds,
    truncate_in_frame,
)

__all__ = ["ExtractionJob", "ExtractionLog", "run_extraction", "write_track_file"]

_MAGIC = b"BLF1"
_HEADER = struct.Struct("<4sBII")
_MODALITY_CODES = {"dna": 0, "rna": 1, "protein": 2}
_SPLITS = ("train", "val", "test")


def write_track_file(path, modality_key: str, values: np.ndarray) -> None:
    """Serialize one embedding matrix in the track wire format."""
    values = np.asarray(values)
    if values.ndim != 2 or values.size == 0:
        raise ValueError(f"track values must be a non-empty 2-d matrix, got {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("track values must be finite")
    length, dim = values.shape
    header = _HEADER.pack(_MAGIC, _MODALITY_CODES[modality_key], length, dim)
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


@dataclass
class SequenceRow:
    row_id: str
    sequence: str
    label: float
    split: str | None = None


@dataclass
class ExtractionJob:
    """Input table plus model identifiers and the truncation policy."""

    rows: list
    task: str = "regression"
    max_nt: int = 999  # longest kept mRNA, in-frame; upstream models top out near 1k tokens
    dataset_name: str = "extracted"

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.max_nt < 3:
            raise ValueError(f"max_nt must be >= 3, got {self.max_nt}")
        if not self.rows:
            raise ValueError("extraction job has no input rows")

    @classmethod
    def from_csv(cls, path, task: str = "regression", max_nt: int = 999,
                 dataset_name: str | None = None) -> "ExtractionJob":
        """Read (id, sequence, label[, split]) rows from a headered CSV."""
        path = Path(path)
        rows = []
        with path.open(newline="") as handle:
            reader = csv.DictReader(handle)
            needed = {"id", "sequence", "label"}
            if reader.fieldnames is None or not needed <= set(reader.fieldnames):
                raise ValueError(f"{path}: CSV needs columns id, sequence, label")
            for entry in reader:
                split = entry.get("split") or None
                if split is not None and split not in _SPLITS:
                    raise ValueError(f"{path}: unknown split {split!r} for row {entry['id']}")
                rows.append(SequenceRow(row_id=str(entry["id"]), sequence=entry["sequence"],
                                        label=float(entry["label"]), split=split))
        return cls(rows=rows, task=task, max_nt=max_nt,
                   dataset_name=dataset_name or path.stem)


@dataclass
class ExtractionLog:
    kept: int = 0
    skipped: list = field(default_factory=list)  # {id, reason}
    dim_warnings: list = field(default_factory=list)
    observed_dims: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kept": self.kept, "skipped": self.skipped,
                "dim_warnings": self.dim_warnings, "observed_dims": self.observed_dims}


def _derive_sequences(raw: str, max_nt: int) -> tuple[str, str, str]:
    mrna = truncate_in_frame(normalize_mrna(raw), max_nt)
    dna = to_dna(mrna)
    protein = translate_cds(mrna)
    return mrna, dna, protein


def run_extraction(job: ExtractionJob, encoders: dict, out_dir) -> tuple[Path, ExtractionLog]:
    """Encode every row's three tracks; returns (manifest path, log).

    Rows that fail validation or carry an in-frame stop are recorded in the
    log and skipped. Rows without an explicit split fall into the 80/20
    train/test index rule. Observed embedding widths land in the manifest's
    provenance; deviations from the documented checkpoint widths are logged
    as warnings, not errors.
    """
    missing = set(_MODALITY_CODES) - set(encoders)
    if missing:
        raise ValueError(f"encoders missing for modalities: {sorted(missing)}")
    out_dir = Path(out_dir)
    tracks_dir = out_dir / "tracks"
    tracks_dir.mkdir(parents=True, exist_ok=True)

    log = ExtractionLog()
    samples = []
    for index, row in enumerate(job.rows):
        try:
            mrna, dna, protein = _derive_sequences(row.sequence, job.max_nt)
        except InternalStopError as exc:
            log.skipped.append({"id": row.row_id, "reason": str(exc)})
            continue
        except SequenceError as exc:
            log.skipped.append({"id": row.row_id, "reason": str(exc)})
            continue

        content = {"dna": dna, "rna": mrna, "protein": protein}
        paths = {}
        for key in ("dna", "rna", "protein"):
            values = encoders[key].encode(content[key])
            dim = values.shape[1]
            previous = log.observed_dims.setdefault(key, dim)
            if previous != dim:
                raise ValueError(f"{key} encoder changed width mid-run: {previous} -> {dim}")
            rel = f"tracks/{row.row_id}_{key}.blf"
            write_track_file(out_dir / rel, key, values)
            paths[key] = rel
        split = row.split or ("test" if index % 5 == 4 else "train")
        samples.append({"id": row.row_id, "label": row.label, "split": split,
                        "tracks": paths})
        log.kept += 1

    if not samples:
        raise ValueError("every input row was skipped; nothing to write")
    for key, dim in log.observed_dims.items():
        if dim != EXPECTED_DIMS[key]:
            log.dim_warnings.append(
                f"{key}: observed dim {dim} != documented checkpoint dim {EXPECTED_DIMS[key]}")

    manifest = {
        "name": job.dataset_name,
        "task": job.task,
        "samples": samples,
        "provenance": {
            "models": {key: encoders[key].model_id for key in ("dna", "rna", "protein")},
            "observed_dims": log.observed_dims,
            "max_nt": job.max_nt,
        },
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (out_dir / "extraction_log.json").write_text(
        json.dumps(log.to_dict(), indent=2, sort_keys=True))
    return manifest_path, log

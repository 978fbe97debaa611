"""Track persistence, dataset manifests, batching, and synthetic data.

Track files use a small fixed binary layout:

    magic   4 bytes  b"BLF1"
    code    u8       modality (0=DNA, 1=RNA, 2=PROTEIN)
    length  u32 LE   token count
    dim     u32 LE   embedding width
    payload length * dim little-endian float32, row-major

Floats are stored at 32-bit precision and widened to 64-bit on load.
Manifests are JSON documents listing, per sample, a label, a split
assignment, and one track file per modality.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import EmbeddingTrack, Modality

__all__ = [
    "TrackFormatError",
    "ManifestError",
    "write_track",
    "read_track",
    "SampleRecord",
    "DatasetManifest",
    "load_manifest",
    "SyntheticSpec",
    "make_synthetic",
    "SampleData",
    "Batch",
    "batch_iter",
    "load_split",
]

MAGIC = b"BLF1"
_HEADER = struct.Struct("<4sBII")
_U32_MAX = 2**32 - 1

TRACK_KEYS = ("dna", "rna", "protein")
_KEY_TO_MODALITY = {"dna": Modality.DNA, "rna": Modality.RNA, "protein": Modality.PROTEIN}
SPLITS = ("train", "val", "test")


class TrackFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def write_track(path, track: EmbeddingTrack) -> None:
    if track.length > _U32_MAX or track.dim > _U32_MAX:
        raise TrackFormatError(f"dim/length overflow: {track.length} x {track.dim}")
    payload = np.ascontiguousarray(track.values, dtype="<f4").tobytes()
    header = _HEADER.pack(MAGIC, track.modality.code, track.length, track.dim)
    Path(path).write_bytes(header + payload)


def read_track(path) -> EmbeddingTrack:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TrackFormatError(f"{path}: truncated payload (no complete header)")
    magic, code, length, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TrackFormatError(f"{path}: bad magic {magic!r}")
    expected = 4 * length * dim
    body = raw[_HEADER.size:]
    if len(body) != expected:
        kind = "truncated payload" if len(body) < expected else "oversized payload"
        raise TrackFormatError(f"{path}: {kind} ({len(body)} bytes, expected {expected})")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(length, dim)
    return EmbeddingTrack(modality=Modality.from_code(code), values=values)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass
class SampleRecord:
    sample_id: str
    label: float
    split: str
    tracks: dict  # key in TRACK_KEYS -> relative file path

    def to_dict(self) -> dict:
        return {"id": self.sample_id, "label": self.label, "split": self.split,
                "tracks": dict(self.tracks)}


@dataclass
class DatasetManifest:
    name: str
    task: str  # "regression" | "classification"
    samples: list
    provenance: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.task not in ("regression", "classification"):
            raise ManifestError(f"unknown task {self.task!r}")
        seen = set()
        for rec in self.samples:
            if rec.sample_id in seen:
                raise ManifestError(f"duplicate sample id {rec.sample_id!r}")
            seen.add(rec.sample_id)
            if rec.split not in SPLITS:
                raise ManifestError(f"sample {rec.sample_id}: unknown split {rec.split!r}")
            if set(rec.tracks) != set(TRACK_KEYS):
                raise ManifestError(
                    f"sample {rec.sample_id}: needs exactly one track per modality "
                    f"{TRACK_KEYS}, got {sorted(rec.tracks)}")
            if not np.isfinite(rec.label):
                raise ManifestError(f"sample {rec.sample_id}: non-finite label")
            if self.task == "classification" and rec.label != int(rec.label):
                raise ManifestError(f"sample {rec.sample_id}: class label {rec.label} not integral")

    def split_samples(self, split: str) -> list:
        return [rec for rec in self.samples if rec.split == split]

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "task": self.task,
            "samples": [rec.to_dict() for rec in self.samples],
            "provenance": self.provenance,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetManifest":
        known = {"name", "task", "samples", "provenance"}
        unknown = set(doc) - known
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        samples = []
        for entry in doc.get("samples", []):
            extra = set(entry) - {"id", "label", "split", "tracks"}
            if extra:
                raise ManifestError(f"sample {entry.get('id')}: unknown keys {sorted(extra)}")
            samples.append(SampleRecord(
                sample_id=str(entry["id"]), label=float(entry["label"]),
                split=str(entry["split"]), tracks=dict(entry["tracks"]),
            ))
        manifest = cls(name=str(doc.get("name", "")), task=str(doc.get("task", "")),
                       samples=samples, provenance=dict(doc.get("provenance", {})))
        manifest.validate()
        return manifest


def load_manifest(path) -> tuple[DatasetManifest, Path]:
    """Load and validate a manifest; returns it with its base directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    return DatasetManifest.from_dict(doc), path.parent


# ---------------------------------------------------------------------------
# synthetic planted-modality datasets
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Recipe for a dataset whose label depends on exactly one modality.

    Each sample draws a per-codon latent signal; the planted modality's
    track embeds that signal along a fixed direction (plus optional noise)
    while the other two tracks are pure noise. The label is the mean of the
    latent signal (regression) or its tercile bin (classification), so only
    the planted track is informative.
    """

    n_samples: int
    t_prime_range: tuple = (8, 16)
    dims: dict = field(default_factory=lambda: {"dna": 32, "rna": 24, "protein": 16})
    planted: str = "rna"
    noise_scale: float = 0.5
    task: str = "regression"
    seed: int = 0

    _FIELDS = ("n_samples", "t_prime_range", "dims", "planted", "noise_scale", "task", "seed")

    def __post_init__(self):
        if self.planted not in TRACK_KEYS:
            raise ManifestError(f"planted modality must be one of {TRACK_KEYS}, got {self.planted!r}")
        if self.task not in ("regression", "classification"):
            raise ManifestError(f"unknown task {self.task!r}")
        lo, hi = self.t_prime_range
        if not (2 <= lo <= hi):
            raise ManifestError(f"bad t_prime_range {self.t_prime_range}")
        if set(self.dims) != set(TRACK_KEYS):
            raise ManifestError(f"dims must name exactly {TRACK_KEYS}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        unknown = set(doc) - set(cls._FIELDS)
        if unknown:
            raise ManifestError(f"unknown synthetic-spec keys: {sorted(unknown)}")
        if "n_samples" not in doc:
            raise ManifestError("synthetic spec needs n_samples")
        kwargs = dict(doc)
        if "t_prime_range" in kwargs:
            kwargs["t_prime_range"] = tuple(kwargs["t_prime_range"])
        return cls(**kwargs)


# per-codon jitter around the sample-level signal; keeps the latent genuinely
# positional while the label stays an easy linear functional
_LATENT_JITTER = 0.25
_TERCILES = (-0.430727, 0.430727)  # standard normal tercile boundaries


def _dna_token_signal(z: np.ndarray, n_tokens: int) -> np.ndarray:
    """Each 6-mer token averages the latent of the (up to) two codons it spans."""
    sig = np.empty(n_tokens)
    for k in range(n_tokens):
        span = z[2 * k:2 * k + 2]
        sig[k] = span.mean() if span.size else z[-1]
    return sig


def _planted_direction(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0,)))
    direction = rng.standard_normal(spec.dims[spec.planted])
    return direction / np.linalg.norm(direction)


def _generate_sample(spec: SyntheticSpec, direction: np.ndarray, index: int,
                     noise_stream: int = 1) -> tuple[float, dict]:
    """Build one sample's label and tracks.

    The latent signal (and hence the label) and the track noise come from
    separate seeded streams, so regenerating with a different noise stream
    changes every track's noise but never the label.
    """
    latent_rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(index, 0)))
    noise_rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(index, noise_stream)))

    lo, hi = spec.t_prime_range
    t_prime = int(latent_rng.integers(lo, hi + 1))
    total_nt = 3 * t_prime
    lengths = {"dna": (total_nt + 5) // 6, "rna": total_nt, "protein": t_prime}

    z = latent_rng.standard_normal() + _LATENT_JITTER * latent_rng.standard_normal(t_prime)
    label = float(z.mean())
    if spec.task == "classification":
        label = float(np.searchsorted(_TERCILES, label))

    tracks = {}
    for key in TRACK_KEYS:
        values = noise_rng.standard_normal((lengths[key], spec.dims[key]))
        if key == spec.planted:
            if key == "rna":
                signal = np.repeat(z, 3)
            elif key == "protein":
                signal = z
            else:
                signal = _dna_token_signal(z, lengths["dna"])
            values = signal[:, None] * direction[None, :] + spec.noise_scale * values
        tracks[key] = EmbeddingTrack(modality=_KEY_TO_MODALITY[key], values=values)
    return label, tracks


def make_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Generate track files plus a manifest; returns the manifest path.

    Samples are assigned 80/20 to train/test by index (every fifth sample is
    test). All randomness flows from the spec seed, so identical specs
    produce byte-identical outputs.
    """
    out_dir = Path(out_dir)
    tracks_dir = out_dir / "tracks"
    tracks_dir.mkdir(parents=True, exist_ok=True)
    direction = _planted_direction(spec)

    records = []
    for i in range(spec.n_samples):
        label, tracks = _generate_sample(spec, direction, i)
        sample_id = f"sample_{i:05d}"
        paths = {}
        for key in TRACK_KEYS:
            rel = f"tracks/{sample_id}_{key}.blf"
            write_track(out_dir / rel, tracks[key])
            paths[key] = rel
        split = "test" if i % 5 == 4 else "train"
        records.append(SampleRecord(sample_id=sample_id, label=label, split=split, tracks=paths))

    manifest = DatasetManifest(
        name=f"synthetic-{spec.planted}-{spec.task}",
        task=spec.task,
        samples=records,
        provenance={"generator": "planted-modality", "planted": spec.planted,
                    "noise_scale": spec.noise_scale, "seed": spec.seed},
    )
    manifest.validate()
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(manifest.to_json())
    return manifest_path


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class SampleData:
    sample_id: str
    label: float
    tracks: dict  # Modality -> EmbeddingTrack


@dataclass
class Batch:
    samples: list  # of SampleData

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples])

    def padded(self, modality: Modality) -> tuple[np.ndarray, np.ndarray]:
        """Stack one modality right-padded to the batch max length.

        Returns (B, max_len, dim) values and a (B, max_len) validity mask;
        all-equal lengths give an all-true mask.
        """
        arrs = [s.tracks[modality].values for s in self.samples]
        max_len = max(a.shape[0] for a in arrs)
        dim = arrs[0].shape[1]
        out = np.zeros((len(arrs), max_len, dim))
        mask = np.zeros((len(arrs), max_len), dtype=bool)
        for i, a in enumerate(arrs):
            out[i, :a.shape[0]] = a
            mask[i, :a.shape[0]] = True
        return out, mask

    def codon_mask(self) -> np.ndarray:
        """(B, max T') validity mask in the protein frame."""
        _, mask = self.padded(Modality.PROTEIN)
        return mask


def _load_sample(rec: SampleRecord, base_dir: Path, cache: dict | None) -> SampleData:
    if cache is not None and rec.sample_id in cache:
        return cache[rec.sample_id]
    tracks = {}
    for key in TRACK_KEYS:
        path = base_dir / rec.tracks[key]
        if not path.exists():
            raise ManifestError(f"sample {rec.sample_id}: missing track file {path}")
        tracks[_KEY_TO_MODALITY[key]] = read_track(path)
    data = SampleData(sample_id=rec.sample_id, label=rec.label, tracks=tracks)
    if cache is not None:
        cache[rec.sample_id] = data
    return data


def load_split(manifest: DatasetManifest, base_dir, split: str, cache: dict | None = None) -> list:
    """Load a split's samples in manifest order."""
    base_dir = Path(base_dir)
    return [_load_sample(rec, base_dir, cache) for rec in manifest.split_samples(split)]


def iter_record_batches(records, base_dir, batch_size: int, seed,
                        cache: dict | None = None):
    """Shuffled batches over an explicit record list; partial tail kept."""
    if not records:
        raise ManifestError("cannot batch an empty record list")
    if batch_size < 1:
        raise ManifestError(f"batch_size must be positive, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(records))
    base_dir = Path(base_dir)
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        yield Batch(samples=[_load_sample(rec, base_dir, cache) for rec in chunk])


def batch_iter(manifest: DatasetManifest, base_dir, split: str, batch_size: int,
               seed: int, cache: dict | None = None):
    """Yield shuffled batches of a split; the final partial batch is kept."""
    records = manifest.split_samples(split)
    if not records:
        raise ManifestError(f"split {split!r} is empty")
    yield from iter_record_batches(records, base_dir, batch_size, seed, cache)

"""Track file round-trips, manifest validation, synthetic data, batching."""

import json

import numpy as np
import pytest

from codonfusion.alignment import EmbeddingTrack, Modality
from codonfusion.metrics import spearman
from codonfusion.trackio import (
    DatasetManifest,
    ManifestError,
    SampleRecord,
    SyntheticSpec,
    TrackFormatError,
    _generate_sample,
    _planted_direction,
    batch_iter,
    load_manifest,
    load_split,
    make_synthetic,
    read_track,
    write_track,
)


class TestTrackFormat:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((7, 5)).astype(np.float32).astype(np.float64)
        track = EmbeddingTrack(modality=Modality.RNA, values=values)
        path = tmp_path / "t.blf"
        write_track(path, track)
        back = read_track(path)
        assert back.modality is Modality.RNA
        assert back.values.dtype == np.float64
        np.testing.assert_array_equal(back.values, values)
        # writing the loaded track again produces identical bytes
        path2 = tmp_path / "t2.blf"
        write_track(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.blf"
        write_track(path, EmbeddingTrack(Modality.DNA, np.ones((2, 2))))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(TrackFormatError, match="bad magic"):
            read_track(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.blf"
        write_track(path, EmbeddingTrack(Modality.DNA, np.ones((3, 2))))
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(TrackFormatError, match="truncated payload"):
            read_track(path)

    def test_header_only_file(self, tmp_path):
        path = tmp_path / "header.blf"
        path.write_bytes(b"BLF")
        with pytest.raises(TrackFormatError, match="truncated payload"):
            read_track(path)


class TestManifest:
    def _sample(self, i, split="train", tracks=None):
        tracks = tracks or {"dna": f"d{i}", "rna": f"r{i}", "protein": f"p{i}"}
        return SampleRecord(sample_id=f"s{i}", label=float(i), split=split, tracks=tracks)

    def test_round_trip(self):
        manifest = DatasetManifest(name="demo", task="regression",
                                   samples=[self._sample(0), self._sample(1, "test")])
        doc = json.loads(manifest.to_json())
        back = DatasetManifest.from_dict(doc)
        assert back.name == "demo"
        assert len(back.samples) == 2

    def test_missing_modality_rejected(self):
        bad = self._sample(0, tracks={"dna": "d", "rna": "r"})
        with pytest.raises(ManifestError, match="one track per modality"):
            DatasetManifest(name="x", task="regression", samples=[bad]).validate()

    def test_non_integral_class_label_rejected(self):
        rec = self._sample(0)
        rec.label = 0.5
        with pytest.raises(ManifestError, match="not integral"):
            DatasetManifest(name="x", task="classification", samples=[rec]).validate()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ManifestError, match="unknown manifest keys"):
            DatasetManifest.from_dict({"name": "x", "task": "regression",
                                       "samples": [], "surprise": 1})


class TestSynthetic:
    def test_seed_reproduces_files_bytewise(self, tmp_path):
        spec = SyntheticSpec(n_samples=6, seed=5,
                             dims={"dna": 6, "rna": 5, "protein": 4})
        p1 = make_synthetic(spec, tmp_path / "a")
        p2 = make_synthetic(spec, tmp_path / "b")
        assert p1.read_text() == p2.read_text()
        for f in sorted((tmp_path / "a" / "tracks").iterdir()):
            twin = tmp_path / "b" / "tracks" / f.name
            assert f.read_bytes() == twin.read_bytes(), f.name

    def test_raw_length_ratios(self, tmp_path):
        spec = SyntheticSpec(n_samples=4, t_prime_range=(6, 6), seed=1,
                             dims={"dna": 3, "rna": 3, "protein": 3})
        manifest, base = load_manifest(make_synthetic(spec, tmp_path))
        for sample in load_split(manifest, base, "train"):
            assert sample.tracks[Modality.PROTEIN].length == 6
            assert sample.tracks[Modality.RNA].length == 18
            assert sample.tracks[Modality.DNA].length == 3

    def test_noise_free_linear_probe_on_planted_track(self, tmp_path):
        spec = SyntheticSpec(n_samples=48, planted="rna", noise_scale=0.0, seed=7,
                             dims={"dna": 8, "rna": 6, "protein": 5})
        manifest, base = load_manifest(make_synthetic(spec, tmp_path))
        direction = _planted_direction(spec)
        samples = load_split(manifest, base, "train") + load_split(manifest, base, "test")
        labels = np.array([s.label for s in samples])
        # closed form: project the time-mean of the planted track onto the
        # planting direction; with zero noise this is the label exactly
        probe = np.array([s.tracks[Modality.RNA].values.mean(axis=0) @ direction for s in samples])
        assert spearman(probe, labels) > 0.99

    def test_non_planted_track_is_uninformative(self, tmp_path):
        spec = SyntheticSpec(n_samples=512, planted="rna", noise_scale=0.0, seed=11,
                             dims={"dna": 8, "rna": 6, "protein": 5})
        manifest, base = load_manifest(make_synthetic(spec, tmp_path))
        direction = _planted_direction(spec)
        samples = load_split(manifest, base, "train") + load_split(manifest, base, "test")
        labels = np.array([s.label for s in samples])
        dna_dir = np.resize(direction, 8)
        probe = np.array([s.tracks[Modality.DNA].values.mean(axis=0) @ dna_dir for s in samples])
        assert abs(spearman(probe, labels)) < 0.2

    def test_label_ignores_noise_stream(self):
        # regenerating every track's noise leaves labels untouched
        spec = SyntheticSpec(n_samples=5, planted="protein", noise_scale=0.8, seed=3,
                             dims={"dna": 4, "rna": 4, "protein": 4})
        direction = _planted_direction(spec)
        for i in range(5):
            label_a, tracks_a = _generate_sample(spec, direction, i, noise_stream=1)
            label_b, tracks_b = _generate_sample(spec, direction, i, noise_stream=2)
            assert label_a == label_b
            assert not np.allclose(tracks_a["dna"].values, tracks_b["dna"].values)

    def test_classification_labels_integral(self, tmp_path):
        spec = SyntheticSpec(n_samples=30, task="classification", seed=2,
                             dims={"dna": 4, "rna": 4, "protein": 4})
        manifest, _ = load_manifest(make_synthetic(spec, tmp_path))
        labels = {rec.label for rec in manifest.samples}
        assert labels <= {0.0, 1.0, 2.0}
        assert len(labels) > 1

    def test_unknown_spec_key_rejected(self):
        with pytest.raises(ManifestError, match="unknown synthetic-spec keys"):
            SyntheticSpec.from_dict({"n_samples": 4, "sigma": 1.0})


class TestBatching:
    def _dataset(self, tmp_path, n=70, seed=21):
        spec = SyntheticSpec(n_samples=n, seed=seed, t_prime_range=(6, 10),
                             dims={"dna": 4, "rna": 4, "protein": 4})
        return load_manifest(make_synthetic(spec, tmp_path))

    def test_batch_sizes_keep_partial(self, tmp_path):
        manifest, base = self._dataset(tmp_path, n=87)  # 70 train after the 80/20 split
        sizes = [len(b) for b in batch_iter(manifest, base, "train", 32, seed=0)]
        assert sizes == [32, 32, 6]

    def test_same_seed_same_composition(self, tmp_path):
        manifest, base = self._dataset(tmp_path, n=40)
        ids1 = [[s.sample_id for s in b.samples] for b in batch_iter(manifest, base, "train", 8, seed=4)]
        ids2 = [[s.sample_id for s in b.samples] for b in batch_iter(manifest, base, "train", 8, seed=4)]
        ids3 = [[s.sample_id for s in b.samples] for b in batch_iter(manifest, base, "train", 8, seed=5)]
        assert ids1 == ids2
        assert ids1 != ids3

    def test_padded_masks(self, tmp_path):
        spec = SyntheticSpec(n_samples=8, seed=1, t_prime_range=(6, 6),
                             dims={"dna": 4, "rna": 4, "protein": 4})
        manifest, base = load_manifest(make_synthetic(spec, tmp_path))
        batch = next(batch_iter(manifest, base, "train", 8, seed=0))
        assert batch.codon_mask().all()  # equal lengths -> all-true
        values, mask = batch.padded(Modality.RNA)
        assert values.shape == (len(batch), 18, 4)
        assert mask.all()

    def test_unequal_lengths_padded(self, tmp_path):
        manifest, base = self._dataset(tmp_path, n=20)
        batch = next(batch_iter(manifest, base, "train", 16, seed=2))
        mask = batch.codon_mask()
        lengths = [s.tracks[Modality.PROTEIN].length for s in batch.samples]
        assert mask.shape == (len(batch), max(lengths))
        for row, n in zip(mask, lengths):
            assert row[:n].all() and not row[n:].any()

    def test_missing_track_file_names_sample(self, tmp_path):
        manifest, base = self._dataset(tmp_path, n=10)
        victim = manifest.split_samples("train")[0]
        (base / victim.tracks["rna"]).unlink()
        with pytest.raises(ManifestError, match=victim.sample_id):
            list(batch_iter(manifest, base, "train", 4, seed=0))

    def test_empty_split_rejected(self, tmp_path):
        manifest, base = self._dataset(tmp_path, n=10)
        with pytest.raises(ManifestError, match="empty"):
            list(batch_iter(manifest, base, "val", 4, seed=0))

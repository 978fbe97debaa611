"""Embedding-track extraction from pretrained sequence models."""

from .encoders import DEFAULT_MODEL_IDS, EXPECTED_DIMS, HfEncoder, StubEncoder
from .extract import ExtractionJob, ExtractionLog, run_extraction, write_track_file
from .sequences import (
    CODON_TABLE,
    InternalStopError,
    SequenceError,
    normalize_mrna,
    to_dna,
    to_rna,
    translate_cds,
    truncate_in_frame,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_MODEL_IDS", "EXPECTED_DIMS", "HfEncoder", "StubEncoder",
    "ExtractionJob", "ExtractionLog", "run_extraction", "write_track_file",
    "CODON_TABLE", "InternalStopError", "SequenceError",
    "normalize_mrna", "to_dna", "to_rna", "translate_cds", "truncate_in_frame",
    "__version__",
]

"""Codon-level alignment of per-modality embedding tracks.

The three modalities tokenize at different granularities: DNA tracks carry
one row per 6-mer token (two codons), RNA tracks one row per nucleotide
(a third of a codon), and protein tracks one row per amino acid (exactly
one codon). Alignment maps everything onto the protein frame: DNA rows are
upsampled 2x with a learnable transposed convolution, RNA rows are mean
pooled in non-overlapping triples, and length conflicts are resolved in
favor of the protein track by right-truncation or right-zero-padding with
an explicit validity mask.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    avg_pool1d,
    concat_time,
    conv_transpose1d,
    embedding_slice,
    mul,
)

__all__ = [
    "Modality",
    "EmbeddingTrack",
    "AlignedBundle",
    "AlignmentError",
    "DnaUpsampler",
    "UPSAMPLE_VARIANTS",
    "upsample_dna",
    "downsample_rna",
    "align_bundle",
]


class Modality(enum.Enum):
    DNA = 0
    RNA = 1
    PROTEIN = 2

    @property
    def code(self) -> int:
        return self.value

    @classmethod
    def from_code(cls, code: int) -> "Modality":
        for m in cls:
            if m.value == code:
                return m
        raise ValueError(f"unknown modality code {code}")


class AlignmentError(ValueError):
    pass


@dataclass
class EmbeddingTrack:
    """One modality's per-token embedding matrix (length x dim)."""

    modality: Modality
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise AlignmentError(f"track values must be 2-d, got shape {self.values.shape}")
        if self.length < 1 or self.dim < 1:
            raise AlignmentError(f"track must be non-empty, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise AlignmentError(f"{self.modality.name} track contains non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class AlignedBundle:
    """Three codon-aligned tracks of common length plus a validity mask.

    Positions where any source track ran short are masked False and hold
    zero vectors in every track.
    """

    t_prime: int
    tracks: dict  # Modality -> Tensor of shape (t_prime, d_m)
    mask: np.ndarray  # (t_prime,) bool, False marks padded positions

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())


# (kernel, stride, padding) choices for the DNA upsampler. The default
# doubles the token count exactly; the alternate trades exactness for a
# wider receptive field and relies on padding to reach the protein length.
UPSAMPLE_VARIANTS = {
    "k2s2": (2, 2, 0),
    "k3s2p2": (3, 2, 2),
}


class DnaUpsampler:
    """Learnable transposed convolution lifting 6-mer rows to codon rows."""

    def __init__(self, rng: np.random.Generator, dim: int, variant: str = "k2s2"):
        if variant not in UPSAMPLE_VARIANTS:
            raise AlignmentError(f"unknown upsample variant {variant!r}; choose from {sorted(UPSAMPLE_VARIANTS)}")
        self.variant = variant
        self.kernel_size, self.stride, self.padding = UPSAMPLE_VARIANTS[variant]
        self.dim = dim
        bound = 1.0 / np.sqrt(dim * self.kernel_size)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(dim, dim, self.kernel_size)),
            requires_grad=True, name="upsample.weight",
        )
        self.bias = Tensor(rng.uniform(-bound, bound, size=(dim,)),
                           requires_grad=True, name="upsample.bias")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def output_length(self, length: int) -> int:
        return (length - 1) * self.stride + self.kernel_size - 2 * self.padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose1d(x, self.weight, stride=self.stride, padding=self.padding) + self.bias


def upsample_dna(track: EmbeddingTrack, upsampler: DnaUpsampler) -> Tensor:
    """Expand each 6-mer row into codon rows through the learnable kernel."""
    if track.modality is not Modality.DNA:
        raise AlignmentError(f"upsample_dna expects a DNA track, got {track.modality.name}")
    if track.dim != upsampler.dim:
        raise AlignmentError(f"DNA track dim {track.dim} != upsampler dim {upsampler.dim}")
    return upsampler(Tensor(track.values))


def downsample_rna(track: EmbeddingTrack) -> Tensor:
    """Mean pool non-overlapping nucleotide triples down to codon rows."""
    if track.modality is not Modality.RNA:
        raise AlignmentError(f"downsample_rna expects an RNA track, got {track.modality.name}")
    if track.length < 3:
        raise AlignmentError(f"RNA track of length {track.length} has no complete codon")
    return avg_pool1d(Tensor(track.values), kernel=3, stride=3)


def _fit_to_length(x: Tensor, t_prime: int) -> tuple[Tensor, np.ndarray]:
    """Right-truncate or right-zero-pad to t_prime; returns (track, coverage)."""
    length = x.shape[0]
    if length == t_prime:
        return x, np.ones(t_prime, dtype=bool)
    if length > t_prime:
        return embedding_slice(x, 0, t_prime), np.ones(t_prime, dtype=bool)
    pad = Tensor(np.zeros((t_prime - length, x.shape[1])))
    coverage = np.zeros(t_prime, dtype=bool)
    coverage[:length] = True
    return concat_time([x, pad]), coverage


def align_bundle(dna: EmbeddingTrack, rna: EmbeddingTrack, prot: EmbeddingTrack,
                 upsampler: DnaUpsampler) -> AlignedBundle:
    """Align all three tracks to the protein frame.

    The protein length wins every conflict: longer tracks are truncated on
    the right, shorter ones zero-padded on the right with mask False. The
    joint mask marks positions covered by all three tracks; masked rows are
    zeroed in every track so downstream pooling never sees padding values.
    """
    for track, modality in ((dna, Modality.DNA), (rna, Modality.RNA), (prot, Modality.PROTEIN)):
        if track.modality is not modality:
            raise AlignmentError(f"expected {modality.name} track, got {track.modality.name}")

    t_prime = prot.length
    dna_up = upsample_dna(dna, upsampler)
    rna_down = downsample_rna(rna)

    dna_fit, dna_cov = _fit_to_length(dna_up, t_prime)
    rna_fit, rna_cov = _fit_to_length(rna_down, t_prime)
    prot_fit = Tensor(prot.values)
    mask = dna_cov & rna_cov

    if mask.all():
        tracks = {Modality.DNA: dna_fit, Modality.RNA: rna_fit, Modality.PROTEIN: prot_fit}
    else:
        mask_col = Tensor(mask.astype(np.float64)[:, None])
        tracks = {
            Modality.DNA: mul(dna_fit, mask_col),
            Modality.RNA: mul(rna_fit, mask_col),
            Modality.PROTEIN: mul(prot_fit, mask_col),
        }
    return AlignedBundle(t_prime=t_prime, tracks=tracks, mask=mask)

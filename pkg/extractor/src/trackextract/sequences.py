"""Coding-sequence utilities: validation, transcription, translation."""

from __future__ import annotations

__all__ = [
    "SequenceError",
    "InternalStopError",
    "STOP_CODONS",
    "CODON_TABLE",
    "normalize_mrna",
    "to_dna",
    "to_rna",
    "translate_cds",
    "truncate_in_frame",
]


class SequenceError(ValueError):
    pass


class InternalStopError(SequenceError):
    def __init__(self, codon_index: int, codon: str):
        super().__init__(f"in-frame stop codon {codon} at codon {codon_index} before sequence end")
        self.codon_index = codon_index
        self.codon = codon


# standard genetic code over the DNA alphabet
CODON_TABLE = {
    "TTT": "F", "TTC": "F", "TTA": "L", "TTG": "L",
    "CTT": "L", "CTC": "L", "CTA": "L", "CTG": "L",
    "ATT": "I", "ATC": "I", "ATA": "I", "ATG": "M",
    "GTT": "V", "GTC": "V", "GTA": "V", "GTG": "V",
    "TCT": "S", "TCC": "S", "TCA": "S", "TCG": "S",
    "CCT": "P", "CCC": "P", "CCA": "P", "CCG": "P",
    "ACT": "T", "ACC": "T", "ACA": "T", "ACG": "T",
    "GCT": "A", "GCC": "A", "GCA": "A", "GCG": "A",
    "TAT": "Y", "TAC": "Y",
    "CAT": "H", "CAC": "H", "CAA": "Q", "CAG": "Q",
    "AAT": "N", "AAC": "N", "AAA": "K", "AAG": "K",
    "GAT": "D", "GAC": "D", "GAA": "E", "GAG": "E",
    "TGT": "C", "TGC": "C", "TGG": "W",
    "CGT": "R", "CGC": "R", "CGA": "R", "CGG": "R",
    "AGT": "S", "AGC": "S", "AGA": "R", "AGG": "R",
    "GGT": "G", "GGC": "G", "GGA": "G", "GGG": "G",
}
STOP_CODONS = frozenset({"TAA", "TAG", "TGA"})

_RNA_ALPHABET = frozenset("ACGU")
_DNA_ALPHABET = frozenset("ACGT")


def normalize_mrna(sequence: str) -> str:
    """Uppercase and validate; returns the RNA form (U alphabet)."""
    seq = sequence.strip().upper()
    if len(seq) < 3:
        raise SequenceError(f"sequence too short ({len(seq)} nt, need >= 3)")
    letters = set(seq)
    if letters <= _RNA_ALPHABET:
        return seq
    if letters <= _DNA_ALPHABET:
        return seq.replace("T", "U")
    bad = "".join(sorted(letters - (_RNA_ALPHABET | _DNA_ALPHABET))) or "mixed T/U"
    raise SequenceError(f"sequence is not plain ACGU/ACGT ({bad})")


def to_dna(mrna: str) -> str:
    return mrna.replace("U", "T")


def to_rna(dna: str) -> str:
    return dna.replace("T", "U")


def truncate_in_frame(mrna: str, max_nt: int) -> str:
    """Cut to at most max_nt nucleotides, kept a multiple of 3."""
    if max_nt < 3:
        raise SequenceError(f"max_nt must be >= 3, got {max_nt}")
    keep = min(len(mrna), max_nt)
    return mrna[: keep - keep % 3] if keep >= 3 else mrna[:3]


def translate_cds(mrna: str) -> str:
    """Translate a coding sequence read in frame 0.

    A stop codon in the final position is stripped; a stop anywhere earlier
    raises InternalStopError. A trailing partial codon is ignored.
    """
    dna = to_dna(mrna)
    n_codons = len(dna) // 3
    protein = []
    for i in range(n_codons):
        codon = dna[3 * i: 3 * i + 3]
        if codon in STOP_CODONS:
            if i == n_codons - 1:
                break
            raise InternalStopError(i, codon)
        protein.append(CODON_TABLE[codon])
    if not protein:
        raise SequenceError("sequence translates to an empty protein")
    return "".join(protein)

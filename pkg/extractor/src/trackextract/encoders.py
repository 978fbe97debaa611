"""Per-modality sequence encoders producing (tokens x dim) embedding matrices.

``HfEncoder`` wraps a pretrained transformer (last hidden state, special
tokens stripped); ``StubEncoder`` is a deterministic hash-seeded stand-in
with the same token-count behavior, used for tests and offline dry runs.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["DEFAULT_MODEL_IDS", "EXPECTED_DIMS", "StubEncoder", "HfEncoder", "default_encoders"]

DEFAULT_MODEL_IDS = {
    "dna": "InstaDeepAI/nucleotide-transformer-v2-100m-multi-species",
    "rna": "multimolecule/rnafm",
    "protein": "facebook/esm2_t6_8M_UR50D",
}

# widths the default checkpoints are documented to emit; a mismatch is only
# a warning, the manifest records whatever the model actually produced
EXPECTED_DIMS = {"dna": 4107, "rna": 640, "protein": 320}

# content tokens per input unit: DNA models read 6-mer chunks (trailing
# partial chunk becomes one extra token), RNA models single nucleotides,
# protein models single residues
def dna_token_count(n_nt: int) -> int:
    return (n_nt + 5) // 6


class StubEncoder:
    """Deterministic pseudo-embeddings keyed by (model id, sequence)."""

    def __init__(self, modality_key: str, dim: int, model_id: str | None = None):
        self.modality_key = modality_key
        self.dim = dim
        self.model_id = model_id or f"stub-{modality_key}-{dim}d"

    def token_count(self, sequence: str) -> int:
        if self.modality_key == "dna":
            return dna_token_count(len(sequence))
        return len(sequence)

    def encode(self, sequence: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.model_id}:{sequence}".encode()).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.standard_normal((self.token_count(sequence), self.dim))


class HfEncoder:
    """Last-hidden-state embeddings from a Hugging Face sequence model.

    The model runs in eval mode under no_grad, so repeated extraction of
    the same sequence is bit-identical. Special tokens (CLS/EOS/padding)
    are stripped so token counts follow the content length.
    """

    def __init__(self, modality_key: str, model_id: str, model=None, tokenizer=None,
                 device: str = "cpu", **load_kwargs):
        self.modality_key = modality_key
        self.model_id = model_id
        self.device = device
        if model is None or tokenizer is None:
            from transformers import AutoModel, AutoTokenizer
            tokenizer = tokenizer or AutoTokenizer.from_pretrained(model_id, **load_kwargs)
            model = model or AutoModel.from_pretrained(model_id, **load_kwargs)
        self.tokenizer = tokenizer
        self.model = model.to(device).eval()

    def encode(self, sequence: str) -> np.ndarray:
        import torch

        batch = self.tokenizer(sequence, return_tensors="pt").to(self.device)
        with torch.no_grad():
            hidden = self.model(**batch).last_hidden_state[0]
        ids = batch["input_ids"][0].tolist()
        special = self.tokenizer.get_special_tokens_mask(ids, already_has_special_tokens=True)
        keep = [i for i, flag in enumerate(special) if not flag]
        return hidden[keep].double().cpu().numpy()


def default_encoders(**load_kwargs) -> dict:
    """The three reference encoders; requires transformers + torch and
    locally cached (or downloadable) checkpoints."""
    return {key: HfEncoder(key, model_id, **load_kwargs)
            for key, model_id in DEFAULT_MODEL_IDS.items()}

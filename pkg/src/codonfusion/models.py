"""Strategy assembly: alignment, fusion, and head wired into one model.

A ``FusionModel`` owns every learnable tensor for one strategy and maps a
raw three-track sample to a prediction. Embedding tracks are frozen
inputs; only alignment, fusion, and head parameters train.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import DnaUpsampler, Modality, align_bundle
from .autodiff import Tensor
from .fusion import (
    MODALITY_ORDER,
    CrossAttentionParams,
    DnaReducer,
    FusionError,
    FusionResult,
    GatedAttentionParams,
    ProjectionSet,
    concat_fusion,
    cross_modal_fusion,
    mil_fusion,
    token_level_mil,
    vanilla_concat,
)
from .head import STRATEGY_CHANNELS, TextCnnParams, textcnn_forward
from .trackio import SampleData

__all__ = ["STRATEGIES", "ModelConfig", "FusionModel"]

STRATEGIES = ("concat", "mil", "mil_token", "cross", "vanilla_concat")


@dataclass
class ModelConfig:
    """Architecture knobs; defaults sized for full-width embedding tracks."""

    d_shared: int = 600
    d_attn: int = 100
    dna_reduced: int = 600
    channels: int | None = None  # None picks the per-strategy default
    n_heads: int = 4
    attn_dropout: float = 0.1
    head_dropout: float = 0.2
    upsample_variant: str = "k2s2"
    shared_projection: bool = False
    tau_init: float = 1.0

    def to_dict(self) -> dict:
        return {
            "d_shared": self.d_shared, "d_attn": self.d_attn,
            "dna_reduced": self.dna_reduced, "channels": self.channels,
            "n_heads": self.n_heads, "attn_dropout": self.attn_dropout,
            "head_dropout": self.head_dropout,
            "upsample_variant": self.upsample_variant,
            "shared_projection": self.shared_projection, "tau_init": self.tau_init,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


class FusionModel:
    """One fusion strategy end to end, from raw tracks to prediction."""

    def __init__(self, strategy: str, dims: dict, targets: int,
                 config: ModelConfig, seed: int):
        if strategy not in STRATEGIES:
            raise FusionError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
        self.strategy = strategy
        self.dims = dict(dims)  # key 'dna'/'rna'/'protein' -> embedding width
        self.targets = targets
        self.config = config
        self.seed = seed

        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
        mod_dims = {m: dims[m.name.lower()] for m in MODALITY_ORDER}
        cfg = config

        self.upsampler = None
        self.projection = None
        self.dna_mlp = None
        self.gate = None
        self.xattn = None

        if strategy != "vanilla_concat":
            self.upsampler = DnaUpsampler(rng, dims["dna"], variant=cfg.upsample_variant)

        if strategy == "concat":
            self.dna_mlp = DnaReducer(rng, dims["dna"], cfg.dna_reduced)
            head_in = cfg.dna_reduced + dims["rna"] + dims["protein"]
        else:
            self.projection = ProjectionSet(rng, mod_dims, d_shared=cfg.d_shared,
                                            shared_projection=cfg.shared_projection)
            head_in = cfg.d_shared
            if strategy in ("mil", "mil_token"):
                self.gate = GatedAttentionParams(rng, cfg.d_shared, d_attn=cfg.d_attn,
                                                 tau_init=cfg.tau_init)
            elif strategy == "cross":
                self.xattn = CrossAttentionParams(rng, cfg.d_shared, n_heads=cfg.n_heads,
                                                  attn_dropout=cfg.attn_dropout)

        channels = cfg.channels if cfg.channels is not None else STRATEGY_CHANNELS[strategy]
        self.head = TextCnnParams(rng, d_in=head_in, channels=channels,
                                  targets=targets, dropout_rate=cfg.head_dropout)

    # ------------------------------------------------------------------
    def components(self):
        for comp in (self.upsampler, self.projection, self.dna_mlp,
                     self.gate, self.xattn, self.head):
            if comp is not None:
                yield comp

    def parameters(self) -> list[Tensor]:
        out = []
        for comp in self.components():
            out.extend(comp.parameters())
        return out

    def named_parameters(self) -> dict:
        named = {}
        for p in self.parameters():
            if p.name is None or p.name in named:
                raise FusionError(f"parameter naming collision or missing name: {p.name!r}")
            named[p.name] = p
        return named

    # ------------------------------------------------------------------
    def fuse(self, sample: SampleData, train: bool = False,
             rng: np.random.Generator | None = None) -> FusionResult:
        dna = sample.tracks[Modality.DNA]
        rna = sample.tracks[Modality.RNA]
        prot = sample.tracks[Modality.PROTEIN]
        if self.strategy == "vanilla_concat":
            return vanilla_concat(dna, rna, prot, self.projection)
        bundle = align_bundle(dna, rna, prot, self.upsampler)
        if self.strategy == "concat":
            return concat_fusion(bundle, self.dna_mlp)
        if self.strategy == "mil":
            return mil_fusion(bundle, self.projection, self.gate)
        if self.strategy == "mil_token":
            return token_level_mil(bundle, self.projection, self.gate)
        return cross_modal_fusion(bundle, self.projection, self.xattn, train=train, rng=rng)

    def forward(self, sample: SampleData, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, FusionResult]:
        result = self.fuse(sample, train=train, rng=rng)
        pred = textcnn_forward(result.fused, self.head, train=train, rng=rng)
        return pred, result

    def sequence_alpha(self, result: FusionResult, mask_valid: int | None = None) -> np.ndarray | None:
        """One weight triple per sequence; token-level weights are averaged."""
        if result.alpha is None:
            return None
        alpha = result.alpha.data
        if alpha.ndim == 1:
            return alpha.copy()
        valid = alpha if mask_valid is None else alpha[:mask_valid]
        return valid.mean(axis=0)

    # ------------------------------------------------------------------
    def meta(self) -> dict:
        return {
            "strategy": self.strategy,
            "dims": dict(self.dims),
            "targets": self.targets,
            "config": self.config.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "FusionModel":
        return cls(strategy=meta["strategy"], dims=meta["dims"], targets=meta["targets"],
                   config=ModelConfig.from_dict(meta["config"]), seed=meta["seed"])

    def load_state(self, arrays: dict) -> None:
        named = self.named_parameters()
        missing = set(named) - set(arrays)
        extra = set(arrays) - set(named)
        if missing or extra:
            raise FusionError(f"checkpoint mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, tensor in named.items():
            arr = arrays[name]
            if arr.shape != tensor.shape:
                raise FusionError(f"parameter {name}: checkpoint shape {arr.shape} != model {tensor.shape}")
            tensor.data[:] = arr

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

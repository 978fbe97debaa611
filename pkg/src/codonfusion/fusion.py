"""Fusion strategies combining the three aligned modality tracks.

Three main strategies share a common shape contract (positions x features
in, positions x features out):

* feature concatenation with a learnable reduction of the wide DNA track,
* gated attention pooling over modalities (one weight per modality per
  sequence) with an optional entropy regularizer on those weights,
* cross-modal multi-head attention where each modality queries a joint
  context built from all three tracks.

Two ablation variants are included: a token-level version of the gated
attention (one weight triple per position) and a naive concatenation along
the time axis that skips codon alignment entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import AlignedBundle, EmbeddingTrack, Modality
from .autodiff import (
    Linear,
    Tensor,
    add,
    concat_feature,
    concat_time,
    dropout,
    embedding_slice,
    layer_norm,
    log,
    matmul,
    mul,
    scale,
    sigmoid,
    softmax_over_axis,
    sum_over_axis,
    tanh,
)

__all__ = [
    "MODALITY_ORDER",
    "FusionError",
    "FusionResult",
    "ProjectionSet",
    "DnaReducer",
    "GatedAttentionParams",
    "CrossAttentionParams",
    "concat_fusion",
    "mil_fusion",
    "token_level_mil",
    "cross_modal_fusion",
    "vanilla_concat",
    "attention_weights",
    "attention_entropy",
    "entropy_term",
]

MODALITY_ORDER = (Modality.DNA, Modality.RNA, Modality.PROTEIN)

# added under the log so 0 * log(0) resolves to 0 on the tape; does not
# perturb float64 values of any softmax output above the underflow range
_LOG_FLOOR = 1e-300

TAU_MIN = 0.02
TAU_MAX = 20.0


class FusionError(ValueError):
    pass


@dataclass
class FusionResult:
    """Fused sequence plus, for the gated strategies, modality weights.

    ``alpha`` holds 3 weights for sequence-level attention or (T', 3) for
    the token-level variant; each weight row is non-negative and sums to 1.
    ``entropy`` is the Shannon entropy of those weights, kept on the tape
    so it can join the training loss.
    """

    fused: Tensor
    alpha: Tensor | None = None
    entropy: Tensor | None = None


def _mask_column(bundle: AlignedBundle) -> Tensor | None:
    if bundle.mask.all():
        return None
    return Tensor(bundle.mask.astype(np.float64)[:, None])


class ProjectionSet:
    """Per-modality maps into a shared latent space, tanh activated.

    With ``shared_projection`` a single map is reused for every modality;
    per-modality width adapters first bring each track to the shared width.
    """

    def __init__(self, rng: np.random.Generator, dims: dict, d_shared: int = 600,
                 shared_projection: bool = False):
        self.d_shared = d_shared
        self.shared_projection = shared_projection
        if shared_projection:
            self.adapters = {
                m: Linear(rng, dims[m], d_shared, f"proj.adapter.{m.name.lower()}")
                for m in MODALITY_ORDER
            }
            self.shared_map = Linear(rng, d_shared, d_shared, "proj.shared")
        else:
            self.maps = {
                m: Linear(rng, dims[m], d_shared, f"proj.{m.name.lower()}")
                for m in MODALITY_ORDER
            }

    def parameters(self) -> list[Tensor]:
        out = []
        if self.shared_projection:
            for m in MODALITY_ORDER:
                out.extend(self.adapters[m].parameters())
            out.extend(self.shared_map.parameters())
        else:
            for m in MODALITY_ORDER:
                out.extend(self.maps[m].parameters())
        return out

    def project_track(self, values: Tensor, modality: Modality) -> Tensor:
        if self.shared_projection:
            return tanh(self.shared_map(self.adapters[modality](values)))
        return tanh(self.maps[modality](values))

    def project_bundle(self, bundle: AlignedBundle) -> dict:
        """Project every aligned track; padded rows stay exactly zero."""
        mask_col = _mask_column(bundle)
        projected = {}
        for m in MODALITY_ORDER:
            h = self.project_track(bundle.tracks[m], m)
            projected[m] = h if mask_col is None else mul(h, mask_col)
        return projected


class DnaReducer:
    """Two-layer tanh MLP shrinking the wide DNA features before concatenation."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int = 600):
        self.d_out = d_out
        self.hidden = Linear(rng, d_in, d_out, "dna_mlp.hidden")
        self.out = Linear(rng, d_out, d_out, "dna_mlp.out")

    def parameters(self) -> list[Tensor]:
        return self.hidden.parameters() + self.out.parameters()

    def __call__(self, values: Tensor) -> Tensor:
        return self.out(tanh(self.hidden(values)))


class GatedAttentionParams:
    """Gated attention over modalities: tanh branch times sigmoid gate.

    Each modality m scores as W . [tanh(V_m h + b_m) * sigmoid(U_m h + c_m)]
    and the scores are softmaxed across modalities at a learnable
    temperature, clamped to [0.02, 20.0] after every optimizer step.
    """

    def __init__(self, rng: np.random.Generator, d_shared: int, d_attn: int = 100,
                 tau_init: float = 1.0):
        bound = 1.0 / np.sqrt(d_shared)
        self.d_attn = d_attn
        self.V, self.U, self.b, self.c = {}, {}, {}, {}
        for m in MODALITY_ORDER:
            tag = m.name.lower()
            self.V[m] = Tensor(rng.uniform(-bound, bound, (d_attn, d_shared)),
                               requires_grad=True, name=f"gate.{tag}.V")
            self.U[m] = Tensor(rng.uniform(-bound, bound, (d_attn, d_shared)),
                               requires_grad=True, name=f"gate.{tag}.U")
            self.b[m] = Tensor(rng.uniform(-bound, bound, (d_attn,)),
                               requires_grad=True, name=f"gate.{tag}.b")
            self.c[m] = Tensor(rng.uniform(-bound, bound, (d_attn,)),
                               requires_grad=True, name=f"gate.{tag}.c")
        wbound = 1.0 / np.sqrt(d_attn)
        # stored as a column so it right-multiplies both pooled vectors and
        # whole tracks of gate activations
        self.W = Tensor(rng.uniform(-wbound, wbound, (d_attn, 1)), requires_grad=True, name="gate.W")
        self.tau = Tensor(np.array([tau_init]), requires_grad=True, name="gate.tau")

    def parameters(self) -> list[Tensor]:
        out = []
        for m in MODALITY_ORDER:
            out.extend([self.V[m], self.U[m], self.b[m], self.c[m]])
        out.extend([self.W, self.tau])
        return out

    def clamp_tau(self) -> None:
        np.clip(self.tau.data, TAU_MIN, TAU_MAX, out=self.tau.data)


class CrossAttentionParams:
    """Per-modality query/key/value maps over a shared joint context."""

    def __init__(self, rng: np.random.Generator, d_shared: int, n_heads: int = 4,
                 attn_dropout: float = 0.1):
        if d_shared % n_heads != 0:
            raise FusionError(f"d_shared {d_shared} not divisible by {n_heads} heads")
        self.d_shared = d_shared
        self.n_heads = n_heads
        self.head_dim = d_shared // n_heads
        self.attn_dropout = attn_dropout
        self.query, self.key, self.value = {}, {}, {}
        self.ln_gain, self.ln_bias = {}, {}
        for m in MODALITY_ORDER:
            tag = m.name.lower()
            self.query[m] = Linear(rng, d_shared, d_shared, f"xattn.{tag}.query")
            self.key[m] = Linear(rng, d_shared, d_shared, f"xattn.{tag}.key")
            self.value[m] = Linear(rng, d_shared, d_shared, f"xattn.{tag}.value")
            self.ln_gain[m] = Tensor(np.ones(d_shared), requires_grad=True, name=f"xattn.{tag}.ln_gain")
            self.ln_bias[m] = Tensor(np.zeros(d_shared), requires_grad=True, name=f"xattn.{tag}.ln_bias")
        self.merge = Linear(rng, 3 * d_shared, d_shared, "xattn.merge")
        self.final_gain = Tensor(np.ones(d_shared), requires_grad=True, name="xattn.final_gain")
        self.final_bias = Tensor(np.zeros(d_shared), requires_grad=True, name="xattn.final_bias")

    def parameters(self) -> list[Tensor]:
        out = []
        for m in MODALITY_ORDER:
            out.extend(self.query[m].parameters())
            out.extend(self.key[m].parameters())
            out.extend(self.value[m].parameters())
            out.extend([self.ln_gain[m], self.ln_bias[m]])
        out.extend(self.merge.parameters())
        out.extend([self.final_gain, self.final_bias])
        return out


# ---------------------------------------------------------------------------
# attention weight helpers
# ---------------------------------------------------------------------------


def attention_weights(scores: Tensor, tau: Tensor | float | None = None,
                      axis: int = -1) -> Tensor:
    """Softmax gate scores into modality weights at temperature tau."""
    return softmax_over_axis(scores, axis=axis, temperature=tau)


def attention_entropy(alpha_batch) -> float:
    """Mean Shannon entropy of modality-weight rows, with 0 log 0 = 0.

    Accepts one row or a batch of rows; every row must lie on the simplex
    to within 1e-6.
    """
    arr = np.atleast_2d(np.asarray(
        alpha_batch.data if isinstance(alpha_batch, Tensor) else alpha_batch, dtype=np.float64))
    if arr.ndim != 2:
        raise FusionError(f"alpha batch must be 1-d or 2-d, got shape {arr.shape}")
    if np.any(arr < -1e-6) or np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-6):
        raise FusionError("alpha row off the simplex beyond 1e-6")
    clipped = np.maximum(arr, 0.0)
    terms = np.where(clipped > 0.0, clipped * np.log(np.maximum(clipped, _LOG_FLOOR)), 0.0)
    return float(-terms.sum(axis=1).mean())


def entropy_term(alpha: Tensor) -> Tensor:
    """Tape-side entropy of weight rows; mean over rows for 2-d alpha."""
    floor = Tensor(np.full(alpha.shape, _LOG_FLOOR))
    total = sum_over_axis(mul(alpha, log(add(alpha, floor))))
    rows = 1 if alpha.data.ndim == 1 else alpha.shape[0]
    return scale(total, -1.0 / rows)


def _gate_vector(gate: GatedAttentionParams, m: Modality, h: Tensor) -> Tensor:
    """tanh(V h + b) * sigmoid(U h + c) for one pooled summary vector."""
    return mul(
        tanh(add(matmul(gate.V[m], h), gate.b[m])),
        sigmoid(add(matmul(gate.U[m], h), gate.c[m])),
    )


def _pooled_summaries(bundle: AlignedBundle, projected: dict) -> dict:
    """Mask-aware mean over valid positions of each projected track."""
    n_valid = bundle.valid_count
    if n_valid == 0:
        raise FusionError("mil_fusion: mask has no valid positions")
    # padded rows are exactly zero, so a plain sum over rows is already
    # restricted to the valid positions
    return {m: scale(sum_over_axis(projected[m], axis=0), 1.0 / n_valid) for m in MODALITY_ORDER}


# ---------------------------------------------------------------------------
# fusion strategies
# ---------------------------------------------------------------------------


def concat_fusion(bundle: AlignedBundle, dna_mlp: DnaReducer) -> FusionResult:
    """Per position: [reduce(DNA) || RNA || protein] along the feature axis."""
    mask_col = _mask_column(bundle)
    reduced = dna_mlp(bundle.tracks[Modality.DNA])
    parts = [reduced, bundle.tracks[Modality.RNA], bundle.tracks[Modality.PROTEIN]]
    fused = concat_feature(parts)
    if mask_col is not None:
        fused = mul(fused, mask_col)
    return FusionResult(fused=fused)


def mil_fusion(bundle: AlignedBundle, proj: ProjectionSet,
               gate: GatedAttentionParams) -> FusionResult:
    """Weight each modality by a gated score of its pooled summary.

    fused = sum_m alpha_m H_m with alpha = softmax(scores / tau); one weight
    triple per sequence.
    """
    projected = proj.project_bundle(bundle)
    summaries = _pooled_summaries(bundle, projected)
    scores = concat_time([
        matmul(_gate_vector(gate, m, summaries[m]), gate.W) for m in MODALITY_ORDER
    ])
    alpha = attention_weights(scores, tau=gate.tau, axis=0)
    fused = None
    for i, m in enumerate(MODALITY_ORDER):
        term = mul(projected[m], embedding_slice(alpha, i, i + 1))
        fused = term if fused is None else add(fused, term)
    return FusionResult(fused=fused, alpha=alpha, entropy=entropy_term(alpha))


def token_level_mil(bundle: AlignedBundle, proj: ProjectionSet,
                    gate: GatedAttentionParams) -> FusionResult:
    """Ablation: gate every position separately instead of pooling first."""
    if bundle.valid_count == 0:
        raise FusionError("token_level_mil: mask has no valid positions")
    projected = proj.project_bundle(bundle)
    columns = []
    for m in MODALITY_ORDER:
        h = projected[m]
        gated = mul(
            tanh(add(matmul(h, gate.V[m], transpose_b=True), gate.b[m])),
            sigmoid(add(matmul(h, gate.U[m], transpose_b=True), gate.c[m])),
        )
        columns.append(matmul(gated, gate.W))  # (T', 1)
    scores = concat_feature(columns)  # (T', 3)
    alpha = attention_weights(scores, tau=gate.tau, axis=1)
    fused = None
    for i, m in enumerate(MODALITY_ORDER):
        weight_col = embedding_slice(alpha, i, i + 1, axis=1)  # (T', 1)
        term = mul(projected[m], weight_col)
        fused = term if fused is None else add(fused, term)
    valid_alpha = alpha if bundle.mask.all() else embedding_slice(alpha, 0, bundle.valid_count)
    return FusionResult(fused=fused, alpha=alpha, entropy=entropy_term(valid_alpha))


def cross_modal_fusion(bundle: AlignedBundle, proj: ProjectionSet,
                       xattn: CrossAttentionParams, train: bool = False,
                       rng: np.random.Generator | None = None) -> FusionResult:
    """Each modality attends over the joint 3T'-long context of all tracks.

    Per modality: multi-head attention of its track against the shared
    context, a residual add, and layer norm. The three streams are merged
    by feature concatenation plus a linear map, then averaged back in
    through a final residual and layer norm. Padded context positions are
    excluded from attention with -inf scores.
    """
    projected = proj.project_bundle(bundle)
    context = concat_time([projected[m] for m in MODALITY_ORDER])
    ctx_mask = np.tile(bundle.mask, 3)
    additive = None
    if not ctx_mask.all():
        additive = Tensor(np.where(ctx_mask, 0.0, -np.inf)[None, :])

    streams = {}
    for m in MODALITY_ORDER:
        q = xattn.query[m](projected[m])
        k = xattn.key[m](context)
        v = xattn.value[m](context)
        heads = []
        for h in range(xattn.n_heads):
            lo, hi = h * xattn.head_dim, (h + 1) * xattn.head_dim
            qh = embedding_slice(q, lo, hi, axis=1)
            kh = embedding_slice(k, lo, hi, axis=1)
            vh = embedding_slice(v, lo, hi, axis=1)
            scores = scale(matmul(qh, kh, transpose_b=True), 1.0 / np.sqrt(xattn.head_dim))
            if additive is not None:
                scores = add(scores, additive)
            attn = softmax_over_axis(scores, axis=1)
            if train and xattn.attn_dropout > 0.0:
                attn = dropout(attn, xattn.attn_dropout, train=True, rng=rng)
            heads.append(matmul(attn, vh))
        merged_heads = concat_feature(heads)
        streams[m] = layer_norm(add(projected[m], merged_heads),
                                xattn.ln_gain[m], xattn.ln_bias[m])

    z = xattn.merge(concat_feature([streams[m] for m in MODALITY_ORDER]))
    avg = scale(add(add(streams[Modality.DNA], streams[Modality.RNA]),
                    streams[Modality.PROTEIN]), 1.0 / 3.0)
    fused = layer_norm(add(avg, z), xattn.final_gain, xattn.final_bias)
    mask_col = _mask_column(bundle)
    if mask_col is not None:
        fused = mul(fused, mask_col)
    return FusionResult(fused=fused)


def vanilla_concat(dna: EmbeddingTrack, rna: EmbeddingTrack, prot: EmbeddingTrack,
                   proj: ProjectionSet) -> FusionResult:
    """Ablation baseline: project raw tracks and chain them along time.

    No codon alignment: the output length is the sum of the raw token
    counts, ordered DNA, RNA, protein.
    """
    parts = []
    for track, m in ((dna, Modality.DNA), (rna, Modality.RNA), (prot, Modality.PROTEIN)):
        if track.modality is not m:
            raise FusionError(f"vanilla_concat: expected {m.name} track, got {track.modality.name}")
        parts.append(proj.project_track(Tensor(track.values), m))
    return FusionResult(fused=concat_time(parts))

"""Full model assembly: prompt branches, fusion stages, classifier, losses.

Component toggles select which branches exist; parameters are only created
for the parts actually in use, so the optimizer never sees weights of a
disabled branch. With the cross-modal gate disabled, the language side falls
back to a unit-gate sum of whatever text features exist and the modality
fusion falls back to the concat variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoders, fusion, prompts
from .autodiff import Tensor
from .errors import ConfigError
from .seeding import derive_rng


@dataclass
class ModelConfig:
    dim: int = 512
    queries: int = 8
    depth: int = 1
    heads: int = 4
    fusion_n: int = 64
    gate_hidden: int = 4
    vocab: int = 1024
    context_len: int = 77


@dataclass
class Components:
    caption_prompt: bool = True
    query_prompt: bool = True
    crossmodal_gate: bool = True

    def validate(self) -> None:
        if not (self.caption_prompt or self.query_prompt):
            raise ConfigError("at least one prompt branch must be enabled")

    @property
    def both_prompts(self) -> bool:
        return self.caption_prompt and self.query_prompt


@dataclass
class ForwardResult:
    probs: Tensor
    loss: Tensor | None = None
    loss_cls: Tensor | None = None
    loss_align: Tensor | None = None

    def live_scores(self) -> np.ndarray:
        return self.probs.data[:, 1].copy()


@dataclass
class Model:
    cfg: ModelConfig
    components: Components
    fusion_variant: str
    raw_dim: int
    visual: encoders.VisualEncoderP
    qformer: prompts.QFormerP | None = None
    text_enc_caption: encoders.TextEncoderP | None = None
    text_enc_query: encoders.TextEncoderP | None = None
    embedding: Tensor | None = None
    align_weight: Tensor | None = None
    gate: fusion.LanguageGateP | None = None
    fusion_params: object | None = None
    classifier: fusion.ClassifierP = None

    @property
    def effective_variant(self) -> str:
        return self.fusion_variant if self.components.crossmodal_gate else "concat"

    @staticmethod
    def build(cfg: ModelConfig, components: Components, fusion_variant: str,
              raw_dim: int, frozen_seed: int, train_seed: int) -> "Model":
        components.validate()
        if fusion_variant not in fusion.FUSION_VARIANTS:
            raise ConfigError(
                f"unknown fusion variant {fusion_variant!r}; "
                f"expected one of {fusion.FUSION_VARIANTS}"
            )
        m = Model(
            cfg=cfg,
            components=components,
            fusion_variant=fusion_variant,
            raw_dim=raw_dim,
            visual=encoders.VisualEncoderP.init(
                derive_rng(train_seed, "visual"), raw_dim, cfg.dim
            ),
        )
        if components.caption_prompt:
            m.embedding = encoders.init_embedding_table(
                derive_rng(frozen_seed, "embedding"), cfg.vocab, cfg.dim
            )
            m.text_enc_caption = encoders.TextEncoderP.init(
                derive_rng(frozen_seed, "textenc-caption"), cfg.dim, cfg.heads
            )
        if components.query_prompt:
            m.qformer = prompts.QFormerP.init(
                derive_rng(train_seed, "qformer"), cfg.dim, cfg.heads,
                cfg.queries, cfg.depth,
            )
            m.text_enc_query = encoders.TextEncoderP.init(
                derive_rng(frozen_seed, "textenc-query"), cfg.dim, cfg.heads
            )
        if components.both_prompts:
            m.align_weight = prompts.init_alignment_weight(
                derive_rng(train_seed, "align"), cfg.dim
            )
            if components.crossmodal_gate:
                m.gate = fusion.LanguageGateP.init(
                    derive_rng(train_seed, "gate"), cfg.gate_hidden
                )
        variant = m.effective_variant
        rng_fusion = derive_rng(train_seed, "fusion")
        if variant == "circulant":
            m.fusion_params = fusion.ModalityFusionP.init(rng_fusion, cfg.dim, cfg.fusion_n)
        elif variant == "concat":
            m.fusion_params = fusion.ConcatFusionP.init(rng_fusion, cfg.dim, cfg.fusion_n)
        m.classifier = fusion.ClassifierP.init(
            derive_rng(train_seed, "classifier"),
            fusion.fused_width(variant, cfg.dim, cfg.fusion_n),
        )
        return m

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.visual.walk("visual"))
        if self.qformer is not None:
            out.update(self.qformer.walk("qformer"))
        if self.text_enc_caption is not None:
            out.update(self.text_enc_caption.walk("textenc_caption"))
        if self.text_enc_query is not None:
            out.update(self.text_enc_query.walk("textenc_query"))
        if self.embedding is not None:
            out["embedding.table"] = self.embedding
        if self.align_weight is not None:
            out["align.weight"] = self.align_weight
        if self.gate is not None:
            out.update(self.gate.walk("gate"))
        if self.fusion_params is not None:
            out.update(self.fusion_params.walk("fusion"))
        out.update(self.classifier.walk("classifier"))
        return out

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_parameters().items() if p.requires_grad}

    def frozen_parameters(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_parameters().items() if not p.requires_grad}

    def encode_captions(self, token_rows: np.ndarray, chunk: int = 64) -> np.ndarray:
        """Frozen caption path: token ids (N, L) -> pooled features (N, dim).

        Runs outside any tape; the result is constant for a whole run and can
        be computed once up front.
        """
        if self.text_enc_caption is None:
            raise ConfigError("caption branch is disabled")
        feats = []
        for start in range(0, token_rows.shape[0], chunk):
            rows = token_rows[start:start + chunk]
            emb = Tensor(encoders.embed_tokens(self.embedding, rows))
            feats.append(self.text_enc_caption(emb).data)
        return np.concatenate(feats, axis=0)

    def forward(self, raw: np.ndarray, caption_feats: np.ndarray | None,
                labels: np.ndarray | None = None) -> ForwardResult:
        """One batched pass. ``caption_feats`` are the precomputed frozen
        caption features for the batch (required iff the caption branch is
        on); ``labels`` switches loss computation on."""
        comp = self.components
        vis = self.visual(Tensor(raw))

        t_cap = t_qry = None
        if comp.caption_prompt:
            if caption_feats is None:
                raise ConfigError("caption branch enabled but no caption features given")
            t_cap = Tensor(caption_feats)
        if comp.query_prompt:
            t_qry = self.text_enc_query(self.qformer(vis))

        if comp.both_prompts:
            if self.gate is not None:
                lang = fusion.gated_language_fusion(t_cap, t_qry, self.gate)
            else:
                lang = ad.add(t_cap, t_qry)
        else:
            lang = t_cap if t_cap is not None else t_qry

        fused = fusion.fuse(self.effective_variant, lang, vis, self.fusion_params)
        probs = fusion.classify(fused, self.classifier)
        result = ForwardResult(probs=probs)
        if labels is not None:
            result.loss_cls = fusion.cross_entropy(probs, labels)
            if comp.both_prompts:
                result.loss_align = prompts.alignment_loss(t_cap, t_qry, self.align_weight)
            result.loss = fusion.total_loss(result.loss_cls, result.loss_align)
        return result

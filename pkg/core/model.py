import numpy as np

from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple, Union

from core.backbone import Backbone, BackboneConfig, build_backbone
from core.errors import ConfigurationError, DataError
from core.fusion import (AttentionMap, FusionConfig, FusionHead, TagVector, apply_attention,
                         fuse_before_code, fuse_codecat, fuse_combined)
from core.layers import Dense
from core.tensor import Tensor

__all__ = ["ModelOutput", "TagASCModel"]


@dataclass
class ModelOutput:
    """One forward pass of backbone plus fusion.

    Attributes:
        feature_map: M before attention.
        code: the (fused) code handed to the back-end classifier.
        logits: training-head output.
        attention: the applied attention map, if any.
    """
    feature_map: Tensor
    code: Tensor
    logits: Tensor
    attention: Optional[AttentionMap] = None


class TagASCModel:
    """Backbone, fusion head and (for codecat) a classifier over the fused code.

    Attributes:
        backbone: the raw-waveform network.
        fusion: learned fusion parameters (None for modes without any).
        fused_output_layer: training head over the (d + c) codecat code.
            Replaces backbone.output_layer, which is still carried (see Backbone).
        num_events: c, tag-vector length.
        train_ids: ids of the recordings the model was trained on.
        pre_emphasis_beta: filter coefficient applied to raw samples, None when off.
    """

    def __init__(self, backbone_cfg: BackboneConfig, fusion_cfg: FusionConfig,
                 num_events: int, seed: int, pre_emphasis_beta: Optional[float] = 0.97):
        fusion_cfg.validate(backbone_cfg.num_filters)
        self.backbone_cfg = backbone_cfg
        self.fusion_cfg = fusion_cfg
        self.num_events = num_events
        self.seed = seed
        self.pre_emphasis_beta = pre_emphasis_beta
        self.train_ids: List[str] = []

        self.backbone: Backbone = build_backbone(backbone_cfg, seed)
        self.fusion: Optional[FusionHead] = None
        self.fused_output_layer: Optional[Dense] = None
        if fusion_cfg.mode in ("before_code", "attention", "combined_shared", "combined_separate"):
            self.fusion = FusionHead(fusion_cfg, backbone_cfg.num_filters, backbone_cfg.code_dim,
                                     num_events, seed + 1, backbone_cfg.leaky_slope)
        elif fusion_cfg.mode == "codecat":
            rng = np.random.default_rng(seed + 1)
            self.fused_output_layer = Dense("fused_output", backbone_cfg.code_dim + num_events,
                                            backbone_cfg.num_classes, rng)

    def __repr__(self):
        return f"[{self.__class__.__name__}] ({self.fusion_cfg.mode}, " \
               f"{self.num_parameters()} params)"

    @property
    def code_dim(self) -> int:
        if self.fusion_cfg.mode == "codecat":
            return self.backbone_cfg.code_dim + self.num_events
        return self.backbone_cfg.code_dim

    def parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield from self.backbone.parameters()
        if self.fusion is not None:
            yield from self.fusion.parameters()
        if self.fused_output_layer is not None:
            yield from self.fused_output_layer.parameters()

    def buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.backbone.buffers()

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def zero_grad(self):
        for _, p in self.parameters():
            p.zero_grad()

    def _check_tag(self, tag: Optional[TagVector]) -> Optional[TagVector]:
        if not self.fusion_cfg.uses_tags:
            return tag
        if tag is None:
            raise DataError("TagASCModel", f"fusion mode '{self.fusion_cfg.mode}' needs a tag vector")
        if tag.dim != self.num_events:
            raise DataError("TagASCModel", f"tag '{tag.source_id}' has {tag.dim} events, "
                                           f"expected {self.num_events}")
        return tag

    def forward(self, waveform: Union[Tensor, np.ndarray], tag: Optional[TagVector] = None,
                mode: str = "train") -> ModelOutput:
        tag = self._check_tag(tag)
        bb = self.backbone
        feature_map = bb.features(waveform, mode)
        fusion_mode = self.fusion_cfg.mode
        attention = None

        if fusion_mode == "none":
            code = bb.encode(bb.pool(feature_map))
            logits = bb.classify(code)
        elif fusion_mode == "codecat":
            code = fuse_codecat(bb.encode(bb.pool(feature_map)), tag)
            logits = self.fused_output_layer(code)
        elif fusion_mode == "before_code":
            code = fuse_before_code(bb.pool(feature_map), tag, self.fusion_cfg, self.fusion)
            logits = bb.classify(code)
        elif fusion_mode == "attention":
            attention = self.fusion.attention(tag)
            code = bb.encode(bb.pool(apply_attention(feature_map, attention)))
            logits = bb.classify(code)
        elif fusion_mode in ("combined_shared", "combined_separate"):
            code, attention = fuse_combined(bb.pool, feature_map, tag, self.fusion_cfg, self.fusion)
            logits = bb.classify(code)
        else:
            raise ConfigurationError("TagASCModel", f"unknown fusion mode '{fusion_mode}'")
        return ModelOutput(feature_map, code, logits, attention)

    __call__ = forward

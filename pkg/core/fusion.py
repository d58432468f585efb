"""Tag-vector fusion: concatenation variants, multi-head attention, and both combined.

Fusion modes:
    - none: plain backbone code.
    - codecat: backbone code concatenated with the tag vector.
    - before_code: pooled features concatenated with a (transformed) tag, then FC to the code.
    - attention: tag-derived attention over the filter dimension of the feature map.
    - combined_shared / combined_separate: attention and before_code together, with one
      shared tag-transform stack or two separate stacks.
"""
import numpy as np

from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, Iterator, List, Optional, Tuple, Union

from core import ops
from core.errors import ConfigurationError, DataError, DimensionError
from core.layers import Dense, Layer
from core.tensor import Tensor, as_tensor

__all__ = ["FUSION_MODES", "TagVector", "FusionConfig", "AttentionMap", "TagTransform",
           "FusionHead", "transform_tag", "fuse_codecat", "fuse_before_code",
           "attention_map", "apply_attention", "fuse_combined"]


FUSION_MODES = ("none", "codecat", "before_code", "attention",
                "combined_shared", "combined_separate")


class TagVector:
    """Posteriors of c pre-defined sound events for one recording.

    Attributes:
        values: Tensor of shape (c,), every entry in [0, 1].
        source_id: recording id.
    """

    def __init__(self, values: Union[Tensor, np.ndarray, List[float]], source_id: str = ""):
        self.values = as_tensor(values)
        self.source_id = source_id
        data = self.values.data
        if data.ndim != 1:
            raise DimensionError("TagVector", f"expected (c,), got {data.shape}")
        if np.any(~np.isfinite(data)) or np.any(data < 0) or np.any(data > 1):
            raise DataError("TagVector", f"entries of '{source_id}' must lie in [0, 1]")

    def __repr__(self):
        return f"[{self.__class__.__name__}] ({self.source_id}, c={self.dim})"

    def __len__(self):
        return self.dim

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass
class FusionConfig:
    """Which fusion to run and how deep its tag transforms are.

    Attributes:
        mode: one of FUSION_MODES.
        n_transform_layers: tag-transform depth (before_code, attention, combined_shared).
        transform_hidden_dim: width of the transform layers.
        n_heads: h, attention heads; must divide the filter count f.
        n_transform_layers_concat: concat-branch depth (combined_separate only).
        n_transform_layers_att: attention-branch depth (combined_separate only).
    """
    mode: str = "none"
    n_transform_layers: int = 0
    transform_hidden_dim: int = 128
    n_heads: int = 1
    n_transform_layers_concat: int = 3
    n_transform_layers_att: int = 3

    @classmethod
    def from_dict(cls, values: Dict) -> "FusionConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})

    def to_dict(self) -> Dict:
        return asdict(self)

    @property
    def uses_tags(self) -> bool:
        return self.mode != "none"

    @property
    def uses_attention(self) -> bool:
        return self.mode in ("attention", "combined_shared", "combined_separate")

    def validate(self, num_filters: Optional[int] = None):
        if self.mode not in FUSION_MODES:
            raise ConfigurationError("FusionConfig", f"unknown mode '{self.mode}'")
        for name in ("n_transform_layers", "transform_hidden_dim", "n_heads",
                     "n_transform_layers_concat", "n_transform_layers_att"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigurationError("FusionConfig", f"{name} must be an integer, got {value!r}")
        if min(self.n_transform_layers, self.n_transform_layers_concat,
               self.n_transform_layers_att) < 0:
            raise ConfigurationError("FusionConfig", "transform depths must be >= 0")
        if self.transform_hidden_dim < 1:
            raise ConfigurationError("FusionConfig", "transform_hidden_dim must be >= 1")
        if self.n_heads < 1:
            raise ConfigurationError("FusionConfig", "n_heads must be >= 1")
        if self.uses_attention and num_filters is not None and num_filters % self.n_heads != 0:
            raise ConfigurationError("FusionConfig",
                                     f"h = {self.n_heads} does not divide f = {num_filters}")


class AttentionMap:
    """Per-head normalized attention weights over the f filters.

    Attributes:
        values: Tensor of shape (f,); each contiguous segment of length f/h sums to 1.
        heads: h.
    """

    def __init__(self, values: Tensor, heads: int):
        self.values = values
        self.heads = heads

    def __repr__(self):
        return f"[{self.__class__.__name__}] (f={self.dim}, h={self.heads})"

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def segments(self) -> np.ndarray:
        return self.values.data.reshape(self.heads, -1)

    def segment_sums(self) -> np.ndarray:
        return self.segments().sum(axis=1)


def transform_tag(tag: Union[TagVector, Tensor], n_layers: int, hidden_dim: int, out_dim: int,
                  params: List[Dense], slope: float = 0.3) -> Tensor:
    """Stack of n_layers FC+LeakyReLU layers.

    The first n_layers - 1 layers have width hidden_dim and the last one width
    out_dim; n_layers = 0 returns the tag unchanged and requires out_dim == c.
    """
    values = tag.values if isinstance(tag, TagVector) else tag
    c = values.shape[0]
    if n_layers < 0:
        raise ConfigurationError("transform_tag", f"n_layers must be >= 0, got {n_layers}")
    if n_layers == 0:
        if out_dim != c:
            raise ConfigurationError("transform_tag",
                                     f"0 layers is identity, but out_dim {out_dim} != c {c}")
        return values
    if len(params) != n_layers:
        raise ConfigurationError("transform_tag", f"{n_layers} layers but {len(params)} "
                                                  f"parameter sets")
    widths = [hidden_dim] * (n_layers - 1) + [out_dim]
    out = values
    for layer, width in zip(params, widths):
        if layer.d_out != width or layer.d_in != out.shape[0]:
            raise DimensionError("transform_tag", f"layer {layer.name} is {layer.d_in}->"
                                                  f"{layer.d_out}, expected {out.shape[0]}->{width}")
        out = ops.leaky_relu(layer(out), slope)
    return out


class TagTransform(Layer):
    """Parameters of one tag-transform stack (see :func:`transform_tag`)."""

    def __init__(self, name: str, c: int, n_layers: int, hidden_dim: int, out_dim: int,
                 rng: np.random.Generator, slope: float = 0.3):
        super().__init__(name)
        self.c, self.n_layers, self.hidden_dim, self.out_dim = c, n_layers, hidden_dim, out_dim
        self.slope = slope
        if n_layers == 0:
            self.out_dim = c
        widths = [hidden_dim] * (n_layers - 1) + [out_dim]
        self.layers: List[Dense] = []
        d_in = c
        for i, width in enumerate(widths[:n_layers]):
            self.layers.append(Dense(f"{name}.fc{i}", d_in, width, rng))
            d_in = width

    def __repr__(self):
        return f"[{self.__class__.__name__}] {self.c} -> {self.out_dim} ({self.n_layers} layers)"

    def __call__(self, tag: Union[TagVector, Tensor]) -> Tensor:
        return transform_tag(tag, self.n_layers, self.hidden_dim, self.out_dim,
                             self.layers, self.slope)

    def parameters(self):
        for layer in self.layers:
            yield from layer.parameters()


def fuse_codecat(code: Tensor, tag: Union[TagVector, Tensor]) -> Tensor:
    """Code followed by the tag vector, shape (d + c,)."""
    values = tag.values if isinstance(tag, TagVector) else tag
    return ops.concat(code, values)


def fuse_before_code(pooled: Tensor, tag: Union[TagVector, Tensor], cfg: FusionConfig,
                     params: "FusionHead") -> Tensor:
    """Concatenate pooled features with the transformed tag and project to the code."""
    if cfg.mode != "before_code":
        raise ConfigurationError("fuse_before_code", f"mode is '{cfg.mode}'")
    transformed = params.concat_transform(tag)
    return params.code_layer(ops.concat(pooled, transformed))


def attention_map(tag: Union[TagVector, Tensor], n_layers: int, f: int, h: int,
                  params: Tuple[TagTransform, Dense]) -> AttentionMap:
    """Tag -> transform stack -> linear FC to f logits -> per-head softmax.

    n_layers = 0 means a single linear FC from c to f.
    """
    if h < 1 or f % h != 0:
        raise ConfigurationError("attention_map", f"h = {h} does not divide f = {f}")
    transform, head = params
    if transform.n_layers != n_layers:
        raise ConfigurationError("attention_map", f"transform has {transform.n_layers} layers, "
                                                  f"expected {n_layers}")
    if head.d_out != f:
        raise DimensionError("attention_map", f"attention head outputs {head.d_out}, expected {f}")
    logits = head(transform(tag))
    return AttentionMap(ops.softmax_segments(logits, h), h)


def apply_attention(feature_map: Tensor, attention: AttentionMap) -> Tensor:
    """M'[t, i] = M[t, i] * A[i]: every head's filters scaled by its own weights."""
    f = feature_map.shape[1] if feature_map.data.ndim == 2 else None
    if f is None or attention.dim != f:
        raise DimensionError("apply_attention", f"feature map {feature_map.shape} and attention "
                                                f"({attention.dim},) disagree")
    if f % attention.heads != 0:
        raise DimensionError("apply_attention", f"{attention.heads} heads do not split f = {f}")
    return ops.scale_channels(feature_map, attention.values)


def fuse_combined(pool: Callable[[Tensor], Tensor], feature_map: Tensor,
                  tag: Union[TagVector, Tensor], cfg: FusionConfig,
                  params: "FusionHead") -> Tuple[Tensor, AttentionMap]:
    """Attention on M, pooling of the attended map, then before-code concatenation.

    Args:
        pool: maps a (t, f) feature map to the pooled (2f,) vector.
        feature_map: M from the backbone.

    Returns:
        The code and the attention map that was applied.
    """
    if cfg.mode not in ("combined_shared", "combined_separate"):
        raise ConfigurationError("fuse_combined", f"mode is '{cfg.mode}'")
    concat_branch = params.concat_transform(tag)
    if cfg.mode == "combined_shared":
        logits = params.attention_head(concat_branch)
    else:
        logits = params.attention_head(params.attention_transform(tag))
    attention = AttentionMap(ops.softmax_segments(logits, cfg.n_heads), cfg.n_heads)
    pooled = pool(apply_attention(feature_map, attention))
    code = params.code_layer(ops.concat(pooled, concat_branch))
    return code, attention


class FusionHead:
    """All learned fusion parameters for one FusionConfig.

    Attributes:
        concat_transform: tag stack feeding the concatenation (before_code, combined_*).
        attention_transform: tag stack feeding the attention head (attention,
            combined_separate); the concat stack itself in combined_shared.
        attention_head: linear FC to f attention logits.
        code_layer: FC from [pooled, transformed tag] to the code.
    """

    def __init__(self, cfg: FusionConfig, num_filters: int, code_dim: int, c: int,
                 seed: int, slope: float = 0.3):
        cfg.validate(num_filters)
        self.cfg = cfg
        self.c = c
        self.num_filters = num_filters
        self.code_dim = code_dim
        rng = np.random.default_rng(seed)
        hidden = cfg.transform_hidden_dim

        self.concat_transform: Optional[TagTransform] = None
        self.attention_transform: Optional[TagTransform] = None
        self.attention_head: Optional[Dense] = None
        self.code_layer: Optional[Dense] = None

        if cfg.mode in ("before_code", "combined_shared"):
            self.concat_transform = TagTransform("fusion.transform", c, cfg.n_transform_layers,
                                                 hidden, hidden, rng, slope)
        elif cfg.mode == "combined_separate":
            self.concat_transform = TagTransform("fusion.concat", c, cfg.n_transform_layers_concat,
                                                 hidden, hidden, rng, slope)

        if cfg.mode == "attention":
            self.attention_transform = TagTransform("fusion.attention", c, cfg.n_transform_layers,
                                                    hidden, hidden, rng, slope)
        elif cfg.mode == "combined_separate":
            self.attention_transform = TagTransform("fusion.attention", c,
                                                    cfg.n_transform_layers_att,
                                                    hidden, hidden, rng, slope)
        elif cfg.mode == "combined_shared":
            self.attention_transform = self.concat_transform

        if self.attention_transform is not None:
            self.attention_head = Dense("fusion.attention_head", self.attention_transform.out_dim,
                                        num_filters, rng)
        if self.concat_transform is not None:
            self.code_layer = Dense("fusion.code", 2 * num_filters + self.concat_transform.out_dim,
                                    code_dim, rng)

    def __repr__(self):
        return f"[{self.__class__.__name__}] ({self.cfg.mode})"

    def layers(self) -> List[Layer]:
        found = []
        for layer in (self.concat_transform, self.attention_transform,
                      self.attention_head, self.code_layer):
            if layer is not None and all(layer is not seen for seen in found):
                found.append(layer)
        return found

    def parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for layer in self.layers():
            yield from layer.parameters()

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def attention(self, tag: Union[TagVector, Tensor]) -> AttentionMap:
        """n transform layers (the last one of width hidden_dim), then one extra linear FC to f."""
        return attention_map(tag, self.attention_transform.n_layers, self.num_filters,
                             self.cfg.n_heads, (self.attention_transform, self.attention_head))

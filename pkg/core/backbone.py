import numpy as np

from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterator, List, Optional, Tuple

from core import ops
from core.errors import ConfigurationError, DimensionError
from core.layers import BatchNorm, Conv1d, Dense, Layer
from core.tensor import Tensor, as_tensor

__all__ = ["BackboneConfig", "BackboneOutput", "ResidualBlock", "Backbone", "build_backbone"]


@dataclass
class BackboneConfig:
    """Raw-waveform ASC network description.

    Attributes:
        input_samples: waveform length after pre-emphasis.
        input_channels: 1 (mono) or 2 (stereo).
        front_filter_len: strided-conv filter length.
        front_stride: strided-conv hop; equal to the filter length by construction.
        num_filters: f, filters in every conv layer.
        num_res_blocks: number of residual blocks, each ending in a max pool.
        pool_k: max-pool window.
        res_filter_len: filter length inside the residual blocks.
        code_dim: code (last hidden layer) width.
        num_classes: scene classes of the training head.
        leaky_slope: negative slope of every LeakyReLU.
    """
    input_samples: int = 479999
    input_channels: int = 2
    front_filter_len: int = 12
    front_stride: int = 12
    num_filters: int = 128
    num_res_blocks: int = 7
    pool_k: int = 3
    res_filter_len: int = 3
    code_dim: int = 64
    num_classes: int = 10
    leaky_slope: float = 0.3

    @classmethod
    def full_scale(cls) -> "BackboneConfig":
        return cls()

    @classmethod
    def desk_scale(cls) -> "BackboneConfig":
        return cls(input_samples=9599, input_channels=1, num_filters=16,
                   num_res_blocks=3, code_dim=8, num_classes=4)

    @classmethod
    def from_dict(cls, values: Dict) -> "BackboneConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})

    def to_dict(self) -> Dict:
        return asdict(self)

    def front_length(self) -> int:
        return (self.input_samples - self.front_filter_len) // self.front_stride + 1

    def stage_lengths(self) -> List[int]:
        """Time length after the strided conv and after every residual block."""
        lengths = [self.front_length()]
        for _ in range(self.num_res_blocks):
            lengths.append(lengths[-1] // self.pool_k)
        return lengths

    def shape_table(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Output shape of every stage, in network order."""
        lengths = self.stage_lengths()
        f = self.num_filters
        return [
            ("strided-conv", (lengths[0], f)),
            ("res-blocks", (lengths[-1], f)),
            ("global-avg-pool", (f,)),
            ("global-max-pool", (f,)),
            ("concat", (2 * f,)),
            ("code", (self.code_dim,)),
            ("output", (self.num_classes,)),
        ]

    def validate(self):
        for name in ("input_samples", "input_channels", "front_filter_len", "front_stride",
                     "num_filters", "pool_k", "res_filter_len", "code_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigurationError("BackboneConfig", f"{name} must be >= 1, "
                                                           f"got {getattr(self, name)}")
        if self.num_res_blocks < 0:
            raise ConfigurationError("BackboneConfig", "num_res_blocks must be >= 0")
        if self.num_classes < 2:
            raise ConfigurationError("BackboneConfig", "num_classes must be >= 2")
        if not 0 < self.leaky_slope < 1:
            raise ConfigurationError("BackboneConfig", f"leaky_slope must be in (0, 1)")
        if self.front_stride != self.front_filter_len:
            raise ConfigurationError(
                "strided-conv", f"stride {self.front_stride} != filter length "
                                f"{self.front_filter_len}")
        if self.input_samples < self.front_filter_len:
            raise ConfigurationError(
                "strided-conv", f"input_samples {self.input_samples} < filter length "
                                f"{self.front_filter_len}")
        length = self.front_length()
        # batch norm in train mode needs T >= 2 at every stage that normalizes
        if length < 2:
            raise ConfigurationError(
                "strided-conv", f"floor(({self.input_samples} - {self.front_filter_len}) / "
                                f"{self.front_stride}) + 1 = {length} is too short")
        for i in range(self.num_res_blocks):
            pooled = length // self.pool_k
            if length < 2 or pooled < 1:
                raise ConfigurationError(
                    f"res-block {i}", f"input length {length}, floor({length} / "
                                      f"{self.pool_k}) = {pooled}")
            length = pooled


@dataclass
class BackboneOutput:
    """Everything one forward pass produces.

    Attributes:
        feature_map: M, (t, f) after the residual blocks, before pooling.
        pooled: (2f,) global average then global max.
        code: (code_dim,).
        logits: (num_classes,).
    """
    feature_map: Tensor
    pooled: Tensor
    code: Tensor
    logits: Tensor


class ResidualBlock(Layer):
    """Conv-BN-LReLU-Conv-BN-LReLU with an identity skip, then max pooling.

    Attributes:
        skip: when False the identity path is dropped (ablation only).
    """

    def __init__(self, name: str, filters: int, filter_len: int, pool_k: int,
                 slope: float, rng: np.random.Generator):
        super().__init__(name)
        self.conv1 = Conv1d(f"{name}.conv1", filter_len, filters, filters, rng, padding="same")
        self.bn1 = BatchNorm(f"{name}.bn1", filters)
        self.conv2 = Conv1d(f"{name}.conv2", filter_len, filters, filters, rng, padding="same")
        self.bn2 = BatchNorm(f"{name}.bn2", filters)
        self.pool_k = pool_k
        self.slope = slope
        self.skip = True

    def __repr__(self):
        return f"Res block [{self.conv1}, {self.bn1}, LReLU, {self.conv2}, {self.bn2}, " \
               f"LReLU | MaxPool({self.pool_k})]"

    def layers(self) -> List[Layer]:
        return [self.conv1, self.bn1, self.conv2, self.bn2]

    def conv_path(self, x: Tensor, mode: str) -> Tensor:
        out = ops.leaky_relu(self.bn1(self.conv1(x), mode), self.slope)
        return ops.leaky_relu(self.bn2(self.conv2(out), mode), self.slope)

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        filters = self.conv1.weight.shape[1]
        if x.data.ndim != 2 or x.shape[1] != filters:
            raise DimensionError(self.name, f"expected (T, {filters}), got {x.shape}")
        out = self.conv_path(x, mode)
        if self.skip:
            out = ops.add(x, out)
        return ops.max_pool1d(out, self.pool_k)

    def parameters(self):
        for layer in self.layers():
            yield from layer.parameters()

    def buffers(self):
        for layer in self.layers():
            yield from layer.buffers()


class Backbone:
    """The raw-waveform network: strided conv, residual blocks, dual pooling, code, head.

    code_layer and output_layer are always built, even for fusion modes that
    replace them (before_code and combined_* bring their own code layer, codecat
    its own output layer). Building them keeps the rng draw order, and with it
    every other parameter, identical across modes, and keeps one checkpoint
    layout per backbone. A replaced layer gets no gradient, so it stays at its
    initial values.
    """

    def __init__(self, cfg: BackboneConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        f = cfg.num_filters

        self.front_conv = Conv1d("front.conv", cfg.front_filter_len, cfg.input_channels, f,
                                 rng, stride=cfg.front_stride)
        self.front_bn = BatchNorm("front.bn", f)
        self.blocks = [ResidualBlock(f"block{i}", f, cfg.res_filter_len, cfg.pool_k,
                                     cfg.leaky_slope, rng)
                       for i in range(cfg.num_res_blocks)]
        self.code_layer = Dense("code", 2 * f, cfg.code_dim, rng)
        self.output_layer = Dense("output", cfg.code_dim, cfg.num_classes, rng)

    def __repr__(self):
        return f"[{self.__class__.__name__}] ({self.cfg.input_samples}, " \
               f"{self.cfg.input_channels}) -> {self.cfg.num_classes}"

    def layers(self) -> List[Layer]:
        return [self.front_conv, self.front_bn, *self.blocks, self.code_layer, self.output_layer]

    def parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for layer in self.layers():
            yield from layer.parameters()

    def buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for layer in self.layers():
            yield from layer.buffers()

    def batch_norms(self) -> List[BatchNorm]:
        norms = [self.front_bn]
        for block in self.blocks:
            norms += [block.bn1, block.bn2]
        return norms

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def features(self, waveform: Tensor, mode: str = "train") -> Tensor:
        """Feature map M of shape (t, f), before global pooling."""
        waveform = as_tensor(waveform)
        expected = (self.cfg.input_samples, self.cfg.input_channels)
        if waveform.shape != expected:
            raise DimensionError("backbone", f"waveform {waveform.shape} != {expected}")
        out = ops.leaky_relu(self.front_bn(self.front_conv(waveform), mode), self.cfg.leaky_slope)
        for block in self.blocks:
            out = block(out, mode)
        return out

    @staticmethod
    def pool(feature_map: Tensor) -> Tensor:
        return ops.concat(ops.global_avg_pool(feature_map), ops.global_max_pool(feature_map))

    def encode(self, pooled: Tensor) -> Tensor:
        return self.code_layer(pooled)

    def classify(self, code: Tensor) -> Tensor:
        return self.output_layer(code)

    def forward(self, waveform: Tensor, mode: str = "train") -> BackboneOutput:
        feature_map = self.features(waveform, mode)
        pooled = self.pool(feature_map)
        code = self.encode(pooled)
        return BackboneOutput(feature_map, pooled, code, self.classify(code))

    __call__ = forward

    def residual_block(self, index: int, x: Tensor, mode: str = "train") -> Tensor:
        return self.blocks[index](x, mode)


def build_backbone(cfg: BackboneConfig, seed: int) -> Backbone:
    """Build the network with parameters drawn deterministically from ``seed``."""
    return Backbone(cfg, seed)

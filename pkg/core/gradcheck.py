"""Central-difference gradient checks and the named check suites.

Suites:
    - ops: every differentiable op on small random tensors.
    - backbone: a tiny backbone end to end, w.r.t. the waveform and several parameters.
    - fusion: tag transforms, attention, and every fusion path.
"""
import numpy as np

from dataclasses import dataclass
from typing import Callable, List

from core import ops
from core.backbone import BackboneConfig, ResidualBlock, build_backbone
from core.errors import ConfigurationError
from core.fusion import (FusionConfig, FusionHead, TagTransform, TagVector, apply_attention,
                         attention_map, fuse_before_code, fuse_codecat, fuse_combined)
from core.layers import Dense
from core.tensor import Tape, Tensor

__all__ = ["GradCheckResult", "grad_check", "run_suite", "SUITES", "GRAD_TOLERANCE"]


GRAD_TOLERANCE = 1e-4


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` must return a scalar tensor. ``x`` is perturbed in place and restored,
    so it may be a parameter that ``f`` reaches through a model.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigurationError("grad_check", f"eps must be in [1e-7, 1e-3], got {eps}")
    requires_grad = x.requires_grad
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        loss = f(x)
    tape.backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    x.requires_grad = requires_grad

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x).item()
        flat[i] = orig - eps
        f_minus = f(x).item()
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2 * eps)

    analytic = analytic.reshape(-1)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


@dataclass
class GradCheckResult:
    name: str
    error: float
    tolerance: float = GRAD_TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tolerance)


def _projection(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """A fixed random linear functional, so every output coordinate matters."""
    weights = Tensor(rng.standard_normal(out.shape))
    return lambda y: ops.sum_all(ops.mul(y, weights))


def _check_output(name: str, forward: Callable[[], Tensor], wrt: List[Tensor],
                  rng: np.random.Generator, eps: float) -> GradCheckResult:
    project = _projection(forward(), rng)
    worst = max(grad_check(lambda _: project(forward()), t, eps) for t in wrt)
    return GradCheckResult(name, worst)


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _ops_suite(rng: np.random.Generator, eps: float) -> List[GradCheckResult]:
    results = []

    x = Tensor(rng.standard_normal((9, 2)))
    w = Tensor(rng.standard_normal((3, 2, 4)))
    b = Tensor(rng.standard_normal(4))
    results.append(_check_output("conv1d", lambda: ops.conv1d(x, w, b), [x, w, b], rng, eps))
    results.append(_check_output("conv1d[same]",
                                 lambda: ops.conv1d(x, w, b, padding="same"), [x, w, b], rng, eps))
    ws = Tensor(rng.standard_normal((3, 2, 3)))
    bs = Tensor(rng.standard_normal(3))
    results.append(_check_output("conv1d[strided]",
                                 lambda: ops.conv1d(x, ws, bs, stride=3), [x, ws, bs], rng, eps))

    xl = Tensor(_away_from_zero(rng, (5, 3)))
    results.append(_check_output("leaky_relu", lambda: ops.leaky_relu(xl, 0.3), [xl], rng, eps))

    xb = Tensor(rng.standard_normal((6, 3)) * 2 + 1)
    gamma = Tensor(rng.uniform(0.5, 1.5, 3))
    beta = Tensor(rng.standard_normal(3))
    state = ops.BatchNormState(3)
    results.append(_check_output("batch_norm[train]",
                                 lambda: ops.batch_norm(xb, gamma, beta, state, "train"),
                                 [xb, gamma, beta], rng, eps))
    frozen = ops.BatchNormState(3)
    frozen.running_mean = rng.standard_normal(3)
    frozen.running_var = rng.uniform(0.5, 2.0, 3)
    results.append(_check_output("batch_norm[infer]",
                                 lambda: ops.batch_norm(xb, gamma, beta, frozen, "infer"),
                                 [xb, gamma, beta], rng, eps))

    # distinct values, so no window has a near-tie
    xp = Tensor(rng.permutation(20).reshape(10, 2) * 0.1)
    results.append(_check_output("max_pool1d", lambda: ops.max_pool1d(xp, 3), [xp], rng, eps))
    results.append(_check_output("global_avg_pool", lambda: ops.global_avg_pool(xb), [xb], rng, eps))
    results.append(_check_output("global_max_pool", lambda: ops.global_max_pool(xp), [xp], rng, eps))

    xd = Tensor(rng.standard_normal(5))
    wd = Tensor(rng.standard_normal((5, 3)))
    bd = Tensor(rng.standard_normal(3))
    results.append(_check_output("dense", lambda: ops.dense(xd, wd, bd), [xd, wd, bd], rng, eps))

    xs = Tensor(rng.standard_normal(8))
    results.append(_check_output("softmax_segments",
                                 lambda: ops.softmax_segments(xs, 2), [xs], rng, eps))
    results.append(GradCheckResult("softmax_cross_entropy",
                                   max(grad_check(lambda t: ops.softmax_cross_entropy(t, 2), xs, eps),
                                       grad_check(lambda t: ops.softmax_cross_entropy(
                                           t, np.full(8, 1 / 8)), xs, eps))))

    m = Tensor(rng.standard_normal((4, 6)))
    a = Tensor(rng.uniform(0.1, 1.0, 6))
    results.append(_check_output("scale_channels", lambda: ops.scale_channels(m, a), [m, a], rng, eps))
    results.append(_check_output("concat", lambda: ops.concat(xd, xs), [xd, xs], rng, eps))
    y = Tensor(rng.standard_normal((4, 6)))
    results.append(_check_output("add", lambda: ops.add(m, y), [m, y], rng, eps))
    results.append(_check_output("mul", lambda: ops.mul(m, y), [m, y], rng, eps))
    return results


def tiny_backbone_config() -> BackboneConfig:
    """96-sample mono input, 4 filters, 2 residual blocks: 24 -> 8 -> 2 frames."""
    return BackboneConfig(input_samples=96, input_channels=1, front_filter_len=4, front_stride=4,
                          num_filters=4, num_res_blocks=2, code_dim=3, num_classes=2)


def _backbone_suite(rng: np.random.Generator, eps: float) -> List[GradCheckResult]:
    results = []
    bb = build_backbone(tiny_backbone_config(), seed=0)
    wave = Tensor(rng.standard_normal((96, 1)))
    loss = lambda: ops.softmax_cross_entropy(bb.forward(wave, "train").logits, 1)
    results.append(GradCheckResult("backbone[waveform]", grad_check(lambda _: loss(), wave, eps)))
    for param in (bb.front_conv.weight, bb.blocks[0].conv2.weight, bb.blocks[1].bn1.gamma,
                  bb.code_layer.weight, bb.output_layer.bias):
        results.append(GradCheckResult(f"backbone[{param.name}]",
                                       grad_check(lambda _: loss(), param, eps)))

    block = ResidualBlock("toy", 2, 3, 3, 0.3, np.random.default_rng(1))
    toy = Tensor(rng.standard_normal((12, 2)))
    results.append(_check_output("residual_block", lambda: block(toy, "train"),
                                 [toy, block.conv1.weight, block.bn2.beta], rng, eps))
    return results


def _fusion_suite(rng: np.random.Generator, eps: float) -> List[GradCheckResult]:
    results = []
    c, f, t, code_dim = 5, 8, 4, 3
    tag = Tensor(rng.uniform(0.05, 0.95, c))
    m = Tensor(rng.standard_normal((t, f)))
    pooled = Tensor(rng.standard_normal(2 * f))
    code = Tensor(rng.standard_normal(code_dim))

    stack = TagTransform("toy", c, 2, 6, 4, np.random.default_rng(2))
    results.append(_check_output("transform_tag", lambda: stack(tag),
                                 [tag, stack.layers[0].weight, stack.layers[1].bias], rng, eps))

    att_stack = TagTransform("att", c, 1, 6, 6, np.random.default_rng(3))
    head = Dense("att.head", 6, f, np.random.default_rng(4))
    attend = lambda: apply_attention(m, attention_map(tag, 1, f, 2, (att_stack, head)))
    results.append(_check_output("attention_map+apply_attention", attend,
                                 [m, tag, att_stack.layers[0].weight, head.weight], rng, eps))

    results.append(_check_output("fuse_codecat", lambda: fuse_codecat(code, TagVector(tag.data)),
                                 [code], rng, eps))

    cfg = FusionConfig(mode="before_code", n_transform_layers=2, transform_hidden_dim=6)
    params = FusionHead(cfg, f, code_dim, c, seed=5)
    results.append(_check_output("fuse_before_code",
                                 lambda: fuse_before_code(pooled, tag, cfg, params),
                                 [pooled, tag, params.code_layer.weight,
                                  params.concat_transform.layers[0].weight], rng, eps))

    for mode in ("combined_shared", "combined_separate"):
        cfg = FusionConfig(mode=mode, n_transform_layers=1, transform_hidden_dim=6, n_heads=4,
                           n_transform_layers_concat=1, n_transform_layers_att=2)
        params = FusionHead(cfg, f, code_dim, c, seed=6)
        pool = lambda fm: ops.concat(ops.global_avg_pool(fm), ops.global_avg_pool(fm))
        results.append(_check_output(
            f"fuse_combined[{mode}]",
            lambda: fuse_combined(pool, m, tag, cfg, params)[0],
            [m, tag, params.attention_head.weight, params.code_layer.weight], rng, eps))
    return results


SUITES = {
    "ops": _ops_suite,
    "backbone": _backbone_suite,
    "fusion": _fusion_suite,
}


def run_suite(scope: str, eps: float = 1e-5, seed: int = 0) -> List[GradCheckResult]:
    if scope not in SUITES:
        raise ConfigurationError("gradcheck", f"unknown scope '{scope}', "
                                              f"expected one of {sorted(SUITES)}")
    return SUITES[scope](np.random.default_rng(seed), eps)

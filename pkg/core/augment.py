import numpy as np

from typing import Optional, Tuple

from core.errors import ConfigurationError, DataError, DimensionError
from core.wav import Recording

__all__ = ["PRE_EMPHASIS_BETA", "MIXUP_ALPHA", "pre_emphasis", "one_hot", "sample_lambda",
           "mixup", "mix_tags"]


PRE_EMPHASIS_BETA = 0.97
MIXUP_ALPHA = 0.4


def pre_emphasis(x: np.ndarray, beta: float = PRE_EMPHASIS_BETA) -> np.ndarray:
    """y[n] = x[n+1] - beta * x[n]; the output is one sample shorter."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise DimensionError("pre_emphasis", f"needs N >= 2 samples, got {x.shape[0]}")
    if not 0 <= beta < 1:
        raise ConfigurationError("pre_emphasis", f"beta must be in [0, 1), got {beta}")
    return x[1:] - beta * x[:-1]


def one_hot(label: int, num_classes: int) -> np.ndarray:
    if not 0 <= label < num_classes:
        raise DataError("one_hot", f"label {label} outside [0, {num_classes})")
    out = np.zeros(num_classes)
    out[label] = 1.0
    return out


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    if alpha <= 0:
        raise ConfigurationError("mixup", f"alpha must be > 0, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mixup(a: Recording, b: Recording, num_classes: int, alpha: float = MIXUP_ALPHA,
          rng: Optional[np.random.Generator] = None,
          lam: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, float]:
    """Convex combination of two labelled recordings.

    Returns:
        (mixed samples, soft label, lambda). ``lam`` forces lambda instead of
        drawing it from Beta(alpha, alpha).
    """
    if a.samples.shape != b.samples.shape:
        raise DimensionError("mixup", f"shape mismatch {a.samples.shape} vs {b.samples.shape}")
    for rec in (a, b):
        if rec.scene_label is None:
            raise DataError("mixup", f"recording '{rec.id}' has no scene label")
    if lam is None:
        lam = sample_lambda(alpha, rng if rng is not None else np.random.default_rng())
    if lam == 1.0:
        return a.samples.copy(), one_hot(a.scene_label, num_classes), lam
    samples = lam * a.samples + (1 - lam) * b.samples
    label = lam * one_hot(a.scene_label, num_classes) + (1 - lam) * one_hot(b.scene_label,
                                                                             num_classes)
    return samples, label, lam


def mix_tags(tag_a: np.ndarray, tag_b: np.ndarray, lam: float) -> np.ndarray:
    """Mix two tag vectors with the lambda used for their recordings."""
    return lam * np.asarray(tag_a, dtype=np.float64) + (1 - lam) * np.asarray(tag_b, dtype=np.float64)

import zlib
import numpy as np

from abc import ABCMeta, abstractmethod
from typing import Sequence, Union
from pathlib import Path

from core.dataset import TagTable, load_tags
from core.errors import ConfigurationError
from core.wav import Recording


class BaseTagger(metaclass=ABCMeta):
    """The base class of tag-vector providers.

    A tagger maps a recording to c event posteriors in [0, 1]. The external
    audio-tagging network is represented by a tag file; the synthetic taggers
    derive vectors from ground truth so that tagger quality can be varied.
    """

    @abstractmethod
    def tag(self, rec: Recording) -> np.ndarray:
        pass

    def table(self, recordings: Sequence[Recording]) -> TagTable:
        return TagTable({rec.id: self.tag(rec) for rec in recordings})


class FileTagger(BaseTagger):
    """Tag vectors read from a tag file or an existing table."""

    def __init__(self, source: Union[TagTable, str, Path]):
        self.source = source if isinstance(source, TagTable) else load_tags(source)

    def tag(self, rec):
        return self.source.values(rec.id)


class _TruthTagger(BaseTagger):

    def __init__(self, truth: TagTable, seed: int = 0):
        self.truth = truth
        self.seed = seed

    def presence(self, rec: Recording) -> np.ndarray:
        return (self.truth.values(rec.id) >= 0.5).astype(np.float64)

    def rng(self, rec: Recording) -> np.random.Generator:
        # per-recording stream, independent of iteration order
        return np.random.default_rng([self.seed, zlib.crc32(rec.id.encode("utf-8"))])


class OracleTagger(_TruthTagger):
    """Ground-truth presence blurred as |present - U(0, blur)|."""

    def __init__(self, truth: TagTable, blur: float = 0.1, seed: int = 0):
        super().__init__(truth, seed)
        if not 0 <= blur <= 1:
            raise ConfigurationError("OracleTagger", f"blur must be in [0, 1], got {blur}")
        self.blur = blur

    def tag(self, rec):
        present = self.presence(rec)
        if self.blur == 0:
            return present
        return np.abs(present - self.rng(rec).uniform(0, self.blur, present.shape))


class NoisyTagger(_TruthTagger):
    """Ground-truth presence with every entry flipped with probability ``flip_prob``."""

    def __init__(self, truth: TagTable, flip_prob: float = 0.1, seed: int = 0):
        super().__init__(truth, seed)
        if not 0 <= flip_prob <= 1:
            raise ConfigurationError("NoisyTagger", f"flip_prob must be in [0, 1], got {flip_prob}")
        self.flip_prob = flip_prob

    def tag(self, rec):
        present = self.presence(rec)
        flips = self.rng(rec).random(present.shape) < self.flip_prob
        return np.where(flips, 1.0 - present, present)


def build_tagger(kind: str, truth: TagTable, seed: int = 0, **kwargs) -> BaseTagger:
    if kind == "file":
        return FileTagger(truth)
    if kind == "oracle":
        return OracleTagger(truth, kwargs.get("blur", 0.1), seed)
    if kind == "noisy":
        return NoisyTagger(truth, kwargs.get("flip_prob", 0.1), seed)
    raise ConfigurationError("tagger", f"unknown tagger '{kind}', expected file, oracle or noisy")

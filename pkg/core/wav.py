"""RIFF/WAVE PCM16 reader and writer.

Only 16-bit little-endian PCM with one or two channels is accepted. Chunks
other than ``fmt `` and ``data`` are skipped. Every parse error carries the
byte offset where parsing stopped.
"""
import struct
import numpy as np

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from core.errors import DimensionError, MalformedHeaderError, TruncatedDataError, \
    UnsupportedCodecError

__all__ = ["Recording", "parse_wav", "read_wav", "wav_bytes", "write_wav"]


WAVE_FORMAT_PCM = 0x0001
PCM16_SCALE = 32768.0


@dataclass
class Recording:
    """One audio clip.

    Attributes:
        samples: (N, channels) float64 in [-1, 1].
        sample_rate: Hz.
        id: recording id, usually the file name.
        scene_label: class index, if known.
    """
    samples: np.ndarray
    sample_rate: int
    id: str = ""
    scene_label: Optional[int] = None

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


def parse_wav(raw: bytes, rec_id: str = "") -> Recording:
    if len(raw) < 12:
        raise TruncatedDataError("wav", f"RIFF header needs 12 bytes, got {len(raw)}", offset=0)
    riff, _, wave = struct.unpack("<4sI4s", raw[:12])
    if riff != b"RIFF":
        raise MalformedHeaderError("wav", f"expected 'RIFF' at offset 0, got {riff!r}", offset=0)
    if wave != b"WAVE":
        raise MalformedHeaderError("wav", f"expected 'WAVE' at offset 8, got {wave!r}", offset=8)

    pos = 12
    channels = rate = None
    while pos + 8 <= len(raw):
        chunk_id, size = struct.unpack("<4sI", raw[pos:pos + 8])
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + 16 > len(raw):
                raise MalformedHeaderError("wav", f"fmt chunk of {size} bytes at offset {pos}",
                                           offset=pos)
            fmt_tag, channels, rate, _, block_align, bits = \
                struct.unpack("<HHIIHH", raw[body:body + 16])
            if fmt_tag != WAVE_FORMAT_PCM:
                raise UnsupportedCodecError("wav", f"format tag {fmt_tag:#06x} is not PCM",
                                            offset=body)
            if bits != 16:
                raise UnsupportedCodecError("wav", f"{bits} bits per sample, only 16 supported",
                                            offset=body + 14)
            if channels not in (1, 2):
                raise UnsupportedCodecError("wav", f"{channels} channels, only 1 or 2 supported",
                                            offset=body + 2)
            if block_align != 2 * channels:
                raise MalformedHeaderError("wav", f"block align {block_align} != "
                                                  f"{2 * channels}", offset=body + 12)
        elif chunk_id == b"data":
            if channels is None:
                raise MalformedHeaderError("wav", f"data chunk at offset {pos} precedes fmt",
                                           offset=pos)
            if body + size > len(raw):
                raise TruncatedDataError("wav", f"data chunk declares {size} bytes at offset "
                                                f"{body}, only {len(raw) - body} present",
                                         offset=body)
            if size % (2 * channels):
                raise MalformedHeaderError("wav", f"data size {size} is not a whole number of "
                                                  f"{channels}-channel frames", offset=pos + 4)
            pcm = np.frombuffer(raw, dtype="<i2", count=size // 2, offset=body)
            samples = pcm.reshape(-1, channels).astype(np.float64) / PCM16_SCALE
            return Recording(samples, int(rate), rec_id)
        # chunks are word aligned
        pos = body + size + (size & 1)

    raise MalformedHeaderError("wav", "no fmt chunk" if channels is None else "no data chunk",
                               offset=pos)


def read_wav(path: Union[str, Path]) -> Recording:
    path = Path(path)
    return parse_wav(path.read_bytes(), path.stem)


def wav_bytes(samples: np.ndarray, sample_rate: int) -> bytes:
    """Encode (N, C) samples in [-1, 1] as PCM16. Values are clipped, then rounded."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2 or samples.shape[1] not in (1, 2):
        raise DimensionError("wav", f"expected (N, 1) or (N, 2) samples, got {samples.shape}")
    channels = samples.shape[1]
    pcm = np.clip(np.round(samples * PCM16_SCALE), -32768, 32767).astype("<i2").tobytes()
    fmt = struct.pack("<HHIIHH", WAVE_FORMAT_PCM, channels, sample_rate,
                      sample_rate * 2 * channels, 2 * channels, 16)
    return b"".join([b"RIFF", struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(pcm)), b"WAVE",
                     b"fmt ", struct.pack("<I", len(fmt)), fmt,
                     b"data", struct.pack("<I", len(pcm)), pcm])


def write_wav(path: Union[str, Path], samples: np.ndarray, sample_rate: int):
    Path(path).write_bytes(wav_bytes(samples, sample_rate))

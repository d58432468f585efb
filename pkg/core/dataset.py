"""Recordings, label and tag files, and the synthetic scene/event generator.

File formats (UTF-8, one record per line):
    - metadata: ``filename<sep>scene_label``, sep is a tab or a comma
      (auto-detected from the first record); an optional ``filename`` header
      line is skipped.
    - tags: ``id v1 v2 ... vc``, whitespace separated, every v in [0, 1].

A dataset directory holds ``dataset.json`` (class names, sample rate and,
for synthetic data, the generating spec), ``train.tsv``, ``test.tsv``,
``tags.txt`` and the WAV files under ``audio/``.
"""
import json
import numpy as np
import pandas as pd

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from core.errors import ConfigurationError, DataError, ParseError
from core.fusion import TagVector
from core.wav import PCM16_SCALE, Recording, read_wav, write_wav

__all__ = ["DCASE_SCENES", "TagTable", "Dataset", "SynthSpec", "load_metadata", "load_tags",
           "write_metadata", "write_tags", "generate_synthetic", "write_dataset", "load_dataset"]


DCASE_SCENES = ["airport", "bus", "metro", "metro_station", "park", "public_square",
                "shopping_mall", "street_pedestrian", "street_traffic", "tram"]


class TagTable:
    """Recording id -> tag vector of length c."""

    def __init__(self, vectors: Optional[Dict[str, np.ndarray]] = None):
        self._vectors: Dict[str, np.ndarray] = {}
        self.dim: Optional[int] = None
        for rec_id, values in (vectors or {}).items():
            self.add(rec_id, values)

    def __repr__(self):
        return f"[{self.__class__.__name__}] ({len(self)} ids, c={self.dim})"

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self._vectors

    def __iter__(self) -> Iterator[str]:
        return iter(self._vectors)

    @property
    def ids(self) -> List[str]:
        return list(self._vectors)

    def add(self, rec_id: str, values):
        vector = TagVector(np.asarray(values, dtype=np.float64), rec_id).values.data
        if self.dim is None:
            self.dim = len(vector)
        elif len(vector) != self.dim:
            raise DataError("TagTable", f"'{rec_id}' has {len(vector)} entries, expected {self.dim}")
        self._vectors[rec_id] = vector

    def values(self, rec_id: str) -> np.ndarray:
        if rec_id not in self._vectors:
            raise DataError("TagTable", f"no tag vector for '{rec_id}'")
        return self._vectors[rec_id]

    def __getitem__(self, rec_id: str) -> TagVector:
        return TagVector(self.values(rec_id), rec_id)

    def missing(self, ids: Sequence[str]) -> List[str]:
        return [i for i in ids if i not in self._vectors]


def _records(path: Union[str, Path], name: str) -> pd.Series:
    """Non-blank lines of a text file, indexed by 1-based line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(name, f"file not found: {path}")
    lines = pd.Series(text.splitlines(), dtype=object)
    lines.index = lines.index + 1
    lines = lines.str.strip()
    return lines[lines != ""]


def load_metadata(path: Union[str, Path],
                  classes: Sequence[str] = DCASE_SCENES) -> List[Tuple[str, int]]:
    """Read ``filename<sep>scene_label`` lines.

    Returns:
        (id, class index) pairs in file order; the id is the file stem.
    """
    lines = _records(path, "metadata")
    if lines.empty:
        return []
    sep = "\t" if "\t" in lines.iloc[0] else ","
    fields_ = lines.str.split(sep)
    if fields_.iloc[0][0].strip().lower() == "filename":
        fields_ = fields_.iloc[1:]

    bad = fields_[fields_.str.len() != 2]
    if not bad.empty:
        line = bad.index[0]
        raise ParseError("metadata", f"line {line}: expected 2 columns, got {len(bad.iloc[0])}",
                         offset=line)

    table = pd.DataFrame({"filename": fields_.str[0].str.strip(),
                          "scene_label": fields_.str[1].str.strip()})
    table["id"] = table["filename"].map(lambda f: Path(f.replace("\\", "/")).stem)

    unknown = table[~table["scene_label"].isin(list(classes))]
    if not unknown.empty:
        line = unknown.index[0]
        raise ParseError("metadata", f"line {line}: unknown scene label "
                                     f"'{unknown['scene_label'].iloc[0]}'", offset=line)
    dup = table[table["id"].duplicated()]
    if not dup.empty:
        line = dup.index[0]
        raise ParseError("metadata", f"line {line}: duplicate id '{dup['id'].iloc[0]}'",
                         offset=line)

    index = {name: i for i, name in enumerate(classes)}
    return [(rec_id, index[label]) for rec_id, label in zip(table["id"], table["scene_label"])]


def load_tags(path: Union[str, Path]) -> TagTable:
    lines = _records(path, "tags")
    table = TagTable()
    if lines.empty:
        return table
    fields_ = lines.str.split()
    widths = fields_.str.len()

    short = widths[widths < 2]
    if not short.empty:
        line = short.index[0]
        raise ParseError("tags", f"line {line}: expected an id followed by tag values", offset=line)
    ragged = widths[widths != widths.iloc[0]]
    if not ragged.empty:
        line = ragged.index[0]
        raise ParseError("tags", f"line {line}: {ragged.iloc[0] - 1} values, expected "
                                 f"{widths.iloc[0] - 1}", offset=line)

    ids = fields_.str[0]
    values = pd.DataFrame(fields_.str[1:].tolist(), index=fields_.index).apply(
        pd.to_numeric, errors="coerce")
    invalid = values[~(values.notna() & (values >= 0) & (values <= 1)).all(axis=1)]
    if not invalid.empty:
        line = invalid.index[0]
        raise ParseError("tags", f"line {line}: tag values must be reals in [0, 1], got "
                                 f"'{' '.join(fields_[line][1:])}'", offset=line)
    dup = ids[ids.duplicated()]
    if not dup.empty:
        line = dup.index[0]
        raise ParseError("tags", f"line {line}: duplicate id '{dup.iloc[0]}'", offset=line)

    for line, rec_id in ids.items():
        table.add(rec_id, values.loc[line].to_numpy(dtype=np.float64))
    return table


def write_metadata(path: Union[str, Path], rows: Sequence[Tuple[str, int]],
                   classes: Sequence[str]):
    data = pd.DataFrame([(f"audio/{rec_id}.wav", classes[label]) for rec_id, label in rows],
                        columns=["filename", "scene_label"])
    data.to_csv(path, sep="\t", header=False, index=False)


def write_tags(path: Union[str, Path], table: TagTable, ids: Optional[Sequence[str]] = None):
    ids = table.ids if ids is None else list(ids)
    data = pd.DataFrame([table.values(i) for i in ids], index=ids)
    data.to_csv(path, sep=" ", header=False, float_format="%.17g")


@dataclass
class Dataset:
    """Train and test recordings plus their tag table.

    Attributes:
        classes: scene names; ``Recording.scene_label`` indexes into it.
        event_names: names of the c tag-vector entries, if known.
    """
    train: List[Recording]
    test: List[Recording]
    tags: TagTable
    classes: List[str]
    sample_rate: int
    event_names: List[str] = field(default_factory=list)
    spec: Optional["SynthSpec"] = None

    def __repr__(self):
        return f"[{self.__class__.__name__}] ({len(self.train)} train, {len(self.test)} test, " \
               f"{len(self.classes)} classes, c={self.tags.dim})"

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass
class SynthSpec:
    """Synthetic scene/event dataset description.

    Every scene owns ``events_per_scene`` characteristic events. A
    characteristic event occurs with probability ``1 - occurrence_noise``, any
    other event with probability ``occurrence_noise``. Events are quiet tone
    bursts under gain-varied noise, so the waveform alone separates scenes
    poorly while the tag vector separates them well.

    Attributes:
        num_scenes: scene classes.
        num_events: c, tag-vector length.
        events_per_scene: characteristic events per scene.
        train_per_scene / test_per_scene: recordings per scene and split.
        duration_samples: samples per recording (9600 -> 9599 after pre-emphasis).
        sample_rate: Hz.
        noise_level: std of the background noise before the per-recording gain.
        gain_range: per-recording noise gain, drawn uniformly.
        event_amplitude: peak amplitude of an event burst.
        occurrence_noise: probability mass moved away from the scene profile.
        tag_blur: tag entry is |present - U(0, tag_blur)|.
        seed: generator seed.
    """
    num_scenes: int = 4
    num_events: int = 8
    events_per_scene: int = 2
    train_per_scene: int = 50
    test_per_scene: int = 25
    duration_samples: int = 9600
    sample_rate: int = 16000
    noise_level: float = 0.1
    gain_range: Tuple[float, float] = (0.5, 1.5)
    event_amplitude: float = 0.03
    occurrence_noise: float = 0.1
    tag_blur: float = 0.1
    seed: int = 0

    @classmethod
    def from_dict(cls, values: Dict) -> "SynthSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ConfigurationError("SynthSpec", f"unknown keys {sorted(unknown)}")
        values = dict(values)
        if "gain_range" in values:
            values["gain_range"] = tuple(values["gain_range"])
        return cls(**values)

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["gain_range"] = list(self.gain_range)
        return out

    def profiles(self) -> List[List[int]]:
        """Characteristic events of every scene."""
        k, c = self.events_per_scene, self.num_events
        return [sorted({(s * k + j) % c for j in range(k)}) for s in range(self.num_scenes)]

    def validate(self):
        if self.num_scenes < 2:
            raise ConfigurationError("SynthSpec", "num_scenes must be >= 2")
        if not 1 <= self.events_per_scene <= self.num_events:
            raise ConfigurationError("SynthSpec", "events_per_scene must be in [1, num_events]")
        if min(self.train_per_scene, self.test_per_scene) < 1:
            raise ConfigurationError("SynthSpec", "every split needs >= 1 recording per scene")
        if self.duration_samples < 2:
            raise ConfigurationError("SynthSpec", "duration_samples must be >= 2")
        if not 0 <= self.occurrence_noise <= 0.5:
            raise ConfigurationError("SynthSpec", "occurrence_noise must be in [0, 0.5]")
        if not 0 <= self.tag_blur <= 1:
            raise ConfigurationError("SynthSpec", "tag_blur must be in [0, 1]")
        if self.noise_level < 0 or self.event_amplitude < 0:
            raise ConfigurationError("SynthSpec", "noise_level and event_amplitude must be >= 0")
        lo, hi = self.gain_range
        if not 0 < lo <= hi:
            raise ConfigurationError("SynthSpec", f"bad gain_range {self.gain_range}")
        profiles = [tuple(p) for p in self.profiles()]
        if len(set(profiles)) != len(profiles):
            raise ConfigurationError(
                "SynthSpec", f"{self.num_scenes} scenes x {self.events_per_scene} events do not "
                             f"give distinct profiles over {self.num_events} events")

    def event_frequencies(self) -> np.ndarray:
        """Tone frequency of every event type, spread below Nyquist."""
        nyquist = self.sample_rate / 2
        return np.linspace(0.04 * nyquist, 0.6 * nyquist, self.num_events)


def _event_burst(spec: SynthSpec, freq: float, rng: np.random.Generator) -> np.ndarray:
    n = spec.duration_samples
    length = max(2, int(n * rng.uniform(0.2, 0.5)))
    onset = int(rng.integers(0, n - length + 1))
    t = np.arange(length) / spec.sample_rate
    burst = np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)) * np.hanning(length)
    out = np.zeros(n)
    out[onset:onset + length] = spec.event_amplitude * burst
    return out


def _quantize(x: np.ndarray) -> np.ndarray:
    """Snap to the PCM16 grid so that writing and re-reading is lossless."""
    return np.clip(np.round(x * PCM16_SCALE), -32768, 32767) / PCM16_SCALE


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Build a labelled dataset with ground-truth tag vectors; bit-identical for a fixed seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    profiles = spec.profiles()
    freqs = spec.event_frequencies()
    tags = TagTable()
    splits = {}

    for split, per_scene in (("train", spec.train_per_scene), ("test", spec.test_per_scene)):
        recordings = []
        for i in range(per_scene * spec.num_scenes):
            scene = i % spec.num_scenes
            p = np.full(spec.num_events, spec.occurrence_noise)
            p[profiles[scene]] = 1 - spec.occurrence_noise
            present = rng.random(spec.num_events) < p

            gain = rng.uniform(*spec.gain_range)
            samples = gain * spec.noise_level * rng.standard_normal(spec.duration_samples)
            for e in np.flatnonzero(present):
                samples += _event_burst(spec, freqs[e], rng)

            blur = rng.uniform(0, spec.tag_blur, spec.num_events) if spec.tag_blur else 0.0
            rec_id = f"{split}_{i:04d}"
            tags.add(rec_id, np.abs(present.astype(np.float64) - blur))
            recordings.append(Recording(_quantize(samples)[:, None], spec.sample_rate, rec_id, scene))
        splits[split] = recordings

    return Dataset(splits["train"], splits["test"], tags,
                   [f"scene{s}" for s in range(spec.num_scenes)], spec.sample_rate,
                   [f"event{e}" for e in range(spec.num_events)], spec)


def write_dataset(dataset: Dataset, out_dir: Union[str, Path]) -> List[Path]:
    """Write WAVs, metadata, tags and ``dataset.json``; returns the written paths."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    written = []
    for rec in dataset.train + dataset.test:
        path = out_dir / "audio" / f"{rec.id}.wav"
        write_wav(path, rec.samples, rec.sample_rate)
        written.append(path)
    for split, recordings in (("train", dataset.train), ("test", dataset.test)):
        path = out_dir / f"{split}.tsv"
        write_metadata(path, [(r.id, r.scene_label) for r in recordings], dataset.classes)
        written.append(path)
    write_tags(out_dir / "tags.txt", dataset.tags,
               [r.id for r in dataset.train + dataset.test])
    info = {
        "classes": dataset.classes,
        "event_names": dataset.event_names,
        "sample_rate": dataset.sample_rate,
        "spec": dataset.spec.to_dict() if dataset.spec is not None else None,
    }
    with open(out_dir / "dataset.json", "w") as fw:
        json.dump(info, fw, indent=4)
    written += [out_dir / "tags.txt", out_dir / "dataset.json"]
    return written


def load_dataset(root: Union[str, Path], tags_file: Optional[Union[str, Path]] = None) -> Dataset:
    """Load a dataset directory. Without ``dataset.json`` the DCASE scene names are assumed."""
    root = Path(root)
    info = {}
    if (root / "dataset.json").exists():
        with open(root / "dataset.json", "r") as fr:
            info = json.load(fr)
    classes = info.get("classes", DCASE_SCENES)

    splits = {}
    for split in ("train", "test"):
        recordings = []
        for rec_id, label in load_metadata(root / f"{split}.tsv", classes):
            rec = read_wav(root / "audio" / f"{rec_id}.wav")
            rec.scene_label = label
            recordings.append(rec)
        splits[split] = recordings

    tags_path = Path(tags_file) if tags_file is not None else root / "tags.txt"
    tags = load_tags(tags_path) if tags_path.exists() else TagTable()
    sample_rate = info.get("sample_rate") or (splits["train"][0].sample_rate
                                              if splits["train"] else 0)
    spec = SynthSpec.from_dict(info["spec"]) if info.get("spec") else None
    return Dataset(splits["train"], splits["test"], tags, list(classes), sample_rate,
                   info.get("event_names", []), spec)

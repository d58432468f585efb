import hashlib
import json
import time
import numpy as np
import pandas as pd

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from tqdm import tqdm

from backends.svm import KernelSpec, SvmModel, train_ovr
from core import ops
from core.augment import mix_tags, mixup, pre_emphasis
from core.backbone import BackboneConfig
from core.dataset import Dataset, TagTable
from core.errors import ConfigurationError, DataError, ParseError
from core.fusion import FusionConfig, TagVector
from core.model import TagASCModel
from core.optim import build_optimizer
from core.tensor import Tape
from core.wav import Recording
from eval.metrics.metrics import Accuracy, ConfusionMatrix, PerClassAccuracy

__all__ = ["TrainLogger", "TrainConfig", "TrainResult", "EvalReport", "RunResult",
           "load_config", "resolve_config", "model_input", "train", "extract_codes",
           "config_hash", "fit_svm", "check_disjoint", "evaluate", "train_and_evaluate",
           "write_codes", "load_codes", "DEFAULT_CONFIG"]


DEFAULT_CONFIG = Path(__file__).parent / "configs" / "train_config.json"


class TrainLogger:
    """Prints timestamped progress and keeps per-epoch and per-cell records.

    When ``tensorboard_dir`` is set, scalars are also written as TensorBoard
    event files.
    """

    def __init__(self, is_open=True, tensorboard_dir=None):
        self.is_open = is_open  # is_open=False silences progress output
        self.start = time.perf_counter()
        self.epoch_info = {}
        self.cell_info = {}
        self._writer = None
        if tensorboard_dir:
            from tensorboard.summary.writer.event_file_writer import EventFileWriter
            Path(tensorboard_dir).mkdir(parents=True, exist_ok=True)
            self._writer = EventFileWriter(str(tensorboard_dir))

    @property
    def now(self) -> float:
        return time.perf_counter() - self.start

    def log(self, content):
        if self.is_open:
            print("[{:.2f}]: {}".format(self.now, content))

    def append(self, info_type, key, val):
        """Record key information during a run.

        Args:
            info_type: 'epoch' or 'cell'
            key: epoch index or grid-cell label
            val:
                if info_type == 'epoch': mean training loss
                if info_type == 'cell': (code: int, info: dict)
                    - 0 (success) || {accuracy, seed, config_hash, runtime}
                    - 1 (failure) || {error}
        """
        assert info_type in ['epoch', 'cell']
        if info_type == 'epoch':
            self.epoch_info[key] = val
        else:
            self.cell_info[key] = val

    def scalar(self, tag: str, value: float, step: int):
        if self._writer is None:
            return
        from tensorboard.compat.proto.event_pb2 import Event
        from tensorboard.compat.proto.summary_pb2 import Summary
        summary = Summary(value=[Summary.Value(tag=tag, simple_value=float(value))])
        self._writer.add_event(Event(wall_time=time.time(), step=step, summary=summary))

    def close(self):
        if self._writer is not None:
            self._writer.flush()
            self._writer.close()
            self._writer = None

    def reset(self):
        self.epoch_info = {}
        self.cell_info = {}


def config_hash(values: Dict) -> str:
    """SHA-1 of the sorted JSON of a flat config, without keys that do not change results."""
    kept = {k: v for k, v in values.items() if k not in TrainConfig.RUNTIME_KEYS}
    return hashlib.sha1(json.dumps(kept, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass
class TrainConfig:
    """Everything a training run depends on. Keys mirror the command-line flags.

    Attributes:
        fusion: fusion mode.
        heads / layers / layers_concat / layers_att / hidden_dim: FusionConfig fields.
        scale: 'desk' or 'full' backbone preset; filters / res_blocks / code_dim / front_len
            override it.
        optimizer / lr / epochs / batch_size: optimization.
        mixup / mixup_alpha: mixup augmentation of waveforms, labels and tags.
        pre_emphasis / pre_emphasis_beta: input filtering.
        kernel / gamma / coef0 / C / tol / max_iter: SVM back end.
        seed: the single seed every random draw of the run derives from.
    """
    fusion: str = "none"
    heads: int = 1
    layers: int = 0
    layers_concat: int = 3
    layers_att: int = 3
    hidden_dim: int = 128
    scale: str = "desk"
    filters: Optional[int] = None
    res_blocks: Optional[int] = None
    code_dim: Optional[int] = None
    front_len: Optional[int] = None
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0
    mixup: bool = False
    mixup_alpha: float = 0.4
    pre_emphasis: bool = True
    pre_emphasis_beta: float = 0.97
    kernel: str = "rbf"
    gamma: Optional[float] = None
    coef0: float = 0.0
    C: float = 1.0
    tol: float = 1e-3
    max_iter: int = 10000
    tensorboard_dir: Optional[str] = None

    # keys that do not change results
    RUNTIME_KEYS = ("tensorboard_dir",)

    @classmethod
    def from_flat(cls, values: Dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigurationError("TrainConfig", f"unknown keys {unknown}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def to_dict(self) -> Dict:
        return asdict(self)

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("TrainConfig", "epochs and batch_size must be >= 1")
        if self.scale not in ("desk", "full"):
            raise ConfigurationError("TrainConfig", f"scale must be desk or full, got '{self.scale}'")
        if self.mixup and self.mixup_alpha <= 0:
            raise ConfigurationError("TrainConfig", "mixup_alpha must be > 0")
        self.fusion_config().validate(self.num_filters())
        self.kernel_spec().validate()

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(mode=self.fusion, n_transform_layers=self.layers,
                            transform_hidden_dim=self.hidden_dim, n_heads=self.heads,
                            n_transform_layers_concat=self.layers_concat,
                            n_transform_layers_att=self.layers_att)

    def num_filters(self) -> int:
        if self.filters is not None:
            return self.filters
        preset = BackboneConfig.desk_scale() if self.scale == "desk" else BackboneConfig.full_scale()
        return preset.num_filters

    def backbone_config(self, input_samples: int, input_channels: int,
                        num_classes: int) -> BackboneConfig:
        cfg = BackboneConfig.desk_scale() if self.scale == "desk" else BackboneConfig.full_scale()
        cfg.input_samples = input_samples
        cfg.input_channels = input_channels
        cfg.num_classes = num_classes
        if self.filters is not None:
            cfg.num_filters = self.filters
        if self.res_blocks is not None:
            cfg.num_res_blocks = self.res_blocks
        if self.code_dim is not None:
            cfg.code_dim = self.code_dim
        if self.front_len is not None:
            cfg.front_filter_len = cfg.front_stride = self.front_len
        return cfg

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.gamma, self.coef0, self.C, self.tol, self.max_iter)


def load_config(path: Union[str, Path]) -> Dict:
    """Read a flat key/value JSON config file."""
    try:
        with open(path, "r") as fr:
            values = json.load(fr)
    except FileNotFoundError:
        raise ConfigurationError("config", f"file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigurationError("config", f"{path}: line {err.lineno}: {err.msg}")
    if not isinstance(values, dict) or any(isinstance(v, (dict, list)) for v in values.values()):
        raise ConfigurationError("config", f"{path}: expected a flat key/value object")
    return values


def resolve_config(config_file: Optional[Union[str, Path]] = None,
                   overrides: Optional[Dict] = None) -> TrainConfig:
    """Flags override the config file, which overrides the built-in defaults."""
    values = load_config(DEFAULT_CONFIG)
    if config_file is not None:
        values.update(load_config(config_file))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.from_flat(values)


@dataclass
class TrainResult:
    model: TagASCModel
    losses: List[float]
    config: TrainConfig


def model_input(model: TagASCModel, samples: np.ndarray) -> np.ndarray:
    if model.pre_emphasis_beta is None:
        return np.asarray(samples, dtype=np.float64)
    return pre_emphasis(samples, model.pre_emphasis_beta)


def _tag_for(model: TagASCModel, tags: TagTable, rec_id: str) -> Optional[TagVector]:
    return tags[rec_id] if model.fusion_cfg.uses_tags else None


def _check_inputs(recordings: Sequence[Recording], tags: TagTable, fusion: FusionConfig,
                  num_classes: int):
    if not recordings:
        raise DataError("train", "no training recordings")
    for rec in recordings:
        if rec.scene_label is None or not 0 <= rec.scene_label < num_classes:
            raise DataError("train", f"recording '{rec.id}' has label {rec.scene_label}, "
                                     f"expected [0, {num_classes})")
    if fusion.uses_tags:
        missing = tags.missing([r.id for r in recordings])
        if missing:
            raise DataError("train", f"no tag vector for {', '.join(missing[:5])}"
                                     f"{' ...' if len(missing) > 5 else ''}")


def train(recordings: Sequence[Recording], tags: TagTable, cfg: TrainConfig,
          num_classes: Optional[int] = None, logger: Optional[TrainLogger] = None) -> TrainResult:
    """Train backbone and fusion end to end with cross-entropy.

    Examples are forwarded one at a time; gradients are accumulated over a
    batch and averaged before each optimizer step.
    """
    logger = logger or TrainLogger(is_open=False)
    if num_classes is None:
        num_classes = max(2, max(r.scene_label for r in recordings if r.scene_label is not None) + 1)
    fusion_cfg = cfg.fusion_config()
    _check_inputs(recordings, tags, fusion_cfg, num_classes)

    beta = cfg.pre_emphasis_beta if cfg.pre_emphasis else None
    n_samples, channels = recordings[0].samples.shape
    backbone_cfg = cfg.backbone_config(n_samples - 1 if beta is not None else n_samples,
                                       channels, num_classes)
    model = TagASCModel(backbone_cfg, fusion_cfg, tags.dim or 0, cfg.seed, beta)
    model.train_ids = [r.id for r in recordings]
    optimizer = build_optimizer(cfg.optimizer, model.parameters(), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    logger.log(f"train {model} on {len(recordings)} recordings, seed {cfg.seed}")

    losses = []
    n = len(recordings)
    for epoch in tqdm(range(cfg.epochs), desc="epochs", disable=not logger.is_open):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            for idx in batch:
                rec = recordings[idx]
                if cfg.mixup:
                    other = recordings[rng.integers(n)]
                    samples, target, lam = mixup(rec, other, num_classes, cfg.mixup_alpha, rng)
                    tag = None
                    if fusion_cfg.uses_tags:
                        tag = TagVector(mix_tags(tags.values(rec.id), tags.values(other.id), lam),
                                        rec.id)
                else:
                    samples, target = rec.samples, rec.scene_label
                    tag = _tag_for(model, tags, rec.id)
                with Tape() as tape:
                    out = model(model_input(model, samples), tag, "train")
                    loss = ops.softmax_cross_entropy(out.logits, target)
                tape.backward(loss)
                total += loss.item()
            optimizer.step(scale=1.0 / len(batch))
        mean_loss = total / n
        losses.append(mean_loss)
        logger.append('epoch', epoch, mean_loss)
        logger.scalar("train/loss", mean_loss, epoch)
        logger.log(f"epoch {epoch}: loss {mean_loss:.6f}")
    return TrainResult(model, losses, cfg)


def extract_codes(model: TagASCModel, recordings: Sequence[Recording],
                  tags: TagTable) -> List[Tuple[str, np.ndarray]]:
    """Codes in infer mode (running batch-norm statistics)."""
    if model.fusion_cfg.uses_tags:
        missing = tags.missing([r.id for r in recordings])
        if missing:
            raise DataError("extract_codes", f"no tag vector for {', '.join(missing[:5])}")
    codes = []
    for rec in recordings:
        out = model(model_input(model, rec.samples), _tag_for(model, tags, rec.id), "infer")
        code = out.code.data.copy()
        if not np.all(np.isfinite(code)):
            raise DataError("extract_codes", f"non-finite code for '{rec.id}'")
        codes.append((rec.id, code))
    return codes


def fit_svm(codes: Sequence[Tuple[str, np.ndarray]], labels: Sequence[int], cfg: TrainConfig,
            num_classes: Optional[int] = None) -> SvmModel:
    return train_ovr(np.stack([c for _, c in codes]), np.asarray(labels), cfg.kernel_spec(),
                     num_classes)


def check_disjoint(train_ids: Sequence[str], test_ids: Sequence[str]):
    overlap = sorted(set(train_ids) & set(test_ids))
    if overlap:
        raise DataError("evaluate", f"{len(overlap)} ids in both train and test: "
                                    f"{', '.join(overlap[:10])}{' ...' if len(overlap) > 10 else ''}")


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    per_class: np.ndarray
    predictions: Dict[str, Tuple[int, int]] = field(default_factory=dict)


def evaluate(model: TagASCModel, svm: SvmModel, recordings: Sequence[Recording], tags: TagTable,
             train_ids: Optional[Sequence[str]] = None) -> EvalReport:
    """Accuracy (percent) of the SVM on codes of ``recordings``, with the confusion matrix."""
    check_disjoint(model.train_ids if train_ids is None else train_ids, [r.id for r in recordings])
    codes = extract_codes(model, recordings, tags)
    predicted = svm.predict_batch(np.stack([c for _, c in codes]))
    info = {rec.id: (rec.scene_label, int(p)) for rec, p in zip(recordings, predicted)}
    return EvalReport(Accuracy().eval(info), ConfusionMatrix(svm.num_classes).eval(info),
                      PerClassAccuracy(svm.num_classes).eval(info), info)


@dataclass
class RunResult:
    accuracy: float
    report: EvalReport
    model: TagASCModel
    svm: SvmModel
    losses: List[float]
    runtime: float
    config_hash: str


def train_and_evaluate(dataset: Dataset, cfg: TrainConfig,
                       logger: Optional[TrainLogger] = None) -> RunResult:
    """train -> extract training codes -> fit the SVM -> evaluate on the test split."""
    logger = logger or TrainLogger(is_open=False)
    start = time.perf_counter()
    result = train(dataset.train, dataset.tags, cfg, dataset.num_classes, logger)
    codes = extract_codes(result.model, dataset.train, dataset.tags)
    svm = fit_svm(codes, [r.scene_label for r in dataset.train], cfg, dataset.num_classes)
    if not svm.converged:
        logger.log(f"SVM hit max_iter {cfg.max_iter} before converging")
    report = evaluate(result.model, svm, dataset.test, dataset.tags)
    return RunResult(report.accuracy, report, result.model, svm, result.losses,
                     time.perf_counter() - start, cfg.config_hash())


def write_codes(path: Union[str, Path], codes: Sequence[Tuple[str, np.ndarray]],
                labels: Sequence[Optional[int]]):
    """CSV with columns id, label, c0 .. c{d-1}."""
    dim = len(codes[0][1]) if codes else 0
    data = pd.DataFrame([c for _, c in codes], columns=[f"c{i}" for i in range(dim)])
    data.insert(0, "label", [-1 if l is None else l for l in labels])
    data.insert(0, "id", [i for i, _ in codes])
    data.to_csv(path, index=False, float_format="%.17g")


def load_codes(path: Union[str, Path]) -> Tuple[List[str], np.ndarray, np.ndarray]:
    try:
        data = pd.read_csv(path, dtype={"id": str})
    except FileNotFoundError:
        raise DataError("codes", f"file not found: {path}")
    if list(data.columns[:2]) != ["id", "label"]:
        raise ParseError("codes", f"{path}: expected columns id, label, c0, ...", offset=1)
    values = data.iloc[:, 2:].to_numpy(dtype=np.float64)
    return list(data["id"]), data["label"].to_numpy(dtype=int), values

"""Soft-margin kernel SVM trained by SMO, one-vs-rest over scene classes.

The binary solver follows the usual two-variable SMO scheme: pick the maximal
violating pair from the dual gradient, solve the pair analytically, clip to
the box [0, C], and stop once the violation gap drops below ``tol``.

A sigmoid Gram matrix need not be positive semi-definite. On such data the
dual is not concave and the solver stops at a KKT point of the dual, which is
not guaranteed to be its global maximum.

Model file (text, floats written with 17 significant digits):

    tagasc-svm 1
    kernel <kind> gamma <g> coef0 <c0> C <C> tol <tol> max_iter <n>
    classes <K> dim <d>
    mean <d values>
    scale <d values>
    K times:
        class <k> bias <b> count <m> converged <0|1> iterations <it>
        m rows: <alpha_i * y_i> <d support-vector values>
"""
import numpy as np

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Union

from backends.base_backend import BaseBackend
from core.errors import ConfigurationError, DegenerateDataError, DimensionError, ParseError

__all__ = ["KERNELS", "KernelSpec", "kernel", "kernel_matrix", "BinarySvm", "train_binary",
           "Standardizer", "SvmModel", "train_ovr", "save_svm", "load_svm", "svm_text",
           "parse_svm"]


KERNELS = ("rbf", "sigmoid")
TAU = 1e-12
ROW_CHUNK = 256


@dataclass
class KernelSpec:
    """Kernel and solver settings.

    Attributes:
        kind: rbf | sigmoid.
        gamma: kernel width; None resolves to 1 / code_dim at fit time.
        coef0: sigmoid offset.
        C: box constraint.
        tol: stopping tolerance on the maximal violation gap.
        max_iter: cap on SMO pair updates.
    """
    kind: str = "rbf"
    gamma: Optional[float] = None
    coef0: float = 0.0
    C: float = 1.0
    tol: float = 1e-3
    max_iter: int = 10000

    @classmethod
    def from_dict(cls, values: Dict) -> "KernelSpec":
        return cls(**{k: v for k, v in values.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> Dict:
        return asdict(self)

    def resolved(self, dim: int) -> "KernelSpec":
        return self if self.gamma is not None else replace(self, gamma=1.0 / dim)

    def validate(self):
        if self.kind not in KERNELS:
            raise ConfigurationError("KernelSpec", f"unknown kernel '{self.kind}', "
                                                   f"expected one of {KERNELS}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigurationError("KernelSpec", f"gamma must be > 0, got {self.gamma}")
        if not self.C > 0:
            raise ConfigurationError("KernelSpec", f"C must be > 0, got {self.C}")
        if not self.tol > 0:
            raise ConfigurationError("KernelSpec", f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigurationError("KernelSpec", f"max_iter must be >= 1, got {self.max_iter}")


def kernel(x: np.ndarray, y: np.ndarray, spec: KernelSpec) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError("kernel", f"dim mismatch {x.shape} vs {y.shape}")
    spec = spec.resolved(x.size)
    if spec.kind == "rbf":
        return float(np.exp(-spec.gamma * np.sum((x - y) ** 2)))
    if spec.kind == "sigmoid":
        return float(np.tanh(spec.gamma * np.dot(x, y) + spec.coef0))
    raise ConfigurationError("kernel", f"unknown kernel '{spec.kind}'")


def kernel_matrix(X: np.ndarray, Y: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """K[i, j] = kernel(X[i], Y[j]); rbf distances are taken from explicit differences."""
    X, Y = np.atleast_2d(X).astype(np.float64), np.atleast_2d(Y).astype(np.float64)
    if X.shape[1] != Y.shape[1]:
        raise DimensionError("kernel_matrix", f"dim mismatch {X.shape[1]} vs {Y.shape[1]}")
    spec = spec.resolved(X.shape[1])
    if spec.kind == "sigmoid":
        return np.tanh(spec.gamma * X @ Y.T + spec.coef0)
    if spec.kind != "rbf":
        raise ConfigurationError("kernel_matrix", f"unknown kernel '{spec.kind}'")
    out = np.empty((X.shape[0], Y.shape[0]))
    for start in range(0, X.shape[0], ROW_CHUNK):
        diff = X[start:start + ROW_CHUNK, None, :] - Y[None, :, :]
        out[start:start + ROW_CHUNK] = np.exp(-spec.gamma * np.einsum("ijk,ijk->ij", diff, diff))
    return out


@dataclass
class BinarySvm:
    """f(x) = sum_i coef_i k(sv_i, x) + bias, with coef_i = alpha_i y_i.

    ``alpha`` and ``labels`` cover the full training set and only exist on a
    freshly trained model.
    """
    support: np.ndarray
    coef: np.ndarray
    bias: float
    spec: KernelSpec
    converged: bool = True
    iterations: int = 0
    alpha: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if len(self.coef) == 0:
            return np.full(X.shape[0], self.bias)
        return kernel_matrix(X, self.support, self.spec) @ self.coef + self.bias


def dual_objective(alpha: np.ndarray, labels: np.ndarray, gram: np.ndarray) -> float:
    """sum(alpha) - 1/2 alpha^T Q alpha with Q = y y^T K."""
    ya = alpha * labels
    return float(alpha.sum() - 0.5 * ya @ gram @ ya)


def _select_pair(alpha, y, G, C):
    """Maximal violating pair (i, j) and the violation gap."""
    minus_yg = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    if not up.any() or not low.any():
        return -1, -1, 0.0
    i = int(np.flatnonzero(up)[np.argmax(minus_yg[up])])
    j = int(np.flatnonzero(low)[np.argmin(minus_yg[low])])
    return i, j, float(minus_yg[i] - minus_yg[j])


def _solve_pair(i, j, alpha, y, G, Q, C):
    ai, aj = alpha[i], alpha[j]
    if y[i] != y[j]:
        quad = max(Q[i, i] + Q[j, j] + 2 * Q[i, j], TAU)
        delta = (-G[i] - G[j]) / quad
        diff = ai - aj
        ai, aj = ai + delta, aj + delta
        if diff > 0 and aj < 0:
            aj, ai = 0.0, diff
        elif diff <= 0 and ai < 0:
            ai, aj = 0.0, -diff
        if diff > 0 and ai > C:
            ai, aj = C, C - diff
        elif diff <= 0 and aj > C:
            aj, ai = C, C + diff
    else:
        quad = max(Q[i, i] + Q[j, j] - 2 * Q[i, j], TAU)
        delta = (G[i] - G[j]) / quad
        total = ai + aj
        ai, aj = ai - delta, aj + delta
        if total > C and ai > C:
            ai, aj = C, total - C
        elif total <= C and aj < 0:
            aj, ai = 0.0, total
        if total > C and aj > C:
            aj, ai = C, total - C
        elif total <= C and ai < 0:
            ai, aj = 0.0, total
    return ai, aj


def _bias(alpha, y, G, C) -> float:
    """Offset b = -rho, with rho averaged over free multipliers."""
    yg = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(-yg[free].mean())
    at_upper = alpha >= C
    ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[~ub_mask].max() if (~ub_mask).any() else -np.inf
    return float(-(ub + lb) / 2)


def train_binary(codes: np.ndarray, labels: np.ndarray, spec: KernelSpec,
                 gram: Optional[np.ndarray] = None) -> BinarySvm:
    """SMO on labels in {-1, +1}. A model is returned even when ``max_iter`` is hit."""
    X = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise DimensionError("train_binary", f"{X.shape[0]} codes but {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DegenerateDataError("train_binary", "labels must be -1 or +1")
    if not (y > 0).any() or not (y < 0).any():
        raise DegenerateDataError("train_binary", "both classes need at least one example")
    if not np.all(np.isfinite(X)):
        raise DegenerateDataError("train_binary", "codes contain NaN or Inf")
    spec = spec.resolved(X.shape[1])
    spec.validate()

    K = kernel_matrix(X, X, spec) if gram is None else gram
    Q = np.outer(y, y) * K
    C = spec.C
    alpha = np.zeros(len(y))
    G = -np.ones(len(y))

    converged = False
    iterations = 0
    while iterations < spec.max_iter:
        i, j, gap = _select_pair(alpha, y, G, C)
        if i < 0 or gap < spec.tol:
            converged = True
            break
        ai, aj = _solve_pair(i, j, alpha, y, G, Q, C)
        d_i, d_j = ai - alpha[i], aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * d_i + Q[:, j] * d_j
        iterations += 1
    else:
        _, _, gap = _select_pair(alpha, y, G, C)
        converged = gap < spec.tol

    sv = alpha > 0
    return BinarySvm(X[sv].copy(), (alpha * y)[sv], _bias(alpha, y, G, C), spec,
                     converged, iterations, alpha, y)


@dataclass
class Standardizer:
    """Per-dimension zero mean / unit variance from training statistics."""
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, codes: np.ndarray) -> "Standardizer":
        codes = np.atleast_2d(codes)
        std = codes.std(axis=0)
        return cls(codes.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, codes: np.ndarray) -> np.ndarray:
        return (np.asarray(codes, dtype=np.float64) - self.mean) / self.scale


class SvmModel(BaseBackend):
    """K one-vs-rest binary SVMs over standardized codes."""

    def __init__(self, spec: Optional[KernelSpec] = None, n_jobs: int = 1):
        self.spec = spec or KernelSpec()
        self.spec.validate()
        self.n_jobs = n_jobs
        self.num_classes = 0
        self.binaries: List[BinarySvm] = []
        self.standardizer: Optional[Standardizer] = None

    def __repr__(self):
        return f"[{self.__class__.__name__}] ({self.spec.kind}, K={self.num_classes})"

    @property
    def converged(self) -> bool:
        return all(b.converged for b in self.binaries)

    def fit(self, codes, labels, num_classes: Optional[int] = None) -> "SvmModel":
        codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        labels = np.asarray(labels, dtype=int)
        if codes.shape[0] != labels.shape[0]:
            raise DimensionError("SvmModel", f"{codes.shape[0]} codes but {labels.shape[0]} labels")
        num_classes = int(labels.max()) + 1 if num_classes is None else num_classes
        if num_classes < 2:
            raise DegenerateDataError("SvmModel", f"need K >= 2 classes, got {num_classes}")
        for k in range(num_classes):
            if not (labels == k).any():
                raise DegenerateDataError("SvmModel", f"class {k} is absent from the training data")
        if labels.min() < 0 or labels.max() >= num_classes:
            raise DegenerateDataError("SvmModel", f"labels outside [0, {num_classes})")

        self.standardizer = Standardizer.fit(codes)
        X = self.standardizer(codes)
        spec = self.spec.resolved(X.shape[1])
        gram = kernel_matrix(X, X, spec)
        targets = [np.where(labels == k, 1.0, -1.0) for k in range(num_classes)]
        if self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                self.binaries = list(pool.map(lambda y: train_binary(X, y, spec, gram), targets))
        else:
            self.binaries = [train_binary(X, y, spec, gram) for y in targets]
        self.spec = spec
        self.num_classes = num_classes
        return self

    def decision_values(self, code) -> np.ndarray:
        return self.decision_matrix(code)[0]

    def decision_matrix(self, codes) -> np.ndarray:
        if self.standardizer is None:
            raise DegenerateDataError("SvmModel", "model is not fitted")
        codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        if codes.shape[1] != self.standardizer.mean.shape[0]:
            raise DimensionError("SvmModel", f"code dim {codes.shape[1]} != "
                                             f"{self.standardizer.mean.shape[0]}")
        X = self.standardizer(codes)
        return np.stack([b.decision(X) for b in self.binaries], axis=1)


def train_ovr(codes, labels, spec: KernelSpec, num_classes: Optional[int] = None,
              n_jobs: int = 1) -> SvmModel:
    return SvmModel(spec, n_jobs).fit(codes, labels, num_classes)


def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.ravel(values))


def svm_text(model: SvmModel) -> str:
    s = model.spec
    dim = model.standardizer.mean.shape[0]
    lines = ["tagasc-svm 1",
             f"kernel {s.kind} gamma {s.gamma:.17g} coef0 {s.coef0:.17g} C {s.C:.17g} "
             f"tol {s.tol:.17g} max_iter {s.max_iter}",
             f"classes {model.num_classes} dim {dim}",
             f"mean {_fmt(model.standardizer.mean)}",
             f"scale {_fmt(model.standardizer.scale)}"]
    for k, b in enumerate(model.binaries):
        lines.append(f"class {k} bias {b.bias:.17g} count {len(b.coef)} "
                     f"converged {int(b.converged)} iterations {b.iterations}")
        for c, sv in zip(b.coef, b.support):
            lines.append(f"{c:.17g} {_fmt(sv)}")
    return "\n".join(lines) + "\n"


def save_svm(model: SvmModel, path: Union[str, Path]):
    Path(path).write_text(svm_text(model), encoding="utf-8")


def _keyed(line_no: int, tokens: List[str], keys: List[str]) -> Dict[str, str]:
    """Parse ``key value key value ...`` after a leading tag."""
    pairs = tokens[1:]
    if len(pairs) != 2 * len(keys) or pairs[::2] != keys:
        raise ParseError("svm", f"line {line_no}: expected '{tokens[0]} "
                                f"{' '.join(k + ' <v>' for k in keys)}'", offset=line_no)
    return dict(zip(pairs[::2], pairs[1::2]))


def _floats(line_no: int, tokens: List[str], count: int) -> np.ndarray:
    if len(tokens) != count:
        raise ParseError("svm", f"line {line_no}: expected {count} values, got {len(tokens)}",
                         offset=line_no)
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as err:
        raise ParseError("svm", f"line {line_no}: {err}", offset=line_no)


def parse_svm(text: str) -> SvmModel:
    lines = [(n, line.split()) for n, line in enumerate(text.splitlines(), start=1) if line.strip()]
    pos = 0

    def next_line(tag: Optional[str] = None):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("svm", f"unexpected end of file, expected '{tag or 'row'}'",
                             offset=len(text.splitlines()))
        n, tokens = lines[pos]
        pos += 1
        if tag is not None and tokens[0] != tag:
            raise ParseError("svm", f"line {n}: expected '{tag}', got '{tokens[0]}'", offset=n)
        return n, tokens

    try:
        n, tokens = next_line("tagasc-svm")
        if tokens[1:] != ["1"]:
            raise ParseError("svm", f"line {n}: unsupported version {' '.join(tokens[1:])}", offset=n)
        n, tokens = next_line("kernel")
        if len(tokens) < 2:
            raise ParseError("svm", f"line {n}: missing kernel kind", offset=n)
        kv = _keyed(n, tokens[1:], ["gamma", "coef0", "C", "tol", "max_iter"])
        spec = KernelSpec(tokens[1], float(kv["gamma"]), float(kv["coef0"]), float(kv["C"]),
                          float(kv["tol"]), int(kv["max_iter"]))
        n, tokens = next_line("classes")
        if len(tokens) != 4 or tokens[2] != "dim":
            raise ParseError("svm", f"line {n}: expected 'classes <K> dim <d>'", offset=n)
        num_classes, dim = int(tokens[1]), int(tokens[3])
        n, tokens = next_line("mean")
        mean = _floats(n, tokens[1:], dim)
        n, tokens = next_line("scale")
        scale = _floats(n, tokens[1:], dim)

        model = SvmModel(spec)
        model.standardizer = Standardizer(mean, scale)
        model.num_classes = num_classes
        for k in range(num_classes):
            n, tokens = next_line("class")
            if int(tokens[1]) != k:
                raise ParseError("svm", f"line {n}: expected class {k}, got {tokens[1]}", offset=n)
            kv = _keyed(n, tokens[1:], ["bias", "count", "converged", "iterations"])
            count = int(kv["count"])
            rows = np.empty((count, dim + 1))
            for r in range(count):
                n, tokens = next_line()
                rows[r] = _floats(n, tokens, dim + 1)
            model.binaries.append(BinarySvm(rows[:, 1:], rows[:, 0], float(kv["bias"]), spec,
                                            kv["converged"] == "1", int(kv["iterations"])))
    except (ValueError, IndexError) as err:
        n = lines[pos - 1][0] if pos else 0
        raise ParseError("svm", f"line {n}: {err}", offset=n)
    if pos != len(lines):
        n = lines[pos][0]
        raise ParseError("svm", f"line {n}: trailing content", offset=n)
    spec.validate()
    return model


def load_svm(path: Union[str, Path]) -> SvmModel:
    return parse_svm(Path(path).read_text(encoding="utf-8"))

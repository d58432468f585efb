import numpy as np

from typing import Optional

from ..base_backend import BaseBackend
from ..svm import Standardizer
from core.errors import DegenerateDataError


class DemoLogistic(BaseBackend):
    """Softmax regression by full-batch gradient descent.

    Used as a quick check of how much class information a feature set carries,
    e.g., tag vectors against waveform energies on synthetic data.
    """

    def __init__(self, lr: float = 0.5, epochs: int = 500, l2: float = 1e-3, seed: int = 0):
        self.lr = lr
        self.epochs = epochs
        self.l2 = l2
        self.seed = seed
        self.num_classes = 0
        self.weight: Optional[np.ndarray] = None
        self.bias: Optional[np.ndarray] = None
        self.standardizer: Optional[Standardizer] = None

    def fit(self, codes, labels, num_classes: Optional[int] = None):
        X = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        labels = np.asarray(labels, dtype=int)
        self.num_classes = int(labels.max()) + 1 if num_classes is None else num_classes
        if self.num_classes < 2:
            raise DegenerateDataError("DemoLogistic", "need at least two classes")
        self.standardizer = Standardizer.fit(X)
        X = self.standardizer(X)
        n, d = X.shape
        target = np.eye(self.num_classes)[labels]
        rng = np.random.default_rng(self.seed)
        self.weight = 0.01 * rng.standard_normal((d, self.num_classes))
        self.bias = np.zeros(self.num_classes)
        for _ in range(self.epochs):
            probs = _softmax(X @ self.weight + self.bias)
            err = (probs - target) / n
            self.weight -= self.lr * (X.T @ err + self.l2 * self.weight)
            self.bias -= self.lr * err.sum(axis=0)
        return self

    def decision_values(self, code):
        return self.decision_matrix(code)[0]

    def decision_matrix(self, codes):
        X = self.standardizer(np.atleast_2d(codes))
        return X @ self.weight + self.bias


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def energy_features(samples: np.ndarray, frames: int = 8) -> np.ndarray:
    """Log mean energy of ``frames`` equal segments plus the whole clip."""
    x = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1).mean(axis=1)
    parts = np.array_split(x, frames)
    energies = [np.mean(p ** 2) for p in parts] + [np.mean(x ** 2)]
    return np.log(np.asarray(energies) + 1e-12)


def linear_accuracy(train_x, train_y, test_x, test_y, num_classes: int, seed: int = 0) -> float:
    """Test accuracy (percent) of a logistic model fitted on the training features."""
    clf = DemoLogistic(seed=seed).fit(train_x, train_y, num_classes)
    return 100.0 * float(np.mean(clf.predict_batch(test_x) == np.asarray(test_y)))

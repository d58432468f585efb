import numpy as np

from core.errors import DataError


class Accuracy(object):
    """Overall (micro) classification accuracy, in percent.

    accuracy = n/m * 100, where,
        - n: correctly classified recordings
        - m: all recordings

    ``info`` maps recording id -> (true class, predicted class).
    """
    def __init__(self) -> None:
        pass

    def eval(self, info) -> float:
        if not info:
            raise DataError("Accuracy", "no predictions to evaluate")
        n = sum(1 for true, pred in info.values() if true == pred)
        return 100.0 * n / len(info)


class ConfusionMatrix(object):
    """Counts with rows indexed by the true class and columns by the prediction."""
    def __init__(self, num_classes: int) -> None:
        self.num_classes = num_classes

    def eval(self, info) -> np.ndarray:
        counts = np.zeros((self.num_classes, self.num_classes), dtype=int)
        for true, pred in info.values():
            counts[true, pred] += 1
        return counts


class PerClassAccuracy(object):
    """Accuracy of every true class, in percent; NaN for classes without examples."""
    def __init__(self, num_classes: int) -> None:
        self.num_classes = num_classes

    def eval(self, info) -> np.ndarray:
        counts = ConfusionMatrix(self.num_classes).eval(info)
        totals = counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, 100.0 * np.diag(counts) / totals, np.nan)

import numpy as np

from abc import ABCMeta, abstractmethod


class BaseBackend(metaclass=ABCMeta):
    """The base class of back-end classifiers over codes.

    A back end is fitted on (codes, class labels) and scores every class for a
    new code; the predicted class is the first argmax of those scores.
    """

    num_classes: int = 0

    @abstractmethod
    def fit(self, codes: np.ndarray, labels: np.ndarray) -> "BaseBackend":
        pass

    @abstractmethod
    def decision_values(self, code: np.ndarray) -> np.ndarray:
        pass

    def decision_matrix(self, codes: np.ndarray) -> np.ndarray:
        return np.stack([self.decision_values(c) for c in np.atleast_2d(codes)])

    def predict(self, code: np.ndarray) -> int:
        # np.argmax keeps the lowest index on ties
        return int(np.argmax(self.decision_values(code)))

    def predict_batch(self, codes: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_matrix(codes), axis=1)

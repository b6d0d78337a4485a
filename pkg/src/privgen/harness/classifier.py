"""Multinomial logistic regression, fit by full-batch gradient descent.

Downstream utility is judged by training this classifier on generated data
and scoring it on held-out real data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LogisticClassifier:
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray  # (n_classes,)

    def logits(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weights.T + self.bias

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_classifier(features, labels, n_classes=None, epochs=300, lr=0.5,
                     l2=1e-4) -> LogisticClassifier:
    """Deterministic softmax regression from a zero initialization."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    present = np.unique(y)
    if present.size < 2:
        raise ValueError("classifier training needs at least two classes present")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    n, d = x.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    w = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    for _ in range(epochs):
        probs = _softmax(x @ w.T + b)
        err = (probs - onehot) / n
        gw = err.T @ x + l2 * w
        gb = err.sum(axis=0)
        w -= lr * gw
        b -= lr * gb
    return LogisticClassifier(weights=w, bias=b)


def accuracy(clf: LogisticClassifier, features, labels) -> float:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[1] != clf.weights.shape[1]:
        raise ValueError("feature dimension does not match the classifier")
    return float(np.mean(clf.predict(x) == y))

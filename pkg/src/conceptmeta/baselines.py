"""Flat supervised baseline: one softmax classifier over all candidate labels.

Trained on i.i.d. instances whose label may come from either concept, it has
no way to represent the ambiguity and serves as the comparison floor for the
mixed-concept experiments.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .trainer import Adam


class FlatClassifier:
    def __init__(self, input_dim, n_labels, hidden=(128, 128), seed=0):
        rng = np.random.default_rng([int(seed), 0xF1A7])
        widths = [input_dim, *hidden, n_labels]
        self.layers = []
        for i in range(len(widths) - 1):
            scale = np.sqrt(2.0 / widths[i]) if i < len(widths) - 2 else np.sqrt(1.0 / widths[i])
            w = ad.parameter(rng.normal(0.0, scale, size=(widths[i], widths[i + 1])))
            b = ad.parameter(np.zeros(widths[i + 1]))
            self.layers.append((w, b))

    def named_parameters(self):
        return {f"fc.{i}.{part}": t for i, pair in enumerate(self.layers)
                for part, t in zip(("w", "b"), pair)}

    def logits(self, xs) -> Tensor:
        h = Tensor(np.asarray(xs, dtype=np.float64))
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.relu(h)
        return h

    def predict(self, xs):
        return np.argmax(self.logits(xs).data, axis=1)


def train_flat_classifier(clf: FlatClassifier, sample_batch, steps, lr=1e-3):
    """Cross-entropy training; ``sample_batch(i)`` yields (features, labels)."""
    opt = Adam(clf.named_parameters(), lr=lr)
    for i in range(steps):
        xs, ys = sample_batch(i)
        for p in clf.named_parameters().values():
            p.zero_grad()
        probs = ad.softmax(clf.logits(xs))
        one_hot = np.zeros(probs.data.shape)
        one_hot[np.arange(len(ys)), np.asarray(ys, dtype=int)] = 1.0
        loss = ad.neg(ad.div(ad.tsum(ad.mul(Tensor(one_hot), ad.log(probs))),
                             float(len(ys))))
        loss.backward()
        opt.step()
    return clf

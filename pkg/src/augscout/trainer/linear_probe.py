"""Softmax regression on average-pooled pixels, trained with Adam in numpy.

Fast enough to run hundreds of scouting jobs on one CPU core, and
bit-deterministic for a fixed seed.
"""
from __future__ import annotations

import numpy as np

from ..datasets import to_input_size
from ..errors import NonFiniteLoss
from .core import Continue, EarlyStopState, FitResult, early_stop_step, register_trainer

INPUT_SIZE = 32


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


POOL = 4


def _flatten(images: np.ndarray, pool: int = POOL) -> np.ndarray:
    """Fixed feature map: non-overlapping ``pool`` x ``pool`` average pooling."""
    n, h, w, c = images.shape
    pooled = images.reshape(n, h // pool, pool, w // pool, pool, c).mean(axis=(2, 4))
    return pooled.reshape(n, -1)


def _predict(x, w, b):
    return np.argmax(x @ w + b, axis=1)


@register_trainer("linear_probe")
def fit_linear_probe(spec, train, val, test, policy) -> FitResult:
    pool = int(spec.options.get("pool", POOL))
    decay = float(spec.options.get("weight_decay", 0.0))
    rng = np.random.default_rng(spec.seed)
    k = train.num_classes
    xtr = to_input_size(train.images, INPUT_SIZE).astype(np.float64)
    xval = _flatten(to_input_size(val.images, INPUT_SIZE).astype(np.float64), pool)
    ytr = train.labels
    d = _flatten(xtr[:1], pool).shape[1]

    w = rng.normal(0.0, 0.01, size=(d, k))
    b = np.zeros(k)
    opt = Adam([w, b], spec.learning_rate)
    best = (w.copy(), b.copy())
    stopper = EarlyStopState(spec.early_stopping.patience)
    epochs = 0
    onehot = np.eye(k)

    for _ in range(spec.max_epochs):
        order = rng.permutation(len(ytr))
        for start in range(0, len(order), spec.batch_size):
            idx = order[start: start + spec.batch_size]
            xb = _flatten(policy.apply_train_batch(xtr[idx], rng), pool)
            logits = xb @ w + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            loss = -np.mean(np.log(p[np.arange(len(idx)), ytr[idx]] + 1e-12))
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epochs + 1}")
            g = (p - onehot[ytr[idx]]) / len(idx)
            opt.step([xb.T @ g + decay * w, g.sum(axis=0)])
        epochs += 1
        val_acc = float(np.mean(_predict(xval, w, b) == val.labels))
        decision = early_stop_step(stopper, val_acc)
        if stopper.best_epoch == epochs:
            best = (w.copy(), b.copy())
        if not isinstance(decision, Continue):
            break

    if spec.early_stopping.restore_best:
        w, b = best
    best_epoch = stopper.best_epoch if spec.early_stopping.restore_best else epochs
    xtest = _flatten(to_input_size(test.images, INPUT_SIZE).astype(np.float64), pool)
    return FitResult(
        test_predictions=_predict(xtest, w, b),
        epochs_trained=epochs,
        best_epoch=best_epoch,
        train_accuracy=float(np.mean(_predict(_flatten(xtr, pool), w, b) == ytr)),
        val_accuracy=float(np.mean(_predict(xval, w, b) == val.labels)),
    )

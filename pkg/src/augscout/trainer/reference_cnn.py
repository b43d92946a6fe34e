"""Small CPU-scale CNN: two conv blocks, global average pooling, linear head.

torch is imported lazily so that scouting with the linear probe never pays
for it.
"""
from __future__ import annotations

import numpy as np

from ..datasets import to_input_size
from ..errors import NonFiniteLoss
from .core import Continue, EarlyStopState, FitResult, early_stop_step, register_trainer

INPUT_SIZE = 32


def build_model(in_channels: int, num_classes: int, width: int = 16):
    from torch import nn

    return nn.Sequential(
        nn.Conv2d(in_channels, width, 3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(width, 2 * width, 3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
        nn.Linear(2 * width, num_classes),
    )


def _to_tensor(images: np.ndarray):
    import torch

    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=np.float32))


def _accuracy(model, images: np.ndarray, labels: np.ndarray, batch: int = 512) -> tuple[float, np.ndarray]:
    import torch

    preds = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(images), batch):
            preds.append(model(_to_tensor(images[start: start + batch])).argmax(1).numpy())
    model.train()
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return float(np.mean(preds == labels)), preds


@register_trainer("reference_cnn")
def fit_reference_cnn(spec, train, val, test, policy) -> FitResult:
    import torch

    torch.manual_seed(spec.seed)
    torch.use_deterministic_algorithms(True)
    rng = np.random.default_rng(spec.seed)
    xtr = to_input_size(train.images, INPUT_SIZE, channels=3)
    xval = to_input_size(val.images, INPUT_SIZE, channels=3)
    xtest = to_input_size(test.images, INPUT_SIZE, channels=3)
    ytr = train.labels

    model = build_model(3, train.num_classes)
    opt = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    stopper = EarlyStopState(spec.early_stopping.patience)
    epochs = 0

    for _ in range(spec.max_epochs):
        order = rng.permutation(len(ytr))
        for start in range(0, len(order), spec.batch_size):
            idx = order[start: start + spec.batch_size]
            xb = _to_tensor(policy.apply_train_batch(xtr[idx], rng))
            yb = torch.from_numpy(ytr[idx])
            opt.zero_grad()
            loss = loss_fn(model(xb), yb)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss.item()} at epoch {epochs + 1}")
            loss.backward()
            opt.step()
        epochs += 1
        val_acc, _ = _accuracy(model, xval, val.labels)
        decision = early_stop_step(stopper, val_acc)
        if stopper.best_epoch == epochs:
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        if not isinstance(decision, Continue):
            break

    if spec.early_stopping.restore_best:
        model.load_state_dict(best_state)
    best_epoch = stopper.best_epoch if spec.early_stopping.restore_best else epochs
    train_acc, _ = _accuracy(model, xtr, ytr)
    val_acc, _ = _accuracy(model, xval, val.labels)
    _, preds = _accuracy(model, xtest, test.labels)
    return FitResult(preds, epochs, best_epoch, train_acc, val_acc)

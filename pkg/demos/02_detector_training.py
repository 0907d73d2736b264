#!/usr/bin/env python3
"""Train the from-scratch CNN detector and poke at its internals.

Runs the full loop on an easy synthetic two-class problem: initialize,
train with early stopping, evaluate, spot-check the analytic gradients
against finite differences, and round-trip the weights through the binary
weight file format.
"""

import tempfile
import time
from pathlib import Path

import numpy as np

from cogload.metrics import weighted_f1
from cogload.nn import (
    TrainSpec,
    init_weights,
    load_weights,
    loss_and_grad,
    predict,
    save_weights,
    train,
)
from cogload.synthetic import make_separable_windows

WINDOW = 640  # 10 s at 64 Hz

train_b = make_separable_windows(WINDOW, n_per_class=24, seed=1)
val_b = make_separable_windows(WINDOW, n_per_class=8, seed=2)
test_b = make_separable_windows(WINDOW, n_per_class=8, seed=3)

weights = init_weights(WINDOW, seed=0)
print(f"model: {WINDOW}-sample windows, {weights.n_params()} parameters")

spec = TrainSpec(max_epochs=50, patience_epochs=10, batch_size=16, seed=0)
t0 = time.monotonic()
weights, trace = train(weights, train_b, val_b, spec)
print(
    f"trained {trace.stopped_epoch} epochs in {time.monotonic() - t0:.1f}s "
    f"(best epoch {trace.best_epoch}, "
    f"final val loss {trace.val_loss[-1]:.4f})"
)

f1 = weighted_f1(test_b.labels, predict(weights, test_b.windows))
print(f"test weighted F1: {f1:.3f}")

# ------------------------------------------------- gradient spot check
# central differences in float64; h much smaller and roundoff dominates,
# much larger and curvature does
h = 1e-6
w64 = init_weights(64, seed=5, dtype=np.float64)
x = np.random.default_rng(6).normal(size=(4, 64))
y = np.array([0, 1, 0, 1])
_, grad = loss_and_grad(w64, x, y)
worst = 0.0
for name, arr in w64.tensors():
    flat = arr.ravel()
    g = getattr(grad, name).ravel()
    for i in (0, flat.size // 2, flat.size - 1):
        orig = flat[i]
        flat[i] = orig + h
        lo_plus, _ = loss_and_grad(w64, x, y)
        flat[i] = orig - h
        lo_minus, _ = loss_and_grad(w64, x, y)
        flat[i] = orig
        fd = (lo_plus - lo_minus) / (2 * h)
        worst = max(worst, abs(fd - g[i]) / max(abs(fd) + abs(g[i]), 1e-8))
print(f"gradient check on a small instance: worst relative error {worst:.2e}")

# ------------------------------------------------- weight file round-trip
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "detector.weights"
    save_weights(weights, path)
    size = path.stat().st_size
    loaded = load_weights(path)
    same = np.array_equal(predict(weights, test_b.windows), predict(loaded, test_b.windows))
    print(
        f"weight file: {size} bytes, "
        f"window_len_samples={loaded.meta.window_len_samples}, "
        f"reload predicts identically: {same}"
    )

"""Binary cross-entropy on logits, numerically stable."""

from __future__ import annotations

import numpy as np


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function, stable for large |z|."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over the batch, plus d(loss)/d(logits).

    Uses loss = log(1 + exp(-|z|)) + max(z, 0) - z*y, which never
    exponentiates a large positive number. Targets must be 0 or 1.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits shape {z.shape} != targets shape {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("targets must be 0 or 1")
    per = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0) - z * y
    loss = float(per.mean())
    grad = (sigmoid(z) - y) / z.size
    return loss, grad

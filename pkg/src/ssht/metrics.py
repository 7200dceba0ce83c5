"""Prediction-diversity measurements on randomly sampled batches.

The diversity ratio of a batch is the number of distinct predicted
classes divided by the number of distinct true classes in that batch.
A collapsed model (everything mapped to the majority class) scores near
1/C on balanced batches; a healthy model scores near 1. The ratio can
exceed 1 when the model predicts more classes than the batch contains.
"""

from dataclasses import dataclass

import numpy as np

from . import network


@dataclass
class DiversityRecord:
    batch_index: int
    predicted_categories: int
    true_categories: int
    ratio: float


def diversity_ratio(predictions, true_labels, batch_index: int = 0
                    ) -> DiversityRecord:
    """Distinct predicted classes over distinct true classes, one batch."""
    pred = np.asarray(predictions)
    true = np.asarray(true_labels)
    if pred.size == 0 or true.size == 0:
        raise ValueError("diversity_ratio needs non-empty batches")
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    n_pred = int(np.unique(pred).size)
    n_true = int(np.unique(true).size)
    return DiversityRecord(batch_index=batch_index,
                           predicted_categories=n_pred,
                           true_categories=n_true,
                           ratio=n_pred / n_true)


def aggregate_diversity(net, xs: np.ndarray, ys: np.ndarray,
                        batch_size: int = 48, num_batches: int = 50,
                        rng: np.random.Generator = None) -> float:
    """Mean diversity ratio over randomly sampled batches."""
    if rng is None:
        rng = np.random.default_rng(0)
    n = xs.shape[0]
    if batch_size < 1 or batch_size > n:
        raise ValueError(f"batch_size must lie in [1, {n}]")
    _, logits = network.forward(net, xs)
    pred = np.argmax(logits, axis=1)
    total = 0.0
    for b in range(num_batches):
        idx = rng.choice(n, size=batch_size, replace=False)
        total += diversity_ratio(pred[idx], np.asarray(ys)[idx], b).ratio
    return total / num_batches

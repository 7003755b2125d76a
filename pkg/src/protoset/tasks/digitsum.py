"""Digit-sum set regression.

Each element is a noisy one-hot encoding of a digit 0-9; the label is the sum
of the digits. Training sets stay small (at most M elements) while test sets
grow past anything seen in training, probing length generalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diffcore import Value
from ..errors import ConfigError
from ..summarynet import SetBatch

DIGIT_DIM = 10


@dataclass(frozen=True)
class DigitSumSpec:
    max_train_size: int = 10
    test_sizes: tuple = (10, 25, 50, 100)
    noise_sigma: float = 0.1
    train_count: int = 2000
    test_count_per_size: int = 200

    def __post_init__(self):
        if self.max_train_size < 1:
            raise ConfigError("max_train_size must be >= 1")
        if any(s < 1 for s in self.test_sizes):
            raise ConfigError("test sizes must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


def _encode_digits(digits: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    points = np.zeros((digits.size, DIGIT_DIM))
    points[np.arange(digits.size), digits] = 1.0
    if sigma > 0:
        points += sigma * rng.normal(size=points.shape)
    return points


def _make_set(size: int, sigma: float, rng: np.random.Generator, set_id: int) -> SetBatch:
    digits = rng.integers(0, 10, size=size)
    return SetBatch(_encode_digits(digits, sigma, rng), set_id=set_id, label=int(digits.sum()))


def gen_digit_corpus(spec: DigitSumSpec, seed: int):
    """Training corpus: sizes uniform in [1, max_train_size]."""
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(spec.train_count):
        size = int(rng.integers(1, spec.max_train_size + 1))
        corpus.append(_make_set(size, spec.noise_sigma, rng, i))
    return corpus


def gen_digit_test_corpora(spec: DigitSumSpec, seed: int):
    """One corpus per test size, as {size: [SetBatch, ...]}."""
    rng = np.random.default_rng(seed)
    corpora = {}
    for size in spec.test_sizes:
        corpora[size] = [
            _make_set(size, spec.noise_sigma, rng, i) for i in range(spec.test_count_per_size)
        ]
    return corpora


def digit_sum_loss(prediction: Value, batch: SetBatch) -> Value:
    """L1 distance between the scalar prediction and the integer sum."""
    diff = prediction.reshape((1,)) - float(batch.label)
    return (diff.relu() + (-diff).relu()).sum()


def digit_sum_accuracy(prediction: float, label: int) -> float:
    return 1.0 if int(round(float(prediction))) == int(label) else 0.0

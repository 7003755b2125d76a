"""Global prototype bank and the training loops that shape it.

The bank is a (d, K) matrix of prototype columns living either in data space
or in an encoder's embedding space.  Training minimizes the entropy-regularized
transport cost between each minibatch (uniform weights) and the bank weighted
by the summary network's simplex output — alone, or added to a task loss.

One backward pass per step computes gradients for the bank and the network
together; both are then updated from it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .diffcore import Value, make_optimizer
from .errors import ConfigError, DomainError, NumericalError, TrainingDivergedError
from .ot import (
    Marginals,
    SinkhornConfig,
    build_cost_value,
    floor_simplex_value,
    differentiable_transport_loss,
)
from .ot.cost import METRICS, NORM_FLOOR
from .summarynet import SetBatch, SummaryNet

logger = logging.getLogger(__name__)

SPACES = ("data-space", "embedding-space")


@dataclass
class PrototypeBank:
    """Trainable prototype columns with the space they live in."""

    matrix: Value
    space: str = "data-space"

    def __post_init__(self):
        if not isinstance(self.matrix, Value):
            self.matrix = Value(np.asarray(self.matrix, dtype=np.float64), requires_grad=True)
        if self.matrix.ndim != 2:
            raise ConfigError(f"bank matrix must be (d, K), got shape {self.matrix.shape}")
        if self.space not in SPACES:
            raise ConfigError(f"bank space must be one of {SPACES}, got {self.space!r}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def from_points(
        cls,
        points: np.ndarray,
        k: int,
        rng: np.random.Generator,
        space: str = "data-space",
    ) -> "PrototypeBank":
        """Initialize columns by sampling k points from a pool (rows)."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ConfigError(f"need a (n, d) pool of points, got shape {points.shape}")
        if k < 1:
            raise ConfigError(f"K must be positive, got {k}")
        n = points.shape[0]
        idx = rng.choice(n, size=k, replace=n < k)
        return cls(Value(points[idx].T.copy(), requires_grad=True), space)

    def guard_cosine_columns(self, rng: np.random.Generator) -> int:
        """Re-randomize any column whose norm fell below the cosine floor.

        Returns the number of columns touched (normally zero).
        """
        norms = np.sqrt((self.matrix.data**2).sum(axis=0))
        bad = np.flatnonzero(norms < NORM_FLOOR)
        for col in bad:
            fresh = rng.normal(size=self.dim)
            self.matrix.data[:, col] = fresh / np.linalg.norm(fresh)
            logger.warning("prototype column %d collapsed to zero norm; re-randomized", col)
        return int(bad.size)


@dataclass(frozen=True)
class ProtoMeasure:
    """The bank as a weighted point measure: columns plus simplex weights."""

    support: np.ndarray  # (d, K)
    weights: np.ndarray  # (K,)

    def __post_init__(self):
        if self.support.ndim != 2 or self.weights.shape != (self.support.shape[1],):
            raise ConfigError(
                f"support (d, K) and weights (K,) disagree: "
                f"{self.support.shape} vs {self.weights.shape}"
            )
        # reuse the marginal validator: weights must be a strictly positive simplex
        Marginals(np.full(2, 0.5), self.weights)


def prototype_measure(bank: PrototypeBank, weights) -> ProtoMeasure:
    w = weights.data if isinstance(weights, Value) else np.asarray(weights, np.float64)
    return ProtoMeasure(bank.matrix.data, w)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for the prototype training loops."""

    steps: int = 1000
    lr: float = 0.001
    lr_final: Optional[float] = None  # linear decay target; None keeps lr constant
    optimizer: str = "adam"
    batch_sets: int = 1
    batch_points: int = 100
    metric: str = "cosine"
    lambda_ot: Optional[float] = None
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    seed: int = 0
    log_every: int = 0  # 0 disables progress logging

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be at least 1, got {self.steps}")
        if self.batch_sets < 1:
            raise ConfigError(f"batch_sets must be at least 1, got {self.batch_sets}")
        if self.batch_points < 1:
            raise ConfigError(f"batch_points must be at least 1, got {self.batch_points}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.lambda_ot is not None and self.lambda_ot < 0:
            raise ConfigError(f"lambda_ot must be nonnegative, got {self.lambda_ot}")
        if self.lr_final is not None and self.lr_final <= 0:
            raise ConfigError(f"lr_final must be positive, got {self.lr_final}")
        # lr/optimizer validated by make_optimizer at loop start

    def lr_at(self, step: int) -> float:
        if self.lr_final is None:
            return self.lr
        frac = step / max(self.steps - 1, 1)
        return self.lr + (self.lr_final - self.lr) * frac


@dataclass
class TrainTrace:
    """Per-step losses recorded during a loop.

    ``optimizers`` maps a name to the optimizer the loop used, so callers can
    checkpoint its state; it never takes part in trace comparisons.
    """

    steps: list = field(default_factory=list)
    ot_losses: list = field(default_factory=list)
    task_losses: list = field(default_factory=list)
    optimizers: dict = field(default_factory=dict, compare=False, repr=False)

    def append(self, step: int, ot_loss: Optional[float], task_loss: Optional[float]):
        self.steps.append(step)
        self.ot_losses.append(ot_loss)
        self.task_losses.append(task_loss)


def transport_objective(
    points: np.ndarray,
    weights: Value,
    bank: PrototypeBank,
    metric: str,
    sinkhorn_config: SinkhornConfig,
) -> Value:
    """Differentiable transport loss between a point batch and the weighted bank."""
    cost = build_cost_value(points, bank.matrix, metric)
    cols = floor_simplex_value(weights)
    return differentiable_transport_loss(cost, cols, sinkhorn_config)


def set_transport_loss(
    batch: SetBatch,
    net: SummaryNet,
    bank: PrototypeBank,
    config: TrainConfig,
) -> Value:
    """Summarize a set and score it against the bank (unsupervised loss)."""
    weights = net.summarize(batch.points)
    return transport_objective(batch.points, weights, bank, config.metric, config.sinkhorn)


def subsample_points(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """At most m rows drawn without replacement (all rows if the set is smaller)."""
    n = points.shape[0]
    if n <= m:
        return points
    idx = rng.choice(n, size=m, replace=False)
    return points[idx]


def transport_step(
    points: np.ndarray,
    net: SummaryNet,
    bank: PrototypeBank,
    optimizer,
    config: TrainConfig,
    guard_rng: np.random.Generator,
) -> float:
    """One shared update: loss, backward, bank + encoder step, norm guard.

    This exact function body is the OT step of every loop in the package, so
    the unsupervised trainer and the adversarial trainer cannot drift apart.
    """
    weights = net.summarize(points)
    loss = transport_objective(points, weights, bank, config.metric, config.sinkhorn)
    value = loss.item()
    if not np.isfinite(value):
        return value  # caller raises; parameters stay untouched
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    if config.metric == "cosine":
        bank.guard_cosine_columns(guard_rng)
    return value


def train_unsupervised(
    corpus: Sequence[SetBatch],
    net: SummaryNet,
    bank: PrototypeBank,
    config: TrainConfig,
) -> TrainTrace:
    """Alternating prototype/encoder updates on randomly drawn sets."""
    if config.lambda_ot is not None:
        raise ConfigError("lambda_ot does not apply to unsupervised training; leave it unset")
    if not corpus:
        raise ConfigError("corpus is empty")
    rng = np.random.default_rng(config.seed)
    params = [bank.matrix] + net.parameters()
    optimizer = make_optimizer(config.optimizer, params, config.lr)
    trace = TrainTrace(optimizers={"main": optimizer})
    for step in range(config.steps):
        optimizer.lr = config.lr_at(step)
        try:
            if config.batch_sets == 1:
                batch = corpus[int(rng.integers(len(corpus)))]
                points = subsample_points(batch.points, config.batch_points, rng)
                value = transport_step(points, net, bank, optimizer, config, rng)
            else:
                total = None
                for _ in range(config.batch_sets):
                    batch = corpus[int(rng.integers(len(corpus)))]
                    points = subsample_points(batch.points, config.batch_points, rng)
                    loss = transport_objective(
                        points, net.summarize(points), bank, config.metric, config.sinkhorn
                    )
                    total = loss if total is None else total + loss
                total = total * (1.0 / config.batch_sets)
                value = total.item()
                if np.isfinite(value):
                    optimizer.zero_grad()
                    total.backward()
                    optimizer.step()
                    if config.metric == "cosine":
                        bank.guard_cosine_columns(rng)
        except (DomainError, NumericalError) as exc:
            # parameters corrupted on an earlier step; surface it as divergence
            raise TrainingDivergedError(f"forward pass failed at step {step}: {exc}") from exc
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"transport loss became non-finite at step {step} (value {value!r})"
            )
        trace.append(step, value, None)
        if config.log_every and step % config.log_every == 0:
            logger.info("step %d transport loss %.6f", step, value)
    return trace


def train_supervised(
    corpus: Sequence[SetBatch],
    net: SummaryNet,
    bank: PrototypeBank,
    task_loss_fn: Callable[[Value, SetBatch], Value],
    config: TrainConfig,
) -> TrainTrace:
    """Joint loop: task loss plus lambda_ot times the transport loss.

    With lambda_ot = 0 the transport term is never built, so the run is
    bit-identical to a plain supervised loop and the bank never moves.
    """
    if not corpus:
        raise ConfigError("corpus is empty")
    lam = 1.0 if config.lambda_ot is None else float(config.lambda_ot)
    rng = np.random.default_rng(config.seed)
    params = list(net.parameters())
    if lam > 0:
        params = [bank.matrix] + params
    optimizer = make_optimizer(config.optimizer, params, config.lr)
    trace = TrainTrace(optimizers={"main": optimizer})
    scale = 1.0 / config.batch_sets
    for step in range(config.steps):
        optimizer.lr = config.lr_at(step)
        total = None
        task_value = 0.0
        ot_value = 0.0 if lam > 0 else None
        try:
            for _ in range(config.batch_sets):
                batch = corpus[int(rng.integers(len(corpus)))]
                points = subsample_points(batch.points, config.batch_points, rng)
                sub = SetBatch(points, set_id=batch.set_id, label=batch.label)
                weights, prediction = net.summarize_with_prediction(sub.points)
                task_loss = task_loss_fn(prediction, sub)
                if lam > 0:
                    ot_loss = transport_objective(
                        sub.points, weights, bank, config.metric, config.sinkhorn
                    )
                    term = task_loss + ot_loss * lam
                    ot_value += ot_loss.item() * scale
                else:
                    term = task_loss
                task_value += task_loss.item() * scale
                total = term if total is None else total + term
        except (DomainError, NumericalError) as exc:
            raise TrainingDivergedError(f"forward pass failed at step {step}: {exc}") from exc
        if config.batch_sets > 1:
            total = total * scale
        if not np.isfinite(task_value) or (ot_value is not None and not np.isfinite(ot_value)):
            raise TrainingDivergedError(
                f"loss became non-finite at step {step} "
                f"(task {task_value!r}, transport {ot_value!r})"
            )
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        if lam > 0 and config.metric == "cosine":
            bank.guard_cosine_columns(rng)
        trace.append(step, ot_value, task_value)
        if config.log_every and step % config.log_every == 0:
            logger.info("step %d task %.6f transport %s", step, task_value, ot_value)
    return trace

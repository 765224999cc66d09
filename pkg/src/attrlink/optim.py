"""Training machinery with hand-derived gradients: softmax cross-entropy over
candidates for the NLI head, in-batch contrastive loss for the image adapter,
minibatch SGD/Adam, and central-finite-difference gradient verification.

Everything runs in float64; float32 appears only at the storage boundary.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .disambig import AdapterParams, NliHeadParams

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class OptimError(ValueError):
    """Invalid training inputs: empty datasets, non-finite scores, zero-norm vectors."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise OptimError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 2:
            raise OptimError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise OptimError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in ("sgd", "adam"):
            raise OptimError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


@dataclass
class LossReport:
    train_loss: list[float] = field(default_factory=list)
    dev_loss: list[float] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)

    def append(self, train_loss: float, dev_loss: float, dev_accuracy: float) -> None:
        for name, value in (("train", train_loss), ("dev", dev_loss)):
            if not np.isfinite(value) or value < 0:
                raise OptimError(f"non-finite or negative {name} loss: {value}")
        self.train_loss.append(float(train_loss))
        self.dev_loss.append(float(dev_loss))
        self.dev_accuracy.append(float(dev_accuracy))

    def to_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "dev_loss", "dev_acc"])
            for epoch, row in enumerate(zip(self.train_loss, self.dev_loss, self.dev_accuracy)):
                writer.writerow([epoch, *(repr(v) for v in row)])


def ce_loss(scores, gold_index: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy of the gold candidate; gradient is softmax - one_hot."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size < 1:
        raise OptimError("ce_loss needs at least one candidate score")
    if not np.all(np.isfinite(scores)):
        raise OptimError("ce_loss received non-finite scores")
    if not 0 <= gold_index < scores.size:
        raise OptimError(f"gold_index {gold_index} out of range for {scores.size} candidates")
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    total = exp.sum()
    loss = float(np.log(total) - shifted[gold_index])
    grad = exp / total
    grad[gold_index] -= 1.0
    return loss, grad


def _normalize_rows(batch: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(batch, axis=1)
    if np.any(norms == 0.0):
        raise OptimError(f"zero-norm vector in {name} batch")
    return batch / norms[:, None], norms


def contrastive_loss(review_embs, entity_embs) -> tuple[float, np.ndarray, np.ndarray]:
    """In-batch contrastive loss over cosine similarities, with analytic gradients.

    Row i's positive is entity row i; all other rows of the batch serve as
    negatives. Returns (mean loss, grad wrt review batch, grad wrt entity batch).
    """
    reviews = np.asarray(review_embs, dtype=np.float64)
    entities = np.asarray(entity_embs, dtype=np.float64)
    if reviews.ndim != 2 or reviews.shape != entities.shape:
        raise OptimError(f"batch shapes must match, got {reviews.shape} and {entities.shape}")
    batch = reviews.shape[0]
    if batch < 1:
        raise OptimError("contrastive_loss needs a non-empty batch")
    r_hat, r_norms = _normalize_rows(reviews, "review")
    e_hat, e_norms = _normalize_rows(entities, "entity")

    sims = r_hat @ e_hat.T
    shifted = sims - sims.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    losses = np.log(exp.sum(axis=1)) - shifted[np.arange(batch), np.arange(batch)]
    loss = float(losses.mean())

    grad_sims = softmax.copy()
    grad_sims[np.arange(batch), np.arange(batch)] -= 1.0
    grad_sims /= batch

    # Through cosine: d cos(r, e)/dr = (e_hat - cos * r_hat) / |r|.
    grad_r_hat = grad_sims @ e_hat
    grad_r = (grad_r_hat - (grad_r_hat * r_hat).sum(axis=1, keepdims=True) * r_hat) / r_norms[:, None]
    grad_e_hat = grad_sims.T @ r_hat
    grad_e = (grad_e_hat - (grad_e_hat * e_hat).sum(axis=1, keepdims=True) * e_hat) / e_norms[:, None]
    return loss, grad_r, grad_e


class _Optimizer:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        raise NotImplementedError


class _Sgd(_Optimizer):
    def step(self, params, grads):
        for key, grad in grads.items():
            params[key] -= self.learning_rate * grad


class _Adam(_Optimizer):
    def __init__(self, learning_rate: float):
        super().__init__(learning_rate)
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for key, grad in grads.items():
            if key not in self.m:
                self.m[key] = np.zeros_like(grad)
                self.v[key] = np.zeros_like(grad)
            self.m[key] = ADAM_BETA1 * self.m[key] + (1 - ADAM_BETA1) * grad
            self.v[key] = ADAM_BETA2 * self.v[key] + (1 - ADAM_BETA2) * grad * grad
            m_hat = self.m[key] / (1 - ADAM_BETA1**self.t)
            v_hat = self.v[key] / (1 - ADAM_BETA2**self.t)
            params[key] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _make_optimizer(config: TrainConfig) -> _Optimizer:
    return _Adam(config.learning_rate) if config.optimizer == "adam" else _Sgd(config.learning_rate)


# --- NLI head training ---


def _head_to_dict(params: NliHeadParams) -> dict[str, np.ndarray]:
    return {
        "w_hidden": np.asarray(params.w_hidden, dtype=np.float64).copy(),
        "b_hidden": np.asarray(params.b_hidden, dtype=np.float64).copy(),
        "w_out": np.asarray(params.w_out, dtype=np.float64).copy(),
        "b_out": np.array(params.b_out, dtype=np.float64),
    }


def _head_from_dict(state: dict[str, np.ndarray]) -> NliHeadParams:
    return NliHeadParams(
        w_hidden=state["w_hidden"].copy(),
        b_hidden=state["b_hidden"].copy(),
        w_out=state["w_out"].copy(),
        b_out=float(state["b_out"]),
    )


def head_loss_and_grads(instances, state: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean candidate cross-entropy over instances plus gradients wrt every head parameter.

    Each instance is (features matrix of shape (K, n_features), gold_index).
    """
    if not instances:
        raise OptimError("head_loss_and_grads needs at least one instance")
    grads = {key: np.zeros_like(value) for key, value in state.items()}
    total = 0.0
    for features, gold_index in instances:
        features = np.asarray(features, dtype=np.float64)
        pre = features @ state["w_hidden"] + state["b_hidden"]
        hidden = np.tanh(pre)
        scores = hidden @ state["w_out"] + float(state["b_out"])
        loss, d_scores = ce_loss(scores, gold_index)
        total += loss
        grads["w_out"] += hidden.T @ d_scores
        grads["b_out"] += d_scores.sum()
        d_hidden = np.outer(d_scores, state["w_out"])
        d_pre = d_hidden * (1.0 - hidden**2)
        grads["w_hidden"] += features.T @ d_pre
        grads["b_hidden"] += d_pre.sum(axis=0)
    count = len(instances)
    for key in grads:
        grads[key] /= count
    return total / count, grads


def head_accuracy(instances, state: dict[str, np.ndarray]) -> float:
    if not instances:
        return 0.0
    correct = 0
    for features, gold_index in instances:
        features = np.asarray(features, dtype=np.float64)
        scores = np.tanh(features @ state["w_hidden"] + state["b_hidden"]) @ state["w_out"] + float(state["b_out"])
        if int(np.argmax(scores)) == gold_index:
            correct += 1
    return correct / len(instances)


def train_nli_head(
    dataset,
    config: TrainConfig,
    dev_dataset=None,
    params: NliHeadParams | None = None,
    hidden: int = 16,
) -> tuple[NliHeadParams, LossReport]:
    """Minibatch training of the head; returns the best-dev-loss parameters.

    Deterministic given (seed, config, dataset order). ``epochs == 0`` returns
    the initial parameters untouched with an empty report.
    """
    dataset = list(dataset)
    if not dataset:
        raise OptimError("train_nli_head received an empty dataset")
    dev = list(dev_dataset) if dev_dataset is not None else dataset
    if params is None:
        params = NliHeadParams.init(hidden=hidden, seed=config.seed)
    state = _head_to_dict(params)
    report = LossReport()
    if config.epochs == 0:
        return _head_from_dict(state), report

    rng = np.random.default_rng(config.seed)
    optimizer = _make_optimizer(config)
    best_state = {k: v.copy() for k, v in state.items()}
    best_dev = np.inf
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start : start + config.batch_size]]
            loss, grads = head_loss_and_grads(batch, state)
            epoch_losses.append(loss)
            optimizer.step(state, grads)
        dev_loss, _ = head_loss_and_grads(dev, state)
        dev_acc = head_accuracy(dev, state)
        report.append(float(np.mean(epoch_losses)), dev_loss, dev_acc)
        if dev_loss < best_dev:
            best_dev = dev_loss
            best_state = {k: v.copy() for k, v in state.items()}
    return _head_from_dict(best_state), report


# --- adapter training ---


def _adapter_to_dict(params: AdapterParams) -> dict[str, np.ndarray]:
    return {
        "w1_review": np.asarray(params.w1_review, dtype=np.float64).copy(),
        "w2_review": np.asarray(params.w2_review, dtype=np.float64).copy(),
        "w1_entity": np.asarray(params.w1_entity, dtype=np.float64).copy(),
        "w2_entity": np.asarray(params.w2_entity, dtype=np.float64).copy(),
    }


def _adapter_from_dict(state: dict[str, np.ndarray]) -> AdapterParams:
    return AdapterParams(
        w1_review=state["w1_review"].copy(),
        w2_review=state["w2_review"].copy(),
        w1_entity=state["w1_entity"].copy(),
        w2_entity=state["w2_entity"].copy(),
    )


def adapter_loss_and_grads(
    review_batch: np.ndarray, entity_batch: np.ndarray, state: dict[str, np.ndarray]
) -> tuple[float, dict[str, np.ndarray]]:
    """Contrastive loss over adapted embeddings with gradients wrt all adapter weights."""
    reviews = np.asarray(review_batch, dtype=np.float64)
    entities = np.asarray(entity_batch, dtype=np.float64)
    pre_r = reviews @ state["w1_review"]
    act_r = np.maximum(pre_r, 0.0)
    adapted_r = reviews + act_r @ state["w2_review"]
    pre_e = entities @ state["w1_entity"]
    act_e = np.maximum(pre_e, 0.0)
    adapted_e = entities + act_e @ state["w2_entity"]

    loss, grad_ar, grad_ae = contrastive_loss(adapted_r, adapted_e)
    d_act_r = grad_ar @ state["w2_review"].T
    d_pre_r = d_act_r * (pre_r > 0.0)
    d_act_e = grad_ae @ state["w2_entity"].T
    d_pre_e = d_act_e * (pre_e > 0.0)
    grads = {
        "w1_review": reviews.T @ d_pre_r,
        "w2_review": act_r.T @ grad_ar,
        "w1_entity": entities.T @ d_pre_e,
        "w2_entity": act_e.T @ grad_ae,
    }
    return loss, grads


def evaluate_adapter(pairs, params: AdapterParams, batch_size: int) -> tuple[float, float]:
    """(mean contrastive loss, in-batch retrieval accuracy) over contiguous batches."""
    pairs = list(pairs)
    if not pairs:
        raise OptimError("evaluate_adapter received no pairs")
    state = _adapter_to_dict(params)
    losses: list[float] = []
    correct = 0
    scored = 0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        if len(chunk) < 2:
            continue
        reviews = np.stack([np.asarray(r, dtype=np.float64) for r, _ in chunk])
        entities = np.stack([np.asarray(e, dtype=np.float64) for _, e in chunk])
        adapted_r = adapt_batch(reviews, state["w1_review"], state["w2_review"])
        adapted_e = adapt_batch(entities, state["w1_entity"], state["w2_entity"])
        loss, _, _ = contrastive_loss(adapted_r, adapted_e)
        losses.append(loss)
        r_hat, _ = _normalize_rows(adapted_r, "review")
        e_hat, _ = _normalize_rows(adapted_e, "entity")
        sims = r_hat @ e_hat.T
        correct += int((np.argmax(sims, axis=1) == np.arange(len(chunk))).sum())
        scored += len(chunk)
    if not losses:
        raise OptimError("evaluate_adapter needs at least one batch of size >= 2")
    return float(np.mean(losses)), correct / scored


def adapt_batch(batch: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    return batch + np.maximum(batch @ w1, 0.0) @ w2


def train_adapter(
    pairs,
    config: TrainConfig,
    dev_pairs=None,
    params: AdapterParams | None = None,
    hidden: int | None = None,
) -> tuple[AdapterParams, LossReport]:
    """In-batch contrastive training of both adapter sides with seeded shuffling.

    ``pairs`` is a sequence of (review image embedding, gold entity image
    embedding). Deterministic given the seed; ``epochs == 0`` is a no-op.
    """
    pairs = list(pairs)
    if len(pairs) < config.batch_size:
        raise OptimError(f"need at least batch_size={config.batch_size} pairs, got {len(pairs)}")
    dev = list(dev_pairs) if dev_pairs is not None else pairs
    dim = np.asarray(pairs[0][0]).shape[-1]
    if params is None:
        params = AdapterParams.init(dim, hidden=hidden, seed=config.seed)
    state = _adapter_to_dict(params)
    report = LossReport()
    if config.epochs == 0:
        return _adapter_from_dict(state), report

    reviews_all = np.stack([np.asarray(r, dtype=np.float64) for r, _ in pairs])
    entities_all = np.stack([np.asarray(e, dtype=np.float64) for _, e in pairs])
    rng = np.random.default_rng(config.seed)
    optimizer = _make_optimizer(config)
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            index = order[start : start + config.batch_size]
            if index.size < 2:
                continue
            entity_batch = entities_all[index]
            duplicates = len(entity_batch) - len(np.unique(entity_batch, axis=0))
            if duplicates:
                logger.debug("epoch %d: %d duplicate entity embeddings in batch", epoch, duplicates)
            loss, grads = adapter_loss_and_grads(reviews_all[index], entity_batch, state)
            epoch_losses.append(loss)
            optimizer.step(state, grads)
        dev_loss, dev_acc = evaluate_adapter(dev, _adapter_from_dict(state), config.batch_size)
        report.append(float(np.mean(epoch_losses)), dev_loss, dev_acc)
    return _adapter_from_dict(state), report


# --- gradient verification ---


def grad_check(loss_fn, theta: np.ndarray, probe_count: int = 50, h: float = 1e-4, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central finite differences.

    ``loss_fn(theta) -> (loss, grad)`` with ``grad`` the analytic gradient of the
    scalar loss wrt the flat parameter vector ``theta``. ``probe_count``
    coordinates are sampled without replacement.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    _, grad = loss_fn(theta)
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    rng = np.random.default_rng(seed)
    probes = rng.choice(theta.size, size=min(probe_count, theta.size), replace=False)
    worst = 0.0
    for index in probes:
        bumped = theta.copy()
        bumped[index] += h
        loss_plus, _ = loss_fn(bumped)
        bumped[index] -= 2 * h
        loss_minus, _ = loss_fn(bumped)
        numeric = (loss_plus - loss_minus) / (2 * h)
        analytic = grad[index]
        rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, rel)
    return worst

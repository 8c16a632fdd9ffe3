"""Loss, Nesterov-momentum SGD, and the epoch loop with early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LayerStack, build_model
from .tensorops import FLOAT


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite mid-training."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.0001
    momentum: float = 0.975
    l1_coeff: float = 0.0001
    l2_coeff: float = 0.0001
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    min_rel_improvement: float = 0.005
    seed: int = 0
    noise_std: float = 0.05
    val_fraction: float = 0.2

    def validate(self) -> None:
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")


def loss(weights: list[np.ndarray], pred: np.ndarray, label: np.ndarray,
         l1_coeff: float, l2_coeff: float) -> tuple[float, float, float]:
    """Regularized reconstruction loss.

    Returns (total, mse, reg) where mse is the per-pixel squared error
    averaged over the batch, reg is the raw unweighted regularizer
    sqrt(sum W^2) + sum |W| over all weight matrices (biases excluded),
    and total = mse + l2_coeff * sqrt-term + l1_coeff * abs-term.
    """
    if pred.shape != label.shape:
        raise ValueError(f"loss: prediction shape {pred.shape} != label shape {label.shape}")
    mse = float(np.mean((label - pred) ** 2))
    sq_sum = sum(float(np.sum(w * w)) for w in weights)
    l2_term = float(np.sqrt(sq_sum))
    l1_term = sum(float(np.sum(np.abs(w))) for w in weights)
    total = mse + l2_coeff * l2_term + l1_coeff * l1_term
    return total, mse, l2_term + l1_term


def regularizer_gradients(weights: list[np.ndarray], l1_coeff: float,
                          l2_coeff: float) -> list[np.ndarray]:
    """Subgradients of the weighted regularizer, one per weight matrix.

    sign(0) = 0 for the l1 term; the sqrt term's gradient W/||W|| is taken
    as 0 at ||W|| = 0, keeping everything finite.
    """
    norm = np.sqrt(sum(float(np.sum(w * w)) for w in weights))
    grads = []
    for w in weights:
        g = l1_coeff * np.sign(w)
        if norm > 0.0:
            g = g + (l2_coeff / norm) * w
        grads.append(g)
    return grads


@dataclass
class TrainState:
    model: LayerStack
    velocity: list[np.ndarray]
    epoch: int = 0
    best_val_loss: float = float("inf")
    epochs_since_best: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @classmethod
    def fresh(cls, model: LayerStack, seed: int) -> "TrainState":
        velocity = [np.zeros_like(p) for _, p in _named_params(model)]
        return cls(model=model, velocity=velocity,
                   rng=np.random.default_rng(np.random.PCG64(seed)))

    def check_shapes(self) -> None:
        slots = _named_params(self.model)
        assert len(slots) == len(self.velocity)
        for (_, p), v in zip(slots, self.velocity):
            assert v.shape == p.shape, f"velocity {v.shape} != param {p.shape}"


def _named_params(model: LayerStack):
    return [(name, layer.params[name]) for layer, name in model.param_slots()]


def _model_gradients(model: LayerStack, batch_x: np.ndarray, batch_y: np.ndarray,
                     config: TrainConfig, rng: np.random.Generator):
    """Forward/backward at the current parameters; returns (grads, total, mse)."""
    pred = model.forward(batch_x, train=True, rng=rng)
    total, mse, _ = loss(model.weight_arrays(), pred, batch_y,
                         config.l1_coeff, config.l2_coeff)
    # d(mse)/d(pred): mean over batch and pixels
    model.backward(2.0 * (pred - batch_y) / pred.size)
    reg = regularizer_gradients(model.weight_arrays(), config.l1_coeff, config.l2_coeff)
    grads = []
    reg_iter = iter(reg)
    for layer, name in model.param_slots():
        g = layer.grads[name]
        if name == "W":
            g = g + next(reg_iter)
        grads.append(g)
    return grads, total, mse


def sgd_step(state: TrainState, batch_x: np.ndarray, batch_y: np.ndarray,
             config: TrainConfig) -> tuple[float, float]:
    """One Nesterov step: g = grad L(W + mu v); v <- mu v - a g; W <- W + v.

    With momentum 0 this is the plain update W <- W - a dL/dW. Gradients
    are evaluated at the lookahead point, so parameters are shifted by
    mu v first and the -a g correction lands on the lookahead in place.
    """
    if batch_x.shape[0] == 0:
        raise ValueError("sgd_step: empty batch")
    mu = config.momentum
    alpha = config.learning_rate
    slots = _named_params(state.model)
    if mu != 0.0:
        for (_, p), v in zip(slots, state.velocity):
            p += mu * v
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow near divergence is detected just below and aborts
        grads, total, mse = _model_gradients(state.model, batch_x, batch_y, config, state.rng)
    if not np.isfinite(total) or any(not np.all(np.isfinite(g)) for g in grads):
        raise TrainingDiverged(
            f"non-finite loss or gradient at epoch {state.epoch} (loss={total})"
        )
    for (_, p), v, g in zip(slots, state.velocity, grads):
        v *= mu
        v -= alpha * g
        p -= alpha * g
    state.check_shapes()
    return total, mse


def _eval_losses(model: LayerStack, inputs: np.ndarray, labels: np.ndarray,
                 config: TrainConfig, chunk: int = 512) -> tuple[float, float]:
    """Inference-mode (total, mse) over a dataset, corruption disabled."""
    sq_err = 0.0
    for start in range(0, inputs.shape[0], chunk):
        x = inputs[start : start + chunk]
        y = labels[start : start + chunk]
        pred = model.forward(x)
        sq_err += float(np.sum((y - pred) ** 2))
    mse = sq_err / labels.size
    weights = model.weight_arrays()
    l2_term = float(np.sqrt(sum(float(np.sum(w * w)) for w in weights)))
    l1_term = sum(float(np.sum(np.abs(w))) for w in weights)
    total = mse + config.l2_coeff * l2_term + config.l1_coeff * l1_term
    return float(total), float(mse)


def train(inputs: np.ndarray, labels: np.ndarray, config: TrainConfig,
          arch: str = "model1") -> tuple[LayerStack, dict]:
    """Train a fresh stack; returns the best-validation snapshot and history.

    inputs/labels are (N, 16, 16) arrays in [0, 1]. Data is shuffled with
    the seeded generator, split 80/20 train/validation, and trained until
    max_epochs or until validation mse fails to improve by
    min_rel_improvement for `patience` consecutive epochs. History records
    both loss conventions per epoch: with and without the regularizer.
    """
    config.validate()
    if inputs.shape[0] == 0:
        raise ValueError("train: no data")
    if inputs.shape != labels.shape:
        raise ValueError(f"train: inputs {inputs.shape} != labels {labels.shape}")

    model = build_model(arch, seed=config.seed, noise_std=config.noise_std)
    state = TrainState.fresh(model, seed=config.seed)

    order = state.rng.permutation(inputs.shape[0])
    n_val = max(1, int(round(inputs.shape[0] * config.val_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise ValueError("train: validation split leaves no training data")
    x_train = inputs[train_idx][:, None].astype(FLOAT)
    y_train = labels[train_idx][:, None].astype(FLOAT)
    x_val = inputs[val_idx][:, None].astype(FLOAT)
    y_val = labels[val_idx][:, None].astype(FLOAT)

    history = {"epochs": [], "arch": arch, "n_train": int(train_idx.size),
               "n_val": int(n_val)}
    init_val_total, init_val_mse = _eval_losses(model, x_val, y_val, config)
    history["initial_val_total"] = init_val_total
    history["initial_val_mse"] = init_val_mse

    best_snapshot = model.snapshot()
    best_epoch = 0
    state.best_val_loss = init_val_mse
    patience_ref = init_val_mse  # last significant improvement

    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        perm = state.rng.permutation(x_train.shape[0])
        batch_totals, batch_mses, batch_sizes = [], [], []
        for start in range(0, perm.size, config.batch_size):
            take = perm[start : start + config.batch_size]
            total, mse = sgd_step(state, x_train[take], y_train[take], config)
            batch_totals.append(total * take.size)
            batch_mses.append(mse * take.size)
            batch_sizes.append(take.size)

        # train curve: running average of the epoch's batch losses
        # (training mode, corruption included); validation is a clean
        # inference pass
        train_total = sum(batch_totals) / sum(batch_sizes)
        train_mse = sum(batch_mses) / sum(batch_sizes)
        val_total, val_mse = _eval_losses(model, x_val, y_val, config)
        history["epochs"].append({
            "epoch": epoch,
            "train_total": train_total, "train_mse": train_mse,
            "val_total": val_total, "val_mse": val_mse,
        })

        # the snapshot tracks the true minimum; the patience counter only
        # resets on improvements that clear the relative threshold
        if val_mse < state.best_val_loss:
            state.best_val_loss = val_mse
            best_snapshot = model.snapshot()
            best_epoch = epoch
        if val_mse < patience_ref * (1.0 - config.min_rel_improvement):
            patience_ref = val_mse
            state.epochs_since_best = 0
        else:
            state.epochs_since_best += 1
            if state.epochs_since_best >= max(config.patience, 1):
                break

    model.restore(best_snapshot)
    history["best_epoch"] = best_epoch
    history["best_val_mse"] = state.best_val_loss
    return model, history

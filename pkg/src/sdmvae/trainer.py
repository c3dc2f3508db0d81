"""Mini-batch training with Adam and early stopping on validation loss."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ContractError, backward, zero_grad
from .model import VARIANTS, ModelParams, VAEModel

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    patience: int = 20
    max_epochs: int = 500
    rng_seed: int = 0
    variant: str = "sdm_dct"
    m: int = 32
    k: int = 32
    lr: float = 1e-4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "sdm_identity" and self.k != self.m:
            raise ValueError(f"sdm_identity needs k == m, got m={self.m}, k={self.k}")


class AdamState:
    def __init__(self, params: ModelParams, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros(t.shape) for name, t in params.items()}
        self.v = {name: np.zeros(t.shape) for name, t in params.items()}
        self.step = 0


def adam_step(state: AdamState, params: ModelParams) -> None:
    """Bias-corrected Adam update in place; gradients are cleared afterwards."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing}; call backward first")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, t in params.items():
        g = t.grad
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        t.assign(t.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    zero_grad(params)


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_epoch(model: VAEModel, opt: AdamState, frames: np.ndarray, cfg: TrainConfig,
                rng: np.random.Generator) -> float:
    """One pass over shuffled frames; returns the mean batch loss."""
    n = len(frames)
    if n == 0:
        raise ValueError("training set is empty")
    order = rng.permutation(n)
    losses = []
    for b, idx in enumerate(_batches(n, cfg.batch_size, order)):
        s = frames[idx]
        eps = rng.standard_normal((len(idx), model.code_dim))
        terms = model.loss_terms(s, eps)
        value = terms.loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"non-finite loss at batch {b}: loss={value}, recon={terms.recon}, kl={terms.kl}")
        backward(terms.loss)
        adam_step(opt, model.params)
        losses.append(value)
    return float(np.mean(losses))


def evaluate_loss(model: VAEModel, frames: np.ndarray, batch_size: int, seed: int) -> float:
    """Frame-weighted mean loss with a fixed noise stream, so epochs are comparable."""
    if len(frames) == 0:
        raise ValueError("validation set is empty")
    rng = np.random.default_rng(seed)
    total = 0.0
    for start in range(0, len(frames), batch_size):
        s = frames[start : start + batch_size]
        eps = rng.standard_normal((len(s), model.code_dim))
        total += model.loss_terms(s, eps).loss.item() * len(s)
    return total / len(frames)


class EarlyStopping:
    """Stop once `patience` epochs pass without a strictly lower loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.epoch = -1

    def update(self, value: float) -> bool:
        self.epoch += 1
        if value < self.best:
            self.best, self.best_epoch = value, self.epoch
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_time: float


@dataclass
class FitResult:
    model: VAEModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = np.inf


def fit(model: VAEModel, train_frames: np.ndarray, val_frames: np.ndarray, cfg: TrainConfig,
        on_epoch=None) -> FitResult:
    """Train until validation loss stalls for ``cfg.patience`` epochs or ``max_epochs``.

    Returns the parameters of the best validation epoch.
    """
    if len(train_frames) == 0 or len(val_frames) == 0:
        raise ValueError("fit needs non-empty training and validation sets")
    rng = np.random.default_rng(cfg.rng_seed)
    val_seed = cfg.rng_seed + 1
    opt = AdamState(model.params, lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    best_params = model.params.copy()
    history = []
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss = train_epoch(model, opt, train_frames, cfg, rng)
        val_loss = evaluate_loss(model, val_frames, cfg.batch_size, val_seed)
        record = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - t0)
        history.append(record)
        stop = stopper.update(val_loss)
        if stopper.best_epoch == stopper.epoch:
            best_params = model.params.copy()
        log.debug("epoch %d train %.4f val %.4f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(record)
        if stop:
            break
    return FitResult(model.with_params(best_params), history, stopper.best_epoch + 1, stopper.best)


def write_log(path, history: list[EpochRecord], with_time: bool = False) -> None:
    """CSV training log.  Wall time is opt-in so that logs stay reproducible."""
    cols = ["epoch", "train_loss", "val_loss"] + (["wall_time"] if with_time else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in history:
            row = asdict(rec)
            w.writerow([row["epoch"]] + [repr(row[c]) for c in cols[1:]])

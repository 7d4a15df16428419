"""Adversarial training: SGD-with-momentum outer loop over batches in which a
configurable fraction of examples is replaced by adversarial versions
generated against the current parameters, with windowed early stopping on
robust validation mIoU."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import numcore as nc
from .attacks import AttackConfig, Budget
from .metrics import cross_entropy_graph, miou
from .numcore import SgdMomentumState, Tensor, grad_of, sgd_momentum_step
from .segmodel import ModelShape, SegModel
from .synthdata import Dataset


class DivergenceError(ArithmeticError):
    """Training loss went non-finite."""


@dataclass
class TrainConfig:
    attack: str | None = None        # None | "pgd" | "cira+"
    attack_iterations: int = 3
    attack_step_size: float = 0.01   # PGD signed-step size
    attack_adam_lr: float = 0.01     # CIRA+ Adam learning rate
    epsilon: float = 0.03
    rho: float = 1.0                 # adversarial fraction of each batch
    batch_size: int = 16
    epochs: int = 30
    warmup_epochs: int = 0           # clean-only epochs before the attack kicks in
    lr: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.9
    lr_power: float = 0.9            # polynomial decay exponent
    early_stop_window: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError("rho must be in [0, 1]")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("rates and counts must be positive")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    clean_miou: list[float] = field(default_factory=list)
    robust_miou: list[float] = field(default_factory=list)
    selected_epoch: int = -1
    attack_invocations: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "clean_miou", "robust_miou"])
            for e, (l, c, r) in enumerate(zip(self.losses, self.clean_miou,
                                              self.robust_miou)):
                w.writerow([e, f"{l:.9f}", f"{c:.9f}", f"{r:.9f}"])


def _inner_attack(model: SegModel, x, y, config: TrainConfig, seed: int) -> np.ndarray:
    """Training-time attack against the current parameters; returns the last
    iterate (cheaper than best-seen, and the gradient signal is what matters)."""
    budget = Budget(epsilon=config.epsilon)
    if config.attack == "pgd":
        cfg = AttackConfig(iterations=config.attack_iterations,
                           step_size=config.attack_step_size, seed=seed)
        return atk.pgd(model, x, y, budget, cfg, best_seen=False).adv_image
    if config.attack == "cira+":
        cfg = AttackConfig(iterations=config.attack_iterations,
                           adam_lr=config.attack_adam_lr, seed=seed)
        return atk.cira_plus(model, x, y, budget, cfg, best_seen=False).adv_image
    raise ValueError(f"unknown training attack '{config.attack}'")


def make_adversarial_batch(model: SegModel, batch: list, config: TrainConfig,
                           seed: int, log: TrainLog | None = None) -> list:
    """Replace the first ceil(rho*n) examples (after a seeded shuffle) with
    adversarial versions; labels are unchanged."""
    if not batch:
        raise ValueError("empty batch")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(batch))
    n_adv = math.ceil(config.rho * len(batch))
    out = []
    for pos, idx in enumerate(order):
        ex = batch[idx]
        if pos < n_adv and config.attack is not None:
            if log is not None:
                log.attack_invocations += 1
            adv = _inner_attack(model, ex.image, ex.mask, config,
                                int(rng.integers(0, 2 ** 62)))
            out.append((adv, ex.mask))
        else:
            out.append((ex.image, ex.mask))
    return out


def _batch_step(model: SegModel, batch, states: dict[str, SgdMomentumState],
                lr: float, config: TrainConfig) -> float:
    params = model.param_tensors()
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    total = 0.0
    for image, mask in batch:
        probs = model.full_forward(image, params=params)
        loss = cross_entropy_graph(probs, mask)
        total += loss.item()
        leaves = list(params.values())
        for leaf in leaves:
            leaf.grad = None
        gs = grad_of(loss, leaves)
        for k, g in zip(params.keys(), gs):
            grads[k] += g
        params = model.param_tensors()  # fresh leaves: the old graph is consumed
    n = len(batch)
    mean_loss = total / n
    if not np.isfinite(mean_loss):
        raise DivergenceError(f"training loss is {mean_loss}")
    for k in model.params:
        st = states[k]
        st.lr = lr
        model.params[k] = sgd_momentum_step(st, model.params[k], grads[k] / n)
    return mean_loss


def _validate(model: SegModel, val: Dataset, config: TrainConfig,
              seed: int) -> tuple[float, float]:
    clean_scores, robust_scores = [], []
    for i in range(len(val)):
        ex = val[i]
        clean_scores.append(miou(model.full_forward(ex.image).data, ex.mask))
        if config.attack is None:
            robust_scores.append(clean_scores[-1])
        else:
            adv = _inner_attack(model, ex.image, ex.mask, config, seed + i)
            robust_scores.append(miou(model.full_forward(adv).data, ex.mask))
    return float(np.mean(clean_scores)), float(np.mean(robust_scores))


def train(config: TrainConfig, train_ds: Dataset, val_ds: Dataset,
          shape: ModelShape | None = None,
          run_dir=None) -> tuple[SegModel, TrainLog]:
    """Adversarial training loop.

    The returned model is the per-epoch checkpoint whose trailing
    ``early_stop_window`` mean of robust validation mIoU is maximal.
    """
    shape = shape or ModelShape(train_ds.height, train_ds.width, train_ds.classes)
    model = SegModel.init(config.seed, shape)
    states = {k: SgdMomentumState(lr=config.lr, momentum=config.momentum,
                                  weight_decay=config.weight_decay)
              for k in model.params}
    rng = np.random.default_rng(config.seed)
    log = TrainLog()
    checkpoints: list[dict[str, np.ndarray]] = []
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(config.epochs):
        lr = config.lr * (1.0 - epoch / config.epochs) ** config.lr_power
        order = rng.permutation(len(train_ds))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            idxs = order[start:start + config.batch_size]
            batch = [train_ds[int(i)] for i in idxs]
            if (config.attack is not None and config.rho > 0
                    and epoch >= config.warmup_epochs):
                batch = make_adversarial_batch(model, batch, config,
                                               int(rng.integers(0, 2 ** 62)), log)
            else:
                batch = [(ex.image, ex.mask) for ex in batch]
            epoch_losses.append(_batch_step(model, batch, states, lr, config))
        clean, robust = _validate(model, val_ds, config,
                                  int(rng.integers(0, 2 ** 62)))
        log.losses.append(float(np.mean(epoch_losses)))
        log.clean_miou.append(clean)
        log.robust_miou.append(robust)
        checkpoints.append(model.clone_params())
        if run_dir is not None:
            snap = SegModel(shape, checkpoints[-1], meta={"epoch": epoch,
                                                          "seed": config.seed})
            snap.save(run_dir / f"epoch_{epoch:04d}.ckpt")

    w = config.early_stop_window
    window_means = [float(np.mean(log.robust_miou[max(0, e - w + 1):e + 1]))
                    for e in range(config.epochs)]
    selected = int(np.argmax(window_means))
    log.selected_epoch = selected
    final = SegModel(shape, checkpoints[selected],
                     meta={"epoch": selected, "seed": config.seed,
                           "attack": config.attack or "none",
                           "rho": config.rho})
    if run_dir is not None:
        log.write_csv(run_dir / "trainlog.csv")
    return final, log

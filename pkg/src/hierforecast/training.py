"""Mini-batch ADAM training shared by HERA and the recurrent baselines.

Models expose ``training_examples(h, rng)``, ``validation_examples(h)``,
``loss(example, rng) -> (weighted total, raw unweighted sum)`` and
``parameters()``.  The weighted total is what gets differentiated; model
selection uses the raw sum, which is comparable across epochs because it does
not move with the learned task weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ContractError, NumericError
from .hierarchy import ActivityHierarchy

log = logging.getLogger(__name__)


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_so_far: list[float] = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0
    skipped_steps: int = 0

    @property
    def best_val(self) -> float:
        return self.best_so_far[-1] if self.best_so_far else float("nan")


def mean_loss(model, examples) -> float:
    if not examples:
        return float("nan")
    return float(np.mean([model.loss(ex)[1] for ex in examples]))


def fit(model, train: Sequence[ActivityHierarchy], val: Sequence[ActivityHierarchy] | None = None,
        epochs: int | None = None) -> TrainingHistory:
    """Train ``model`` in place and restore the parameters of the best epoch.

    The best epoch is the one with the lowest validation loss (training loss
    when no validation videos are given).  Deterministic for a fixed
    ``model.config.seed``.
    """
    history = TrainingHistory()
    if not getattr(model, "trainable", True):
        return history
    if not train:
        raise ContractError("fit: empty training set")
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    params = model.parameters()
    rng = np.random.default_rng(ad.derive_seed(cfg.seed, "training"))
    val_examples = [ex for h in (val or []) for ex in model.validation_examples(h)]
    best = None
    for epoch in range(epochs):
        examples = [ex for h in train for ex in model.training_examples(h, rng)]
        order = rng.permutation(len(examples))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[k] for k in order[start:start + cfg.batch_size]]
            weight = 1.0 / len(batch)
            for ex in batch:
                total, raw = model.loss(ex, rng)
                epoch_losses.append(raw)
                ad.backward(ad.scale(total, weight))
            try:
                ad.adam_step(params, lr=cfg.lr)
                history.steps += 1
            except NumericError as exc:
                log.warning("epoch %d: skipped update (%s)", epoch, exc)
                for p in params:
                    p.zero_grad()
                history.skipped_steps += 1
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        val_loss = mean_loss(model, val_examples) if val_examples else train_loss
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if best is None or val_loss < best:
            best = val_loss
            history.best_epoch = epoch
            snapshot = {id(p): p.value.copy() for p in params}
        history.best_so_far.append(best)
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
    if best is not None:
        for p in params:
            p.value[...] = snapshot[id(p)]
    return history

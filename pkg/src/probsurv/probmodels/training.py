"""Mini-batch Adam training with early stopping, shared by every backend."""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..dataio import Dataset
from ..tensorcore import AdamState, Network, TrainConfig, adam_step
from .models import (
    MCDConfig,
    MCDModel,
    PointModel,
    RiskModel,
    SNGPConfig,
    SNGPModel,
    VIModel,
)
from .objectives import make_objective


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without strict improvement."""

    def __init__(self, patience: int = 5):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0
        self.epoch = -1

    def update(self, loss: float) -> bool:
        """Record one epoch's validation loss; True if it is a new best."""
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def event_stratified_batches(events, batch_size: int, rng: np.random.Generator):
    """Shuffled mini-batches that each contain at least one event.

    Events and censored records are shuffled separately and dealt
    round-robin; the batch count is capped by the number of events.
    """
    events = np.asarray(events)
    n = events.shape[0]
    ev = np.flatnonzero(events > 0)
    ce = np.flatnonzero(events <= 0)
    if ev.size == 0:
        raise ValueError("training data contain no events")
    n_batches = max(1, min(math.ceil(n / batch_size), ev.size))
    ev = ev[rng.permutation(ev.size)]
    ce = ce[rng.permutation(ce.size)]
    return [np.sort(np.concatenate([ev[k::n_batches], ce[k::n_batches]])) for k in range(n_batches)]


def rng_streams(seed: int):
    """Independent generators for initialization, batching and model noise."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def fit(model: RiskModel, train: Dataset, valid: Optional[Dataset], cfg: TrainConfig, batch_rng, noise_rng):
    """Train ``model`` in place; restores the best validation checkpoint."""
    train.require_events()
    X, t, e = train.X, train.time, train.event
    params = model.params()
    names = model.param_names()
    state = AdamState.zeros_like(params)
    stopper = EarlyStopping(cfg.patience)
    best = model.snapshot()
    step = 0
    model.history = []
    for epoch in range(cfg.max_epochs):
        model.on_epoch_start()
        losses = []
        for idx in event_stratified_batches(e, cfg.batch_size, batch_rng):
            loss, grads = model.loss_and_grads(X[idx], t[idx], e[idx], len(train), noise_rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            step += 1
            try:
                adam_step(params, grads, state, step, cfg, names)
            except FloatingPointError as exc:
                raise TrainingDivergedError(epoch, str(exc)) from exc
            model.post_step()
            losses.append(loss)
        train_loss = float(np.mean(losses))
        if valid is not None:
            val_loss = model.validation_loss(valid.X, valid.time, valid.event)
            if not np.isfinite(val_loss):
                raise TrainingDivergedError(epoch, "non-finite validation loss")
        else:
            val_loss = train_loss
        model.history.append((epoch, train_loss, val_loss))
        if stopper.update(val_loss):
            best = model.snapshot()
        if stopper.should_stop:
            break
    model.restore(best)
    model.best_epoch = stopper.best_epoch
    model.finalize(X)
    model.trained = True
    return model


def _widths(train: Dataset, hidden: Sequence[int], n_out: int):
    return [train.d, *hidden, n_out]


def train_mlp(train: Dataset, valid: Optional[Dataset], hidden: Sequence[int], cfg: TrainConfig, head: str = "cox") -> PointModel:
    """Deterministic risk network trained on the partial likelihood plus L2."""
    init_rng, batch_rng, noise_rng = rng_streams(cfg.seed)
    objective = make_objective(head, train.time)
    net = Network.init(_widths(train, hidden, objective.n_outputs), init_rng)
    model = PointModel(net, objective, cfg.l2_lambda)
    return fit(model, train, valid, cfg, batch_rng, noise_rng)


def train_mcd(train: Dataset, valid: Optional[Dataset], hidden: Sequence[int], cfg: TrainConfig, mcd: MCDConfig, head: str = "cox") -> MCDModel:
    """Same network and stream layout as :func:`train_mlp`, with dropout masks
    drawn from the noise stream on every forward pass."""
    init_rng, batch_rng, noise_rng = rng_streams(cfg.seed)
    objective = make_objective(head, train.time)
    net = Network.init(_widths(train, hidden, objective.n_outputs), init_rng)
    model = MCDModel(net, mcd, objective, cfg.l2_lambda)
    return fit(model, train, valid, cfg, batch_rng, noise_rng)


def train_vi(
    train: Dataset,
    valid: Optional[Dataset],
    hidden: Sequence[int],
    cfg: TrainConfig,
    prior_std: float = 1.0,
    head: str = "cox",
    rho_init: float = -5.0,
) -> VIModel:
    """Mean-field Gaussian posterior fitted by minimizing the negative ELBO."""
    init_rng, batch_rng, noise_rng = rng_streams(cfg.seed)
    objective = make_objective(head, train.time)
    model = VIModel.init(_widths(train, hidden, objective.n_outputs), init_rng, prior_std, rho_init, objective)
    return fit(model, train, valid, cfg, batch_rng, noise_rng)


def train_sngp(train: Dataset, valid: Optional[Dataset], hidden: Sequence[int], cfg: TrainConfig, head_cfg: Optional[SNGPConfig] = None) -> SNGPModel:
    init_rng, batch_rng, noise_rng = rng_streams(cfg.seed)
    model = SNGPModel.init([train.d, *hidden], init_rng, head_cfg or SNGPConfig(), cfg.l2_lambda)
    return fit(model, train, valid, cfg, batch_rng, noise_rng)

"""Training loop: Adam with step decay, per-step CSV logging, checkpoints."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .losses import TERMS, LossWeights, nonfinite_terms, total_loss
from .metrics import psnr
from .model import DSTNet, ModelConfig

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "lr", "total", *TERMS)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 0.005
    batch: int = 9
    decay_factor: float = 0.5
    decay_every: int = 50
    epochs: int = 1
    max_steps: int | None = None
    crop: int = 192
    seed: int = 0
    val_every: int = 1
    loss: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)


def lr_at(epoch: int, cfg: TrainConfig | None = None) -> float:
    cfg = cfg or TrainConfig()
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def to_batch(images) -> torch.Tensor:
    return torch.from_numpy(np.stack([np.asarray(im).transpose(2, 0, 1) for im in images])).float()


@dataclass
class TrainState:
    model: DSTNet
    optimizer: torch.optim.Optimizer
    epoch: int
    step: int
    seed: int
    lr: float
    loss: float
    terms: dict


def make_optimizer(model: DSTNet, lr: float) -> torch.optim.Adam:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def validation_psnr(model: DSTNet, view) -> float:
    model.eval()
    scores = []
    with torch.no_grad():
        for i in range(len(view)):
            low, gt = view[i]
            est = model(to_batch([low])).image[0]
            scores.append(psnr(est, gt))
    model.train()
    return float(np.mean(scores))


class Trainer:
    def __init__(self, cfg: TrainConfig, out_dir=None, resume=None):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir else None
        self.model = DSTNet(cfg.model)
        self.optimizer = make_optimizer(self.model, lr_at(0, cfg))
        self.start_epoch = 0
        self.skip_batches = 0
        self.step = 0
        self.best_psnr = -math.inf
        if resume is not None:
            self.model, blob = load_checkpoint(resume, expected=cfg.model)
            self.optimizer = make_optimizer(self.model, lr_at(0, cfg))
            self.optimizer.load_state_dict(blob["optimizer"])
            # a run cut short by max_steps resumes inside its epoch
            partial = blob["extra"].get("batches_done")
            self.start_epoch = blob["epoch"] + (0 if partial else 1)
            self.skip_batches = partial or 0
            self.step = blob["step"]
            self.best_psnr = blob["extra"].get("best_psnr", -math.inf)
        self._log_fh = None
        self._log_writer = None

    def _open_log(self):
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "train_log.csv"
        fresh = self.step == 0 or not path.exists()
        self._log_fh = open(path, "w" if fresh else "a", newline="")
        self._log_writer = csv.writer(self._log_fh)
        if fresh:
            self._log_writer.writerow(LOG_COLUMNS)

    def _log_row(self, state: TrainState):
        if self._log_writer is None:
            return
        vals = [state.step, state.epoch, repr(state.lr), repr(state.loss)]
        vals += ["" if state.terms[t] is None else repr(state.terms[t]) for t in TERMS]
        self._log_writer.writerow(vals)
        self._log_fh.flush()

    def train_step(self, low: torch.Tensor, gt: torch.Tensor):
        self.optimizer.zero_grad()
        est = self.model(low).image
        total, terms = total_loss(est, gt, self.cfg.loss)
        bad = nonfinite_terms(terms)
        if bad or not torch.isfinite(total):
            raise TrainingError(f"non-finite loss at step {self.step}; offending terms: {bad or ['total']}")
        total.backward()
        self.optimizer.step()
        return float(total.detach()), {t: None if v is None else float(v.detach()) for t, v in terms.items()}

    def run(self, train_view, val_view=None) -> Iterator[TrainState]:
        if getattr(train_view, "tag", "train") != "train":
            raise TrainingError("training must use the train split")
        if len(train_view) == 0:
            raise TrainingError("empty training split")
        cfg = self.cfg
        self.model.train()
        self._open_log()
        try:
            for epoch in range(self.start_epoch, cfg.epochs):
                lr = lr_at(epoch, cfg)
                for group in self.optimizer.param_groups:
                    group["lr"] = lr
                order = epoch_order(len(train_view), cfg.seed, epoch)
                starts = range(0, len(order), cfg.batch)
                skip, self.skip_batches = self.skip_batches, 0
                for done, start in enumerate(starts):
                    if done < skip:
                        continue
                    if cfg.max_steps is not None and self.step >= cfg.max_steps:
                        if done:  # at done == 0 the previous epoch's last.pt is current
                            self._save("last.pt", epoch, batches_done=done)
                        return
                    items = [train_view[int(i)] for i in order[start : start + cfg.batch]]
                    low, gt = to_batch([a for a, _ in items]), to_batch([b for _, b in items])
                    loss, terms = self.train_step(low, gt)
                    self.step += 1
                    state = TrainState(self.model, self.optimizer, epoch, self.step, cfg.seed,
                                       self.optimizer.param_groups[0]["lr"], loss, terms)
                    self._log_row(state)
                    yield state
                self._end_epoch(epoch, val_view)
        finally:
            if self._log_fh:
                self._log_fh.close()
                self._log_fh = self._log_writer = None

    def _save(self, name, epoch, batches_done=None):
        if self.out_dir is None:
            return
        extra = {"best_psnr": self.best_psnr}
        if batches_done:
            extra["batches_done"] = batches_done
        save_checkpoint(self.out_dir / name, self.model, self.optimizer, epoch, self.step,
                        self.cfg.seed, extra)

    def _end_epoch(self, epoch, val_view):
        if self.out_dir is None:
            return
        if val_view is not None and len(val_view) and (epoch + 1) % self.cfg.val_every == 0:
            score = validation_psnr(self.model, val_view)
            log.info("epoch %d validation PSNR %.3f dB", epoch, score)
            if score > self.best_psnr:
                self.best_psnr = score
                self._save("best.pt", epoch)
        self._save("last.pt", epoch)


def train(cfg: TrainConfig, train_view, val_view=None, out_dir=None, resume=None) -> Iterator[TrainState]:
    """Stream of per-step training states."""
    return Trainer(cfg, out_dir, resume).run(train_view, val_view)

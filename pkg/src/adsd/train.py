"""Two-stage training (task-guided pre-training, semantic fine-tuning),
evaluation and the per-epoch report."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfg
from .checkpoint import checksum, save_checkpoint
from .data.augment import apply_augment, sample_params
from .data.dataset import Batch, Dataset
from .decoder import TaskKind
from .errors import ConfigError, NumericalError
from .losses import ClassWeights, compute_losses, median_frequency_weights
from .metrics import ConfusionMatrix, SegmentationMetrics, accumulate, argmax_labels, compute_metrics
from .model import ADSD, ModelConfig
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune")


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run besides the dataset.

    ``lr_finetune`` defaults to a tenth of ``lr_pretrain``. The learning rate
    is multiplied by ``lr_step_gamma`` every ``lr_step_epochs`` epochs within
    a stage.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    batch_size: int = 4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_pretrain: float = 2e-4
    lr_finetune: Optional[float] = None
    epochs_pretrain: int = 60
    epochs_finetune: int = 5
    lr_step_epochs: int = 30
    lr_step_gamma: float = 0.1
    pretrain_task: Optional[TaskKind] = TaskKind.NORMAL
    finetune_task: Optional[TaskKind] = TaskKind.SEMANTIC
    augment: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lr_pretrain <= 0:
            raise ConfigError("lr_pretrain must be positive")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.lr_step_epochs < 1:
            raise ConfigError("lr_step_epochs must be >= 1")
        for name in ("pretrain_task", "finetune_task"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, TaskKind.parse(value))

    @property
    def finetune_lr(self) -> float:
        return self.lr_finetune if self.lr_finetune is not None else self.lr_pretrain / 10.0

    def stage_task(self, stage: str) -> Optional[TaskKind]:
        if self.model.secondary is None:
            return None
        return self.pretrain_task if stage == "pretrain" else self.finetune_task


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        step = self.lr * np.sqrt(c2) / c1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (step * m / (np.sqrt(v) + self.eps * np.sqrt(c2))).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


REPORT_COLUMNS = ["stage", "epoch", "L", "L_S", "L_T", "L_P1", "L_P2", "L_P3", "L_P4",
                  "val_pixacc", "val_macc", "val_miou"]


@dataclass
class EpochRow:
    stage: str
    epoch: int
    losses: dict
    val: Optional[SegmentationMetrics]
    seconds: float

    def csv_row(self) -> list:
        row = [self.stage, str(self.epoch)]
        for col in REPORT_COLUMNS[2:9]:
            row.append(_fmt(self.losses.get(col, 0.0)))
        if self.val is None:
            row += ["", "", ""]
        else:
            row += [_fmt(self.val.pixacc), _fmt(self.val.macc), _fmt(self.val.miou)]
        return row


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        """Per-epoch losses and validation metrics. Wall-clock times are kept
        out of this file (see :meth:`write_timing`) so reruns are byte-identical."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow(r.csv_row())

    def write_timing(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "epoch", "seconds"])
            for r in self.rows:
                w.writerow([r.stage, r.epoch, f"{r.seconds:.3f}"])

    def column(self, name: str, stage: Optional[str] = None) -> np.ndarray:
        rows = [r for r in self.rows if stage is None or r.stage == stage]
        if name.startswith("val_"):
            return np.array([getattr(r.val, name[4:]) if r.val else np.nan for r in rows])
        return np.array([r.losses.get(name, 0.0) for r in rows])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def evaluate(model: ADSD, dataset: Dataset, batch_size: int = 8) -> tuple[SegmentationMetrics, ConfusionMatrix]:
    """Single-scale inference through the primary decoder only."""
    cm = ConfusionMatrix(model.config.num_classes)
    dtype = model.config.np_dtype
    with no_grad():
        for batch in dataset.batches(batch_size):
            out = model(Tensor(batch.rgb.astype(dtype)), Tensor(batch.depth.astype(dtype)),
                        training=False, run_secondary=False)
            cm = accumulate(cm, argmax_labels(out.final_logits.data), batch.labels)
    return compute_metrics(cm), cm


class Trainer:
    def __init__(self, config: TrainConfig, train_set: Dataset, val_set: Optional[Dataset] = None,
                 weights: Optional[ClassWeights] = None, model: Optional[ADSD] = None):
        self.config = config
        self.train_set = train_set
        self.val_set = val_set
        if train_set.num_classes != config.model.num_classes:
            raise ConfigError(f"dataset has {train_set.num_classes} classes, model expects "
                              f"{config.model.num_classes}")
        self.weights = weights or median_frequency_weights(train_set.histogram())
        model_cfg = config.model
        task = config.stage_task("pretrain")
        if model_cfg.secondary is not None and task is not None:
            model_cfg = replace(model_cfg, secondary=task)
        self.model = model or ADSD(model_cfg, seed=config.seed)
        self.report = TrainReport()
        self.checksums: dict[str, str] = {}

    def _batch_tensors(self, batch: Batch):
        dt = self.config.model.np_dtype
        return Tensor(batch.rgb.astype(dt, copy=False)), Tensor(batch.depth.astype(dt, copy=False))

    def run_epoch(self, stage: str, epoch: int, optimizer: Adam) -> dict:
        cfg_ = self.config
        model = self.model
        task = cfg_.stage_task(stage)
        n = len(self.train_set)
        order = _rng(cfg_.seed, STAGES.index(stage), epoch, 1).permutation(n)
        transform = None
        if cfg_.augment:
            def transform(i, sample, _epoch=epoch):
                rng = _rng(cfg_.seed, STAGES.index(stage), _epoch, 2, int(i))
                return apply_augment(sample, sample_params(sample.shape, rng))
        sums: dict[str, float] = {}
        steps = 0
        for batch in self.train_set.batches(cfg_.batch_size, order, transform):
            rgb, depth = self._batch_tensors(batch)
            out = model(rgb, depth, training=True, run_secondary=task is not None)
            losses = compute_losses(out, batch, self.weights, task)
            if not np.isfinite(losses.total.data):
                raise NumericalError(f"non-finite loss at {stage} epoch {epoch}")
            optimizer.zero_grad()
            backward(losses.total)
            optimizer.step()
            for k, v in losses.values().items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        return {k: v / max(steps, 1) for k, v in sums.items()}

    def run_stage(self, stage: str, epochs: int, lr: float, epoch_offset: int = 0) -> None:
        cfg_ = self.config
        optimizer = Adam(self.model.parameters(), lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps)
        for e in range(epochs):
            optimizer.lr = lr * cfg_.lr_step_gamma ** (e // cfg_.lr_step_epochs)
            start = time.perf_counter()
            losses = self.run_epoch(stage, e, optimizer)
            val = evaluate(self.model, self.val_set)[0] if self.val_set is not None else None
            row = EpochRow(stage, epoch_offset + e + 1, losses, val, time.perf_counter() - start)
            self.report.rows.append(row)
            log.info("%s epoch %d L=%.4f L_S=%.4f val_miou=%s (%.1fs)", stage, row.epoch,
                     losses.get("L", 0.0), losses.get("L_S", 0.0),
                     f"{val.miou:.4f}" if val else "-", row.seconds)

    def pretrain(self) -> None:
        self.run_stage("pretrain", self.config.epochs_pretrain, self.config.lr_pretrain)

    def begin_finetune(self) -> None:
        """Swap the secondary head to the fine-tuning task."""
        task = self.config.stage_task("finetune")
        self.checksums["before_finetune"] = checksum(self.model)
        if task is not None and self.model.secondary is not None and self.model.secondary.task.kind != task:
            self.model.set_secondary_head(task)

    def finetune(self) -> None:
        self.begin_finetune()
        self.run_stage("finetune", self.config.epochs_finetune, self.config.finetune_lr,
                       epoch_offset=self.config.epochs_pretrain)

    def fit(self) -> TrainReport:
        self.pretrain()
        self.finetune()
        return self.report


def save_run(out_dir, trainer: Trainer, checkpoint_name: str = "checkpoint") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer.report.write_csv(out / "report.csv")
    trainer.report.write_timing(out / "timing.csv")
    (out / "config.txt").write_text(cfg.dumps(trainer.config), encoding="utf-8")
    save_checkpoint(trainer.model, out / checkpoint_name)
    return out

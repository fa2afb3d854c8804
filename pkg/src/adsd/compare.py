"""Dual-decoder versus single-decoder convergence comparison.

For each seed two runs share everything except the secondary branch: the
dual variant trains with the task-guided secondary decoder and its loss, the
baseline drops both. Training L_S is smoothed with a trailing window-10 moving
average; the summary compares its variance over epochs 10-40 and its level at
epoch 20.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import checksum
from .data.dataset import Dataset
from .errors import ConfigError
from .model import ADSD
from .train import TrainConfig, Trainer

log = logging.getLogger(__name__)

WINDOW = 10
VAR_EPOCHS = (10, 40)
LEVEL_EPOCH = 20
MIN_SEEDS = 3

SUMMARY_COLUMNS = ["seed", "dual_ma_at_20", "single_ma_at_20", "dual_ma_var_10_40", "single_ma_var_10_40",
                   "dual_var_le_single", "dual_level_le_single", "init_checksum_match"]


def moving_average(values: Sequence[float], window: int = WINDOW) -> np.ndarray:
    """Trailing mean; entry i (0-based) averages epochs i-window+2 .. i+1.

    Entries before a full window are NaN.
    """
    v = np.asarray(values, dtype=np.float64)
    out = np.full(v.shape, np.nan)
    if len(v) >= window:
        c = np.concatenate([[0.0], np.cumsum(v)])
        out[window - 1:] = (c[window:] - c[:-window]) / window
    return out


def smoothed_stats(train_ls: Sequence[float]) -> tuple[float, float]:
    """(moving average at LEVEL_EPOCH, variance of the moving average over VAR_EPOCHS)."""
    ma = moving_average(train_ls)
    lo, hi = VAR_EPOCHS
    if len(ma) < hi:
        raise ConfigError(f"comparison needs at least {hi} epochs, got {len(ma)}")
    return float(ma[LEVEL_EPOCH - 1]), float(np.var(ma[lo - 1:hi]))


@dataclass
class SeedResult:
    seed: int
    dual_level: float
    single_level: float
    dual_var: float
    single_var: float
    init_match: bool

    @property
    def var_ok(self) -> bool:
        return self.dual_var <= self.single_var

    @property
    def level_ok(self) -> bool:
        return self.dual_level <= self.single_level

    def csv_row(self) -> list:
        return [self.seed, repr(self.dual_level), repr(self.single_level), repr(self.dual_var),
                repr(self.single_var), int(self.var_ok), int(self.level_ok), int(self.init_match)]


@dataclass
class ComparisonSummary:
    results: list

    @property
    def var_majority(self) -> bool:
        return 2 * sum(r.var_ok for r in self.results) > len(self.results)

    @property
    def level_majority(self) -> bool:
        return 2 * sum(r.level_ok for r in self.results) > len(self.results)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            for r in self.results:
                w.writerow(r.csv_row())


def variants(config: TrainConfig, seed: int) -> dict[str, TrainConfig]:
    dual = replace(config, seed=seed)
    if dual.model.secondary is None:
        dual = replace(dual, model=replace(dual.model, secondary=dual.pretrain_task))
    single = replace(dual, model=replace(dual.model, secondary=None))
    return {"dual": dual, "single": single}


def compare_decoders(config: TrainConfig, train_set: Dataset, seeds: Sequence[int], out_dir,
                     val_set: Optional[Dataset] = None) -> ComparisonSummary:
    seeds = list(seeds)
    if len(seeds) < MIN_SEEDS:
        raise ConfigError(f"need at least {MIN_SEEDS} seeds, got {len(seeds)}")
    if config.epochs_pretrain + config.epochs_finetune < VAR_EPOCHS[1]:
        raise ConfigError(f"comparison needs at least {VAR_EPOCHS[1]} epochs")
    out = Path(out_dir)
    results = []
    for seed in seeds:
        stats, sums = {}, {}
        for name, c in variants(config, seed).items():
            tr = Trainer(c, train_set, val_set)
            sums[name] = (checksum(tr.model, ("encoder.",)), checksum(tr.model))
            tr.fit()
            run_dir = out / f"seed_{seed}" / name
            run_dir.mkdir(parents=True, exist_ok=True)
            tr.report.write_csv(run_dir / "report.csv")
            stats[name] = smoothed_stats(tr.report.column("L_S"))
            log.info("seed %d %s: MA(L_S)@%d=%.5f var=%.3g", seed, name, LEVEL_EPOCH, *stats[name])
        results.append(SeedResult(seed, stats["dual"][0], stats["single"][0], stats["dual"][1],
                                  stats["single"][1], sums["dual"] == sums["single"]))
    summary = ComparisonSummary(results)
    out.mkdir(parents=True, exist_ok=True)
    summary.write_csv(out / "summary.csv")
    return summary


def init_checksums_match(config: TrainConfig, seed: int) -> bool:
    """Both variants start from bitwise-identical encoder and primary decoder weights."""
    models = [ADSD(c.model, seed=seed) for c in variants(config, seed).values()]
    return checksum(models[0]) == checksum(models[1])

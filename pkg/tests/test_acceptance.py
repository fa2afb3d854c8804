"""Acceptance criteria 1-9, each printed as one PASS/FAIL line.

Criteria 7-9 train on the desk-scale synthetic set and take most of an hour
on a single core. Per-run reports and the decoder comparison summary are
archived under ``acceptance/`` at the repository root.
"""

import math
import shutil
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from adsd import cli, ops
from adsd import config as cfg
from adsd.attention import (ChannelAttentionParams, FusionVariant, SpatialAttentionParams, channel_attention,
                            spatial_attention)
from adsd.compare import compare_decoders
from adsd.data import Dataset, generate_dataset
from adsd.decoder import ASPPConfig, TaskKind
from adsd.gradsuite import TOL, run_all
from adsd.losses import berhu_loss, median_frequency_weights
from adsd.metrics import ConfusionMatrix, accumulate, compute_metrics
from adsd.model import ADSD, ModelConfig
from adsd.ops import BatchNormState, ConvSpec
from adsd.tensor import Tensor
from adsd.train import TrainConfig, read_report_csv

import oracles

ARCHIVE = Path(__file__).resolve().parent.parent / "acceptance"
ORACLE_INSTANCES = 20


@pytest.fixture
def verdict(capsys):
    def report(number: int, title: str, ok: bool, detail: str = "") -> None:
        with capsys.disabled():
            print(f"\nCRITERION {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"
    return report


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# ---- 1: gradient suite --------------------------------------------------------

def test_criterion_1_gradient_suite(verdict):
    start = time.perf_counter()
    results = run_all()
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_error for reps in results.values() for r in reps)
    failed = [f"{name}[{i}]" for name, reps in results.items() for i, r in enumerate(reps) if not r.passed]
    enough = all(len(reps) >= 5 for reps in results.values())
    blocks = {"channel_attention", "spatial_attention", "amf", "upsample_block", "aspp", "adsd"}
    ok = not failed and enough and blocks <= set(results) and worst < TOL and elapsed < 300
    verdict(1, "finite-difference gradient suite", ok,
            f"{len(results)} suites, max rel err {worst:.2e}, {elapsed:.0f}s, failed={failed or 'none'}")


# ---- 2: oracle equivalence ----------------------------------------------------

def _oracle_errors() -> dict:
    errs = {k: 0.0 for k in ("conv2d", "conv_transpose2d", "batchnorm", "pooling", "attention")}
    geoms = [(3, 1, 1, 1), (3, 2, 1, 1), (3, 1, 2, 2), ((1, 3), (2, 1), (0, 1), 1), (2, 2, 0, 1)]
    for seed in range(ORACLE_INSTANCES):
        rng = np.random.default_rng(1000 + seed)
        spec = ConvSpec(2, 3, *geoms[seed % 5])
        x, w, b = rng.standard_normal((2, 2, 5, 6)), rng.standard_normal((3, 2, *spec.kernel)), rng.standard_normal(3)
        got = ops.conv2d(t64(x), t64(w), t64(b), spec).data
        ref = oracles.conv2d_loop(x, w, b, spec.stride, spec.padding, spec.dilation)
        errs["conv2d"] = max(errs["conv2d"], np.abs(got - ref).max())

        w_t = rng.standard_normal((2, 3, *spec.kernel))
        got = ops.conv_transpose2d(t64(x[:, :, :3, :4]), t64(w_t), t64(b), spec).data
        ref = oracles.conv_transpose2d_loop(x[:, :, :3, :4], w_t, b, spec.stride, spec.padding, spec.dilation)
        errs["conv_transpose2d"] = max(errs["conv_transpose2d"], np.abs(got - ref).max())

        xb, g, beta = rng.standard_normal((3, 4, 3, 2)) * 2 + 1, rng.standard_normal(4), rng.standard_normal(4)
        training = seed % 2 == 0
        state = BatchNormState(4, dtype=np.float64)
        if training:
            mean, var = oracles.channel_mean_var_loop(xb)
        else:
            state.running_mean[:] = rng.standard_normal(4)
            state.running_var[:] = rng.uniform(0.1, 3.0, 4)
            mean, var = state.running_mean.copy(), state.running_var.copy()
        got = ops.batchnorm2d(t64(xb), t64(g), t64(beta), state, training=training).data
        errs["batchnorm"] = max(errs["batchnorm"], np.abs(got - oracles.batchnorm_loop(xb, g, beta, mean, var)).max())

        xp = rng.standard_normal((2, 3, 4 + seed % 3, 5))
        got = ops.global_avg_pool(t64(xp)).data
        errs["pooling"] = max(errs["pooling"], np.abs(got - oracles.avg_pool_loop(xp)).max())

        u = rng.standard_normal((2, 4, 3, 3))
        ca = ChannelAttentionParams(4, 2, dtype=np.float64)
        ca.initialize(seed)
        ca.reduce.bias.data[:] = rng.standard_normal(2)
        ca.expand.bias.data[:] = rng.standard_normal(4)
        ref = oracles.channel_attention_loop(u, ca.reduce.weight.data[:, :, 0, 0], ca.reduce.bias.data,
                                             ca.expand.weight.data[:, :, 0, 0], ca.expand.bias.data)
        err_ca = np.abs(channel_attention(t64(u), ca).data - ref).max()
        sa = SpatialAttentionParams(4, dtype=np.float64)
        sa.initialize(seed)
        sa.project.bias.data[:] = rng.standard_normal(1)
        ref = oracles.spatial_attention_loop(u, sa.project.weight.data[:, :, 0, 0], sa.project.bias.data)
        err_sa = np.abs(spatial_attention(t64(u), sa).data - ref).max()
        errs["attention"] = max(errs["attention"], err_ca, err_sa)
    return errs


def test_criterion_2_oracle_equivalence(verdict):
    errs = _oracle_errors()
    ok = all(e <= 1e-12 for e in errs.values())
    verdict(2, f"forward passes match scalar-loop oracles on {ORACLE_INSTANCES} instances each", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


# ---- 3: loss identities (additivity is audited on the criterion 7 reports) ----

def test_criterion_3_loss_identities(verdict, desk_runs):
    worked = berhu_loss(t64([1.0, 2.0, 10.0]), np.zeros(3)).item()
    kink = 0.0
    for beta in np.geomspace(1e-3, 1e3, 61):
        below = berhu_loss(t64([beta]), np.zeros(1), beta=beta).item()
        above = berhu_loss(t64([beta * (1 + 1e-12)]), np.zeros(1), beta=beta).item()
        kink = max(kink, abs(above - below) / max(1.0, beta))
    ce = 0.0
    for c in (2, 3, 4, 7, 19, 40):
        rng = np.random.default_rng(c)
        logits = np.full((2, c, 3, 3), rng.standard_normal())
        loss = ops.softmax_cross_entropy(t64(logits), rng.integers(0, c, (2, 3, 3))).item()
        ce = max(ce, abs(loss - math.log(c)))
    additivity, rows = 0.0, 0
    for path in desk_runs["reports"].values():
        for r in read_report_csv(path):
            parts = float(r["L_S"]) + float(r["L_T"]) + sum(float(r[f"L_P{k}"]) for k in range(1, 5))
            additivity = max(additivity, abs(float(r["L"]) - parts))
            rows += 1
    ok = worked == 29 / 3 and kink <= 1e-9 and ce <= 1e-12 and additivity <= 1e-6 and rows > 0
    verdict(3, "loss identities", ok,
            f"berHu(1,2,10)={worked!r}, kink gap {kink:.1e}, |CE-lnC| {ce:.1e}, "
            f"additivity {additivity:.1e} over {rows} epochs")


# ---- 4: median-frequency weights ---------------------------------------------

def test_criterion_4_median_frequency(verdict):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(100):
        c = int(rng.integers(2, 41))
        hist = rng.integers(0, 10**6, c) * (rng.random(c) > 0.2)
        if hist.sum() == 0:
            hist[0] = 1
        if median_frequency_weights(hist).alpha.tolist() != oracles.median_frequency_loop(hist.tolist()):
            mismatches += 1
    uniform = median_frequency_weights([777] * 13).alpha
    ok = mismatches == 0 and (uniform == 1.0).all()
    verdict(4, "median-frequency weights exact on 100 histograms, uniform gives ones", ok,
            f"{mismatches} mismatches")


# ---- 5: metrics ---------------------------------------------------------------

def test_criterion_5_metrics(verdict):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(100):
        c = int(rng.integers(1, 6))
        h, w = (int(v) for v in rng.integers(1, 9, 2))
        gt = rng.integers(0, c, (h, w))
        pred = rng.integers(0, c, (h, w))
        cm = accumulate(ConfusionMatrix(c), pred, gt)
        m = compute_metrics(cm)
        if (not np.array_equal(cm.counts, oracles.confusion_loop(pred, gt, c))
                or (m.pixacc, m.macc, m.miou) != oracles.metrics_loop(pred, gt, c)):
            mismatches += 1
    worked = compute_metrics(accumulate(ConfusionMatrix(2), np.array([[0, 1], [1, 1]]),
                                        np.array([[0, 0], [1, 1]]))).miou
    ok = mismatches == 0 and abs(worked - 7 / 12) < 1e-15
    verdict(5, "metrics exact on 100 random pairs, worked case 7/12", ok,
            f"{mismatches} mismatches, worked mIoU {worked!r}")


# ---- 6: shape contract --------------------------------------------------------

SHAPE_VARIANTS = {
    "default": ModelConfig(),
    "spatial/no-secondary": ModelConfig(fusion=FusionVariant.SPATIAL_ATTENTION, secondary=None, num_classes=6),
    "summation/depth-head": ModelConfig(fusion=FusionVariant.SUMMATION, secondary=TaskKind.DEPTH,
                                       aspp=ASPPConfig(rates=(1, 3)), decoder_width=16),
}


def test_criterion_6_shape_contract(verdict):
    bad = []
    rng = np.random.default_rng(6)
    rgb, depth = Tensor(rng.random((2, 3, 64, 64), dtype=np.float32)), Tensor(rng.random((2, 1, 64, 64), dtype=np.float32))
    for name, c in SHAPE_VARIANTS.items():
        model = ADSD(c, seed=0)
        scales = [f.shape[2] for f in model.encoder(rgb, depth, training=False).fuse]
        out = model(rgb, depth, training=True)
        sides = [s.shape[2] for s in out.side_outputs]
        final = out.final_logits.shape
        if scales != [32, 16, 8, 4, 2] or sides != [32, 16, 8, 4] or final != (2, c.num_classes, 64, 64):
            bad.append(f"{name}: {scales} {sides} {final}")
        if c.secondary is not None and out.secondary_pred.shape[2:] != (64, 64):
            bad.append(f"{name}: secondary {out.secondary_pred.shape}")
    verdict(6, "64x64 input gives scales 32..2, side outputs 32..4, full-size logits for 3 variants",
            not bad, "; ".join(bad) or "all variants match")


# ---- 7-9: desk-scale training -------------------------------------------------

DESK = dict(train=200, val=50, size=64, classes=4, seed=2024)


def _train(data, out: Path, config_text: str = "") -> float:
    out.mkdir(parents=True, exist_ok=True)
    argv = ["train", "--data", str(data / "train"), "--val", str(data / "val"), "--out", str(out)]
    if config_text:
        (out.parent / f"{out.name}.cfg").write_text(config_text)
        argv[1:1] = ["--config", str(out.parent / f"{out.name}.cfg")]
    start = time.perf_counter()
    code = cli.main(argv)
    assert code == 0
    return time.perf_counter() - start


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    generate_dataset(root / "train", DESK["seed"], DESK["train"], DESK["size"], DESK["size"], DESK["classes"])
    generate_dataset(root / "val", DESK["seed"] + 1, DESK["val"], DESK["size"], DESK["size"], DESK["classes"])
    rgb_only = cfg.dumps(replace(TrainConfig(), model=replace(ModelConfig(), use_depth=False)))
    seconds = {
        "fused": _train(root, root / "fused"),
        "rgb_only": _train(root, root / "rgb_only", rgb_only),
        "fused_rerun": _train(root, root / "fused_rerun"),
    }
    ARCHIVE.mkdir(exist_ok=True)
    reports = {}
    for name in seconds:
        reports[name] = root / name / "report.csv"
        shutil.copy(reports[name], ARCHIVE / f"desk_{name}_report.csv")
    return {"root": root, "reports": reports, "seconds": seconds}


def test_criterion_7_desk_training(verdict, desk_runs):
    fused = read_report_csv(desk_runs["reports"]["fused"])
    rgb = read_report_csv(desk_runs["reports"]["rgb_only"])
    miou, rgb_miou = float(fused[-1]["val_miou"]), float(rgb[-1]["val_miou"])
    minutes = desk_runs["seconds"]["fused"] / 60
    epochs_ok = len(fused) == 65 and [r["stage"] for r in fused].count("finetune") == 5
    ok = epochs_ok and miou >= 0.80 and miou - rgb_miou >= 0.05 and minutes <= 30
    verdict(7, "desk-scale two-stage training", ok,
            f"val mIoU {miou:.4f}, RGB-only {rgb_miou:.4f}, gap {miou - rgb_miou:.4f}, "
            f"{minutes:.1f} min on this machine's cores")


COMPARE = dict(train=64, seeds=(0, 1, 2, 3, 4), seed=77)


def test_criterion_8_convergence_comparison(verdict, tmp_path):
    generate_dataset(tmp_path / "train", COMPARE["seed"], COMPARE["train"], 64, 64, 4)
    config = TrainConfig(epochs_pretrain=40, epochs_finetune=0)
    summary = compare_decoders(config, Dataset(tmp_path / "train"), COMPARE["seeds"], tmp_path / "cmp")
    ARCHIVE.mkdir(exist_ok=True)
    shutil.copy(tmp_path / "cmp" / "summary.csv", ARCHIVE / "compare_decoders_summary.csv")
    n = len(summary.results)
    var_wins = sum(r.var_ok for r in summary.results)
    level_wins = sum(r.level_ok for r in summary.results)
    init_ok = all(r.init_match for r in summary.results)
    for r in summary.results:
        print(f"seed {r.seed}: MA(L_S)@20 dual {r.dual_level:.5f} single {r.single_level:.5f}; "
              f"var 10-40 dual {r.dual_var:.3e} single {r.single_var:.3e}")
    ok = n >= 5 and init_ok and summary.var_majority and summary.level_majority
    verdict(8, "dual decoder smooths and lowers training loss in a majority of seeds", ok,
            f"variance {var_wins}/{n}, level {level_wins}/{n}, identical init {init_ok}")


def test_criterion_9_reproducibility(verdict, desk_runs):
    a = desk_runs["reports"]["fused"].read_bytes()
    b = desk_runs["reports"]["fused_rerun"].read_bytes()
    verdict(9, "two identical desk runs give byte-identical report CSVs", a == b,
            f"{len(a)} bytes, {'identical' if a == b else 'different'}")

"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import UsageError
from .tensor import Tensor, backward, no_grad, record_branches

# Denominator floor for the relative error, so entries whose true gradient
# is ~0 are judged on absolute error instead. Central differences of an O(1)
# loss at step 1e-5 carry ~1e-10 of rounding noise; with tol 1e-4 the floor
# must sit above 1e-6 for that noise not to register as an error.
REL_ERR_FLOOR = 1e-5


@dataclass
class GradcheckFailure:
    input_index: int
    element: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    name: str
    passed: bool
    max_rel_error: float
    checked: int
    excluded: int = 0
    kinks: int = 0
    failures: list[GradcheckFailure] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<28s} max_rel_err={self.max_rel_error:.3e} "
                f"checked={self.checked} excluded={self.excluded} kinks={self.kinks}")


def relative_error(analytic: float, numeric: float, floor: float = REL_ERR_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    name: str = "op",
    exclude: Optional[dict[int, np.ndarray]] = None,
    max_per_input: Optional[int] = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare backprop gradients of ``fn()`` against central differences.

    ``fn`` must rebuild its graph from ``inputs`` on every call and return a
    scalar. ``exclude`` maps an input index to a boolean mask of elements not
    to perturb (non-smooth points). ``max_per_input`` samples a seeded subset
    of elements per input for large tensors.

    Perturbations that flip a relu or berHu branch anywhere in the graph
    straddle a point where the function is not differentiable; they are
    counted in ``kinks`` and not compared.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise UsageError(f"gradcheck needs float64 inputs, got {t.dtype} for {name}")
        t.grad = None
        t.requires_grad = True
    with record_branches() as base:
        loss = fn()
    backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    rng = np.random.default_rng(seed)
    exclude = exclude or {}
    report = GradcheckReport(name=name, passed=True, max_rel_error=0.0, checked=0)
    for idx, t in enumerate(inputs):
        candidates = np.arange(t.size)
        if idx in exclude:
            mask = np.asarray(exclude[idx], dtype=bool).reshape(-1)
            report.excluded += int(mask.sum())
            candidates = candidates[~mask]
        if max_per_input is not None and candidates.size > max_per_input:
            candidates = np.sort(rng.choice(candidates, size=max_per_input, replace=False))
        flat = t.data.reshape(-1)
        for k in candidates:
            orig = flat[k]
            with no_grad(), record_branches() as branches:
                flat[k] = orig + step
                f_plus = float(fn().data)
                flat[k] = orig - step
                f_minus = float(fn().data)
            flat[k] = orig
            if not _same_branches(base, branches):
                report.kinks += 1
                continue
            numeric = (f_plus - f_minus) / (2 * step)
            a = float(analytic[idx].reshape(-1)[k])
            err = relative_error(a, numeric)
            report.checked += 1
            report.max_rel_error = max(report.max_rel_error, err)
            if err >= tol:
                report.passed = False
                report.failures.append(
                    GradcheckFailure(idx, np.unravel_index(k, t.shape), a, numeric, err))
    return report


def _same_branches(base: list, trial: list) -> bool:
    n = len(base)
    if len(trial) != 2 * n:
        return False
    return all(np.array_equal(b, t) for b, t in zip(base + base, trial))


def projected(fn: Callable[[], Tensor], shape: tuple, seed: int) -> Callable[[], Tensor]:
    """Reduce a tensor-valued ``fn`` to a scalar via a fixed random projection."""
    # Separate stream so the weights never coincide with inputs drawn from ``seed``.
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5EED])))
    weights = Tensor(rng.standard_normal(shape))

    def scalar():
        return (fn() * weights).sum()

    return scalar

import numpy as np
import pytest

from adsd import gradsuite, ops
from adsd.errors import UsageError
from adsd.gradcheck import gradcheck, projected, relative_error
from adsd.losses import berhu_loss
from adsd.ops import ConvSpec
from adsd.tensor import Tensor, make_op

FAST = [name for name in gradsuite.SUITES if name != "adsd"]


@pytest.mark.parametrize("name", FAST)
def test_suite_passes(name):
    reports = gradsuite.run_suite(name)
    assert len(reports) >= 5
    for r in reports:
        assert r.passed, (r.line(), r.failures[:3])
        assert r.checked > 0


def test_conv2d_3x3_instance():
    rng = np.random.default_rng(0)
    spec = ConvSpec(2, 2, 3, 1, 1)
    x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
    report = gradcheck(projected(lambda: ops.conv2d(x, w, None, spec), (1, 2, 4, 4), 0), [x, w])
    assert report.passed and report.max_rel_error < 1e-4


def test_detects_wrong_gradient():
    x = Tensor(np.linspace(-1, 1, 6), requires_grad=True)

    def doubled_square():
        out = x.data ** 2
        return make_op(out, (x,), lambda g: (g * 3 * x.data,), "bad_square")  # true factor is 2

    report = gradcheck(lambda: doubled_square().sum(), [x])
    assert not report.passed and report.failures


def test_requires_double_precision():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(UsageError):
        gradcheck(lambda: x.sum(), [x])


def test_berhu_kink_is_excluded():
    pred = Tensor(np.array([1.0, 2.0, 10.0, 0.5]), requires_grad=True)
    target = np.zeros(4)
    excl = gradsuite.berhu_exclusions(pred.data, target)
    # beta = 2: the element sitting exactly on the kink and the max are excluded
    np.testing.assert_array_equal(excl, [False, True, True, False])
    report = gradcheck(lambda: berhu_loss(pred, target, beta=2.0), [pred], exclude={0: excl})
    assert report.passed and report.excluded == 2 and report.checked == 2


def test_relu_kink_crossing_is_reported_not_compared():
    x = Tensor(np.array([1e-7, 0.5, -0.3]), requires_grad=True)
    report = gradcheck(lambda: ops.relu(x).sum(), [x])
    assert report.passed and report.kinks == 1 and report.checked == 2


def test_relative_error_floor():
    assert relative_error(1.0, 1.0001) == pytest.approx(1e-4, rel=1e-3)
    assert relative_error(0.0, 1e-11) < 1e-4

import numpy as np
import pytest

from kdcontrast.config import TrainConfig
from kdcontrast.exceptions import ShapeMismatch
from kdcontrast.optim import SGD, Adam, make_optimizer


def test_sgd_single_step():
    params = {"theta": np.array([1.0])}
    SGD(0.1).step(params, {"theta": np.array([2.0])})
    assert params["theta"][0] == pytest.approx(0.8)


def test_zero_gradient_leaves_params():
    params = {"theta": np.array([1.0, -2.0])}
    SGD(0.1).step(params, {"theta": np.zeros(2)})
    assert params["theta"].tolist() == [1.0, -2.0]
    adam = Adam(0.001)
    for _ in range(3):
        adam.step(params, {"theta": np.zeros(2)})
    assert np.allclose(params["theta"], [1.0, -2.0], atol=1e-12)


def test_adam_first_step():
    params = {"theta": np.array([0.0])}
    Adam(0.001).step(params, {"theta": np.array([1.0])})
    assert params["theta"][0] == pytest.approx(-0.001, rel=1e-6)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        SGD(0.1).step({"theta": np.zeros(2)}, {"theta": np.zeros(3)})
    with pytest.raises(ShapeMismatch):
        Adam(0.1).step({"theta": np.zeros(2)}, {"other": np.zeros(2)})


def test_make_optimizer():
    assert isinstance(make_optimizer(TrainConfig()), Adam)
    sgd = make_optimizer(TrainConfig(optimizer="sgd", learning_rate=0.5))
    assert isinstance(sgd, SGD) and sgd.lr == 0.5

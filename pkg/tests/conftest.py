import numpy as np
import pytest

from pgtrain.params import ParameterVector


class FunctionModel:
    """Wraps a plain function of the flat parameters as a trainable model."""

    stateless = True

    def __init__(self, fn, theta0, grad=None):
        self.fn = fn
        self.grad = grad
        self._params = ParameterVector.from_tensors({"theta": np.asarray(theta0, dtype=float)})
        self.forward_calls = 0
        self.backward_calls = 0
        self.seen = []

    def parameters(self):
        return self._params

    def loss(self, values, x, y):
        self.forward_calls += 1
        self.seen.append(values.copy())
        return self.fn(values)

    def loss_and_grad(self, values, x, y):
        self.forward_calls += 1
        self.backward_calls += 1
        return self.fn(values), self.grad(values)


@pytest.fixture
def function_model():
    return FunctionModel

import numpy as np
import pytest

from pacmeta.net import Architecture, Task


class ScalarLinearModel:
    """One shared weight ``w``: prediction ``w * x`` for two-column inputs.

    Small enough for quadrature and closed-form oracles while exposing the
    same batched interface as :class:`pacmeta.net.Architecture`.
    """

    param_count = 1

    def predict_batch(self, thetas, X):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        return thetas[:, 0, None, None] * np.asarray(X, dtype=float)[None]

    def loss_of(self, w, X, Y):
        r = w * X - Y
        return float(np.mean(np.sum(r**2, axis=1)))

    def loss_grad_batch(self, thetas, X, Y):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        r = thetas[:, 0, None, None] * X[None] - Y[None]  # (B, m, 2)
        m = X.shape[0]
        losses = np.einsum("bmk,bmk->b", r, r) / m
        grads = 2.0 * np.einsum("bmk,mk->b", r, X)[:, None] / m
        return losses, grads


@pytest.fixture
def scalar_model():
    return ScalarLinearModel()


def linear_task(w, m, rng, noise=0.1, domain_id=0):
    X = rng.normal(size=(m, 2))
    Y = w * X + noise * rng.normal(size=(m, 2))
    return Task(X, Y, domain_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_arch():
    return Architecture(3, (4, 3))


def random_task(arch, m, rng, domain_id=0):
    return Task(rng.normal(size=(m, arch.input_dim)), rng.normal(size=(m, arch.output_dim)), domain_id)

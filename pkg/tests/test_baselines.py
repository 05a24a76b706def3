import numpy as np
import pytest

from conftest import ScalarLinearModel, linear_task, random_task
from pacmeta.baselines import MamlConfig, finetune_point, init_theta, knn_predict, maml_meta_train, maml_outer_grad
from pacmeta.errors import ConfigError, InputError
from pacmeta.net import Architecture, Task
from pacmeta.pipeline import TaskPool


def test_defaults():
    cfg = MamlConfig()
    assert (cfg.inner_lr, cfg.inner_steps, cfg.meta_lr) == (0.01, 5, 0.002)


def test_zero_meta_iterations_return_init(small_arch, rng):
    pool = TaskPool([random_task(small_arch, 30, rng)])
    theta = maml_meta_train(MamlConfig(meta_iters=0, seed=3), pool, small_arch)
    assert np.array_equal(theta, init_theta(small_arch, 3))


def test_no_inner_steps_collapses_to_multitask_gradient(small_arch, rng):
    tasks = [random_task(small_arch, 40, rng) for _ in range(4)]
    theta0 = rng.normal(size=small_arch.param_count)
    cfg = MamlConfig(inner_steps=0, support_size=25)
    expected = np.mean(
        [small_arch.loss_grad_batch(theta0[None], t.X[25:], t.Y[25:])[1][0] for t in tasks], axis=0
    )
    np.testing.assert_allclose(maml_outer_grad(small_arch, theta0, tasks, cfg), expected, rtol=1e-13, atol=1e-15)


def test_outer_gradient_uses_adapted_parameters(small_arch, rng):
    task = random_task(small_arch, 30, rng)
    theta0 = rng.normal(size=small_arch.param_count)
    cfg = MamlConfig(inner_steps=2, inner_lr=0.1, support_size=20)
    theta = theta0.copy()
    for _ in range(2):
        theta = theta - 0.1 * small_arch.loss_grad_batch(theta[None], task.X[:20], task.Y[:20])[1][0]
    expected = small_arch.loss_grad_batch(theta[None], task.X[20:], task.Y[20:])[1][0]
    np.testing.assert_allclose(maml_outer_grad(small_arch, theta0, [task], cfg), expected, rtol=1e-13)


def test_task_without_query_samples_rejected(small_arch, rng):
    with pytest.raises(InputError):
        maml_outer_grad(small_arch, np.zeros(small_arch.param_count), [random_task(small_arch, 25, rng)],
                        MamlConfig(support_size=25))


def test_maml_is_deterministic(small_arch, rng):
    pool = TaskPool([random_task(small_arch, 30, rng) for _ in range(5)])
    cfg = MamlConfig(meta_iters=10, n_tasks_per_iter=2)
    assert np.array_equal(maml_meta_train(cfg, pool, small_arch), maml_meta_train(cfg, pool, small_arch))


def test_invalid_config():
    with pytest.raises(ConfigError):
        MamlConfig(inner_lr=0.0)


def test_zero_fine_tune_steps_is_identity(small_arch, rng):
    theta = rng.normal(size=small_arch.param_count)
    assert np.array_equal(finetune_point(small_arch, theta, random_task(small_arch, 5, rng), 0, 0.1), theta)


def test_gradient_descent_matches_closed_form_recurrence():
    model = ScalarLinearModel()
    task = linear_task(0.6, 12, np.random.default_rng(0), noise=0.4)
    a = np.mean(np.sum(task.X**2, axis=1))
    b = np.mean(np.sum(task.X * task.Y, axis=1))
    w_star, w0, lr = b / a, np.array([-1.0]), 0.05
    iterates = []
    finetune_point(model, w0, task, 30, lr, callback=lambda s, w: iterates.append((s, w[0])), every=1)
    for t, w in iterates:
        assert w == pytest.approx(w_star + (1 - 2 * lr * a) ** t * (w0[0] - w_star), rel=1e-12, abs=1e-14)


def test_loss_non_increasing_below_safe_step():
    model = ScalarLinearModel()
    task = linear_task(-0.3, 15, np.random.default_rng(1), noise=0.5)
    a = np.mean(np.sum(task.X**2, axis=1))  # gradient Lipschitz constant is 2a
    losses = []
    finetune_point(model, np.array([2.0]), task, 50, 0.99 / a,
                   callback=lambda s, w: losses.append(model.loss_of(w[0], task.X, task.Y)), every=1)
    assert all(later <= earlier + 1e-15 for earlier, later in zip(losses, losses[1:]))


def test_knn_with_all_neighbours_is_centroid(rng):
    train = Task(rng.normal(size=(9, 4)), rng.normal(size=(9, 2)))
    np.testing.assert_allclose(knn_predict(train, rng.normal(size=4), 9), train.Y.mean(axis=0), rtol=1e-13)


def test_knn_exact_match_returns_its_label(rng):
    train = Task(rng.normal(size=(9, 4)), rng.normal(size=(9, 2)))
    assert np.array_equal(knn_predict(train, train.X[5], 1), train.Y[5])


def brute_force_knn(train, x, k):
    """Distances to every sample, nearest first, ties broken by sample index."""
    d = [sum((a - b) ** 2 for a, b in zip(train.X[i], x)) for i in range(len(train))]
    order = sorted(range(len(train)), key=lambda i: (d[i], i))[:k]
    return np.sum([train.Y[i] for i in order], axis=0) / k


def test_knn_matches_exhaustive_search():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n, k = int(rng.integers(3, 12)), int(rng.integers(1, 4))
        train = Task(rng.integers(-2, 3, size=(n, 3)).astype(float), rng.normal(size=(n, 2)))  # ties likely
        x = rng.integers(-2, 3, size=3).astype(float)
        assert np.array_equal(knn_predict(train, x, k), brute_force_knn(train, x, k))


def test_knn_batch_queries_equal_single_queries(rng):
    train = Task(rng.normal(size=(20, 3)), rng.normal(size=(20, 2)))
    Q = rng.normal(size=(6, 3))
    batch = knn_predict(train, Q, 3)
    for i in range(6):
        assert np.array_equal(batch[i], knn_predict(train, Q[i], 3))


def test_knn_rejects_bad_k(rng):
    train = Task(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
    with pytest.raises(InputError):
        knn_predict(train, np.zeros(2), 0)
    with pytest.raises(InputError):
        knn_predict(train, np.zeros(2), 4)


def test_init_theta_has_zero_biases():
    arch = Architecture(3, (4, 4))
    theta = init_theta(arch, 0)
    for fan_in, fan_out, start, w_end, b_end in arch.layout:
        assert np.all(theta[w_end:b_end] == 0) and np.any(theta[start:w_end] != 0)

import numpy as np
import pytest
from scipy import optimize

from conftest import ScalarLinearModel, linear_task
from pacmeta.errors import InputError, NumericError
from pacmeta.pacoh import TemperatureConfig, log_hyperposterior, particle_scores
from pacmeta.prob import HyperPrior, PriorParticle
from pacmeta.svgd import ParticleSet, median_bandwidth, rbf_kernel, svgd_direction, svgd_step


def test_single_particle_kernel():
    k, grad = rbf_kernel(np.array([[0.3, -1.0]]))
    assert k.tolist() == [[1.0]]
    assert np.all(grad == 0)


def test_kernel_at_bandwidth_distance():
    d = 1.7
    k, _ = rbf_kernel(np.array([[0.0, 0.0], [d, 0.0]]), h2=d**2)
    assert k[0, 1] == pytest.approx(np.exp(-0.5), rel=1e-15)


def test_kernel_symmetric_with_unit_diagonal():
    rng = np.random.default_rng(0)
    for K in (2, 3, 7):
        k, _ = rbf_kernel(rng.normal(size=(K, 5)))
        assert np.array_equal(k, k.T)
        assert np.all(np.diag(k) == 1.0)


def test_kernel_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    phis = rng.normal(size=(3, 4))
    h2 = 0.8
    _, grad = rbf_kernel(phis, h2)
    h = 1e-6
    for i in range(3):
        for j in range(3):
            for d in range(4):
                up, dn = phis.copy(), phis.copy()
                up[i, d] += h
                dn[i, d] -= h
                k_up = np.exp(-np.sum((up[i] - phis[j] if i != j else 0) ** 2) / (2 * h2))
                k_dn = np.exp(-np.sum((dn[i] - phis[j] if i != j else 0) ** 2) / (2 * h2))
                assert grad[i, j, d] == pytest.approx((k_up - k_dn) / (2 * h), abs=1e-8)


def test_median_bandwidth_heuristic():
    phis = np.array([[0.0], [1.0], [3.0]])
    # squared distances 1, 9, 4 -> median 4
    assert median_bandwidth(phis) == pytest.approx(4.0 / (2 * np.log(4)))
    assert median_bandwidth(np.zeros((3, 2))) == 1e-8
    assert median_bandwidth(np.zeros((1, 2))) == 1e-8


def _set(rows):
    return ParticleSet.from_matrix(np.asarray(rows, dtype=float))


def test_single_particle_step_is_gradient_ascent():
    rng = np.random.default_rng(2)
    phi = rng.normal(size=(1, 6))
    score = rng.normal(size=(1, 6))
    out = svgd_step(_set(phi), score, 0.01)
    np.testing.assert_array_equal(out.matrix, phi + 0.01 * score)
    assert out.step_count == 1


def test_coincident_particles_stay_coincident():
    rng = np.random.default_rng(3)
    row = rng.normal(size=4)
    score = rng.normal(size=4)
    out = svgd_step(_set([row, row]), np.array([score, score]), 0.05)
    assert np.array_equal(out.matrix[0], out.matrix[1])


def test_symmetric_pair_repels_equally():
    a = np.array([0.4, -0.2, 1.0, 0.3])
    out = svgd_step(_set([a, -a]), np.zeros((2, 4)), 1e-3)
    d0, d1 = out.matrix[0] - a, out.matrix[1] + a
    np.testing.assert_allclose(d0, -d1, rtol=1e-14, atol=1e-18)
    assert np.dot(d0, a) > 0  # pushed outward


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    phis, scores = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    perm = rng.permutation(5)
    a = svgd_direction(phis, scores)
    b = svgd_direction(phis[perm], scores[perm])
    np.testing.assert_allclose(b, a[perm], rtol=1e-12, atol=1e-15)


def test_zero_score_step_does_not_shrink_distances():
    rng = np.random.default_rng(5)
    for _ in range(50):
        phis = rng.normal(size=(2, 4))
        out = svgd_step(_set(phis), np.zeros_like(phis), 1e-3).matrix
        assert np.linalg.norm(out[0] - out[1]) >= np.linalg.norm(phis[0] - phis[1])


def test_direction_is_kernel_weighted_average():
    rng = np.random.default_rng(6)
    phis, scores = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    h2 = median_bandwidth(phis)
    expected = np.zeros_like(phis)
    for k in range(4):
        for j in range(4):
            kjk = np.exp(-np.sum((phis[j] - phis[k]) ** 2) / (2 * h2))
            expected[k] += kjk * scores[j] - (phis[j] - phis[k]) / h2 * kjk
    np.testing.assert_allclose(svgd_direction(phis, scores), expected / 4, rtol=1e-12)


def test_single_particle_converges_to_mode_of_frozen_objective():
    model = ScalarLinearModel()
    task = linear_task(0.8, 20, np.random.default_rng(7), noise=0.3)
    cfg = TemperatureConfig(lam=20.0, beta=4.0, mc_samples=3)
    hyper = HyperPrior(0.5)

    def objective(v):
        value, grad = log_hyperposterior(model, PriorParticle.from_vector(v), [task], cfg, hyper,
                                         np.random.default_rng(0))
        return -value, -grad

    mode = optimize.minimize(objective, np.zeros(2), jac=True, method="BFGS", options={"gtol": 1e-12}).x
    pset = _set([[0.0, 0.0]])
    for _ in range(4000):
        scores = particle_scores(model, pset.particles, [task], cfg, hyper, np.random.default_rng(0))
        pset = svgd_step(pset, scores, 0.02)
    assert np.max(np.abs(pset.matrix[0] - mode)) < 1e-3


def test_step_validation():
    pset = _set([[0.0, 1.0]])
    with pytest.raises(InputError):
        svgd_step(pset, np.zeros((1, 2)), 0.0)
    with pytest.raises(InputError):
        svgd_step(pset, np.zeros((2, 2)), 0.1)


def test_non_finite_update_names_particle():
    pset = _set([[0.0, 1.0], [5.0, 5.0]])
    with pytest.raises(NumericError, match="particle"):
        svgd_step(pset, np.array([[0.0, 0.0], [np.inf, 0.0]]), 0.1)


def test_particle_set_requires_equal_lengths():
    with pytest.raises(InputError):
        ParticleSet((PriorParticle(np.zeros(1), np.zeros(1)), PriorParticle(np.zeros(2), np.zeros(2))))

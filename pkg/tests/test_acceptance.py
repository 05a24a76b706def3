"""Acceptance checks.  Each test prints one PASS/FAIL line for its criterion.

The comparison runs (criteria 5-7) are shared and take roughly half an
hour on one CPU core.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import ScalarLinearModel, linear_task, random_task
from helpers import central_diff, max_rel_err
from pacmeta import envsim
from pacmeta.baselines import knn_predict
from pacmeta.experiment import ExperimentConfig, run_experiment, synthetic_meta_config
from pacmeta.io import load_checkpoint, save_checkpoint
from pacmeta.net import Architecture, Task, loss, loss_grad
from pacmeta.pacoh import TemperatureConfig, log_z_tilde
from pacmeta.pipeline import MetaConfig, evaluate, init_particles, prediction_table
from pacmeta.prob import PriorParticle, gaussian_kl
from pacmeta.svgd import ParticleSet, svgd_step

N_SEEDS = 10
BUDGET_SEEDS = 5


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


def test_criterion_1_gradients_match_finite_differences(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    net_worst = z_worst = 0.0
    for _ in range(60):
        arch = Architecture(int(rng.integers(1, 5)), tuple(int(v) for v in rng.integers(1, 5, size=4)))
        theta = rng.normal(size=arch.param_count)
        task = random_task(arch, int(rng.integers(1, 8)), rng)
        _, g = loss_grad(arch, theta, task)
        net_worst = max(net_worst, max_rel_err(g, central_diff(lambda t: loss(arch, t, task), theta)))
    for _ in range(60):
        arch = Architecture(int(rng.integers(1, 4)), tuple(int(v) for v in rng.integers(1, 4, size=2)))
        P = arch.param_count
        phi = PriorParticle(rng.normal(size=P) * 0.3, rng.normal(size=P) * 0.3 - 1.0)
        task = random_task(arch, int(rng.integers(2, 6)), rng)
        cfg = TemperatureConfig(lam=5.0, beta=float(rng.uniform(0.5, 3)), mc_samples=int(rng.integers(1, 6)))
        eps = rng.standard_normal((cfg.mc_samples, P))
        _, g = log_z_tilde(arch, phi, task, cfg, eps=eps)
        fd = central_diff(lambda v: log_z_tilde(arch, PriorParticle.from_vector(v), task, cfg, eps=eps)[0],
                          phi.vector)
        z_worst = max(z_worst, max_rel_err(g, fd))
    elapsed = time.perf_counter() - t0
    ok = net_worst < 1e-4 and z_worst < 1e-4 and elapsed < 60
    report(1, ok, f"max rel err loss {net_worst:.2e}, ln Z {z_worst:.2e} over 60+60 instances; {elapsed:.1f} s")


def test_criterion_2_oracle_equivalence(report):
    t0 = time.perf_counter()
    model = ScalarLinearModel()
    rng = np.random.default_rng(202)
    task = linear_task(0.7, 10, rng, noise=0.5)
    mu, sigma, beta, L = 0.2, 0.6, 2.0, 10_000
    eps = rng.standard_normal((L, 1))
    phi = PriorParticle(np.array([mu]), np.array([np.log(sigma)]))
    value, _ = log_z_tilde(model, phi, task, TemperatureConfig(1.0, beta, L), eps=eps)
    a = np.array([-beta * model.loss_of(mu + sigma * e, task.X, task.Y) for e in eps[:, 0]])
    w = np.exp(a - a.max())
    se = w.std() / (np.sqrt(L) * w.mean())
    prior = stats.norm(mu, sigma)
    z, _ = integrate.quad(lambda t: np.exp(prior.logpdf(t) - beta * model.loss_of(t, task.X, task.Y)),
                          mu - 12 * sigma, mu + 12 * sigma, epsabs=0, epsrel=1e-11, limit=400)
    z_gap = abs(value - np.log(z)) / se

    kl_worst = 0.0
    for _ in range(25):
        mq, mp = rng.normal(size=2)
        sq, sp = np.exp(rng.uniform(-1, 1, size=2))
        q, p = stats.norm(mq, sq), stats.norm(mp, sp)
        numeric, _ = integrate.quad(lambda x: q.pdf(x) * (q.logpdf(x) - p.logpdf(x)), mq - 40 * sq, mq + 40 * sq,
                                    epsabs=1e-12, epsrel=1e-12, limit=500, points=[mq])
        closed = gaussian_kl(PriorParticle(np.array([mq]), np.array([np.log(sq)])),
                             PriorParticle(np.array([mp]), np.array([np.log(sp)])))
        kl_worst = max(kl_worst, abs(closed - numeric))

    knn_mismatch = 0
    for _ in range(200):
        n, k = int(rng.integers(3, 30)), int(rng.integers(1, 4))
        train = Task(rng.integers(-2, 3, size=(n, 3)).astype(float), rng.normal(size=(n, 2)))
        x = rng.integers(-2, 3, size=3).astype(float)
        d = [float(np.sum((train.X[i] - x) ** 2)) for i in range(n)]
        order = sorted(range(n), key=lambda i: (d[i], i))[:k]
        knn_mismatch += not np.array_equal(knn_predict(train, x, k), np.sum(train.Y[order], axis=0) / k)
    elapsed = time.perf_counter() - t0
    ok = z_gap < 3 and kl_worst < 1e-6 and knn_mismatch == 0 and elapsed < 60
    report(2, ok, f"ln Z gap {z_gap:.2f} SE; KL max abs err {kl_worst:.1e}; KNN mismatches {knn_mismatch}/200; "
                  f"{elapsed:.1f} s")


def test_criterion_3_svgd_degenerate_cases(report):
    rng = np.random.default_rng(303)
    phi, score = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    single = svgd_step(ParticleSet.from_matrix(phi), score, 0.002).matrix
    single_ok = np.array_equal(single, phi + 0.002 * score)

    row, s = rng.normal(size=8), rng.normal(size=8)
    pair = svgd_step(ParticleSet.from_matrix([row, row]), np.array([s, s]), 0.01).matrix
    coincident_ok = np.array_equal(pair[0], pair[1])

    a = rng.normal(size=8)
    sym = svgd_step(ParticleSet.from_matrix([a, -a]), np.zeros((2, 8)), 0.01).matrix
    d0, d1 = sym[0] - a, sym[1] + a
    symmetric_ok = np.allclose(d0, -d1, rtol=0, atol=1e-17) and np.any(d0 != 0)
    report(3, single_ok and coincident_ok and symmetric_ok,
           f"K=1 exact {single_ok}; coincident stay coincident {coincident_ok}; symmetric pair opposite {symmetric_ok}")


def _brute_force_errors(preds, Y):
    K, N, m, _ = preds.shape
    out = np.empty(m)
    for j in range(m):
        total = 0.0
        for k in range(K):
            inner = 0.0
            for n in range(N):
                inner += np.sqrt((preds[k, n, j, 0] - Y[j, 0]) ** 2 + (preds[k, n, j, 1] - Y[j, 1]) ** 2)
            total += inner / N
        out[j] = total / K
    return out


def test_criterion_4_error_average_contract(report):
    suite = envsim.make_suite(5)
    arch = Architecture(suite.feature_dim, (16, 16))
    rng = np.random.default_rng(404)
    mismatches, runs = 0, 0
    for K in range(1, 6):
        for N in range(1, 11):
            pset = init_particles(arch, MetaConfig(K=K, seed=K * 11 + N))
            task = suite.sample_task(int(rng.integers(5)), 12, rng)
            rep = evaluate(arch, pset, task, N, seed=N)
            expected = _brute_force_errors(prediction_table(arch, pset, task.X, N, N), task.Y)
            mismatches += not (np.array_equal(rep.per_point_error, expected) and rep.mean_error == np.mean(expected))
            runs += 1
    report(4, mismatches == 0, f"{runs - mismatches}/{runs} (K<=5, N<=10) runs equal the brute-force table exactly")


# ---------------------------------------------------------------- comparisons

def _suite(seed):
    return envsim.make_suite(5, seeds=range(10 * seed, 10 * seed + 5))


def _margin(curve):
    errors = [e for _, e in curve]
    return errors[-1] / min(errors) - 1.0


@pytest.fixture(scope="module")
def comparison_runs():
    t0 = time.perf_counter()
    runs = {}
    for seed in range(N_SEEDS):
        rot = seed % 5
        exp = ExperimentConfig(methods=("boml", "randinit", "maml"), rotations=(rot,))
        result = run_experiment(synthetic_meta_config(seed=seed), _suite(seed), None, exp)
        runs[seed] = {m: result.curve(m, rot) for m in exp.methods}
    return runs, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_meta_learning_benefit(report, comparison_runs):
    runs, elapsed = comparison_runs
    boml = [r["boml"][-1][1] for r in runs.values()]
    rand = [r["randinit"][-1][1] for r in runs.values()]
    med_b, med_r = float(np.median(boml)), float(np.median(rand))
    gain = 1 - med_b / med_r
    ok = gain >= 0.15 and elapsed < 30 * 60
    report(5, ok, f"median error BOML {med_b:.3f} m vs random-init {med_r:.3f} m ({gain:.1%} lower) over "
                  f"{N_SEEDS} seeds; {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_6_overfitting_mitigation(report, comparison_runs):
    runs, _ = comparison_runs
    wins = []
    for seed, r in runs.items():
        mb, mm = _margin(r["boml"]), _margin(r["maml"])
        wins.append(mb < 0.10 and mm > mb)
    detail = "; ".join(f"s{s}: {_margin(r['boml']):.1%}/{_margin(r['maml']):.1%}" for s, r in runs.items())
    report(6, sum(wins) >= 7, f"{sum(wins)}/{N_SEEDS} seeds satisfy it (BOML/MAML final-over-min): {detail}")


@pytest.mark.slow
def test_criterion_7_more_tasks_do_not_hurt(report, comparison_runs):
    runs, _ = comparison_runs
    small, large = [], []
    for seed in range(BUDGET_SEEDS):
        rot = seed % 5
        exp = ExperimentConfig(n_train_tasks=1000, methods=("boml",), rotations=(rot,))
        result = run_experiment(synthetic_meta_config(seed=seed), _suite(seed), None, exp)
        large.append(result.final_error("boml", rot))
        small.append(runs[seed]["boml"][-1][1])
    med_s, med_l = float(np.median(small)), float(np.median(large))
    report(7, med_l <= med_s, f"median BOML error {med_l:.3f} m at 1000 tasks vs {med_s:.3f} m at 100 tasks "
                              f"over {BUDGET_SEEDS} seeds")


def test_criterion_8_determinism_and_persistence(report, tmp_path):
    suite = envsim.make_suite(3)
    cfg = MetaConfig(K=3, L=2, max_iters=12, eval_every=6, finetune_steps=20, n_networks=4, seed=8)
    exp = ExperimentConfig(n_train_tasks=10, hidden_dims=(8, 8), methods=("boml", "randinit", "maml", "knn"),
                           rotations=(0, 2), maml=replace(ExperimentConfig().maml, meta_iters=10))
    run_experiment(cfg, suite, tmp_path / "a", exp)
    run_experiment(cfg, suite, tmp_path / "b", exp)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    identical = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)

    ckpt = load_checkpoint(tmp_path / "a" / "rotation2_finetuned.json")
    save_checkpoint(tmp_path / "again.json", ckpt)
    again = load_checkpoint(tmp_path / "again.json")
    test = suite.sample_task(2, 50, np.random.default_rng(0))
    r1 = evaluate(ckpt.arch, ckpt.particles, test, 10, 1)
    r2 = evaluate(again.arch, again.particles, test, 10, 1)
    preserved = (again == ckpt and np.array_equal(r1.per_point_error, r2.per_point_error)
                 and np.array_equal(r1.per_point_uncertainty, r2.per_point_uncertainty))
    report(8, identical and preserved, f"{len(files)} artifacts byte-identical: {identical}; "
                                       f"round trip preserves evaluation: {preserved}")


def test_criterion_9_uncertainty_sanity(report):
    suite = envsim.make_suite(5)
    arch = Architecture(suite.feature_dim)
    test = suite.sample_task(0, 50, np.random.default_rng(9))
    mu = init_particles(arch, MetaConfig(K=1, seed=9))[0].mu

    def ensemble(log_sigma, K=5):
        # one shared mean: with zero variance every sampled network is the same
        return ParticleSet(tuple(PriorParticle(mu, np.full(len(mu), log_sigma)) for _ in range(K)))

    zero = [evaluate(arch, ensemble(-np.inf, K), test, 10, 0).mean_uncertainty for K in (1, 5)]
    clamped = evaluate(arch, ensemble(-800.0), test, 10, 0).mean_uncertainty
    sigmas = np.linspace(-5.0, 1.0, 13)
    curve = [evaluate(arch, ensemble(s), test, 10, 0).mean_uncertainty for s in sigmas]
    increasing = all(b > a for a, b in zip(curve, curve[1:]))
    ok = zero == [0.0, 0.0] and clamped == 0.0 and increasing
    report(9, ok, f"zero-variance uncertainty K=1/K=5 {zero} (log sigma -800: {clamped}); strictly increasing over "
                  f"log sigma {sigmas[0]}..{sigmas[-1]}: {increasing} ({curve[0]:.3g} -> {curve[-1]:.3g} m)")

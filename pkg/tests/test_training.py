import math

import numpy as np
import pytest

from conftest import random_bits, random_circuit
from iqpgen.bits import BitMatrix
from iqpgen.circuit import GateSet, ModelKind, all_k_local, two_local
from iqpgen.cli import gradcheck
from iqpgen.datasets import BlobSpec, gen_blobs
from iqpgen.exact import exact_probabilities
from iqpgen.mmd import (
    ObservableDistribution,
    mmd2_exact_kernel,
    mmd2_unbiased,
    sample_observables,
    uniform_bitstrings,
)
from iqpgen.rng import derive_seed
from iqpgen.training import (
    InitConfig,
    OptimizerState,
    StopReason,
    TrainConfig,
    adam_step,
    gradient_magnitude_histogram,
    init_params_datadep,
    init_params_uniform,
    loss_and_grad,
    train,
    windowed_mean,
)


def test_init_examples():
    g = GateSet(2, [(0,), (1,), (0, 1)])
    data = BitMatrix.from_strings(["10", "00", "00", "00"])
    p = init_params_datadep(g, data)
    assert p[0] == pytest.approx(math.pi / 6)
    assert p[1] == pytest.approx(math.asin(math.sqrt(1e-6)))
    corr = BitMatrix.from_strings(["11", "00", "11", "00"])
    p = init_params_datadep(g, corr, InitConfig(scale_two_qubit=0.1))
    assert p[2] == pytest.approx(0.1)


def test_init_other_gates_and_determinism():
    g = all_k_local(4, 3)
    data = random_bits(np.random.default_rng(0), 30, 4)
    zero = init_params_datadep(g, data, InitConfig(scale_other=0.0), seed=1)
    assert np.all(zero[g.weights == 3] == 0)
    noisy = init_params_datadep(g, data, InitConfig(scale_other=0.5), seed=1)
    assert np.array_equal(noisy, init_params_datadep(g, data, InitConfig(scale_other=0.5), seed=1))
    assert np.std(noisy[g.weights == 3]) > 0
    with pytest.raises(ValueError):
        init_params_datadep(g, BitMatrix.zeros(3, 5))
    with pytest.raises(ValueError):
        InitConfig(scale_two_qubit=-1)
    u = init_params_uniform(g, 2)
    assert np.all((u >= 0) & (u < 2 * math.pi))


def test_loss_identical_to_estimator():
    rng = np.random.default_rng(1)
    g, p = random_circuit(rng, 6, 15)
    X, A, Z = random_bits(rng, 30, 6), random_bits(rng, 20, 6, 0.2), uniform_bitstrings(6, 40, 0)
    for kind in ModelKind:
        loss, _ = loss_and_grad(g, p, X, A, Z, kind)
        assert loss == mmd2_unbiased(g, p, X, A, Z, kind).value


def test_zero_point_gradient():
    g = two_local(4)
    X = BitMatrix.zeros(5, 4)
    rng = np.random.default_rng(2)
    loss, grad = loss_and_grad(g, np.zeros(len(g)), X, random_bits(rng, 8, 4), uniform_bitstrings(4, 8, 0))
    assert loss == 0.0 and np.all(grad == 0.0)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_gradient_vs_finite_differences(kind):
    rng = np.random.default_rng(3)
    g, p = random_circuit(rng, 6, 18, max_weight=3)
    X, A, Z = random_bits(rng, 40, 6), random_bits(rng, 25, 6, 0.25), uniform_bitstrings(6, 30, 1)
    assert gradcheck(g, p, X, A, Z, kind) <= 1e-4
    assert gradcheck(g, p, X, A, Z, kind, fault=True) > 1e-4


def test_bitflip_gradient_at_zero_factor():
    g = GateSet(2, [(0,), (1,), (0, 1)])
    p = np.array([math.pi / 4, 0.3, 0.7])
    rng = np.random.default_rng(4)
    X, A = random_bits(rng, 10, 2), BitMatrix.from_strings(["10", "11", "01"])
    _, grad = loss_and_grad(g, p, X, A, None, ModelKind.BITFLIP)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (loss_and_grad(g, p + e, X, A, None, "bitflip")[0] - loss_and_grad(g, p - e, X, A, None, "bitflip")[0]) / (2 * h)
        assert grad[j] == pytest.approx(fd, abs=1e-8)


def test_expected_gradient_matches_exact_loss_derivative():
    rng = np.random.default_rng(5)
    n, s = 4, 0.9
    g, p = random_circuit(rng, n, 6)
    data_p = rng.dirichlet(np.ones(2**n))
    d = ObservableDistribution.from_sigma(n, s)

    def exact_loss(theta):
        return mmd2_exact_kernel(data_p, exact_probabilities(g, theta), s)

    grads = []
    for r in range(300):
        X = BitMatrix.from_indices(rng.choice(2**n, 20, p=data_p), n)
        grads.append(loss_and_grad(g, p, X, sample_observables(d, 20, r), uniform_bitstrings(n, 20, 500 + r))[1])
    grads = np.array(grads)
    h = 1e-5
    fd = np.array([(exact_loss(p + h * e) - exact_loss(p - h * e)) / (2 * h) for e in np.eye(len(p))])
    pooled = grads.std(axis=0, ddof=1) / math.sqrt(len(grads))
    assert np.all(np.abs(grads.mean(axis=0) - fd) <= 5 * pooled + 1e-9)


def test_adam_examples():
    st = OptimizerState.zeros(1)
    st2, p = adam_step(st, np.array([0.5]), np.array([1.0]), 0.1)
    assert p[0] == pytest.approx(0.5 - 0.1 / (1 + 1e-8))
    assert st2.step == 1
    st3, q = adam_step(st, np.array([0.5]), np.array([1.0]), 0.1)
    assert np.array_equal(p, q) and np.array_equal(st3.second_moment, st2.second_moment)
    _, same = adam_step(OptimizerState.zeros(3), np.ones(3), np.zeros(3), 0.1)
    assert np.array_equal(same, np.ones(3))
    with pytest.raises(ValueError):
        adam_step(OptimizerState.zeros(2), np.ones(3), np.ones(3), 0.1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(max_steps=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_z=1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=float("nan"))
    with pytest.raises(ValueError):
        TrainConfig(schedule=())


def test_windowed_mean():
    w = windowed_mean([1, 2, 3, 4], 2)
    assert np.allclose(w, [1, 1.5, 2.5, 3.5])


def test_train_zero_steps_returns_init():
    g = two_local(4)
    data = random_bits(np.random.default_rng(6), 20, 4)
    rep = train(g, data, train_cfg=TrainConfig(max_steps=0))
    assert rep.loss_history == []
    assert np.array_equal(rep.final_params, init_params_datadep(g, data, seed=derive_seed(0, "init")))


def test_train_deterministic_and_decreasing():
    spec = BlobSpec()
    data = gen_blobs(spec, 600, 0)
    g = two_local(16)
    cfg = TrainConfig(max_steps=120, learning_rate=0.05, batch_a=200, batch_z=200,
                      schedule=(1.318, 0.6), convergence_rel_tol=0.0, seed=9)
    a = train(g, data, train_cfg=cfg)
    b = train(g, data, train_cfg=cfg)
    assert a.loss_history == b.loss_history and np.array_equal(a.final_params, b.final_params)
    assert a.stop_reason is StopReason.MAX_STEPS
    w = windowed_mean(a.losses(), 40)
    assert w[-1] < w[39]


def test_train_convergence_stop():
    g = two_local(3)
    data = BitMatrix.zeros(10, 3)
    cfg = TrainConfig(max_steps=500, learning_rate=0.0, batch_a=10, batch_z=10, convergence_window=5,
                      convergence_rel_tol=1e-3)
    rep = train(g, data, train_cfg=cfg, init_params=np.zeros(len(g)))
    assert rep.stop_reason is StopReason.CONVERGED and len(rep.loss_history) == 10


def test_train_minibatch_and_callback():
    g = two_local(5)
    data = random_bits(np.random.default_rng(7), 50, 5)
    seen = []
    cfg = TrainConfig(max_steps=5, batch_a=20, batch_z=20, minibatch=10)
    train(g, data, train_cfg=cfg, callback=lambda s, l, p: seen.append(s))
    assert seen == [0, 1, 2, 3, 4]


def test_gradient_histogram():
    g = two_local(4)
    X = BitMatrix.zeros(5, 4)
    counts, edges, mags = gradient_magnitude_histogram(g, np.zeros(len(g)), X, [1.0], (20, 20))
    assert counts.tolist() == [len(g)] and np.all(mags == 0)


def test_bitflip_expectation_concentrates():
    rng = np.random.default_rng(8)
    n = 64
    g = two_local(n)
    m = (g.incidence[:, 0].toarray().ravel() > 0)
    meds = []
    for _ in range(100):
        theta = rng.uniform(0, 2 * math.pi, len(g))
        meds.append(abs(np.prod(np.cos(2 * theta[m]))))
    # E|cos U| = 2 / pi for uniform angles
    assert np.median(meds) < (2 / math.pi) ** 63


def test_datadep_heavier_gradient_tail():
    data = gen_blobs(BlobSpec(), 2000, 11)
    g = two_local(16)
    sched = [1.318, 0.6]
    _, _, dd = gradient_magnitude_histogram(g, init_params_datadep(g, data), data, sched, (500, 500), seed=1)
    _, _, uu = gradient_magnitude_histogram(g, init_params_uniform(g, 3), data, sched, (500, 500), seed=1)
    assert np.percentile(dd, 99) > np.percentile(uu, 99)

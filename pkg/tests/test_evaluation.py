import math

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import random_bits, random_circuit
from iqpgen import evaluation
from iqpgen.bits import BitMatrix
from iqpgen.circuit import GateSet, ModelKind, two_local
from iqpgen.evaluation import (
    KgelProblem,
    bin_weights,
    covariance_from_samples,
    covariance_matrix,
    cumulative_weights,
    kernel_columns,
    kgel_rhs,
    kgel_solve,
    log_likelihood,
    test_mmd_samples as mmd_against_samples,
    uniform_baseline,
)
from iqpgen.exact import exact_probabilities, sample_exact
from iqpgen.mmd import mmd2_exact_kernel


def test_point_mass_model_scores_zero():
    g = two_local(4)
    test = BitMatrix.zeros(30, 4)
    for kind in (ModelKind.IQP, ModelKind.BITFLIP):
        rows = evaluation.test_mmd(g, np.zeros(len(g)), kind, test, [1.0, 0.5], repetitions=3,
                                   batch_sizes=(20, 20))
        assert all(r.mean == 0.0 and r.std == 0.0 for r in rows)


def test_test_mmd_unbiased_against_enumeration():
    rng = np.random.default_rng(0)
    n, s = 6, 1.2
    g, p = random_circuit(rng, n, 10)
    test = random_bits(rng, 40, n, 0.4)
    emp = np.bincount(test.to_indices().astype(np.int64), minlength=2**n) / len(test)
    truth = mmd2_exact_kernel(emp, exact_probabilities(g, p), s)
    # the data-data term is unbiased for the population the test rows were drawn from, so compare
    # against the enumerated MMD^2 with the biased self-pair correction removed
    rows = evaluation.test_mmd(g, p, "iqp", test, [s], repetitions=300, batch_sizes=(60, 60), seed=1)
    K = kernel_columns(test, test, s)
    m = len(test)
    correction = (K.sum() - np.trace(K)) / (m * (m - 1)) - K.sum() / m**2
    pooled = rows[0].std / math.sqrt(300)
    assert abs(rows[0].mean - (truth + correction)) <= 5 * pooled


def test_test_mmd_own_samples_near_zero():
    rng = np.random.default_rng(1)
    g, p = random_circuit(rng, 6, 9)
    test = sample_exact(g, p, "iqp", 2000, 2)
    rows = evaluation.test_mmd(g, p, "iqp", test, [1.0, 0.6], repetitions=10, batch_sizes=(300, 300), seed=3)
    for r in rows:
        assert abs(r.mean) <= 5 * r.std / math.sqrt(10)


def test_bitflip_test_mmd_and_baseline():
    rng = np.random.default_rng(2)
    g, p = random_circuit(rng, 6, 9)
    test = random_bits(rng, 200, 6, 0.1)
    rows = evaluation.test_mmd(g, p, "bitflip", test, [1.0], repetitions=4, seed=1)
    again = evaluation.test_mmd(g, p, "bitflip", test, [1.0], repetitions=4, seed=1)
    assert rows == again
    base = uniform_baseline(test, [1.0, 0.5], repetitions=4)
    assert all(b.mean > 0 for b in base)
    with pytest.raises(ValueError):
        mmd_against_samples(test[:5], test, [1.0], repetitions=4)
    with pytest.raises(ValueError):
        evaluation.test_mmd(g, p, "iqp", test, [1.0], repetitions=1)


def test_kgel_rhs_examples():
    g = two_local(5)
    zero = np.zeros(len(g))
    wit = BitMatrix.from_strings(["00000", "11000", "11111"])
    want = np.exp(-np.array([0, 2, 5]) / (2 * 0.64))
    r = kgel_rhs(g, zero, "iqp", wit, 0.8, exact=True)
    assert np.allclose(r.values, want, atol=1e-12)
    # the estimate averages over random observables, so it is only right within its error bars
    r = kgel_rhs(g, zero, "iqp", wit, 0.8, (4000, 50), seed=1)
    assert r.values[0] == 1.0 and np.all(np.abs(r.values - want) <= 4 * r.std_errors + 1e-12)


def test_kgel_rhs_estimate_vs_exact():
    rng = np.random.default_rng(3)
    g, p = random_circuit(rng, 6, 10)
    wit = random_bits(rng, 4, 6)
    est = kgel_rhs(g, p, "iqp", wit, 1.0, (3000, 500), seed=4)
    ref = kgel_rhs(g, p, "iqp", wit, 1.0, exact=True)
    assert np.all(np.abs(est.values - ref.values) <= 4 * est.std_errors)


def test_kgel_self_consistent_and_redundant():
    rng = np.random.default_rng(4)
    test = random_bits(rng, 25, 6)
    wit = test[[1, 4]]
    K = kernel_columns(test, wit, 1.0)
    sol = kgel_solve(KgelProblem(test, wit, 1.0, K.mean(axis=0)))
    assert sol.success and sol.kl_value < 1e-9 and np.allclose(sol.pi, 1 / 25)
    # W = 1 with a constant kernel column
    same = BitMatrix.from_strings(["0110"] * 5)
    sol = kgel_solve(KgelProblem(same, same[[0]], 1.0, [1.0]))
    assert sol.success and sol.kl_value < 1e-9


def test_kgel_two_mode_preference():
    modes = BitMatrix.from_strings(["000000"] * 6 + ["111111"] * 6)
    wit = BitMatrix.from_strings(["000000"])
    g = GateSet(6, [(i,) for i in range(6)])
    rhs = kgel_rhs(g, np.zeros(6), "iqp", wit, 1.0, exact=True).values
    sol = kgel_solve(KgelProblem(modes, wit, 1.0, rhs))
    assert sol.success
    assert sol.pi[:6].sum() > 0.5
    # primal check on the simplex
    K = kernel_columns(modes, wit, 1.0)
    cons = [{"type": "eq", "fun": lambda w: w.sum() - 1}, {"type": "eq", "fun": lambda w: w @ K - rhs}]
    res = minimize(lambda w: np.sum(w * np.log(np.maximum(12 * w, 1e-300))), np.full(12, 1 / 12),
                   bounds=[(0, 1)] * 12, constraints=cons, method="SLSQP", options={"ftol": 1e-14})
    assert sol.kl_value == pytest.approx(res.fun, abs=1e-4)


def test_kgel_permutation_invariance():
    rng = np.random.default_rng(5)
    test = random_bits(rng, 20, 5)
    wit = test[[0, 3]]
    rhs = 0.9 * kernel_columns(test, wit, 1.0).mean(axis=0) + 0.1 * kernel_columns(test[[7]], wit, 1.0)[0]
    perm = rng.permutation(20)
    a = kgel_solve(KgelProblem(test, wit, 1.0, rhs))
    b = kgel_solve(KgelProblem(test[perm], wit, 1.0, rhs))
    assert np.allclose(a.pi[perm], b.pi, atol=1e-8)


def test_kgel_infeasible_reported():
    test = BitMatrix.from_strings(["0000", "0011", "1111"])
    sol = kgel_solve(KgelProblem(test, test[[0]], 1.0, [1.2]))
    assert not sol.success and sol.residual > 0.1
    assert np.all(sol.pi >= 0) and sol.pi.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        KgelProblem(test, test[[0]], 1.0, [0.5, 0.5])


def test_binning_folds():
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    labels = np.array([1, 0, 1, 0])
    assert bin_weights(pi, labels) == pytest.approx({0: 0.6, 1: 0.4})
    order, cum = cumulative_weights(pi, labels)
    assert order.tolist() == [1, 3, 0, 2] and cum[-1] == pytest.approx(1.0)


def test_covariance_examples():
    g = two_local(4)
    assert np.all(covariance_matrix(g, np.zeros(len(g)), "iqp", 50).matrix == 0)
    singles = GateSet(4, [(i,) for i in range(4)])
    theta = np.array([0.2, 0.5, 0.9, 1.3])
    for kind, exact in (("iqp", False), ("iqp", True), ("bitflip", False)):
        c = covariance_matrix(singles, theta, kind, 2000, seed=1, exact=exact)
        assert np.allclose(np.diag(c.matrix), np.sin(2 * theta) ** 2, atol=1e-12)
        off = c.matrix - np.diag(np.diag(c.matrix))
        assert np.all(np.abs(off) <= 4 * c.std_errors + 1e-12)
        assert np.array_equal(c.matrix, c.matrix.T)


def test_covariance_matches_samples():
    rng = np.random.default_rng(6)
    g, p = random_circuit(rng, 6, 10)
    model = covariance_matrix(g, p, "iqp", exact=True)
    samp = covariance_from_samples(sample_exact(g, p, "iqp", 1_000_000, 7))
    assert np.all(np.abs(model.matrix - samp.matrix) <= 4 * samp.std_errors + 1e-12)
    est = covariance_matrix(g, p, "iqp", 5000, seed=2)
    eps = 4 * est.std_errors
    assert np.all(est.matrix <= 1 + eps) and np.all(est.matrix >= -1 - eps)


def test_log_likelihood():
    g = two_local(3)
    zero = np.zeros(len(g))
    assert log_likelihood(g, zero, "iqp", BitMatrix.zeros(4, 3)).value == 0.0
    ll = log_likelihood(g, zero, "iqp", BitMatrix.from_strings(["000", "010"]))
    assert ll.is_neg_inf and ll.below_floor == 1 and ll.value == -math.inf
    gates = GateSet(2, [(0,), (1,), (0, 1)])
    theta = np.array([0.3, 0.8, 1.1])
    q1, q2, q12 = np.cos(theta) ** 2
    p00 = q1 * q2 * q12 + (1 - q1) * (1 - q2) * (1 - q12)
    p10 = q1 * (1 - q2) * (1 - q12) + (1 - q1) * q2 * q12
    ll = log_likelihood(gates, theta, "iqp", BitMatrix.from_strings(["00", "10", "10"]))
    assert ll.value == pytest.approx(math.log(p00) + 2 * math.log(p10), abs=1e-12)

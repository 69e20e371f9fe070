"""Metrics for trained models: test-set MMD^2, KGEL, covariances and log-likelihood."""

import math
from dataclasses import dataclass

import numpy as np

from .bits import as_bitmatrix
from .circuit import ModelKind, check_params
from .exact import exact_probabilities, sample_bitflip
from .expval import expval_bitflip, expval_estimate, single_and_pair_observables
from .mmd import (
    DEFAULT_BATCH,
    DataBatch,
    ObservableDistribution,
    as_schedule,
    loss_batches,
    mmd2_samples_multi,
    mmd_terms,
    sample_observables,
    uniform_bitstrings,
    _check_sigma,
)
from .rng import derive_seed, make_rng


@dataclass(frozen=True)
class TestMmd:
    sigma: float
    mean: float
    std: float


def _summarise(sigmas, values):
    values = np.asarray(values)
    return [TestMmd(float(s), float(values[:, i].mean()), float(values[:, i].std(ddof=1))) for i, s in enumerate(sigmas)]


def test_mmd(gates, params, kind, test_set, schedule, repetitions=10, batch_sizes=(DEFAULT_BATCH, DEFAULT_BATCH),
             seed=0, sample_batch=None):
    """Per-bandwidth mean and standard deviation of MMD^2 against a test set.

    Repetition ``r`` draws its batches from ``derive_seed(seed, "rep", r)``.
    Circuit kinds use the expectation-based estimator. The bitflip kind is
    treated as a sampler: ``repetitions`` disjoint batches of model samples
    (``sample_batch`` rows each, default the test-set size) are compared with
    the test set by the sample-based estimator.
    """
    kind = ModelKind.parse(kind)
    params = check_params(gates, params)
    test_set = as_bitmatrix(test_set, gates.n_qubits)
    schedule = as_schedule(schedule)
    if repetitions < 2:
        raise ValueError("repetitions must be at least 2")
    if len(test_set) < 2:
        raise ValueError("test set needs at least two rows")
    if kind is ModelKind.BITFLIP:
        per = int(sample_batch or len(test_set))
        samples = sample_bitflip(gates, params, per * repetitions, derive_seed(seed, "model-samples"))
        return test_mmd_samples(samples, test_set, schedule, repetitions, seed)
    data = DataBatch(test_set)
    rows = []
    for r in range(repetitions):
        obs, zs = loss_batches(gates.n_qubits, schedule, batch_sizes[0], batch_sizes[1], derive_seed(seed, "rep", r))
        rows.append([mmd_terms(gates, params, data, a, zs, kind)[0] for a in obs])
    return _summarise(schedule.sigmas, rows)


def test_mmd_samples(samples, test_set, schedule, repetitions=10, seed=0):
    """Like :func:`test_mmd` for a model given only by samples, e.g. a baseline or an external file.

    The samples are split into ``repetitions`` disjoint batches.
    """
    samples = as_bitmatrix(samples)
    test_set = as_bitmatrix(test_set, samples.width)
    schedule = as_schedule(schedule)
    if repetitions < 2:
        raise ValueError("repetitions must be at least 2")
    if len(samples) < 2 * repetitions:
        raise ValueError(f"need at least {2 * repetitions} samples for {repetitions} disjoint batches")
    order = make_rng(seed, "sample-split").permutation(len(samples))
    rows = []
    for r, idx in enumerate(np.array_split(order, repetitions)):
        est = mmd2_samples_multi(samples[np.sort(idx)], test_set, schedule.sigmas, seed=derive_seed(seed, "rep", r))
        rows.append([e.value for e in est])
    return _summarise(schedule.sigmas, rows)


def uniform_baseline(test_set, schedule, repetitions=10, seed=0):
    """Test MMD^2 of uniformly random bitstrings, as many per repetition as the test set has rows."""
    test_set = as_bitmatrix(test_set)
    samples = uniform_bitstrings(test_set.width, len(test_set) * repetitions, derive_seed(seed, "uniform-baseline"))
    return test_mmd_samples(samples, test_set, schedule, repetitions, seed)


def kernel_columns(points, witnesses, sigma):
    """``k(x_i, t_w)`` as an ``(len(points), len(witnesses))`` array."""
    P = as_bitmatrix(points).to_array(np.float64)
    T = as_bitmatrix(witnesses, P.shape[1]).to_array(np.float64)
    d = P.sum(1)[:, None] + T.sum(1)[None, :] - 2.0 * P @ T.T
    return np.exp(-np.rint(d) / (2.0 * _check_sigma(sigma) ** 2))


@dataclass(frozen=True)
class KgelRhs:
    values: np.ndarray
    std_errors: np.ndarray


def kgel_rhs(gates, params, kind, witness_points, sigma, batch_sizes=(DEFAULT_BATCH, DEFAULT_BATCH), seed=0,
             exact=False):
    """Model-side kernel means ``E_{y~q} k(y, t)`` for every witness point ``t``.

    The estimate averages ``(-1)^(a.t) <Z_a>`` over observables ``a`` drawn
    for bandwidth ``sigma``; ``exact=True`` sums against the full output
    distribution instead (small circuits only).
    """
    kind = ModelKind.parse(kind)
    params = check_params(gates, params)
    n = gates.n_qubits
    witness_points = as_bitmatrix(witness_points, n)
    if exact:
        p = exact_probabilities(gates, params, kind)
        idx = np.arange(2**n, dtype=np.uint64)
        t = witness_points.to_indices()
        d = np.bitwise_count(idx[:, None] ^ t[None, :]).astype(float)
        vals = p @ np.exp(-d / (2.0 * _check_sigma(sigma) ** 2))
        return KgelRhs(vals, np.zeros_like(vals))
    obs = sample_observables(ObservableDistribution.from_sigma(n, sigma), batch_sizes[0], derive_seed(seed, "a"))
    zs = uniform_bitstrings(n, batch_sizes[1], derive_seed(seed, "z"))
    ev = expval_estimate(gates, params, obs, zs, kind).values
    signs = 1.0 - 2.0 * ((obs.to_array(np.float64) @ witness_points.to_array(np.float64).T) % 2.0)
    terms = signs * ev[:, None]
    return KgelRhs(terms.mean(axis=0), terms.std(axis=0, ddof=1) / math.sqrt(len(obs)))


@dataclass(frozen=True)
class KgelProblem:
    test_set: object
    witness_points: object
    sigma: float
    rhs: np.ndarray
    tolerance: float = 1e-6

    def __post_init__(self):
        ts = as_bitmatrix(self.test_set)
        object.__setattr__(self, "test_set", ts)
        object.__setattr__(self, "witness_points", as_bitmatrix(self.witness_points, ts.width))
        rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        if len(self.witness_points) < 1 or rhs.shape != (len(self.witness_points),):
            raise ValueError("need one right-hand side value per witness point (at least one)")
        object.__setattr__(self, "rhs", rhs)
        _check_sigma(self.sigma)
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")

    def kernel(self):
        return kernel_columns(self.test_set, self.witness_points, self.sigma)


@dataclass(frozen=True)
class KgelSolution:
    pi: np.ndarray
    kl_value: float
    residual: float
    success: bool
    iterations: int
    multipliers: np.ndarray


def _tilt(K, lam):
    u = K @ lam
    u -= u.max()
    w = np.exp(u)
    return w / w.sum()


def _dual(K, r, lam):
    u = K @ lam
    top = u.max()
    return lam @ r - (top + math.log(np.mean(np.exp(u - top))))


def _line_search(K, r, lam, d, g):
    f0 = _dual(K, r, lam)
    t = 1.0
    while t > 1e-12:
        cand = lam + t * d
        if _dual(K, r, cand) >= f0 + 1e-4 * t * (d @ g):
            return cand
        t *= 0.5
    return None


def kl_to_uniform(pi):
    pi = np.asarray(pi)
    nz = pi > 0
    return float(np.sum(pi[nz] * np.log(len(pi) * pi[nz])))


def kgel_solve(problem, max_iter=500, kernel=None):
    """Minimise KL(pi || uniform) over test-row weights matching the kernel moments.

    Works in the dual: ``pi_i ~ exp(lambda . k_i)``, with ``lambda`` maximising
    the concave dual by damped Newton steps (Hessian = weighted covariance of
    the kernel columns), falling back to gradient ascent when the Newton
    direction fails. If the moments cannot be matched to ``tolerance`` the
    returned solution has ``success=False`` and the residual it reached.
    """
    K = problem.kernel() if kernel is None else kernel
    r = problem.rhs
    tol = problem.tolerance
    lam = np.zeros(K.shape[1])
    pi = _tilt(K, lam)
    it = 0
    for it in range(1, max_iter + 1):
        mean = pi @ K
        g = r - mean
        if np.max(np.abs(g)) <= tol:
            it -= 1
            break
        Kc = K - mean
        H = (Kc * pi[:, None]).T @ Kc
        directions = [g]
        try:
            ridge = 1e-12 * max(np.trace(H), 1e-300)
            d = np.linalg.solve(H + ridge * np.eye(len(lam)), g)
            if np.all(np.isfinite(d)) and d @ g > 0:
                directions.insert(0, d)
        except np.linalg.LinAlgError:
            pass
        new = None
        for d in directions:
            new = _line_search(K, r, lam, d, g)
            if new is not None:
                break
        if new is None:
            break
        lam = new
        pi = _tilt(K, lam)
    residual = float(np.max(np.abs(pi @ K - r)))
    return KgelSolution(pi, kl_to_uniform(pi), residual, residual <= tol, it, lam)


def bin_weights(pi, labels):
    """Total weight per label, in sorted label order."""
    labels = np.asarray(labels)
    keys = np.unique(labels)
    return {k.item() if hasattr(k, "item") else k: float(np.asarray(pi)[labels == k].sum()) for k in keys}


def cumulative_weights(pi, labels=None):
    """Cumulative weight over test rows, grouped by label (stable) when labels are given."""
    pi = np.asarray(pi)
    order = np.arange(len(pi)) if labels is None else np.argsort(np.asarray(labels), kind="stable")
    return order, np.cumsum(pi[order])


@dataclass(frozen=True)
class CovarianceMatrix:
    """Covariances in the +-1 convention; ``std_errors`` is zero for exact entries."""

    matrix: np.ndarray
    std_errors: np.ndarray


def _assemble(n, ev, se, iu, ju):
    z1, z2 = ev[:n], ev[n:]
    s1, s2 = se[:n], se[n:]
    C = np.zeros((n, n))
    E = np.zeros((n, n))
    vals = z2 - z1[iu] * z1[ju]
    errs = np.sqrt(s2**2 + (z1[ju] * s1[iu]) ** 2 + (z1[iu] * s1[ju]) ** 2)
    C[iu, ju] = C[ju, iu] = vals
    E[iu, ju] = E[ju, iu] = errs
    d = np.arange(n)
    C[d, d] = 1.0 - z1 * z1
    E[d, d] = 2.0 * np.abs(z1) * s1
    return CovarianceMatrix(C, E)


def covariance_matrix(gates, params, kind, z_batch_size=DEFAULT_BATCH, seed=0, exact=False):
    """Model covariance ``<Z_i Z_j> - <Z_i><Z_j>``.

    Bitflip models and ``exact=True`` use exact expectations, otherwise they
    are estimated from ``z_batch_size`` uniform samples.
    """
    kind = ModelKind.parse(kind)
    params = check_params(gates, params)
    n = gates.n_qubits
    obs, iu, ju = single_and_pair_observables(n)
    if kind is ModelKind.BITFLIP:
        ev = expval_bitflip(gates, params, obs)
        se = np.zeros_like(ev)
    elif exact:
        from .exact import exact_expvals_all

        all_ev = exact_expvals_all(gates, params, kind)
        ev = all_ev[obs.to_indices().astype(np.int64)]
        se = np.zeros_like(ev)
    else:
        est = expval_estimate(gates, params, obs, uniform_bitstrings(n, z_batch_size, derive_seed(seed, "z")), kind)
        ev, se = est.values, est.std_errors
    return _assemble(n, ev, se, iu, ju)


def covariance_from_samples(samples):
    samples = as_bitmatrix(samples)
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    s = 1.0 - 2.0 * samples.to_array(np.float64)
    m = s.mean(axis=0)
    C = (s.T @ s) / len(s) - np.outer(m, m)
    sc = s - m
    # delta-method errors: the centred product has the same mean and first-order fluctuations
    second = (sc * sc).T @ (sc * sc) / len(s) - C * C
    E = np.sqrt(np.clip(second, 0, None) / len(s))
    C = 0.5 * (C + C.T)
    return CovarianceMatrix(C, 0.5 * (E + E.T))


@dataclass(frozen=True)
class LogLikelihood:
    value: float
    below_floor: int

    @property
    def is_neg_inf(self):
        return self.below_floor > 0


def log_likelihood(gates, params, kind, test_set, floor=1e-300):
    """``sum_i log q(x_i)`` over the test rows from exact probabilities.

    Rows with probability below ``floor`` make the value ``-inf`` and are
    counted in ``below_floor``.
    """
    kind = ModelKind.parse(kind)
    test_set = as_bitmatrix(test_set, gates.n_qubits)
    p = exact_probabilities(gates, params, kind)
    q = p[test_set.to_indices().astype(np.int64)]
    low = int(np.count_nonzero(q < floor))
    if low:
        return LogLikelihood(-math.inf, low)
    return LogLikelihood(float(np.sum(np.log(q))), 0)

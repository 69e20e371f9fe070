"""Gaussian-kernel MMD for bitstring distributions.

For bitstrings the Gaussian kernel ``exp(-d_H(x, y) / (2 sigma^2))`` factorises
over bits, and each factor is the expectation of ``(-1)^(a.(x xor y))`` under a
single Bernoulli bit ``a`` with ``P(a=1) = p_sigma = (1 - exp(-1/(2 sigma^2)))/2``.
So MMD^2(p, q) is the average over ``a ~ Bernoulli(p_sigma)^n`` of
``(<Z_a>_p - <Z_a>_q)^2``, and expectation values of IQP circuits can be
estimated classically. :func:`mmd2_unbiased` is the resulting unbiased
estimator; :func:`mmd2_samples` is the classical sample-based one.
"""

import math
from dataclasses import dataclass

import numpy as np

from .bits import BitMatrix, as_bitmatrix
from .circuit import ModelKind, check_params
from .exact import fwht
from .expval import BitflipProducts, PhaseSums, _float_bits_T, symmetrized_weights
from .rng import derive_seed, make_rng

DEFAULT_BATCH = 1000
ROW_CAP = 20_000
_TILE = 4096


def _check_sigma(sigma):
    sigma = float(sigma)
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError(f"bandwidth must be positive and finite, got {sigma}")
    return sigma


@dataclass(frozen=True)
class KernelConfig:
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "sigma", _check_sigma(self.sigma))


@dataclass(frozen=True)
class BandwidthSchedule:
    sigmas: tuple

    def __post_init__(self):
        sigmas = tuple(_check_sigma(s) for s in np.atleast_1d(self.sigmas))
        if not sigmas:
            raise ValueError("bandwidth schedule is empty")
        object.__setattr__(self, "sigmas", sigmas)

    def __iter__(self):
        return iter(self.sigmas)

    def __len__(self):
        return len(self.sigmas)


def _as_sigma(cfg):
    return cfg.sigma if isinstance(cfg, KernelConfig) else _check_sigma(cfg)


def as_schedule(sigmas):
    return sigmas if isinstance(sigmas, BandwidthSchedule) else BandwidthSchedule(tuple(np.atleast_1d(sigmas)))


def gaussian_kernel(x, y, cfg):
    """``exp(-||x - y||^2 / (2 sigma^2))``; the squared norm is the Hamming distance."""
    x = np.asarray(as_bitmatrix(x).to_array(np.int64))[0]
    y = np.asarray(as_bitmatrix(y).to_array(np.int64))[0]
    if x.shape != y.shape:
        raise ValueError(f"width mismatch: {x.shape[0]} vs {y.shape[0]}")
    d = np.count_nonzero(x != y)
    return math.exp(-d / (2.0 * _as_sigma(cfg) ** 2))


def bernoulli_p(sigma):
    """Bit probability of the observable distribution matching bandwidth ``sigma``."""
    sigma = _check_sigma(sigma)
    return -0.5 * math.expm1(-1.0 / (2.0 * sigma * sigma))


def sigma_for_weight(n, weight):
    """Bandwidth whose observables have expected Pauli weight ``weight`` on ``n`` bits."""
    n, weight = int(n), float(weight)
    if not 0 < weight < n / 2:
        raise ValueError(f"weight must lie in (0, n/2) = (0, {n / 2}), got {weight}")
    return math.sqrt(-1.0 / (2.0 * math.log1p(-2.0 * weight / n)))


def hamming_histogram(X, Y=None, tile=_TILE):
    """Counts of Hamming distances, over pairs ``i < j`` of X or over all of X x Y."""
    X = as_bitmatrix(X)
    n = X.width
    Xf = X.to_array(np.float64)
    wx = Xf.sum(axis=1)
    hist = np.zeros(n + 1, dtype=np.int64)
    if Y is None:
        for lo in range(0, len(Xf), tile):
            blk = Xf[lo : lo + tile]
            d = wx[lo : lo + tile, None] + wx[None, lo:] - 2.0 * (blk @ Xf[lo:].T)
            rows = np.arange(len(blk))[:, None]
            keep = np.arange(d.shape[1])[None, :] > rows
            hist += np.bincount(np.rint(d[keep]).astype(np.int64), minlength=n + 1)
        return hist
    Y = as_bitmatrix(Y, n)
    Yf = Y.to_array(np.float64)
    wy = Yf.sum(axis=1)
    for lo in range(0, len(Xf), tile):
        d = wx[lo : lo + tile, None] + wy[None, :] - 2.0 * (Xf[lo : lo + tile] @ Yf.T)
        hist += np.bincount(np.rint(d).astype(np.int64).ravel(), minlength=n + 1)
    return hist


def median_heuristic(data):
    """Median Euclidean distance over unordered pairs of rows."""
    data = as_bitmatrix(data)
    m = len(data)
    if m < 2:
        raise ValueError("median heuristic needs at least two rows")
    hist = hamming_histogram(data)
    cum = np.cumsum(hist)
    total = int(cum[-1])
    lo = int(np.searchsorted(cum, (total - 1) // 2, side="right"))
    hi = int(np.searchsorted(cum, total // 2, side="right"))
    return 0.5 * (math.sqrt(lo) + math.sqrt(hi))


def resolve_schedule(n, sigmas=None, weights=None, data=None, median_rule=False):
    """Bandwidths from explicit values, target Pauli weights, or the median rule.

    The median rule gives three bandwidths: the first from an average Pauli
    weight of 2 (or ``weights[0]``), the last the square root of the median
    heuristic of ``data``, and the middle the root mean square of the two.
    """
    if median_rule:
        if data is None:
            raise ValueError("the median rule needs data")
        s1 = sigma_for_weight(n, weights[0] if weights else 2.0)
        med = median_heuristic(data)
        if med <= 0:
            raise ValueError("median heuristic is zero (all rows identical); give bandwidths explicitly")
        s3 = math.sqrt(med)
        return BandwidthSchedule((s1, math.sqrt((s1 * s1 + s3 * s3) / 2.0), s3))
    if sigmas is not None and weights is not None:
        raise ValueError("give either bandwidths or target weights, not both")
    if weights is not None:
        return BandwidthSchedule(tuple(sigma_for_weight(n, w) for w in weights))
    if sigmas is None:
        raise ValueError("no bandwidths given")
    return BandwidthSchedule(tuple(sigmas))


@dataclass(frozen=True)
class ObservableDistribution:
    """Product of ``n`` Bernoulli(p_sigma) bits."""

    n: int
    p_sigma: float

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("n must be positive")
        if not 0.0 <= self.p_sigma < 0.5:
            raise ValueError(f"p_sigma must lie in [0, 1/2), got {self.p_sigma}")

    @classmethod
    def from_sigma(cls, n, sigma):
        return cls(int(n), bernoulli_p(sigma))

    @property
    def mean_weight(self):
        return self.n * self.p_sigma


def sample_observables(dist, count, seed, block_elems=1 << 24):
    count = int(count)
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = make_rng(seed, "observables")
    step = max(1, block_elems // dist.n)
    parts = [
        BitMatrix.from_array(rng.random((min(step, count - lo), dist.n)) < dist.p_sigma)
        for lo in range(0, count, step)
    ]
    return BitMatrix.vstack(parts)


def uniform_bitstrings(n, count, seed):
    count = int(count)
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = make_rng(seed, "uniform")
    raw = rng.integers(0, 256, size=(count, (n + 7) // 8), dtype=np.uint8)
    pad = (-n) % 8
    if pad:
        raw[:, -1] &= np.uint8(0xFF >> pad)
    return BitMatrix(raw, n)


@dataclass(frozen=True)
class MmdEstimate:
    value: float
    std_error: float = 0.0


def _kernel_sums(hist, sigmas):
    d = np.arange(len(hist))
    return np.array([hist @ np.exp(-d / (2.0 * s * s)) for s in sigmas])


def _mmd2_from_histograms(hxx, hyy, hxy, nx, ny, sigmas):
    kxx = 2.0 * _kernel_sums(hxx, sigmas) / (nx * (nx - 1))
    kyy = 2.0 * _kernel_sums(hyy, sigmas) / (ny * (ny - 1))
    kxy = _kernel_sums(hxy, sigmas) / (nx * ny)
    return kxx - 2.0 * kxy + kyy


def mmd2_samples_multi(X, Y, sigmas, row_cap=ROW_CAP, seed=0):
    """Sample-based unbiased MMD^2 at several bandwidths, sharing the distance histograms.

    If either set has more than ``row_cap`` rows, both are shuffled and split
    into the same number of disjoint batches; the value is the batch mean and
    the error the standard error across batches. Otherwise ``std_error`` is 0.
    """
    X = as_bitmatrix(X)
    Y = as_bitmatrix(Y, X.width)
    sigmas = [_as_sigma(s) for s in np.atleast_1d(sigmas)]
    if len(X) < 2 or len(Y) < 2:
        raise ValueError("both sample sets need at least two rows")
    n_batches = max(1, math.ceil(max(len(X), len(Y)) / row_cap))
    if n_batches == 1:
        vals = _mmd2_from_histograms(
            hamming_histogram(X), hamming_histogram(Y), hamming_histogram(X, Y), len(X), len(Y), sigmas
        )
        return [MmdEstimate(float(v), 0.0) for v in vals]
    rng = make_rng(seed, "mmd-batches")
    xb = np.array_split(rng.permutation(len(X)), n_batches)
    yb = np.array_split(rng.permutation(len(Y)), n_batches)
    if min(len(b) for b in xb + yb) < 2:
        raise ValueError("too few rows to form batches of at least two")
    rows = []
    for ix, iy in zip(xb, yb):
        Xb, Yb = X[np.sort(ix)], Y[np.sort(iy)]
        rows.append(
            _mmd2_from_histograms(
                hamming_histogram(Xb), hamming_histogram(Yb), hamming_histogram(Xb, Yb), len(Xb), len(Yb), sigmas
            )
        )
    rows = np.array(rows)
    err = rows.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return [MmdEstimate(float(v), float(e)) for v, e in zip(rows.mean(axis=0), err)]


def mmd2_samples(X, Y, cfg, row_cap=ROW_CAP, seed=0):
    return mmd2_samples_multi(X, Y, [_as_sigma(cfg)], row_cap, seed)[0]


def mmd2_exact_kernel(p, q, sigma):
    """``sum_{x,y} (p-q)(x) (p-q)(y) k(x, y)`` over all bitstrings (small n only)."""
    diff = np.asarray(p, float) - np.asarray(q, float)
    n = int(round(math.log2(len(diff))))
    idx = np.arange(2**n, dtype=np.uint64)
    dist = np.bitwise_count(idx[:, None] ^ idx[None, :]).astype(float)
    K = np.exp(-dist / (2.0 * _check_sigma(sigma) ** 2))
    return float(diff @ K @ diff)


def mmd2_exact_mixture(p, q, sigma):
    """``E_{a ~ P_sigma} (<Z_a>_p - <Z_a>_q)^2`` by enumerating every ``a``."""
    diff = fwht(np.asarray(p, float) - np.asarray(q, float))
    n = int(round(math.log2(len(diff))))
    ps = bernoulli_p(sigma)
    w = np.bitwise_count(np.arange(2**n, dtype=np.uint64)).astype(float)
    prob_a = ps**w * (1.0 - ps) ** (n - w)
    return float(prob_a @ (diff * diff))


class DataBatch:
    """Distinct data rows with multiplicities, as used by the data-side terms."""

    def __init__(self, X):
        X = as_bitmatrix(X)
        uniq, counts = np.unique(X.packed, axis=0, return_counts=True)
        self.width = X.width
        self.size = len(X)
        self.rows = BitMatrix(uniq, X.width).to_array(np.float64)
        self.counts = counts.astype(np.float64)

    def parity_sums(self, A_T, tile=_TILE):
        """``sum_k (-1)^(x_k . a_i)`` for every observable ``a_i``."""
        out = np.zeros(A_T.shape[1])
        for lo in range(0, self.rows.shape[0], tile):
            odd = (self.rows[lo : lo + tile] @ A_T) % 2.0
            out += self.counts[lo : lo + tile] @ odd
        return self.size - 2.0 * out


def mmd_terms(gates, params, data, obs, zs, kind, want_grad=False):
    """Per-observable terms of the unbiased estimator and, optionally, the gradient.

    Returns ``(value, terms, grad)``; ``value`` is ``terms.mean()`` and ``grad``
    is ``None`` unless requested. The value does not depend on ``want_grad``.
    """
    n_x, n_a = data.size, len(obs)
    A_T = _float_bits_T(obs)
    px = data.parity_sums(A_T)
    data_term = (px * px - n_x) / (n_x * (n_x - 1.0))
    grad = None
    if kind is ModelKind.BITFLIP:
        bf = BitflipProducts(gates, params, obs)
        f = bf.values
        terms = f * f - 2.0 * f * px / n_x + data_term
        value = float(terms.mean())
        if want_grad:
            grad = bf.backward((2.0 * f - 2.0 * px / n_x) / n_a)
        return value, terms, grad
    n_z = len(zs)
    sums = PhaseSums(gates, params, A_T, _float_bits_T(zs), cache=want_grad)
    S = sums.forward()
    F = np.cos(S)
    if kind is ModelKind.IQP_SYMMETRIZED:
        W = symmetrized_weights(obs, zs)
        F *= W
    R = F.sum(axis=1)
    Q = np.einsum("az,az->a", F, F)
    terms = (R * R - Q) / (n_z * (n_z - 1.0)) - 2.0 * R * px / (n_z * n_x) + data_term
    value = float(terms.mean())
    if want_grad:
        dF = (2.0 / (n_a * n_z * (n_z - 1.0))) * (R[:, None] - F)
        dF -= ((2.0 / (n_a * n_z * n_x)) * px)[:, None]
        dS = -dF * np.sin(S)
        if kind is ModelKind.IQP_SYMMETRIZED:
            dS *= W
        grad = sums.backward(dS)
    return value, terms, grad


def _validate(gates, params, X, A, Z, kind):
    kind = ModelKind.parse(kind)
    params = check_params(gates, params)
    n = gates.n_qubits
    X = as_bitmatrix(X, n)
    A = as_bitmatrix(A, n)
    if len(X) < 2:
        raise ValueError("X needs at least two rows")
    if len(A) < 1:
        raise ValueError("A needs at least one row")
    if kind is not ModelKind.BITFLIP or Z is not None:
        Z = as_bitmatrix(Z, n)
        if len(Z) < 2:
            raise ValueError("Z needs at least two rows")
    return params, X, A, Z, kind


def _estimate(value, terms):
    err = float(terms.std(ddof=1) / math.sqrt(len(terms))) if len(terms) > 1 else 0.0
    return MmdEstimate(value, err)


def mmd2_unbiased(gates, params, X, A, Z, kind=ModelKind.IQP):
    """Unbiased estimate of MMD^2 between the data and the circuit's output distribution.

    ``A`` holds observables drawn from the Bernoulli distribution of the
    bandwidth, ``Z`` uniform bitstrings (ignored for the bitflip kind, whose
    expectations are exact). ``std_error`` is the spread of the
    per-observable terms over ``sqrt(|A|)``.
    """
    params, X, A, Z, kind = _validate(gates, params, X, A, Z, kind)
    value, terms, _ = mmd_terms(gates, params, DataBatch(X), A, Z, kind)
    return _estimate(value, terms)


def loss_batches(n, schedule, batch_a, batch_z, seed):
    """Observable batches (one per bandwidth) and the shared z batch for one loss evaluation.

    Observables for bandwidth ``s`` come from the stream ``(seed, "a", s)`` so
    repeated bandwidths get identical batches.
    """
    schedule = as_schedule(schedule)
    obs = [
        sample_observables(ObservableDistribution.from_sigma(n, s), batch_a, derive_seed(seed, "a", float(s)))
        for s in schedule
    ]
    zs = uniform_bitstrings(n, batch_z, derive_seed(seed, "z"))
    return obs, zs


def multi_bandwidth_terms(gates, params, data, schedule, batch_a, batch_z, seed, kind, want_grad=False):
    obs, zs = loss_batches(gates.n_qubits, schedule, batch_a, batch_z, seed)
    total, grad = 0.0, None
    for a in obs:
        value, _, g = mmd_terms(gates, params, data, a, zs, kind, want_grad)
        total += value
        if want_grad:
            grad = g if grad is None else grad + g
    k = len(obs)
    return total / k, (grad / k if want_grad else None)


def multi_bandwidth_loss(
    gates, params, X, schedule, batch_sizes=(DEFAULT_BATCH, DEFAULT_BATCH), seed=0, kind=ModelKind.IQP
):
    """Mean of :func:`mmd2_unbiased` over the bandwidths of ``schedule``."""
    kind = ModelKind.parse(kind)
    params = check_params(gates, params)
    X = as_bitmatrix(X, gates.n_qubits)
    if len(X) < 2:
        raise ValueError("X needs at least two rows")
    batch_a, batch_z = batch_sizes
    if batch_z < 2:
        raise ValueError("z batch needs at least two rows")
    value, _ = multi_bandwidth_terms(gates, params, DataBatch(X), schedule, batch_a, batch_z, seed, kind)
    return value

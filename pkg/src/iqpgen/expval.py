"""Pauli-Z expectation values of parameterised IQP circuits and their bitflip analogues.

For an IQP circuit with gates ``exp(i theta_j X_{g_j})`` the expectation of
``Z_a`` is the uniform average over bitstrings ``z`` of

    cos( sum_j theta_j (-1)^(g_j . z) (1 - (-1)^(g_j . a)) )

so a batch of uniform ``z`` gives an unbiased Monte-Carlo estimate. The sum
inside the cosine is accumulated over blocks of gates: parities come from the
sparse gate incidence matrix, and the per-block contraction uses either a
dense BLAS product or a sparse product that skips gates with ``g_j . a`` even,
whichever is cheaper for the block.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bits import BitMatrix, as_bitmatrix
from .circuit import ModelKind, check_params

GATE_BLOCK = 4096
SPARSE_DENSITY = 0.15
CACHE_BYTES = 384 * 2**20
OBS_BLOCK_ELEMS = 4 * 2**20


@dataclass(frozen=True)
class ExpvalEstimate:
    value: float
    std_error: float
    n_samples: int


class ExpvalBatch:
    """Estimates for a batch of observables, indexable as a sequence of ExpvalEstimate.

    ``std_errors`` is the population standard deviation of the per-sample
    terms divided by ``sqrt(n_samples)``.
    """

    def __init__(self, values, std_errors, n_samples):
        self.values = values
        self.std_errors = std_errors
        self.n_samples = n_samples

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return ExpvalEstimate(float(self.values[i]), float(self.std_errors[i]), self.n_samples)

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def _float_bits_T(bits):
    return np.ascontiguousarray(bits.to_array(np.float64).T)


def _block_parity(inc_block, bits_T):
    """Parity of ``g_j . x`` for gates in the block (rows) and strings x (columns)."""
    counts = inc_block @ bits_T
    return np.asarray(counts) % 2.0


class PhaseSums:
    """Accumulates ``S[a, z] = sum_j 2 theta_j [g_j.a odd] (-1)^(g_j.z)`` and its gradient.

    Gate blocks are recomputed for the backward pass unless they fit in
    ``CACHE_BYTES``.
    """

    def __init__(self, gates, params, obs_T, z_T, block=GATE_BLOCK, cache=False):
        self.gates = gates
        self.params = params
        self.obs_T = obs_T
        self.z_T = z_T
        self.block = block
        n_a, n_z = obs_T.shape[1], z_T.shape[1]
        self.cache = cache and len(gates) * (n_a + n_z) * 8 <= CACHE_BYTES
        self._blocks = [] if self.cache else None

    def _iter_blocks(self):
        if self._blocks:
            yield from self._blocks
            return
        inc = self.gates.incidence
        m = len(self.gates)
        for lo in range(0, m, self.block):
            hi = min(lo + self.block, m)
            sub = inc[lo:hi]
            pa = _block_parity(sub, self.obs_T)
            sz = 1.0 - 2.0 * _block_parity(sub, self.z_T)
            density = np.count_nonzero(pa) / max(pa.size, 1)
            pa_sparse = sp.csr_matrix(pa) if density < SPARSE_DENSITY else None
            item = (lo, hi, pa, pa_sparse, sz)
            if self._blocks is not None:
                self._blocks.append(item)
            yield item

    def forward(self):
        n_a, n_z = self.obs_T.shape[1], self.z_T.shape[1]
        S = np.zeros((n_a, n_z))
        for lo, hi, pa, pa_sparse, sz in self._iter_blocks():
            coef = 2.0 * self.params[lo:hi]
            if pa_sparse is not None:
                S += np.asarray((pa_sparse.multiply(coef[:, None])).T.tocsr() @ sz)
            else:
                S += (pa * coef[:, None]).T @ sz
        return S

    def backward(self, dS):
        """Gradient w.r.t. the parameters given ``dL/dS``."""
        grad = np.zeros(len(self.gates))
        for lo, hi, pa, pa_sparse, sz in self._iter_blocks():
            if pa_sparse is not None:
                H = np.asarray(pa_sparse @ dS)
                grad[lo:hi] = 2.0 * np.einsum("jz,jz->j", H, sz)
            else:
                M = sz @ dS.T
                grad[lo:hi] = 2.0 * np.einsum("ja,ja->j", pa, M)
        return grad


def symmetrized_weights(obs, zs):
    """``(1/2 + (1/2)(-1)^|a| + (-1)^|z|)`` as an ``(len(obs), len(zs))`` array."""
    wa = np.where(obs.weights() % 2 == 0, 1.0, 0.0)
    wz = np.where(zs.weights() % 2 == 0, 1.0, -1.0)
    return wa[:, None] + wz[None, :]


def _check_widths(gates, *mats):
    for m in mats:
        if m.width != gates.n_qubits:
            raise ValueError(f"bitstrings have width {m.width}, circuit has {gates.n_qubits} qubits")


def expval_terms(gates, params, obs, zs, kind=ModelKind.IQP):
    """Per-sample terms ``f(a, z)``, shape ``(len(obs), len(zs))``."""
    S = PhaseSums(gates, params, _float_bits_T(obs), _float_bits_T(zs)).forward()
    F = np.cos(S)
    if kind is ModelKind.IQP_SYMMETRIZED:
        F *= symmetrized_weights(obs, zs)
    return F


def expval_estimate(gates, params, observables, z_samples, kind=ModelKind.IQP):
    """Monte-Carlo estimates of ``<Z_a>`` for every row ``a`` of ``observables``.

    ``z_samples`` should be i.i.d. uniform bitstrings. For the bitflip kind the
    exact closed form is returned (with zero error) and ``z_samples`` is ignored.
    """
    kind = ModelKind.parse(kind)
    params = check_params(gates, params)
    observables = as_bitmatrix(observables)
    if kind is ModelKind.BITFLIP:
        _check_widths(gates, observables)
        vals = expval_bitflip(gates, params, observables)
        return ExpvalBatch(vals, np.zeros_like(vals), 0)
    z_samples = as_bitmatrix(z_samples)
    _check_widths(gates, observables, z_samples)
    n_z = len(z_samples)
    if n_z == 0:
        raise ValueError("z_samples must be nonempty")
    values = np.empty(len(observables))
    errors = np.empty(len(observables))
    step = max(1, OBS_BLOCK_ELEMS // n_z)
    for lo in range(0, len(observables), step):
        F = expval_terms(gates, params, observables[lo : lo + step], z_samples, kind)
        values[lo : lo + step] = F.mean(axis=1)
        errors[lo : lo + step] = F.std(axis=1) / np.sqrt(n_z)
    return ExpvalBatch(values, errors, n_z)


class BitflipProducts:
    """Closed-form bitflip expectations ``prod_{j: g_j.a odd} cos(2 theta_j)`` and gradients.

    Products are accumulated as log-magnitudes plus sign and zero counts so
    that blocks of gates can be contracted with matrix products.
    """

    def __init__(self, gates, params, obs, block=GATE_BLOCK):
        self.gates = gates
        self.params = params
        self.obs_T = _float_bits_T(obs)
        self.block = block
        c = np.cos(2.0 * params)
        self.cos2 = c
        zero = c == 0.0
        logabs = np.where(zero, 0.0, np.log(np.abs(np.where(zero, 1.0, c))))
        n_a = self.obs_T.shape[1]
        log_sum = np.zeros(n_a)
        neg = np.zeros(n_a)
        zeros = np.zeros(n_a)
        inc = gates.incidence
        for lo in range(0, len(gates), block):
            pa = _block_parity(inc[lo : lo + block], self.obs_T)
            log_sum += logabs[lo : lo + block] @ pa
            neg += (c[lo : lo + block] < 0).astype(float) @ pa
            zeros += zero[lo : lo + block].astype(float) @ pa
        sign = np.where(neg % 2 == 0, 1.0, -1.0)
        self.nonzero_product = sign * np.exp(log_sum)
        self.zero_count = zeros
        self.values = np.where(zeros == 0, self.nonzero_product, 0.0)

    def backward(self, dvalues):
        """Gradient w.r.t. the parameters given ``dL/d<Z_a>`` for every observable."""
        c = self.cos2
        s = np.sin(2.0 * self.params)
        weighted = dvalues * self.values
        lone = dvalues * np.where(self.zero_count == 1, self.nonzero_product, 0.0)
        grad = np.zeros(len(self.gates))
        inc = self.gates.incidence
        for lo in range(0, len(self.gates), self.block):
            hi = min(lo + self.block, len(self.gates))
            pa = _block_parity(inc[lo:hi], self.obs_T)
            cb = c[lo:hi]
            nz = cb != 0.0
            g = np.empty(hi - lo)
            g[nz] = -2.0 * s[lo:hi][nz] / cb[nz] * (pa[nz] @ weighted)
            g[~nz] = -2.0 * s[lo:hi][~nz] * (pa[~nz] @ lone)
            grad[lo:hi] = g
        return grad


def expval_bitflip(gates, params, observables):
    """Exact ``<Z_a>`` for the stochastic bitflip circuit with the same gates."""
    params = check_params(gates, params)
    observables = as_bitmatrix(observables)
    _check_widths(gates, observables)
    if len(gates) == 0:
        return np.ones(len(observables))
    return BitflipProducts(gates, params, observables).values


def single_and_pair_observables(n):
    """Observables ``Z_i`` (first n rows) then ``Z_i Z_j`` for i < j in lexicographic order."""
    iu, ju = np.triu_indices(n, k=1)
    bits = np.zeros((n + len(iu), n), dtype=np.uint8)
    bits[np.arange(n), np.arange(n)] = 1
    rows = np.arange(n, n + len(iu))
    bits[rows, iu] = 1
    bits[rows, ju] = 1
    return BitMatrix.from_array(bits), iu, ju

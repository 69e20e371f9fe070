"""Brute-force simulation for small circuits, used as the reference oracle.

The IQP unitary is diagonal in the Hadamard basis with eigenphases
``phi_z = sum_j theta_j (-1)^(g_j . z)``. Both the phase table and the output
amplitudes ``2^-n sum_z (-1)^(x.z) exp(i phi_z)`` are Walsh-Hadamard
transforms, so everything here costs ``O(n 2^n)`` plus ``O(m)`` to scatter the
parameters. Index ``i`` of every length-``2^n`` vector is the bitstring whose
bit ``k`` is ``(i >> k) & 1``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bits import BitMatrix, as_bitmatrix
from .circuit import ModelKind, check_params
from .rng import make_rng

DEFAULT_EXACT_LIMIT = 20
_exact_limit = DEFAULT_EXACT_LIMIT


class ExactLimitError(ValueError):
    """Raised when a brute-force routine is asked for more qubits than allowed."""


def set_exact_limit(n):
    global _exact_limit
    n = int(n)
    if n < 1:
        raise ValueError("exact limit must be at least 1")
    _exact_limit = n


def get_exact_limit():
    return _exact_limit


def _check_limit(n):
    if n > _exact_limit:
        raise ExactLimitError(
            f"{n} qubits exceeds the exact-simulation limit of {_exact_limit} (see --exact-limit)"
        )


def fwht(values):
    """Unnormalised Walsh-Hadamard transform ``out[a] = sum_x (-1)^(a.x) values[x]``."""
    v = np.array(values, copy=True)
    size = v.shape[0]
    if size & (size - 1):
        raise ValueError("length must be a power of two")
    h = 1
    while h < size:
        x = v.reshape(-1, 2, h)
        lo = x[:, 0, :].copy()
        x[:, 0, :] += x[:, 1, :]
        x[:, 1, :] = lo - x[:, 1, :]
        h *= 2
    return v


@dataclass(frozen=True)
class PhaseTable:
    n: int
    phases: np.ndarray

    @property
    def eigenvalues(self):
        return np.exp(1j * self.phases)


def exact_phase_table(gates, params):
    params = check_params(gates, params)
    n = gates.n_qubits
    _check_limit(n)
    scattered = np.zeros(2**n)
    if len(gates):
        np.add.at(scattered, np.asarray(gates.mask_ints(), dtype=np.int64), params)
    return PhaseTable(n, fwht(scattered))


def direct_phases(gates, params, zs):
    """``phi_z`` by summing gate by gate; independent of the transform path."""
    params = check_params(gates, params)
    zs = as_bitmatrix(zs, gates.n_qubits)
    if not len(gates):
        return np.zeros(len(zs))
    s = 1.0 - 2.0 * (np.asarray(zs.to_array(np.float64) @ gates.incidence.T.toarray()) % 2)
    return s @ params


def _bit_weights_parity(n):
    idx = np.arange(2**n, dtype=np.uint64)
    return np.bitwise_count(idx) & 1


def exact_amplitudes(gates, params, kind=ModelKind.IQP):
    kind = ModelKind.parse(kind)
    if kind is ModelKind.BITFLIP:
        raise ValueError("the bitflip model is a classical mixture and has no amplitudes")
    table = exact_phase_table(gates, params)
    lam = table.eigenvalues
    if kind is ModelKind.IQP_SYMMETRIZED:
        lam = lam * np.where(_bit_weights_parity(table.n) == 0, np.sqrt(2.0), 0.0)
    return fwht(lam) / 2**table.n


def _bitflip_probabilities(gates, params):
    n = gates.n_qubits
    p = np.zeros(2**n)
    p[0] = 1.0
    idx = np.arange(2**n, dtype=np.int64)
    c2 = np.cos(params) ** 2
    s2 = np.sin(params) ** 2
    for mask, c, s in zip(gates.mask_ints(), c2, s2):
        p = c * p + s * p[idx ^ mask]
    return p


def exact_probabilities(gates, params, kind=ModelKind.IQP):
    """Full output distribution as a length-``2^n`` vector."""
    kind = ModelKind.parse(kind)
    params = check_params(gates, params)
    _check_limit(gates.n_qubits)
    if kind is ModelKind.BITFLIP:
        p = _bitflip_probabilities(gates, params)
    else:
        amp = exact_amplitudes(gates, params, kind)
        p = amp.real**2 + amp.imag**2
    return np.clip(p, 0.0, None)


def exact_expvals_all(gates, params, kind=ModelKind.IQP):
    """``<Z_a>`` for every ``a``, indexed like the probability vector."""
    return fwht(exact_probabilities(gates, params, kind))


def exact_expval(gates, params, observable, kind=ModelKind.IQP):
    """Exact ``<Z_a>`` for one or several observables.

    A single bitstring returns a float, a batch returns an array.
    """
    obs = as_bitmatrix(observable, gates.n_qubits)
    p = exact_probabilities(gates, params, kind)
    idx = obs.to_indices().astype(np.int64)
    n = gates.n_qubits
    xs = np.arange(2**n, dtype=np.int64)
    out = np.empty(len(idx))
    for i, a in enumerate(idx):
        sgn = 1.0 - 2.0 * (np.bitwise_count(xs & a) & 1)
        out[i] = sgn @ p
    single = isinstance(observable, str) or (not isinstance(observable, BitMatrix) and np.ndim(observable) == 1)
    if len(out) == 1 and single:
        return float(out[0])
    return out


def sample_from_probabilities(p, width, count, rng):
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(count), side="right")
    idx = np.minimum(idx, len(p) - 1)
    return BitMatrix.from_indices(idx, width)


def sample_exact(gates, params, kind, count, seed):
    """Inverse-CDF samples from the exact output distribution."""
    count = int(count)
    if count < 1:
        raise ValueError("count must be at least 1")
    p = exact_probabilities(gates, params, kind)
    return sample_from_probabilities(p, gates.n_qubits, count, make_rng(seed, "sample-exact"))


def sample_bitflip(gates, params, count, seed, block_elems=1 << 22):
    """Samples from the stochastic bitflip circuit.

    Gate ``j`` flips the bits of ``g_j`` with probability ``sin^2(theta_j)``;
    the final string is the XOR of all flips. Works at any width.
    """
    params = check_params(gates, params)
    count = int(count)
    if count < 1:
        raise ValueError("count must be at least 1")
    n = gates.n_qubits
    rng = make_rng(seed, "sample-bitflip")
    flips = np.zeros((count, n), dtype=np.int64)
    probs = np.sin(params) ** 2
    inc = gates.incidence
    step = max(1, block_elems // count)
    for lo in range(0, len(gates), step):
        hi = min(lo + step, len(gates))
        fired = sp.csr_matrix((rng.random((count, hi - lo)) < probs[lo:hi]).astype(np.float64))
        flips += (fired @ inc[lo:hi]).toarray().astype(np.int64)
    return BitMatrix.from_array((flips & 1).astype(np.uint8))

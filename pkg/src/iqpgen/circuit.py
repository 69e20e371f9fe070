"""Circuit structure: generator sets, model kinds and gate-set constructors."""

import enum
import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bits import BitMatrix


class ModelKind(enum.Enum):
    """Which expectation formula a model uses."""

    IQP = "iqp"
    BITFLIP = "bitflip"
    IQP_SYMMETRIZED = "iqp_symmetrized"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"symmetrized": "iqp_symmetrized", "sym": "iqp_symmetrized", "ghz": "iqp_symmetrized"}
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown model kind {value!r}; expected one of {[k.value for k in cls]}")


@dataclass(frozen=True, eq=True)
class GateSet:
    """Ordered list of X-generator supports on ``n_qubits`` qubits.

    Parameter ``j`` always binds to ``generators[j]``. Generators are stored as
    sorted tuples of qubit indices; duplicates within a generator and repeated
    generators are rejected.
    """

    n_qubits: int
    generators: tuple

    def __post_init__(self):
        n = int(self.n_qubits)
        if n <= 0:
            raise ValueError("n_qubits must be positive")
        gens = []
        seen = set()
        for j, g in enumerate(self.generators):
            idx = tuple(int(i) for i in g)
            if not idx:
                raise ValueError(f"generator {j} is empty")
            if len(set(idx)) != len(idx):
                raise ValueError(f"generator {j} repeats a qubit index: {idx}")
            idx = tuple(sorted(idx))
            if idx[0] < 0 or idx[-1] >= n:
                raise ValueError(f"generator {j} = {idx} has an index outside [0, {n})")
            if idx in seen:
                raise ValueError(f"generator {idx} appears more than once")
            seen.add(idx)
            gens.append(idx)
        object.__setattr__(self, "n_qubits", n)
        object.__setattr__(self, "generators", tuple(gens))

    def __len__(self):
        return len(self.generators)

    @property
    def n_gates(self):
        return len(self.generators)

    @functools.cached_property
    def incidence(self):
        """Sparse ``(n_gates, n_qubits)`` 0/1 matrix; row j marks the support of g_j."""
        indptr = np.zeros(len(self.generators) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(g) for g in self.generators])
        indices = np.fromiter(itertools.chain.from_iterable(self.generators), dtype=np.int64, count=indptr[-1])
        data = np.ones(indptr[-1], dtype=np.float64)
        return sp.csr_matrix((data, indices, indptr), shape=(len(self.generators), self.n_qubits))

    @functools.cached_property
    def masks(self):
        """Generators as a BitMatrix (one row per gate)."""
        if not self.generators:
            return None
        return BitMatrix.from_array(self.incidence.toarray().astype(np.uint8))

    @functools.cached_property
    def weights(self):
        return np.array([len(g) for g in self.generators], dtype=np.int64)

    def mask_ints(self):
        """Generators as Python integer bitmasks (bit i set for qubit i)."""
        return [sum(1 << i for i in g) for g in self.generators]

    def with_ancillas(self):
        """One fresh ancilla qubit per gate: generator g_j becomes g_j + {n + j}."""
        n = self.n_qubits
        return GateSet(n + len(self), [g + (n + j,) for j, g in enumerate(self.generators)])


def check_params(gates, params):
    """Validate and return parameters as a float64 vector bound to ``gates``."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != len(gates):
        raise ValueError(f"expected {len(gates)} parameters, got shape {params.shape}")
    if not np.all(np.isfinite(params)):
        raise ValueError("parameters must be finite")
    return params


def all_k_local(n_qubits, max_weight):
    """Every generator acting on between 1 and ``max_weight`` qubits."""
    gens = [c for k in range(1, max_weight + 1) for c in itertools.combinations(range(n_qubits), k)]
    return GateSet(n_qubits, gens)


def two_local(n_qubits, singles=True):
    """All-to-all two-qubit generators, optionally preceded by the single-qubit ones."""
    gens = [(i,) for i in range(n_qubits)] if singles else []
    gens += list(itertools.combinations(range(n_qubits), 2))
    return GateSet(n_qubits, gens)


def graph_gates(n_qubits, edges, next_nearest=False, singles=True):
    """Two-qubit generators on graph edges, plus distance-2 pairs if ``next_nearest``."""
    adj = [set() for _ in range(n_qubits)]
    pairs = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            continue
        adj[i].add(j)
        adj[j].add(i)
        pairs.add((min(i, j), max(i, j)))
    if next_nearest:
        for v in range(n_qubits):
            for a, b in itertools.combinations(sorted(adj[v]), 2):
                pairs.add((a, b))
    gens = [(i,) for i in range(n_qubits)] if singles else []
    gens += sorted(pairs)
    return GateSet(n_qubits, gens)


def ring_triples(n_qubits):
    """Single-qubit gates followed by every triple of ring-adjacent qubits."""
    gens = [(i,) for i in range(n_qubits)]
    gens += [((i - 1) % n_qubits, i, (i + 1) % n_qubits) for i in range(n_qubits)]
    return GateSet(n_qubits, gens)


def random_gateset(n_qubits, n_gates, rng, max_weight=None):
    """Distinct random generators, for tests and benchmarks."""
    max_weight = n_qubits if max_weight is None else min(max_weight, n_qubits)
    gens = set()
    limit = sum(math.comb(n_qubits, k) for k in range(1, max_weight + 1))
    if n_gates > limit:
        raise ValueError(f"only {limit} distinct generators of weight <= {max_weight} exist")
    out = []
    while len(out) < n_gates:
        k = int(rng.integers(1, max_weight + 1))
        g = tuple(sorted(rng.choice(n_qubits, size=k, replace=False).tolist()))
        if g not in gens:
            gens.add(g)
            out.append(g)
    return GateSet(n_qubits, out)

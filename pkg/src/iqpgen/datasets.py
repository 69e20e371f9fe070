"""Synthetic datasets and bitstring file formats.

Ising models use spins ``s = 1 - 2x`` and energy
``E(s) = -sum_{(i,j)} w_ij s_i s_j - sum_i b_i s_i``, sampled by random-scan
single-site Metropolis with acceptance ``min(1, exp(-dE / T))``. With this
convention a positive bias favours ``s = +1``, i.e. bit value 0.
"""

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numba
import numpy as np

from .bits import BitMatrix, as_bitmatrix
from .rng import check_seed, derive_seed, make_rng

PACKED_MAGIC = b"IQPB"
PACKED_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class IsingSpec:
    n_nodes: int
    edges: np.ndarray
    weights: np.ndarray
    biases: np.ndarray
    temperature: float

    def __post_init__(self):
        n = int(self.n_nodes)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        biases = np.zeros(n) if self.biases is None else np.asarray(self.biases, dtype=np.float64).reshape(-1)
        if n < 1:
            raise ValueError("n_nodes must be positive")
        if len(weights) != len(edges):
            raise ValueError("one weight per edge required")
        if len(biases) != n:
            raise ValueError("one bias per node required")
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        if not (self.temperature > 0):
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "n_nodes", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "temperature", float(self.temperature))

    def neighbours(self):
        """CSR adjacency ``(indptr, indices, weights)``; parallel edges add up."""
        n = self.n_nodes
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        w = np.concatenate([self.weights, self.weights])
        order = np.argsort(src, kind="stable")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst[order].astype(np.int64), w[order]

    def degrees(self):
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def energy(self, bits):
        s = 1.0 - 2.0 * np.atleast_2d(np.asarray(bits, dtype=np.float64))
        pair = (s[:, self.edges[:, 0]] * s[:, self.edges[:, 1]]) @ self.weights
        return -pair - s @ self.biases

    def to_text(self):
        lines = [
            "format ising-spec 1",
            f"nodes {self.n_nodes}",
            f"temperature {self.temperature!r}",
            f"edges {len(self.edges)}",
        ]
        lines += [f"{i} {j} {w!r}" for (i, j), w in zip(self.edges.tolist(), self.weights.tolist())]
        lines.append("biases")
        lines += [repr(b) for b in self.biases.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [l.strip() for l in text.splitlines() if l.strip()]
        try:
            if lines[0] != "format ising-spec 1":
                raise ValueError("not an ising-spec file")
            n = int(lines[1].split()[1])
            temp = float(lines[2].split()[1])
            n_edges = int(lines[3].split()[1])
            rows = [l.split() for l in lines[4 : 4 + n_edges]]
            if lines[4 + n_edges] != "biases":
                raise ValueError("missing biases section")
            biases = [float(v) for v in lines[5 + n_edges :]]
        except (IndexError, ValueError) as exc:
            raise ValueError(f"malformed ising-spec text: {exc}") from None
        edges = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2)
        weights = np.array([float(r[2]) for r in rows])
        return cls(n, edges, weights, np.array(biases), temp)


def boltzmann_distribution(spec):
    """Exact Boltzmann probabilities over all ``2^n`` bitstrings (small n)."""
    n = spec.n_nodes
    if n > 20:
        raise ValueError("exact Boltzmann enumeration limited to 20 spins")
    bits = BitMatrix.from_indices(np.arange(2**n), n).to_array(np.float64)
    e = spec.energy(bits)
    logw = -e / spec.temperature
    w = np.exp(logw - logw.max())
    return w / w.sum()


@numba.njit(cache=True, nogil=True)
def acceptance(delta, beta):
    """Metropolis acceptance probability for an energy change ``delta`` at inverse temperature ``beta``."""
    x = -beta * delta
    if x >= 0.0:
        return 1.0
    return math.exp(x)


@numba.njit(cache=True, nogil=True)
def _local_field(spins, i, indptr, indices, weights, biases):
    h = biases[i]
    for k in range(indptr[i], indptr[i + 1]):
        h += weights[k] * spins[indices[k]]
    return h


@numba.njit(cache=True, nogil=True)
def _sweeps(spins, indptr, indices, weights, biases, beta, sites, uniforms, thin, out, out_pos):
    """Run ``len(sites)`` single-site updates; record a row after every ``thin`` sweeps if ``out`` has room."""
    n = spins.shape[0]
    for t in range(sites.shape[0]):
        i = sites[t]
        delta = 2.0 * spins[i] * _local_field(spins, i, indptr, indices, weights, biases)
        if uniforms[t] < acceptance(delta, beta):
            spins[i] = -spins[i]
        if (t + 1) % (n * thin) == 0 and out_pos < out.shape[0]:
            for k in range(n):
                out[out_pos, k] = 1 if spins[k] < 0 else 0
            out_pos += 1
    return out_pos


def metropolis_transition_matrix(spec):
    """Explicit random-scan Metropolis kernel ``P[x, y]`` over all ``2^n`` states."""
    n = spec.n_nodes
    if n > 12:
        raise ValueError("explicit kernel limited to 12 spins")
    indptr, indices, weights = spec.neighbours()
    beta = 0.0 if math.isinf(spec.temperature) else 1.0 / spec.temperature
    size = 2**n
    P = np.zeros((size, size))
    for x in range(size):
        spins = np.array([1.0 - 2.0 * ((x >> k) & 1) for k in range(n)])
        for i in range(n):
            delta = 2.0 * spins[i] * _local_field(spins, i, indptr, indices, weights, spec.biases)
            a = acceptance(delta, beta) / n
            P[x, x ^ (1 << i)] += a
            P[x, x] += 1.0 / n - a
    return P


@dataclass(frozen=True)
class McmcConfig:
    """Chains, burn-in and thinning are counted in sweeps of ``n`` single-site updates.

    ``n_samples`` rows are split as evenly as possible over the chains (earlier
    chains take the remainder) and merged in chain order.
    """

    n_chains: int = 8
    burn_in: int = 10_000
    n_samples: int = 10_000
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_chains", "n_samples", "thin"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if int(self.burn_in) < 0:
            raise ValueError("burn_in must be nonnegative")
        check_seed(self.seed)


_BLOCK_UPDATES = 1 << 20


def _run_chain(spec, cfg, chain, count, arrays):
    indptr, indices, weights = arrays
    n = spec.n_nodes
    beta = 0.0 if math.isinf(spec.temperature) else 1.0 / spec.temperature
    rng = make_rng(cfg.seed, "mcmc-chain", chain)
    spins = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    sweeps_per_block = max(cfg.thin, (_BLOCK_UPDATES // (n * cfg.thin)) * cfg.thin)
    dummy = np.zeros((0, n), dtype=np.uint8)
    left = cfg.burn_in
    while left > 0:
        k = min(left, sweeps_per_block)
        _sweeps(spins, indptr, indices, weights, spec.biases, beta,
                rng.integers(0, n, k * n), rng.random(k * n), 1, dummy, 0)
        left -= k
    out = np.zeros((count, n), dtype=np.uint8)
    pos = 0
    while pos < count:
        k = min((count - pos) * cfg.thin, sweeps_per_block)
        pos = _sweeps(spins, indptr, indices, weights, spec.biases, beta,
                      rng.integers(0, n, k * n), rng.random(k * n), cfg.thin, out, pos)
    return out


_threads = 1


def set_chain_threads(n):
    global _threads
    _threads = max(1, int(n))


def sample_ising(spec, cfg):
    """Metropolis samples from ``spec`` as a BitMatrix, chains merged in index order."""
    counts = [cfg.n_samples // cfg.n_chains + (c < cfg.n_samples % cfg.n_chains) for c in range(cfg.n_chains)]
    arrays = spec.neighbours()
    jobs = [(c, k) for c, k in enumerate(counts) if k > 0]
    with ThreadPoolExecutor(max_workers=min(_threads, len(jobs))) as pool:
        parts = list(pool.map(lambda job: _run_chain(spec, cfg, job[0], job[1], arrays), jobs))
    return BitMatrix.from_array(np.concatenate(parts, axis=0))


def lattice_edges(L):
    """Edges of the periodic ``L x L`` square lattice, node ``r * L + c``, without duplicates."""
    edges = set()
    for r in range(L):
        for c in range(L):
            i = r * L + c
            for j in (r * L + (c + 1) % L, ((r + 1) % L) * L + c):
                if i != j:
                    edges.add((min(i, j), max(i, j)))
    return np.array(sorted(edges), dtype=np.int64)


def gen_ising_2d(L=4, temperature=3.0, coupling_low=0.0, coupling_high=2.0, mcmc=McmcConfig()):
    """Samples from a periodic square-lattice Ising model with uniform random couplings and no biases."""
    L = int(L)
    if L < 2:
        raise ValueError("lattice side must be at least 2")
    if not coupling_low <= coupling_high:
        raise ValueError("coupling_low must not exceed coupling_high")
    edges = lattice_edges(L)
    w = make_rng(mcmc.seed, "couplings").uniform(coupling_low, coupling_high, len(edges))
    spec = IsingSpec(L * L, edges, w, np.zeros(L * L), temperature)
    return sample_ising(spec, mcmc), spec


def barabasi_albert_edges(n_nodes, m, seed):
    """Preferential-attachment graph.

    Starts from a star on nodes ``0..m`` (node ``m`` joined to the others);
    each later node attaches to ``m`` distinct earlier nodes drawn with
    probability proportional to degree. The graph has ``m (n - m)`` edges.
    """
    if not n_nodes > m >= 1:
        raise ValueError("need n_nodes > connectivity >= 1")
    rng = make_rng(seed, "barabasi-albert")
    edges = [(i, m) for i in range(m)]
    ends = [v for e in edges for v in e]
    for new in range(m + 1, n_nodes):
        targets = set()
        while len(targets) < m:
            targets.add(ends[int(rng.integers(len(ends)))])
        for t in sorted(targets):
            edges.append((t, new))
            ends += [t, new]
    return np.array(edges, dtype=np.int64)


def linear_degree_bias(scale=0.1):
    """Bias ``scale * degree``, favouring bit value 0 for ``scale > 0``."""
    return lambda degree: scale * np.asarray(degree, dtype=np.float64)


def gen_scale_free(n_nodes=1000, ba_connectivity=2, temperature=1.0, bias_fn=None, mcmc=McmcConfig(),
                   coupling=1.0):
    """Ising samples on a Barabasi-Albert graph with degree-dependent biases."""
    edges = barabasi_albert_edges(n_nodes, ba_connectivity, derive_seed(mcmc.seed, "graph"))
    spec0 = IsingSpec(n_nodes, edges, np.full(len(edges), float(coupling)), np.zeros(n_nodes), temperature)
    bias_fn = bias_fn or linear_degree_bias()
    spec = IsingSpec(n_nodes, edges, spec0.weights, bias_fn(spec0.degrees()), temperature)
    return sample_ising(spec, mcmc), spec


@dataclass(frozen=True)
class BlobSpec:
    patterns: BitMatrix = field(default_factory=lambda: default_blob_patterns())
    flip_prob: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "patterns", as_bitmatrix(self.patterns))
        if len(self.patterns) < 1:
            raise ValueError("need at least one pattern")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ValueError("flip_prob must lie in [0, 1/2)")


def default_blob_patterns():
    text = resources.files("iqpgen").joinpath("data/blob_patterns.txt").read_text()
    return BitMatrix.from_strings([l.strip() for l in text.splitlines() if l.strip() and not l.startswith("#")])


def gen_blobs(spec, count, seed, return_labels=False):
    """Pick a pattern uniformly per row, then flip each bit independently with ``flip_prob``."""
    count = int(count)
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = make_rng(seed, "blobs")
    labels = rng.integers(0, len(spec.patterns), count)
    base = spec.patterns.to_array()[labels]
    flips = rng.random(base.shape) < spec.flip_prob
    out = BitMatrix.from_array(base ^ flips)
    return (out, labels) if return_labels else out


def save_dataset(path, data, fmt="text"):
    data = as_bitmatrix(data)
    path = Path(path)
    if fmt == "text":
        path.write_text("".join(s + "\n" for s in data.to_strings()), encoding="ascii", newline="\n")
    elif fmt == "packed":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(PACKED_MAGIC, PACKED_VERSION, data.width, data.rows))
            fh.write(data.packed.tobytes())
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def load_dataset(path, fmt=None):
    """Read a text or packed dataset; the format is sniffed from the magic when not given."""
    raw = Path(path).read_bytes()
    if fmt is None:
        fmt = "packed" if raw[:4] == PACKED_MAGIC else "text"
    if fmt == "packed":
        if len(raw) < _HEADER.size:
            raise ValueError("packed dataset shorter than its header")
        magic, version, width, rows = _HEADER.unpack_from(raw)
        if magic != PACKED_MAGIC:
            raise ValueError("bad magic in packed dataset")
        if version != PACKED_VERSION:
            raise ValueError(f"unsupported packed dataset version {version}")
        if width < 1:
            raise ValueError("packed dataset declares zero width")
        stride = (width + 7) // 8
        payload = raw[_HEADER.size :]
        if len(payload) != rows * stride:
            raise ValueError(f"payload has {len(payload)} bytes, header implies {rows * stride}")
        return BitMatrix(np.frombuffer(payload, dtype=np.uint8).reshape(rows, stride), width)
    if fmt != "text":
        raise ValueError(f"unknown dataset format {fmt!r}")
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise ValueError("text dataset contains non-ASCII bytes") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError("dataset is empty")
    width = len(lines[0])
    for i, l in enumerate(lines):
        if len(l) != width:
            raise ValueError(f"line {i + 1}: width {len(l)}, expected {width}")
        if not l or l.strip("01"):
            raise ValueError(f"line {i + 1}: characters other than '0' and '1'")
    return BitMatrix.from_strings(lines)


def load_labels(path):
    return np.array([int(l) for l in Path(path).read_text().split()], dtype=np.int64)


def train_test_split(data, test_fraction, seed, return_indices=False):
    """Shuffle, then put ``floor(test_fraction * rows)`` rows in the test part.

    Both parts keep the original row order. With ``return_indices`` the row
    indices of each part are returned as well, e.g. to split labels alongside.
    """
    data = as_bitmatrix(data)
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(math.floor(test_fraction * len(data)))
    if n_test < 1 or n_test >= len(data):
        raise ValueError(f"split of {len(data)} rows at fraction {test_fraction} leaves an empty part")
    order = make_rng(seed, "split").permutation(len(data))
    train_idx, test_idx = np.sort(order[n_test:]), np.sort(order[:n_test])
    if return_indices:
        return data[train_idx], data[test_idx], train_idx, test_idx
    return data[train_idx], data[test_idx]

import math

import numpy as np
import pytest

from conftest import random_bits
from iqpgen.bits import BitMatrix
from iqpgen.datasets import (
    BlobSpec,
    IsingSpec,
    McmcConfig,
    barabasi_albert_edges,
    boltzmann_distribution,
    default_blob_patterns,
    gen_blobs,
    gen_ising_2d,
    gen_scale_free,
    lattice_edges,
    linear_degree_bias,
    load_dataset,
    metropolis_transition_matrix,
    sample_ising,
    save_dataset,
    train_test_split,
)


def test_blob_patterns_and_noise_free_rows():
    pats = default_blob_patterns()
    assert pats.shape == (8, 16)
    data, labels = gen_blobs(BlobSpec(flip_prob=0.0), 200, 0, return_labels=True)
    assert np.array_equal(data.to_array(), pats.to_array()[labels])


def test_blob_flip_rate_and_balance():
    spec = BlobSpec()
    data, labels = gen_blobs(spec, 20000, 1, return_labels=True)
    dist = (data.to_array() != spec.patterns.to_array()[labels]).sum(axis=1)
    # 16 bits flipped with probability 0.05
    assert dist.mean() == pytest.approx(0.8, abs=4 * math.sqrt(16 * 0.05 * 0.95 / 20000))
    freq = np.bincount(labels, minlength=8) / 20000
    assert np.all(np.abs(freq - 1 / 8) <= 4 * math.sqrt(1 / 8 * 7 / 8 / 20000))
    assert gen_blobs(spec, 50, 1) == gen_blobs(spec, 50, 1)


def test_blob_spec_validation():
    with pytest.raises(ValueError):
        BlobSpec(flip_prob=0.5)
    with pytest.raises(ValueError):
        gen_blobs(BlobSpec(), 0, 0)
    one = BlobSpec(patterns=BitMatrix.from_strings(["1100"]), flip_prob=0.49)
    assert gen_blobs(one, 10, 0).width == 4


def test_ising_spec_round_trip_and_checks():
    spec = IsingSpec(4, [[0, 1], [1, 2], [2, 3]], [0.5, -1.25, 1 / 3], [0.1, 0.0, -0.2, 0.3], 2.5)
    back = IsingSpec.from_text(spec.to_text())
    for a, b in zip((spec.edges, spec.weights, spec.biases), (back.edges, back.weights, back.biases)):
        assert np.array_equal(a, b)
    assert back.temperature == spec.temperature
    with pytest.raises(ValueError):
        IsingSpec(3, [[0, 0]], [1.0], None, 1.0)
    with pytest.raises(ValueError):
        IsingSpec(3, [[0, 1]], [1.0], None, 0.0)
    with pytest.raises(ValueError):
        IsingSpec.from_text("nonsense")


def test_lattice_edges():
    assert len(lattice_edges(4)) == 32
    assert len(lattice_edges(2)) == 4


def test_transition_matrix_is_stochastic_and_balanced():
    rng = np.random.default_rng(0)
    spec = IsingSpec(4, lattice_edges(2), rng.uniform(-1, 1, 4), rng.uniform(-0.5, 0.5, 4), 1.3)
    P = metropolis_transition_matrix(spec)
    pi = boltzmann_distribution(spec)
    assert np.allclose(P.sum(axis=1), 1.0)
    flow = pi[:, None] * P
    assert np.allclose(flow, flow.T, atol=1e-15)


def test_infinite_temperature_is_uniform():
    spec = IsingSpec(6, lattice_edges(2).tolist() + [[4, 5]], np.ones(5), np.ones(6), math.inf)
    x = sample_ising(spec, McmcConfig(n_chains=2, burn_in=10, n_samples=20000, seed=1))
    assert np.all(np.abs(x.to_array().mean(axis=0) - 0.5) <= 4 * 0.5 / math.sqrt(20000) * 3)


def test_zero_couplings_give_independent_bits():
    spec = IsingSpec(5, [[0, 1], [1, 2], [3, 4]], np.zeros(3), np.zeros(5), 1.0)
    x = sample_ising(spec, McmcConfig(n_chains=4, burn_in=5, n_samples=40000, seed=2)).to_array(np.float64)
    c = np.cov(x, rowvar=False)
    assert np.all(np.abs(c - np.diag(np.diag(c))) < 0.02)


def test_ising_marginals_match_boltzmann():
    rng = np.random.default_rng(3)
    spec = IsingSpec(4, lattice_edges(2), rng.uniform(0, 1, 4), rng.uniform(-0.3, 0.3, 4), 1.5)
    x = sample_ising(spec, McmcConfig(n_chains=4, burn_in=100, n_samples=100000, seed=3))
    freq = np.bincount(x.to_indices().astype(np.int64), minlength=16) / len(x)
    assert np.abs(freq - boltzmann_distribution(spec)).max() < 0.01


def test_gen_ising_2d_deterministic():
    cfg = McmcConfig(n_chains=2, burn_in=50, n_samples=100, seed=4)
    a, spec = gen_ising_2d(3, 3.0, mcmc=cfg)
    b, _ = gen_ising_2d(3, 3.0, mcmc=cfg)
    assert a == b and a.shape == (100, 9)
    assert np.all((spec.weights >= 0) & (spec.weights <= 2))
    with pytest.raises(ValueError):
        gen_ising_2d(1)


def test_barabasi_albert_edge_count():
    e = barabasi_albert_edges(1000, 2, 0)
    assert len(e) == 1996
    assert len({tuple(x) for x in e.tolist()}) == 1996
    assert np.array_equal(e, barabasi_albert_edges(1000, 2, 0))
    deg = np.bincount(e.ravel())
    # heavy tail: the largest hub is far above the mean degree of about 4
    assert deg.max() > 25
    with pytest.raises(ValueError):
        barabasi_albert_edges(2, 2, 0)


def test_scale_free_bias_sign():
    cfg = McmcConfig(n_chains=1, burn_in=200, n_samples=500, seed=5)
    strong, spec = gen_scale_free(100, 2, 1.0, bias_fn=linear_degree_bias(5.0), mcmc=cfg, coupling=0.0)
    assert strong.to_array().mean() < 0.01
    assert np.allclose(spec.biases, 5.0 * spec.degrees())
    flat, _ = gen_scale_free(100, 2, 1.0, bias_fn=linear_degree_bias(0.0), mcmc=cfg, coupling=0.0)
    assert abs(flat.to_array().mean() - 0.5) < 0.02


@pytest.mark.parametrize("fmt", ["text", "packed"])
def test_save_load_round_trip(tmp_path, fmt):
    data = random_bits(np.random.default_rng(6), 37, 13)
    path = tmp_path / f"d.{fmt}"
    save_dataset(path, data, fmt)
    assert load_dataset(path) == data
    assert load_dataset(path, fmt) == data


def test_text_and_packed_layout(tmp_path):
    p = tmp_path / "a.txt"
    p.write_bytes(b"0101\n0011\n")
    assert load_dataset(p).to_strings() == ["0101", "0011"]
    q = tmp_path / "a.bin"
    save_dataset(q, BitMatrix.from_strings(["0" * 10] * 3), "packed")
    assert q.stat().st_size == 16 + 3 * 2


@pytest.mark.parametrize("payload", [b"", b"01\n011\n", b"0a1\n", b"IQPB\x01\x00"])
def test_bad_dataset_files(tmp_path, payload):
    p = tmp_path / "bad"
    p.write_bytes(payload)
    with pytest.raises(ValueError):
        load_dataset(p)


def test_packed_payload_length_checked(tmp_path):
    p = tmp_path / "x.bin"
    save_dataset(p, BitMatrix.zeros(4, 9), "packed")
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(ValueError):
        load_dataset(p)


def test_train_test_split():
    data = random_bits(np.random.default_rng(7), 5008, 4)
    train, test = train_test_split(data, 1 / 3, 0)
    assert len(test) == 1669 and len(train) == 5008 - 1669
    again = train_test_split(data, 1 / 3, 0)
    assert again[0] == train and again[1] == test
    idx = np.sort(np.concatenate([train.to_indices(), test.to_indices()]))
    assert np.array_equal(idx, np.sort(data.to_indices()))
    tr, te, tri, tei = train_test_split(data, 1 / 3, 0, return_indices=True)
    assert tr == data[tri] and te == data[tei] and tr == train
    with pytest.raises(ValueError):
        train_test_split(data[:2], 0.4, 0)

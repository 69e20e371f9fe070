"""TOML run configuration with a fixed schema.

Every key has a type, a default and optionally a range check. Unknown
sections or keys and out-of-range values raise :class:`ConfigError` naming
the offending ``section.key``.
"""

import hashlib
import math
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _positive_list(v):
    return len(v) > 0 and all(x > 0 and math.isfinite(x) for x in v)


def _seed(v):
    return 0 <= v < 2**64


KINDS = ("iqp", "bitflip", "iqp_symmetrized", "symmetrized")
GATE_SPECS = ("two-local", "all-k-local", "graph", "explicit", "ring-triples")
GENERATORS = ("blobs", "ising2d", "scale-free")

# section -> key -> (type, default, check)
SCHEMA = {
    "": {"seed": (int, 0, _seed)},
    "model": {
        "n_qubits": (int, None, _positive),
        "gates": (str, "two-local", lambda v: v in GATE_SPECS),
        "max_weight": (int, 2, _positive),
        "edge_file": (str, "", None),
        "gate_file": (str, "", None),
        "next_nearest": (bool, False, None),
        "singles": (bool, True, None),
        "kind": (str, "iqp", lambda v: v.lower() in KINDS),
    },
    "init": {
        "method": (str, "datadep", lambda v: v in ("datadep", "uniform", "zeros")),
        "scale_two_qubit": (float, 0.1, _nonneg),
        "scale_other": (float, 0.0, _nonneg),
        "clamp_eps": (float, 1e-6, lambda v: 0 < v < 0.5),
    },
    "train": {
        "steps": (int, 1000, _nonneg),
        "learning_rate": (float, 0.01, _nonneg),
        "batch_a": (int, 1000, _positive),
        "batch_z": (int, 1000, lambda v: v >= 2),
        "sigmas": (list, None, _positive_list),
        "weights": (list, None, _positive_list),
        "median_rule": (bool, False, None),
        "convergence_window": (int, 50, _positive),
        "convergence_rel_tol": (float, 1e-3, _nonneg),
        "minibatch": (int, 0, lambda v: v == 0 or v >= 2),
    },
    "eval": {
        "sigmas": (list, None, _positive_list),
        "weights": (list, None, _positive_list),
        "repetitions": (int, 10, lambda v: v >= 2),
        "batch_a": (int, 1000, _positive),
        "batch_z": (int, 1000, lambda v: v >= 2),
        "covariance": (bool, True, None),
        "covariance_batch_z": (int, 1000, lambda v: v >= 2),
        "log_likelihood": (bool, True, None),
        "kgel_sigma": (float, 0.0, _nonneg),
        "kgel_witnesses": (int, 10, _positive),
        "kgel_tolerance": (float, 1e-6, _positive),
        "labels_file": (str, "", None),
    },
    "data": {
        "generator": (str, "blobs", lambda v: v in GENERATORS),
        "count": (int, 5000, _positive),
        "test_fraction": (float, 0.0, lambda v: 0 <= v < 1),
        "format": (str, "text", lambda v: v in ("text", "packed")),
        "flip_prob": (float, 0.05, lambda v: 0 <= v < 0.5),
        "pattern_file": (str, "", None),
        "side": (int, 4, lambda v: v >= 2),
        "temperature": (float, 3.0, _positive),
        "coupling_low": (float, 0.0, None),
        "coupling_high": (float, 2.0, None),
        "n_nodes": (int, 1000, lambda v: v >= 2),
        "connectivity": (int, 2, _positive),
        "bias_scale": (float, 0.1, None),
        "coupling": (float, 1.0, None),
        "chains": (int, 8, _positive),
        "burn_in": (int, 10_000, _nonneg),
        "thin": (int, 1, _positive),
    },
    "grid": {
        "learning_rate": (list, None, lambda v: len(v) > 0 and all(x >= 0 for x in v)),
        "scale_two_qubit": (list, None, lambda v: len(v) > 0 and all(x >= 0 for x in v)),
        "scale_other": (list, None, lambda v: len(v) > 0 and all(x >= 0 for x in v)),
        "steps": (int, 0, _nonneg),
        "final_steps": (int, 0, _nonneg),
        "validation_fraction": (float, 0.2, lambda v: 0 < v < 1),
        "validation_repetitions": (int, 3, _positive),
        "parallel_cells": (int, 1, _positive),
    },
    "bench": {
        "n": (list, [125, 250, 500, 1000], lambda v: len(v) > 0 and all(int(x) == x and x > 1 for x in v)),
        "batch_a": (int, 1000, _positive),
        "batch_z": (int, 1000, lambda v: v >= 2),
        "data_rows": (int, 1000, lambda v: v >= 2),
        "weight": (float, 2.0, _positive),
        "repeats": (int, 1, _positive),
    },
    "gradcheck": {
        "n_qubits": (int, 6, _positive),
        "n_gates": (int, 20, _positive),
        "batch_a": (int, 30, _positive),
        "batch_z": (int, 40, lambda v: v >= 2),
        "data_rows": (int, 50, lambda v: v >= 2),
        "step": (float, 1e-5, _positive),
        "threshold": (float, 0.0, _nonneg),
        "max_params": (int, 60, _positive),
    },
}


def _coerce(name, typ, value):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if typ is list and isinstance(value, list):
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
            raise ConfigError(f"{name}: expected a list of numbers")
        return [float(x) for x in value]
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(f"{name}: expected {typ.__name__}, got {type(value).__name__}")
    return value


class Config:
    """Validated configuration; ``cfg["train"]["steps"]`` style access with defaults filled in."""

    def __init__(self, raw=None, text=""):
        raw = raw or {}
        self.text = text
        self.values = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
        for key, value in raw.items():
            if isinstance(value, dict):
                if key not in SCHEMA or key == "":
                    raise ConfigError(f"unknown section [{key}]")
                for sub, v in value.items():
                    self._set(key, sub, v)
            else:
                self._set("", key, value)

    def _set(self, section, key, value):
        name = f"{section}.{key}" if section else key
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {name}")
        typ, _, check = SCHEMA[section][key]
        value = _coerce(name, typ, value)
        if check is not None and not check(value):
            raise ConfigError(f"{name}: value {value!r} is out of range")
        self.values[section][key] = value

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values[""]["seed"]

    def override_seed(self, seed):
        self._set("", "seed", seed)

    def digest(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_text(cls, text):
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from None
        return cls(raw, text)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from None

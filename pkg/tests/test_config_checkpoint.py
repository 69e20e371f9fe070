import numpy as np
import pytest

from iqpgen.checkpoint import Checkpoint
from iqpgen.circuit import GateSet, ModelKind, two_local
from iqpgen.config import Config, ConfigError


def test_defaults_and_overrides():
    cfg = Config.from_text("seed = 7\n[train]\nsteps = 3\nlearning_rate = 1\nsigmas = [1, 0.5]\n")
    assert cfg.seed == 7 and cfg["train"]["steps"] == 3
    assert cfg["train"]["learning_rate"] == 1.0 and cfg["train"]["sigmas"] == [1.0, 0.5]
    assert cfg["eval"]["repetitions"] == 10
    cfg.override_seed(11)
    assert cfg.seed == 11
    assert Config.from_text("").digest() != cfg.digest()


@pytest.mark.parametrize("text, needle", [
    ("[train]\nstepz = 3\n", "train.stepz"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("colour = 1\n", "colour"),
])
def test_unknown_keys_are_named(text, needle):
    with pytest.raises(ConfigError, match=needle):
        Config.from_text(text)


@pytest.mark.parametrize("text", [
    "[train]\nsteps = -1\n",
    "[train]\nbatch_z = 1\n",
    "[train]\nsteps = 1.5\n",
    "[train]\nsteps = true\n",
    "[model]\nkind = \"gaussian\"\n",
    "[eval]\nrepetitions = 1\n",
    "seed = -3\n",
    "[train\n",
])
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        Config.from_text(text)


def test_config_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        Config.load(tmp_path / "nope.toml")
    assert Config.load(None).seed == 0


def test_checkpoint_bit_exact_round_trip(tmp_path):
    g = GateSet(5, [(0,), (1, 3), (0, 2, 4), (4,)])
    params = np.array([np.pi / 3, 1e-300, -2.5e-17, 6.283185307179586])
    ck = Checkpoint(g, params, "bitflip", {"seed": 3, "sigmas": "1.3,0.6"})
    path = tmp_path / "m.ckpt"
    ck.save(path)
    back = Checkpoint.load(path)
    assert back.gates.generators == g.generators and back.gates.n_qubits == 5
    assert back.params.tobytes() == params.tobytes()
    assert back.kind is ModelKind.BITFLIP
    assert back.provenance == {"seed": "3", "sigmas": "1.3,0.6"}
    assert back.to_text() == ck.to_text()


def test_checkpoint_rejects_bad_input():
    g = two_local(3)
    with pytest.raises(ValueError):
        Checkpoint(g, np.zeros(len(g) + 1))
    text = Checkpoint(g, np.ones(len(g))).to_text()
    with pytest.raises(ValueError):
        Checkpoint.from_text(text.replace("iqpgen-checkpoint 1", "something else"))
    with pytest.raises(ValueError):
        Checkpoint.from_text("\n".join(text.split("\n")[:8]))
    with pytest.raises(ValueError):
        Checkpoint(g, np.zeros(len(g)), provenance={"two words": 1}).to_text()

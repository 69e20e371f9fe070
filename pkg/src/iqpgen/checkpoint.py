"""Plain-text model checkpoints.

Layout::

    iqpgen-checkpoint 1
    n_qubits <n>
    kind <iqp|bitflip|iqp_symmetrized>
    generators <m>
    <space-separated qubit indices, one generator per line>
    params <m>
    <one float per line, 17 significant digits>
    provenance
    <key> <value>   (free text to end of line)
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuit import GateSet, ModelKind, check_params

FORMAT_LINE = "iqpgen-checkpoint 1"


@dataclass
class Checkpoint:
    gates: GateSet
    params: np.ndarray
    kind: ModelKind = ModelKind.IQP
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        self.params = check_params(self.gates, self.params)

    def to_text(self):
        lines = [FORMAT_LINE, f"n_qubits {self.gates.n_qubits}", f"kind {self.kind.value}",
                 f"generators {len(self.gates)}"]
        lines += [" ".join(map(str, g)) for g in self.gates.generators]
        lines.append(f"params {len(self.params)}")
        lines += [format(float(p), ".17g") for p in self.params]
        lines.append("provenance")
        for k, v in self.provenance.items():
            if not k or any(c.isspace() for c in k):
                raise ValueError(f"provenance key {k!r} must be a nonempty word")
            lines.append(f"{k} {v}".rstrip())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.split("\n")
        pos = 0

        def take(prefix):
            nonlocal pos
            line = lines[pos]
            pos += 1
            head, _, rest = line.partition(" ")
            if head != prefix:
                raise ValueError(f"checkpoint line {pos}: expected '{prefix}', found {line!r}")
            return rest

        try:
            if lines[0] != FORMAT_LINE:
                raise ValueError("not an iqpgen checkpoint (or unsupported version)")
            pos = 1
            n = int(take("n_qubits"))
            kind = ModelKind.parse(take("kind"))
            m = int(take("generators"))
            gens = [tuple(int(t) for t in lines[pos + j].split()) for j in range(m)]
            pos += m
            if int(take("params")) != m:
                raise ValueError("parameter count differs from generator count")
            params = np.array([float(lines[pos + j]) for j in range(m)])
            pos += m
            take("provenance")
        except IndexError:
            raise ValueError("truncated checkpoint") from None
        prov = {}
        for line in lines[pos:]:
            if line.strip():
                k, _, v = line.partition(" ")
                prov[k] = v
        return cls(GateSet(n, gens), params, kind, prov)

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

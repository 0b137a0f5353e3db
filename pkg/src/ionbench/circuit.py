"""Circuit representation and dense statevector simulation.

Qubit 0 is the most significant bit of every bitstring and basis-state index.
Gate conventions:

    R(theta, phi) = exp(-i theta/2 (cos(phi) X + sin(phi) Y))
    RZ(theta)     = exp(-i theta/2 Z)
    XX(chi)       = exp(-i chi X(x)X)      maximally entangling at chi = +-pi/4
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class InvalidGateError(ValueError):
    pass


class EmptyRecordError(ValueError):
    pass


SINGLE_QUBIT_KINDS = frozenset({"R", "RZ", "H", "X", "Y", "Z"})
TWO_QUBIT_KINDS = frozenset({"XX", "CNOT", "CZ"})
NATIVE_KINDS = frozenset({"R", "RZ", "XX"})
_NUM_PARAMS = {"R": 2, "RZ": 1, "XX": 1, "H": 0, "X": 0, "Y": 0, "Z": 0, "CNOT": 0, "CZ": 0}

_SQ2 = 1 / math.sqrt(2)
_FIXED = {
    "H": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "CNOT": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
}


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind not in _NUM_PARAMS:
            raise InvalidGateError(f"unknown gate kind {self.kind!r}")
        arity = 1 if self.kind in SINGLE_QUBIT_KINDS else 2
        if len(self.targets) != arity:
            raise InvalidGateError(f"{self.kind} takes {arity} target(s), got {self.targets}")
        if arity == 2 and self.targets[0] == self.targets[1]:
            raise InvalidGateError(f"{self.kind} targets must be distinct, got {self.targets}")
        if any(t < 0 for t in self.targets):
            raise InvalidGateError(f"negative target in {self.targets}")
        if len(self.params) != _NUM_PARAMS[self.kind]:
            raise InvalidGateError(
                f"{self.kind} takes {_NUM_PARAMS[self.kind]} parameter(s), got {self.params}"
            )
        if not all(math.isfinite(p) for p in self.params):
            raise InvalidGateError(f"non-finite parameter in {self.params}")

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "targets": list(self.targets), "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        return cls(d["kind"], tuple(d["targets"]), tuple(d.get("params", ())))


# Constructors, mostly for readability at call sites.
def R(q: int, theta: float, phi: float) -> Gate:
    return Gate("R", (q,), (theta, phi))


def RZ(q: int, theta: float) -> Gate:
    return Gate("RZ", (q,), (theta,))


def XX(a: int, b: int, chi: float = math.pi / 4) -> Gate:
    return Gate("XX", (a, b), (chi,))


def H(q: int) -> Gate:
    return Gate("H", (q,))


def X(q: int) -> Gate:
    return Gate("X", (q,))


def Y(q: int) -> Gate:
    return Gate("Y", (q,))


def Z(q: int) -> Gate:
    return Gate("Z", (q,))


def CNOT(control: int, target: int) -> Gate:
    return Gate("CNOT", (control, target))


def CZ(a: int, b: int) -> Gate:
    return Gate("CZ", (a, b))


@dataclass
class Circuit:
    num_qubits: int
    gates: list[Gate] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ValueError("num_qubits must be positive")
        self.gates = list(self.gates)
        for g in self.gates:
            self._check(g)

    def _check(self, gate: Gate) -> None:
        if max(gate.targets) >= self.num_qubits:
            raise IndexError(f"gate {gate} out of range for {self.num_qubits} qubits")

    def append(self, gate: Gate) -> "Circuit":
        self._check(gate)
        self.gates.append(gate)
        return self

    def extend(self, gates: Iterable[Gate]) -> "Circuit":
        for g in gates:
            self.append(g)
        return self

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.num_qubits != self.num_qubits:
            raise ValueError("cannot concatenate circuits of different width")
        return Circuit(self.num_qubits, self.gates + other.gates, self.label)

    def __len__(self) -> int:
        return len(self.gates)

    def to_dict(self) -> dict:
        d = {"num_qubits": self.num_qubits, "gates": [g.to_dict() for g in self.gates]}
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Circuit":
        return cls(int(d["num_qubits"]), [Gate.from_dict(g) for g in d["gates"]], d.get("label", ""))

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


@dataclass
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    @classmethod
    def zero(cls, num_qubits: int) -> "StateVector":
        amps = np.zeros(2**num_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(num_qubits, amps)

    @classmethod
    def basis(cls, bits: str) -> "StateVector":
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[int(bits, 2)] = 1.0
        return cls(len(bits), amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())

    def equiv(self, other: "StateVector", atol: float = 1e-10) -> bool:
        """Equality up to global phase."""
        overlap = np.vdot(self.amplitudes, other.amplitudes)
        phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
        return bool(np.max(np.abs(self.amplitudes * phase - other.amplitudes)) < atol)


@dataclass
class MeasurementRecord:
    num_qubits: int
    shots: int
    counts: dict[str, int]

    def __post_init__(self):
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to shots")

    @classmethod
    def from_outcomes(cls, outcomes: np.ndarray, num_qubits: int) -> "MeasurementRecord":
        values, freq = np.unique(np.asarray(outcomes, dtype=np.int64), return_counts=True)
        counts = {format(int(v), f"0{num_qubits}b"): int(c) for v, c in zip(values, freq)}
        return cls(num_qubits, int(len(outcomes)), counts)

    def probability(self, bits: str) -> float:
        return self.counts.get(bits, 0) / self.shots

    def to_dict(self) -> dict:
        return {"num_qubits": self.num_qubits, "shots": self.shots, "counts": dict(sorted(self.counts.items()))}


def gate_unitary(gate: Gate) -> np.ndarray:
    """Matrix of ``gate`` on its own targets (first target is the high bit)."""
    k = gate.kind
    if k in _FIXED:
        return _FIXED[k].copy()
    if k == "R":
        theta, phi = gate.params
        c, s = math.cos(theta / 2), math.sin(theta / 2)
        return np.array(
            [[c, -1j * np.exp(-1j * phi) * s], [-1j * np.exp(1j * phi) * s, c]], dtype=complex
        )
    if k == "RZ":
        (theta,) = gate.params
        return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])
    if k == "XX":
        (chi,) = gate.params
        c, s = math.cos(chi), math.sin(chi)
        u = c * np.eye(4, dtype=complex)
        u[0, 3] = u[1, 2] = u[2, 1] = u[3, 0] = -1j * s
        return u
    raise InvalidGateError(f"unknown gate kind {k!r}")


def apply_matrix(amps: np.ndarray, matrix: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Apply a 1- or 2-qubit matrix to a flat amplitude array, returning a new array."""
    if len(targets) == 1:
        (q,) = targets
        psi = amps.reshape(1 << q, 2, 1 << (n - q - 1))
        out = np.empty_like(psi)
        a, b = psi[:, 0, :], psi[:, 1, :]
        out[:, 0, :] = matrix[0, 0] * a + matrix[0, 1] * b
        out[:, 1, :] = matrix[1, 0] * a + matrix[1, 1] * b
        return out.reshape(-1)
    q0, q1 = targets
    psi = amps.reshape([2] * n)
    u = matrix.reshape(2, 2, 2, 2)
    out = np.tensordot(u, psi, axes=([2, 3], [q0, q1]))
    return np.moveaxis(out, [0, 1], [q0, q1]).reshape(-1)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    if max(gate.targets) >= state.num_qubits:
        raise IndexError(f"gate {gate} out of range for {state.num_qubits} qubits")
    amps = apply_matrix(state.amplitudes, gate_unitary(gate), gate.targets, state.num_qubits)
    return StateVector(state.num_qubits, amps)


def run_circuit(circuit: Circuit, initial: StateVector | None = None) -> StateVector:
    if initial is None:
        initial = StateVector.zero(circuit.num_qubits)
    if initial.num_qubits != circuit.num_qubits:
        raise ValueError(
            f"state has {initial.num_qubits} qubits, circuit has {circuit.num_qubits}"
        )
    n = circuit.num_qubits
    amps = initial.amplitudes
    for g in circuit.gates:
        if max(g.targets) >= n:
            raise IndexError(f"gate {g} out of range for {n} qubits")
        amps = apply_matrix(amps, gate_unitary(g), g.targets, n)
    return StateVector(n, amps.copy() if amps is initial.amplitudes else amps)


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    """Dense unitary of ``circuit`` built column by column; meant for small widths."""
    n = circuit.num_qubits
    dim = 1 << n
    cols = np.eye(dim, dtype=complex)
    # propagate all basis columns at once by treating the column index as an extra axis
    block = cols.T.reshape(dim, *([2] * n))
    for g in circuit.gates:
        u = gate_unitary(g)
        axes = [t + 1 for t in g.targets]
        k = len(axes)
        out = np.tensordot(u.reshape([2] * (2 * k)), block, axes=(list(range(k, 2 * k)), axes))
        block = np.moveaxis(out, list(range(k)), axes)
    return block.reshape(dim, dim).T


def equivalent_up_to_phase(u: np.ndarray, v: np.ndarray, atol: float = 1e-9) -> bool:
    idx = np.unravel_index(np.argmax(np.abs(u)), u.shape)
    if abs(v[idx]) < 1e-12:
        return False
    phase = u[idx] / v[idx]
    phase /= abs(phase)
    return bool(np.max(np.abs(u - phase * v)) < atol)


def sample_outcomes(probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``shots`` basis-state indices from Born probabilities."""
    p = np.where(probs < 1e-12, 0.0, probs)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    return np.searchsorted(cdf, rng.random(shots), side="right").astype(np.int64)


def sample(state: StateVector, shots: int, rng_seed=None) -> MeasurementRecord:
    if shots < 1:
        raise EmptyRecordError("shots must be at least 1")
    rng = np.random.default_rng(rng_seed)
    outcomes = sample_outcomes(state.probabilities(), shots, rng)
    return MeasurementRecord.from_outcomes(outcomes, state.num_qubits)

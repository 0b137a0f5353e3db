"""Stochastic noise for native-gate circuits.

Three stages are applied to every shot, always in this order:

1. gate noise: after each noisy gate a uniformly random non-identity Pauli on
   the gate's support is inserted with a probability derived from the device
   fidelity of that gate (Monte-Carlo trajectories on the statevector);
2. crosstalk: classical single-bit corruption events on the sampled bitstring;
3. readout: independent per-bit flips (device SPAM plus detection
   mis-identification).

Trajectories are grouped by their error pattern, so each distinct pattern is
simulated once from the cached noiseless prefix state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuit import NATIVE_KINDS, Circuit, MeasurementRecord, apply_matrix, gate_unitary, sample_outcomes

NUM_IONS = 11
_PAULIS = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]


class SchemaError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


def _check_fidelity(value: float, what: str) -> float:
    value = float(value)
    if not (0.0 < value <= 1.0):
        raise ValidationError(f"{what} = {value} is outside (0, 1]")
    return value


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass
class DeviceModel:
    f_1q: list[float]
    f_spam: list[float]
    f_2q: dict[tuple[int, int], float]
    f_detect: float = 1.0
    f_2q_ci: dict[tuple[int, int], tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.f_1q)
        if len(self.f_spam) != n:
            raise SchemaError(f"f_spam has {len(self.f_spam)} entries, f_1q has {n}")
        self.f_1q = [_check_fidelity(v, f"f_1q[{i}]") for i, v in enumerate(self.f_1q)]
        self.f_spam = [_check_fidelity(v, f"f_spam[{i}]") for i, v in enumerate(self.f_spam)]
        self.f_detect = _check_fidelity(self.f_detect, "f_detect")
        pairs = {_pair(*k): _check_fidelity(v, f"f_2q{k}") for k, v in self.f_2q.items()}
        missing = [p for p in combinations(range(n), 2) if p not in pairs]
        if missing:
            raise SchemaError(f"f_2q is missing pairs {missing[:5]}{'...' if len(missing) > 5 else ''}")
        extra = [p for p in pairs if max(p) >= n]
        if extra:
            raise SchemaError(f"f_2q has pairs outside the register: {extra}")
        self.f_2q = pairs

    @property
    def num_qubits(self) -> int:
        return len(self.f_1q)

    def pair_fidelity(self, a: int, b: int) -> float:
        return self.f_2q[_pair(a, b)]

    def averages(self) -> dict[str, float]:
        return {
            "f_1q": float(np.mean(self.f_1q)),
            "f_2q": float(np.mean(list(self.f_2q.values()))),
            "f_spam": float(np.mean(self.f_spam)),
        }

    @classmethod
    def uniform(cls, num_qubits: int = NUM_IONS, f_1q: float = 1.0, f_2q: float = 1.0,
                f_spam: float = 1.0, f_detect: float = 1.0) -> "DeviceModel":
        return cls(
            [f_1q] * num_qubits,
            [f_spam] * num_qubits,
            {p: f_2q for p in combinations(range(num_qubits), 2)},
            f_detect,
        )

    def to_dict(self) -> dict:
        d = {
            "f_1q": list(self.f_1q),
            "f_spam": list(self.f_spam),
            "f_2q": {f"{a}-{b}": v for (a, b), v in sorted(self.f_2q.items())},
            "f_detect": self.f_detect,
        }
        if self.f_2q_ci:
            d["f_2q_ci"] = {f"{a}-{b}": list(v) for (a, b), v in sorted(self.f_2q_ci.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceModel":
        try:
            f_2q = {_parse_pair(k): v for k, v in d["f_2q"].items()}
            ci = {_parse_pair(k): tuple(v) for k, v in d.get("f_2q_ci", {}).items()}
            return cls(list(d["f_1q"]), list(d["f_spam"]), f_2q, d.get("f_detect", 1.0), ci)
        except KeyError as exc:
            raise SchemaError(f"device model is missing field {exc}") from None


def _parse_pair(key: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in key.split("-"))
    except ValueError:
        raise SchemaError(f"bad pair key {key!r}, expected 'i-j'") from None
    return _pair(a, b)


def default_device_path() -> Path:
    return Path(str(resources.files("ionbench") / "data" / "device_table.json"))


def load_device_model(path: str | Path | None = None) -> DeviceModel:
    """Read a device model JSON; ``None`` loads the shipped device table."""
    path = default_device_path() if path is None else Path(path)
    with open(path) as fh:
        data = json.load(fh)
    return DeviceModel.from_dict(data)


def pauli_rate_from_fidelity(fidelity: float, support: int, convention: str = "process") -> float:
    """Probability of inserting a uniformly random non-identity Pauli on ``support`` qubits.

    ``process`` reads the fidelity as a process fidelity, so the rate is simply
    ``1 - F``. ``average`` reads it as an average gate fidelity, which for this
    channel is also the fidelity of any pure state it acts on (Bell states
    included): rate = (1 - F)(d + 1)/d. ``decay`` reads it as the depolarizing
    parameter that an RB decay measures: rate = (1 - F)(d^2 - 1)/d^2.
    ``matched`` uses ``decay`` for one qubit and ``average`` for two, i.e. how
    single-qubit RB and Bell-state tomography respectively report fidelity.
    """
    if support not in (1, 2):
        raise ValidationError(f"support must be 1 or 2 qubits, got {support}")
    _check_fidelity(fidelity, "fidelity")
    d = 2**support
    infid = 1.0 - fidelity
    if convention == "matched":
        convention = "decay" if support == 1 else "average"
    if convention == "process":
        return infid
    if convention == "average":
        return min(1.0, infid * (d + 1) / d)
    if convention == "decay":
        return min(1.0, infid * (d * d - 1) / (d * d))
    raise ValidationError(f"unknown fidelity convention {convention!r}")


@dataclass
class CrosstalkModel:
    p_event: float
    mode: str = "to-zero"  # or "either"
    num_applications: int = 1
    applies_to: tuple[int, ...] = ()
    # False: one event per application point hitting one uniformly chosen qubit.
    # True: every qubit in applies_to is hit independently with p_event.
    per_qubit: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_event <= 1.0:
            raise ValidationError(f"p_event = {self.p_event} is outside [0, 1]")
        if self.num_applications < 0:
            raise ValidationError("num_applications must be >= 0")
        if self.mode not in ("to-zero", "either"):
            raise ValidationError(f"unknown crosstalk mode {self.mode!r}")
        self.applies_to = tuple(int(q) for q in self.applies_to)
        if not self.applies_to and self.p_event > 0 and self.num_applications > 0:
            raise ConfigurationError("crosstalk with p_event > 0 needs a non-empty applies_to")


@dataclass
class NoiseConfig:
    crosstalk: CrosstalkModel | None = None
    detection_misid: float = 0.0
    pauli_from_device: bool = False
    device: DeviceModel | None = None
    fidelity_convention: str = "process"
    include_1q: bool = True
    include_2q: bool = True
    include_spam: bool = True

    def __post_init__(self):
        if not 0.0 <= self.detection_misid <= 1.0:
            raise ValidationError(f"detection_misid = {self.detection_misid} is outside [0, 1]")
        if self.pauli_from_device and self.device is None:
            raise ConfigurationError("pauli_from_device is set but no device model was given")

    @property
    def is_noiseless(self) -> bool:
        xt = self.crosstalk
        return (
            not self.pauli_from_device
            and self.detection_misid == 0
            and (xt is None or xt.p_event == 0 or xt.num_applications == 0)
        )


# -- classical stages -----------------------------------------------------------


def _bit_mask(q: int, n: int) -> int:
    return 1 << (n - 1 - q)


def crosstalk_outcomes(outcomes: np.ndarray, n: int, model: CrosstalkModel,
                       rng: np.random.Generator) -> np.ndarray:
    """Vectorized crosstalk over integer-encoded ``n``-bit outcomes."""
    out = np.array(outcomes, dtype=np.int64, copy=True)
    if model.p_event == 0 or model.num_applications == 0:
        return out
    targets = np.array([_bit_mask(q, n) for q in model.applies_to], dtype=np.int64)
    for _ in range(model.num_applications):
        if model.per_qubit:
            hit = rng.random((len(out), len(targets))) < model.p_event
            masks = (hit * targets).sum(axis=1)  # disjoint bits, so sum == OR
        else:
            event = rng.random(len(out)) < model.p_event
            masks = np.where(event, targets[rng.integers(len(targets), size=len(out))], 0)
        if model.mode == "to-zero":
            out &= ~masks
        else:
            out ^= masks
    return out


def readout_outcomes(outcomes: np.ndarray, flip_probs: Sequence[float],
                     rng: np.random.Generator) -> np.ndarray:
    """Independently flip bit ``q`` of every outcome with ``flip_probs[q]``."""
    n = len(flip_probs)
    p = np.asarray(flip_probs, dtype=float)
    out = np.array(outcomes, dtype=np.int64, copy=True)
    if not np.any(p > 0):
        return out
    flips = rng.random((len(out), n)) < p
    weights = np.array([_bit_mask(q, n) for q in range(n)], dtype=np.int64)
    return out ^ (flips * weights).sum(axis=1)


def _str_to_int(bits: str) -> int:
    return int(bits, 2) if bits else 0


def apply_crosstalk_event(bits: str, model: CrosstalkModel, rng: np.random.Generator) -> str:
    """Apply every configured crosstalk application point to one bitstring."""
    n = len(bits)
    if model.applies_to and max(model.applies_to) >= n:
        raise ValidationError("bitstring is shorter than the crosstalk register")
    out = crosstalk_outcomes(np.array([_str_to_int(bits)]), n, model, rng)
    return format(int(out[0]), f"0{n}b")


def apply_detection_error(bits: str, p: float, rng: np.random.Generator) -> str:
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p = {p} is outside [0, 1]")
    n = len(bits)
    out = readout_outcomes(np.array([_str_to_int(bits)]), [p] * n, rng)
    return format(int(out[0]), f"0{n}b")


# -- gate noise -------------------------------------------------------------------


def gate_error_rates(circuit: Circuit, config: NoiseConfig,
                     noisy_gates: Sequence[int] | None = None) -> np.ndarray:
    """Per-gate Pauli insertion probability under ``config`` (zero for RZ)."""
    rates = np.zeros(len(circuit.gates))
    if not config.pauli_from_device:
        return rates
    dev = config.device
    if dev is None:
        raise ConfigurationError("pauli_from_device is set but no device model was given")
    if circuit.num_qubits > dev.num_qubits:
        raise ConfigurationError(
            f"circuit uses {circuit.num_qubits} qubits, device model has {dev.num_qubits}"
        )
    allowed = set(range(len(circuit.gates))) if noisy_gates is None else set(noisy_gates)
    conv = config.fidelity_convention
    for i, g in enumerate(circuit.gates):
        if g.kind not in NATIVE_KINDS:
            raise ConfigurationError(f"device noise needs a native circuit, found {g.kind}")
        if i not in allowed:
            continue
        if g.kind == "R" and config.include_1q:
            rates[i] = pauli_rate_from_fidelity(dev.f_1q[g.targets[0]], 1, conv)
        elif g.kind == "XX" and config.include_2q:
            rates[i] = pauli_rate_from_fidelity(dev.pair_fidelity(*g.targets), 2, conv)
    return rates


def readout_flip_probs(n: int, config: NoiseConfig) -> list[float]:
    d = config.detection_misid
    probs = []
    for q in range(n):
        e = 0.0
        if config.pauli_from_device and config.include_spam and config.device is not None:
            e = 1.0 - config.device.f_spam[q]
        probs.append(e + d - 2 * e * d)
    return probs


class TrajectorySampler:
    """Samples noisy outcomes of one circuit, reusing work across shots.

    Each shot draws its Pauli insertions up front; shots sharing an error
    pattern share one statevector simulation that starts from the cached
    noiseless state just before the first error.
    """

    def __init__(self, circuit: Circuit, rates: np.ndarray):
        self.circuit = circuit
        self.n = circuit.num_qubits
        self.rates = np.asarray(rates, dtype=float)
        self.sites = np.flatnonzero(self.rates > 0)
        self._mats = [gate_unitary(g) for g in circuit.gates]
        self._prefix = self._noiseless_prefix()
        self._cache: dict[tuple, np.ndarray] = {}

    def _noiseless_prefix(self) -> list[np.ndarray]:
        amps = np.zeros(2**self.n, dtype=complex)
        amps[0] = 1.0
        states = [amps]
        for g, m in zip(self.circuit.gates, self._mats):
            amps = apply_matrix(amps, m, g.targets, self.n)
            states.append(amps)
        return states

    @property
    def ideal_probs(self) -> np.ndarray:
        return self._probs(())

    def _probs(self, pattern: tuple) -> np.ndarray:
        hit = self._cache.get(pattern)
        if hit is not None:
            return hit
        if not pattern:
            amps = self._prefix[-1]
        else:
            errors = dict(pattern)
            start = pattern[0][0]
            amps = self._prefix[start + 1]
            gates = self.circuit.gates
            for i in range(start, len(gates)):
                if i > start:
                    amps = apply_matrix(amps, self._mats[i], gates[i].targets, self.n)
                if i in errors:
                    amps = self._insert_pauli(amps, gates[i].targets, errors[i])
        probs = np.abs(amps) ** 2
        self._cache[pattern] = probs
        return probs

    def _insert_pauli(self, amps: np.ndarray, targets: tuple[int, ...], index: int) -> np.ndarray:
        if len(targets) == 1:
            return apply_matrix(amps, _PAULIS[index], targets, self.n)
        hi, lo = divmod(index, 4)
        if hi:
            amps = apply_matrix(amps, _PAULIS[hi], targets[:1], self.n)
        if lo:
            amps = apply_matrix(amps, _PAULIS[lo], targets[1:], self.n)
        return amps

    def sample(self, shots: int, rng: np.random.Generator) -> np.ndarray:
        outcomes = np.empty(shots, dtype=np.int64)
        if len(self.sites) == 0:
            outcomes[:] = sample_outcomes(self.ideal_probs, shots, rng)
            return outcomes
        site_rates = self.rates[self.sites]
        supports = np.array([len(self.circuit.gates[i].targets) for i in self.sites])
        hit = rng.random((shots, len(self.sites))) < site_rates
        paulis = rng.integers(1, 4**supports, size=(shots, len(self.sites)))
        groups: dict[tuple, list[int]] = {(): []}
        dirty = hit.any(axis=1)
        groups[()] = list(np.flatnonzero(~dirty))
        for s in np.flatnonzero(dirty):
            cols = np.flatnonzero(hit[s])
            key = tuple((int(self.sites[c]), int(paulis[s, c])) for c in cols)
            groups.setdefault(key, []).append(int(s))
        for key, members in groups.items():
            if not members:
                continue
            outcomes[members] = sample_outcomes(self._probs(key), len(members), rng)
        return outcomes


def _as_circuit(compiled) -> Circuit:
    return compiled.circuit if hasattr(compiled, "circuit") else compiled


def noisy_outcomes(compiled, config: NoiseConfig, shots: int, rng: np.random.Generator,
                   noisy_gates: Sequence[int] | None = None,
                   sampler: TrajectorySampler | None = None) -> np.ndarray:
    """Integer-encoded outcomes of ``shots`` noisy executions (qubit 0 = MSB)."""
    circuit = _as_circuit(compiled)
    if sampler is None:
        sampler = TrajectorySampler(circuit, gate_error_rates(circuit, config, noisy_gates))
    out = sampler.sample(shots, rng)
    if config.crosstalk is not None:
        out = crosstalk_outcomes(out, circuit.num_qubits, config.crosstalk, rng)
    return readout_outcomes(out, readout_flip_probs(circuit.num_qubits, config), rng)


def noisy_run(compiled, config: NoiseConfig, shots: int, rng_seed,
              noisy_gates: Sequence[int] | None = None) -> MeasurementRecord:
    """Sample ``shots`` noisy executions; deterministic for a given seed.

    ``rng_seed`` may be an int or a sequence of ints (e.g. ``(seed, oracle)``).
    ``noisy_gates`` restricts gate noise to the listed gate indices.
    """
    if shots < 1:
        raise ValueError("shots must be at least 1")
    circuit = _as_circuit(compiled)
    rng = np.random.default_rng(rng_seed)
    out = noisy_outcomes(circuit, config, shots, rng, noisy_gates)
    return MeasurementRecord.from_outcomes(out, circuit.num_qubits)


# -- presets ----------------------------------------------------------------------

PRESETS = ("none", "methods-bv", "methods-hs", "device-pauli")


def preset(name: str, register: Sequence[int] = tuple(range(10)),
           device: DeviceModel | None = None) -> NoiseConfig:
    """Noise presets; the Methods presets use the published parameters verbatim."""
    if name == "none":
        return NoiseConfig()
    if name == "methods-bv":
        return NoiseConfig(CrosstalkModel(0.03, "to-zero", 2, tuple(register)), detection_misid=0.002)
    if name == "methods-hs":
        return NoiseConfig(CrosstalkModel(0.01, "either", 5, tuple(register)), detection_misid=0.002)
    if name == "device-pauli":
        return NoiseConfig(
            pauli_from_device=True, device=device or load_device_model(), fidelity_convention="matched"
        )
    raise ConfigurationError(f"unknown noise preset {name!r}; choose from {', '.join(PRESETS)}")


def bell_state_fidelity(rate: float) -> float:
    """Fidelity of a Bell state after a two-qubit uniform Pauli error of probability ``rate``.

    Three of the fifteen non-identity Paulis stabilize the Bell state.
    """
    return 1.0 - rate * 12.0 / 15.0


"""Lowering of standard-gate circuits to the trapped-ion native set {R, RZ, XX}.

``decompose`` rewrites every gate into native kinds, spending exactly one XX per
CNOT or CZ on the requested pair (the device is fully connected, so no routing
or SWAP insertion ever happens). ``optimize`` is a peephole pass: maximal runs
of single-qubit gates on a wire are multiplied out and re-emitted in the
canonical form ``RZ(gamma)`` then ``R(theta, phi)`` with theta in [0, pi], and
directly adjacent XX gates on the same pair are fused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    NATIVE_KINDS,
    Circuit,
    Gate,
    StateVector,
    circuit_unitary,
    equivalent_up_to_phase,
    gate_unitary,
    run_circuit,
)

_EPS = 1e-10
_DENSE_CHECK_MAX_QUBITS = 6


class CompileError(ValueError):
    pass


@dataclass
class CompilerOptions:
    enable_merge: bool = True
    enable_rz_virtualization: bool = True
    equivalence_check: bool = False
    # sign of the calibrated XX angle per unordered pair; missing pairs are +1
    xx_signs: dict[tuple[int, int], int] = field(default_factory=dict)

    def xx_sign(self, a: int, b: int) -> int:
        return self.xx_signs.get((min(a, b), max(a, b)), 1)


@dataclass
class CompiledCircuit:
    circuit: Circuit
    provenance: str = ""
    rz_virtual: bool = True

    def __post_init__(self):
        bad = {g.kind for g in self.circuit.gates} - NATIVE_KINDS
        if bad:
            raise CompileError(f"non-native gates in compiled circuit: {sorted(bad)}")

    @property
    def counts(self) -> dict[str, int]:
        return gate_counts(self)

    def sidecar(self) -> dict:
        return {"label": self.provenance, **self.counts}


def gate_counts(compiled: CompiledCircuit) -> dict[str, int]:
    """Two-qubit count ``n_2q`` (XX gates) and single-qubit count ``n_1q``.

    RZ gates are reported as ``n_rz`` and only count towards ``n_1q`` when the
    circuit was compiled without RZ virtualization.
    """
    kinds = [g.kind for g in compiled.circuit.gates]
    n_r, n_rz, n_xx = kinds.count("R"), kinds.count("RZ"), kinds.count("XX")
    n_1q = n_r if compiled.rz_virtual else n_r + n_rz
    return {"n_1q": n_1q, "n_2q": n_xx, "n_rz": n_rz}


def _wrap(angle: float) -> float:
    """Map to (-pi, pi]."""
    a = math.remainder(angle, 2 * math.pi)
    return math.pi if a <= -math.pi + 1e-15 else a


def synthesize_1q(u: np.ndarray, q: int) -> list[Gate]:
    """Canonical native gates for a 2x2 unitary, equal to ``u`` up to global phase.

    The result is ``[RZ(gamma), R(theta, phi)]`` (time order) with trivial
    factors omitted; theta is in [0, pi], and for theta = pi gamma is folded
    into phi.
    """
    c, s = abs(u[0, 0]), abs(u[1, 0])
    theta = 2 * math.atan2(s, c)
    if s < _EPS:
        gamma = _wrap(np.angle(u[1, 1]) - np.angle(u[0, 0]))
        return [] if abs(gamma) < _EPS else [Gate("RZ", (q,), (gamma,))]
    if c < _EPS:
        phi = _wrap((np.angle(u[1, 0]) - np.angle(u[0, 1])) / 2)
        return [Gate("R", (q,), (math.pi, phi))]
    gamma = _wrap(np.angle(u[1, 1]) - np.angle(u[0, 0]))
    phi = _wrap(np.angle(u[1, 0]) - np.angle(u[0, 0]) + math.pi / 2)
    out = [] if abs(gamma) < _EPS else [Gate("RZ", (q,), (gamma,))]
    out.append(Gate("R", (q,), (theta, phi)))
    return out


def _cnot(control: int, target: int, sign: int) -> list[Gate]:
    h = math.pi / 2
    return [
        Gate("R", (control,), (h, h)),
        Gate("XX", (control, target), (sign * math.pi / 4,)),
        Gate("R", (control,), (-sign * h, 0.0)),
        Gate("R", (target,), (-sign * h, 0.0)),
        Gate("R", (control,), (-h, h)),
    ]


def _lower(gate: Gate, options: CompilerOptions) -> list[Gate]:
    k = gate.kind
    if k in NATIVE_KINDS:
        return [gate]
    if k in ("H", "X", "Y", "Z"):
        return synthesize_1q(gate_unitary(gate), gate.targets[0])
    if k == "CNOT":
        c, t = gate.targets
        return _cnot(c, t, options.xx_sign(c, t))
    if k == "CZ":
        a, b = gate.targets
        hb = synthesize_1q(gate_unitary(Gate("H", (b,))), b)
        return hb + _cnot(a, b, options.xx_sign(a, b)) + hb
    raise CompileError(f"unsupported gate kind {k!r}")


def decompose(circuit: Circuit, options: CompilerOptions | None = None) -> CompiledCircuit:
    """Rewrite ``circuit`` into native gates without any optimization."""
    options = options or CompilerOptions()
    gates: list[Gate] = []
    for g in circuit.gates:
        gates.extend(_lower(g, options))
    out = CompiledCircuit(
        Circuit(circuit.num_qubits, gates, circuit.label),
        provenance=circuit.label,
        rz_virtual=options.enable_rz_virtualization,
    )
    if options.equivalence_check:
        check_equivalence(circuit, out.circuit)
    return out


def _is_identity_gate(g: Gate) -> bool:
    if g.kind == "XX":
        return abs(math.remainder(g.params[0], math.pi)) < _EPS
    if g.kind == "R":
        return abs(math.remainder(g.params[0], 2 * math.pi)) < _EPS
    if g.kind == "RZ":
        return abs(math.remainder(g.params[0], 2 * math.pi)) < _EPS
    return False


def _physical_cost(gates: list[Gate], rz_virtual: bool) -> int:
    return sum(1 for g in gates if g.kind == "R" or (g.kind == "RZ" and not rz_virtual))


def optimize(compiled: CompiledCircuit, options: CompilerOptions | None = None) -> CompiledCircuit:
    options = options or CompilerOptions()
    src = compiled.circuit
    rz_virtual = options.enable_rz_virtualization
    if not options.enable_merge:
        gates = [g for g in src.gates if not _is_identity_gate(g)]
        return CompiledCircuit(Circuit(src.num_qubits, gates, src.label), compiled.provenance, rz_virtual)

    out: list[Gate | None] = []
    last_on: dict[int, int] = {}  # qubit -> index in out of the last gate touching it
    pending: dict[int, tuple[np.ndarray, list[Gate]]] = {}

    def emit(g: Gate) -> None:
        out.append(g)
        for t in g.targets:
            last_on[t] = len(out) - 1

    def flush(q: int) -> None:
        if q not in pending:
            return
        u, originals = pending.pop(q)
        canon = synthesize_1q(u, q)
        # never trade a run for a physically longer one
        if _physical_cost(canon, rz_virtual) > _physical_cost(originals, rz_virtual):
            canon = [g for g in originals if not _is_identity_gate(g)]
        for g in canon:
            emit(g)

    for g in src.gates:
        if g.num_targets == 1:
            q = g.targets[0]
            u, originals = pending.get(q, (np.eye(2, dtype=complex), []))
            pending[q] = (gate_unitary(g) @ u, originals + [g])
            continue
        a, b = g.targets
        flush(a)
        flush(b)
        prev = last_on.get(a)
        if (
            prev is not None
            and prev == last_on.get(b)
            and out[prev] is not None
            and out[prev].kind == "XX"
            and set(out[prev].targets) == {a, b}
        ):
            chi = out[prev].params[0] + g.params[0]
            if abs(math.remainder(chi, math.pi)) < _EPS:
                out[prev] = None
                # the wires fall back to whatever preceded the fused pair
                for t in (a, b):
                    idx = [i for i, x in enumerate(out) if x is not None and t in x.targets]
                    if idx:
                        last_on[t] = idx[-1]
                    else:
                        last_on.pop(t, None)
            else:
                out[prev] = Gate("XX", out[prev].targets, (chi,))
            continue
        emit(g)
    for q in sorted(pending):
        flush(q)

    gates = [g for g in out if g is not None]
    result = CompiledCircuit(Circuit(src.num_qubits, gates, src.label), compiled.provenance, rz_virtual)
    if options.equivalence_check:
        check_equivalence(src, result.circuit)
    return result


def compile_circuit(circuit: Circuit, options: CompilerOptions | None = None) -> CompiledCircuit:
    options = options or CompilerOptions()
    return optimize(decompose(circuit, options), options)


def check_equivalence(a: Circuit, b: Circuit, atol: float = 1e-9, seed: int = 0) -> None:
    """Raise CompileError unless ``a`` and ``b`` agree up to a global phase.

    Narrow circuits are compared as dense unitaries; wider ones by their action
    on a few random states (and a superposition of them, which pins the phase
    to be common).
    """
    if a.num_qubits != b.num_qubits:
        raise CompileError("width mismatch")
    n = a.num_qubits
    if n <= _DENSE_CHECK_MAX_QUBITS:
        if not equivalent_up_to_phase(circuit_unitary(a), circuit_unitary(b), atol):
            raise CompileError("compiled circuit is not equivalent to its source")
        return
    rng = np.random.default_rng(seed)
    vecs = [rng.normal(size=2**n) + 1j * rng.normal(size=2**n) for _ in range(2)]
    vecs.append(vecs[0] + vecs[1])
    phases = []
    for v in vecs:
        s = StateVector(n, v / np.linalg.norm(v))
        ua, ub = run_circuit(a, s).amplitudes, run_circuit(b, s).amplitudes
        ov = np.vdot(ub, ua)
        if abs(abs(ov) - 1) > atol:
            raise CompileError("compiled circuit is not equivalent to its source")
        phases.append(ov / abs(ov))
    if max(abs(p - phases[0]) for p in phases) > math.sqrt(atol):
        raise CompileError("compiled circuit differs from its source by a relative phase")

"""Bernstein-Vazirani and Hidden-Shift oracle circuits, full sweeps and metrics.

Oracle index ``k`` is the integer value of the hidden string read
most-significant-qubit first, and process-matrix rows/columns use the same
convention (row = oracle, column = measured register value).
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuit import CNOT, CZ, Circuit, H, MeasurementRecord, X, Z
from .compiler import CompilerOptions, compile_circuit
from .noise import NoiseConfig, TrajectorySampler, gate_error_rates, noisy_outcomes

log = logging.getLogger(__name__)

REGISTER = 10
BQP_THRESHOLD = 2 / 3
AXIS_CONVENTION = "row=oracle integer, column=register integer, qubit 0 = most significant bit"


class EmptyAfterConditioningError(RuntimeError):
    pass


def _check_bits(bits: str, even: bool = False) -> str:
    if not bits or set(bits) - {"0", "1"}:
        raise ValueError(f"not a bitstring: {bits!r}")
    if even and len(bits) % 2:
        raise ValueError(f"hidden shift needs an even number of bits, got {len(bits)}")
    return bits


@dataclass(frozen=True)
class BVOracle:
    c: str

    def __post_init__(self):
        _check_bits(self.c)

    @classmethod
    def from_index(cls, index: int, width: int = REGISTER) -> "BVOracle":
        return cls(format(index, f"0{width}b"))


@dataclass(frozen=True)
class HSOracle:
    s: str

    def __post_init__(self):
        _check_bits(self.s, even=True)

    @classmethod
    def from_index(cls, index: int, width: int = REGISTER) -> "HSOracle":
        return cls(format(index, f"0{width}b"))


def build_bv_circuit(oracle: BVOracle) -> Circuit:
    """Textbook BV circuit; the ancilla is the last qubit.

    The ancilla gets a closing H so that its ideal measured value is a
    definite 1, which is what ancilla conditioning compares against.
    """
    n = len(oracle.c)
    anc = n
    circ = Circuit(n + 1, label=f"bv-{oracle.c}")
    circ.extend([X(anc), H(anc)])
    circ.extend(H(q) for q in range(n))
    circ.extend(CNOT(q, anc) for q, bit in enumerate(oracle.c) if bit == "1")
    circ.extend(H(q) for q in range(n))
    circ.append(H(anc))
    return circ


def build_hs_circuit(oracle: HSOracle) -> Circuit:
    """Hidden shift for the inner-product bent function on pairs (0,1), (2,3), ...

    The shifted oracle (-1)^f(x+s) expands to one CZ per pair plus Z on the
    first qubit of a pair when the second bit of s is set, and vice versa; the
    constant s_a s_b term is a global phase. The inner-product function is its
    own dual, so the second oracle is the bare CZ layer.
    """
    s = oracle.s
    n = len(s)
    circ = Circuit(n, label=f"hs-{s}")
    circ.extend(H(q) for q in range(n))
    for a in range(0, n, 2):
        b = a + 1
        circ.append(CZ(a, b))
        if s[b] == "1":
            circ.append(Z(a))
        if s[a] == "1":
            circ.append(Z(b))
    circ.extend(H(q) for q in range(n))
    circ.extend(CZ(a, a + 1) for a in range(0, n, 2))
    circ.extend(H(q) for q in range(n))
    return circ


def condition_outcomes(outcomes: np.ndarray, ancilla_value: int = 1) -> tuple[np.ndarray, float]:
    """Keep shots whose ancilla (lowest bit) equals ``ancilla_value``; strip that bit."""
    outcomes = np.asarray(outcomes, dtype=np.int64)
    keep = (outcomes & 1) == ancilla_value
    kept = outcomes[keep] >> 1
    return kept, (float(keep.mean()) if len(outcomes) else 0.0)


def condition_on_ancilla(record: MeasurementRecord, ancilla_value: int = 1) -> tuple[MeasurementRecord, float]:
    """Post-select a BV record on its ancilla (last bit) and drop that bit."""
    counts: dict[str, int] = {}
    for bits, c in record.counts.items():
        if int(bits[-1]) == ancilla_value:
            counts[bits[:-1]] = counts.get(bits[:-1], 0) + c
    kept = sum(counts.values())
    if kept == 0:
        raise EmptyAfterConditioningError("no shots survive ancilla conditioning")
    return MeasurementRecord(record.num_qubits - 1, kept, counts), kept / record.shots


@dataclass
class SweepResult:
    algorithm: str
    process_matrix: np.ndarray
    shots_per_oracle: int
    conditioned: bool = False
    retained_fraction: np.ndarray | None = None
    raw_success: np.ndarray | None = None  # BV success before conditioning
    n_1q: np.ndarray | None = None
    n_2q: np.ndarray | None = None
    invalid: dict[int, str] = field(default_factory=dict)

    @property
    def num_oracles(self) -> int:
        return self.process_matrix.shape[0]


@dataclass
class SuccessMetrics:
    per_oracle_success: np.ndarray
    average_success: float
    bqp_fraction: float
    argmax_correct_count: int
    excluded: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "average_success": self.average_success,
            "bqp_fraction": self.bqp_fraction,
            "argmax_correct_count": self.argmax_correct_count,
            "excluded": list(self.excluded),
            "per_oracle": [None if np.isnan(v) else float(v) for v in self.per_oracle_success],
        }


def _build(algorithm: str, index: int, width: int) -> Circuit:
    if algorithm == "bv":
        return build_bv_circuit(BVOracle.from_index(index, width))
    if algorithm == "hs":
        return build_hs_circuit(HSOracle.from_index(index, width))
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _run_oracle(algorithm: str, index: int, width: int, noise: NoiseConfig, shots: int, seed: int,
                options: CompilerOptions, condition: bool = True) -> dict:
    compiled = compile_circuit(_build(algorithm, index, width), options)
    circ = compiled.circuit
    sampler = TrajectorySampler(circ, gate_error_rates(circ, noise))
    rng = np.random.default_rng([seed, index])
    out = noisy_outcomes(circ, noise, shots, rng, sampler=sampler)
    row = {"index": index, **compiled.counts}
    if algorithm == "bv":
        ideal = sampler.ideal_probs
        p_anc1 = float(ideal[1::2].sum())
        if min(p_anc1, 1 - p_anc1) > 1e-9:
            raise RuntimeError(f"ancilla of oracle {index} is not deterministic (P1={p_anc1:.3g})")
        anc = int(round(p_anc1))
        row["raw_success"] = float(np.mean((out >> 1) == index))
        if not condition:
            row["retained"] = 1.0
            row["hist"] = np.bincount(out >> 1, minlength=2**width)
            return row
        out, frac = condition_outcomes(out, anc)
        row["retained"] = frac
        if len(out) == 0:
            raise EmptyAfterConditioningError(f"oracle {index}: no shots survive ancilla conditioning")
    row["hist"] = np.bincount(out, minlength=2**width)
    return row


def _run_chunk(args) -> list[dict]:
    algorithm, indices, width, noise, shots, seed, options, condition = args
    rows = []
    for i in indices:
        try:
            rows.append(_run_oracle(algorithm, i, width, noise, shots, seed, options, condition))
        except Exception as exc:  # isolate per-oracle faults
            rows.append({"index": i, "error": f"{type(exc).__name__}: {exc}"})
    return rows


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("IONBENCH_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(algorithm: str, noise: NoiseConfig | None = None, shots: int = 500, seed: int = 0,
              width: int = REGISTER, options: CompilerOptions | None = None,
              workers: int | None = None, oracles=None, condition: bool = True) -> SweepResult:
    """Compile, optimize and run every oracle, one process-matrix row each.

    BV rows are post-selected on the ancilla reading its ideal value unless
    ``condition`` is False, in which case the ancilla is simply discarded.

    Each oracle draws from its own stream seeded by ``(seed, oracle_index)``,
    so results do not depend on ``workers``. A failing oracle yields a NaN
    row recorded in ``invalid`` instead of aborting the sweep.
    """
    if shots < 1:
        raise ValueError("shots must be at least 1")
    algorithm = algorithm.lower()
    noise = noise or NoiseConfig()
    options = options or CompilerOptions()
    workers = default_workers() if workers is None else workers
    dim = 2**width
    indices = list(range(dim)) if oracles is None else list(oracles)

    chunks = [indices[k::workers] for k in range(workers)] if workers > 1 else [indices]
    jobs = [(algorithm, ch, width, noise, shots, seed, options, condition) for ch in chunks if ch]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for rows in pool.map(_run_chunk, jobs) for r in rows]
    else:
        results = [r for job in jobs for r in _run_chunk(job)]
    results.sort(key=lambda r: r["index"])

    matrix = np.full((dim, dim), np.nan)
    retained = np.full(dim, np.nan)
    raw = np.full(dim, np.nan)
    n1, n2 = np.full(dim, -1), np.full(dim, -1)
    invalid = {}
    for r in results:
        i = r["index"]
        if "error" in r:
            invalid[i] = r["error"]
            log.warning("oracle %d failed: %s", i, r["error"])
            continue
        hist = r["hist"]
        matrix[i] = hist / hist.sum()
        n1[i], n2[i] = r["n_1q"], r["n_2q"]
        if algorithm == "bv":
            retained[i], raw[i] = r["retained"], r["raw_success"]
    bv = algorithm == "bv"
    return SweepResult(
        algorithm=algorithm,
        process_matrix=matrix,
        shots_per_oracle=shots,
        conditioned=bv and condition,
        retained_fraction=retained if bv else None,
        raw_success=raw if bv else None,
        n_1q=n1,
        n_2q=n2,
        invalid=invalid,
    )


def success_metrics(sweep: SweepResult) -> SuccessMetrics:
    m = sweep.process_matrix
    dim = m.shape[0]
    valid = ~np.isnan(m).any(axis=1)
    excluded = [int(i) for i in np.flatnonzero(~valid)]
    rows = np.flatnonzero(valid)
    success = np.full(dim, np.nan)
    success[rows] = m[rows, rows]
    argmax_ok = 0
    for i in rows:
        row = m[i]
        best = row.max()
        if row[i] == best and np.count_nonzero(row == best) == 1:
            argmax_ok += 1
    s = success[valid]
    return SuccessMetrics(
        per_oracle_success=success,
        average_success=float(s.mean()) if len(s) else float("nan"),
        bqp_fraction=float(np.mean(s > BQP_THRESHOLD)) if len(s) else float("nan"),
        argmax_correct_count=argmax_ok,
        excluded=excluded,
    )


def expected_envelope(algorithm: str, n_or_m: int, f_2q: float, f_1q: float, f_spam: float,
                      register: int = REGISTER) -> float:
    """Gate-count fidelity envelope, excluding crosstalk.

    BV with n two-qubit gates: F2^n * F1^(2(n+1)) * Fspam^10.
    HS with m single-qubit gates: F2^10 * F1^m * Fspam^10.
    """
    if n_or_m < 0:
        raise ValueError("gate count must be non-negative")
    for f in (f_2q, f_1q, f_spam):
        if not 0 < f <= 1:
            raise ValueError(f"fidelity {f} is outside (0, 1]")
    if algorithm.lower() == "bv":
        return f_2q**n_or_m * f_1q ** (2 * (n_or_m + 1)) * f_spam**register
    if algorithm.lower() == "hs":
        return f_2q**register * f_1q**n_or_m * f_spam**register
    raise ValueError(f"unknown algorithm {algorithm!r}")


def popcounts(width: int = REGISTER) -> np.ndarray:
    return np.array([bin(i).count("1") for i in range(2**width)])


# -- file outputs -------------------------------------------------------------------


def write_sweep(sweep: SweepResult, outdir: str | Path) -> dict[str, Path]:
    """Sparse CSV, dense .npy matrix and a per-oracle table for ``sweep``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    name = sweep.algorithm
    paths = {
        "csv": outdir / f"{name}_process.csv",
        "matrix": outdir / f"{name}_matrix.npy",
        "oracles": outdir / f"{name}_oracles.csv",
    }
    m = sweep.process_matrix
    with open(paths["csv"], "w") as fh:
        fh.write("oracle_index,output_integer,probability\n")
        for i in range(m.shape[0]):
            if np.isnan(m[i]).any():
                continue
            for j in np.flatnonzero(m[i]):
                fh.write(f"{i},{j},{m[i, j]:.10g}\n")
    np.save(paths["matrix"], m)
    with open(paths["oracles"], "w") as fh:
        fh.write("oracle_index,n_1q,n_2q,success,retained_fraction\n")
        for i in range(m.shape[0]):
            ret = "" if sweep.retained_fraction is None else f"{sweep.retained_fraction[i]:.6g}"
            fh.write(f"{i},{sweep.n_1q[i]},{sweep.n_2q[i]},{m[i, i]:.6g},{ret}\n")
    return paths


def load_sweep(outdir: str | Path, algorithm: str) -> SweepResult:
    outdir = Path(outdir)
    m = np.load(outdir / f"{algorithm}_matrix.npy")
    table = np.genfromtxt(outdir / f"{algorithm}_oracles.csv", delimiter=",", names=True)
    return SweepResult(
        algorithm=algorithm,
        process_matrix=m,
        shots_per_oracle=0,
        conditioned=algorithm == "bv",
        n_1q=table["n_1q"].astype(int),
        n_2q=table["n_2q"].astype(int),
    )


def metrics_json(metrics: SuccessMetrics, sweep: SweepResult, extra: dict | None = None) -> str:
    d = {
        "algorithm": sweep.algorithm,
        "shots_per_oracle": sweep.shots_per_oracle,
        "conditioned": sweep.conditioned,
        "axis_convention": AXIS_CONVENTION,
        "invalid": {str(k): v for k, v in sorted(sweep.invalid.items())},
        **metrics.to_dict(),
    }
    if extra:
        d.update(extra)
    return json.dumps(d, indent=1, sort_keys=True)

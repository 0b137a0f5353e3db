"""Single-qubit randomized benchmarking and Bell-state partial tomography.

RB sequences are L random +-pi/2 rotations about X or Y, each followed by a
random pi rotation about X, Y or Z or an idle slot, and closed by a recovery
gate that leaves the qubit in a computational basis state. Survival versus L
is fit to ``B p^L + 1/2``.

Two-qubit fidelity follows the parity method: an XX(+-pi/4) gate on |00>,
populations measured directly, then parity P00 + P11 - P01 - P10 scanned over
the phase of pi/2 analysis pulses on both ions. The scan is modelled as
``Phi cos(2 phi + delta)`` and the Bell fidelity is ``(P00 + P11 + Phi)/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, curve_fit, minimize
from scipy.special import xlogy

from .circuit import Circuit, Gate, apply_matrix, gate_unitary
from .noise import DeviceModel, NoiseConfig, TrajectorySampler, gate_error_rates, noisy_outcomes

STANDARD_LENGTHS = (2, 4, 6, 8, 10, 12)
HALF_PI = math.pi / 2

_PI2_GATES = {  # label -> (theta, phi)
    "+X/2": (HALF_PI, 0.0),
    "-X/2": (-HALF_PI, 0.0),
    "+Y/2": (HALF_PI, HALF_PI),
    "-Y/2": (-HALF_PI, HALF_PI),
}


class FitError(RuntimeError):
    pass


class UnderdeterminedError(ValueError):
    pass


# -- randomized benchmarking ------------------------------------------------------


@dataclass
class RBSequence:
    length: int
    circuit: Circuit
    expected_outcome: int
    noisy_gates: list[int] = field(default_factory=list)


def _frame_gate(choice: int) -> Gate | None:
    if choice == 0:
        return Gate("R", (0,), (math.pi, 0.0))
    if choice == 1:
        return Gate("R", (0,), (math.pi, HALF_PI))
    if choice == 2:
        return Gate("RZ", (0,), (math.pi,))
    return None


def generate_rb_sequence(length: int, rng: np.random.Generator) -> RBSequence:
    """Random single-qubit RB sequence of ``length`` pi/2 gates.

    The recovery gate is a pi/2 rotation whenever the state sits on the
    equator; if the sequence left it on a pole, no pi/2 rotation can return it
    to the Z basis and the recovery is an idle or a pi rotation instead. In
    both cases the target basis state is drawn at random.
    """
    if length < 1:
        raise ValueError("RB length must be at least 1")
    labels = list(_PI2_GATES)
    gates: list[Gate] = []
    noisy: list[int] = []
    for _ in range(length):
        theta, phi = _PI2_GATES[labels[rng.integers(4)]]
        noisy.append(len(gates))
        gates.append(Gate("R", (0,), (theta, phi)))
        frame = _frame_gate(int(rng.integers(4)))
        if frame is not None:
            gates.append(frame)

    amps = np.array([1, 0], dtype=complex)
    for g in gates:
        amps = gate_unitary(g) @ amps
    p1 = abs(amps[1]) ** 2
    if min(p1, 1 - p1) < 1e-9:
        # on a pole: keep it, or flip it with a pi pulse
        if rng.integers(2):
            gates.append(Gate("R", (0,), (math.pi, 0.0)))
            p1 = 1 - p1
        expected = int(round(p1))
    else:
        options = []
        for label in labels:
            g = Gate("R", (0,), _PI2_GATES[label])
            q1 = abs((gate_unitary(g) @ amps)[1]) ** 2
            if min(q1, 1 - q1) < 1e-9:
                options.append((g, int(round(q1))))
        g, expected = options[rng.integers(len(options))]
        gates.append(g)
    return RBSequence(length, Circuit(1, gates, label=f"rb-L{length}"), expected, noisy)


@dataclass
class PowerLawFit:
    p: float
    B: float
    p_err: float
    B_err: float
    residual: float

    @property
    def spam_fidelity(self) -> float:
        return self.B + 0.5

    def to_dict(self) -> dict:
        return {"p": self.p, "B": self.B, "p_err": self.p_err, "B_err": self.B_err}


def _power_law(L, B, p):
    return B * np.power(p, L) + 0.5


def fit_power_law(points: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Least-squares fit of survival = B p^L + 1/2 with p in (0, 1], B in (0, 1/2]."""
    data = np.asarray(points, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("points must be (L, survival) pairs")
    L, y = data[:, 0], data[:, 1]
    if np.any((y < 0) | (y > 1)) or not np.all(np.isfinite(y)):
        raise ValueError("survival values must lie in [0, 1]")
    if len(np.unique(L)) < 3:
        raise ValueError("need at least 3 distinct sequence lengths")

    # start from a log-linear fit of the per-length means
    lengths = np.unique(L)
    means = np.array([y[L == x].mean() for x in lengths])
    excess = np.clip(means - 0.5, 1e-6, None)
    slope, icpt = np.polyfit(lengths, np.log(excess), 1)
    p0 = float(np.clip(np.exp(slope), 0.5, 1 - 1e-9))
    b0 = float(np.clip(np.exp(icpt), 1e-3, 0.5 - 1e-9))
    try:
        popt, pcov, info, msg, ier = curve_fit(
            _power_law, L, y, p0=(b0, p0), bounds=([1e-12, 1e-12], [0.5, 1.0]),
            full_output=True, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000,
        )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"power-law fit failed: {exc}; start B={b0:.4g}, p={p0:.4g}") from exc
    if ier not in (1, 2, 3, 4):
        raise FitError(f"power-law fit did not converge: {msg}")
    B, p = (float(v) for v in popt)
    resid = float(np.sum((y - _power_law(L, B, p)) ** 2))
    errs = np.sqrt(np.clip(np.diag(pcov), 0, None)) if np.all(np.isfinite(pcov)) else (np.nan, np.nan)
    return PowerLawFit(p=p, B=B, p_err=float(errs[1]), B_err=float(errs[0]), residual=resid)


def single_qubit_device(device: DeviceModel, qubit: int) -> DeviceModel:
    return DeviceModel([device.f_1q[qubit]], [device.f_spam[qubit]], {}, device.f_detect)


def rb_survival(seq: RBSequence, noise: NoiseConfig, shots: int, rng: np.random.Generator) -> float:
    rates = gate_error_rates(seq.circuit, noise, seq.noisy_gates)
    sampler = TrajectorySampler(seq.circuit, rates)
    out = noisy_outcomes(seq.circuit, noise, shots, rng, sampler=sampler)
    return float(np.mean(out == seq.expected_outcome))


def run_rb_campaign(qubit: int, device: DeviceModel, lengths: Sequence[int] = STANDARD_LENGTHS,
                    seqs_per_length: int = 24, shots: int = 500, seed: int = 0,
                    ) -> tuple[list[tuple[int, int, float]], PowerLawFit]:
    """Simulate an RB campaign on one ion and fit it.

    Gate noise is injected on the random pi/2 gates only, with the ion's
    fidelity read as a per-gate depolarizing decay; the pi frame gates and the
    recovery gate are ideal, and readout flips at 1 - f_spam. The fitted p
    and B + 1/2 therefore estimate f_1q and f_spam directly.
    Returns ``[(L, sequence_id, survival), ...]`` and the fit.
    """
    if not 0 <= qubit < device.num_qubits:
        raise ValueError(f"qubit {qubit} outside the {device.num_qubits}-ion device")
    noise = NoiseConfig(
        pauli_from_device=True, device=single_qubit_device(device, qubit), fidelity_convention="decay"
    )
    rng = np.random.default_rng([seed, qubit])
    points = []
    for L in lengths:
        for k in range(seqs_per_length):
            seq = generate_rb_sequence(L, rng)
            points.append((L, k, rb_survival(seq, noise, shots, rng)))
    fit = fit_power_law([(L, s) for L, _, s in points])
    return points, fit


# -- Bell-state tomography ----------------------------------------------------------


@dataclass
class ParityScan:
    phases: np.ndarray
    counts: np.ndarray  # (k, 4) counts of 00, 01, 10, 11 per phase
    shots_per_phase: int

    @property
    def populations(self) -> np.ndarray:
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    @property
    def parity(self) -> np.ndarray:
        p = self.populations
        return p[:, 0] + p[:, 3] - p[:, 1] - p[:, 2]


@dataclass
class TomographyEstimate:
    P00: float
    P11: float
    phi: float
    F: float
    ci_low: float
    ci_high: float
    delta: float = 0.0
    loglik: float = 0.0
    pair: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        d = {"F": self.F, "ci_low": self.ci_low, "ci_high": self.ci_high,
             "P00": self.P00, "P11": self.P11, "phi": self.phi}
        if self.pair is not None:
            d["pair"] = f"{self.pair[0]}-{self.pair[1]}"
        return d


def bell_fidelity(p00: float, p11: float, phi: float) -> float:
    return (p00 + p11 + phi) / 2


def pair_device(device: DeviceModel, pair: tuple[int, int]) -> DeviceModel:
    a, b = pair
    return DeviceModel(
        [device.f_1q[a], device.f_1q[b]],
        [device.f_spam[a], device.f_spam[b]],
        {(0, 1): device.pair_fidelity(a, b)},
        device.f_detect,
    )


def _bell_circuit(chi_sign: int, phase: float | None) -> Circuit:
    gates = [Gate("XX", (0, 1), (chi_sign * math.pi / 4,))]
    if phase is not None:
        gates += [Gate("R", (0,), (HALF_PI, phase)), Gate("R", (1,), (HALF_PI, phase))]
    return Circuit(2, gates, label="bell")


def _counts4(outcomes: np.ndarray) -> np.ndarray:
    return np.bincount(outcomes, minlength=4)[:4]


def measure_populations(chi_sign: int, noise: NoiseConfig, shots: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Counts of 00, 01, 10, 11 straight after the XX gate (no analysis pulses)."""
    return _counts4(noisy_outcomes(_bell_circuit(chi_sign, None), noise, shots, rng))


def parity_scan(pair: tuple[int, int], chi_sign: int, noise: NoiseConfig, phases: Sequence[float],
                shots: int, seed) -> ParityScan:
    """Joint populations versus analysis-pulse phase for one pair.

    ``noise.device`` is an 11-ion (or any) device model; the pair's own
    fidelities are extracted from it. With ``noise.device`` unset the scan is
    noiseless apart from any classical stages in ``noise``.
    """
    phases = np.asarray(phases, dtype=float)
    if len(phases) < 1:
        raise ValueError("need at least one phase")
    local = _localize(noise, pair)
    rng = np.random.default_rng(seed)
    counts = np.array(
        [_counts4(noisy_outcomes(_bell_circuit(chi_sign, ph), local, shots, rng)) for ph in phases]
    )
    return ParityScan(phases, counts, shots)


def _localize(noise: NoiseConfig, pair: tuple[int, int]) -> NoiseConfig:
    if noise.device is None:
        return noise
    dev = noise.device if noise.device.num_qubits == 2 else pair_device(noise.device, pair)
    return NoiseConfig(
        crosstalk=None,
        detection_misid=noise.detection_misid,
        pauli_from_device=noise.pauli_from_device,
        device=dev,
        fidelity_convention=noise.fidelity_convention,
        include_1q=noise.include_1q,
        include_2q=noise.include_2q,
        include_spam=noise.include_spam,
    )


class _ParityLikelihood:
    """Log-likelihood pieces for the population + parity-scan data."""

    def __init__(self, scan: ParityScan, population_counts: Sequence[int]):
        pc = np.asarray(population_counts, dtype=float)
        if pc.shape != (4,) or np.any(pc < 0) or pc.sum() <= 0:
            raise ValueError("population measurement must be 4 non-negative counts")
        self.pop = pc
        self.n_even = pc[0] + pc[3]
        self.n_odd = pc[1] + pc[2]
        c = np.asarray(scan.counts, dtype=float)
        self.k_even = c[:, 0] + c[:, 3]
        self.k_odd = c[:, 1] + c[:, 2]
        self.two_phi = 2 * np.asarray(scan.phases, dtype=float)

    def pop_ll(self, E: float) -> float:
        return float(xlogy(self.n_even, E) + xlogy(self.n_odd, 1 - E))

    def pop_grad(self, E: float) -> float:
        g = 0.0
        if self.n_even:
            g += self.n_even / max(E, 1e-300)
        if self.n_odd:
            g -= self.n_odd / max(1 - E, 1e-300)
        return g

    def scan_ll(self, amp: float, delta: float) -> float:
        pe = np.clip(0.5 * (1 + amp * np.cos(self.two_phi + delta)), 0, 1)
        return float(np.sum(xlogy(self.k_even, pe) + xlogy(self.k_odd, 1 - pe)))

    def scan_grad(self, amp: float, delta: float) -> tuple[float, float]:
        arg = self.two_phi + delta
        cos, sin = np.cos(arg), np.sin(arg)
        pe = np.clip(0.5 * (1 + amp * cos), 1e-300, 1 - 1e-16)
        dl = np.where(self.k_even > 0, self.k_even / pe, 0) - np.where(self.k_odd > 0, self.k_odd / (1 - pe), 0)
        return float(np.sum(dl * 0.5 * cos)), float(np.sum(dl * -0.5 * amp * sin))

    def moment_start(self) -> tuple[float, float]:
        """Linear least-squares sinusoid through the measured parities."""
        n = self.k_even + self.k_odd
        parity = (self.k_even - self.k_odd) / n
        design = np.column_stack([np.cos(self.two_phi), np.sin(self.two_phi)])
        (a, b), *_ = np.linalg.lstsq(design, parity, rcond=None)
        return float(math.hypot(a, b)), float(math.atan2(-b, a))

    def fit_scan(self, start: tuple[float, float] | None = None) -> tuple[float, float, float]:
        amp0, d0 = start or self.moment_start()
        best = None
        for a_init in {min(max(amp0, 1e-3), 1 - 1e-6), 0.5}:
            res = minimize(
                lambda x: -self.scan_ll(*x),
                x0=[a_init, d0],
                jac=lambda x: -np.array(self.scan_grad(*x)),
                method="L-BFGS-B",
                bounds=[(0.0, 1.0), (d0 - math.pi, d0 + math.pi)],
            )
            if best is None or res.fun < best.fun:
                best = res
        amp, delta = best.x
        return float(amp), float(delta), -float(best.fun)

    def profile(self, F: float, E0: float, delta0: float) -> float:
        """max over (E, delta) of the log-likelihood with (E + Phi)/2 = F."""
        lo, hi = max(0.0, 2 * F - 1), min(1.0, 2 * F)
        if lo > hi:
            return -np.inf

        def neg(x):
            E, d = x
            return -(self.pop_ll(E) + self.scan_ll(2 * F - E, d))

        def jac(x):
            E, d = x
            ga, gd = self.scan_grad(2 * F - E, d)
            return -np.array([self.pop_grad(E) - 2 * ga, gd])

        x0 = [min(max(E0, lo), hi), delta0]
        res = minimize(neg, x0=x0, jac=jac, method="L-BFGS-B",
                       bounds=[(lo, hi), (delta0 - math.pi / 2, delta0 + math.pi / 2)])
        return -float(res.fun)


def _distinct_scan_phases(phases) -> int:
    """Number of analysis phases that differ mod pi (the parity has period pi)."""
    reduced = np.mod(np.asarray(phases, dtype=float), math.pi)
    reduced[np.isclose(reduced, math.pi, atol=1e-9)] = 0.0
    return len(np.unique(np.round(reduced, 9)))


def mle_fidelity(scan: ParityScan, population_measurement: Sequence[int]) -> TomographyEstimate:
    """Maximum-likelihood Bell fidelity with a 1-sigma profile-likelihood interval.

    ``population_measurement`` holds the counts of 00, 01, 10, 11 measured
    without analysis pulses. Populations enter as a multinomial; each scan
    point enters as a binomial in parity class, since the model predicts only
    the parity there. The interval is where the profile log-likelihood of F
    lies within 0.5 of its maximum.
    """
    if _distinct_scan_phases(scan.phases) < 2:
        raise UnderdeterminedError("parity scan needs at least two distinct phases (mod pi)")
    lik = _ParityLikelihood(scan, population_measurement)
    pop = lik.pop / lik.pop.sum()
    E_hat = float(pop[0] + pop[3])
    amp, delta, scan_ll = lik.fit_scan()
    F_hat = bell_fidelity(pop[0], pop[3], amp)
    ll_max = lik.pop_ll(E_hat) + scan_ll

    def drop(F: float) -> float:
        return ll_max - lik.profile(F, E_hat, delta) - 0.5

    def bound(direction: int) -> float:
        limit = 1.0 if direction > 0 else 0.0
        if abs(F_hat - limit) < 1e-12 or drop(limit) <= 0:
            return limit
        step = 1e-3
        inner, outer = F_hat, F_hat + direction * step
        while (outer - limit) * direction < 0 and drop(outer) < 0:
            inner, step = outer, step * 2
            outer = F_hat + direction * step
        outer = limit if (outer - limit) * direction >= 0 else outer
        if drop(outer) <= 0:
            return outer
        a, b = sorted((inner, outer))
        return float(brentq(drop, a, b, xtol=1e-7)) if drop(a) * drop(b) < 0 else outer

    return TomographyEstimate(
        P00=float(pop[0]), P11=float(pop[3]), phi=amp, F=float(F_hat),
        ci_low=min(bound(-1), F_hat), ci_high=max(bound(+1), F_hat),
        delta=delta, loglik=ll_max,
    )


def scan_loglik(scan: ParityScan, population_measurement: Sequence[int], E: float, amp: float,
                delta: float) -> float:
    """Log-likelihood of the data at given parameters (for comparing estimators)."""
    lik = _ParityLikelihood(scan, population_measurement)
    return lik.pop_ll(E) + lik.scan_ll(amp, delta)


def moment_estimate(scan: ParityScan, population_measurement: Sequence[int]) -> tuple[float, float, float]:
    """Naive (E, Phi, delta): raw populations plus a linear sinusoid fit, Phi clipped to [0, 1]."""
    lik = _ParityLikelihood(scan, population_measurement)
    pop = lik.pop / lik.pop.sum()
    amp, delta = lik.moment_start()
    return float(pop[0] + pop[3]), min(amp, 1.0), delta


def default_phases(k: int = 16) -> np.ndarray:
    return np.linspace(0, 2 * math.pi, k, endpoint=False)


def run_tomography(pair: tuple[int, int], device: DeviceModel | None, chi_sign: int = 1,
                   phases: Sequence[float] | None = None, shots_per_phase: int = 250,
                   population_shots: int = 2000, seed=0, include_1q: bool = False,
                   include_spam: bool = False) -> TomographyEstimate:
    """Bell-state tomography of one pair, closed loop against the device model.

    By default only the XX gate is noisy, with the pair fidelity read as the
    Bell-state fidelity it produces, so the estimate targets the injected
    value. ``include_1q``/``include_spam`` add analysis-pulse and readout
    errors, which bias the raw estimate low as on hardware.
    """
    phases = default_phases() if phases is None else np.asarray(phases, dtype=float)
    if device is None:
        noise = NoiseConfig()
    else:
        noise = NoiseConfig(
            pauli_from_device=True, device=pair_device(device, pair), fidelity_convention="matched",
            include_1q=include_1q, include_spam=include_spam,
        )
    rng = np.random.default_rng(seed)
    pops = measure_populations(chi_sign, noise, population_shots, rng)
    scan = parity_scan(pair, chi_sign, noise, phases, shots_per_phase, rng.integers(2**63))
    est = mle_fidelity(scan, pops)
    est.pair = (min(pair), max(pair))
    return est


def depolarized_bell(rate: float) -> dict[str, float]:
    """Closed-form populations, parity amplitude and fidelity of an XX Bell state
    after a uniform two-qubit Pauli error with probability ``rate``."""
    even = 1 - 8 * rate / 15
    amp = 1 - 16 * rate / 15
    return {"P00": even / 2, "P11": even / 2, "phi": amp, "F": (even + amp) / 2}


def bell_density_matrix(rate: float, chi_sign: int = 1) -> np.ndarray:
    """Independent density-matrix oracle: XX(pi/4)|00> followed by the Pauli channel."""
    amps = np.zeros(4, dtype=complex)
    amps[0] = 1
    amps = apply_matrix(amps, gate_unitary(Gate("XX", (0, 1), (chi_sign * math.pi / 4,))), (0, 1), 2)
    rho = np.outer(amps, amps.conj())
    paulis = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    out = (1 - rate) * rho
    for i in range(4):
        for j in range(4):
            if i == j == 0:
                continue
            P = np.kron(paulis[i], paulis[j])
            out = out + rate / 15 * P @ rho @ P.conj().T
    return out

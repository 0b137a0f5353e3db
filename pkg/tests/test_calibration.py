import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionbench.calibration import (
    STANDARD_LENGTHS,
    FitError,
    ParityScan,
    UnderdeterminedError,
    bell_density_matrix,
    bell_fidelity,
    default_phases,
    depolarized_bell,
    fit_power_law,
    generate_rb_sequence,
    measure_populations,
    mle_fidelity,
    moment_estimate,
    parity_scan,
    run_rb_campaign,
    run_tomography,
    scan_loglik,
)
from ionbench.circuit import run_circuit
from ionbench.noise import DeviceModel, NoiseConfig, bell_state_fidelity, load_device_model


class TestRBSequences:
    @settings(max_examples=100, deadline=None)
    @given(length=st.integers(1, 20), seed=st.integers(0, 2**31))
    def test_ideal_sequence_returns_to_expected_state(self, length, seed):
        seq = generate_rb_sequence(length, np.random.default_rng(seed))
        probs = run_circuit(seq.circuit).probabilities()
        assert probs[seq.expected_outcome] == pytest.approx(1.0, abs=1e-9)
        assert len(seq.noisy_gates) == length

    def test_noisy_gates_are_random_half_pi(self):
        seq = generate_rb_sequence(12, np.random.default_rng(0))
        for i in seq.noisy_gates:
            g = seq.circuit.gates[i]
            assert g.kind == "R" and abs(g.params[0]) == pytest.approx(math.pi / 2)

    def test_target_state_randomized(self):
        rng = np.random.default_rng(1)
        outcomes = {generate_rb_sequence(4, rng).expected_outcome for _ in range(50)}
        assert outcomes == {0, 1}

    def test_length_validated(self):
        with pytest.raises(ValueError):
            generate_rb_sequence(0, np.random.default_rng(0))


class TestPowerLawFit:
    def test_exact_recovery(self):
        pts = [(L, 0.45 * 0.99**L + 0.5) for L in (2, 4, 6, 8)]
        fit = fit_power_law(pts)
        assert fit.p == pytest.approx(0.99, abs=1e-9)
        assert fit.B == pytest.approx(0.45, abs=1e-9)

    def test_perfect_survival(self):
        fit = fit_power_law([(L, 1.0) for L in (2, 4, 6)])
        assert fit.p == pytest.approx(1.0, abs=1e-8)
        assert fit.spam_fidelity == pytest.approx(1.0, abs=1e-8)

    def test_needs_three_lengths(self):
        with pytest.raises(ValueError):
            fit_power_law([(2, 0.9), (4, 0.8), (4, 0.81)])

    def test_survival_range(self):
        with pytest.raises(ValueError):
            fit_power_law([(2, 1.1), (4, 0.8), (6, 0.7)])

    def test_errors_reported(self):
        rng = np.random.default_rng(3)
        pts = [(L, min(1.0, 0.49 * 0.995**L + 0.5 + rng.normal(0, 0.01)))
               for L in STANDARD_LENGTHS for _ in range(5)]
        fit = fit_power_law(pts)
        assert 0 < fit.p_err < 0.01 and 0 < fit.B_err < 0.05

    def test_fit_error_type(self):
        assert issubclass(FitError, RuntimeError)


class TestRBCampaign:
    def test_perfect_device(self):
        dev = DeviceModel.uniform(1, 1.0, 1.0, 1.0)
        _, fit = run_rb_campaign(0, dev, seqs_per_length=4, shots=50, seed=0)
        assert fit.p == pytest.approx(1.0, abs=1e-8)

    def test_closed_loop_single_campaign(self):
        dev = DeviceModel.uniform(1, 0.9957, 1.0, 0.993)
        points, fit = run_rb_campaign(0, dev, seed=11)
        assert len(points) == 6 * 24
        assert fit.p == pytest.approx(0.9957, abs=0.002)
        assert fit.spam_fidelity == pytest.approx(0.993, abs=0.004)

    def test_reproducible(self):
        dev = DeviceModel.uniform(2, 0.99, 0.97, 0.99)
        a = run_rb_campaign(1, dev, seqs_per_length=3, shots=40, seed=5)[0]
        b = run_rb_campaign(1, dev, seqs_per_length=3, shots=40, seed=5)[0]
        assert a == b

    def test_bad_qubit(self):
        with pytest.raises(ValueError):
            run_rb_campaign(3, DeviceModel.uniform(2, 0.99, 0.97, 0.99))


class TestBellModel:
    def test_fidelity_formula_unit(self):
        assert bell_fidelity(0.49, 0.49, 0.97) == pytest.approx(0.975, abs=1e-15)

    @pytest.mark.parametrize("rate", [0.0, 0.02, 0.049])
    def test_depolarized_closed_form_matches_density_matrix(self, rate):
        rho = bell_density_matrix(rate)
        closed = depolarized_bell(rate)
        assert rho[0, 0].real == pytest.approx(closed["P00"])
        assert rho[3, 3].real == pytest.approx(closed["P11"])
        assert 2 * abs(rho[0, 3]) == pytest.approx(closed["phi"])
        assert closed["F"] == pytest.approx(bell_state_fidelity(rate))

    def test_noiseless_populations(self):
        counts = measure_populations(1, NoiseConfig(), 1000, np.random.default_rng(0))
        assert counts[1] == counts[2] == 0
        assert abs(counts[0] - 500) < 80


def synthetic_scan(amp, delta, even, shots, pop_shots, seed, phases=None):
    rng = np.random.default_rng(seed)
    phases = default_phases() if phases is None else np.asarray(phases)
    pe = 0.5 * (1 + amp * np.cos(2 * phases + delta))
    ke = rng.binomial(shots, pe)
    counts = np.column_stack([ke // 2, (shots - ke) // 2, shots - ke - (shots - ke) // 2, ke - ke // 2])
    pops = rng.multinomial(pop_shots, [even / 2, (1 - even) / 2, (1 - even) / 2, even / 2])
    return ParityScan(phases, counts, shots), pops


class TestMLE:
    def test_recovers_synthetic_parameters(self):
        scan, pops = synthetic_scan(0.95, 0.4, 0.97, 4000, 20000, 0)
        est = mle_fidelity(scan, pops)
        assert est.phi == pytest.approx(0.95, abs=0.01)
        assert est.F == pytest.approx((0.97 + 0.95) / 2, abs=0.006)
        assert est.ci_low < est.F < est.ci_high

    def test_mle_beats_moment_matching(self):
        for seed in range(20):
            scan, pops = synthetic_scan(0.97, -1.3, 0.98, 60, 300, seed)
            est = mle_fidelity(scan, pops)
            E, amp, delta = moment_estimate(scan, pops)
            assert est.loglik >= scan_loglik(scan, pops, E, amp, delta) - 1e-9

    def test_single_phase_underdetermined(self):
        scan, pops = synthetic_scan(0.9, 0.0, 0.9, 100, 100, 0, phases=[0.3])
        with pytest.raises(UnderdeterminedError):
            mle_fidelity(scan, pops)

    def test_phases_equal_mod_pi_underdetermined(self):
        scan, pops = synthetic_scan(0.9, 0.0, 0.9, 100, 100, 0, phases=[0.3, 0.3 + math.pi])
        with pytest.raises(UnderdeterminedError):
            mle_fidelity(scan, pops)

    def test_bad_population_counts(self):
        scan, _ = synthetic_scan(0.9, 0.0, 0.9, 100, 100, 0)
        with pytest.raises(ValueError):
            mle_fidelity(scan, [1, 2, 3])

    def test_scan_amplitude_at_closed_form(self):
        # XX Pauli rate 0.049 -> parity amplitude 1 - 16r/15
        rate = 0.049
        f2 = 1 - rate * 12 / 15
        dev = DeviceModel.uniform(2, 1.0, f2, 1.0)
        noise = NoiseConfig(pauli_from_device=True, device=dev, fidelity_convention="average")
        scan = parity_scan((0, 1), 1, noise, default_phases(), 5000, 1)
        pops = measure_populations(1, noise, 40000, np.random.default_rng(2))
        est = mle_fidelity(scan, pops)
        assert est.phi == pytest.approx(depolarized_bell(rate)["phi"], abs=0.01)
        assert est.F == pytest.approx(f2, abs=0.006)


class TestTomography:
    def test_noiseless(self):
        est = run_tomography((0, 1), None, seed=0)
        assert est.F == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("sign", [1, -1])
    def test_both_xx_signs(self, sign):
        dev = DeviceModel.uniform(2, 1.0, 0.975, 1.0)
        est = run_tomography((0, 1), dev, chi_sign=sign, seed=4)
        assert est.F == pytest.approx(0.975, abs=0.012)

    def test_minimum_pair(self):
        est = run_tomography((5, 9), load_device_model(), seed=7)
        assert 0.94 <= est.F <= 0.96

    def test_spam_biases_low(self):
        dev = DeviceModel.uniform(2, 0.99, 0.975, 0.98)
        clean = run_tomography((0, 1), dev, seed=8, population_shots=20000, shots_per_phase=2000)
        dirty = run_tomography((0, 1), dev, seed=8, population_shots=20000, shots_per_phase=2000,
                               include_1q=True, include_spam=True)
        assert dirty.F < clean.F - 0.02

    def test_interval_coverage_is_one_sigma(self):
        """A 1-sigma profile interval should cover the truth ~68% of the time."""
        truth = 0.975
        dev = DeviceModel.uniform(2, 1.0, truth, 1.0)
        hits = sum(
            est.ci_low <= truth <= est.ci_high
            for est in (run_tomography((0, 1), dev, seed=1000 + r) for r in range(150))
        )
        # binomial(150, 0.683): sd ~ 0.038
        assert 0.56 <= hits / 150 <= 0.80

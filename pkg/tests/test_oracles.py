from math import comb

import numpy as np
import pytest

from ionbench import oracles
from ionbench.circuit import run_circuit
from ionbench.noise import DeviceModel, NoiseConfig, load_device_model, preset
from ionbench.oracles import (
    BQP_THRESHOLD,
    BVOracle,
    EmptyAfterConditioningError,
    HSOracle,
    SweepResult,
    build_bv_circuit,
    build_hs_circuit,
    condition_on_ancilla,
    condition_outcomes,
    expected_envelope,
    load_sweep,
    metrics_json,
    popcounts,
    run_sweep,
    success_metrics,
    write_sweep,
)
from ionbench.circuit import MeasurementRecord

# frozen from direct evaluation of F2^n F1^(2(n+1)) Fspam^10 at (0.975, 0.995, 0.993)
ENVELOPE_AVG_DEVICE = [0.922866, 0.890819, 0.859885, 0.830025, 0.801202, 0.773379,
                       0.746523, 0.7206, 0.695576, 0.671422, 0.648107]
ENVELOPE_ORACLE_AVERAGE = 0.774588
# frozen from the exact enumeration below
HAMMING1_DROP_FRACTION = 0.786209


def enumerate_hamming1_drop_fraction(n=10, p=0.03, apps=2, d=0.002):
    """Exact pooled share of off-diagonal mass at single 1->0 flips of the oracle.

    Two to-zero crosstalk applications on a uniformly chosen register bit, then
    independent symmetric detection flips, enumerated per oracle weight.
    """
    total_off = total_drop = 0.0
    for w in range(n + 1):
        c = (1,) * w + (0,) * (n - w)
        dist = {c: 1.0}
        for _ in range(apps):
            nxt = {}
            for s, ps in dist.items():
                nxt[s] = nxt.get(s, 0) + ps * (1 - p)
                for q in range(n):
                    t = s[:q] + (0,) + s[q + 1:]
                    nxt[t] = nxt.get(t, 0) + ps * p / n
            dist = nxt

        def mass_at(y):
            return sum(ps * d ** h * (1 - d) ** (n - h)
                       for s, ps in dist.items()
                       for h in [sum(a != b for a, b in zip(s, y))])

        off = 1 - mass_at(c)
        drop = sum(mass_at(c[:j] + (0,) + c[j + 1:]) for j in range(w))
        total_off += comb(n, w) * off
        total_drop += comb(n, w) * drop
    return total_drop / total_off


def hamming1_drop_fraction(matrix):
    off = drop = 0.0
    for i in range(matrix.shape[0]):
        row = matrix[i]
        off += row.sum() - row[i]
        drop += sum(row[i ^ (1 << b)] for b in range(10) if i >> b & 1)
    return drop / off


class TestCircuits:
    @pytest.mark.parametrize("c", ["0000000000", "1010101010", "1111111111", "0000000001"])
    def test_bv_ideal_output(self, c):
        probs = run_circuit(build_bv_circuit(BVOracle(c))).probabilities()
        assert probs[int(c + "1", 2)] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("s", ["0000000000", "1111101010", "0110011001"])
    def test_hs_ideal_output(self, s):
        probs = run_circuit(build_hs_circuit(HSOracle(s))).probabilities()
        assert probs[int(s, 2)] == pytest.approx(1.0, abs=1e-12)

    def test_hs_needs_even_width(self):
        with pytest.raises(ValueError):
            HSOracle("101")

    def test_bad_bitstring(self):
        with pytest.raises(ValueError):
            BVOracle("10x")

    def test_general_even_width(self):
        probs = run_circuit(build_hs_circuit(HSOracle("1001"))).probabilities()
        assert probs[0b1001] == pytest.approx(1.0)


class TestConditioning:
    def test_keeps_matching_ancilla(self):
        kept, frac = condition_outcomes(np.array([0b11, 0b10, 0b01]), 1)
        assert list(kept) == [1, 0] and frac == pytest.approx(2 / 3)

    def test_record_interface(self):
        rec = MeasurementRecord.from_outcomes(np.array([0b101, 0b100]), 3)
        kept, frac = condition_on_ancilla(rec)
        assert kept.counts == {"10": 1} and frac == 0.5

    def test_empty_after_conditioning(self):
        rec = MeasurementRecord.from_outcomes(np.array([0b100, 0b000]), 3)
        with pytest.raises(EmptyAfterConditioningError):
            condition_on_ancilla(rec)


class TestMetrics:
    def _sweep(self, m):
        n = len(m)
        return SweepResult("hs", m, 1, False, None, None, np.zeros(n, int), np.zeros(n, int), {})

    def test_identity(self):
        met = success_metrics(self._sweep(np.eye(8)))
        assert met.average_success == 1.0 and met.bqp_fraction == 1.0 and met.argmax_correct_count == 8

    def test_classical_baseline(self):
        met = success_metrics(self._sweep(np.full((1024, 1024), 1 / 1024)))
        assert met.average_success == pytest.approx(1 / 1024, abs=1e-15)
        assert round(100 * met.average_success, 1) == 0.1
        assert met.argmax_correct_count == 0

    def test_threshold_is_strict(self):
        m = np.array([[2 / 3, 1 / 3], [0.0, 1.0]])
        met = success_metrics(self._sweep(m))
        assert met.bqp_fraction == 0.5
        assert BQP_THRESHOLD == pytest.approx(2 / 3)

    def test_ties_fail_argmax(self):
        met = success_metrics(self._sweep(np.array([[0.5, 0.5], [0.2, 0.8]])))
        assert met.argmax_correct_count == 1

    def test_invalid_rows_excluded(self):
        m = np.eye(3)
        m[1] = np.nan
        met = success_metrics(self._sweep(m))
        assert met.excluded == [1] and met.average_success == 1.0


class TestEnvelope:
    def test_frozen_values(self):
        for n, value in enumerate(ENVELOPE_AVG_DEVICE):
            assert expected_envelope("bv", n, 0.975, 0.995, 0.993) == pytest.approx(value, abs=1e-6)

    def test_oracle_average_near_77_percent(self):
        pc = popcounts(10)
        avg = np.mean([expected_envelope("bv", int(n), 0.975, 0.995, 0.993) for n in pc])
        assert avg == pytest.approx(ENVELOPE_ORACLE_AVERAGE, abs=1e-6)
        assert expected_envelope("bv", 5, 0.975, 0.995, 0.993) == pytest.approx(0.77, abs=0.005)

    def test_hs_form(self):
        assert expected_envelope("hs", 25, 0.975, 0.995, 0.993) == pytest.approx(
            0.975**10 * 0.995**25 * 0.993**10)

    def test_perfect(self):
        assert expected_envelope("bv", 7, 1, 1, 1) == 1.0

    def test_bad_input(self):
        with pytest.raises(ValueError):
            expected_envelope("bv", -1, 0.9, 0.9, 0.9)
        with pytest.raises(ValueError):
            expected_envelope("bv", 1, 1.2, 0.9, 0.9)


class TestSweeps:
    def test_noiseless_subset_identity(self):
        idx = [0, 1, 511, 1023]
        for alg in ("bv", "hs"):
            sweep = run_sweep(alg, shots=3, seed=0, oracles=idx)
            for i in idx:
                assert sweep.process_matrix[i, i] == 1.0

    def test_worker_invariance(self):
        idx = list(range(0, 1024, 97))
        a = run_sweep("bv", preset("methods-bv"), shots=50, seed=3, oracles=idx, workers=1)
        b = run_sweep("bv", preset("methods-bv"), shots=50, seed=3, oracles=idx, workers=2)
        assert np.array_equal(a.process_matrix[idx], b.process_matrix[idx])

    def test_fault_isolation(self, monkeypatch):
        real = oracles._build

        def flaky(algorithm, index, width):
            if index == 5:
                raise RuntimeError("boom")
            return real(algorithm, index, width)

        monkeypatch.setattr(oracles, "_build", flaky)
        sweep = run_sweep("hs", shots=2, seed=0, oracles=[4, 5, 6])
        assert 5 in sweep.invalid and "boom" in sweep.invalid[5]
        met = success_metrics(sweep)
        assert 5 in met.excluded

    def test_unconditioned_flag(self):
        dev = DeviceModel.uniform(11, 0.99, 0.95, 0.99)
        cfg = preset("device-pauli", device=dev)
        raw = run_sweep("bv", cfg, shots=200, seed=1, oracles=[1023], condition=False)
        cond = run_sweep("bv", cfg, shots=200, seed=1, oracles=[1023])
        assert not raw.conditioned and cond.conditioned
        assert raw.process_matrix[1023, 1023] == pytest.approx(raw.raw_success[1023])
        assert cond.retained_fraction[1023] < 1.0

    def test_zero_shots(self):
        with pytest.raises(ValueError):
            run_sweep("bv", shots=0)

    def test_write_and_load(self, tmp_path):
        sweep = run_sweep("hs", shots=2, seed=0, oracles=[0, 3])
        paths = write_sweep(sweep, tmp_path)
        back = load_sweep(tmp_path, "hs")
        assert np.array_equal(back.process_matrix, sweep.process_matrix, equal_nan=True)
        header = paths["csv"].read_text().splitlines()[0]
        assert header == "oracle_index,output_integer,probability"
        assert back.n_2q[0] == 10

    def test_metrics_json_deterministic(self):
        sweep = run_sweep("bv", NoiseConfig(detection_misid=0.01), shots=20, seed=4, oracles=[7, 8])
        a = metrics_json(success_metrics(sweep), sweep)
        sweep2 = run_sweep("bv", NoiseConfig(detection_misid=0.01), shots=20, seed=4, oracles=[7, 8])
        assert a == metrics_json(success_metrics(sweep2), sweep2)


class TestErrorPattern:
    def test_enumeration_matches_frozen(self):
        assert enumerate_hamming1_drop_fraction() == pytest.approx(HAMMING1_DROP_FRACTION, abs=1e-6)

    def test_crosstalk_only_limit(self):
        # without detection flips, single events are all 1->0 drops
        assert enumerate_hamming1_drop_fraction(n=4, d=0.0, apps=1) == pytest.approx(1.0)

    def test_subset_sweep_dominated_by_drops(self):
        idx = [i for i in range(1024) if bin(i).count("1") == 10 or bin(i).count("1") == 9]
        sweep = run_sweep("bv", preset("methods-bv"), shots=500, seed=2, oracles=idx)
        m = np.nan_to_num(sweep.process_matrix)
        assert hamming1_drop_fraction(m) > 0.9


class TestDeviceBand:
    def test_all_ones_within_band(self):
        dev = load_device_model()
        sweep = run_sweep("bv", preset("device-pauli", device=dev), shots=500, seed=0,
                          oracles=[1023], condition=False)
        f2 = list(dev.f_2q.values())
        spam = dev.averages()["f_spam"]
        best = expected_envelope("bv", 10, max(f2), max(dev.f_1q), spam)
        worst = expected_envelope("bv", 10, min(f2), min(dev.f_1q), spam)
        assert worst <= sweep.process_matrix[1023, 1023] <= best

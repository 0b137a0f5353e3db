"""ionbench command-line harness.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or configuration
error. Every stochastic command requires ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from itertools import combinations
from pathlib import Path

import numpy as np

from .calibration import FitError, run_rb_campaign, run_tomography
from .circuit import Circuit, InvalidGateError
from .compiler import CompileError, CompilerOptions, compile_circuit
from .noise import (
    PRESETS,
    ConfigurationError,
    DeviceModel,
    SchemaError,
    ValidationError,
    load_device_model,
    noisy_run,
    preset,
)
from .oracles import (
    REGISTER,
    BVOracle,
    HSOracle,
    build_bv_circuit,
    build_hs_circuit,
    load_sweep,
    metrics_json,
    run_sweep,
    success_metrics,
    write_sweep,
)
from .report import build_report, write_report

log = logging.getLogger("ionbench")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_seed(args) -> int:
    if args.seed is None:
        raise UsageError(f"'{args.command}' is stochastic: pass --seed")
    return args.seed


def _device(args) -> DeviceModel:
    if args.device is None:
        return load_device_model()
    path = Path(args.device)
    if not path.is_file():
        raise UsageError(f"device file not found: {path}")
    try:
        return load_device_model(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a device table ({exc})") from exc


def _noise(args, register=tuple(range(REGISTER))):
    device = _device(args) if args.noise == "device-pauli" else None
    return preset(args.noise, register=register, device=device)


def _read_circuit(path: str) -> Circuit:
    text = Path(path).read_text()
    try:
        return Circuit.from_json(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a circuit document ({exc})") from exc


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _source_circuit(args) -> Circuit:
    picks = [x is not None for x in (args.input, args.bv, args.hs)]
    if sum(picks) != 1:
        raise UsageError("give exactly one of INPUT, --bv INDEX or --hs INDEX")
    if args.bv is not None:
        return build_bv_circuit(BVOracle(_oracle_bits(args.bv)))
    if args.hs is not None:
        return build_hs_circuit(HSOracle(_oracle_bits(args.hs)))
    return _read_circuit(args.input)


def _oracle_bits(text: str) -> str:
    """A 10-character bitstring as given, otherwise a decimal oracle index."""
    if len(text) == REGISTER and set(text) <= {"0", "1"}:
        return text
    try:
        index = int(text)
    except ValueError as exc:
        raise UsageError(f"oracle must be an index or a {REGISTER}-bit string, got {text!r}") from exc
    if not 0 <= index < 2**REGISTER:
        raise UsageError(f"oracle index {index} outside [0, {2**REGISTER})")
    return format(index, f"0{REGISTER}b")


def _compiler_options(args) -> CompilerOptions:
    return CompilerOptions(
        enable_merge=not args.no_merge,
        enable_rz_virtualization=not args.no_rz_virtual,
        equivalence_check=args.check,
    )


def cmd_compile(args) -> int:
    circuit = _source_circuit(args)
    compiled = compile_circuit(circuit, _compiler_options(args))
    out = _out_dir(args)
    stem = circuit.label or "circuit"
    (out / f"{stem}.native.json").write_text(compiled.circuit.to_json(indent=1) + "\n")
    _write_json(out / f"{stem}.counts.json", compiled.sidecar())
    print(json.dumps(compiled.counts, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    seed = _require_seed(args)
    circuit = _source_circuit(args)
    compiled = compile_circuit(circuit, _compiler_options(args))
    register = tuple(range(min(REGISTER, circuit.num_qubits)))
    record = noisy_run(compiled, _noise(args, register), args.shots, seed)
    out = _out_dir(args)
    stem = circuit.label or "circuit"
    _write_json(out / f"{stem}.record.json", {**record.to_dict(), "seed": seed, "noise": args.noise})
    return EXIT_OK


def cmd_sweep(args) -> int:
    seed = _require_seed(args)
    noise = _noise(args)
    sweep = run_sweep(args.algorithm, noise, shots=args.shots, seed=seed,
                      condition=not args.no_condition)
    metrics = success_metrics(sweep)
    out = _out_dir(args)
    write_sweep(sweep, out)
    extra = {"seed": seed, "noise": args.noise}
    text = metrics_json(metrics, sweep, extra)
    # the timestamp is the only field allowed to differ between identical runs
    payload = json.loads(text)
    payload["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    (out / f"{sweep.algorithm}_metrics.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    print(f"{sweep.algorithm}: average_success={metrics.average_success:.4f} "
          f"bqp_fraction={metrics.bqp_fraction:.4f} argmax_correct={metrics.argmax_correct_count}")
    if sweep.invalid:
        log.warning("%d oracles failed and were excluded", len(sweep.invalid))
    return EXIT_OK


def cmd_rb(args) -> int:
    seed = _require_seed(args)
    device = _device(args)
    if args.all == (args.qubit is not None):
        raise UsageError("give a qubit index or --all")
    qubits = range(device.num_qubits) if args.all else [args.qubit]
    for q in qubits:
        if not 0 <= q < device.num_qubits:
            raise UsageError(f"qubit {q} outside the {device.num_qubits}-ion device")
    out = _out_dir(args)
    fits = {}
    with open(out / "rb_points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["qubit", "L", "sequence_id", "survival"])
        for q in qubits:
            points, fit = run_rb_campaign(q, device, seqs_per_length=args.sequences,
                                          shots=args.shots, seed=seed)
            for L, k, s in points:
                w.writerow([q, L, k, f"{s:.6g}"])
            fits[str(q)] = fit.to_dict()
            print(f"qubit {q}: p={fit.p:.5f}+-{fit.p_err:.5f} B+1/2={fit.spam_fidelity:.5f}")
    summary = {"fits": fits, "mean_p": float(np.mean([f["p"] for f in fits.values()])), "seed": seed}
    _write_json(out / "rb_fits.json", summary)
    return EXIT_OK


def _parse_pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split("-"))
    except ValueError as exc:
        raise UsageError(f"pair must look like '0-1', got {text!r}") from exc
    if a == b:
        raise UsageError("pair needs two distinct ions")
    return min(a, b), max(a, b)


def cmd_tomo(args) -> int:
    seed = _require_seed(args)
    if args.all_pairs == (args.pair is not None):
        raise UsageError("give a pair like 0-1 or --all-pairs")
    device = None if args.noise == "none" else _device(args)
    n = device.num_qubits if device is not None else REGISTER + 1
    pairs = list(combinations(range(n), 2)) if args.all_pairs else [_parse_pair(args.pair)]
    for a, b in pairs:
        if b >= n:
            raise UsageError(f"pair {a}-{b} outside the {n}-ion device")
    estimates = []
    for a, b in pairs:
        est = run_tomography((a, b), device, shots_per_phase=args.shots,
                             population_shots=args.population_shots, seed=[seed, a, b])
        estimates.append(est.to_dict())
        print(f"{a}-{b}: F={est.F:.4f} [{est.ci_low:.4f}, {est.ci_high:.4f}]")
    out = _out_dir(args)
    summary = {"estimates": estimates, "mean_F": float(np.mean([e["F"] for e in estimates])), "seed": seed}
    _write_json(out / "tomography.json", summary)
    return EXIT_OK


def cmd_report(args) -> int:
    sweep_dir = Path(args.sweep_dir)
    if not (sweep_dir / f"{args.algorithm}_matrix.npy").is_file():
        raise UsageError(f"no {args.algorithm} sweep outputs in {sweep_dir}")
    sweep = load_sweep(sweep_dir, args.algorithm)
    report = build_report(sweep, _device(args))
    paths = write_report(report, sweep, args.out or sweep_dir)
    print(paths["json"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ionbench", description="Trapped-ion benchmarking simulator and harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, shots=None):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--device", default=None, help="device table JSON (default: shipped table)")
        sp.add_argument("--out", default="ionbench_out")
        if shots is not None:
            sp.add_argument("--shots", type=int, default=shots)

    def circuit_source(sp):
        sp.add_argument("input", nargs="?", help="circuit JSON file")
        sp.add_argument("--bv", default=None, metavar="ORACLE", help="BV oracle (index or bitstring)")
        sp.add_argument("--hs", default=None, metavar="ORACLE", help="HS oracle (index or bitstring)")
        sp.add_argument("--no-merge", action="store_true")
        sp.add_argument("--no-rz-virtual", action="store_true")
        sp.add_argument("--check", action="store_true", help="verify unitary equivalence")

    sp = sub.add_parser("compile", help="lower a circuit to native gates")
    circuit_source(sp)
    sp.add_argument("--out", default="ionbench_out")
    sp.set_defaults(func=cmd_compile)

    sp = sub.add_parser("run", help="compile and sample one circuit")
    circuit_source(sp)
    common(sp, shots=500)
    sp.add_argument("--noise", choices=PRESETS, default="none")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run all 1024 oracles")
    sp.add_argument("algorithm", choices=("bv", "hs"))
    common(sp, shots=500)
    sp.add_argument("--noise", choices=PRESETS, default="none")
    sp.add_argument("--no-condition", action="store_true", help="BV: discard the ancilla instead of post-selecting")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("rb", help="single-qubit randomized benchmarking")
    sp.add_argument("qubit", nargs="?", type=int)
    sp.add_argument("--all", action="store_true")
    sp.add_argument("--sequences", type=int, default=24)
    common(sp, shots=500)
    sp.set_defaults(func=cmd_rb)

    sp = sub.add_parser("tomo", help="Bell-state parity tomography")
    sp.add_argument("pair", nargs="?", help="ion pair, e.g. 0-1")
    sp.add_argument("--all-pairs", action="store_true")
    sp.add_argument("--noise", choices=("none", "device-pauli"), default="device-pauli")
    sp.add_argument("--population-shots", type=int, default=2000)
    common(sp, shots=250)
    sp.set_defaults(func=cmd_tomo)

    sp = sub.add_parser("report", help="box plots, envelopes and heatmap from sweep outputs")
    sp.add_argument("sweep_dir")
    sp.add_argument("--algorithm", choices=("bv", "hs"), default="bv")
    sp.add_argument("--device", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ionbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "shots", 1) is not None and getattr(args, "shots", 1) < 1:
        print("ionbench: error: --shots must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, SchemaError, ValidationError, InvalidGateError,
            FileNotFoundError, IndexError) as exc:
        print(f"ionbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CompileError, FitError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"ionbench: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

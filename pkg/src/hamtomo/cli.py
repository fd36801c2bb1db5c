"""Command-line entry points: generate, simulate, estimate, reconstruct,
phase-estimate, pipeline, report."""

import argparse
import json
from pathlib import Path
import sys

import numpy as np

from .control import estimate_gauge_phases
from .errors import TomographyError, ValidationError
from .estimator import ModelFit, optimize_frequencies, refine_degenerate
from .experiment import (
    SamplingPlan,
    propagate_state,
    read_traces,
    run_fixed_basis,
    write_traces,
)
from .harness import RunConfig, generate_system, run_pipeline, write_report, write_tables
from .model import load_hamiltonian, save_hamiltonian
from .reconstruction import reconstruct, save_reconstruction
from .spectral import find_peaks, power_spectrum, write_spectrum_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    """argparse parser that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hamtomo",
                     description="Simulate and reconstruct four-level Hamiltonians "
                                 "from fixed-basis measurement traces.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Draw a random test Hamiltonian")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--band", type=float, nargs=2, default=(0.3, 7.0),
                     metavar=("LO", "HI"))
    gen.add_argument("--min-separation", type=float, default=1e-3)
    gen.add_argument("--near-degenerate", action="store_true")
    gen.add_argument("--out", type=Path, default=None)

    sim = sub.add_parser("simulate", help="Simulate fixed-basis traces")
    sim.add_argument("--hamiltonian", type=Path, default=None,
                     help="Hamiltonian JSON; generated from --seed when omitted")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--n", type=int, default=1025, help="number of sample times")
    sim.add_argument("--ne", type=int, default=250, help="repetitions per data point")
    sim.add_argument("--dt", type=float, default=0.1)
    sim.add_argument("--out", type=Path, required=True)

    est = sub.add_parser("estimate", help="Estimate frequencies/coefficients from traces")
    est.add_argument("--traces", type=Path, required=True)
    est.add_argument("--out", type=Path, default=None)
    est.add_argument("--dump-spectrum", type=Path, default=None)
    est.add_argument("--omega-max", type=float, default=7.7)
    est.add_argument("--resolution-factor", type=float, default=4.0)
    est.add_argument("--dead-zone", type=float, default=0.15)
    est.add_argument("--max-peaks", type=int, default=6)
    est.add_argument("--restarts", type=int, default=5)
    est.add_argument("--seed", type=int, default=None,
                     help="restart-jitter seed; defaults to the trace seed")

    rec = sub.add_parser("reconstruct", help="Reconstruct the Hamiltonian from a fit")
    rec.add_argument("--fit", type=Path, required=True)
    rec.add_argument("--out", type=Path, default=None)
    rec.add_argument("--no-refine", action="store_true",
                     help="skip the phase-constraint refinement step")

    phase = sub.add_parser("phase-estimate",
                           help="Estimate gauge phases from two-step traces")
    phase.add_argument("--htilde", type=Path, required=True,
                       help="gauge-fixed target Hamiltonian JSON")
    phase.add_argument("--h0", type=Path, required=True,
                       help="estimated reference Hamiltonian JSON")
    phase.add_argument("--traces", type=Path, required=True,
                       help="two-step trace CSV (sidecar must carry t_star)")
    phase.add_argument("--restarts", type=int, default=8)
    phase.add_argument("--seed", type=int, default=None)
    phase.add_argument("--out", type=Path, default=None)

    pipe = sub.add_parser("pipeline", help="Run the batch pipeline from a config")
    pipe.add_argument("--config", type=Path, default=None)
    pipe.add_argument("--seed", type=int, default=None, help="override config seed")
    pipe.add_argument("--out", type=Path, default=None, help="override output dir")
    pipe.add_argument("--dump-traces", action="store_true")
    pipe.add_argument("--dump-spectrum", action="store_true")

    rep = sub.add_parser("report", help="Regenerate tables.csv from a report.json")
    rep.add_argument("--report", type=Path, required=True)
    rep.add_argument("--out", type=Path, default=None)

    return parser


def _emit(payload: dict, out: Path | None) -> None:
    text = json.dumps(payload, indent=1)
    if out is None:
        print(text)
    else:
        Path(out).write_text(text + "\n", encoding="utf-8")


def _cmd_generate(args) -> int:
    h = generate_system(args.seed, band=tuple(args.band),
                        min_separation=args.min_separation,
                        near_degenerate=args.near_degenerate)
    if args.out is None:
        _emit({"re": h.real.tolist(), "im": h.imag.tolist()}, None)
    else:
        save_hamiltonian(h, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.hamiltonian is not None:
        h = load_hamiltonian(args.hamiltonian)
    else:
        h = generate_system(args.seed)
    plan = SamplingPlan(dt=args.dt, n_samples=args.n, shots=args.ne, seed=args.seed)
    traces = run_fixed_basis(h, plan)
    write_traces(traces, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    traces = read_traces(args.traces)
    spec = power_spectrum(traces, omega_max=args.omega_max,
                          resolution_factor=args.resolution_factor,
                          subtract_mean=True)
    if args.dump_spectrum is not None:
        write_spectrum_csv(spec, args.dump_spectrum)
    peaks = find_peaks(spec, max_peaks=args.max_peaks, dead_zone=args.dead_zone)
    if peaks.size == 0:
        print("no spectral peaks found", file=sys.stderr)
        return EXIT_NUMERICAL
    fit = optimize_frequencies(peaks, traces, restarts=args.restarts, seed=args.seed)
    if fit.n_frequencies < 6:
        fit = refine_degenerate(fit, traces, seed=args.seed)
    if args.out is None:
        _emit(fit.to_dict(), None)
    else:
        fit.save(args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    fit = ModelFit.load(args.fit)
    h_est, diag = reconstruct(fit, refine=not args.no_refine)
    if args.out is None:
        _emit({"hamiltonian": {"re": h_est.real.tolist(), "im": h_est.imag.tolist()},
               **diag.to_dict()}, None)
    else:
        save_reconstruction(h_est, diag, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_phase_estimate(args) -> int:
    h_tilde = load_hamiltonian(args.htilde)
    h0 = load_hamiltonian(args.h0)
    traces = read_traces(args.traces)
    if traces.t_star is None:
        raise ValidationError("trace sidecar carries no t_star; not two-step data")
    phi0 = propagate_state(h0, traces.t_star, np.array([1.0, 0, 0, 0], dtype=complex))
    estimate = estimate_gauge_phases(h_tilde, phi0, traces,
                                     restarts=args.restarts, seed=args.seed)
    if args.out is None:
        _emit(estimate.to_dict(), None)
    else:
        estimate.save(args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    config = RunConfig.load(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.output_dir = str(args.out)
    if args.dump_traces:
        config.dump_traces = True
    if args.dump_spectrum:
        config.dump_spectra = True
    report = run_pipeline(config)
    report_path, tables_path = write_report(report, config.output_dir)
    print(f"wrote {report_path}")
    print(f"wrote {tables_path}")
    failures = sum(1 for c in report.cells if c.failure is not None)
    if failures:
        print(f"{failures} cell(s) failed; see report.json", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    out = args.out if args.out is not None else Path(args.report).parent / "tables.csv"
    write_tables(payload, out)
    print(f"wrote {out}")
    return EXIT_OK


_HANDLERS = {
    "generate": _cmd_generate,
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "reconstruct": _cmd_reconstruct,
    "phase-estimate": _cmd_phase_estimate,
    "pipeline": _cmd_pipeline,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TomographyError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line runner: dilute, typical, bounds, measures, verify, device.

Exit codes: 0 pass, 1 check failure, 2 usage or config error. Parameters may
come from a JSON file given with --config; flags on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .dilution import CapacityError, ProtocolConfig, run_protocol
from .dilution.config import ENUMERATE_OUTCOMES_UP_TO
from .dilution.symbolic import STEPWISE_RECORD_LIMIT, BranchState
from .divergences import (
    BoundReport,
    devetak_winter_rate,
    dual_certificate_value,
    hypothesis_testing_divergence,
    max_relative_entropy,
    min_relative_entropy,
    relative_entropy,
    sandwiched_renyi,
    yield_cost_bounds,
)
from .states import (
    GeneralizedPrivateState,
    SchmidtState,
    TwistingUnitary,
    behavior_from_realization,
    chsh_settings,
    check_strict_irreducibility,
    make_max_entangled,
    ppt_realization_behavior,
    random_gsir,
    sigma_ansatz,
)
from .suite import CHECKS, run_suite
from .tensor_core import RegisterState, UnitaryOperator
from .typicality import (
    SourceSpec,
    check_size_bounds,
    enumerate_typical_set,
    is_typical,
    typical_mass,
    typical_size,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Invalid parameters or input files; maps to exit code 2."""


# --- output helpers -------------------------------------------------------------


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, allow_nan=False)


def write_text(path: str | None, text: str):
    """Write atomically, or to stdout when no path is given."""
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=f".{p.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, p)


def load_json(path: str, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}") from exc


def parse_floats(text, name: str) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, list):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--{name}: {exc}") from exc


def figures_enabled(args) -> bool:
    return not args.no_figures and args.out not in (None, "-")


# --- argument handling -------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with parameters; flags override it")
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default 1)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures next to --out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="keycost", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dilute", help="run the dilution protocol")
    _common(p)
    p.add_argument("--schmidt", help="SchmidtState JSON file")
    p.add_argument("--shield", help="shield RegisterState JSON file")
    p.add_argument("--twist", help="JSON list of twisting unitaries")
    p.add_argument("--state", help="generalized private state JSON file (instead of the three above)")
    p.add_argument("--n", type=int)
    p.add_argument("--delta")
    p.add_argument("--eta", type=float)
    p.add_argument("--backend", choices=("symbolic", "dense"))
    p.add_argument("--x-samples", type=int, dest="x_samples")
    p.add_argument("--report", help="report JSON path (alias of --out)")
    p.add_argument("--trace", help="write one JSON line per step per branch to this file")
    p.add_argument("--inject-fault", dest="inject_fault", choices=("label", "ancilla", "pec_label"))

    p = sub.add_parser("typical", help="strongly typical sets")
    _common(p)
    p.add_argument("--alphabet", help="comma-separated symbols")
    p.add_argument("--probs", help="comma-separated probabilities, fractions allowed")
    p.add_argument("--n", type=int)
    p.add_argument("--delta")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--list", action="store_const", const="list", dest="mode")
    mode.add_argument("--mass", action="store_const", const="mass", dest="mode")
    mode.add_argument("--bounds", action="store_const", const="bounds", dest="mode")
    p.add_argument("--check", action="append", help="sequence to test (repeatable); lists only these")

    p = sub.add_parser("bounds", help="dual certificate and yield-cost bracket")
    _common(p)
    p.add_argument("--dk", type=int, dest="d_k")
    p.add_argument("--ds", type=int, dest="d_s", help="local shield dimension (random separable shield)")
    p.add_argument("--eps", help="comma-separated epsilons")
    p.add_argument("--state", help="private state JSON file (overrides --dk/--ds)")

    p = sub.add_parser("measures", help="entropies and divergences of a private state")
    _common(p)
    p.add_argument("--state", help="generalized private state JSON file")
    p.add_argument("--random", help="d_k,d_s for a seeded random GSIR")
    p.add_argument("--eps", help="comma-separated epsilons for D_h")

    p = sub.add_parser("verify", help="run the invariant suite")
    _common(p)
    p.add_argument("--only", action="append", choices=sorted(CHECKS))
    p.add_argument("--skip", action="append", choices=sorted(CHECKS))
    p.add_argument("--inject-fault", dest="inject_fault", choices=("label", "ancilla", "pec_label"))

    p = sub.add_parser("device", help="behavior P(ab|xy) of a bipartite realization")
    _common(p)
    p.add_argument("--state", help="bipartite RegisterState JSON file (default: Phi+ on 2x2)")
    p.add_argument("--gsir", help="generalized private state JSON; its key part is measured")
    p.add_argument("--ppt", action="store_true", help="evaluate through the partial-transpose realization")
    return ap


DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "n": None,
    "delta": None,
    "backend": "symbolic",
    "x_samples": 8,
    "mode": "list",
    "eps": "0,0.1,0.3",
    "d_k": 2,
    "d_s": 1,
}


def merge_config(args: argparse.Namespace) -> argparse.Namespace:
    cfg = {}
    if args.config:
        cfg = load_json(args.config, "config")
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        known = set(vars(args))
        extra = set(cfg) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
    for key, value in cfg.items():
        if getattr(args, key, None) in (None, False):
            setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    if args.jobs < 1:
        raise UsageError("--jobs must be positive")
    return args


# --- commands ---------------------------------------------------------------------------


def _load_gsir(path: str) -> GeneralizedPrivateState:
    try:
        return GeneralizedPrivateState.from_json(load_json(path, "state"))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid state {path}: {exc}") from exc


def _dilution_input(args) -> GeneralizedPrivateState:
    if args.state:
        return _load_gsir(args.state)
    if not args.schmidt:
        raise UsageError("dilute needs --state or --schmidt")
    try:
        key = SchmidtState.from_json(load_json(args.schmidt, "Schmidt state"))
        if args.shield:
            shield = RegisterState.from_json(load_json(args.shield, "shield"))
        else:
            shield = RegisterState.density(np.eye(1), (1, 1))
        if args.twist:
            raw = load_json(args.twist, "twist")
            twist = TwistingUnitary(tuple(UnitaryOperator.from_json(u).data for u in raw))
        else:
            twist = TwistingUnitary.trivial(key.rank, shield.dim)
        return GeneralizedPrivateState(key, shield, twist)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid dilution input: {exc}") from exc


def _trace_line(step: str, st: BranchState) -> list[str]:
    lines = []
    if not st.measured:
        lines.append(dumps({"step": step, "branch": "all", "records": len(st.records), "norm": st.norm(), "abort_mass": str(st.abort_mass)}))
        return lines
    for x, recs in sorted(st.by_outcome().items()):
        norm = sum(r.amp**2 for r in recs)
        lines.append(dumps({"step": step, "branch": list(x), "records": len(recs), "norm": norm, "abort_mass": str(st.abort_mass)}))
    return lines


def stepwise_fits(cfg: ProtocolConfig) -> bool:
    """Trace every step from the start when all outcomes are followed anyway."""
    return cfg.d_n <= ENUMERATE_OUTCOMES_UP_TO and cfg.d_n * cfg.k**cfg.n <= STEPWISE_RECORD_LIMIT


def cmd_dilute(args) -> int:
    out = args.report or args.out
    if args.n is None or args.delta is None:
        raise UsageError("dilute needs --n and --delta")
    g = _dilution_input(args)
    try:
        cfg = ProtocolConfig.from_state(
            g, args.n, args.delta, eta=args.eta, seed=args.seed, backend=args.backend, x_samples=args.x_samples
        )
        cfg.codec
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"invalid protocol parameters: {exc}") from exc
    trace_lines: list[str] = []
    tracer = (lambda step, st: trace_lines.extend(_trace_line(step, st))) if args.trace else None
    try:
        report = run_protocol(cfg, inject_fault=args.inject_fault, trace=tracer, stepwise=tracer is not None and stepwise_fits(cfg))
    except CapacityError as exc:
        raise UsageError(str(exc)) from exc
    payload = report.to_json()
    write_text(out, dumps(payload) + "\n")
    if args.trace:
        write_text(args.trace, "".join(line + "\n" for line in trace_lines))
    if not args.no_figures and out not in (None, "-"):
        from .report import dilution_figure, figure_path

        dilution_figure(jsonable(payload), figure_path(out, "resources"))
    ok = report.label_exact and report.ancilla_restored and report.x_independent and not report.structural_failures
    return EXIT_OK if ok else EXIT_FAIL


def _source(args) -> SourceSpec:
    if not (args.alphabet and args.probs and args.n and args.delta):
        raise UsageError("typical needs --alphabet, --probs, --n and --delta")
    alphabet = args.alphabet if isinstance(args.alphabet, list) else str(args.alphabet).split(",")
    probs = args.probs if isinstance(args.probs, list) else str(args.probs).split(",")
    try:
        return SourceSpec(tuple(alphabet), tuple(probs), args.n, args.delta)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"invalid source: {exc}") from exc


def cmd_typical(args) -> int:
    spec = _source(args)
    checks = []
    for text in args.check or []:
        try:
            checks.append(spec.parse(text))
        except ValueError as exc:
            raise UsageError(f"--check {text!r}: {exc}") from exc
    code = EXIT_OK
    if args.mode == "mass":
        text = dumps({"n": spec.n, "delta": str(spec.delta), "mass": str(typical_mass(spec)), "mass_float": float(typical_mass(spec)), "size": typical_size(spec)}) + "\n"
    elif args.mode == "bounds":
        rep = check_size_bounds(spec)
        code = EXIT_OK if rep.satisfied else EXIT_FAIL
        text = dumps(rep.to_json()) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sequence", "probability", "typical"])
        rows = checks if checks else enumerate_typical_set(spec).members
        for s in rows:
            w.writerow([spec.render(s), repr(float(spec.sequence_probability(s))), str(is_typical(s, spec)).lower()])
        text = buf.getvalue()
    write_text(args.out, text)
    if figures_enabled(args):
        from .report import figure_path, typical_figure

        typical_figure(spec, figure_path(args.out, "types"))
    return code


def _bounds_state(args) -> GeneralizedPrivateState:
    if args.state:
        return _load_gsir(args.state)
    if args.d_k < 2 or args.d_s < 1:
        raise UsageError("--dk must be >= 2 and --ds >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(0,)))
    if args.d_s == 1:
        shield = RegisterState.density(np.eye(1), (1, 1))
        g = GeneralizedPrivateState(SchmidtState.uniform(args.d_k), shield, TwistingUnitary.trivial(args.d_k, 1))
    else:
        g = random_gsir(args.d_k, args.d_s, rng, "local")
    return GeneralizedPrivateState(SchmidtState.uniform(args.d_k), g.shield, g.twist, g.shield_split)


def cmd_bounds(args) -> int:
    eps_list = parse_floats(args.eps, "eps")
    if any(not 0 <= e < 1 for e in eps_list):
        raise UsageError("--eps values must lie in [0, 1)")
    g = _bounds_state(args)
    if any(abs(c - 1 / g.d_k) > 1e-12 for c in g.key.coeffs):
        raise UsageError("bounds needs a private state (uniform key)")
    sigma = sigma_ansatz(g)
    records, exact = [], []
    for eps in eps_list:
        dh = hypothesis_testing_divergence(g.expanded(), sigma, eps)
        beta = 0.0 if dh.infinite else 2.0 ** (-dh.value)
        exact.append(beta)
        cert = dual_certificate_value(g.d_k, g.shield, eps)
        params = {"d_k": g.d_k, "eps": eps, "value": cert.value, "feasible": cert.feasible, "y": cert.y, "d_h": dh.value}
        records.append(BoundReport.check("dual_certificate", cert.value, beta, params))
        records.append(yield_cost_bounds(g.d_k, eps))
    write_text(args.out, "".join(dumps(r.to_json()) + "\n" for r in records))
    if figures_enabled(args):
        from .report import bounds_figure, figure_path

        bounds_figure(g.d_k, eps_list, exact, figure_path(args.out, "bounds"))
    return EXIT_OK if all(r.satisfied for r in records) and all(r.parameters.get("feasible", True) for r in records) else EXIT_FAIL


def cmd_measures(args) -> int:
    eps_list = parse_floats(args.eps, "eps")
    if args.state:
        g = _load_gsir(args.state)
    elif args.random:
        try:
            d_k, d_s = (int(x) for x in str(args.random).split(","))
        except ValueError as exc:
            raise UsageError("--random expects d_k,d_s") from exc
        g = random_gsir(d_k, d_s, np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(0,))))
    else:
        raise UsageError("measures needs --state or --random")
    rho, sigma = g.expanded(), sigma_ansatz(g)

    def val(r):
        return "inf" if r.infinite else r.value

    payload = {
        "d_k": g.d_k,
        "dims": list(g.dims),
        "schmidt_entropy": g.key.entropy,
        "key_entropy": g.key_entropy(),
        "irreducibility": check_strict_irreducibility(g).value,
        "relative_entropy_to_ansatz": val(relative_entropy(rho, sigma)),
        "max_relative_entropy": val(max_relative_entropy(rho, sigma)),
        "min_relative_entropy": val(min_relative_entropy(rho, sigma)),
        "sandwiched_renyi_2": val(sandwiched_renyi(rho, sigma, 2.0)),
        "devetak_winter_rate": devetak_winter_rate(g),
        "hypothesis_testing": {str(e): val(hypothesis_testing_divergence(rho, sigma, e)) for e in eps_list},
    }
    write_text(args.out, dumps(payload) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        suite = run_suite(args.seed, only=args.only, skip=args.skip, fault=args.inject_fault, jobs=args.jobs)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    write_text(args.out, json.dumps(jsonable(suite.to_json()), sort_keys=True, indent=1) + "\n")
    for name in suite.failed:
        print(f"FAILED {name}", file=sys.stderr)
    return EXIT_OK if suite.passed else EXIT_FAIL


def cmd_device(args) -> int:
    if args.state and args.gsir:
        raise UsageError("give either --state or --gsir")
    if args.gsir:
        g = _load_gsir(args.gsir)
        key = tc.ptrace_matrix(g.matrix, g.dims, [0, 1])
        rho = RegisterState.density(key, g.dims[:2])
    elif args.state:
        try:
            rho = RegisterState.from_json(load_json(args.state, "state")).as_density()
        except (KeyError, ValueError) as exc:
            raise UsageError(f"invalid state: {exc}") from exc
    else:
        rho = make_max_entangled(2).as_density()
    if len(rho.dims) != 2 or rho.dims != (2, 2):
        raise UsageError("device evaluates CHSH settings on a 2x2 state")
    meas_a, meas_b = chsh_settings()
    try:
        beh = ppt_realization_behavior(rho, meas_a, meas_b) if args.ppt else behavior_from_realization(rho, meas_a, meas_b)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    payload = {"table": beh.table, "chsh": beh.chsh(), "signaling": beh.signaling(), "ppt_route": bool(args.ppt)}
    write_text(args.out, dumps(payload) + "\n")
    return EXIT_OK


COMMANDS = {
    "dilute": cmd_dilute,
    "typical": cmd_typical,
    "bounds": cmd_bounds,
    "measures": cmd_measures,
    "verify": cmd_verify,
    "device": cmd_device,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        args = merge_config(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"keycost {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

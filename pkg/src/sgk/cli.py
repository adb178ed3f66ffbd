"""Command-line interface driven by a JSON spec file.

Exit codes: 0 when every check passes, 1 when a check ran and failed,
2 for invalid input (unreadable or schema-violating spec, missing
sections, unknown scenario).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import certify as cf
from . import composer as cp
from . import gaingraph as gg
from . import scenarios
from .dtsim import trajectory_csv, simulate_batch
from .kfun import PLFunction

__all__ = ["main", "SPEC_SCHEMA", "load_spec", "InputError"]

_PL = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["zero", "K", "Kinf"]},
        "breakpoints": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                    "minItems": 2, "maxItems": 2}, "minItems": 1},
        "tail_slope": {"type": "number", "minimum": 0},
    },
    "required": ["breakpoints", "tail_slope"],
    "additionalProperties": False,
}
_PL_OR_NULL = {"anyOf": [_PL, {"type": "null"}]}
_BOUND = {"anyOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]}

SPEC_SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"const": 1},
        "scenario": {"enum": sorted(scenarios.SCENARIOS)},
        "network": {
            "type": "object",
            "properties": {
                "l": {"type": "integer", "minimum": 1},
                "M": {"type": "integer", "minimum": 1},
                "gains": {"type": "array", "items": {"type": "array", "items": _PL_OR_NULL}},
                "input_gains": {"type": "array", "items": _PL_OR_NULL},
            },
            "required": ["l", "gains"],
            "additionalProperties": False,
        },
        "certificate": {
            "type": "object",
            "properties": {
                "form": {"enum": ["max", "implication", "dissipative"]},
                "alpha": _PL, "gamma": _PL, "lower": _PL, "upper": _PL,
                "M": {"type": "integer", "minimum": 1},
            },
            "required": ["form", "alpha", "gamma"],
            "additionalProperties": False,
        },
        "k_bound": {
            "type": "object",
            "properties": {"kappa1": _PL, "kappa2": _PL},
            "required": ["kappa1", "kappa2"],
            "additionalProperties": False,
        },
        "sample_space": {
            "type": "object",
            "properties": {
                "state_lo": _BOUND, "state_hi": _BOUND, "input_lo": _BOUND, "input_hi": _BOUND,
                "n_samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "strategy": {"enum": ["grid", "uniform", "mixed"]},
                "zero_input_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "params": {
            "type": "object",
            "properties": {
                "s_max": {"type": "number", "exclusiveMinimum": 0},
                "grid": {"type": "integer", "minimum": 2},
                "tol": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "K": {"type": "integer", "minimum": 0},
                "M_cap": {"type": "integer", "minimum": 0},
                "eps": {"type": ["number", "null"], "minimum": 0},
                "check": {"enum": ["max", "implication", "dissipative", "sandwich", "iss", "k_bound"]},
                "initial_states": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "runs": {"type": "integer", "minimum": 1},
                "roundtrip": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["version"],
    "additionalProperties": False,
}


class InputError(Exception):
    pass


def load_spec(path) -> dict:
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read spec: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"spec is not valid JSON: {exc}") from None
    validator = jsonschema.Draft202012Validator(SPEC_SCHEMA)
    errors = sorted(validator.iter_errors(spec), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise InputError("spec failed validation:\n  " + "\n  ".join(lines))
    return spec


# -- spec interpretation -----------------------------------------------------

def _pl(d) -> PLFunction:
    try:
        return PLFunction.from_dict(d)
    except (ValueError, KeyError) as exc:
        raise InputError(f"invalid PL function: {exc}") from None


def _scenario(spec):
    name = spec.get("scenario")
    return None if name is None else scenarios.get(name)


def _space(spec, scen, seed):
    base = scen.space if scen is not None else cf.SampleSpace()
    kw = dict(spec.get("sample_space", {}))
    if "strategy" in kw:
        kw["strategy"] = cf.Strategy(kw["strategy"])
    sp = cf.SampleSpace(**{**_space_kwargs(base), **kw})
    if seed is None:
        seed = spec.get("params", {}).get("seed")
    if seed is not None:
        sp = sp.with_seed(seed)
    return sp


def _space_kwargs(sp: cf.SampleSpace) -> dict:
    return {"state_lo": sp.state_lo, "state_hi": sp.state_hi, "input_lo": sp.input_lo,
            "input_hi": sp.input_hi, "n_samples": sp.n_samples, "seed": sp.seed,
            "strategy": sp.strategy, "zero_input_fraction": sp.zero_input_fraction}


def _network(spec, scen):
    if "network" in spec:
        try:
            return gg.GainNetwork.from_dict(spec["network"])
        except ValueError as exc:
            raise InputError(f"invalid network: {exc}") from None
    if scen is not None and scen.network is not None:
        return scen.network
    raise InputError("spec needs a 'network' section or a scenario with a gain network")


def _certificate(spec, scen):
    if "certificate" not in spec:
        raise InputError("spec needs a 'certificate' section")
    if scen is None or scen.certificate is None:
        raise InputError("the certificate's function V comes from a scenario that bundles one")
    c = spec["certificate"]
    base = scen.certificate
    try:
        return cf.Certificate(base.V, cf.make_form(c["form"], _pl(c["alpha"]), _pl(c["gamma"])),
                              _pl(c["lower"]) if "lower" in c else base.lower,
                              _pl(c["upper"]) if "upper" in c else base.upper,
                              c.get("M", base.M), base.omega, {"construction": "spec"})
    except ValueError as exc:
        raise InputError(f"invalid certificate: {exc}") from None


def _k_bound(spec, scen):
    if "k_bound" in spec:
        k = spec["k_bound"]
        return cf.KBound(_pl(k["kappa1"]), _pl(k["kappa2"]))
    if scen is not None and scen.k_bound is not None:
        return scen.k_bound
    return None


# -- commands ----------------------------------------------------------------

def cmd_check_smallgain(spec, args):
    scen = _scenario(spec)
    net = _network(spec, scen)
    p = spec.get("params", {})
    rep = gg.check_small_gain(net, p.get("s_max", 10.0), p.get("grid", 512), p.get("tol", 1e-9))
    return int(not rep.verdict), {"command": "check-smallgain", "report": rep.to_dict()}, {}


def _run_form_check(kind, cert, scen, space, p, kb=None):
    sys_ = scen.system
    if kind == "sandwich":
        return cf.check_sandwich(cert, sys_, space)
    if kind == "max":
        return cf.check_max_form(cert, sys_, space)
    if kind == "implication":
        return cf.check_implication_form(cert, sys_, space)
    if kind == "dissipative":
        return cf.check_dissipative_form(cert, sys_, space)
    if kind == "iss":
        beta, gamma = cf.iss_estimate(cert)
        return cf.check_iss_estimate(sys_, scen.omega, beta, gamma, space, p.get("K", 50))
    if kind == "k_bound":
        if kb is None:
            raise InputError("k_bound check needs a 'k_bound' section")
        return cf.check_k_bound(kb, sys_, scen.omega, space)
    raise InputError(f"unknown check {kind!r}")


def cmd_certify(spec, args):
    scen = _scenario(spec)
    cert = _certificate(spec, scen)
    p = spec.get("params", {})
    space = _space(spec, scen, args.seed)
    kind = p.get("check", cert.form.name)
    if kind in ("max", "implication", "dissipative") and kind != cert.form.name:
        raise InputError(f"check {kind!r} does not match certificate form {cert.form.name!r}")
    try:
        rep = _run_form_check(kind, cert, scen, space, p, _k_bound(spec, scen))
    except cf.FormMismatch as exc:
        raise InputError(str(exc)) from None
    return int(not rep.verdict), {"command": "certify", "check": kind, "report": rep.to_dict()}, {}


def _compose(scen, net, space, p):
    cert, sig = cp.compose_certificate(net, scen.estimates, scen.mu, scen.system.blocks,
                                       p.get("eps"), p.get("s_max", 10.0), p.get("grid", 512))
    checks = {"max_form": cf.check_max_form(cert, scen.system, space),
              "sandwich": cf.check_sandwich(cert, scen.system, space)}
    return cert, sig, checks


def cmd_compose(spec, args):
    scen = _scenario(spec)
    if scen is None or not scen.estimates:
        raise InputError("compose needs a scenario with subsystem estimates")
    net = _network(spec, scen)
    p = spec.get("params", {})
    space = _space(spec, scen, args.seed)
    try:
        cert, sig, checks = _compose(scen, net, space, p)
    except cp.SmallGainViolated as exc:
        return 1, {"command": "compose", "error": "small-gain condition fails",
                   "report": exc.report.to_dict()}, {}
    except gg.MarginExhausted as exc:
        return 1, {"command": "compose", "error": str(exc)}, {}
    ok = all(r.verdict for r in checks.values())
    out = {"command": "compose", "certificate": cert.to_dict(), "sigma": sig.to_dict(),
           "self_check": {k: r.to_dict() for k, r in checks.items()}}
    return int(not ok), out, {}


def cmd_decompose(spec, args):
    scen = _scenario(spec)
    cert = _certificate(spec, scen)
    if not scen.block_omegas:
        raise InputError("decompose needs a scenario with block measurements")
    p = spec.get("params", {})
    space = _space(spec, scen, args.seed)
    try:
        dec = cp.reverse_decompose(cert, scen.block_omegas, scen.mu, p.get("M_cap", 64),
                                   p.get("s_max", 10.0), p.get("grid", 512))
    except cp.NoValidMhat as exc:
        return 1, {"command": "decompose", "error": "NoValidMhat", "message": str(exc)}, {}
    except ValueError as exc:
        raise InputError(str(exc)) from None
    checks = {
        "small_gain": gg.check_small_gain(dec.network, p.get("s_max", 10.0), p.get("grid", 512)),
        "assumption": cp.check_assumption(dec.network, dec.estimates, scen.system, space),
        "measurement_split": cp.check_measurement_split(scen.omega, scen.block_omegas, scen.mu,
                                                        scen.system, space),
    }
    out = {"command": "decompose", "decomposition": dec.to_dict()}
    if p.get("roundtrip", False):
        rescen = scenarios.Scenario(scen.name, scen.system, scen.omega, scen.space,
                                    estimates=dec.estimates, mu=scen.mu)
        try:
            recert, _, rechecks = _compose(rescen, dec.network, space, p)
            out["recomposed"] = recert.to_dict()
            checks.update({f"recomposed_{k}": r for k, r in rechecks.items()})
        except (cp.SmallGainViolated, gg.MarginExhausted) as exc:
            out["recomposed_error"] = str(exc)
            checks["recomposed_max_form"] = None
    ok = all(r is not None and r.verdict for r in checks.values())
    out["self_check"] = {k: (None if r is None else r.to_dict()) for k, r in checks.items()}
    return int(not ok), out, {}


def cmd_simulate(spec, args):
    scen = _scenario(spec)
    if scen is None:
        raise InputError("simulate needs a scenario")
    p = spec.get("params", {})
    K = p.get("K", 100)
    sys_ = scen.system
    if "initial_states" in p:
        xi = np.asarray(p["initial_states"], dtype=float)
        if xi.ndim != 2 or xi.shape[1] != sys_.n:
            raise InputError(f"initial states must be rows of length {sys_.n}")
    else:
        # starts are drawn uniformly; grid corners often sit on the zero set
        space = _space(spec, scen, args.seed)
        space = cf.SampleSpace(**{**_space_kwargs(space), "strategy": cf.Strategy.UNIFORM})
        xi = space.batches(sys_.n, 0, 0)[0][0][:p.get("runs", 1)]
    traj = simulate_batch(sys_, xi, None, K)           # (K+1, R, n)
    w = scen.omega(traj)                               # (K+1, R)
    files = {}
    runs = []
    for r in range(xi.shape[0]):
        name = f"trajectory_{r}.csv"
        files[name] = trajectory_csv(traj[:, r, :], np.zeros((max(K, 1), sys_.m)) if sys_.m else None,
                                     w[:, r])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(w[:-1, r] > 0, w[1:, r] / w[:-1, r], np.nan)
        windows = [float(np.max(c)) for c in np.array_split(w[:, r], min(10, K + 1))]
        summary = {"file": name, "xi": xi[r].tolist(), "omega_first": float(w[0, r]),
                   "window_max": windows,
                   "window_max_nonincreasing": bool(np.all(np.diff(windows) <= 1e-12)),
                   "omega_last": float(w[-1, r]), "omega_max": float(np.max(w[:, r])),
                   "nonincreasing": bool(np.all(np.diff(w[:, r]) <= 1e-12)),
                   "decay_ratio_max": None if np.all(np.isnan(ratio)) else float(np.nanmax(ratio)),
                   "decay_ratio_last": None if K == 0 or np.isnan(ratio[-1]) else float(ratio[-1])}
        if scen.certificate is not None and isinstance(scen.certificate.form, cf.MaxForm) \
                and scen.certificate.M == 1:
            beta, _ = cf.iss_estimate(scen.certificate)
            b = beta.sequence(w[0, r], K)
            summary["iss_violations"] = int(np.sum(w[:, r] > b + cf.ATOL + cf.RTOL * b))
        runs.append(summary)
    out = {"command": "simulate", "scenario": scen.name, "K": K, "runs": runs,
           "plot_hint": {"x": "k", "y": "omega", "gnuplot": "plot 'trajectory_0.csv' using 1:'omega' with lines"}}
    return 0, out, files


def cmd_export_spec(args):
    try:
        scen = scenarios.get(args.scenario)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None
    return 0, scen.to_spec(), {}


HELP = {
    "check-smallgain": "check every cycle of the gain network against the identity",
    "certify": "falsification-check a certificate on the sample space",
    "compose": "build a network certificate from block estimates",
    "decompose": "split a one-step max-form certificate into block estimates",
    "simulate": "write trajectories and measurement summaries",
}

COMMANDS = {
    "check-smallgain": cmd_check_smallgain,
    "certify": cmd_certify,
    "compose": cmd_compose,
    "decompose": cmd_decompose,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="directory for report.json and CSV files")
    common.add_argument("--seed", type=int, help="override the sample-space seed")
    common.add_argument("--workers", type=int, help="worker threads (default: $SGK_WORKERS or all cores)")
    common.add_argument("--quiet", action="store_true", help="do not print the report")
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name])
        p.add_argument("--spec", type=Path, required=True, help="JSON spec file")
    p = sub.add_parser("export-spec", parents=[common], help="write the spec file of a built-in scenario")
    p.add_argument("scenario", help=f"one of {', '.join(sorted(scenarios.SCENARIOS))}")
    return parser


def _emit(payload, files, args, report_name="report.json"):
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / report_name).write_text(text + "\n")
        for name, content in files.items():
            (args.out / name).write_text(content)
    if not args.quiet:
        print(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers is not None:
        os.environ["SGK_WORKERS"] = str(max(1, args.workers))
    try:
        if args.command == "export-spec":
            code, payload, files = cmd_export_spec(args)
            _emit(payload, files, args, "spec.json")
            return code
        spec = load_spec(args.spec)
        code, payload, files = COMMANDS[args.command](spec, args)
    except InputError as exc:
        print(f"sgk: error: {exc}", file=sys.stderr)
        return 2
    _emit(payload, files, args)
    return code


if __name__ == "__main__":
    sys.exit(main())

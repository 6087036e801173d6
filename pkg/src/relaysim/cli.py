"""Command-line front end: ``relaysim {outage,ber,dmt,validate}``.

Exit codes: 0 success, 1 failed validation checks, 2 usage or configuration
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .dmt import crossover_points, dmt_curve, estimate_diversity
from .errors import ParameterError, RelaySimError
from .schedule import Protocol, ProtocolSpec
from .sim import MAX_WORKERS_ENV, SimConfig, run

log = logging.getLogger("relaysim")

EXIT_OK, EXIT_CHECKS, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

_RUN_PROPS = {
    "name": {"type": "string"},
    "mode": {"enum": ["outage", "ber"]},
    "protocol": {"type": "string"},
    "L": {"type": "integer", "minimum": 1},
    "M": {"type": "integer", "minimum": 1},
    "N": {"type": "integer", "minimum": 1},
    "sp_mode": {"enum": [1, 2]},
    "r": {"type": ["string", "number"]},
    "rate": {"type": "number", "minimum": 0},
    "scope": {"enum": ["system", "source"]},
    "snr_db": {"oneOf": [{"type": "string"},
                         {"type": "array", "items": {"type": "number"}, "minItems": 1}]},
    "trials": {"type": "integer", "minimum": 1},
    "min_errors": {"type": "integer", "minimum": 1},
    "max_trials": {"type": "integer", "minimum": 1},
    "order": {"enum": [4, 8, 16]},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "workers": {"type": "integer", "minimum": 1},
    "out": {"type": "string"},
    "sidecar": {"type": "boolean"},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["runs"],
    "properties": {
        "defaults": {"type": "object", "additionalProperties": False, "properties": _RUN_PROPS},
        "runs": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "additionalProperties": False, "properties": _RUN_PROPS},
        },
    },
}


class ConfigError(Exception):
    pass


def parse_snr_grid(text) -> tuple:
    """``"start:step:stop"`` (stop inclusive) or a comma list, in dB."""
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    text = str(text).strip()
    try:
        if ":" in text:
            start, step, stop = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ConfigError("SNR step must be positive")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + i * step, 10) for i in range(max(n, 0)))
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot parse SNR grid {text!r}") from None


def parse_rational(text) -> Fraction:
    try:
        value = Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot parse multiplexing gain {text!r}") from None
    if value < 0:
        raise ConfigError("multiplexing gain must be nonnegative")
    return value


def _build_config(entry: dict, mode: str) -> tuple:
    """Turn one run entry into ``(SimConfig, out_path, sidecar)``."""
    run_mode = entry.get("mode", mode)
    if run_mode != mode:
        raise ConfigError(f"run {entry.get('name', '?')!r} is a {run_mode} run, not {mode}")
    try:
        protocol = Protocol.parse(entry.get("protocol", "superposition"))
        M = entry.get("M", 2)
        spec = ProtocolSpec(protocol, frame_length=entry.get("L", 1), n_sources=M,
                            n_antennas=entry.get("N", 2), sp_mode=entry.get("sp_mode", 1))
        grid = parse_snr_grid(entry["snr_db"]) if "snr_db" in entry else ()
        kwargs = dict(spec=spec, mode=mode, snr_grid_db=grid, seed=entry.get("seed", 0),
                      workers=entry.get("workers", 1))
        if mode == "outage":
            if "rate" in entry and "r" in entry:
                raise ConfigError("give either r or rate, not both")
            if "rate" in entry:
                kwargs["rate"] = float(entry["rate"])
            else:
                kwargs["r"] = parse_rational(entry.get("r", "1/6"))
            kwargs["trials"] = entry.get("trials", 10 ** 6)
            kwargs["scope"] = entry.get("scope", "system")
        else:
            kwargs["order"] = entry.get("order")
            kwargs["min_events"] = entry.get("min_errors", 500)
            kwargs["max_trials"] = entry.get("max_trials", 10 ** 7)
            if kwargs["order"] is not None and spec.protocol is not Protocol.STANDARD:
                from .modem import BerChain
                BerChain(spec, kwargs["order"])
        config = SimConfig(**kwargs)
    except KeyError as exc:
        raise ConfigError(f"missing key {exc}") from None
    except (ParameterError, RelaySimError) as exc:
        raise ConfigError(str(exc)) from None
    return config, entry.get("out"), bool(entry.get("sidecar", False))


def load_experiment_file(path: str, mode: str) -> list:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from None
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    defaults = doc.get("defaults", {})
    runs = [e for e in doc["runs"] if {**defaults, **e}.get("mode", mode) == mode]
    if not runs:
        raise ConfigError(f"{path} declares no {mode} runs")
    return [_build_config({**defaults, **e}, mode) for e in runs]


def _flags_entry(args) -> dict:
    entry = {}
    for flag, key in (("protocol", "protocol"), ("L", "L"), ("M", "M"), ("N", "N"),
                      ("sp_mode", "sp_mode"), ("seed", "seed"), ("workers", "workers"),
                      ("snr_db", "snr_db"), ("out", "out")):
        value = getattr(args, flag, None)
        if value is not None:
            entry[key] = value
    for flag in ("r", "rate", "scope", "trials", "min_errors", "max_trials", "order"):
        value = getattr(args, flag, None)
        if value is not None:
            entry[flag] = value
    if getattr(args, "sidecar", False):
        entry["sidecar"] = True
    return entry


def _collect_runs(args, mode: str) -> list:
    if args.config:
        runs = load_experiment_file(args.config, mode)
        overrides = {k: v for k, v in (("seed", args.seed), ("workers", args.workers)) if v is not None}
        if len(runs) > 1 and args.out:
            raise ConfigError("--out cannot be combined with a multi-run config")
        return [(dataclasses.replace(c, **overrides), args.out or out, side or args.sidecar)
                for c, out, side in runs]
    entry = _flags_entry(args)
    if "snr_db" not in entry:
        raise ConfigError("--snr-db is required without --config")
    return [_build_config(entry, mode)]


def _write_result(result, out, sidecar: bool):
    text = result.to_csv()
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    if sidecar:
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(result.to_dict(), indent=2))
    log.info("wrote %s", path)


def _progress(snr_db, trials, events):
    log.info("snr %g dB: %d trials, %d events", snr_db, trials, events)


def _simulate(args, mode: str) -> int:
    try:
        runs = _collect_runs(args, mode)
    except ConfigError as exc:
        print(f"relaysim: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        for config, out, sidecar in runs:
            result = run(config, progress=_progress)
            _write_result(result, out, sidecar)
            try:
                slope, err = estimate_diversity(result)
                log.info("diversity slope (top 15 dB): %.3f +/- %.3f", slope, err)
            except RelaySimError:
                pass
    except (RelaySimError, OSError) as exc:
        print(f"relaysim: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_outage(args) -> int:
    return _simulate(args, "outage")


def cmd_ber(args) -> int:
    return _simulate(args, "ber")


def _fmt(x: Fraction) -> str:
    return f"{float(x):.12g}"


def dmt_table(N: int, L: int, M: int, protocols) -> str:
    lines = [f"# relaysim {__version__} DMT breakpoints, N={N} L={L} M={M}",
             "protocol,r,d,r_exact,d_exact"]
    curves = [dmt_curve(p, N, L, M) for p in protocols]
    for c in curves:
        for r, d in c.breakpoints:
            lines.append(f"{c.protocol.value},{_fmt(r)},{_fmt(d)},{r},{d}")
    for i, a in enumerate(curves):
        for b in curves[i + 1:]:
            pts = crossover_points(a, b)
            if pts:
                lines.append(f"# crossover {a.protocol.value}/{b.protocol.value}: "
                             + " ".join(str(p) for p in pts))
    return "\n".join(lines) + "\n"


def _read_result_csv(path: str) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise ValueError(f"{path} has no data rows")
    cols = [np.array([float(r[k]) for r in rows]) for k in ("snr_db", "estimate", "events")]
    return tuple(cols)


def cmd_dmt(args) -> int:
    if args.fit:
        try:
            snr, prob, events = _read_result_csv(args.fit)
            window = None
            if args.window:
                lo, hi = (float(x) for x in args.window.split(":"))
                window = (lo, hi)
        except (OSError, ValueError) as exc:
            print(f"relaysim: config error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        try:
            slope, err = estimate_diversity((snr, prob, events), window)
        except RelaySimError as exc:
            print(f"relaysim: runtime error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print("slope,std_error")
        print(f"{slope:.6f},{err:.6f}")
        return EXIT_OK
    try:
        protocols = [Protocol.parse(p) for p in (args.protocol or "direct,standard,repetition,superposition").split(",")]
        text = dmt_table(args.N, args.L, args.M, protocols)
    except ParameterError as exc:
        print(f"relaysim: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_checks

    results = run_checks(seed=args.seed or 0)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail and not ok else ""))
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECKS


def _add_run_flags(p: argparse.ArgumentParser, mode: str):
    p.add_argument("--config", help="YAML experiment file")
    p.add_argument("--out", help="CSV output path (stdout if omitted)")
    p.add_argument("--sidecar", action="store_true", help="also write <out>.json with full metadata")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help=f"worker processes (capped by ${MAX_WORKERS_ENV})")
    p.add_argument("--snr-db", dest="snr_db", help='grid as "start:step:stop" or "a,b,c"')
    p.add_argument("--protocol", help="direct, standard, repetition, superposition or msource")
    p.add_argument("--L", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--sp-mode", dest="sp_mode", type=int, choices=(1, 2))
    if mode == "outage":
        p.add_argument("--r", help="multiplexing gain, e.g. 1/6")
        p.add_argument("--rate", type=float, help="fixed per-codeword rate in bits instead of --r")
        p.add_argument("--trials", type=int)
        p.add_argument("--scope", choices=("system", "source"),
                       help="any codeword in outage (default) or source S1 only")
    else:
        p.add_argument("--order", type=int, choices=(4, 8, 16), help="override the 2-BPCU QAM order")
        p.add_argument("--min-errors", dest="min_errors", type=int)
        p.add_argument("--max-trials", dest="max_trials", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaysim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"relaysim {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("outage", help="Monte-Carlo outage probability")
    _add_run_flags(p, "outage")
    p.set_defaults(func=cmd_outage)

    p = sub.add_parser("ber", help="uncoded bit error rate")
    _add_run_flags(p, "ber")
    p.set_defaults(func=cmd_ber)

    p = sub.add_parser("dmt", help="theoretical tradeoff breakpoints or slope fit")
    p.add_argument("--protocol", help="comma list (default: the four two-source protocols)")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--L", type=int, default=15)
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--out")
    p.add_argument("--fit", metavar="CSV", help="fit a diversity slope to a result CSV instead")
    p.add_argument("--window", help='fit window "low:high" in dB (default: top 15 dB)')
    p.set_defaults(func=cmd_dmt)

    p = sub.add_parser("validate", help="fast structural and oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

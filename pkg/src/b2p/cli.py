"""Command-line front end: ``b2p gen | pair | sweep | attack``.

Exit codes: 0 success, 1 pairing did not agree on a key, 2 parameter
error, 3 format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from b2p.dsp_preprocess import preprocess
from b2p.errors import FormatError, ParameterError
from b2p.eval_harness import (
    dataclass_from_dict,
    config_from_dict,
    config_to_dict,
    run_attack,
    run_sweep,
    sweep_csv,
    sweep_spec_from_dict,
)
from b2p.pairing_protocol import Role, Status, run_session
from b2p.signal_source import ObserverParams, SubjectParams, generate_subject, load_trace, save_trace

EXIT_OK, EXIT_NO_KEY, EXIT_PARAM, EXIT_FORMAT = 0, 1, 2, 3


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParameterError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text + "\n")
    else:
        Path(out).write_text(text + "\n", encoding="utf-8")


def cmd_gen(args) -> int:
    params = _read_json(args.params)
    if args.seed is not None:
        params["seed"] = args.seed
    p = dataclass_from_dict(SubjectParams, params)
    rip, acc = generate_subject(p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_trace(rip, out / "dev_a.csv")
    save_trace(acc, out / "dev_b.csv")
    (out / "params.json").write_text(json.dumps(config_to_dict(p), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out / 'dev_a.csv'} and {out / 'dev_b.csv'}")
    return EXIT_OK


def cmd_pair(args) -> int:
    cfg = config_from_dict(_read_json(args.config))
    sig_a = preprocess(load_trace(args.a), cfg.preprocess)
    sig_b = preprocess(load_trace(args.b), cfg.preprocess)
    res = run_session(sig_a, sig_b, cfg.session.as_role(Role.INITIATOR), seed=args.seed or 0)
    if args.transcript:
        Path(args.transcript).write_bytes(b"".join(res.transcript))
    out = res.outcome_a
    summary = {
        "status": out.status.value,
        "attempts_used": out.attempts_used,
        "agreed_cp_time_ms": out.agreed_cp_time_ms,
        "keys_match": out.key is not None and res.outcome_b.key == out.key,
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if out.status is Status.SUCCESS else EXIT_NO_KEY


def cmd_sweep(args) -> int:
    spec = sweep_spec_from_dict(_read_json(args.spec))
    rows = run_sweep(spec, seed=args.seed or 0)
    _emit(sweep_csv(spec.axis, rows).rstrip("\n"), args.out)
    return EXIT_OK


def cmd_attack(args) -> int:
    d = dict(_read_json(args.config))
    cohort = int(d.pop("cohort_size", 15))
    observer = dataclass_from_dict(ObserverParams, d.pop("observer", None))
    cfg = config_from_dict(d)
    report = run_attack(cohort, observer, cfg, seed=args.seed or 0)
    _emit(report.to_json(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="b2p", description="Respiration-based device pairing simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=_u64, default=None, help="unsigned 64-bit seed")
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate one synthetic subject's two device traces")
    p.add_argument("--params", help="JSON with SubjectParams fields")
    p.add_argument("--out", required=True, help="output directory")

    p = add("pair", cmd_pair, "run one pairing session between two traces")
    p.add_argument("--a", required=True, help="initiator trace CSV")
    p.add_argument("--b", required=True, help="responder trace CSV")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--transcript", help="write the wire transcript here")

    p = add("sweep", cmd_sweep, "sweep one parameter over a synthetic cohort")
    p.add_argument("--spec", required=True, help="sweep spec JSON")
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = add("attack", cmd_attack, "impersonation attack from a remote observer")
    p.add_argument("--config", help="config JSON, optionally with 'observer' and 'cohort_size'")
    p.add_argument("--out", help="JSON report path (default stdout)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"b2p: parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except FormatError as exc:
        print(f"b2p: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())

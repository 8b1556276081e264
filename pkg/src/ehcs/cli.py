"""Command-line frontend.

Exit codes: 0 on success, 1 on usage/config/I-O errors, 2 when a
certification lands in the marginal band.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, Problem, load_problem
from .design import critical_battery_capacity, search_dwell_policies
from .embedding import build_mode_chain
from .policy import (TransmissionPolicy, build_dwell_policy, dwell_probabilities, greedy_policy,
                     validate_policy)
from .sim import monte_carlo, write_ensemble_csv, write_runs_csv
from .stability import MARGINAL, certify

EXIT_OK, EXIT_ERROR, EXIT_MARGINAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_policy(text: str, problem: Problem) -> TransmissionPolicy:
    ehcs = problem.ehcs
    if text == "greedy":
        return greedy_policy(ehcs)
    if text.startswith("dwell:"):
        try:
            k_s, p_s = text[len("dwell:"):].split(",")
            k, p = int(k_s), float(p_s)
        except ValueError:
            raise UsageError(f"--policy dwell expects dwell:K,P, got {text!r}")
        try:
            return build_dwell_policy(ehcs, k, p)
        except ValueError as exc:
            raise UsageError(str(exc))
    if text.startswith("file:"):
        pol = TransmissionPolicy.from_json(Path(text[len("file:"):]).read_text())
        bad = validate_policy(pol, ehcs)
        if bad:
            raise ConfigError(f"policy file violates the EHCS constraints: {bad[:5]}")
        return pol
    raise UsageError(f"unknown policy {text!r} (use greedy, dwell:K,P or file:PATH)")


def _provenance(problem: Problem, **extra) -> dict:
    return {"tool": "ehcs", "tool_version": __version__, "config_hash": problem.config_hash, **extra}


def _emit(doc: dict, out) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_certify(args) -> int:
    problem = load_problem(args.config)
    policy = parse_policy(args.policy, problem)
    chain = build_mode_chain(problem.ehcs, policy)
    report = certify(chain, problem.ehcs.plant, args.tol)
    doc = {
        "report": report.to_dict(),
        "policy": policy.name,
        "modes": chain.size,
        "warnings": list(problem.ehcs.warnings),
        "provenance": _provenance(problem, tol=args.tol),
    }
    _emit(doc, args.out)
    return EXIT_MARGINAL if report.verdict == MARGINAL else EXIT_OK


def cmd_simulate(args) -> int:
    problem = load_problem(args.config)
    policy = parse_policy(args.policy, problem)
    ens = monte_carlo(problem.ehcs, policy, problem.x0, args.runs, args.horizon, args.seed,
                      battery0=problem.battery0, latent0=problem.latent0,
                      history0=problem.history0, workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ensemble_csv(ens, out / "ensemble.csv")
    write_runs_csv(ens, out / "runs.csv")
    meta = {"runs": args.runs, "horizon": args.horizon, "policy": policy.name,
            "provenance": _provenance(problem, seed=args.seed)}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_battery(args) -> int:
    problem = load_problem(args.config)
    scan = critical_battery_capacity(problem.ehcs, args.max, stop_at_first=not args.full)
    doc = {"report": scan.to_dict(), "provenance": _provenance(problem)}
    _emit(doc, args.out)
    return EXIT_OK


def cmd_policy_search(args) -> int:
    problem = load_problem(args.config)
    res = search_dwell_policies(problem.ehcs, args.kmax)
    doc = {"report": res.to_dict(), "provenance": _provenance(problem, kmax=args.kmax)}
    _emit(doc, args.out)
    return EXIT_OK


def cmd_dwell_probs(args) -> int:
    problem = load_problem(args.config)
    table = dwell_probabilities(problem.ehcs, args.k)
    fh = sys.stdout if args.out is None else open(args.out, "w", newline="")
    try:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["battery", "latent", "phi"])
        for (b, l), v in np.ndenumerate(table.probs):
            wr.writerow([b, l + 1, repr(float(v))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ehcs", description="Stability certification for energy harvesting control systems")
    p.add_argument("--version", action="version", version=f"ehcs {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("certify", help="certify a policy; writes a stability report JSON")
    c.add_argument("config")
    c.add_argument("--policy", default="greedy", help="greedy | dwell:K,P | file:PATH")
    c.add_argument("--tol", type=float, default=1e-10)
    c.add_argument("--out")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("simulate", help="Monte Carlo ensemble; writes CSVs")
    s.add_argument("config")
    s.add_argument("--runs", type=int, required=True)
    s.add_argument("--horizon", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--policy", default="greedy")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("battery", help="critical battery capacity scan (scalar plants)")
    b.add_argument("config")
    b.add_argument("--max", type=int, default=64)
    b.add_argument("--full", action="store_true", help="certify every capacity up to --max")
    b.add_argument("--out")
    b.set_defaults(func=cmd_battery)

    ps = sub.add_parser("policy-search", help="certify every distinct dwell-time policy")
    ps.add_argument("config")
    ps.add_argument("--kmax", type=int, required=True)
    ps.add_argument("--out")
    ps.set_defaults(func=cmd_policy_search)

    d = sub.add_parser("dwell-probs", help="dump the dwell probability table as CSV")
    d.add_argument("config")
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_dwell_probs)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        return args.func(args)
    except (UsageError, ConfigError, OSError, ValueError) as exc:
        print(f"ehcs: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

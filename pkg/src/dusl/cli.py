"""Command line entry point: ``dusl run|oracle|stats|replay``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .exceptions import ConfigurationError, InstanceTooLargeError, StructuralError
from .harness import OUTPUT_ENV, load_config, policy_statistics, replay, run_experiment
from .oracle import run_checks
from .policy import load_snapshot

log = logging.getLogger("dusl")


def _cmd_run(args) -> int:
    config = load_config(args.config)
    results = run_experiment(config, args.output_dir)
    out = Path(args.output_dir) if args.output_dir else config.resolved_output_dir()
    for r in results:
        s = r.summary
        extra = ""
        if s.get("deterministic_success") is not None:
            extra = f" deterministic={s['deterministic_success']:.4f}"
        print(f"seed {r.seed}: final={s['final_value']:.4f} mean={s['mean_xi']:.4f}{extra}")
    print(f"wrote {out}")
    return 0


def _cmd_oracle(args) -> int:
    config = load_config(args.config)
    reports = run_checks(seed=config.master_seed, **config.oracle.model_dump())
    out = Path(args.output_dir) if args.output_dir else config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "oracle_report.json").write_text(
        json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    )
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check} value={r.value:.6g}")
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed; report in {out}")
    return 1 if failed else 0


def _cmd_stats(args) -> int:
    config = load_config(args.config)
    bank, header = load_snapshot(args.snapshot)
    if bank.dims != config.dims:
        raise StructuralError(f"snapshot is for {bank.dims}, config describes {config.dims}")
    scenario = config.scenario_spec(header.get("scenario_seed", config.master_seed))
    n = args.trials if args.trials is not None else (config.stats.n_trials or 1000)
    stats = policy_statistics(bank, scenario, n, seed=0)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def _cmd_replay(args) -> int:
    config = load_config(args.config)
    mismatched = replay(config, args.reference)
    if mismatched:
        print("replay differs in: " + ", ".join(mismatched))
        return 1
    print("replay identical")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dusl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--output-dir", help=f"overrides the config and ${OUTPUT_ENV}")
    run.set_defaults(func=_cmd_run)

    oracle = sub.add_parser("oracle", help="run the exhaustive / Monte Carlo theory checks")
    oracle.add_argument("config")
    oracle.add_argument("--output-dir")
    oracle.set_defaults(func=_cmd_oracle)

    stats = sub.add_parser("stats", help="transmission statistics of a saved policy")
    stats.add_argument("snapshot")
    stats.add_argument("config")
    stats.add_argument("--trials", type=int)
    stats.set_defaults(func=_cmd_stats)

    rep = sub.add_parser("replay", help="rerun a config and compare CSVs byte for byte")
    rep.add_argument("config")
    rep.add_argument("--reference", help="directory of the earlier run (default: its output dir)")
    rep.set_defaults(func=_cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigurationError, StructuralError, InstanceTooLargeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

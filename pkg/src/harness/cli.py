"""
cli.py

Command-line entry: ``run``, ``verify``, ``sweep`` and ``constants``
subcommands over a JSON experiment file.
"""

import argparse
import json
import logging
import os
import platform
import sys
from typing import List, Optional, Sequence

from src import __version__
from src.analysis.theory import BoundConstants
from src.harness.config import ExperimentConfig, get_setting, load_config
from src.harness.experiment import CheckResult, json_safe, prepare, run_experiment, sweep_n, write_outputs
from src.harness.verify import verify_suite
from src.utils.errors import ConfigError, SVGDError

logger = logging.getLogger(__name__)


class Colors:
    if platform.system() == "Windows":
        # Enable ANSI on Windows
        os.system("")

    CYAN = "\033[96m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    RED = "\033[91m"
    ENDC = "\033[0m"
    BOLD = "\033[1m"


def print_check(check: CheckResult) -> None:
    if check.skipped:
        mark = f"{Colors.YELLOW}-{Colors.ENDC}"
    elif check.passed:
        mark = f"{Colors.GREEN}✓{Colors.ENDC}"
    else:
        mark = f"{Colors.RED}✗{Colors.ENDC}"
    slack = "n/a" if check.worst_slack is None else f"{check.worst_slack:.4g}"
    line = f"{mark} {check.name:<32} [{check.kind}] worst slack {slack} (tol {check.tolerance:g})"
    if check.error:
        line += f"\n    {Colors.RED}{check.error}{Colors.ENDC}"
    elif check.detail:
        line += f"  {check.detail}"
    print(line)


def print_summary(checks: Sequence[CheckResult], passed: bool) -> None:
    failed = [c for c in checks if not c.passed]
    color = Colors.GREEN if passed else Colors.RED
    verdict = "PASS" if passed else "FAIL"
    print(f"\n{color}{Colors.BOLD}{verdict}{Colors.ENDC}: {len(checks)} checks, {len(failed)} failed")


def _load(args: argparse.Namespace) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "out", None):
        overrides.append(f"output.dir={json.dumps(args.out)}")
    return load_config(args.config, overrides, args.seed)


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    if args.plot:
        config.outputs["plot"] = True
    result = run_experiment(config)
    paths = write_outputs(result)
    for check in result.checks:
        print_check(check)
    print_summary(result.checks, result.hard_passed)
    for kind, path in paths.items():
        print(f"{Colors.CYAN}{kind}{Colors.ENDC}: {path}")
    return result.exit_code


def cmd_verify(args: argparse.Namespace) -> int:
    config = _load(args)
    report = verify_suite(config)
    for check in report.checks:
        print_check(check)
    passed = report.passed(args.strict_soft)
    print_summary(report.checks, passed)
    path = report.to_json(os.path.join(config.output_dir, f"{config.name}_verify.json"), args.strict_soft)
    print(f"{Colors.CYAN}report{Colors.ENDC}: {path}")
    if args.pdf or config.outputs.get("pdf"):
        print(f"{Colors.CYAN}pdf{Colors.ENDC}: {report.to_pdf(config.output_dir, args.strict_soft)}")
    return report.exit_code(args.strict_soft)


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    table = sweep_n(config, args.n, args.repeats)
    print(table.frame.to_string(index=False))
    for failure in table.failures:
        print(f"{Colors.RED}✗{Colors.ENDC} n={failure['n']} repeat={failure['repeat']}: {failure['error']}")
    if not table.rate_nonincreasing:
        print(f"{Colors.RED}✗{Colors.ENDC} rate bound increases with n")
    path = table.write_csv(os.path.join(config.output_dir, f"{config.name}_sweep.csv"))
    print(f"{Colors.CYAN}table{Colors.ENDC}: {path}")
    print_summary([], table.passed)
    return 0 if table.passed else 1


def cmd_constants(args: argparse.Namespace) -> int:
    config = _load(args)
    ledger: BoundConstants = prepare(config).ledger
    print(ledger.format_text())
    if args.json:
        print(json.dumps(json_safe(ledger.to_dict()), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svgd-bounds",
                                     description="SVGD bound verification harness")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="logging level (default: SVGD_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", nargs="?", default=None, help="JSON experiment file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, default=None, help="override init.seed")
        p.add_argument("--out", default=None, help="output directory")

    run = sub.add_parser("run", help="run one experiment and write its trajectory")
    common(run)
    run.add_argument("--plot", action="store_true", help="also write a bound plot")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="run the verification suite")
    common(verify)
    verify.add_argument("--strict-soft", action="store_true", help="fail on soft check failures too")
    verify.add_argument("--pdf", action="store_true", help="also write a PDF report")
    verify.set_defaults(func=cmd_verify)

    sweep = sub.add_parser("sweep", help="finite-particle rate over particle counts")
    common(sweep)
    sweep.add_argument("--n", type=int, nargs="+", default=None, help="increasing particle counts")
    sweep.add_argument("--repeats", type=int, default=None)
    sweep.set_defaults(func=cmd_sweep)

    constants = sub.add_parser("constants", help="print the constant ledger")
    common(constants)
    constants.add_argument("--json", action="store_true", help="also print the ledger as JSON")
    constants.set_defaults(func=cmd_constants)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or get_setting("log_level", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"{Colors.RED}✗ configuration error:{Colors.ENDC} {e}", file=sys.stderr)
        return 2
    except SVGDError as e:
        logger.exception("run aborted")
        print(f"{Colors.RED}✗ {type(e).__name__}:{Colors.ENDC} {e}", file=sys.stderr)
        return 1

"""Command line entry point: ``thcid run|scaling|compare-df --config FILE``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from thcid import bench
from thcid.errors import NumericalError
from thcid.parallel import thread_limit

logger = logging.getLogger("thcid")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

COMMANDS = {
    "run": bench.cmd_run,
    "scaling": bench.cmd_scaling,
    "compare-df": bench.cmd_compare_df,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thcid", description="Interpolative THC compression experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "compress one orbital set at each configured epsilon",
        "scaling": "sweep N (fixed grid) and n (fixed N); report log-log slopes and N_aux ratios",
        "compare-df": "time compression against the L2 least-squares fit over N_list",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default: output_path from config, else .)")
        p.add_argument("--threads", type=int, default=None, help="cap BLAS, FFT and kernel threads")
        p.add_argument("--format", choices=("csv", "json", "both"), default="both")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = bench.ExperimentConfig.load(args.config)
        if args.threads is not None and args.threads < 1:
            raise bench.ConfigError("--threads must be positive")
        out = args.out or cfg.output_path or "."
        writer = bench.ResultWriter(out, args.format)
        with thread_limit(args.threads):
            result = COMMANDS[args.command](cfg, writer)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError, MemoryError) as exc:
        print(f"thcid: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (bench.ConfigError, ValueError, IndexError) as exc:
        print(f"thcid: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    rows = result[0] if isinstance(result, tuple) else result
    for row in rows:
        base = "" if row.time_baseline_s is None else f" baseline={row.time_baseline_s:.3f}s"
        print(
            f"dim={row.dim} n={row.n} N={row.N} eps={row.epsilon:.1e} N_aux={row.N_aux} "
            f"rel2={row.rel_2_error:.3e} relc={row.rel_c_error:.3e} compress={row.time_compress_s:.3f}s{base}"
        )
    if isinstance(result, tuple):
        print(json.dumps(result[1], indent=1))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

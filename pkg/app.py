"""
fedlap: Main Entry Point
Command-line front end for the federated multi-task simulator:
run, sweep-eta, sweep-weights, gen-data and verify.
"""
import argparse
import logging
import os
import sys
from logging.handlers import RotatingFileHandler


def setup_logging():
    log_dir = os.getenv('FEDLAP_LOG_DIR', 'logs')
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, "fedlap.log")
    level = getattr(logging, os.getenv('FEDLAP_LOG_LEVEL', 'INFO').upper(), logging.INFO)

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            RotatingFileHandler(log_file, maxBytes=5*1024*1024, backupCount=1, encoding='utf-8'),
            logging.StreamHandler()
        ],
        force=True
    )
    # Suppress noisy loggers
    logging.getLogger("numexpr").setLevel(logging.WARNING)
    logging.getLogger("urllib3").setLevel(logging.WARNING)


def build_parser():
    parser = argparse.ArgumentParser(prog="fedlap", description="Federated multi-task learning with Laplacian regularization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="Execute one FedU/dFedU run")
    p.add_argument("config", help="Path to the run config (JSON)")

    p = sub.add_parser("sweep-eta", help="Sweep eta plus Local and Global baselines")
    p.add_argument("config")
    p.add_argument("--etas", default="1e-3,1e-2,1e-1,1", help="Comma-separated eta values")
    p.add_argument("--repeats", type=int, default=1, help="Seeds seed..seed+k-1")

    p = sub.add_parser("sweep-weights", help="Compare the edge-weight scenarios")
    p.add_argument("config")

    p = sub.add_parser("gen-data", help="Write the dataset bundle (data.csv, dataset_stats.json, graph.json)")
    p.add_argument("config")

    p = sub.add_parser("verify", help="Run the oracle check suite")
    p.add_argument("--tol", type=float, default=1e-12, help="Matrix-oracle tolerance")
    p.add_argument("--report", default=None, help="Optional JSON report path")
    return parser


def main(argv=None):
    """Dispatches a subcommand and returns its exit code."""
    args = build_parser().parse_args(argv)
    setup_logging()

    from tools.run import cmd_gen_data, cmd_run
    from tools.sweep import cmd_sweep_eta, cmd_sweep_weights
    from tools.verify import cmd_verify

    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "sweep-eta":
        return cmd_sweep_eta(args.config, args.etas, args.repeats)
    if args.command == "sweep-weights":
        return cmd_sweep_weights(args.config)
    if args.command == "gen-data":
        return cmd_gen_data(args.config)
    return cmd_verify(args.tol, args.report)


if __name__ == "__main__":
    sys.exit(main())

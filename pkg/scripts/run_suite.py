"""Generate the synthetic dataset (if needed) and run suite variants on it.

    python scripts/run_suite.py --groups baselines families --out runs/suite
"""

import argparse
import json
import logging
from dataclasses import asdict
from pathlib import Path

import torch

from intent_ensemble.suite import format_table, load_suite, run_variants
from intent_ensemble.synthetic import SyntheticConfig, write_synthetic

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", default=ROOT / "configs" / "synthetic.yaml")
    parser.add_argument("--suite", default=ROOT / "configs" / "suite.yaml")
    parser.add_argument("--groups", nargs="*", default=None, help="suite groups to run (default: all)")
    parser.add_argument("--data", default="data/synthetic", help="synthetic data directory")
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--out", default="runs/suite")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    sessions = Path(args.data) / "sessions.jsonl"
    if not sessions.exists():
        write_synthetic(SyntheticConfig(), args.data_seed, args.data)
    results = run_variants(
        args.config, load_suite(args.suite), args.out, args.groups, [f"data.sessions={sessions}"]
    )
    print(format_table(results))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "suite_results.json").write_text(json.dumps([asdict(r) for r in results], indent=2))


if __name__ == "__main__":
    main()

"""Run every JSON config in scripts/configs (or the ones given) through the CLI."""
import argparse
import sys
from pathlib import Path

from jordanroot import cli

HERE = Path(__file__).resolve().parent


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    paths = args.configs or sorted((HERE / "configs").glob("*.json"))
    worst = 0
    for p in paths:
        print(f"== {p.name}", flush=True)
        name = cli.load_config(p)["experiment"]
        worst = max(worst, cli.main([name, "--config", str(p), "--workers", str(args.workers)]))
    return worst


if __name__ == "__main__":
    sys.exit(main())

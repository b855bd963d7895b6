"""Run every reproduction and write JSON + text reports.

    python scripts/run_all_repros.py --out-dir reports [--config campaign.json]
"""
import argparse
import sys

from gcenter.config import load_config
from gcenter.repro import REPRODUCTIONS, format_report, run_reproduction


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="reports")
    ap.add_argument("--config", default=None)
    ap.add_argument("--only", nargs="*", default=None, choices=sorted(REPRODUCTIONS))
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else None
    failed = []
    for name in args.only or REPRODUCTIONS:
        rep = run_reproduction(name, cfg, out_dir=args.out_dir)
        print(format_report(rep), end="", flush=True)
        if not rep["pass"]:
            failed.append(name)
    print(f"\n{len(failed)} failing: {', '.join(failed)}" if failed else "\nall reproductions pass")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())

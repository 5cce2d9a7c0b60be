"""Run the three-spheres benchmark and print the metric table and checks.

    python3 scripts/run_repro.py --out runs/repro --seed 0 [--config cfg.toml]
"""

import argparse
import json

from nerfgs.repro import format_table, load_run_config, run_repro


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/repro")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config")
    args = ap.parse_args()
    cfg = load_run_config(args.config, args.seed)
    res = run_repro(cfg, args.out)
    print(format_table(res["table"]))
    print(json.dumps(res["checks"], indent=1))
    print({k: round(v, 1) for k, v in res["timing"].items()})


if __name__ == "__main__":
    main()

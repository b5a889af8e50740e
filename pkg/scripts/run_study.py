"""Run one replicated simulation study and write designs, models, consensus grids and heatmaps.

    python3 scripts/run_study.py --model rg1 --reps 20 --n 5000 --out runs/rg1
"""

import argparse
import json
import time
from pathlib import Path

from rhem.experiments import ReplicationConfig, run_study, write_study
from rhem.simulate import ModelName


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", choices=[m.value for m in ModelName], default="rg1")
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    cfg = ReplicationConfig(model=ModelName(args.model), reps=args.reps, n_events=args.n, seed=args.seed)
    t0 = time.perf_counter()
    result = run_study(cfg)
    write_study(result, args.out)
    metrics = dict(result.metrics, seconds=time.perf_counter() - t0)
    (args.out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    for k, v in sorted(metrics.items()):
        print(f"{k:40s} {v:.4f}")


if __name__ == "__main__":
    main()

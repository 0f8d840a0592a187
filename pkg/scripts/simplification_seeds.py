"""Task-simplification outcome (selected K, O_C saving, WCov drop) across seeds.

Each seed gets its own dataset draw, task model, campaign and checkers, so
this shows how much the selected design depends on the seed.

    python3 scripts/simplification_seeds.py --seeds 0 1 2 --out runs/seeds
"""
import argparse
import json
from dataclasses import replace
from pathlib import Path

from dynverify.config import PipelineConfig
from dynverify.pipeline import cmd_explore, cmd_train_task


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    p.add_argument("--config", help="base YAML config (defaults when omitted)")
    p.add_argument("--out", default="runs/seeds")
    args = p.parse_args()
    base = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    rows = []
    for seed in args.seeds:
        cfg = replace(base, seed=seed, output=str(Path(args.out) / f"seed{seed}"))
        cmd_train_task(cfg)
        ex = cmd_explore(cfg)
        rows.append({"seed": seed, "K": ex["selected"]["K"], "labels": ex["selected"]["labels"],
                     "O_C_saving": ex["O_C_saving"], "WCov_drop": ex["WCov_drop"]})
        r = rows[-1]
        print(f"seed {seed}: K={r['K']} saving={100 * r['O_C_saving']:.1f}% WCov drop={100 * r['WCov_drop']:.2f}pp")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "summary.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()

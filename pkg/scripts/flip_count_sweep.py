"""Failure rate of the random campaign as a function of bits flipped per run.

Trains (or loads) the default task model and reports, per flip count, the
fraction of runs whose label changes and how the failures spread over
source classes.

    python3 scripts/flip_count_sweep.py --flips 1 10 100 300 --runs 5000
"""
import argparse

import numpy as np

from dynverify import faults, qmodel
from dynverify.config import PipelineConfig
from dynverify.pipeline import load_data, task_architecture
from dynverify.training import train_task


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--flips", type=int, nargs="+", default=[1, 10, 100, 300])
    p.add_argument("--runs", type=int, default=5000)
    p.add_argument("--model", help="task model file (trains the default one when omitted)")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    cfg = PipelineConfig(seed=args.seed)
    train, heldout = load_data(cfg)
    if args.model:
        task = qmodel.load(args.model)
    else:
        task = train_task(task_architecture(cfg, train.input_shape, train.num_classes), train, cfg.task.train,
                          seed=cfg.seed, test=heldout)
    print("flips  failure_rate  failures_by_source_class")
    for n in args.flips:
        res = faults.run_random_campaign(task, faults.CampaignConfig(n_runs=args.runs, n_flips_per_run=n,
                                                                     seed=args.seed), heldout)
        by_src = res.counts().sum(axis=1)
        print(f"{n:5d}  {np.mean(res.failed):12.4f}  {by_src.tolist()}")


if __name__ == "__main__":
    main()

"""Run every stage (train-task, explore, attack, report) with one config.

    python3 scripts/run_pipeline.py -c configs/default.yaml -o runs/default
"""
import argparse
import sys

from dynverify.cli import main as cli_main


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("-c", "--config")
    p.add_argument("-o", "--output")
    p.add_argument("--seed", type=int)
    args = p.parse_args(argv)
    common = []
    for flag, value in (("-c", args.config), ("-o", args.output), ("--seed", args.seed)):
        if value is not None:
            common += [flag, str(value)]
    for stage in ("train-task", "explore", "attack", "report"):
        code = cli_main([stage, *common])
        if code:
            print(f"{stage} exited with {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())

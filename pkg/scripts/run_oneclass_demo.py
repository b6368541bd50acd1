"""One-class protocol end to end through the CLI: synth a multi-class set,
then treat each class in turn as ID and the rest as OOD.

    python scripts/run_oneclass_demo.py --out /tmp/oneclass --num-classes 5
"""

import argparse
import sys
from pathlib import Path

from posthoc_ood.cli import main as cli


def run(argv):
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--samples-per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scores", default="mahalanobis,residual,vim,kl_matching,energy")
    args = p.parse_args()

    data = args.out / "data"
    run(["synth", "--out-dir", str(data), "--num-classes", str(args.num_classes),
         "--samples-per-class", str(args.samples_per_class), "--separation", str(args.separation),
         "--seed", str(args.seed)])
    run(["oneclass", "--manifest", str(data / "manifest.txt"), "--stats-dir", str(args.out / "stats"),
         "--scores", args.scores, "--out-report", str(args.out / "oneclass")])


if __name__ == "__main__":
    main()

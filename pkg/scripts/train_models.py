"""Train the workspace classifier and the FK surrogate into one directory.

Usage: python3 scripts/train_models.py [--out models] [--seed 0]
"""

from __future__ import annotations

import argparse
import sys

from deltagrasp import cli


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="models")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timing", action="store_true")
    args = p.parse_args(argv)
    extra = ["--timing"] if args.timing else []
    for model in ("workspace", "fk"):
        code = cli.main(["-v", "train", "--model", model, "--out", args.out, "--seed", str(args.seed), *extra])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())

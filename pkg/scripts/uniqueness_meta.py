"""Pass rate of the two-factorization uniqueness experiment over seeded repetitions."""

import argparse
import json

from degsde import laws
from degsde.families import family_spec
from degsde.simulate import SimConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--family", default="constant_gaussian")
    ap.add_argument("--repetitions", type=int, default=20)
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--dt", type=float, default=1e-2)
    ap.add_argument("--seed", type=int, default=100)
    args = ap.parse_args()
    cfg = SimConfig(dt=args.dt, T=1.0, y=(1.0, 0.0), n_paths=args.paths, seed=args.seed)
    rep = laws.uniqueness_meta(family_spec(args.family), cfg, repetitions=args.repetitions)
    print(json.dumps(rep, indent=2))


if __name__ == "__main__":
    main()

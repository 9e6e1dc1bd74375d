"""Pilot run fixing the occupation bound used by the non-uniqueness acceptance check.

Simulates dX = |X|^(1/2) dW in d = 2 from (1e-3, 0) at dt = 1e-4 and reports the
mean time spent in {sqrt(inv_psi) <= eps} for the eps ladder, next to the same
quantity at the production step dt = 1e-3.

    python scripts/pilot_girsanov_occupation.py --paths 20000
"""

import argparse
import json
import time

from degsde.families import family_spec
from degsde.simulate import SimConfig, euler_maruyama, occupation_profile


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--delta", type=float, default=1e-3)
    args = ap.parse_args()

    spec = family_spec("girsanov", alpha=1.0, d=2)
    out = {}
    for dt in (1e-4, 1e-3):
        cfg = SimConfig(dt=dt, T=1.0, y=(args.delta, 0.0), n_paths=args.paths, seed=args.seed)
        t0 = time.time()
        prof = occupation_profile(euler_maruyama(spec, cfg))
        out[str(dt)] = {str(k): v for k, v in prof.items()}
        out[str(dt)]["seconds"] = round(time.time() - t0, 1)
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()

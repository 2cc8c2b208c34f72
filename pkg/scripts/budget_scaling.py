"""Root-finding budget K_hat(eps) and its log-log slope for several models."""
import argparse

import numpy as np

from jordanroot import attach_model as am
from jordanroot import experiments as ex

MODELS = {"uniform": am.uniform(), "pa": am.affine(0), "affine1": am.affine(1),
          "sqrt": am.sublinear(0.5)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10**4)
    ap.add_argument("--replicas", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=12)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.4, 0.3, 0.2, 0.1])
    ap.add_argument("--models", nargs="+", default=list(MODELS), choices=list(MODELS))
    args = ap.parse_args()
    print(f"{'model':10s} {'slope':>6s} {'95% CI':>16s}  K_hat at eps={args.eps}")
    for name in args.models:
        f = MODELS[name]
        pos = ex.recovery_positions(f, [args.n], args.replicas, args.seed, args.workers)[:, 0]
        rep = ex.budget_scaling_fit(f, args.eps, args.n, args.replicas, args.seed,
                                    positions=pos)
        s = rep.statistics
        ci = s["slope_ci"] or [np.nan, np.nan]
        print(f"{name:10s} {s['slope']:6.3f} [{ci[0]:6.3f}, {ci[1]:6.3f}]  "
              f"{rep.tables['budget']['K_hat']}")


if __name__ == "__main__":
    main()

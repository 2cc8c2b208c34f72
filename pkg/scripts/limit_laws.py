"""W pools, fixed-point KS distance and exponential tail fits for the limit variable."""
import argparse

from jordanroot import attach_model as am
from jordanroot import experiments as ex
from jordanroot import malthusian, stats

MODELS = {"uniform": am.uniform(), "pa": am.affine(0), "sqrt": am.sublinear(0.5)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pool-size", type=int, default=10**4)
    ap.add_argument("--seed", type=int, default=10)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--models", nargs="+", default=["uniform", "pa"], choices=list(MODELS))
    args = ap.parse_args()
    for name in args.models:
        f = MODELS[name]
        lam = malthusian.solve_malthusian(f).lambda_star
        rep = ex.rde_fixed_point_test(f, lam, args.pool_size, args.seed, workers=args.workers)
        A, _ = rep.pools
        line = (f"{name:8s} lambda*={lam:.6f} mean W={A.mean():.4f} "
                f"KS(A, map(A))={rep.statistics['ks']:.4f}")
        if A.size >= 10**4:
            tp = ex.tail_profile(A)
            line += f" tail rate={tp['rate']:.3f} max residual={tp['max_residual']:.3f}"
        if name == "uniform":
            line += f" KS to Exp(1)={stats.ks_exp(A):.4f}"
        print(line, flush=True)


if __name__ == "__main__":
    main()

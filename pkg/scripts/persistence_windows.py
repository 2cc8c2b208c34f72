"""Fraction of replicas whose top-K list changes in each dyadic window of growth."""
import argparse

from jordanroot import attach_model as am
from jordanroot import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="uniform", choices=["uniform", "pa", "sqrt"])
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--n-max", type=int, default=2 * 10**5)
    ap.add_argument("--replicas", type=int, default=200)
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    f = {"uniform": am.uniform(), "pa": am.affine(0), "sqrt": am.sublinear(0.5)}[args.model]
    rep = ex.persistence_experiment(f, args.K, args.n_max, args.replicas, args.seed,
                                    workers=args.workers)
    win = rep.tables["windows"]
    print(f"{'rule':8s} {'window':>17s} {'fraction':>9s} {'se':>6s} {'changes':>8s}")
    for i in range(len(win["rule"])):
        print(f"{win['rule'][i]:8s} ({win['lower'][i]:>7d},{win['upper'][i]:>7d}] "
              f"{win['fraction'][i]:9.3f} {win['se'][i]:6.3f} {win['mean_changes'][i]:8.2f}")
    for rule in ex.RULES:
        frac, se = ex.window_fractions(rep, rule)
        print(f"{rule}: median last change {rep.statistics[f'median_last_change_{rule}']:.0f}, "
              f"non-increasing within 2 SE: {ex.non_increasing_within(frac, se)}")


if __name__ == "__main__":
    main()

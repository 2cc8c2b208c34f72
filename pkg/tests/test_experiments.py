import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jordanroot import attach_model as am
from jordanroot import centrality as cen
from jordanroot import experiments as ex
from jordanroot.streams import replica_rng
from jordanroot.treegen import grow

U = am.uniform()
PA = am.affine(0)
STAR = am.custom_table([1.0, 1e12], f_star=1.0, linear_bound=(1e12, 0.0), limsup_bound=0.0)


# ---------------------------------------------------------------------------
# root recovery


def test_root_position_ties():
    psi = np.array([2, 1, 2])
    pos = [ex.root_position(psi, np.random.default_rng(i)) for i in range(2000)]
    assert set(pos) == {2, 3} and abs(np.mean(pos) - 2.5) < 0.05
    assert ex.root_position(np.array([1, 5, 5]), np.random.default_rng(0)) == 1


def test_full_budget_always_succeeds():
    rep = ex.root_recovery_experiment(PA, [20, 50], [50], 100, 1)
    tab = rep.tables["success"]
    assert tab["success_rate"] == [1.0, 1.0]


def test_n3_k1_is_one_half():
    rep = ex.root_recovery_experiment(U, [3], [1], 4000, 2)
    s = rep.tables["success"]["successes"][0]
    # root is a leaf or the middle of a path of three, each w.p. 1/2; ties broken uniformly
    # P = P(middle) * 1 + P(leaf) * 0 = 1/2
    lo, hi = ex.stats.wilson(s, 4000, z=4.0)
    assert lo <= 0.5 <= hi


def test_success_monotone_in_K():
    rep = ex.root_recovery_experiment(PA, [200], list(range(1, 21)), 200, 3)
    r = rep.tables["success"]["success_rate"]
    assert all(a <= b for a, b in zip(r, r[1:]))
    lo, hi = rep.tables["success"]["ci_lo"], rep.tables["success"]["ci_hi"]
    assert all(a <= p <= b for a, p, b in zip(lo, r, hi))


def test_recovery_errors():
    with pytest.raises(ValueError):
        ex.root_recovery_experiment(U, [10], [1], 50, 0)
    with pytest.raises(ValueError):
        ex.root_recovery_experiment(U, [10], [0], 100, 0)


def test_worker_count_does_not_change_results():
    a = ex.recovery_positions(PA, [100, 300], 150, 4, workers=1)
    b = ex.recovery_positions(PA, [100, 300], 150, 4, workers=2)
    assert np.array_equal(a, b)


def test_prefix_positions_match_separate_psi():
    pos = ex.recovery_positions(U, [10, 40], 3, 5)
    for i in range(3):
        t = grow(U, 40, replica_rng(5, ex._GROW, i))
        psi = cen.psi_all(t.prefix(10)).psi
        assert np.count_nonzero(psi < psi[0]) < pos[i, 0] <= np.count_nonzero(psi <= psi[0])


def _table(rates, Ks=(1, 2, 4), R=10**6):
    lo, hi = ex.stats.wilson(np.round(np.array(rates) * R), R)
    return {"n": [100] * len(Ks), "K": list(Ks), "success_rate": list(rates),
            "ci_lo": list(lo), "ci_hi": list(hi)}


def test_estimate_budget_examples():
    assert ex.estimate_budget(_table([0.80, 0.92, 0.97]), 0.1)["K_hat"] == 2
    assert ex.estimate_budget(_table([1.0, 1.0, 1.0]), 0.1)["K_hat"] == 1
    b = ex.estimate_budget(_table([0.5, 0.6, 0.7]), 0.1)
    assert b["K_hat"] is None and b["censored"]
    with pytest.raises(ValueError):
        ex.estimate_budget({}, 0.1)


@pytest.mark.parametrize("power", [1.0, 2.0])
def test_fit_slope_synthetic(power):
    eps = np.array([0.4, 0.2, 0.1, 0.05, 0.025])
    k = np.round(3 * (1 / eps) ** power)
    assert abs(ex.fit_budget_slope(eps, k) - power) < 0.05


def test_budget_fit_from_positions():
    # positions ~ geometric-like with P(pos > K) = 1/K gives slope 1
    R = 20000
    u = np.random.default_rng(0).random(R)
    pos = np.ceil(1 / u).astype(np.int64)
    rep = ex.budget_scaling_fit(U, [0.4, 0.2, 0.1, 0.05], 10**6, R, 0,
                                K_list=np.arange(1, 200), n_boot=100, positions=pos)
    st_ = rep.statistics
    assert abs(st_["slope"] - 1) < 0.1 and not st_["partial_fit"]
    assert st_["slope_ci"][0] <= st_["slope"] <= st_["slope_ci"][1]
    with pytest.raises(ValueError):
        ex.budget_scaling_fit(U, [0.1, 0.2], 10, 100, 0, positions=pos)


def test_budget_censored_partial():
    pos = np.full(1000, 50)
    pos[:500] = 1
    rep = ex.budget_scaling_fit(U, [0.6, 0.4, 0.1], 60, 1000, 0, K_list=[1, 2, 3],
                                n_boot=10, positions=pos)
    assert rep.statistics["partial_fit"]
    assert rep.tables["budget"]["K_hat"] == [1, -1, -1]


# ---------------------------------------------------------------------------
# persistence


def _reference(f, K, n_max, seed, upper, lower):
    tree = grow(f, n_max, replica_rng(seed, ex._GROW, 0))
    prev = None
    last = [0, 0, 0]
    counts = np.zeros((3, upper.size), dtype=int)
    for n in range(2, n_max + 1):
        s = cen.psi_all(tree.prefix(n))
        cur = [(v, int(s.psi[v])) for v in cen.top_k(s, min(K, n))]
        if prev is not None:
            kept = [x for x in cur if x[0] != n - 1]
            ordered = [v for v, _ in kept] != [v for v, _ in prev]
            pat = lambda xs: [sum(a[1] != b[1] for a, b in zip(xs, xs[1:i + 1])) for i in range(len(xs))]  # noqa: E731
            tiered = ordered or pat(kept) != pat(prev)
            first = cur[0][0] != prev[0][0]
            w = [j for j in range(upper.size) if lower[j] < n <= upper[j]]
            for r, hit in enumerate((ordered, tiered, first)):
                if hit:
                    last[r] = n
                    if w:
                        counts[r, w[0]] += 1
        prev = cur
    return last, counts


@pytest.mark.parametrize("f,K,n_max", [(U, 1, 300), (PA, 3, 300), (U, 5, 200),
                                       (am.sublinear(0.5), 2, 250), (U, 6, 6)])
def test_persistence_matches_reference(f, K, n_max):
    rep = ex.persistence_experiment(f, K, n_max, 1, 11, slack=2)
    upper, lower = ex.dyadic_windows(n_max)
    last, counts = _reference(f, K, n_max, 11, upper, lower)
    r = rep.tables["replicas"]
    assert [r["last_change_ordered"][0], r["last_change_tiered"][0],
            r["last_change_k1"][0]] == last
    assert np.array_equal(rep.counts[0], counts)


def test_persistence_rule_ordering():
    rep = ex.persistence_experiment(PA, 3, 3000, 40, 12)
    r = rep.tables["replicas"]
    for o, t in zip(r["last_change_ordered"], r["last_change_tiered"]):
        assert o <= t
    assert np.all(rep.counts[:, 0] <= rep.counts[:, 1])
    f, se = ex.window_fractions(rep, "tiered")
    f0, _ = ex.window_fractions(rep, "ordered")
    assert np.all(f0 <= f) and np.all((0 <= f) & (f <= 1)) and se.shape == f.shape


def test_persistence_full_budget_degenerate():
    rep = ex.persistence_experiment(U, 6, 6, 30, 13)
    # top-K is every vertex so only reorderings count
    assert rep.tables["windows"]["fraction"][0] <= 1
    assert max(rep.tables["replicas"]["last_change_ordered"]) <= 6


def test_star_forcing_fixes_hub_early():
    rep = ex.persistence_experiment(STAR, 1, 2000, 50, 14)
    assert max(rep.tables["replicas"]["last_change_k1"]) <= 3
    term = ex.terminal_centroid_report(rep)
    assert term["median"] <= 3 and len(term["replica"]) == 50


def test_dyadic_windows():
    up, lo = ex.dyadic_windows(1024)
    assert up[0] == 1024 and lo[0] == 512 and lo[-1] >= 8 and np.all(up[1:] == lo[:-1])
    up, lo = ex.dyadic_windows(100, 2)
    assert up.tolist() == [100, 50] and lo.tolist() == [50, 25]


def test_non_increasing_within():
    assert ex.non_increasing_within(np.array([0.5, 0.4, 0.41]), np.array([0.01] * 3))
    assert not ex.non_increasing_within(np.array([0.1, 0.5]), np.array([0.01, 0.01]))


def test_persistence_errors():
    with pytest.raises(ValueError):
        ex.persistence_experiment(U, 0, 100, 1, 0)
    with pytest.raises(ValueError):
        ex.persistence_experiment(U, 1, 2, 1, 0)


# ---------------------------------------------------------------------------
# limit laws


def test_ks_self_is_zero():
    a = np.random.default_rng(1).random(2000)
    assert ex.stats.ks_2samp(a, a) == 0.0


def test_tail_profile_exponential():
    x = np.random.default_rng(2).exponential(1.0, 10**5)
    tp = ex.tail_profile(x)
    assert abs(tp["rate"] - 1) < 0.1 and tp["max_residual"] < 0.2
    with pytest.raises(ValueError):
        ex.tail_profile(x[:100])


def test_rde_small_pool():
    rep = ex.rde_fixed_point_test(U, 1.0, 2000, 3, horizon=("time", 8.0))
    st_ = rep.statistics
    assert st_["ks"] < 0.06 and abs(st_["mean_B"] - 1) < 0.1
    with pytest.raises(ValueError):
        ex.rde_fixed_point_test(U, 1.0, 10, 3)


def test_w_pool_workers_deterministic():
    a = ex.w_pool(U, 1.0, 600, 4, ("time", 4.0), workers=1)
    b = ex.w_pool(U, 1.0, 600, 4, ("time", 4.0), workers=2)
    assert np.array_equal(a, b)


def test_convergence_profile_shapes():
    grid = np.linspace(0, 6, 13)
    rep = ex.convergence_profile(PA, 2.0, grid, 200, 5)
    q = np.array(rep.tables["sup_deviation"]["q90"])
    assert q[-1] == 0 and rep.statistics["q90_monotone"]
    surv = np.array(rep.tables["sup_tail"]["survival"])
    assert np.all(np.diff(surv) <= 0) and rep.paths.shape == (200, 13)
    assert ex.default_t_grid(1.0)[-1] == pytest.approx(math.log(1e6))


def test_report_files(tmp_path):
    rep = ex.ExperimentReport("x", {"a": 1}, {"t1": {"c": [1, 2]}, "t2": {"d": [0.5]}},
                              {"s": np.float64(1.5)})
    names = sorted(p.name for p in rep.write(tmp_path, "uniform", 7))
    assert names == ["x-uniform-7.csv", "x-uniform-7.json", "x_t2-uniform-7.csv"]
    meta, cols = ex.stats.read_table(tmp_path / "x-uniform-7.csv")
    assert cols == {"c": [1, 2]} and meta["table"] == "t1"

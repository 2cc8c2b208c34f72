"""Monte Carlo studies: root recovery, budgets, persistence and limit laws.

Replica i of an experiment with master seed s always draws from the stream
replica_rng(s, tag, i), so results do not depend on how replicas are
scheduled across workers.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import multiprocessing as mp
import numpy as np
from numba import njit

from . import centrality as C
from . import ctbp
from . import kernels as K
from . import stats
from .attach_model import AttachmentFunction
from .streams import replica_rng
from .treegen import grow

# stream tags
_GROW, _TIE, _POOL, _COMPOSITE, _BOOT, _PATH = range(6)
CHUNK = 64


@dataclass
class ExperimentReport:
    name: str
    config: dict
    tables: dict = field(default_factory=dict)
    statistics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def files(self, model: str, seed) -> dict[str, str]:
        """File name -> text for every table plus the statistics JSON."""
        meta = {"experiment": self.name, "config": self.config}
        out = {}
        for i, (tname, cols) in enumerate(self.tables.items()):
            stem = self.name if i == 0 else f"{self.name}_{tname}"
            out[f"{stem}-{model}-{seed}.csv"] = stats.table_text(cols, dict(meta, table=tname))
        out[f"{self.name}-{model}-{seed}.json"] = json.dumps(
            {"config": self.config, "statistics": self.statistics},
            sort_keys=True, indent=1, default=stats._jsonable) + "\n"
        return out

    def write(self, out_dir, model: str, seed) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in self.files(model, seed).items():
            p = out_dir / name
            p.write_text(text)
            paths.append(p)
        return paths


def map_replicas(fn: Callable[[int, int], list], n: int, workers: int = 1,
                 chunk: int = CHUNK) -> list:
    """[fn-results for replicas 0..n-1] computed in fixed chunks of indices.

    fn(start, stop) returns the list of per-replica results for that range.
    Chunk boundaries never depend on `workers`.
    """
    bounds = [(a, min(a + chunk, n)) for a in range(0, n, chunk)]
    if workers <= 1 or len(bounds) <= 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            parts = list(ex.map(_call_range, [fn] * len(bounds), bounds))
    return [r for part in parts for r in part]


def _call_range(fn, ab):
    return fn(*ab)


# ---------------------------------------------------------------------------
# root recovery


def root_position(psi: np.ndarray, rng: np.random.Generator) -> int:
    """Rank of vertex 0 in the Psi order with equal-Psi ties broken uniformly."""
    p0 = psi[0]
    less = int(np.count_nonzero(psi < p0))
    ties = int(np.count_nonzero(psi == p0))
    return less + 1 + int(rng.integers(ties))


def _recovery_range(a, b, *, f, n_list, seed):
    n_max = max(n_list)
    out = []
    for i in range(a, b):
        tree = grow(f, n_max, replica_rng(seed, _GROW, i))
        tie_rng = replica_rng(seed, _TIE, i)
        out.append([root_position(C.psi_all(tree.prefix(n) if n < n_max else tree).psi,
                                  tie_rng) for n in n_list])
    return out


def recovery_positions(f: AttachmentFunction, n_list: Sequence[int], replicas: int, seed,
                       workers: int = 1) -> np.ndarray:
    """(replicas, len(n_list)) ranks of the root; each replica grows once to max(n_list)."""
    n_list = [int(n) for n in n_list]
    fn = partial(_recovery_range, f=f, n_list=n_list, seed=seed)
    return np.array(map_replicas(fn, replicas, workers), dtype=np.int64).reshape(replicas, -1)


def success_table(positions: np.ndarray, n_list, K_list) -> dict:
    rows = {k: [] for k in ("n", "K", "successes", "replicas", "success_rate", "ci_lo", "ci_hi")}
    R = positions.shape[0]
    for j, n in enumerate(n_list):
        srt = np.sort(positions[:, j])
        for Kb in K_list:
            s = int(np.searchsorted(srt, Kb, side="right"))
            lo, hi = stats.wilson(s, R)
            for key, v in zip(rows, (int(n), int(Kb), s, R, s / R, lo, hi)):
                rows[key].append(v)
    return rows


def root_recovery_experiment(f: AttachmentFunction, n_list, K_list, replicas: int, seed,
                             workers: int = 1) -> ExperimentReport:
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    n_list = sorted(int(n) for n in n_list)
    K_list = sorted(int(k) for k in K_list)
    if any(k < 1 for k in K_list) or any(n < 2 for n in n_list):
        raise ValueError("need K >= 1 and n >= 2")
    pos = recovery_positions(f, n_list, replicas, seed, workers)
    cfg = {"f": f.to_dict(), "n_list": n_list, "K_list": K_list, "replicas": replicas,
           "seed": seed}
    rep = ExperimentReport("rootfind", cfg, {"success": success_table(pos, n_list, K_list)})
    rep.statistics["positions_sha1"] = stats.blob_sha1(pos.tobytes())
    rep.positions = pos  # kept in memory for budget fits, not serialized
    return rep


def estimate_budget(table: dict, epsilon: float) -> dict:
    """Smallest K whose success rate at the largest n reaches 1 - epsilon."""
    if not table or not table.get("n"):
        raise ValueError("empty table")
    n = np.asarray(table["n"])
    sel = n == n.max()
    Ks = np.asarray(table["K"])[sel]
    order = np.argsort(Ks)
    Ks = Ks[order]
    rate = np.asarray(table["success_rate"])[sel][order]
    lo = np.asarray(table["ci_lo"])[sel][order]
    hi = np.asarray(table["ci_hi"])[sel][order]
    target = 1 - epsilon

    def first(mask):
        idx = np.flatnonzero(mask)
        return int(Ks[idx[0]]) if idx.size else None

    k_hat = first(rate >= target - 1e-12)
    return {"epsilon": epsilon, "K_hat": k_hat, "ci_lo": first(hi >= target - 1e-12),
            "ci_hi": first(lo >= target - 1e-12), "censored": k_hat is None}


def _k_hat_from_positions(pos_sorted: np.ndarray, K_list: np.ndarray, epsilon: float):
    need = math.ceil((1 - epsilon) * pos_sorted.shape[0] - 1e-9)
    counts = np.searchsorted(pos_sorted, K_list, side="right")
    idx = np.flatnonzero(counts >= need)
    return int(K_list[idx[0]]) if idx.size else None


def fit_budget_slope(epsilons, k_hats) -> float:
    """Least-squares slope of log K_hat against log(1/epsilon)."""
    x = np.log(1 / np.asarray(epsilons, dtype=float))
    y = np.log(np.asarray(k_hats, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def budget_scaling_fit(f: AttachmentFunction, epsilon_list, n: int, replicas: int, seed,
                       K_list=None, workers: int = 1, n_boot: int = 500,
                       positions: Optional[np.ndarray] = None) -> ExperimentReport:
    eps = sorted((float(e) for e in epsilon_list), reverse=True)
    if len(eps) < 3:
        raise ValueError("need at least 3 epsilon values")
    K_arr = np.arange(1, n + 1) if K_list is None else np.array(sorted(K_list))
    if positions is None:
        positions = recovery_positions(f, [n], replicas, seed, workers)[:, 0]
    pos = np.sort(positions)
    k_hats = [_k_hat_from_positions(pos, K_arr, e) for e in eps]
    table = success_table(positions[:, None], [n], K_arr)
    budgets = [estimate_budget(table, e) for e in eps]
    ok = [k is not None for k in k_hats]
    partial_fit = not all(ok)
    e_fit = [e for e, o in zip(eps, ok) if o]
    k_fit = [k for k in k_hats if k is not None]
    slope = fit_budget_slope(e_fit, k_fit) if len(k_fit) >= 2 else math.nan
    boot_rng = replica_rng(seed, _BOOT)
    boots = []
    for _ in range(n_boot):
        b = np.sort(positions[boot_rng.integers(0, positions.shape[0], positions.shape[0])])
        kb = [_k_hat_from_positions(b, K_arr, e) for e in e_fit]
        if all(k is not None for k in kb) and len(kb) >= 2:
            boots.append(fit_budget_slope(e_fit, kb))
    ci = [float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975))] if boots else None
    cfg = {"f": f.to_dict(), "epsilon_list": eps, "n": n, "replicas": replicas, "seed": seed,
           "n_boot": n_boot}
    tab = {"epsilon": eps,
           "K_hat": [b["K_hat"] if b["K_hat"] is not None else -1 for b in budgets],
           "ci_lo": [b["ci_lo"] if b["ci_lo"] is not None else -1 for b in budgets],
           "ci_hi": [b["ci_hi"] if b["ci_hi"] is not None else -1 for b in budgets]}
    return ExperimentReport("budget", cfg, {"budget": tab},
                            {"slope": slope, "slope_ci": ci, "partial_fit": partial_fit,
                             "replicas": replicas})


# ---------------------------------------------------------------------------
# persistence


@njit(cache=True)
def _top_changed(pv, pp, pm, cv, cp, cm, skip):
    """(ordered change, tiered change) between successive top-K lists.

    Entries of the current list equal to `skip` (the newest vertex, present
    only while n <= K) are ignored.
    """
    m = 0
    ordered = False
    tiered = False
    prev_tier = 0
    cur_tier = 0
    last_cp = -1
    for k in range(cm):
        if cv[k] == skip:
            continue
        if m >= pm or cv[k] != pv[m]:
            ordered = True
            break
        if m > 0:
            if pp[m] != pp[m - 1]:
                prev_tier += 1
            if cp[k] != last_cp:
                cur_tier += 1
        if prev_tier != cur_tier:
            tiered = True
        last_cp = cp[k]
        m += 1
    if not ordered and m != pm:
        ordered = True
    return ordered, ordered or tiered


@njit(cache=True)
def _persistence_kernel(code, param, scale, table, reject, Kb, n_max, slack, rng,
                        upper, lower, counts):
    """Grow to n_max tracking the top-K; returns (status, last changes x3).

    counts[r, w] = number of change events of rule r in window w, where
    rules are (ordered, tiered, ordered K=1) and window w covers
    lower[w] < n <= upper[w].
    """
    par = np.full(n_max, -1, dtype=np.int64)
    s = np.zeros(n_max, dtype=np.int64)
    mcs = np.zeros(n_max, dtype=np.int64)
    cand = np.zeros(n_max, dtype=np.int64)
    is_cand = np.zeros(n_max, dtype=np.bool_)
    meta = np.array([2, Kb, 0, 0, 0, slack], dtype=np.int64)
    par[1] = 0
    if not C._init(par, s, mcs, cand, is_cand, meta):
        return 4, 0, 0, 0
    w = np.zeros(n_max)
    deg = np.zeros(n_max, dtype=np.int64)
    ftree = np.zeros(n_max + 1)
    f1 = K.fval(code, param, scale, table, reject, 1)
    deg[0] = 1
    deg[1] = 1
    w[0] = f1
    w[1] = f1
    total = K.fenwick_build(w, ftree)
    levels = K.fenwick_levels(n_max)
    drift = 0.0
    pv = np.zeros(Kb, dtype=np.int64)
    pp = np.zeros(Kb, dtype=np.int64)
    cv = np.zeros(Kb, dtype=np.int64)
    cp = np.zeros(Kb, dtype=np.int64)
    pm = C._select(s, mcs, cand, meta, pv, pp)
    last_o = 0
    last_t = 0
    last_1 = 0
    nw = upper.shape[0]
    win = nw - 1
    for v in range(2, n_max):
        p = K.fenwick_sample(ftree, w, v, total, rng.random())
        deg[p] += 1
        deg[v] = 1
        nwt = K.fval(code, param, scale, table, reject, deg[p])
        if not nwt > 0.0:
            return 2, last_o, last_t, last_1
        d = nwt - w[p]
        w[p] = nwt
        K.fenwick_add(ftree, p, d)
        w[v] = f1
        K.fenwick_add(ftree, v, f1)
        total += d + f1
        drift = K.drift_step(drift, 2 * levels)
        if drift > K.DRIFT_LIMIT:
            total = K.fenwick_build(w[: v + 1], ftree)
            drift = 0.0
        if not C._attach(par, s, mcs, cand, is_cand, meta, p):
            return 4, last_o, last_t, last_1
        n = v + 1
        cm = C._select(s, mcs, cand, meta, cv, cp)
        ordered, tiered = _top_changed(pv, pp, pm, cv, cp, cm, v)
        first = cv[0] != pv[0]
        while win >= 0 and n > upper[win]:
            win -= 1
        inw = win >= 0 and n > lower[win]
        if ordered:
            last_o = n
            if inw:
                counts[0, win] += 1
        if tiered:
            last_t = n
            if inw:
                counts[1, win] += 1
        if first:
            last_1 = n
            if inw:
                counts[2, win] += 1
        pm = cm
        for k in range(cm):
            pv[k] = cv[k]
            pp[k] = cp[k]
    return 0, last_o, last_t, last_1


def dyadic_windows(n_max: int, n_windows: Optional[int] = None, min_lower: int = 8):
    """(upper, lower) bounds, latest window first: (n_max/2^j, n_max/2^{j-1}]."""
    if n_windows is None:
        n_windows = 0
        while (n_max >> (n_windows + 1)) >= min_lower:
            n_windows += 1
        n_windows = max(n_windows, 1)
    j = np.arange(n_windows)
    return (n_max >> j).astype(np.int64), (n_max >> (j + 1)).astype(np.int64)


RULES = ("ordered", "tiered", "k1")


def _persistence_range(a, b, *, f, K, n_max, slack, seed, upper, lower):
    out = []
    for i in range(a, b):
        counts = np.zeros((3, upper.shape[0]), dtype=np.int64)
        status, lo, lt, l1 = _persistence_kernel(*f.kernel_args(), K, n_max, slack,
                                                 replica_rng(seed, _GROW, i), upper, lower,
                                                 counts)
        if status == 4:
            raise C.InvariantError(f"tracker state inconsistent in replica {i}")
        if status != 0:
            raise ValueError(f"attachment function undefined during replica {i}")
        out.append((lo, lt, l1, counts))
    return out


def persistence_experiment(f: AttachmentFunction, K: int, n_max: int, replicas: int, seed,
                           checkpoints: Optional[int] = None, workers: int = 1,
                           slack: int = 64) -> ExperimentReport:
    """Top-K change events along growth to n_max, under both tie rules.

    `checkpoints` is the number of dyadic windows (default: down to n >= 8).
    A change under the ordered rule is any difference in the (Psi, index)
    sorted top-K list; the tiered rule additionally fires when the pattern
    of equal-Psi groups within the list changes. While n <= K the newest
    vertex is left out of the comparison.
    """
    if K < 1 or n_max < 3:
        raise ValueError("need K >= 1 and n_max >= 3")
    upper, lower = dyadic_windows(n_max, checkpoints)
    fn = partial(_persistence_range, f=f, K=K, n_max=n_max, slack=slack, seed=seed,
                 upper=upper, lower=lower)
    res = map_replicas(fn, replicas, workers, chunk=8)
    last = np.array([[r[0], r[1], r[2]] for r in res], dtype=np.int64)
    counts = np.stack([r[3] for r in res])  # (replicas, rule, window)
    per_rep = {"replica": list(range(replicas)),
               "last_change_ordered": last[:, 0].tolist(),
               "last_change_tiered": last[:, 1].tolist(),
               "last_change_k1": last[:, 2].tolist()}
    win = {"window": [], "lower": [], "upper": [], "rule": [], "fraction": [],
           "se": [], "ci_lo": [], "ci_hi": [], "mean_changes": []}
    for r, rule in enumerate(RULES):
        for w in range(upper.shape[0]):
            hit = int(np.count_nonzero(counts[:, r, w] > 0))
            frac = hit / replicas
            lo, hi = stats.wilson(hit, replicas)
            for key, val in zip(win, (w, int(lower[w]), int(upper[w]), rule, frac,
                                      float(stats.binomial_se(frac, replicas)), lo, hi,
                                      float(counts[:, r, w].mean()))):
                win[key].append(val)
    summary = {}
    for r, rule in enumerate(RULES):
        col = last[:, r]
        summary[f"median_last_change_{rule}"] = float(np.median(col))
        summary[f"quantiles_last_change_{rule}"] = {
            str(q): float(np.quantile(col, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)}
    cfg = {"f": f.to_dict(), "K": K, "n_max": n_max, "replicas": replicas, "seed": seed,
           "checkpoints": int(upper.shape[0]), "slack": slack}
    rep = ExperimentReport("persistence", cfg, {"replicas": per_rep, "windows": win}, summary)
    rep.counts = counts
    return rep


def terminal_centroid_report(report: ExperimentReport) -> dict:
    """Per-replica last step at which the argmin-Psi vertex changed."""
    reps = report.tables["replicas"]
    last = np.asarray(reps["last_change_k1"])
    return {"replica": list(reps["replica"]), "last_change_k1": last.tolist(),
            "median": float(np.median(last)) if last.size else math.nan}


def window_fractions(report: ExperimentReport, rule: str = "ordered"):
    """(fraction, se) arrays ordered from the earliest window to the latest."""
    win = report.tables["windows"]
    sel = [i for i, r in enumerate(win["rule"]) if r == rule]
    sel.sort(key=lambda i: win["lower"][i])
    return (np.array([win["fraction"][i] for i in sel]), np.array([win["se"][i] for i in sel]))


def non_increasing_within(frac: np.ndarray, se: np.ndarray, k: float = 2.0) -> bool:
    """Each later window exceeds the earlier one by at most k combined SEs."""
    d = frac[1:] - frac[:-1]
    return bool(np.all(d <= k * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)))


# ---------------------------------------------------------------------------
# limit laws


def default_horizon(lambda_star: float) -> tuple[str, float]:
    """Time horizon with e^{lambda* t} = e^12."""
    return ("time", 12.0 / lambda_star)


def _w_range(a, b, *, f, lam, t_stop, m_stop, seed, tag):
    out = np.empty(b - a)
    buf = np.empty(1)
    args = f.kernel_args()
    for i in range(a, b):
        st = ctbp._w_batch(*args, lam, t_stop, m_stop, 1, replica_rng(seed, tag, i),
                           ctbp.MAX_SIZE, buf)
        ctbp._check_status(st)
        out[i - a] = buf[0]
    return list(out)


def w_pool(f: AttachmentFunction, lambda_star: float, size: int, seed, horizon=None,
           workers: int = 1) -> np.ndarray:
    kind, val = ctbp._horizon(horizon or default_horizon(lambda_star))
    t_stop = val if kind == "time" else -1.0
    m_stop = int(val) if kind == "size" else np.iinfo(np.int64).max
    fn = partial(_w_range, f=f, lam=lambda_star, t_stop=t_stop, m_stop=m_stop, seed=seed,
                 tag=_POOL)
    return np.array(map_replicas(fn, size, workers, chunk=256))


def _composite_range(a, b, *, f, lam, pool, tol, seed):
    out = np.empty(b - a)
    buf = np.empty(1)
    args = f.kernel_args()
    for i in range(a, b):
        st = ctbp._y_batch(*args, lam, tol, 1, replica_rng(seed, _COMPOSITE, i), pool, buf)
        if st == 1:
            raise RuntimeError("composite truncation not reached")
        ctbp._check_status(st)
        out[i - a] = buf[0]
    return list(out)


def rde_fixed_point_test(f: AttachmentFunction, lambda_star: float, pool_size: int, seed,
                         horizon=None, tol: float = 1e-6, workers: int = 1,
                         pool: Optional[np.ndarray] = None) -> ExperimentReport:
    """KS distance between W samples and one application of the fixed-point map."""
    if pool_size < 1000:
        raise ValueError("pool_size must be >= 1000")
    A = pool if pool is not None else w_pool(f, lambda_star, pool_size, seed, horizon, workers)
    A = np.ascontiguousarray(A, dtype=float)
    fn = partial(_composite_range, f=f, lam=lambda_star, pool=A, tol=tol, seed=seed)
    B = np.array(map_replicas(fn, pool_size, workers, chunk=256))
    ks = stats.ks_2samp(A, B)
    cfg = {"f": f.to_dict(), "lambda_star": lambda_star, "pool_size": pool_size,
           "seed": seed, "horizon": list(horizon or default_horizon(lambda_star)), "tol": tol}
    q = np.linspace(0.01, 0.99, 99)
    tab = {"quantile": q.tolist(), "pool_A": np.quantile(A, q).tolist(),
           "pool_B": np.quantile(B, q).tolist()}
    rep = ExperimentReport("rde", cfg, {"quantiles": tab},
                           {"ks": ks, "n_A": int(A.size), "n_B": int(B.size),
                            "mean_A": float(A.mean()), "mean_B": float(B.mean())})
    rep.pools = (A, B)
    return rep


def tail_profile(samples, fit_range=(0.90, 0.99), curve_range=(0.50, 0.999)) -> dict:
    """Empirical log-survival and a least-squares exponential fit on a quantile range."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.shape[0]
    if n < 10**4:
        raise ValueError("tail_profile needs at least 1e4 samples")
    surv = (n - np.arange(n)) / n  # P(X >= x_(i))
    logS = np.log(surv)
    q_lo, q_hi = np.quantile(x, fit_range)
    sel = (x >= q_lo) & (x <= q_hi)
    slope, icpt = np.polyfit(x[sel], logS[sel], 1)
    resid = logS[sel] - (slope * x[sel] + icpt)
    c_lo, c_hi = np.quantile(x, curve_range)
    csel = (x >= c_lo) & (x <= c_hi)
    step = max(1, int(csel.sum()) // 200)
    return {"rate": float(-slope), "slope": float(slope), "intercept": float(icpt),
            "max_residual": float(np.max(np.abs(resid))),
            "fit_range": [float(q_lo), float(q_hi)],
            "curve_x": x[csel][::step].tolist(), "curve_log_survival": logS[csel][::step].tolist()}


def _path_range(a, b, *, f, lam, grid, seed):
    return [ctbp.trajectory(f, lam, grid, replica_rng(seed, _PATH, i)) for i in range(a, b)]


def convergence_profile(f: AttachmentFunction, lambda_star: float, t_grid, replicas: int,
                        seed, A_grid=None, workers: int = 1) -> ExperimentReport:
    grid = np.asarray(t_grid, dtype=float)
    fn = partial(_path_range, f=f, lam=lambda_star, grid=grid, seed=seed)
    paths = np.array(map_replicas(fn, replicas, workers, chunk=32))
    dev = np.abs(paths - paths[:, -1:])
    # sup over s >= t: reverse cumulative max
    sup_dev = np.maximum.accumulate(dev[:, ::-1], axis=1)[:, ::-1]
    q90 = np.quantile(sup_dev, 0.9, axis=0)
    sup_path = paths.max(axis=1)
    if A_grid is None:
        A_grid = np.linspace(1, max(2.0, float(np.quantile(sup_path, 0.999))), 25)
    A_grid = np.asarray(A_grid, dtype=float)
    tail = (sup_path[:, None] >= A_grid[None, :]).mean(axis=0)
    cfg = {"f": f.to_dict(), "lambda_star": lambda_star, "t_grid": grid.tolist(),
           "replicas": replicas, "seed": seed}
    rep = ExperimentReport(
        "convergence", cfg,
        {"sup_deviation": {"t": grid.tolist(), "q90": q90.tolist()},
         "sup_tail": {"A": A_grid.tolist(), "survival": tail.tolist()}},
        {"q90_monotone": bool(np.all(np.diff(q90) <= 1e-12))})
    rep.paths = paths
    return rep


def default_t_grid(lambda_star: float, points: int = 23) -> np.ndarray:
    """Grid from 2/lambda* up to e^{lambda* t_max} = 1e6."""
    return np.linspace(2.0, math.log(1e6), points) / lambda_star

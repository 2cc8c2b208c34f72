"""Jordan centrality Psi(v) = largest component of T - v, and top-K tracking.

`psi_all` only looks at the undirected edge set. The incremental tracker
and the centroid checks use the arrival-order rooting at vertex 0 for
bookkeeping; Psi itself does not depend on the rooting.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .treegen import GrowingTree


class InvariantError(RuntimeError):
    """Internal bookkeeping went inconsistent."""


@dataclass
class JordanState:
    n: int
    subtree_size: np.ndarray
    max_child_size: np.ndarray
    psi: np.ndarray
    root: int = 0
    topk: list = field(default_factory=list)


@njit(cache=True)
def _psi_csr(n, ptr, adj, root):
    order = np.empty(n, dtype=np.int64)
    par = np.full(n, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=np.bool_)
    order[0] = root
    seen[root] = True
    head, tail = 0, 1
    while head < tail:
        v = order[head]
        head += 1
        for k in range(ptr[v], ptr[v + 1]):
            u = adj[k]
            if not seen[u]:
                seen[u] = True
                par[u] = v
                order[tail] = u
                tail += 1
    s = np.ones(n, dtype=np.int64)
    mcs = np.zeros(n, dtype=np.int64)
    for k in range(n - 1, 0, -1):
        v = order[k]
        p = par[v]
        s[p] += s[v]
        if s[v] > mcs[p]:
            mcs[p] = s[v]
    psi = np.empty(n, dtype=np.int64)
    for v in range(n):
        up = n - s[v]
        psi[v] = mcs[v] if mcs[v] > up else up
    return s, mcs, psi, tail


def adjacency(n: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = np.asarray(edges, dtype=np.int64)
    a = np.concatenate([edges[:, 0], edges[:, 1]])
    b = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.argsort(a, kind="stable")
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=n), out=ptr[1:])
    return ptr, b[order]


def psi_from_edges(n: int, edges, root: int = 0, K: int = 1) -> JordanState:
    if n < 2:
        raise ValueError("need at least two vertices")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] != n - 1:
        raise ValueError(f"a tree on {n} vertices has {n - 1} edges, got {edges.shape[0]}")
    ptr, adj = adjacency(n, edges)
    s, mcs, psi, reached = _psi_csr(n, ptr, adj, root)
    if reached != n:
        raise ValueError("edge set is not connected")
    state = JordanState(n, s, mcs, psi, root)
    state.topk = [(int(v), int(psi[v])) for v in top_k(state, min(K, n))]
    return state


def psi_all(tree: GrowingTree, K: int = 1) -> JordanState:
    return psi_from_edges(tree.n, tree.edges(), 0, K)


def psi_bruteforce(tree: GrowingTree, v: int) -> int:
    """Delete v and measure every remaining component by BFS."""
    n = tree.n
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for a, b in tree.edges():
        nbrs[a].append(b)
        nbrs[b].append(a)
    seen = [False] * n
    seen[v] = True
    best = 0
    for start in nbrs[v]:
        seen[start] = True
        size = 0
        queue = deque([start])
        while queue:
            x = queue.popleft()
            size += 1
            for y in nbrs[x]:
                if not seen[y]:
                    seen[y] = True
                    queue.append(y)
        best = max(best, size)
    return best


def top_k(state: JordanState, K: int) -> list[int]:
    """The K vertices of smallest Psi, ties broken by arrival index."""
    if not 1 <= K <= state.n:
        raise ValueError(f"budget K={K} must lie in [1, n={state.n}]")
    order = np.lexsort((np.arange(state.n), state.psi))
    return [int(v) for v in order[:K]]


def write_psi_csv(path, tree: GrowingTree, state: Optional[JordanState] = None) -> None:
    state = state or psi_all(tree)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arrival_index", "degree", "subtree_size", "psi"])
        for v in range(tree.n):
            w.writerow([v + 1, int(tree.degree[v]), int(state.subtree_size[v]), int(state.psi[v])])


# ---------------------------------------------------------------------------
# incremental top-K tracker
#
# meta layout: n, K, next_recompute, threshold, ncand, min_delta

N_, K_, NEXT_, THR_, NC_, SLACK_ = range(6)


@njit(cache=True)
def _recompute(par, s, mcs, cand, is_cand, meta):
    n = meta[N_]
    K = meta[K_]
    if s[0] != n:
        return False
    psi = np.empty(n, dtype=np.int64)
    for v in range(n):
        up = n - s[v]
        psi[v] = mcs[v] if mcs[v] > up else up
    delta = max(meta[SLACK_], n // 16)
    if n <= K:
        thr = np.int64(1) << 62
    else:
        thr = np.partition(psi, K - 1)[K - 1] + delta
    nc = 0
    for v in range(n):
        if psi[v] <= thr:
            cand[nc] = v
            is_cand[v] = True
            nc += 1
        else:
            is_cand[v] = False
    meta[NC_] = nc
    meta[THR_] = thr
    meta[NEXT_] = n + delta
    return True


@njit(cache=True)
def _select(s, mcs, cand, meta, top_v, top_psi):
    n = meta[N_]
    K = meta[K_]
    m = 0
    for k in range(meta[NC_]):
        v = cand[k]
        up = n - s[v]
        p = mcs[v] if mcs[v] > up else up
        if m == K and p >= top_psi[m - 1]:
            continue
        j = m if m < K else K - 1
        while j > 0 and top_psi[j - 1] > p:
            if j < K:
                top_psi[j] = top_psi[j - 1]
                top_v[j] = top_v[j - 1]
            j -= 1
        top_psi[j] = p
        top_v[j] = v
        if m < K:
            m += 1
    return m


@njit(cache=True)
def _attach(par, s, mcs, cand, is_cand, meta, p):
    """Append a leaf under p; returns False on inconsistent state."""
    v = meta[N_]
    par[v] = p
    s[v] = 1
    mcs[v] = 0
    meta[N_] = v + 1
    x = v
    while x != 0:
        y = par[x]
        s[y] += 1
        if s[x] > mcs[y]:
            mcs[y] = s[x]
        x = y
    n = v + 1
    if n >= meta[NEXT_]:
        return _recompute(par, s, mcs, cand, is_cand, meta)
    if n - 1 <= meta[THR_]:
        cand[meta[NC_]] = v
        is_cand[v] = True
        meta[NC_] += 1
    return s[0] == n


@njit(cache=True)
def _init(par, s, mcs, cand, is_cand, meta):
    n = meta[N_]
    for v in range(n):
        s[v] = 1
        mcs[v] = 0
    for v in range(n - 1, 0, -1):
        p = par[v]
        s[p] += s[v]
    for v in range(1, n):
        p = par[v]
        if s[v] > mcs[p]:
            mcs[p] = s[v]
    return _recompute(par, s, mcs, cand, is_cand, meta)


class TopKTracker:
    """Exact ordered top-K by (Psi, arrival index) under leaf additions.

    A full O(n) recompute every max(slack, n//16) steps records the
    candidates with Psi <= (K-th smallest) + steps-until-next-recompute.
    Psi never decreases and grows by at most one per step, so no other
    vertex can reach the top K before the next recompute.
    """

    def __init__(self, tree: GrowingTree, K: int, slack: int = 64,
                 capacity: Optional[int] = None):
        if K < 1:
            raise ValueError("K must be >= 1")
        cap = max(capacity or 0, 2 * tree.n, 16)
        self.par = np.full(cap, -1, dtype=np.int64)
        self.par[: tree.n] = tree.parent
        self.s = np.zeros(cap, dtype=np.int64)
        self.mcs = np.zeros(cap, dtype=np.int64)
        self.cand = np.zeros(cap, dtype=np.int64)
        self.is_cand = np.zeros(cap, dtype=np.bool_)
        self.meta = np.array([tree.n, K, 0, 0, 0, slack], dtype=np.int64)
        self.K = K
        self._top_v = np.zeros(K, dtype=np.int64)
        self._top_psi = np.zeros(K, dtype=np.int64)
        if not _init(self.par, self.s, self.mcs, self.cand, self.is_cand, self.meta):
            raise InvariantError("initial subtree sizes inconsistent")

    @property
    def n(self) -> int:
        return int(self.meta[N_])

    def _ensure(self):
        if self.n < self.par.shape[0]:
            return
        cap = 2 * self.par.shape[0]
        for name in ("par", "s", "mcs", "cand", "is_cand"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=old.dtype)
            if name == "par":
                new[:] = -1
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def attach(self, p: int) -> list[tuple[int, int]]:
        if not 0 <= p < self.n:
            raise IndexError(p)
        self._ensure()
        if not _attach(self.par, self.s, self.mcs, self.cand, self.is_cand, self.meta, p):
            raise InvariantError("subtree-size checksum does not match n")
        return self.topk()

    def topk(self) -> list[tuple[int, int]]:
        m = _select(self.s, self.mcs, self.cand, self.meta, self._top_v, self._top_psi)
        return [(int(self._top_v[i]), int(self._top_psi[i])) for i in range(m)]

    def psi(self) -> np.ndarray:
        n = self.n
        return np.maximum(self.mcs[:n], n - self.s[:n])

    @property
    def n_candidates(self) -> int:
        return int(self.meta[NC_])


def tracker_attach(tracker: TopKTracker, parent: int) -> list[tuple[int, int]]:
    return tracker.attach(parent)


# ---------------------------------------------------------------------------
# deterministic centroid properties


@njit(cache=True)
def _depths(par):
    n = par.shape[0]
    d = np.zeros(n, dtype=np.int64)
    for v in range(1, n):
        d[v] = d[par[v]] + 1
    return d


@njit(cache=True)
def _pair_sizes(par, depth, s, n, u, v):
    """(|(T,v)_u|, |(T,u)_v|): size of u's side seen from v and vice versa."""
    # is u a proper ancestor of v?
    x = v
    while depth[x] > depth[u] + 1:
        x = par[x]
    if depth[x] == depth[u] + 1 and par[x] == u:
        return n - s[x], s[v]
    x = u
    while depth[x] > depth[v] + 1:
        x = par[x]
    if depth[x] == depth[v] + 1 and par[x] == v:
        return s[u], n - s[x]
    return s[u], s[v]


@njit(cache=True)
def _pair_check(par, s, psi, us, vs):
    n = par.shape[0]
    depth = _depths(par)
    bad = -1
    count = 0
    for k in range(us.shape[0]):
        u, v = us[k], vs[k]
        a, b = _pair_sizes(par, depth, s, n, u, v)
        ok1 = (psi[u] <= psi[v]) == (a >= b)
        ok2 = (psi[v] <= psi[u]) == (b >= a)
        if not (ok1 and ok2):
            count += 1
            if bad < 0:
                bad = k
    return count, bad


def subtree_seen_from(tree: GrowingTree, root: int, u: int) -> int:
    """|(T, root)_u| by an explicit BFS rooting at `root` (reference path)."""
    ptr, adj = adjacency(tree.n, tree.edges())
    par = np.full(tree.n, -2, dtype=np.int64)
    par[root] = -1
    order = [root]
    for x in order:
        for y in adj[ptr[x]:ptr[x + 1]]:
            if par[y] == -2:
                par[y] = x
                order.append(int(y))
    size = np.ones(tree.n, dtype=np.int64)
    for x in reversed(order[1:]):
        size[par[x]] += size[x]
    return int(size[u])


@njit(cache=True)
def _growth_check(par, n_total, m_start):
    """Check |(T(m+1), v_{m+1})_{v*(m)}| >= m/2 for every step m >= m_start."""
    cap = n_total
    p2 = np.full(cap, -1, dtype=np.int64)
    for v in range(m_start):
        p2[v] = par[v]
    s = np.zeros(cap, dtype=np.int64)
    mcs = np.zeros(cap, dtype=np.int64)
    cand = np.zeros(cap, dtype=np.int64)
    is_cand = np.zeros(cap, dtype=np.bool_)
    meta = np.array([m_start, 2, 0, 0, 0, 64], dtype=np.int64)
    top_v = np.zeros(2, dtype=np.int64)
    top_psi = np.zeros(2, dtype=np.int64)
    _init(p2, s, mcs, cand, is_cand, meta)
    depth = _depths(par)
    checked = 0
    violations = 0
    first_bad = -1
    for m in range(m_start, n_total):
        k = _select(s, mcs, cand, meta, top_v, top_psi)
        p = par[m]
        for j in range(k):
            if top_psi[j] != top_psi[0]:
                break
            c = top_v[j]
            if p == c:
                val = m
            else:
                x = p
                while depth[x] > depth[c] + 1:
                    x = par[x]
                if depth[x] == depth[c] + 1 and par[x] == c:
                    comp = s[x]
                else:
                    comp = m - s[c]
                val = m - comp
            checked += 1
            if 2 * val < m:
                violations += 1
                if first_bad < 0:
                    first_bad = m
        _attach(p2, s, mcs, cand, is_cand, meta, p)
    return checked, violations, first_bad


@dataclass
class CentroidReport:
    n: int
    pairs_checked: int = 0
    pair_violations: int = 0
    pair_witness: Optional[tuple[int, int]] = None
    centroids: tuple = ()
    centroid_ok: bool = True
    centroid_detail: str = ""
    growth_steps_checked: int = 0
    growth_violations: int = 0
    growth_witness: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.pair_violations == 0 and self.centroid_ok and self.growth_violations == 0


def check_centroid_properties(tree: GrowingTree, n_pairs: int = 1000, rng=None,
                              growth: bool = True) -> CentroidReport:
    """Verify the deterministic centroid properties of `tree` and its history.

    (a) Psi(u) <= Psi(v) iff |(T,v)_u| >= |(T,u)_v| on sampled pairs;
    (b) at most two centroids, adjacent, Psi(v*) <= n/2, and for two
        centroids each one's Psi is the other's side;
    (c) at every growth step m -> m+1 of the arrival history, the subtree of
        each centroid of T(m), seen from the new vertex, has size >= m/2.
    """
    n = tree.n
    if n < 3:
        raise ValueError("the centroid checks need n >= 3")
    state = psi_all(tree)
    rep = CentroidReport(n)
    rng = np.random.default_rng(0) if rng is None else rng
    if n_pairs:
        us = rng.integers(0, n, n_pairs)
        vs = rng.integers(0, n, n_pairs)
        cnt, bad = _pair_check(tree.parent, state.subtree_size, state.psi, us, vs)
        rep.pairs_checked = n_pairs
        rep.pair_violations = int(cnt)
        if bad >= 0:
            rep.pair_witness = (int(us[bad]), int(vs[bad]))

    psi = state.psi
    mn = int(psi.min())
    cents = tuple(int(v) for v in np.flatnonzero(psi == mn))
    rep.centroids = cents
    problems = []
    if 2 * mn > n:
        problems.append(f"min Psi {mn} > n/2")
    if len(cents) > 2:
        problems.append(f"{len(cents)} centroids")
    if len(cents) == 2:
        a, b = cents
        par = tree.parent
        if not (par[a] == b or par[b] == a):
            problems.append("two centroids are not adjacent")
        else:
            child = a if par[a] == b else b
            other = b if child == a else a
            side_child = int(state.subtree_size[child])
            # Psi(other) is the size of child's side and vice versa
            if psi[other] != side_child or psi[child] != n - side_child:
                problems.append("centroid Psi does not equal the opposite side")
    rep.centroid_ok = not problems
    rep.centroid_detail = "; ".join(problems)

    if growth and n >= 4:
        checked, viol, first = _growth_check(tree.parent, n, 3)
        rep.growth_steps_checked = int(checked)
        rep.growth_violations = int(viol)
        rep.growth_witness = None if first < 0 else int(first)
    return rep

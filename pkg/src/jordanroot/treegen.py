"""Random attachment trees T_f(n).

Vertices are identified by 0-based arrival index: vertex i is the (i+1)-th
arrival, vertex 0 is the root. Text files use 1-based arrival indices.
"""
from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit

from . import kernels as K
from .attach_model import AttachmentFunction, DomainError
from .streams import make_rng


class GrowingTree:
    """Labelled rooted tree grown by single-leaf additions.

    `parent[i]` is the arrival index of the parent of vertex i (-1 for the
    root) and `degree[i]` its full degree.
    """

    def __init__(self, parent, degree=None, capacity: Optional[int] = None):
        parent = np.asarray(parent, dtype=np.int64)
        n = parent.shape[0]
        cap = max(n, capacity or 0, 2)
        self._parent = np.full(cap, -1, dtype=np.int64)
        self._parent[:n] = parent
        self._degree = np.zeros(cap, dtype=np.int64)
        if degree is None:
            self._degree[:n] = _degrees_from_parent(parent)
        else:
            self._degree[:n] = degree
        self.n = n

    @classmethod
    def edge(cls, capacity: Optional[int] = None) -> "GrowingTree":
        return cls(np.array([-1, 0]), np.array([1, 1]), capacity)

    @property
    def parent(self) -> np.ndarray:
        return self._parent[: self.n]

    @property
    def degree(self) -> np.ndarray:
        return self._degree[: self.n]

    def out_degree(self) -> np.ndarray:
        out = self.degree.copy()
        out[1:] -= 1
        return out

    def add_vertex(self, p: int) -> int:
        if not 0 <= p < self.n:
            raise IndexError(f"parent {p} not in tree of size {self.n}")
        if self.n == self._parent.shape[0]:
            self._parent = np.concatenate([self._parent, np.full(self.n, -1, np.int64)])
            self._degree = np.concatenate([self._degree, np.zeros(self.n, np.int64)])
        v = self.n
        self._parent[v] = p
        self._degree[v] = 1
        self._degree[p] += 1
        self.n += 1
        return v

    def children(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR child lists: children of v are idx[ptr[v]:ptr[v+1]], by arrival."""
        par = self.parent[1:]
        counts = np.bincount(par, minlength=self.n)
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        idx = np.argsort(par, kind="stable").astype(np.int64) + 1
        return ptr, idx

    def edges(self) -> np.ndarray:
        """(n-1, 2) array of undirected edges (parent, child)."""
        return np.column_stack([self.parent[1:], np.arange(1, self.n)])

    def prefix(self, m: int) -> "GrowingTree":
        """The tree T(m) formed by the first m arrivals."""
        if not 2 <= m <= self.n:
            raise ValueError(f"prefix size must be in [2, {self.n}]")
        return GrowingTree(self.parent[:m].copy())

    def snapshot(self) -> "GrowingTree":
        return GrowingTree(self.parent.copy(), self.degree.copy())

    def __eq__(self, other) -> bool:
        return isinstance(other, GrowingTree) and np.array_equal(self.parent, other.parent)

    def __repr__(self) -> str:
        return f"GrowingTree(n={self.n})"


def _degrees_from_parent(parent: np.ndarray) -> np.ndarray:
    n = parent.shape[0]
    deg = np.bincount(parent[1:], minlength=n).astype(np.int64)
    deg[1:] += 1
    return deg


def check_tree(tree: GrowingTree) -> None:
    """Raise AssertionError unless the structural invariants hold."""
    par, deg, n = tree.parent, tree.degree, tree.n
    assert par[0] == -1
    assert np.all(par[1:] < np.arange(1, n)) and np.all(par[1:] >= 0)
    assert deg.sum() == 2 * (n - 1)
    assert np.array_equal(deg, _degrees_from_parent(par))


class WeightedIndex:
    """Dynamic discrete distribution over indices with O(log n) update/sample.

    Backed by a Fenwick tree of per-index weights; the cached total is
    rebuilt exactly when the estimated relative rounding drift exceeds
    `kernels.DRIFT_LIMIT`.
    """

    def __init__(self, weights=(), capacity: int = 16):
        weights = np.asarray(weights, dtype=float)
        cap = max(capacity, weights.shape[0], 1)
        self.w = np.zeros(cap)
        self.w[: weights.shape[0]] = weights
        self.size = weights.shape[0]
        self._tree = np.zeros(cap + 1)
        self.total = K.fenwick_build(self.w, self._tree)
        self._drift = 0.0

    def _grow(self):
        cap = self.w.shape[0] * 2
        w = np.zeros(cap)
        w[: self.size] = self.w[: self.size]
        self.w = w
        self._tree = np.zeros(cap + 1)
        self.total = K.fenwick_build(self.w, self._tree)
        self._drift = 0.0

    def _touch(self):
        self._drift = K.drift_step(self._drift, K.levels_for(self.w.shape[0]))
        if self._drift > K.DRIFT_LIMIT:
            self.total = K.fenwick_build(self.w, self._tree)
            self._drift = 0.0

    def append(self, weight: float) -> int:
        if weight <= 0:
            raise ValueError("weights must be positive")
        if self.size == self.w.shape[0]:
            self._grow()
        i = self.size
        self.size += 1
        self.w[i] = weight
        K.fenwick_add(self._tree, i, weight)
        self.total += weight
        self._touch()
        return i

    def update(self, i: int, weight: float) -> None:
        if weight <= 0:
            raise ValueError("weights must be positive")
        delta = weight - self.w[i]
        self.w[i] = weight
        K.fenwick_add(self._tree, i, delta)
        self.total += delta
        self._touch()

    def sample(self, rng: np.random.Generator) -> int:
        return int(K.fenwick_sample(self._tree, self.w, self.size, self.total, rng.random()))

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return _sample_batch(self._tree, self.w, self.size, self.total, rng.random(size))

    def exact_total(self) -> float:
        return float(np.sum(self.w[: self.size]))


@njit(cache=True)
def _sample_batch(tree, w, size, total, us):
    out = np.empty(us.shape[0], dtype=np.int64)
    for k in range(us.shape[0]):
        out[k] = K.fenwick_sample(tree, w, size, total, us[k])
    return out


# ---------------------------------------------------------------------------


@njit(cache=True)
def _grow_kernel(code, param, scale, table, reject, n, rng, parent, degree):
    w = np.zeros(n)
    ftree = np.zeros(n + 1)
    f1 = K.fval(code, param, scale, table, reject, 1)
    parent[0] = -1
    parent[1] = 0
    degree[0] = 1
    degree[1] = 1
    w[0] = f1
    w[1] = f1
    total = K.fenwick_build(w, ftree)
    levels = 1
    while (1 << levels) < n + 1:
        levels += 1
    drift = 0.0
    for v in range(2, n):
        p = K.fenwick_sample(ftree, w, v, total, rng.random())
        parent[v] = p
        degree[v] = 1
        degree[p] += 1
        new_w = K.fval(code, param, scale, table, reject, degree[p])
        if not new_w > 0.0:
            return v
        delta = new_w - w[p]
        w[p] = new_w
        K.fenwick_add(ftree, p, delta)
        w[v] = f1
        K.fenwick_add(ftree, v, f1)
        total += delta + f1
        drift += 2 * levels * 2.0**-52
        if drift > K.DRIFT_LIMIT:
            total = K.fenwick_build(w[: v + 1], ftree)
            drift = 0.0
    return -1


def grow(f: AttachmentFunction, n: int, seed) -> GrowingTree:
    """Sample T_f(n), deterministically in (f, n, seed)."""
    if n < 2:
        raise DomainError("trees start from the two-vertex edge; need n >= 2")
    rng = make_rng(seed)
    parent = np.empty(n, dtype=np.int64)
    degree = np.empty(n, dtype=np.int64)
    bad = _grow_kernel(*f.kernel_args(), n, rng, parent, degree)
    if bad >= 0:
        raise DomainError(f"attachment function undefined or non-positive at a degree reached by vertex {bad}")
    return GrowingTree(parent, degree)


def grow_step(tree: GrowingTree, sampler: WeightedIndex, f: AttachmentFunction,
              rng: np.random.Generator) -> int:
    """Attach one new vertex; returns the chosen parent."""
    p = sampler.sample(rng)
    tree.add_vertex(p)
    sampler.update(p, f(int(tree.degree[p])))
    sampler.append(f(1))
    return p


def sampler_for(tree: GrowingTree, f: AttachmentFunction) -> WeightedIndex:
    return WeightedIndex(f.values(tree.degree), capacity=2 * tree.n)


def degree_histogram(tree: GrowingTree) -> np.ndarray:
    """counts[k] = number of vertices with exactly k children."""
    return np.bincount(tree.out_degree(), minlength=1)


# ---------------------------------------------------------------------------
# text format: header "n <n> seed <seed> model <json>", then one parent per line


def dumps_tree(tree: GrowingTree, seed=None, f: Optional[AttachmentFunction] = None) -> str:
    model = "null" if f is None else f.to_json()
    buf = io.StringIO()
    buf.write(f"n {tree.n} seed {'none' if seed is None else int(seed)} model {model}\n")
    for p in tree.parent[1:]:
        buf.write(f"{p + 1}\n")
    return buf.getvalue()


def loads_tree(text: str):
    """Inverse of dumps_tree; returns (tree, seed, f)."""
    lines = text.splitlines()
    head = lines[0].split(" ", 5)
    if len(head) < 6 or head[0] != "n" or head[2] != "seed" or head[4] != "model":
        raise ValueError("malformed tree header")
    n = int(head[1])
    seed = None if head[3] == "none" else int(head[3])
    model = json.loads(head[5])
    f = None if model is None else AttachmentFunction.from_dict(model)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n - 1:
        raise ValueError(f"expected {n - 1} parent lines, found {len(body)}")
    parent = np.empty(n, dtype=np.int64)
    parent[0] = -1
    parent[1:] = np.array([int(x) for x in body], dtype=np.int64) - 1
    if np.any(parent[1:] >= np.arange(1, n)) or np.any(parent[1:] < 0):
        raise ValueError("parent indices must precede their children")
    return GrowingTree(parent), seed, f


def write_tree(path, tree: GrowingTree, seed=None, f=None) -> None:
    Path(path).write_text(dumps_tree(tree, seed, f))


def read_tree(path):
    return loads_tree(Path(path).read_text())

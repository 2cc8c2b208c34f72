"""Compiled primitives shared by the simulators.

Attachment functions cross into compiled code as (code, param, scale, table,
reject) tuples; see AttachmentFunction.kernel_args.
"""
import math

import numpy as np
from numba import njit

# relative accumulated rounding drift that triggers an exact rebuild
DRIFT_LIMIT = 1e-9
_EPS = 2.0**-52


@njit(cache=True, inline="always")
def fval(code, param, scale, table, reject, i):
    """f(i) for i >= 1; NaN when a reject-mode table is exceeded."""
    if code == 0:
        v = 1.0
    elif code == 1:
        v = i + param
    elif code == 2:
        v = float(i) ** param
    elif code == 3:
        v = param
    else:
        m = table.shape[0]
        if i > m:
            if reject:
                return np.nan
            v = table[m - 1]
        else:
            v = table[i - 1]
    return v * scale


@njit(cache=True, inline="always")
def exp_draw(rng, rate):
    # inverse CDF; 1 - u lies in (0, 1] so the log is finite
    return -math.log(1.0 - rng.random()) / rate


@njit(cache=True)
def fenwick_build(w, tree):
    """Fill `tree` (length >= len(w) + 1) from weights; returns the total."""
    n = w.shape[0]
    m = tree.shape[0]
    for i in range(m):
        tree[i] = 0.0
    # propagate over the full capacity, not just the filled prefix
    for i in range(1, m):
        if i <= n:
            tree[i] += w[i - 1]
        j = i + (i & -i)
        if j < m:
            tree[j] += tree[i]
    total = 0.0
    for i in range(n):
        total += w[i]
    return total


@njit(cache=True, inline="always")
def fenwick_add(tree, i, delta):
    j = i + 1
    m = tree.shape[0]
    while j < m:
        tree[j] += delta
        j += j & -j


@njit(cache=True)
def fenwick_find(tree, size, target):
    """Smallest index i < size with prefix sum through i exceeding target."""
    pos = 0
    m = tree.shape[0] - 1
    step = 1
    while step * 2 <= m:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= m and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step //= 2
    if pos >= size:
        pos = size - 1
    return pos


@njit(cache=True)
def fenwick_sample(tree, w, size, total, u):
    """Index drawn with probability w[i]/total using uniform u in [0, 1)."""
    i = fenwick_find(tree, size, u * total)
    # skip zero-weight slots that rounding could land on
    while w[i] <= 0.0 and i > 0:
        i -= 1
    return i


@njit(cache=True, inline="always")
def drift_step(drift, levels):
    return drift + _EPS * levels


@njit(cache=True, inline="always")
def fenwick_levels(capacity):
    levels = 1
    while (1 << levels) < capacity + 1:
        levels += 1
    return levels


def levels_for(capacity: int) -> int:
    return max(1, int(capacity).bit_length())

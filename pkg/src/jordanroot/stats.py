"""Small statistics and table helpers used by the experiments."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np
from scipy import stats as _st

Z95 = 1.959963984540054


def wilson(successes, trials, z: float = Z95):
    """Wilson score interval; vectorized over numpy inputs."""
    k = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    if np.any(n <= 0):
        raise ValueError("trials must be positive")
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # clip the rounding that can push the bounds past the estimate at p in {0, 1}
    lo = np.minimum(np.clip(centre - half, 0.0, 1.0), p)
    hi = np.maximum(np.clip(centre + half, 0.0, 1.0), p)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def binomial_se(p, n):
    return np.sqrt(np.asarray(p) * (1 - np.asarray(p)) / n)


def tv_distance(p, q) -> float:
    """Total variation between two probability (or count) vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def tv_from_labels(a, b) -> float:
    """TV between the empirical laws of two label samples (any hashables)."""
    keys = {}
    for x in a:
        keys.setdefault(x, len(keys))
    for x in b:
        keys.setdefault(x, len(keys))
    ca = np.zeros(len(keys))
    cb = np.zeros(len(keys))
    for x in a:
        ca[keys[x]] += 1
    for x in b:
        cb[keys[x]] += 1
    return tv_distance(ca, cb)


def ks_2samp(a, b) -> float:
    return float(_st.ks_2samp(a, b).statistic)


def ks_exp(samples, rate: float = 1.0) -> float:
    return float(_st.kstest(samples, "expon", args=(0, 1 / rate)).statistic)


def dkw_epsilon(n: int, alpha: float = 0.01) -> float:
    """Half-width of the two-sided DKW band at level 1 - alpha."""
    return math.sqrt(math.log(2 / alpha) / (2 * n))


def ecdf(samples, grid) -> np.ndarray:
    s = np.sort(np.asarray(samples))
    return np.searchsorted(s, grid, side="right") / s.shape[0]


# ---------------------------------------------------------------------------
# tables: one "# {json}" metadata line followed by a CSV body


def table_text(columns: dict, meta: dict) -> str:
    names = list(columns)
    rows = zip(*(np.asarray(columns[c]).tolist() for c in names))
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True, default=_jsonable) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def write_table(path, columns: dict, meta: dict) -> None:
    Path(path).write_text(table_text(columns, meta))


def read_table(path) -> tuple[dict, dict]:
    text = Path(path).read_text()
    first, _, body = text.partition("\n")
    if not first.startswith("# "):
        raise ValueError(f"{path}: missing JSON metadata line")
    meta = json.loads(first[2:])
    reader = csv.reader(io.StringIO(body))
    names = next(reader)
    cols = {c: [] for c in names}
    for row in reader:
        for c, x in zip(names, row):
            cols[c].append(_parse_cell(x))
    return meta, cols


def _parse_cell(x: str):
    for cast in (int, float):
        try:
            return cast(x)
        except ValueError:
            pass
    return x


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")


def blob_sha1(data: bytes) -> str:
    """Content hash in git's blob format."""
    h = hashlib.sha1(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()

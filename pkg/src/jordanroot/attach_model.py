"""Attachment functions f: {1, 2, ...} -> (0, inf) and their validation.

An attachment function carries caller-declared metadata (infimum, linear
upper bound, limsup of f(i)/i, optional lower linear bound and supremum).
The metadata is never derived symbolically; `validate` spot-checks it on a
probe grid.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

KINDS = ("uniform", "affine", "sublinear", "constant", "custom-table")
EXTENSIONS = ("hold-last-value", "reject")

# kind codes understood by the compiled kernels (see kernels.fval)
_CODES = {"uniform": 0, "affine": 1, "sublinear": 2, "constant": 3, "custom-table": 4}


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


def probe_grid() -> np.ndarray:
    """Indices 1..64 plus round(1.5**j) for j <= 35, sorted and unique."""
    dense = np.arange(1, 65)
    sparse = np.array([round(1.5**j) for j in range(36)])
    return np.unique(np.concatenate([dense, sparse[sparse >= 1]]))


@dataclass(frozen=True)
class AttachmentFunction:
    kind: str
    params: dict = field(default_factory=dict)
    f_star: float = 1.0
    linear_bound: tuple[float, float] = (1.0, 0.0)
    limsup_bound: float = 0.0
    sup_bound: Optional[float] = None
    lower_linear_bound: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attachment kind {self.kind!r}")
        if self.kind == "custom-table":
            values = self.params.get("values")
            if not values:
                raise ValueError("custom-table needs a non-empty 'values' list")
            if self.params.get("extension") not in EXTENSIONS:
                raise ValueError(
                    f"custom-table extension must be one of {EXTENSIONS}, "
                    f"got {self.params.get('extension')!r}"
                )
        if self.kind == "sublinear" and not 0.0 < self.params.get("alpha", -1) < 1.0:
            raise ValueError("sublinear alpha must lie in (0, 1)")
        if self.kind == "affine" and self.params.get("beta", -1) < 0:
            raise ValueError("affine beta must be >= 0")
        if self.kind == "constant" and not self.params.get("c", 0) > 0:
            raise ValueError("constant c must be > 0")
        object.__setattr__(self, "linear_bound", tuple(float(x) for x in self.linear_bound))
        if self.lower_linear_bound is not None:
            object.__setattr__(
                self, "lower_linear_bound", tuple(float(x) for x in self.lower_linear_bound)
            )

    @property
    def scale(self) -> float:
        return float(self.params.get("scale", 1.0))

    @property
    def lower_bound(self) -> tuple[float, float]:
        """Declared (C, b) with f(i) >= C*i + b; defaults to (0, f_star)."""
        if self.lower_linear_bound is None:
            return (0.0, self.f_star)
        return self.lower_linear_bound

    def __call__(self, i: int) -> float:
        return evaluate(self, i)

    def values(self, idx) -> np.ndarray:
        """Vectorized evaluation on an integer array of indices >= 1."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and idx.min() < 1:
            raise DomainError("attachment functions are defined on i >= 1")
        x = idx.astype(float)
        if self.kind == "uniform":
            out = np.ones_like(x)
        elif self.kind == "affine":
            out = x + self.params["beta"]
        elif self.kind == "sublinear":
            out = x ** self.params["alpha"]
        elif self.kind == "constant":
            out = np.full_like(x, float(self.params["c"]))
        else:
            table = np.asarray(self.params["values"], dtype=float)
            beyond = idx > len(table)
            if beyond.any() and self.params["extension"] == "reject":
                raise DomainError(
                    f"index {int(idx[beyond][0])} beyond custom table of length {len(table)}"
                )
            out = table[np.minimum(idx, len(table)) - 1]
        return out * self.scale

    def scaled(self, c: float) -> "AttachmentFunction":
        """The function c*f with metadata rescaled accordingly."""
        if not c > 0:
            raise ValueError("scale factor must be positive")
        params = dict(self.params)
        params["scale"] = self.scale * c
        lower = None
        if self.lower_linear_bound is not None:
            lower = (c * self.lower_linear_bound[0], c * self.lower_linear_bound[1])
        return AttachmentFunction(
            kind=self.kind,
            params=params,
            f_star=c * self.f_star,
            linear_bound=(c * self.linear_bound[0], c * self.linear_bound[1]),
            limsup_bound=c * self.limsup_bound,
            sup_bound=None if self.sup_bound is None else c * self.sup_bound,
            lower_linear_bound=lower,
        )

    def kernel_args(self):
        """(code, param, scale, table, reject) as consumed by compiled kernels."""
        code = _CODES[self.kind]
        param = 0.0
        table = np.zeros(1)
        reject = False
        if self.kind == "affine":
            param = float(self.params["beta"])
        elif self.kind == "sublinear":
            param = float(self.params["alpha"])
        elif self.kind == "constant":
            param = float(self.params["c"])
        elif self.kind == "custom-table":
            table = np.asarray(self.params["values"], dtype=float)
            reject = self.params["extension"] == "reject"
        return code, param, self.scale, table, reject

    @property
    def label(self) -> str:
        """Short name used in output file names."""
        if self.kind == "uniform":
            base = "uniform"
        elif self.kind == "affine":
            base = f"affine-b{self.params['beta']:g}"
        elif self.kind == "sublinear":
            base = f"sublinear-a{self.params['alpha']:g}"
        elif self.kind == "constant":
            base = f"constant-c{self.params['c']:g}"
        else:
            import hashlib

            digest = hashlib.sha1(json.dumps(self.params, sort_keys=True).encode()).hexdigest()
            base = f"custom-{digest[:8]}"
        if self.scale != 1.0:
            base += f"-x{self.scale:g}"
        return base

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "kind": self.kind,
            "params": dict(self.params),
            "f_star": self.f_star,
            "linear_bound": list(self.linear_bound),
            "limsup_bound": self.limsup_bound,
        }
        if self.sup_bound is not None:
            d["sup_bound"] = self.sup_bound
        if self.lower_linear_bound is not None:
            d["lower_linear_bound"] = list(self.lower_linear_bound)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AttachmentFunction":
        allowed = {"kind", "params", "f_star", "linear_bound", "limsup_bound",
                   "sup_bound", "lower_linear_bound"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown attachment-function fields: {sorted(unknown)}")
        kind = d["kind"]
        params = dict(d.get("params", {}))
        if {"f_star", "linear_bound", "limsup_bound"} <= set(d):
            lower = d.get("lower_linear_bound")
            return cls(
                kind=kind,
                params=params,
                f_star=float(d["f_star"]),
                linear_bound=tuple(d["linear_bound"]),
                limsup_bound=float(d["limsup_bound"]),
                sup_bound=d.get("sup_bound"),
                lower_linear_bound=None if lower is None else tuple(lower),
            )
        # canonical kinds may omit metadata; custom tables may not
        base = canonical(kind, **{k: v for k, v in params.items() if k != "scale"})
        return base.scaled(params["scale"]) if "scale" in params else base

    @classmethod
    def from_json(cls, text: str) -> "AttachmentFunction":
        return cls.from_dict(json.loads(text))


def uniform() -> AttachmentFunction:
    return AttachmentFunction(
        "uniform", {}, f_star=1.0, linear_bound=(0.0, 1.0), limsup_bound=0.0,
        sup_bound=1.0, lower_linear_bound=(0.0, 1.0),
    )


def affine(beta: float = 0.0) -> AttachmentFunction:
    """f(k) = k + beta; beta = 0 is pure preferential attachment."""
    beta = float(beta)
    return AttachmentFunction(
        "affine", {"beta": beta}, f_star=1.0 + beta, linear_bound=(1.0, beta),
        limsup_bound=1.0, lower_linear_bound=(1.0, beta),
    )


def sublinear(alpha: float) -> AttachmentFunction:
    """f(k) = k**alpha."""
    return AttachmentFunction(
        "sublinear", {"alpha": float(alpha)}, f_star=1.0, linear_bound=(1.0, 0.0),
        limsup_bound=0.0, lower_linear_bound=(0.0, 1.0),
    )


def constant(c: float) -> AttachmentFunction:
    c = float(c)
    return AttachmentFunction(
        "constant", {"c": c}, f_star=c, linear_bound=(0.0, c), limsup_bound=0.0,
        sup_bound=c, lower_linear_bound=(0.0, c),
    )


def custom_table(values, extension: str = "hold-last-value", *, f_star: float,
                 linear_bound, limsup_bound: float, sup_bound=None,
                 lower_linear_bound=None) -> AttachmentFunction:
    return AttachmentFunction(
        "custom-table",
        {"values": [float(v) for v in values], "extension": extension},
        f_star=float(f_star),
        linear_bound=tuple(linear_bound),
        limsup_bound=float(limsup_bound),
        sup_bound=sup_bound,
        lower_linear_bound=lower_linear_bound,
    )


def canonical(kind: str, **params) -> AttachmentFunction:
    if kind == "uniform":
        return uniform()
    if kind == "affine":
        return affine(params.get("beta", 0.0))
    if kind == "sublinear":
        return sublinear(params["alpha"])
    if kind == "constant":
        return constant(params["c"])
    raise ValueError(f"kind {kind!r} requires explicit metadata")


def evaluate(f: AttachmentFunction, i: int) -> float:
    if i < 1:
        raise DomainError(f"degree must be >= 1, got {i}")
    return float(f.values(np.array([i]))[0])


# --------------------------------------------------------------------------
# validation


@dataclass
class Check:
    name: str
    status: str  # "pass" | "fail" | "warn" | "deferred"
    witness: Optional[int] = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.status == "fail"]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "status": c.status, "witness": c.witness, "detail": c.detail}
                for c in self.checks
            ],
        }


def _first(mask: np.ndarray, grid: np.ndarray) -> Optional[int]:
    hits = np.flatnonzero(mask)
    return int(grid[hits[0]]) if hits.size else None


def validate(f: AttachmentFunction) -> ValidationReport:
    grid = probe_grid()
    checks: list[Check] = []
    if f.kind == "custom-table" and f.params["extension"] == "reject":
        grid = grid[grid <= len(f.params["values"])]
        checks.append(Check(
            "extension_total", "warn",
            detail="reject extension: f undefined beyond the table; simulations "
                   "fail if a degree exceeds it",
        ))
    else:
        checks.append(Check("extension_total", "pass"))
    vals = f.values(grid)
    rtol = 1e-12

    checks.append(Check(
        "f_star_positive", "pass" if f.f_star > 0 else "fail",
        detail=f"f_star = {f.f_star}",
    ))
    w = _first(~(vals > 0), grid)
    checks.append(Check("positivity", "fail" if w else "pass", w,
                        "" if w is None else f"f({w}) = {f.values([w])[0]} is not > 0"))
    w = _first(vals < f.f_star * (1 - rtol), grid)
    checks.append(Check("infimum", "fail" if w else "pass", w,
                        "" if w is None else f"f({w}) = {f.values([w])[0]} < f_star"))

    C, b = f.linear_bound
    if C < 0 or b < 0 or C + b <= 0:
        checks.append(Check("linear_bound", "fail", None, f"invalid constants {(C, b)}"))
    else:
        w = _first(vals > (C * grid + b) * (1 + rtol), grid)
        checks.append(Check("linear_bound", "fail" if w else "pass", w,
                            "" if w is None else f"f({w}) exceeds {C}*{w}+{b}"))

    lo_C, lo_b = f.lower_bound
    w = _first(vals < (lo_C * grid + lo_b) * (1 - rtol), grid)
    checks.append(Check("lower_linear_bound", "fail" if w else "pass", w,
                        "" if w is None else f"f({w}) below {lo_C}*{w}+{lo_b}"))

    if f.sup_bound is not None:
        w = _first(vals > f.sup_bound * (1 + rtol), grid)
        checks.append(Check("sup_bound", "fail" if w else "pass", w))

    L = f.limsup_bound
    if L < 0 or L > C * (1 + rtol):
        checks.append(Check("limsup_bound", "fail", None,
                            f"limsup bound {L} must lie in [0, C={C}]"))
    else:
        tail = grid >= 10**4
        if not tail.any():
            checks.append(Check("limsup_bound", "pass", None, "not sampled: no probe >= 1e4"))
        else:
            excess = vals[tail] / grid[tail] - L
            # sampling cannot separate slow decay from none; flag only an excess
            # that stays positive and does not decrease over the tail
            bad = bool(np.all(excess > 1e-9) and excess[-1] >= excess[0] * (1 - 1e-9))
            checks.append(Check(
                "limsup_bound", "fail" if bad else "pass", int(grid[tail][-1]) if bad else None,
                "sampled: f(i)/i stays above the declared limsup" if bad else "sampled",
            ))

    if f.kind == "sublinear":
        alpha = f.params["alpha"]
        raw = vals / f.scale
        w = _first(np.diff(raw) < 0, grid[1:])
        checks.append(Check("sublinear_monotone", "fail" if w else "pass", w))
        w = _first(raw > grid.astype(float) ** alpha * (1 + rtol), grid)
        checks.append(Check("sublinear_power_bound", "fail" if w else "pass", w))
        w = _first(raw < 1 - rtol, grid)
        checks.append(Check("sublinear_at_least_one", "fail" if w else "pass", w))

    checks.append(Check(
        "limsup_below_malthusian", "deferred",
        detail="needs lambda* (see malthusian.check_assumption_limsup)",
    ))
    return ValidationReport(checks)


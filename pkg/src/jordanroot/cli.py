"""Command-line front end.

    jordanroot <subcommand> [--config FILE] [--seed N] [--model M] [--workers N]
                            [--out DIR] [--set key=value ...]

Each run writes its result files plus a manifest (config echo, git-style
blob hashes of the outputs, wall time) into the output directory.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from . import attach_model as attach, centrality, ctbp, experiments as E, malthusian, stats, treegen
from .attach_model import AttachmentFunction, DomainError

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_INVARIANT = 0, 2, 3, 4
SUBCOMMANDS = ("solve-malthusian", "validate-model", "grow", "centrality", "rootfind",
               "persistence", "ctbp-sample", "limit-stats", "rde-test", "report")
MAX_TREE = 10**8


class ConfigError(ValueError):
    pass


_num_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_int_list = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_horizon = {"type": "array", "prefixItems": [{"enum": ["time", "size"]}, {"type": "number"}],
            "minItems": 2, "maxItems": 2}

PARAMS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "n_list": _int_list,
        "K": {"type": "integer", "minimum": 1},
        "K_list": _int_list,
        "epsilon_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                    "exclusiveMaximum": 1}},
        "replicas": {"type": "integer", "minimum": 1},
        "n_max": {"type": "integer", "minimum": 2},
        "t_grid": _num_list,
        "pool_size": {"type": "integer", "minimum": 1},
        "checkpoints": {"type": "integer", "minimum": 1},
        "horizon": _horizon,
        "quantity": {"enum": ["Y", "W", "events"]},
        "size": {"type": "integer", "minimum": 1},
        "stop_time": {"type": "number", "minimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "k_max": {"type": "integer", "minimum": 1},
        "tree": {"type": "string"},
        "inputs": {"type": "array", "items": {"type": "string"}},
        "n_boot": {"type": "integer", "minimum": 1},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["master_seed"],
    "properties": {
        "experiment": {"enum": list(SUBCOMMANDS)},
        "model": {"type": ["object", "string"]},
        "master_seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "params": PARAMS_SCHEMA,
    },
}

# params each subcommand needs
REQUIRED = {
    "grow": ["n"],
    "centrality": ["tree"],
    "rootfind": ["n_list", "K_list", "replicas"],
    "persistence": ["K", "n_max", "replicas"],
    "ctbp-sample": ["quantity"],
    "limit-stats": ["pool_size"],
    "rde-test": ["pool_size"],
    "report": ["inputs"],
}
NEEDS_MODEL = {"solve-malthusian", "validate-model", "grow", "rootfind", "persistence",
               "ctbp-sample", "limit-stats", "rde-test"}


@dataclass
class RunConfig:
    experiment: str
    master_seed: int
    model: Optional[dict] = None
    workers: int = 1
    output_dir: str = "."
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["model"] is None:
            del d["model"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        validate_config(d)
        d = dict(d)
        if "experiment" not in d:
            raise ConfigError("experiment: missing")
        if isinstance(d.get("model"), str):
            d["model"] = parse_model(d["model"]).to_dict()
        elif "model" in d:
            try:
                d["model"] = AttachmentFunction.from_dict(d["model"]).to_dict()
            except (DomainError, KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"model: {e}") from None
        cfg = cls(**d)
        missing = [k for k in REQUIRED.get(cfg.experiment, []) if k not in cfg.params]
        if missing:
            raise ConfigError(f"params: missing {', '.join(missing)} for {cfg.experiment}")
        if cfg.experiment in NEEDS_MODEL and cfg.model is None:
            raise ConfigError(f"model: required for {cfg.experiment}")
        return cfg

    def attachment(self) -> Optional[AttachmentFunction]:
        return None if self.model is None else AttachmentFunction.from_dict(self.model)


def validate_config(d) -> None:
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = sorted(v.iter_errors(d), key=lambda e: list(e.absolute_path))
    if errs:
        lines = [f"{'.'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errs]
        raise ConfigError("; ".join(lines))


def parse_model(text) -> AttachmentFunction:
    """Model from a dict, JSON text, or short form like 'affine:1' or 'pa'."""
    if isinstance(text, dict):
        return AttachmentFunction.from_dict(text)
    text = text.strip()
    if text.startswith("{"):
        return AttachmentFunction.from_json(text)
    kind, _, arg = text.partition(":")
    try:
        if kind == "uniform":
            return attach.uniform()
        if kind in ("pa", "linear"):
            return attach.affine(0.0)
        if kind == "affine":
            return attach.affine(float(arg or 0))
        if kind == "sublinear":
            return attach.sublinear(float(arg or 0.5))
        if kind == "constant":
            return attach.constant(float(arg or 1))
    except (ValueError, DomainError) as e:
        raise ConfigError(f"model: {e}") from None
    raise ConfigError(f"model: unknown model {text!r}")


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None


def build_config(args) -> RunConfig:
    d = load_config(args.config) if args.config else {}
    if not isinstance(d, dict):
        raise ConfigError("<root>: config must be a JSON object")
    d.setdefault("experiment", args.command)
    if d["experiment"] != args.command:
        raise ConfigError(f"experiment: config is for {d['experiment']!r}, not {args.command!r}")
    if args.seed is not None:
        d["master_seed"] = args.seed
    if args.model is not None:
        d["model"] = args.model
    if args.workers is not None:
        d["workers"] = args.workers
    if args.out is not None:
        d["output_dir"] = args.out
    params = dict(d.get("params", {}))
    for item in args.set or []:
        key, eq, val = item.partition("=")
        if not eq:
            raise ConfigError(f"--set {item!r}: expected key=value")
        try:
            params[key] = json.loads(val)
        except json.JSONDecodeError:
            params[key] = val
    if params or "params" in d:
        d["params"] = params
    return RunConfig.from_dict(d)


# ---------------------------------------------------------------------------
# subcommands: each returns (files, status dict) where files maps name -> text


def _label(cfg: RunConfig) -> str:
    f = cfg.attachment()
    return "none" if f is None else f.label


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=stats._jsonable) + "\n"


def _solution(f, tol=1e-9):
    return malthusian.solve_malthusian(f, tol=tol)


def cmd_solve(cfg: RunConfig):
    f = cfg.attachment()
    sol = _solution(f, cfg.params.get("tol", 1e-9))
    k_max = cfg.params.get("k_max", 200)
    pmf, resid = malthusian.degree_pmf(f, sol, k_max)
    out = dict(sol.to_dict(), limsup_ok=malthusian.check_assumption_limsup(f, sol),
               pmf=pmf.tolist(), pmf_residual=resid, f=f.to_dict())
    return {f"solve-malthusian-{f.label}-{cfg.master_seed}.json": _json_text(out)}, {}


def cmd_validate(cfg: RunConfig):
    f = cfg.attachment()
    rep = attach.validate(f)
    d = rep.to_dict()
    if rep.ok:
        try:
            sol = _solution(f)
            ok = malthusian.check_assumption_limsup(f, sol)
            d["checks"].append({"name": "limsup_below_malthusian",
                                "status": "pass" if ok else "fail",
                                "witness": None, "detail": f"lambda*={sol.lambda_star!r}"})
        except malthusian.MalthusianConditionError as e:
            d["checks"].append({"name": "limsup_below_malthusian", "status": "fail",
                                "witness": None, "detail": str(e)})
    d["ok"] = all(c["status"] != "fail" for c in d["checks"])
    files = {f"validate-model-{f.label}-{cfg.master_seed}.json": _json_text(d)}
    return files, {"valid": d["ok"]}


def cmd_grow(cfg: RunConfig):
    f = cfg.attachment()
    n = cfg.params["n"]
    if n > MAX_TREE:
        raise ctbp.ResourceCapError(f"n={n} exceeds the tree cap {MAX_TREE}")
    tree = treegen.grow(f, n, cfg.master_seed)
    return {f"grow-{f.label}-{cfg.master_seed}.tree":
            treegen.dumps_tree(tree, cfg.master_seed, f)}, {}


def cmd_centrality(cfg: RunConfig):
    tree, _, f = treegen.read_tree(cfg.params["tree"])
    st = centrality.psi_all(tree)
    K = min(cfg.params.get("K", 1), tree.n)
    label = "none" if f is None else f.label
    buf = io.StringIO()
    buf.write("arrival_index,degree,subtree_size,psi\n")
    for v in range(tree.n):
        buf.write(f"{v + 1},{tree.degree[v]},{st.subtree_size[v]},{st.psi[v]}\n")
    top = [{"arrival_index": v + 1, "psi": int(st.psi[v])} for v in centrality.top_k(st, K)]
    return {f"centrality-{label}-{cfg.master_seed}.csv": buf.getvalue(),
            f"centrality-{label}-{cfg.master_seed}.json": _json_text({"n": tree.n, "topk": top})}, {}


def cmd_rootfind(cfg: RunConfig):
    f, p = cfg.attachment(), cfg.params
    rep = E.root_recovery_experiment(f, p["n_list"], p["K_list"], p["replicas"],
                                     cfg.master_seed, cfg.workers)
    files = rep.files(f.label, cfg.master_seed)
    if p.get("epsilon_list"):
        n = max(p["n_list"])
        j = sorted(p["n_list"]).index(n)
        fit = E.budget_scaling_fit(f, p["epsilon_list"], n, p["replicas"], cfg.master_seed,
                                   K_list=None, n_boot=p.get("n_boot", 500),
                                   positions=rep.positions[:, j])
        files.update(fit.files(f.label, cfg.master_seed))
    return files, {}


def cmd_persistence(cfg: RunConfig):
    f, p = cfg.attachment(), cfg.params
    rep = E.persistence_experiment(f, p["K"], p["n_max"], p["replicas"], cfg.master_seed,
                                   p.get("checkpoints"), cfg.workers)
    files = rep.files(f.label, cfg.master_seed)
    tc = E.terminal_centroid_report(rep)
    files[f"terminal-centroid-{f.label}-{cfg.master_seed}.csv"] = stats.table_text(
        {"replica": tc["replica"], "last_change_k1": tc["last_change_k1"]},
        {"experiment": "terminal-centroid", "config": rep.config})
    return files, {}


def cmd_ctbp_sample(cfg: RunConfig):
    f, p = cfg.attachment(), cfg.params
    q = p["quantity"]
    seed = cfg.master_seed
    if q == "events":
        if "stop_time" in p:
            rec = ctbp.simulate_ctbp(f, seed, time=p["stop_time"])
        else:
            rec = ctbp.simulate_ctbp(f, seed, size=p.get("size", 1000))
        return {f"ctbp-events-{f.label}-{seed}.csv": ctbp.event_log_text(rec)}, {}
    lam = _solution(f).lambda_star
    size = p.get("size", 1000)
    if q == "Y":
        tol = p.get("tol", 1e-6)
        vals = ctbp.sample_Y_many(f, lam, size, seed, tol)
        horizon = None
    else:
        horizon = list(p.get("horizon", E.default_horizon(lam)))
        vals = E.w_pool(f, lam, size, seed, tuple(horizon), cfg.workers)
    meta = {"f": f.to_dict(), "lambda_star": lam, "horizon": horizon, "seed": seed,
            "quantity": q}
    text = ctbp.samples_text(vals, meta, q)
    return {f"ctbp-{q}-{f.label}-{seed}.csv": text}, {}


def cmd_limit_stats(cfg: RunConfig):
    f, p = cfg.attachment(), cfg.params
    lam = _solution(f).lambda_star
    horizon = tuple(p.get("horizon", E.default_horizon(lam)))
    pool = E.w_pool(f, lam, p["pool_size"], cfg.master_seed, horizon, cfg.workers)
    tp = E.tail_profile(pool) if pool.size >= 10**4 else None
    grid = p.get("t_grid", E.default_t_grid(lam).tolist())
    conv = E.convergence_profile(f, lam, grid, p.get("replicas", 1000), cfg.master_seed,
                                 workers=cfg.workers)
    files = conv.files(f.label, cfg.master_seed)
    tail = {"pool_size": int(pool.size), "horizon": list(horizon), "mean": float(pool.mean()),
            "tail_profile": tp}
    files[f"tail-{f.label}-{cfg.master_seed}.json"] = _json_text(tail)
    return files, {}


def cmd_rde(cfg: RunConfig):
    f, p = cfg.attachment(), cfg.params
    lam = _solution(f).lambda_star
    horizon = tuple(p["horizon"]) if "horizon" in p else None
    rep = E.rde_fixed_point_test(f, lam, p["pool_size"], cfg.master_seed, horizon,
                                 p.get("tol", 1e-6), cfg.workers)
    return rep.files(f.label, cfg.master_seed), {"ks": rep.statistics["ks"]}


# long-format renderers keyed by table name: (x column, y columns, series column)
_LONG = {
    "success": ("K", ["success_rate"], "n"),
    "windows": ("upper", ["fraction"], "rule"),
    "budget": ("epsilon", ["K_hat"], None),
    "quantiles": ("quantile", ["pool_A", "pool_B"], None),
    "sup_deviation": ("t", ["q90"], None),
    "sup_tail": ("A", ["survival"], None),
}


def long_format(meta: dict, cols: dict) -> dict:
    tname = meta.get("table", "")
    names = list(cols)
    x, ys, series = _LONG.get(tname, (names[0], [c for c in names[1:]], None))
    out = {"x": [], "y": [], "series": [], "ci_lo": [], "ci_hi": []}
    nrows = len(cols[x])
    has_ci = "ci_lo" in cols and "ci_hi" in cols and len(ys) == 1
    for ycol in ys:
        if not all(isinstance(v, (int, float)) for v in cols[ycol]):
            continue
        for i in range(nrows):
            out["x"].append(cols[x][i])
            out["y"].append(cols[ycol][i])
            label = f"{tname}:{ycol}"
            if series:
                label += f":{series}={cols[series][i]}"
            out["series"].append(label)
            out["ci_lo"].append(cols["ci_lo"][i] if has_ci else "")
            out["ci_hi"].append(cols["ci_hi"][i] if has_ci else "")
    return out


def cmd_report(cfg: RunConfig):
    merged = {"x": [], "y": [], "series": [], "ci_lo": [], "ci_hi": []}
    sources = []
    for path in cfg.params["inputs"]:
        meta, cols = stats.read_table(path)
        part = long_format(meta, cols)
        for k in merged:
            merged[k].extend(part[k])
        sources.append({"path": Path(path).name, "table": meta.get("table")})
    text = stats.table_text(merged, {"experiment": "report", "sources": sources})
    return {f"report-{_label(cfg)}-{cfg.master_seed}.csv": text}, {}


COMMANDS = {
    "solve-malthusian": cmd_solve, "validate-model": cmd_validate, "grow": cmd_grow,
    "centrality": cmd_centrality, "rootfind": cmd_rootfind, "persistence": cmd_persistence,
    "ctbp-sample": cmd_ctbp_sample, "limit-stats": cmd_limit_stats, "rde-test": cmd_rde,
    "report": cmd_report,
}


def run(cfg: RunConfig) -> int:
    """Dispatch, write outputs and the manifest; returns the exit status."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status, code, files, extra = "ok", EXIT_OK, {}, {}
    try:
        files, extra = COMMANDS[cfg.experiment](cfg)
        if extra.get("valid") is False:
            status, code = "invalid-model", EXIT_CONFIG
    except ctbp.ResourceCapError as e:
        status, code, extra = "resource-cap", EXIT_RESOURCE, {"error": str(e)}
    except centrality.InvariantError as e:
        status, code, extra = "invariant-violation", EXIT_INVARIANT, {"error": str(e)}
    except (ConfigError, DomainError, malthusian.MalthusianConditionError, OSError) as e:
        status, code, extra = "config-error", EXIT_CONFIG, {"error": str(e)}
    hashes = {}
    for name, text in files.items():
        data = text.encode()
        (out_dir / name).write_bytes(data)
        hashes[name] = stats.blob_sha1(data)
    manifest = {"config": cfg.to_dict(), "outputs": hashes, "status": status,
                "partial": code == EXIT_RESOURCE, "wall_time": time.perf_counter() - t0}
    manifest.update({k: v for k, v in extra.items() if k != "valid"})
    name = f"manifest-{cfg.experiment}-{_label(cfg)}-{cfg.master_seed}.json"
    (out_dir / name).write_text(_json_text(manifest))
    if code != EXIT_OK:
        print(f"{cfg.experiment}: {status}: {extra.get('error', '')}", file=sys.stderr)
    else:
        print(json.dumps({"status": status, "outputs": sorted(hashes),
                          **{k: v for k, v in extra.items() if k != "valid"}}))
    return code


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--model", help="model JSON or short form: uniform, pa, affine:B, "
                                        "sublinear:A, constant:C")
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one params field (value parsed as JSON)")
    p = argparse.ArgumentParser(prog="jordanroot", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

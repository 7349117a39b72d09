"""Experiment driver: ``chainfactor run <config.json>`` and ``chainfactor validate <config.json>``.

Each run writes three files into the output directory:

``<kind>.csv``
    One row per grid point, deterministic for a given config and seed.
``<kind>_summary.txt``
    Decay fits, audit results and the pass/fail verdict (deterministic).
``<kind>_meta.json``
    Runtime, toolkit version and config hash.

Exit status: 0 on success, 1 if an audit failed, 2 for invalid
configuration, 3 when the requested chain exceeds the dense budget.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from chainfactor import __version__
from chainfactor import divergences as dv
from chainfactor import recovery as rc
from chainfactor import spinchain as sc
from chainfactor import tomography as tm
from chainfactor.errors import ArgumentError, ChainfactorError, ResourceError
from chainfactor.qop import DensityMatrix, check_total_dim, random_density, trace_distance

KINDS = (
    "bscmi_decay",
    "purity_decay",
    "factorization_decay",
    "dpi_audit",
    "reconstruct_sweep",
    "learn_sweep",
    "purity_estimate",
)

_INT = {"type": "integer", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["experiment"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(KINDS)},
        "model": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": sorted(sc.BUILTIN_MODELS)},
                "params": {"type": "object"},
            },
        },
        "n": _POS_INT,
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "A": _POS_INT,
                "C": _POS_INT,
                "B_range": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2},
                "A_prime": _INT,
            },
        },
        "block_sizes": {"type": "array", "items": _POS_INT, "minItems": 1},
        "chain_bound": {"type": "boolean"},
        "deltas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seeds": {"type": "array", "items": _INT, "minItems": 1},
        "tomography": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": ["delta_ball", "pauli_sampling"]},
                "samples_per_marginal": _POS_INT,
                "delta": {"type": "number", "minimum": 0},
                "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "eps_reg": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "shared_marginal": {"type": "boolean"},
            },
        },
        "dpi": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "instances": _INT,
                "local_dims": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
                "channels": _INT,
            },
        },
        "seed": _INT,
        "output": {"type": "string"},
    },
}

_NEEDS_CHAIN = {k for k in KINDS if k != "dpi_audit"}


class ConfigError(ChainfactorError, ValueError):
    """Configuration could not be parsed or failed validation."""


# --- configuration -----------------------------------------------------------


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and validate a JSON config; errors name the line or field."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        msgs = [f"{source}: field '{'/'.join(map(str, e.path)) or '<root>'}': {e.message}" for e in errors]
        raise ConfigError("\n".join(msgs))
    kind = cfg["experiment"]
    if kind in _NEEDS_CHAIN:
        for key in ("model", "n", "beta"):
            if key not in cfg:
                raise ConfigError(f"{source}: field '{key}': required for experiment {kind}")
        try:
            model = sc.model_from_config(cfg["model"])
        except ArgumentError as exc:
            raise ConfigError(f"{source}: field 'model': {exc}") from None
        try:
            check_total_dim((model.local_dim,) * cfg["n"])
        except ResourceError as exc:
            raise ResourceError(f"{source}: field 'n': {exc}") from None
    if kind in ("bscmi_decay", "purity_decay", "factorization_decay"):
        g = _geometry(cfg)
        lo, hi = g["B_range"]
        if lo > hi:
            raise ConfigError(f"{source}: field 'geometry/B_range': lower end exceeds upper end")
        extra = g["A"] + g["C"] + hi + (g["A_prime"] or 0)
        if extra > cfg["n"]:
            raise ConfigError(f"{source}: field 'geometry': regions need {extra} sites, chain has {cfg['n']}")
    return cfg


def load_config(path: str | os.PathLike) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(p))


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _geometry(cfg) -> dict:
    g = {"A": 2, "C": 2, "B_range": [1, 5], "A_prime": None}
    g.update(cfg.get("geometry", {}))
    return g


def _tomo(cfg, seed) -> tm.TomographyConfig:
    t = dict(cfg.get("tomography", {}))
    return tm.TomographyConfig(seed=seed, **t)


# --- results -----------------------------------------------------------------


@dataclass
class SweepResult:
    kind: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    fits: dict[str, sc.DecayFitReport] = field(default_factory=dict)
    audits: dict[str, bool] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.audits.values())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def to_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.columns)
    for row in result.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def to_summary(result: SweepResult) -> str:
    lines = [f"experiment: {result.kind}", f"rows: {len(result.rows)}"]
    for name, fit in result.fits.items():
        lines.append(f"fit {name}: {fit.summary()} strictly_decreasing={fit.strictly_decreasing}")
    for name, ok in result.audits.items():
        lines.append(f"audit {name}: {'PASS' if ok else 'FAIL'}")
    lines.extend(f"note: {n}" for n in result.notes)
    lines.append(f"verdict: {'PASS' if result.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def emit_report(result: SweepResult, out_dir: str | os.PathLike, formats=("csv", "summary_text")) -> list[Path]:
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            p = out / f"{result.kind}.csv"
            p.write_text(to_csv(result), encoding="utf-8")
            written.append(p)
        if "summary_text" in formats:
            p = out / f"{result.kind}_summary.txt"
            p.write_text(to_summary(result), encoding="utf-8")
            written.append(p)
        if result.meta:
            p = out / f"{result.kind}_meta.json"
            p.write_text(json.dumps(result.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report to {exc.filename or out}: {exc.strerror}") from None
    return written


# --- experiments --------------------------------------------------------------


def _pmap(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _gibbs(cfg) -> sc.GibbsInstance:
    return sc.gibbs_state(sc.model_from_config(cfg["model"]), cfg["n"], cfg["beta"])


def _partition(cfg, b: int) -> sc.ChainPartition:
    g = _geometry(cfg)
    n = cfg["n"]
    if g["A_prime"] is None:
        return sc.ChainPartition.window(n, g["A"], b, g["C"])
    c_prime = n - g["A_prime"] - g["A"] - b - g["C"]
    return sc.ChainPartition.tripartite(g["A"], b, g["C"], g["A_prime"], c_prime)


def _b_values(cfg):
    lo, hi = _geometry(cfg)["B_range"]
    return list(range(lo, hi + 1))


def _add_fit(res: SweepResult, name: str, x, y):
    fit = sc.fit_decay(x, y)
    res.fits[name] = fit
    return fit


def run_bscmi_decay(cfg, threads, seed) -> SweepResult:
    inst = _gibbs(cfg)
    cols = ["B_size", "cmi", "bs_cmi_os", "bs_cmi_ts", "bs_cmi_rev"]

    def point(b):
        p = _partition(cfg, b)
        abc = sc.marginal(inst, p, ["A", "B", "C"])
        sizes = (p.size("A"), b, p.size("C"))
        return [b, dv.cmi(abc, sizes), dv.bs_cmi_os(abc, sizes), dv.bs_cmi_ts(abc, sizes), dv.bs_cmi_rev(abc, sizes)]

    res = SweepResult("bscmi_decay", cols, _pmap(point, _b_values(cfg), threads))
    xs = [r[0] for r in res.rows]
    for k, name in enumerate(cols[1:], start=1):
        ys = [r[k] for r in res.rows]
        fit = _add_fit(res, name, xs, ys)
        res.audits[f"{name}_nonnegative"] = all(y >= -1e-9 for y in ys)
        if name != "cmi":
            res.notes.append(f"{name} strictly decreasing: {fit.strictly_decreasing}; log-concave: {fit.log_concave}")
    return res


def run_purity_decay(cfg, threads, seed) -> SweepResult:
    inst = _gibbs(cfg)
    cols = ["B_size", "purity_ratio", "abs_ratio_minus_1", "renyi2_cmi"]

    def point(b):
        p = _partition(cfg, b)
        abc = sc.marginal(inst, p, ["A", "B", "C"])
        r = dv.purity_ratio(abc, (p.size("A"), b, p.size("C")))
        return [b, r, abs(r - 1), -math.log(r)]

    res = SweepResult("purity_decay", cols, _pmap(point, _b_values(cfg), threads))
    _add_fit(res, "abs_ratio_minus_1", [r[0] for r in res.rows], [r[2] for r in res.rows])
    res.audits["ratio_positive"] = all(r[1] > 0 for r in res.rows)
    return res


def run_factorization_decay(cfg, threads, seed) -> SweepResult:
    inst = _gibbs(cfg)
    cols = [
        "B_size",
        "factorization_norm",
        "norm_rhoA_rhoB_rhoAB_inv",
        "norm_rhoAB_rhoA_inv_rhoB_inv",
        "norm_rhoABC_rhoB_inv",
        "rhoB_condition",
    ]

    def point(b):
        p = _partition(cfg, b)
        diag = sc.gibbs_norm_diagnostics(inst, p)
        return [
            b,
            sc.factorization_norm(inst.state, p),
            diag.product_over_joint,
            diag.joint_over_product,
            diag.state_over_middle,
            diag.middle_condition,
        ]

    res = SweepResult("factorization_decay", cols, _pmap(point, _b_values(cfg), threads))
    fit = _add_fit(res, "factorization_norm", [r[0] for r in res.rows], [r[1] for r in res.rows])
    res.notes.append(f"superexponential-consistency (log-concave) flag: {fit.log_concave}")
    res.audits["condition_at_least_one"] = all(r[5] >= 1 - 1e-9 for r in res.rows)
    return res


def _dpi_instance(args):
    kind, d, idx, seed = args
    rng = np.random.default_rng([seed, d, idx, 0 if kind == "expectation" else 1])
    if kind == "expectation":
        dims = (d, d)
        r = DensityMatrix(random_density(d * d, rng), dims)
        s = DensityMatrix(random_density(d * d, rng), dims)
        E = rc.ConditionalExpectation.trace_out(dims, [0])
        a = rc.audit(r, s, E)
        return [kind, d, idx, a.gap, a.upper_bound_1, a.upper_bound_2, a.strengthened_lower_bound, a.ok]
    r = random_density(d, rng)
    s = random_density(d, rng)
    T = rc.random_channel(d, d, 2, rng)
    gap = rc.dpi_gap(r, s, T)
    ub = rc.dpi_upper_bound_channel(r, s, T)
    return [kind, d, idx, gap, ub, ub, float("nan"), bool(gap <= ub + 1e-8)]


def run_dpi_audit(cfg, threads, seed) -> SweepResult:
    opts = {"instances": 500, "local_dims": [2, 3, 4], "channels": 200}
    opts.update(cfg.get("dpi", {}))
    cols = ["kind", "local_dim", "instance", "gap", "upper_bound_1", "upper_bound_2", "lower_bound", "ok"]
    jobs = [("expectation", d, i, seed) for d in opts["local_dims"] for i in range(opts["instances"])]
    jobs += [("channel", d, i, seed) for d in opts["local_dims"] for i in range(opts["channels"])]
    res = SweepResult("dpi_audit", cols, _pmap(_dpi_instance, jobs, threads))
    bad = sum(1 for r in res.rows if not r[-1])
    res.notes.append(f"sandwich violations: {bad} of {len(res.rows)}")
    res.audits["dpi_sandwich"] = bad == 0
    return res


def run_reconstruct_sweep(cfg, threads, seed) -> SweepResult:
    inst = _gibbs(cfg)
    n = cfg["n"]
    with_bound = cfg.get("chain_bound", False)
    cols = ["block_size", "n_blocks", "trace_distance", "trace", "max_bond", "bond_limit", "mpo_deviation", "chain_bound_rhs"]

    def point(l):
        part = sc.ChainPartition.uniform_blocks(n, l)
        kernels, rho_1 = rc.recovery_kernels(inst.state, part)
        rec = rc.sequential_reconstruct(kernels, rho_1)
        mpo = rc.mpo_export(kernels, rho_1)
        dev = trace_distance(rc.mpo_contract(mpo), rec)
        limit = max(int(np.prod(b)) for b in mpo.block_dims) ** 3
        rhs = rc.chain_recovery_bound(inst.state, part, rec).rhs if with_bound and len(part.names) > 1 else float("nan")
        return [l, len(part.names), trace_distance(rec, inst.state), float(rec.trace()), mpo.max_bond, limit, dev, rhs]

    res = SweepResult("reconstruct_sweep", cols, _pmap(point, cfg.get("block_sizes", [1, 2, 3]), threads))
    errs = [r[2] for r in res.rows]
    res.audits["trace_one"] = all(abs(r[3] - 1) <= 1e-8 for r in res.rows)
    res.audits["bond_dims"] = all(r[4] <= r[5] for r in res.rows)
    res.audits["mpo_matches_dense"] = all(r[6] <= 1e-9 for r in res.rows)
    res.audits["error_nonincreasing_in_l"] = all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
    if with_bound:
        res.audits["chain_bound"] = all(not (r[2] > r[7] + 1e-8) for r in res.rows)
    return res


def run_learn_sweep(cfg, threads, seed) -> SweepResult:
    inst = _gibbs(cfg)
    n = cfg["n"]
    deltas = cfg.get("deltas", [1e-5, 1e-4, 1e-3])
    cols = ["block_size", "delta", "trace_distance", "deviation_from_exact"]
    jobs = [(l, d) for l in cfg.get("block_sizes", [2]) for d in [0.0] + [x for x in deltas if x != 0]]
    exact = {}
    for l in sorted({l for l, _ in jobs}):
        exact[l] = rc.reconstruct(inst.state, sc.ChainPartition.uniform_blocks(n, l))

    def point(job):
        l, d = job
        t = _tomo(cfg, seed)
        t = replace(t, delta=d) if t.scheme == "delta_ball" else t
        r = tm.learn_mpo(inst, l, t, export_mpo=False)
        return [l, d, r.trace_distance_to_truth, trace_distance(r.reconstructed, exact[l])]

    res = SweepResult("learn_sweep", cols, _pmap(point, jobs, threads))
    for l in sorted(exact):
        rows = [r for r in res.rows if r[0] == l]
        ok, slopes = linear_growth_check([r[1] for r in rows], [r[3] for r in rows], [r[2] for r in rows])
        res.audits[f"linear_in_delta_l{l}"] = ok
        res.notes.append(f"l={l} finite-difference slopes: {', '.join(format(s, '.6g') for s in slopes)}")
    return res


def linear_growth_check(deltas, deviations, errors, ratio: float = 3.0):
    """Check that the learned output moves at most linearly in delta.

    ``deltas`` must start at 0. Finite-difference slopes of the deviation from
    the exact reconstruction must agree within ``ratio``, and the end-to-end
    error may exceed its delta=0 value by at most the largest slope times delta.
    """
    order = np.argsort(deltas)
    d = np.asarray(deltas, float)[order]
    dev = np.asarray(deviations, float)[order]
    err = np.asarray(errors, float)[order]
    if d[0] != 0 or d.size < 3:
        raise ArgumentError("need delta=0 plus at least two positive deltas")
    slopes = np.diff(dev) / np.diff(d)
    kmax = float(np.max(np.abs(slopes)))
    consistent = kmax <= ratio * float(np.min(np.abs(slopes))) if kmax > 0 else True
    bounded = bool(np.all(err[1:] - err[0] <= kmax * d[1:] + 1e-12))
    return bool(consistent and bounded), slopes.tolist()


def run_purity_estimate(cfg, threads, seed) -> SweepResult:
    inst = _gibbs(cfg)
    n = cfg["n"]
    eps = cfg.get("epsilon", 0.2)
    l = cfg.get("block_sizes", [tm.purity_block_size(n, eps)])[0]
    seeds = cfg.get("seeds", list(range(seed, seed + 10)))
    cols = ["seed", "block_size", "n_blocks", "p2_estimate", "true_purity", "multiplicative_error", "within_epsilon"]

    def point(s):
        r = tm.estimate_purity(inst, l, _tomo(cfg, s))
        return [s, l, r.n_blocks, r.p2_estimate, r.true_purity, r.multiplicative_error, r.multiplicative_error <= eps]

    res = SweepResult("purity_estimate", cols, _pmap(point, seeds, threads))
    hits = sum(1 for r in res.rows if r[-1])
    res.notes.append(f"{hits} of {len(res.rows)} seeds within epsilon={eps}")
    res.audits["success_rate_0.9"] = hits >= math.ceil(0.9 * len(res.rows))
    return res


RUNNERS = {
    "bscmi_decay": run_bscmi_decay,
    "purity_decay": run_purity_decay,
    "factorization_decay": run_factorization_decay,
    "dpi_audit": run_dpi_audit,
    "reconstruct_sweep": run_reconstruct_sweep,
    "learn_sweep": run_learn_sweep,
    "purity_estimate": run_purity_estimate,
}


def run_experiment(cfg: dict, threads: int = 1, seed: int | None = None) -> SweepResult:
    seed = cfg.get("seed", 0) if seed is None else seed
    t0 = time.perf_counter()
    res = RUNNERS[cfg["experiment"]](cfg, threads, seed)
    res.meta = {
        "experiment": cfg["experiment"],
        "version": __version__,
        "config_hash": config_hash({**cfg, "seed": seed}),
        "seed": seed,
        "threads": threads,
        "runtime_seconds": time.perf_counter() - t0,
    }
    return res


# --- command line -------------------------------------------------------------


def _threads(arg) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("CHAINFACTOR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"CHAINFACTOR_THREADS must be an integer, got {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chainfactor", description="Gibbs-state factorization experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: config 'output' or '.')")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: valid {cfg['experiment']} config")
            return 0
        threads = _threads(args.threads)
        res = run_experiment(cfg, threads, args.seed)
        out = args.out or cfg.get("output", ".")
        for path in emit_report(res, out):
            print(path)
        sys.stdout.write(to_summary(res))
        return 0 if res.passed else 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return 3
    except (ArgumentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

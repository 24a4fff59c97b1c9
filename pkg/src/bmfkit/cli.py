"""Command-line entry point: ``bmfkit <subcommand> ...``.

Subcommands:
    factorize     run a method for several seeded trials and report errors
    bench-kernel  time the packed Boolean product against a byte-per-entry loop
    topics        factorize a word-by-document matrix and list top words per topic
    combine       pick the best r rank-one factors from saved factorizations
    datasets      list the bundled datasets

Trials run in a process pool.  The pool size comes from ``--workers``, then
the ``BMFKIT_WORKERS`` environment variable, then the CPU count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .bitcore import BoolMatrix, bool_product, naive_product
from .boolls import EXACT_RANK_LIMIT, LocalSearchParams
from .combine import (EXACT_COMBINE_LIMIT, CombineSelection, FactorPool, GreedyParams,
                      HeurCombParams, combine_exact, combine_heuristic, diversify,
                      greedy_comb, greedy_selection, greedy_tree_bmf, ms_comb_ao,
                      selection_error, tree_bmf)
from .dataio import (Dataset, FormatError, builtin_names, load_factor, relative_error,
                     resolve_dataset, save_factor, top_words, topic_importance, write_report)
from .factorize import AOConfig, Factorization, InitConfig, Problem, ms_ao

METHODS = ("ms-ao", "ms-comb-ao", "tree-bmf", "greedy-comb", "greedy-tree")
WORKERS_ENV = "BMFKIT_WORKERS"


class CLIError(Exception):
    """User-facing failure; reported as one line with a nonzero exit code."""


@dataclass
class RunSpec:
    dataset: str
    method: str = "ms-ao"
    r: int = 2
    budget: float = 30.0
    trials: int = 1
    seed: int = 0
    backend: str = "exact"
    init: str = "alternate"
    max_runs: int | None = None
    maxiter: int = 100
    depth: int = 1
    children: int = 2
    leaf_solutions: int | None = None
    calls: int = 3
    per_call_budget: float | None = None
    w_min: int = 10
    ratio: float = 8.0
    t_max: int = 10_000
    n_trials: int = 2_000
    q_max: int | None = None
    ls_depth: int | None = None
    exact_rank_limit: int = EXACT_RANK_LIMIT
    exact_combine_limit: int = EXACT_COMBINE_LIMIT
    greedy_init: str = "random"
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise CLIError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        positive = {"r": self.r, "budget": self.budget, "trials": self.trials,
                    "maxiter": self.maxiter, "depth": self.depth, "children": self.children,
                    "calls": self.calls, "t-max": self.t_max, "n-trials": self.n_trials}
        for name, v in positive.items():
            if v is None or v <= 0:
                raise CLIError(f"--{name} must be positive, got {v}")
        for name in ("max_runs", "leaf_solutions", "per_call_budget"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise CLIError(f"--{name.replace('_', '-')} must be positive, got {v}")
        if self.method.startswith("greedy") and self.extra.get("backend") not in (None, "greedy_ls"):
            raise CLIError("greedy methods always use the greedy_ls backend")
        if self.backend == "exact" and self.r > self.exact_rank_limit and not self.method.startswith("greedy"):
            raise CLIError(f"rank {self.r} exceeds --exact-rank-limit {self.exact_rank_limit}; "
                           "use --backend greedy_ls or a greedy method")

    def ao_config(self) -> AOConfig:
        return AOConfig(maxiter=self.maxiter, backend=self.backend,
                        local_search=LocalSearchParams(self.ls_depth, self.q_max),
                        exact_rank_limit=self.exact_rank_limit)

    def greedy_params(self) -> GreedyParams:
        return GreedyParams(init=self.greedy_init,
                            local_search=LocalSearchParams(self.ls_depth, self.q_max),
                            heur=HeurCombParams(self.t_max, self.n_trials, None),
                            maxiter=self.maxiter, max_runs=self.max_runs)


def run_method(ds: Dataset, spec: RunSpec, seed: int) -> Factorization:
    """Run one trial of ``spec.method`` on ``ds``."""
    prob = Problem(ds.X, ds.M)
    cfg = spec.ao_config()
    init = InitConfig(spec.init)
    heur = HeurCombParams(spec.t_max, spec.n_trials, seed)
    if spec.method == "ms-ao":
        return ms_ao(prob, None, spec.r, spec.budget, cfg, init, seed, spec.max_runs)
    if spec.method == "ms-comb-ao":
        return ms_comb_ao(prob, None, spec.r, spec.budget, cfg, init, seed, spec.max_runs, heur,
                          spec.exact_combine_limit)
    if spec.method == "tree-bmf":
        return tree_bmf(prob, None, spec.r, spec.depth, spec.children, spec.leaf_solutions,
                        spec.budget, cfg, init, seed, None, spec.exact_combine_limit)
    if spec.method == "greedy-comb":
        return greedy_comb(prob, None, spec.r, spec.budget, spec.greedy_params(), seed)
    per_call = spec.per_call_budget or spec.budget / spec.calls
    return greedy_tree_bmf(prob, None, spec.r, spec.calls, per_call, spec.greedy_params(), seed)


def _trial(args):
    ds, spec, seed = args
    t0 = time.perf_counter()
    res = run_method(ds, spec, seed)
    return seed, res, time.perf_counter() - t0


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CLIError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return max(1, os.cpu_count() or 1)


def run_trials(ds: Dataset, spec: RunSpec, workers: int | None = None):
    """All trials of ``spec`` as (seed, Factorization, seconds), in seed order."""
    seeds = [spec.seed + t for t in range(spec.trials)]
    jobs = [(ds, spec, s) for s in seeds]
    n = min(worker_count(workers), len(jobs))
    if n <= 1:
        return [_trial(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n, mp_context=get_context("fork")) as ex:
        return list(ex.map(_trial, jobs))


def load_reference() -> dict:
    ref = resources.files("bmfkit") / "data" / "reference_values.json"
    data = json.loads(ref.read_text())["values"]
    return {(d, int(r)): v for d, ranks in data.items() for r, v in ranks.items()}


def load_presets() -> dict:
    ref = resources.files("bmfkit") / "data" / "presets.json"
    return json.loads(ref.read_text())


def report_rows(ds: Dataset, spec: RunSpec, results) -> list[dict]:
    ref = load_reference().get((ds.name, spec.r))
    rows = []
    for seed, res, secs in results:
        try:
            rel = f"{100 * relative_error(ds.X, ds.M, res.W, res.H):.2f}"
        except ValueError:
            rel = ""
        rows.append({"dataset": ds.name, "method": spec.method, "r": spec.r, "seed": seed,
                     "time_s": f"{secs:.2f}", "error": res.error,
                     "error_diff_vs_reference": "" if ref is None else res.error - ref,
                     "relative_error_pct": rel})
    return rows


def print_table(rows: list[dict], out=sys.stdout) -> None:
    cols = ["seed", "error", "error_diff_vs_reference", "relative_error_pct", "time_s"]
    heads = ["seed", "error", "diff", "rel_err_%", "time_s"]
    widths = [max(len(h), *(len(str(r[c])) for r in rows)) for h, c in zip(heads, cols)]
    print("  ".join(h.rjust(w) for h, w in zip(heads, widths)), file=out)
    for r in rows:
        print("  ".join(str(r[c]).rjust(w) for c, w in zip(cols, widths)), file=out)


def save_factors(res: Factorization, directory, stem: str = "") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_factor(res.W, d / f"{stem}W.txt")
    save_factor(res.H, d / f"{stem}H.txt")


def _add_run_args(p: argparse.ArgumentParser, default_method: str = "ms-ao") -> None:
    p.add_argument("dataset", help="dataset file, or the name of a bundled dataset")
    p.add_argument("-r", "--rank", type=int, default=2, dest="r")
    p.add_argument("--method", default=default_method, choices=METHODS)
    p.add_argument("--preset", help="named settings from the bundled presets file")
    p.add_argument("--budget", type=float, help="wall-clock seconds per trial (soft)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("exact", "greedy", "greedy_ls"))
    p.add_argument("--init", choices=("alternate", "nmf", "random_columns", "random_rows"))
    p.add_argument("--greedy-init", choices=("random", "alternate"))
    p.add_argument("--max-runs", type=int, help="stop gathering after this many AO runs")
    p.add_argument("--maxiter", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--children", type=int)
    p.add_argument("--leaf-solutions", type=int)
    p.add_argument("--calls", type=int)
    p.add_argument("--per-call-budget", type=float)
    p.add_argument("--t-max", type=int)
    p.add_argument("--n-trials", type=int)
    p.add_argument("--q-max", type=int)
    p.add_argument("--ls-depth", type=int, help="local search budget T (default r)")
    p.add_argument("--exact-rank-limit", type=int)
    p.add_argument("--exact-combine-limit", type=int)
    p.add_argument("--workers", type=int, help=f"parallel trials (default ${WORKERS_ENV} or CPU count)")
    p.add_argument("--csv", help="write the per-trial report as CSV")
    p.add_argument("--save-factors", help="directory for W.txt and H.txt of the best trial")


def spec_from_args(args) -> RunSpec:
    spec = RunSpec(dataset=args.dataset, method=args.method, r=args.r, seed=args.seed)
    if args.preset:
        presets = load_presets()
        if args.preset not in presets:
            raise CLIError(f"unknown preset {args.preset!r}; have {', '.join(presets)}")
        spec = replace(spec, **presets[args.preset].get(args.method, {}))
    fields = ["budget", "trials", "backend", "init", "greedy_init", "max_runs", "maxiter",
              "depth", "children", "leaf_solutions", "calls", "per_call_budget", "t_max",
              "n_trials", "q_max", "ls_depth", "exact_rank_limit", "exact_combine_limit"]
    given = {f: getattr(args, f) for f in fields if getattr(args, f, None) is not None}
    spec = replace(spec, **given)
    if "backend" in given:
        spec.extra["backend"] = given["backend"]
    spec.validate()
    return spec


def _load(name: str) -> Dataset:
    try:
        return resolve_dataset(name)
    except FormatError as exc:
        raise CLIError(str(exc)) from None


def cmd_factorize(args) -> int:
    spec = spec_from_args(args)
    ds = _load(spec.dataset)
    results = run_trials(ds, spec, args.workers)
    rows = report_rows(ds, spec, results)
    best = min(results, key=lambda t: t[1].error)
    print(f"{ds.name} {ds.X.m}x{ds.X.n}  method={spec.method}  r={spec.r}  "
          f"budget={spec.budget:g}s  trials={spec.trials}")
    print_table(rows)
    print(f"best error {best[1].error} (seed {best[0]})")
    if args.csv:
        write_report(rows, args.csv)
    if args.save_factors:
        save_factors(best[1], args.save_factors)
    return 0


def cmd_bench_kernel(args) -> int:
    if args.trials < 1:
        raise CLIError(f"--trials must be positive, got {args.trials}")
    rng = np.random.default_rng(args.seed)
    # compile (or load) both kernels before timing anything
    warm = np.ones((2, 2), dtype=np.uint8)
    bool_product(BoolMatrix.from_dense(warm), BoolMatrix.from_dense(warm))
    naive_product(warm, warm)
    rows = []
    for n in args.n:
        if n < 1:
            raise CLIError(f"matrix size must be positive, got {n}")
        packed_t = naive_t = 0.0
        identical = True
        for _ in range(args.trials):
            # entries rounded from uniform [0, 1]
            A = np.rint(rng.random((n, n))).astype(np.uint8)
            B = np.rint(rng.random((n, n))).astype(np.uint8)
            Ap, Bp = BoolMatrix.from_dense(A), BoolMatrix.from_dense(B)
            t = time.perf_counter()
            P = bool_product(Ap, Bp)
            packed_t += time.perf_counter() - t
            t = time.perf_counter()
            Q = naive_product(A, B)
            naive_t += time.perf_counter() - t
            identical &= bool(np.array_equal(P.to_dense(), Q))
        packed_t /= args.trials
        naive_t /= args.trials
        rows.append({"n": n, "packed_s": packed_t, "naive_s": naive_t,
                     "speedup": naive_t / packed_t if packed_t > 0 else float("inf"),
                     "identical": identical})
    print(f"{'n':>6}  {'packed_s':>10}  {'naive_s':>10}  {'speedup':>8}  identical")
    for r in rows:
        print(f"{r['n']:>6}  {r['packed_s']:>10.5f}  {r['naive_s']:>10.5f}  "
              f"{r['speedup']:>8.2f}  {r['identical']}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("n,packed_s,naive_s,speedup,identical\n")
            for r in rows:
                fh.write(f"{r['n']},{r['packed_s']:.6f},{r['naive_s']:.6f},"
                         f"{r['speedup']:.3f},{r['identical']}\n")
    return 0 if all(r["identical"] for r in rows) else 1


def topics(ds: Dataset, spec: RunSpec, k: int, do_diversify: bool):
    """Factorize, optionally diversify, and return (W, H, per-topic words, relative error)."""
    if ds.row_labels is None:
        raise CLIError(f"dataset {ds.name!r} has no row labels; topics need word labels")
    prob = Problem(ds.X, ds.M)
    if do_diversify:
        if spec.method != "greedy-comb":
            raise CLIError("--diversify works on greedy-comb results")
        params = spec.greedy_params()
        params.heur.seed = spec.seed
        pool = FactorPool(*prob.shape)
        res = greedy_comb(prob, None, spec.r, spec.budget, params, spec.seed, pool)
        sel = diversify(prob, res.H, res.W, pool, spec.r, spec.w_min, spec.ratio,
                        HeurCombParams(spec.t_max, spec.n_trials, spec.seed))
        W, H = pool.matrices(sel.indices, spec.r)
    else:
        res = run_method(ds, spec, spec.seed)
        W, H = res.W, res.H
    imp = topic_importance(prob.X, W, H)
    words = top_words(imp, k, ds.row_labels)
    return W, H, words, relative_error(ds.X, ds.M, W, H)


def cmd_topics(args) -> int:
    spec = spec_from_args(args)
    spec.w_min = args.w_min
    spec.ratio = args.ratio
    ds = _load(spec.dataset)
    _, H, words, rel = topics(ds, spec, args.k, args.diversify)
    for i, ws in enumerate(words):
        print(f"topic {i + 1} ({int(H.row_sums()[i])} docs): {', '.join(ws)}")
    print(f"relative error {100 * rel:.2f}%")
    return 0


def _pool_from_args(args, prob: Problem) -> FactorPool:
    pool = FactorPool(*prob.shape)
    for src, d in enumerate(args.factors or []):
        d = Path(d)
        try:
            W, H = load_factor(d / "W.txt"), load_factor(d / "H.txt")
        except FormatError as exc:
            raise CLIError(str(exc)) from None
        if W.m != prob.shape[0] or H.n != prob.shape[1] or W.n != H.m:
            raise CLIError(f"factors in {d} do not match the dataset shape {prob.shape}")
        pool.add_factorization(W, H, src)
    if args.pool:
        try:
            entries = json.loads(Path(args.pool).read_text())
        except (OSError, ValueError) as exc:
            raise CLIError(f"cannot read pool file {args.pool}: {exc}") from None
        from .bitcore import BitVec
        from .combine import RankOneFactor
        for e in entries["factors"]:
            w = BitVec.from_bits([int(c) for c in e["w"]])
            h = BitVec.from_bits([int(c) for c in e["h"]])
            if w.length != prob.shape[0] or h.length != prob.shape[1]:
                raise CLIError("pool factor does not match the dataset shape")
            pool.add(RankOneFactor(w, h, e.get("source", -1)))
    if len(pool) == 0:
        raise CLIError("empty pool; pass --factors DIR ... or --pool FILE")
    return pool


def cmd_combine(args) -> int:
    ds = _load(args.dataset)
    prob = Problem(ds.X, ds.M)
    pool = _pool_from_args(args, prob)
    r = args.r
    if len(pool) < r:
        raise CLIError(f"pool has only {len(pool)} distinct factors, fewer than r={r}")
    if args.exact or (not args.heuristic and len(pool) <= args.exact_combine_limit):
        sel = combine_exact(prob, None, pool, r, limit=max(args.exact_combine_limit, len(pool)))
    else:
        start = greedy_selection(prob, None, pool, r)
        sel = combine_heuristic(prob, None, pool, start,
                                HeurCombParams(args.t_max, args.n_trials, args.seed))
    out = {"dataset": ds.name, "r": r, "pool_size": len(pool), "indices": sel.indices,
           "error": sel.error}
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if args.save_factors:
        W, H = pool.matrices(sel.indices, r)
        save_factors(Factorization(W, H, selection_error(prob, pool, sel.indices)),
                     args.save_factors)
    return 0


def cmd_datasets(args) -> int:
    for name in builtin_names():
        ds = resolve_dataset(name)
        print(f"{name:8s} {ds.X.m:>5d} x {ds.X.n:<4d} ones={ds.X.ones_count():<6d} "
              f"missing={ds.n_missing}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmfkit", description="Boolean matrix factorization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factorize", help="run seeded trials of a method")
    _add_run_args(p)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("bench-kernel", help="packed vs byte-per-entry Boolean product")
    p.add_argument("--n", type=int, nargs="+", default=[64, 500, 1000, 2000])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench_kernel)

    p = sub.add_parser("topics", help="top words per topic")
    _add_run_args(p, default_method="greedy-comb")
    p.add_argument("-k", type=int, default=10, help="words per topic")
    p.add_argument("--diversify", action="store_true")
    p.add_argument("--w-min", type=int, default=10)
    p.add_argument("--ratio", type=float, default=8.0)
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("combine", help="best r factors out of saved factorizations")
    p.add_argument("dataset")
    p.add_argument("-r", "--rank", type=int, required=True, dest="r")
    p.add_argument("--factors", nargs="+", help="directories holding W.txt and H.txt")
    p.add_argument("--pool", help="JSON file {\"factors\": [{\"w\": \"0101\", \"h\": \"110\"}]}")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true")
    mode.add_argument("--heuristic", action="store_true")
    p.add_argument("--exact-combine-limit", type=int, default=EXACT_COMBINE_LIMIT)
    p.add_argument("--t-max", type=int, default=10_000)
    p.add_argument("--n-trials", type=int, default=2_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the selection as JSON")
    p.add_argument("--save-factors")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("datasets", help="list bundled datasets")
    p.set_defaults(func=cmd_datasets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"bmfkit: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"bmfkit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

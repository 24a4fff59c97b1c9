"""Alternating optimization for Boolean matrix factorization.

``ao_bmf`` alternates column-wise BoolLS solves for H with row-wise solves
for W until the masked error stops decreasing.  After each H update, rows of
H that came back all-zero are re-seeded from the rows of the residual with
the most uncovered ones.  ``ms_ao`` restarts it from fresh initializations
until a wall-clock budget runs out and keeps the best result.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bitcore import BoolMatrix, DimensionError, bool_product, masked_sq_error
from .boolls import (EXACT_RANK_LIMIT, MAX_RANK, LocalSearchParams, solve_columns_exact,
                     solve_columns_greedy, words_to_matrix)

BACKENDS = ("exact", "greedy", "greedy_ls")
STRATEGIES = ("random_columns", "random_rows", "nmf", "alternate")


@dataclass
class Factorization:
    """Result of a factorization run.

    ``error_trace`` holds one masked error per accepted sweep; the bootstrap
    values used to start the loop are not stored.
    """

    W: BoolMatrix
    H: BoolMatrix
    error: int
    error_trace: list[int] = field(default_factory=list)
    iterations: int = 0
    method: str = "ao"
    seed: int | None = None
    runs: int = 1
    runtime_s: float = 0.0

    @property
    def rank(self) -> int:
        return self.W.n

    def transpose(self) -> "Factorization":
        return Factorization(W=self.H.transpose(), H=self.W.transpose(), error=self.error,
                             error_trace=list(self.error_trace), iterations=self.iterations,
                             method=self.method, seed=self.seed, runs=self.runs,
                             runtime_s=self.runtime_s)


@dataclass
class AOConfig:
    maxiter: int = 100
    backend: str = "exact"
    local_search: LocalSearchParams = field(default_factory=LocalSearchParams)
    exact_rank_limit: int = EXACT_RANK_LIMIT

    def __post_init__(self):
        if self.maxiter < 1:
            raise ValueError("maxiter must be at least 1")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")


@dataclass
class InitConfig:
    strategy: str = "alternate"
    nmf_iters: int = 200
    delta_low: float = 0.3
    delta_high: float = 0.7

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 <= self.delta_low <= self.delta_high:
            raise ValueError("need 0 <= delta_low <= delta_high")


class Problem:
    """Packed views of (X, M) reused across many AO runs."""

    def __init__(self, X: BoolMatrix, M: BoolMatrix | None = None):
        if M is None:
            M = BoolMatrix.ones(X.m, X.n)
        if M.shape != X.shape:
            raise DimensionError(f"mask shape {M.shape} != data shape {X.shape}")
        # zero out unobserved entries so the stored data never matters there
        self.X = X & M
        self.M = M
        self.complete = M.ones_count() == X.m * X.n
        self.x_rows, self.x_cols = self.X.rows, self.X.cols
        self.m_rows, self.m_cols = M.rows, M.cols
        self._t = None

    @property
    def shape(self):
        return self.X.shape

    def transpose(self) -> "Problem":
        if self._t is None:
            self._t = Problem(self.X.transpose(), self.M.transpose())
            self._t._t = self
        return self._t

    def error(self, W: BoolMatrix, H: BoolMatrix) -> int:
        return masked_sq_error(self.X, self.M, bool_product(W, H))


def _as_problem(X, M) -> Problem:
    return X if isinstance(X, Problem) else Problem(X, M)


def _check_rank(r: int) -> None:
    if not 1 <= r <= MAX_RANK:
        raise ValueError(f"rank must be in [1, {MAX_RANK}], got {r}")


def init_random_selection(X: BoolMatrix, r: int, axis: str = "columns",
                          rng: np.random.Generator | int | None = None,
                          M: BoolMatrix | None = None) -> BoolMatrix:
    """W = X(:, K) (axis='columns') or H = X(K, :) (axis='rows') for random K."""
    _check_rank(r)
    if M is not None and M.ones_count() != M.m * M.n:
        raise ValueError("random selection needs complete data; use the nmf strategy")
    rng = np.random.default_rng(rng)
    dense = X.to_dense()
    if axis == "columns":
        if r > X.n:
            raise ValueError(f"cannot pick {r} distinct columns out of {X.n}")
        idx = rng.choice(X.n, size=r, replace=False)
        return BoolMatrix.from_dense(dense[:, idx])
    if axis == "rows":
        if r > X.m:
            raise ValueError(f"cannot pick {r} distinct rows out of {X.m}")
        idx = rng.choice(X.m, size=r, replace=False)
        return BoolMatrix.from_dense(dense[idx, :])
    raise ValueError(f"axis must be 'columns' or 'rows', got {axis!r}")


def nmf(X: np.ndarray, M: np.ndarray, r: int, rng: np.random.Generator,
        iters: int = 200, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Mask-weighted multiplicative-update NMF on the Frobenius objective."""
    m, n = X.shape
    W = rng.uniform(0.0, 1.0, size=(m, r))
    H = rng.uniform(0.0, 1.0, size=(r, n))
    MX = M * X
    for _ in range(iters):
        W *= (MX @ H.T) / ((M * (W @ H)) @ H.T + eps)
        H *= (W.T @ MX) / (W.T @ (M * (W @ H)) + eps)
    return W, H


def init_nmf(X: BoolMatrix, M: BoolMatrix | None, r: int, cfg: InitConfig | None = None,
             rng: np.random.Generator | int | None = None,
             delta: float | None = None) -> tuple[BoolMatrix, BoolMatrix]:
    """Binary (W, H) from a thresholded, rescaled NMF.

    ``delta`` overrides the random threshold (used by tests).
    """
    _check_rank(r)
    cfg = cfg or InitConfig(strategy="nmf")
    rng = np.random.default_rng(rng)
    Xd = X.to_dense().astype(float)
    Md = np.ones_like(Xd) if M is None else M.to_dense().astype(float)
    W, H = nmf(Xd, Md, r, rng, cfg.nmf_iters)
    wmax = W.max(axis=0)
    hmax = H.max(axis=1)
    ok = (wmax > 0) & (hmax > 0)
    alpha = np.ones(r)
    alpha[ok] = np.sqrt(hmax[ok] / wmax[ok])
    W = W * alpha
    H = H / alpha[:, None]
    d = rng.uniform(cfg.delta_low, cfg.delta_high) if delta is None else delta
    # an exact zero stays zero even when the threshold is zero
    Wb = (W >= d) & (W > 0)
    Hb = (H >= d) & (H > 0)
    return BoolMatrix.from_dense(Wb), BoolMatrix.from_dense(Hb)


def _solve(basis, r, targets, masks, cfg: AOConfig, rng, incumbents):
    if cfg.backend == "exact":
        hs, _ = solve_columns_exact(basis, r, targets, masks, rank_limit=cfg.exact_rank_limit)
        return hs
    ls = cfg.local_search if cfg.backend == "greedy_ls" else None
    hs, _ = solve_columns_greedy(basis, r, targets, masks, rng=rng,
                                 incumbents=incumbents, local_search=ls)
    return hs


def _sweep(prob: Problem, W: BoolMatrix, H_inc: BoolMatrix | None, cfg: AOConfig, rng):
    r = W.n
    inc = None if H_inc is None else H_inc.cols[:, 0]
    hs = _solve(W.cols, r, prob.x_cols, prob.m_cols, cfg, rng, inc)
    H = words_to_matrix(hs, r).transpose()

    # zero-row safety step
    zero = np.flatnonzero(H.row_sums() == 0)
    w_inc = W.rows[:, 0].copy()
    if zero.size:
        A = bool_product(W, H)
        resid = prob.m_rows & prob.x_rows & ~A.rows
        sums = np.bitwise_count(resid).sum(axis=1).astype(np.int64)
        top = np.argsort(-sums, kind="stable")[: zero.size]
        H.rows[zero] = resid[top]
        H._cols = None
        # incumbent rows of W lose the columns whose H rows were replaced
        drop = np.uint64(0)
        for k in zero:
            drop |= np.uint64(1) << np.uint64(k)
        w_inc &= ~drop

    ws = _solve(H.rows, r, prob.x_rows, prob.m_rows, cfg, rng, w_inc)
    W_new = words_to_matrix(ws, r)
    err = int(_kernels.masked_error(prob.x_rows, prob.m_rows,
                                    _kernels.bool_product(W_new.rows, r, H.rows)))
    return W_new, H, err


def ao_bmf(X: BoolMatrix | Problem, M: BoolMatrix | None = None, W0: BoolMatrix | None = None,
           cfg: AOConfig | None = None, rng: np.random.Generator | int | None = None,
           H0: BoolMatrix | None = None, seed: int | None = None) -> Factorization:
    """Alternating optimization from an initial W (or from H when only H0 is given).

    When both are given, W0 starts the sweep and H0 only serves as the
    incumbent for the greedy backend's no-worse guard.
    """
    prob = _as_problem(X, M)
    cfg = cfg or AOConfig()
    if W0 is None:
        if H0 is None:
            raise ValueError("need an initial W0 or H0")
        res = ao_bmf(prob.transpose(), None, H0.transpose(), cfg, rng, seed=seed)
        return res.transpose()
    m, n = prob.shape
    if W0.m != m:
        raise DimensionError(f"W0 has {W0.m} rows, data has {m}")
    _check_rank(W0.n)
    if H0 is not None and H0.shape != (W0.n, n):
        raise DimensionError(f"H0 shape {H0.shape} != {(W0.n, n)}")
    rng = np.random.default_rng(rng)
    t0 = time.perf_counter()

    W = W0.copy()
    H_inc = H0
    last = prob.X.ones_count() - 1  # e(1) bootstrap; e(0) = ||X||^2
    best = None
    trace = []
    it = 0
    while it < cfg.maxiter:
        W_new, H_new, err = _sweep(prob, W, H_inc, cfg, rng)
        it += 1
        improved = err < last
        if improved or best is None:
            best = (W_new, H_new, err)
            trace.append(err)
        if not improved:
            break
        last = err
        W, H_inc = W_new, H_new
    Wb, Hb, eb = best
    return Factorization(W=Wb, H=Hb, error=eb, error_trace=trace, iterations=it,
                         method=f"ao-{cfg.backend}", seed=seed,
                         runtime_s=time.perf_counter() - t0)


def _strategy_for(run: int, init: InitConfig, complete: bool) -> str:
    if not complete:
        return "nmf"
    if init.strategy != "alternate":
        return init.strategy
    # nmf, columns, nmf, rows, ...
    if run % 2 == 0:
        return "nmf"
    return "random_columns" if (run // 2) % 2 == 0 else "random_rows"


def initial_run(prob: Problem, r: int, strategy: str, cfg: AOConfig, init: InitConfig,
                rng: np.random.Generator) -> Factorization:
    """One AO run from a fresh initialization of the given strategy."""
    if strategy != "nmf" and not prob.complete:
        raise ValueError("only the nmf initialization is allowed with missing data")
    if strategy == "nmf":
        W0, _ = init_nmf(prob.X, prob.M, r, init, rng)
        return ao_bmf(prob, W0=W0, cfg=cfg, rng=rng)
    if strategy == "random_columns":
        return ao_bmf(prob, W0=init_random_selection(prob.X, r, "columns", rng), cfg=cfg, rng=rng)
    if strategy == "random_rows":
        return ao_bmf(prob, H0=init_random_selection(prob.X, r, "rows", rng), cfg=cfg, rng=rng)
    raise ValueError(f"unknown strategy {strategy!r}")


def multi_start(X, M, r: int, budget_s: float, cfg: AOConfig | None = None,
                init: InitConfig | None = None, seed: int | None = 0,
                max_runs: int | None = None, on_run=None) -> Factorization:
    """Run AO from fresh starts until the budget or ``max_runs`` is used up.

    ``on_run`` is called with every completed run.  At least one run always
    completes.  Ties keep the earliest run.
    """
    if budget_s <= 0:
        raise ValueError("budget must be positive")
    prob = _as_problem(X, M)
    cfg = cfg or AOConfig()
    init = init or InitConfig()
    if not prob.complete and init.strategy not in ("nmf", "alternate"):
        raise ValueError("only the nmf initialization is allowed with missing data")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    best = None
    runs = 0
    while True:
        res = initial_run(prob, r, _strategy_for(runs, init, prob.complete), cfg, init, rng)
        runs += 1
        if on_run is not None:
            on_run(res)
        if best is None or res.error < best.error:
            best = res
        if max_runs is not None and runs >= max_runs:
            break
        if time.perf_counter() - t0 >= budget_s:
            break
    best.runs = runs
    best.seed = seed
    best.runtime_s = time.perf_counter() - t0
    return best


def ms_ao(X, M, r: int, budget_s: float, cfg: AOConfig | None = None,
          init: InitConfig | None = None, seed: int | None = 0,
          max_runs: int | None = None) -> Factorization:
    """Multi-start AO: best of as many runs as fit in ``budget_s`` seconds."""
    res = multi_start(X, M, r, budget_s, cfg, init, seed, max_runs)
    res.method = "ms-ao"
    return res

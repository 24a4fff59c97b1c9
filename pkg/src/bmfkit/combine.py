"""Combining rank-one factors gathered from many factorization runs.

Every rank-r factorization contributes r rank-one factors w h^T to a pool.
Picking the best r of them is solved exactly by branch-and-bound when the
pool is small, and otherwise by random single-slot swaps accepted only on
strict improvement.  The orchestrators in this module wrap that step around
the gathering phases (multi-start AO, greedy AO, trees of both).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bitcore import BitVec, BoolMatrix, DimensionError, n_words
from .boolls import CapabilityError, LocalSearchParams
from .factorize import (AOConfig, Factorization, InitConfig, Problem, _as_problem, ao_bmf,
                        init_nmf, init_random_selection, multi_start)

EXACT_COMBINE_LIMIT = 25
ENUMERATION_CAP = 2_000_000
NODE_CAP = 50_000_000
FLAT_MEMORY_BYTES = 256 * 2**20
OUTER_CACHE_BITS = 2**24


@dataclass(eq=False)
class RankOneFactor:
    """Outer product w h^T of a column of W and the matching row of H."""

    w: BitVec
    h: BitVec
    source: int = -1
    _outer: BoolMatrix | None = field(default=None, repr=False)

    @property
    def empty(self) -> bool:
        return self.w.popcount() == 0 or self.h.popcount() == 0

    @property
    def key(self) -> bytes:
        # every empty product is the same matrix
        if self.empty:
            return b""
        return self.w.words.tobytes() + b"|" + self.h.words.tobytes()

    def outer(self) -> BoolMatrix:
        """The m x n outer product; cached when it is small."""
        if self._outer is not None:
            return self._outer
        m, n = self.w.length, self.h.length
        rows = np.zeros((m, n_words(n)), dtype=np.uint64)
        rows[self.w.to_array().astype(bool)] = self.h.words
        B = BoolMatrix(m, n, rows)
        if m * n <= OUTER_CACHE_BITS:
            self._outer = B
        return B


class FactorPool:
    """Deduplicated rank-one factors, stored as packed w columns and h rows."""

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n
        self.factors: list[RankOneFactor] = []
        self._index: dict[bytes, int] = {}
        self._w = np.zeros((0, n_words(m)), dtype=np.uint64)
        self._h = np.zeros((0, n_words(n)), dtype=np.uint64)
        self._dirty = False

    def __len__(self) -> int:
        return len(self.factors)

    def __getitem__(self, i: int) -> RankOneFactor:
        return self.factors[i]

    def add(self, f: RankOneFactor) -> int:
        """Insert ``f`` unless an identical product is present; return its index."""
        if f.w.length != self.m or f.h.length != self.n:
            raise DimensionError(f"factor is {f.w.length}x{f.h.length}, pool is {self.m}x{self.n}")
        key = f.key
        if key in self._index:
            return self._index[key]
        self._index[key] = len(self.factors)
        self.factors.append(f)
        self._dirty = True
        return len(self.factors) - 1

    def add_factorization(self, W: BoolMatrix, H: BoolMatrix, source: int = -1) -> list[int]:
        if W.m != self.m or H.n != self.n or W.n != H.m:
            raise DimensionError(f"factorization {W.shape} x {H.shape} does not fit the pool")
        return [self.add(RankOneFactor(W.col(k), H.row(k), source)) for k in range(W.n)]

    def index_of(self, f: RankOneFactor) -> int | None:
        return self._index.get(f.key)

    def remove(self, i: int) -> None:
        """Delete factor ``i``; later indices shift down by one."""
        del self.factors[i]
        self._index = {f.key: j for j, f in enumerate(self.factors)}
        self._dirty = True

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        """(w columns, h rows) as packed word arrays of shape (N, words)."""
        if self._dirty:
            self._w = np.stack([f.w.words for f in self.factors]) if self.factors else self._w[:0]
            self._h = np.stack([f.h.words for f in self.factors]) if self.factors else self._h[:0]
            self._dirty = False
        return self._w, self._h

    def matrices(self, indices, r: int | None = None) -> tuple[BoolMatrix, BoolMatrix]:
        """(W, H) built from the selected factors, zero-padded up to rank ``r``."""
        indices = list(indices)
        r = len(indices) if r is None else r
        wc = np.zeros((r, n_words(self.m)), dtype=np.uint64)
        hr = np.zeros((r, n_words(self.n)), dtype=np.uint64)
        for k, i in enumerate(indices):
            wc[k] = self.factors[i].w.words
            hr[k] = self.factors[i].h.words
        return BoolMatrix(r, self.m, wc).transpose(), BoolMatrix(r, self.n, hr)


@dataclass
class CombineSelection:
    """r distinct pool indices and the masked error of their union."""

    indices: list[int]
    error: int
    trace: list[int] = field(default_factory=list)


@dataclass
class HeurCombParams:
    """Budget of the swap heuristic: accepted improvements and consecutive failures."""

    T_max: int = 10_000
    n_trials: int = 2_000
    seed: int | None = 0

    def __post_init__(self):
        if self.T_max < 1 or self.n_trials < 1:
            raise ValueError("T_max and n_trials must be positive")


def selection_error(prob: Problem, pool: FactorPool, indices) -> int:
    w, h = pool.packed()
    idx = np.asarray(list(indices), dtype=np.int64)
    return int(_kernels.union_error(w, h, idx, prob.x_rows, prob.m_rows))


def _check_r(pool: FactorPool, r: int) -> None:
    if r < 1:
        raise ValueError("r must be positive")
    if len(pool) < r:
        raise ValueError(f"pool has {len(pool)} factors, fewer than r={r}")


def greedy_selection(X, M, pool: FactorPool, r: int) -> CombineSelection:
    """Add the factor that lowers the error most, r times (ties: lowest index)."""
    prob = _as_problem(X, M)
    _check_r(pool, r)
    chosen: list[int] = []
    err = None
    for _ in range(r):
        best = None
        for i in range(len(pool)):
            if i in chosen:
                continue
            e = selection_error(prob, pool, chosen + [i])
            if best is None or e < best[0]:
                best = (e, i)
        chosen.append(best[1])
        err = best[0]
    return CombineSelection(chosen, err)


def combine_exact(X, M, pool: FactorPool, r: int, limit: int = EXACT_COMBINE_LIMIT,
                  enumeration_cap: int = ENUMERATION_CAP, node_cap: int = NODE_CAP
                  ) -> CombineSelection:
    """Globally optimal choice of r pool factors by branch-and-bound."""
    prob = _as_problem(X, M)
    _check_r(pool, r)
    N = len(pool)
    if N > limit and math.comb(N, r) > enumeration_cap:
        raise CapabilityError(
            f"pool of {N} factors exceeds exact_combine_limit={limit}; use combine_heuristic")
    m, n = prob.shape
    L = m * n_words(n)
    if N * L * 8 > FLAT_MEMORY_BYTES:
        raise CapabilityError("pool too large to flatten for exact combining; "
                              "use combine_heuristic")
    start = greedy_selection(prob, None, pool, r)
    flat = np.stack([pool[i].outer().rows.reshape(-1) for i in range(N)])
    x = prob.x_rows.reshape(-1)
    mask = prob.m_rows.reshape(-1)
    # search the most useful factors first
    gain = (np.bitwise_count(flat & x & mask).sum(axis=1).astype(np.int64)
            - np.bitwise_count(flat & ~x & mask).sum(axis=1).astype(np.int64))
    order = np.argsort(-gain, kind="stable")
    pos, err, _, done = _kernels.combine_bnb(np.ascontiguousarray(flat[order]), x, mask, r,
                                             start.error, node_cap)
    if not done:
        raise CapabilityError("exact combine exceeded its node budget; use combine_heuristic")
    if len(pos) == 0:
        return CombineSelection(sorted(start.indices), start.error)
    return CombineSelection(sorted(int(order[p]) for p in pos), int(err))


def combine_heuristic(X, M, pool: FactorPool, start: CombineSelection,
                      params: HeurCombParams | None = None, slot: int | None = None,
                      deadline: float | None = None) -> CombineSelection:
    """Random swap search over selections.

    Each trial swaps an unused pool factor into a random slot (or into
    ``slot`` only) and keeps the swap iff the error strictly drops.  Stops
    after ``n_trials`` consecutive failures, ``T_max`` improvements, or when
    ``time.perf_counter()`` passes ``deadline``.
    """
    prob = _as_problem(X, M)
    params = params or HeurCombParams()
    sel = list(start.indices)
    r = len(sel)
    if len(set(sel)) != r or any(not 0 <= i < len(pool) for i in sel):
        raise ValueError("start selection must hold distinct valid pool indices")
    rng = np.random.default_rng(params.seed)
    cur = selection_error(prob, pool, sel)
    trace = [cur]
    in_sel = set(sel)
    unused = [i for i in range(len(pool)) if i not in in_sel]
    T, it = 1, 1
    while it <= params.n_trials and T <= params.T_max and unused:
        if deadline is not None and time.perf_counter() > deadline:
            break
        u = int(rng.integers(len(unused)))
        pos = slot if slot is not None else int(rng.integers(r))
        cand = sel.copy()
        cand[pos] = unused[u]
        e = selection_error(prob, pool, cand)
        if e < cur:
            unused[u] = sel[pos]
            sel, cur = cand, e
            trace.append(e)
            T += 1
            it = 1
        else:
            it += 1
    return CombineSelection(sel, cur, trace)


def _selection_of(pool: FactorPool, W: BoolMatrix, H: BoolMatrix, source=-1) -> list[int]:
    """Pool indices of a factorization's factors (inserting them if needed).

    Factors that coincide (duplicates or empty products) are kept once.
    """
    out = []
    for i in pool.add_factorization(W, H, source):
        if i not in out:
            out.append(i)
    return out


def _complete(pool: FactorPool, sel: list[int], r: int) -> list[int]:
    """Top up a short selection with the lowest unused indices."""
    sel = list(sel)
    for i in range(len(pool)):
        if len(sel) >= r:
            break
        if i not in sel:
            sel.append(i)
    return sel


def combine_pool(prob: Problem, pool: FactorPool, r: int, start: list[int] | None,
                 params: HeurCombParams | None = None, deadline: float | None = None,
                 exact_limit: int = EXACT_COMBINE_LIMIT) -> CombineSelection:
    """Exact combine when the pool is small, otherwise the swap heuristic."""
    if len(pool) <= r:
        idx = list(range(len(pool)))
        return CombineSelection(idx, selection_error(prob, pool, idx))
    if len(pool) <= exact_limit:
        try:
            return combine_exact(prob, None, pool, r, limit=exact_limit)
        except CapabilityError:
            pass
    if start is None:
        first = greedy_selection(prob, None, pool, r)
    else:
        idx = _complete(pool, start, r)
        first = CombineSelection(idx, selection_error(prob, pool, idx))
    return combine_heuristic(prob, None, pool, first, params, deadline=deadline)


def _rebuild(prob: Problem, pool: FactorPool, sel: CombineSelection, r: int) -> Factorization:
    W, H = pool.matrices(sel.indices, r)
    return Factorization(W=W, H=H, error=prob.error(W, H), error_trace=[sel.error])


def _polish(prob: Problem, f: Factorization, cfg: AOConfig, rng) -> Factorization:
    """One AO run started from ``f``; keeps ``f`` if AO does not improve it."""
    res = ao_bmf(prob, W0=f.W, H0=f.H, cfg=cfg, rng=rng)
    return res if res.error < f.error else f


def _finish(res: Factorization, method: str, seed, t0: float, runs: int) -> Factorization:
    res.method = method
    res.seed = seed
    res.runs = runs
    res.runtime_s = time.perf_counter() - t0
    return res


def ms_comb_ao(X, M, r: int, budget_s: float, cfg: AOConfig | None = None,
               init: InitConfig | None = None, seed: int | None = 0,
               max_runs: int | None = None, heur: HeurCombParams | None = None,
               exact_limit: int = EXACT_COMBINE_LIMIT) -> Factorization:
    """Gather AO runs for 3/4 of the budget, combine their factors, polish with AO."""
    if budget_s <= 0:
        raise ValueError("budget must be positive")
    prob = _as_problem(X, M)
    cfg = cfg or AOConfig()
    t0 = time.perf_counter()
    pool = FactorPool(*prob.shape)
    runs: list[Factorization] = []

    def collect(res):
        _selection_of(pool, res.W, res.H, len(runs))
        runs.append(res)

    best = multi_start(prob, None, r, 0.75 * budget_s, cfg, init, seed, max_runs, on_run=collect)
    start = _selection_of(pool, best.W, best.H)
    heur = heur or HeurCombParams(seed=seed)
    sel = combine_pool(prob, pool, r, start, heur, deadline=t0 + budget_s, exact_limit=exact_limit)
    res = _rebuild(prob, pool, sel, r)
    res = _polish(prob, res, cfg, np.random.default_rng(seed))
    if best.error < res.error:
        res = best
    return _finish(res, "ms-comb-ao", seed, t0, len(runs))


def tree_bmf(X, M, r: int, depth: int = 1, children: int = 2, leaf_solutions: int | None = None,
             budget_s: float = 30.0, cfg: AOConfig | None = None, init: InitConfig | None = None,
             seed: int | None = 0, heur: HeurCombParams | None = None,
             exact_limit: int = EXACT_COMBINE_LIMIT) -> Factorization:
    """Hierarchical combining.

    A node with budget T gives its children T/2 in total (split evenly) and
    spends the other half combining their factors and polishing with AO.
    Leaves run ``ms_comb_ao`` limited to ``leaf_solutions`` runs.
    """
    if depth < 1 or children < 1:
        raise ValueError("tree needs depth >= 1 and children >= 1")
    prob = _as_problem(X, M)
    cfg = cfg or AOConfig()
    t0 = time.perf_counter()
    ss = np.random.SeedSequence(seed)
    counter = [0]

    def node(level: int, budget: float, seq: np.random.SeedSequence) -> Factorization:
        if level == depth:
            s = int(seq.generate_state(1)[0])
            leaf = ms_comb_ao(prob, None, r, budget, cfg, init, s, leaf_solutions,
                              HeurCombParams(seed=s) if heur is None else heur, exact_limit)
            counter[0] += leaf.runs
            return leaf
        t_node = time.perf_counter()
        kids = [node(level + 1, budget / (2 * children), c) for c in seq.spawn(children)]
        pool = FactorPool(*prob.shape)
        best = min(kids, key=lambda f: f.error)
        for i, k in enumerate(kids):
            _selection_of(pool, k.W, k.H, i)
        start = _selection_of(pool, best.W, best.H)
        s = int(seq.generate_state(2)[1])
        h = HeurCombParams(seed=s) if heur is None else heur
        sel = combine_pool(prob, pool, r, start, h, deadline=t_node + budget, exact_limit=exact_limit)
        res = _polish(prob, _rebuild(prob, pool, sel, r), cfg, np.random.default_rng(s))
        return res if res.error <= best.error else best

    res = node(0, budget_s, ss)
    return _finish(res, "tree-bmf", seed, t0, counter[0])


@dataclass
class GreedyParams:
    """Settings of the greedy gather-and-combine methods.

    ``init`` is ``"random"`` (random columns, then random rows, alternating)
    or ``"alternate"`` (NMF interleaved with the random starts).  Missing
    data always uses NMF.
    """

    init: str = "random"
    local_search: LocalSearchParams = field(default_factory=LocalSearchParams)
    heur: HeurCombParams = field(default_factory=HeurCombParams)
    maxiter: int = 100
    max_runs: int | None = None
    nmf_iters: int = 200


def _greedy_run(prob: Problem, r: int, cfg: AOConfig, params: GreedyParams, run: int,
                rng) -> Factorization:
    if not prob.complete:
        W0, _ = init_nmf(prob.X, prob.M, r, InitConfig("nmf", params.nmf_iters), rng)
        return ao_bmf(prob, W0=W0, cfg=cfg, rng=rng)
    if params.init == "alternate":
        if run % 2 == 0:
            W0, _ = init_nmf(prob.X, prob.M, r, InitConfig("nmf", params.nmf_iters), rng)
            return ao_bmf(prob, W0=W0, cfg=cfg, rng=rng)
        run //= 2
    elif params.init != "random":
        raise ValueError(f"greedy init must be 'random' or 'alternate', got {params.init!r}")
    if run % 2 == 0:
        return ao_bmf(prob, W0=init_random_selection(prob.X, r, "columns", rng), cfg=cfg, rng=rng)
    return ao_bmf(prob, H0=init_random_selection(prob.X, r, "rows", rng), cfg=cfg, rng=rng)


def greedy_comb(X, M, r: int, budget_s: float, params: GreedyParams | None = None,
                seed: int | None = 0, pool: FactorPool | None = None) -> Factorization:
    """Gather greedy AO runs for the budget, then combine their factors.

    Complete data alternates random-column and random-row starts; with
    missing entries every start comes from the NMF initialization.  Pass
    ``pool`` to keep the gathered factors after the call.
    """
    if budget_s <= 0:
        raise ValueError("budget must be positive")
    prob = _as_problem(X, M)
    params = params or GreedyParams()
    cfg = AOConfig(maxiter=params.maxiter, backend="greedy_ls", local_search=params.local_search)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    pool = FactorPool(*prob.shape) if pool is None else pool
    best = None
    runs = 0
    while True:
        res = _greedy_run(prob, r, cfg, params, runs, rng)
        _selection_of(pool, res.W, res.H, runs)
        runs += 1
        if best is None or res.error < best.error:
            best = res
        if params.max_runs is not None and runs >= params.max_runs:
            break
        if time.perf_counter() - t0 >= budget_s:
            break
    start = _complete(pool, _selection_of(pool, best.W, best.H), r)
    heur = HeurCombParams(params.heur.T_max, params.heur.n_trials,
                          seed if params.heur.seed is None else params.heur.seed)
    if len(pool) <= r:
        res = best
    else:
        sel = combine_heuristic(prob, None, pool,
                                CombineSelection(start, selection_error(prob, pool, start)), heur)
        res = _rebuild(prob, pool, sel, r)
        if best.error < res.error:
            res = best
    return _finish(res, "greedy-comb", seed, t0, runs)


def greedy_tree_bmf(X, M, r: int, calls: int = 3, per_call_budget_s: float = 10.0,
                    params: GreedyParams | None = None, seed: int | None = 0) -> Factorization:
    """Several greedy_comb calls, then one more combine over all their factors."""
    if calls < 1:
        raise ValueError("calls must be at least 1")
    prob = _as_problem(X, M)
    params = params or GreedyParams()
    t0 = time.perf_counter()
    seeds = np.random.SeedSequence(seed).generate_state(calls)
    results = [greedy_comb(prob, None, r, per_call_budget_s, params, int(s)) for s in seeds]
    pool = FactorPool(*prob.shape)
    for i, f in enumerate(results):
        _selection_of(pool, f.W, f.H, i)
    best = min(results, key=lambda f: f.error)
    start = _complete(pool, _selection_of(pool, best.W, best.H), r)
    res = best
    if len(pool) > r:
        heur = HeurCombParams(params.heur.T_max, params.heur.n_trials, int(seeds[0]))
        sel = combine_heuristic(prob, None, pool,
                                CombineSelection(start, selection_error(prob, pool, start)), heur)
        cand = _rebuild(prob, pool, sel, r)
        if cand.error < best.error:
            res = cand
    return _finish(res, "greedy-tree", seed, t0, sum(f.runs for f in results))


def gram(H: BoolMatrix) -> np.ndarray:
    """G(i, j) = number of columns shared by rows i and j of H."""
    return _kernels.overlap_counts(H.rows, H.rows)


def diversify(X, H: BoolMatrix, W: BoolMatrix, pool: FactorPool, r: int | None = None,
              w_min: int = 10, ratio: float = 8.0, params: HeurCombParams | None = None,
              M: BoolMatrix | None = None) -> CombineSelection:
    """Evict under-supported or overlapping topics and re-fill their slots.

    A topic k (row k of H) is under-supported when it covers fewer than
    ``w_min`` documents, and topic j overlaps topic i when
    G(i, i) / G(i, j) < ``ratio``.  The offending factor leaves the pool and
    only its slot is re-selected with the swap heuristic.  ``pool`` is
    modified in place.
    """
    prob = _as_problem(X, M)
    params = params or HeurCombParams()
    sel = _selection_of(pool, W, H)
    r = W.n if r is None else r
    if len(sel) < r:
        sel = _complete(pool, sel, r)
    rng = np.random.default_rng(params.seed)
    while True:
        _, Hs = pool.matrices(sel)
        G = gram(Hs)
        diag = np.diag(G)
        evict = None
        small = np.flatnonzero(diag < w_min)
        if small.size:
            evict = int(small[0])
        else:
            for i in range(len(sel)):
                for j in range(len(sel)):
                    if i != j and G[i, j] > 0 and diag[i] / G[i, j] < ratio:
                        evict = j
                        break
                if evict is not None:
                    break
        if evict is None:
            break
        if len(pool) <= r:
            break
        gone = sel[evict]
        pool.remove(gone)
        sel = [i - (i > gone) for i in sel]
        in_sel = set(sel[:evict] + sel[evict + 1:])
        unused = [i for i in range(len(pool)) if i not in in_sel]
        sel[evict] = unused[int(rng.integers(len(unused)))]
        step = HeurCombParams(params.T_max, params.n_trials, int(rng.integers(2**31)))
        sel = combine_heuristic(prob, None, pool,
                                CombineSelection(sel, selection_error(prob, pool, sel)),
                                step, slot=evict).indices
    return CombineSelection(sel, selection_error(prob, pool, sel))

"""Boolean least squares: min_h || m * (x - W o h) ||^2 over binary h.

Three solvers share one instance type:

* ``solve_exact`` returns a global optimum.  Small ranks use a flat sweep
  over all 2^r candidates; larger ranks use depth-first branch-and-bound.
* ``solve_greedy`` flips coefficients one at a time while the error drops.
* ``local_search`` improves a starting point by random XOR perturbations of
  increasing weight, recursing with a smaller budget after each improvement.

The batch entry points (``solve_columns_*``) are what the factorization loop
uses; they solve many right-hand sides against one basis in a single
compiled call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bitcore import BitVec, BoolMatrix, DimensionError

MAX_RANK = 64
FLAT_SWEEP_LIMIT = 12
EXACT_RANK_LIMIT = 20


class CapabilityError(ValueError):
    """The requested solver cannot handle an instance of this size."""


def default_q_max(r: int) -> int:
    return max(2, math.ceil(math.log2(r))) if r > 1 else 2


@dataclass
class LocalSearchParams:
    """Search budget ``T`` (recursion depth) and largest perturbation weight.

    ``None`` means the defaults: ``T = r`` and ``q_max = max(2, ceil(log2 r))``.
    """

    depth: int | None = None
    q_max: int | None = None

    def resolve(self, r: int) -> tuple[int, int]:
        if r < 2:
            # no perturbation of weight >= 2 exists, so the search is a no-op
            return 0, 2
        depth = r if self.depth is None else self.depth
        q_max = default_q_max(r) if self.q_max is None else self.q_max
        if depth < 0:
            raise ValueError("depth must be non-negative")
        if q_max < 2:
            raise ValueError("q_max must be at least 2")
        if q_max > r:
            raise ValueError(f"q_max={q_max} exceeds rank {r}")
        return depth, q_max


@dataclass
class BoolLSInstance:
    """Basis W (m x r), target column x and observation mask (length m)."""

    W: BoolMatrix
    x: BitVec
    mask: BitVec | None = None

    def __post_init__(self):
        if self.x.length != self.W.m:
            raise DimensionError(f"target length {self.x.length} != basis rows {self.W.m}")
        if self.mask is None:
            self.mask = BitVec.from_bits(np.ones(self.W.m, dtype=np.uint8))
        elif self.mask.length != self.W.m:
            raise DimensionError(f"mask length {self.mask.length} != basis rows {self.W.m}")
        if self.W.n > MAX_RANK:
            raise CapabilityError(f"rank {self.W.n} exceeds the supported maximum {MAX_RANK}")

    @property
    def rank(self) -> int:
        return self.W.n


@dataclass
class BoolLSResult:
    h: BitVec
    cover: BitVec
    error: int


def h_to_word(h: BitVec) -> np.uint64:
    return np.uint64(h.words[0]) if h.length else np.uint64(0)


def word_to_h(word, r: int) -> BitVec:
    words = np.zeros(max(1, (r + 63) // 64) if r else 0, dtype=np.uint64)
    if r:
        words[0] = np.uint64(word)
    return BitVec(r, words)


def words_to_matrix(hs: np.ndarray, r: int) -> BoolMatrix:
    """Stack per-instance coefficient words into an (N x r) matrix."""
    return BoolMatrix(len(hs), r, np.asarray(hs, dtype=np.uint64).reshape(-1, 1))


def _result(inst: BoolLSInstance, word, err) -> BoolLSResult:
    r = inst.rank
    h = word_to_h(word, r)
    cover = np.zeros_like(inst.x.words)
    _kernels._cover_of(inst.W.cols, np.uint64(word), r, cover)
    return BoolLSResult(h=h, cover=BitVec(inst.W.m, cover), error=int(err))


def _one(inst: BoolLSInstance):
    return inst.x.words.reshape(1, -1), inst.mask.words.reshape(1, -1)


def solve_columns_exact(basis: np.ndarray, r: int, targets: np.ndarray,
                        masks: np.ndarray, method: str = "auto",
                        rank_limit: int = EXACT_RANK_LIMIT):
    """Exact solve for every row of ``targets`` against packed basis vectors.

    ``basis`` has shape (r, words); returns (coefficient words, errors).
    """
    if r > rank_limit:
        raise CapabilityError(
            f"exact solve at rank {r} exceeds exact_rank_limit={rank_limit}; "
            "use the greedy solver")
    if method == "auto":
        method = "flat" if r <= FLAT_SWEEP_LIMIT else "bnb"
    if method == "flat":
        return _kernels.exact_flat(basis, r, targets, masks)
    if method == "bnb":
        return _kernels.exact_bnb(basis, r, targets, masks)
    raise ValueError(f"unknown exact method {method!r}")


def solve_columns_greedy(basis, r, targets, masks, rng=None, incumbents=None,
                         local_search: LocalSearchParams | None = None):
    """Greedy solve (plus local search when ``local_search`` is given).

    When ``incumbents`` is given, an instance keeps its incumbent whenever
    the new vector would be worse.
    """
    nt = targets.shape[0]
    use_inc = incumbents is not None
    inc = (np.asarray(incumbents, dtype=np.uint64) if use_inc
           else np.zeros(nt, dtype=np.uint64))
    if local_search is not None:
        depth, q_max = local_search.resolve(r)
        if rng is None:
            raise ValueError("local search needs a random generator")
        seeds = rng.integers(0, 2**31 - 1, size=nt, dtype=np.int64)
    else:
        depth, q_max = 0, 2
        seeds = np.zeros(nt, dtype=np.int64)
    return _kernels.greedy_ls_batch(basis, r, targets, masks, inc, use_inc,
                                    depth, q_max, seeds, local_search is not None)


def solve_exact(inst: BoolLSInstance, method: str = "auto",
                rank_limit: int = EXACT_RANK_LIMIT) -> BoolLSResult:
    """Globally optimal h; ties go to fewer ones, then lexicographic order."""
    x, m = _one(inst)
    hs, errs = solve_columns_exact(inst.W.cols, inst.rank, x, m, method, rank_limit)
    return _result(inst, hs[0], errs[0])


def solve_greedy(inst: BoolLSInstance) -> BoolLSResult:
    """Start from h = 0 and add the best coefficient while the error drops."""
    x, m = _one(inst)
    trace = np.zeros(inst.rank + 1, dtype=np.int64)
    h, err, _ = _kernels.greedy_one(inst.W.cols, inst.rank, x[0], m[0], trace)
    return _result(inst, h, err)


def greedy_trace(inst: BoolLSInstance) -> list[int]:
    """Errors after each accepted greedy flip, starting from h = 0."""
    x, m = _one(inst)
    trace = np.zeros(inst.rank + 1, dtype=np.int64)
    _, _, flips = _kernels.greedy_one(inst.W.cols, inst.rank, x[0], m[0], trace)
    start = int(np.bitwise_count(x[0] & m[0]).sum())
    return [start] + [int(e) for e in trace[:flips]]


def local_search(inst: BoolLSInstance, start: BitVec, params: LocalSearchParams | None = None,
                 rng: np.random.Generator | int | None = None) -> BoolLSResult:
    """Improve ``start`` by XOR perturbations; never returns a worse vector."""
    if start.length != inst.rank:
        raise DimensionError(f"start has length {start.length}, rank is {inst.rank}")
    depth, q_max = (params or LocalSearchParams()).resolve(inst.rank)
    rng = np.random.default_rng(rng)
    x, m = _one(inst)
    seeds = rng.integers(0, 2**31 - 1, size=1, dtype=np.int64)
    starts = np.array([h_to_word(start)], dtype=np.uint64)
    hs, errs = _kernels.local_search_batch(inst.W.cols, inst.rank, x, m, starts,
                                           depth, q_max, seeds)
    return _result(inst, hs[0], errs[0])


def solve_greedy_ls(inst: BoolLSInstance, params: LocalSearchParams | None = None,
                    rng: np.random.Generator | int | None = None) -> BoolLSResult:
    """Greedy solution followed by local search."""
    g = solve_greedy(inst)
    return local_search(inst, g.h, params, rng)

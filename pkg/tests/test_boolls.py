import numpy as np
import pytest
from hypothesis import given, strategies as st

from bmfkit.bitcore import BitVec, BoolMatrix, DimensionError
from bmfkit.boolls import (BoolLSInstance, CapabilityError, LocalSearchParams, default_q_max,
                           greedy_trace, local_search, solve_exact, solve_greedy, solve_greedy_ls)

import oracles
from conftest import random_bits


def instance(W, x, mask=None):
    W = np.asarray(W, dtype=np.uint8)
    return BoolLSInstance(BoolMatrix.from_dense(W), BitVec.from_bits(x),
                          None if mask is None else BitVec.from_bits(mask))


def counterexample():
    W = np.array([[1, 1, 1, 1, 1, 0, 0], [1, 1, 1, 0, 0, 1, 1]]).T
    return instance(W, [0, 0, 0, 1, 1, 1, 1])


def random_instance(rng, m, r, masked=True):
    W = random_bits(rng, (m, r), 0.4)
    x = random_bits(rng, m)
    mask = random_bits(rng, m, 0.8) if masked else np.ones(m, dtype=np.uint8)
    return W, x, mask


def check_result(inst, res):
    W = inst.W.to_dense().astype(np.int64)
    h = res.h.to_array().astype(np.int64)
    cover = np.minimum(1, W @ h)
    assert np.array_equal(res.cover.to_array(), cover)
    x, m = inst.x.to_array(), inst.mask.to_array()
    assert res.error == int((m * (x != cover)).sum())


def test_counterexample_exact_vs_greedy():
    inst = counterexample()
    ex = solve_exact(inst)
    assert ex.error == 3 and ex.h.to_array().tolist() == [1, 1]
    gr = solve_greedy(inst)
    assert gr.error == 4 and gr.h.to_array().tolist() == [0, 0]
    assert greedy_trace(inst) == [4]


def test_counterexample_local_search_reaches_optimum():
    inst = counterexample()
    res = local_search(inst, BitVec(2), LocalSearchParams(depth=5, q_max=2), rng=0)
    assert res.error == 3 and res.h.to_array().tolist() == [1, 1]


def test_counterexample_seed_sweep():
    inst = counterexample()
    errors = [solve_greedy_ls(inst, rng=s).error for s in range(100)]
    assert 3 in errors
    assert all(e <= 4 for e in errors)


def test_trivial_cases():
    W = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
    zero = solve_exact(instance(W, [0, 0, 0, 0]))
    assert zero.error == 0 and zero.h.popcount() == 0
    single = instance(W, [0, 0, 1, 1])
    for res in (solve_exact(single), solve_greedy(single)):
        assert res.error == 0 and res.h.to_array().tolist() == [0, 1]


def test_fully_masked_gives_zero():
    rng = np.random.default_rng(3)
    W, x, _ = random_instance(rng, 10, 5)
    res = solve_greedy_ls(instance(W, x, np.zeros(10)), rng=1)
    assert res.error == 0 and res.h.popcount() == 0


def test_exact_tie_break_prefers_fewer_ones():
    # columns 0 and 1 both cover x exactly; [0,1,0] < [1,0,0] as sequences
    W = np.array([[1, 1, 1], [1, 1, 1], [0, 0, 0]])
    res = solve_exact(instance(W, [1, 1, 0]))
    assert res.error == 0
    assert res.h.to_array().tolist() == [0, 0, 1]
    W = np.array([[1, 1, 0], [1, 0, 1], [0, 0, 0]])
    assert solve_exact(instance(W, [1, 1, 0])).h.to_array().tolist() == [1, 0, 0]


def test_exact_matches_brute_force_m12_r6():
    rng = np.random.default_rng(2024)
    for _ in range(30):
        W, x, mask = random_instance(rng, 12, 6)
        inst = instance(W, x, mask)
        res = solve_exact(inst)
        assert res.error == oracles.boolls_min(W, x, mask)
        check_result(inst, res)


def test_flat_and_bnb_agree():
    rng = np.random.default_rng(5)
    for _ in range(40):
        r = int(rng.integers(1, 11))
        W, x, mask = random_instance(rng, 30, r)
        inst = instance(W, x, mask)
        a, b = solve_exact(inst, "flat"), solve_exact(inst, "bnb")
        assert a.error == b.error
        assert a.h == b.h


def test_bnb_above_flat_limit():
    rng = np.random.default_rng(8)
    for _ in range(5):
        W, x, mask = random_instance(rng, 40, 14)
        assert solve_exact(instance(W, x, mask)).error == oracles.boolls_min(W, x, mask)


def test_rank_limit_raises_capability_error():
    rng = np.random.default_rng(0)
    W, x, _ = random_instance(rng, 10, 21, masked=False)
    with pytest.raises(CapabilityError):
        solve_exact(instance(W, x))
    with pytest.raises(CapabilityError):
        solve_exact(instance(W[:, :5], x), rank_limit=4)


def test_dimension_checks():
    with pytest.raises(DimensionError):
        instance(np.ones((3, 2)), [1, 0])
    with pytest.raises(DimensionError):
        instance(np.ones((3, 2)), [1, 0, 1], [1, 1])


def test_local_search_params():
    assert LocalSearchParams().resolve(1) == (0, 2)
    assert LocalSearchParams().resolve(8) == (8, 3)
    assert default_q_max(2) == 2 and default_q_max(10) == 4
    with pytest.raises(ValueError):
        LocalSearchParams(q_max=5).resolve(4)
    with pytest.raises(ValueError):
        LocalSearchParams(q_max=1).resolve(4)


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 14))
def test_exact_optimality_property(seed, r, m):
    rng = np.random.default_rng(seed)
    W, x, mask = random_instance(rng, m, r)
    inst = instance(W, x, mask)
    res = solve_exact(inst)
    assert res.error == oracles.boolls_min(W, x, mask)
    check_result(inst, res)


@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_greedy_trace_strictly_decreasing(seed, r):
    rng = np.random.default_rng(seed)
    W, x, mask = random_instance(rng, 25, r)
    inst = instance(W, x, mask)
    trace = greedy_trace(inst)
    assert trace[0] == int((x & mask).sum())
    assert len(trace) - 1 <= r
    assert all(b < a for a, b in zip(trace, trace[1:]))
    res = solve_greedy(inst)
    assert res.error == trace[-1]
    check_result(inst, res)


@given(st.integers(0, 2**32 - 1))
def test_local_search_sandwich(seed):
    rng = np.random.default_rng(seed)
    W, x, mask = random_instance(rng, 12, 6)
    inst = instance(W, x, mask)
    g = solve_greedy(inst)
    ls = local_search(inst, g.h, rng=seed)
    assert solve_exact(inst).error <= ls.error <= g.error
    check_result(inst, ls)


def test_local_search_keeps_global_optimum():
    rng = np.random.default_rng(77)
    for s in range(20):
        W, x, mask = random_instance(rng, 12, 6)
        inst = instance(W, x, mask)
        opt = solve_exact(inst)
        assert local_search(inst, opt.h, rng=s).error == opt.error


def test_rank_one_greedy_is_optimal():
    rng = np.random.default_rng(9)
    for s in range(30):
        W, x, mask = random_instance(rng, 15, 1)
        inst = instance(W, x, mask)
        ex = solve_exact(inst)
        for res in (solve_greedy(inst), solve_greedy_ls(inst, rng=s)):
            assert res.error == ex.error and res.h == ex.h


@given(st.integers(0, 2**32 - 1))
def test_masked_rows_do_not_matter(seed):
    rng = np.random.default_rng(seed)
    W, x, mask = random_instance(rng, 16, 6)
    flipped = np.where(mask == 1, x, 1 - x)
    for solve in (solve_exact, solve_greedy, lambda i: solve_greedy_ls(i, rng=seed)):
        a, b = solve(instance(W, x, mask)), solve(instance(W, flipped, mask))
        assert a.error == b.error and a.h == b.h and a.cover == b.cover

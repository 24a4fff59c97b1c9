"""Compiled kernels over bit-packed uint64 words.

All kernels take row-major word arrays: a matrix with ``m`` rows and ``n``
columns is stored as an ``(m, ceil(n / 64))`` uint64 array where bit ``b`` of
word ``w`` holds column ``64 * w + b``.  Padding bits are always zero.

Rank-``r`` coefficient vectors (``r <= 64``) are passed around as single
uint64 values with bit ``k`` holding coefficient ``k``.
"""

import numpy as np
from numba import njit

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)


@njit(cache=True, inline="always")
def popcount(x):
    x = x - ((x >> _ONE) & _M1)
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return np.int64((x * _H01) >> np.uint64(56))


@njit(cache=True)
def bool_product(w_rows, r, h_rows):
    """OR together the rows of H selected by each row of W."""
    m = w_rows.shape[0]
    nw = h_rows.shape[1]
    out = np.zeros((m, nw), dtype=np.uint64)
    for i in range(m):
        for k in range(r):
            if (w_rows[i, k >> 6] >> np.uint64(k & 63)) & _ONE:
                for t in range(nw):
                    out[i, t] |= h_rows[k, t]
    return out


@njit(cache=True)
def naive_byte_product(w, h):
    """Reference product on one-byte-per-entry matrices.

    Same row-OR loop order as the packed kernel, but each entry is a byte and
    there is no early exit, so the only difference is the storage.
    """
    m, r = w.shape
    n = h.shape[1]
    out = np.zeros((m, n), dtype=np.uint8)
    for i in range(m):
        for k in range(r):
            wik = w[i, k]
            for j in range(n):
                out[i, j] |= wik & h[k, j]
    return out


@njit(cache=True)
def _error_of_cover(cover, x, mask):
    e = 0
    for t in range(x.shape[0]):
        e += popcount(mask[t] & (x[t] ^ cover[t]))
    return e


@njit(cache=True)
def _cover_of(basis, h, r, out):
    out[:] = 0
    for k in range(r):
        if (h >> np.uint64(k)) & _ONE:
            for t in range(out.shape[0]):
                out[t] |= basis[k, t]


@njit(cache=True)
def _bitrev(h, r):
    out = _ZERO
    for k in range(r):
        if (h >> np.uint64(k)) & _ONE:
            out |= _ONE << np.uint64(r - 1 - k)
    return out


@njit(cache=True)
def _better(err, h, best_err, best_h, r):
    """Tie-break: lower error, then fewer ones, then lexicographically smaller."""
    if err != best_err:
        return err < best_err
    pa = popcount(h)
    pb = popcount(best_h)
    if pa != pb:
        return pa < pb
    return _bitrev(h, r) < _bitrev(best_h, r)


@njit(cache=True)
def exact_flat(basis, r, targets, masks):
    """Exhaustive 2^r sweep for every target; returns (h, err) arrays."""
    nt, nw = targets.shape
    ns = 1 << r
    covers = np.zeros((ns, nw), dtype=np.uint64)
    for s in range(1, ns):
        low = s & (-s)
        k = 0
        while (low >> k) != 1:
            k += 1
        prev = s ^ low
        for t in range(nw):
            covers[s, t] = covers[prev, t] | basis[k, t]
    ones = np.zeros(ns, dtype=np.int64)
    keys = np.zeros(ns, dtype=np.uint64)
    for s in range(ns):
        ones[s] = popcount(np.uint64(s))
        keys[s] = _bitrev(np.uint64(s), r)
    hs = np.zeros(nt, dtype=np.uint64)
    errs = np.zeros(nt, dtype=np.int64)
    for j in range(nt):
        best = -1
        best_s = 0
        for s in range(ns):
            e = 0
            for t in range(nw):
                e += popcount(masks[j, t] & (targets[j, t] ^ covers[s, t]))
            if best < 0 or e < best or (e == best and (
                    ones[s] < ones[best_s]
                    or (ones[s] == ones[best_s] and keys[s] < keys[best_s]))):
                best = e
                best_s = s
        hs[j] = np.uint64(best_s)
        errs[j] = best
    return hs, errs


@njit(cache=True)
def _bnb_one(basis, r, x, mask, order, suffix):
    nw = x.shape[0]
    cover = np.zeros((r + 1, nw), dtype=np.uint64)
    hstack = np.zeros(r + 1, dtype=np.uint64)
    # branch state per depth: 0 = try include next, 1 = try exclude next, 2 = done
    state = np.zeros(r + 1, dtype=np.int64)
    best_err = np.int64(-1)
    best_h = _ZERO
    d = 0
    while d >= 0:
        if state[d] == 0:
            # first visit: bound, maybe leaf
            fp = 0
            unc = 0
            for t in range(nw):
                c = cover[d, t]
                fp += popcount(mask[t] & ~x[t] & c)
                unc += popcount(mask[t] & x[t] & ~c & ~suffix[d, t])
            if best_err >= 0 and fp + unc > best_err:
                d -= 1
                continue
            if d == r:
                if best_err < 0 or _better(fp + unc, hstack[d], best_err, best_h, r):
                    best_err = fp + unc
                    best_h = hstack[d]
                d -= 1
                continue
            state[d] = 1
            k = order[d]
            for t in range(nw):
                cover[d + 1, t] = cover[d, t] | basis[k, t]
            hstack[d + 1] = hstack[d] | (_ONE << np.uint64(k))
            state[d + 1] = 0
            d += 1
        elif state[d] == 1:
            state[d] = 2
            for t in range(nw):
                cover[d + 1, t] = cover[d, t]
            hstack[d + 1] = hstack[d]
            state[d + 1] = 0
            d += 1
        else:
            d -= 1
    return best_h, best_err


@njit(cache=True)
def exact_bnb(basis, r, targets, masks):
    """Depth-first branch-and-bound, one target at a time."""
    nt, nw = targets.shape
    hs = np.zeros(nt, dtype=np.uint64)
    errs = np.zeros(nt, dtype=np.int64)
    gain = np.zeros(r, dtype=np.int64)
    suffix = np.zeros((r + 1, nw), dtype=np.uint64)
    for j in range(nt):
        x = targets[j]
        mask = masks[j]
        for k in range(r):
            g = 0
            for t in range(nw):
                g += popcount(mask[t] & x[t] & basis[k, t])
            gain[k] = g
        # most useful columns first; stable so ties keep index order
        order = np.argsort(-gain, kind="mergesort")
        suffix[r, :] = 0
        for d in range(r - 1, -1, -1):
            for t in range(nw):
                suffix[d, t] = suffix[d + 1, t] | basis[order[d], t]
        h, e = _bnb_one(basis, r, x, mask, order, suffix)
        hs[j] = h
        errs[j] = e
    return hs, errs


@njit(cache=True)
def greedy_one(basis, r, x, mask, trace):
    """Greedy forward selection; ``trace`` receives the error after each flip.

    Returns (h, err, number of flips).
    """
    nw = x.shape[0]
    cover = np.zeros(nw, dtype=np.uint64)
    h = _ZERO
    cur = 0
    for t in range(nw):
        cur += popcount(mask[t] & x[t])
    flips = 0
    while True:
        best_k = -1
        best_e = cur
        for k in range(r):
            if (h >> np.uint64(k)) & _ONE:
                continue
            e = 0
            for t in range(nw):
                e += popcount(mask[t] & (x[t] ^ (cover[t] | basis[k, t])))
            if e < best_e:
                best_e = e
                best_k = k
        if best_k < 0:
            break
        h |= _ONE << np.uint64(best_k)
        for t in range(nw):
            cover[t] |= basis[best_k, t]
        cur = best_e
        trace[flips] = cur
        flips += 1
    return h, cur, flips


@njit(cache=True)
def _err_h(basis, r, x, mask, h, scratch):
    _cover_of(basis, h, r, scratch)
    return _error_of_cover(scratch, x, mask)


@njit(cache=True)
def local_search_one(basis, r, x, mask, h0, depth, q_max):
    """Recursive XOR-perturbation search, unrolled onto an explicit stack.

    Each frame at budget ``T`` runs ``T * (q_max - 1)`` perturbation draws.
    An improving draw is accepted and a frame with budget ``T - 1`` starts
    from it; when that frame returns, the caller resumes its own loop from
    the improved vector.
    """
    nw = x.shape[0]
    scratch = np.zeros(nw, dtype=np.uint64)
    h = h0
    cur = _err_h(basis, r, x, mask, h, scratch)
    if depth <= 0 or r == 0:
        return h, cur
    f_budget = np.zeros(depth + 1, dtype=np.int64)
    f_i = np.zeros(depth + 1, dtype=np.int64)
    f_k = np.zeros(depth + 1, dtype=np.int64)
    top = 0
    f_budget[0] = depth
    f_i[0] = 0
    f_k[0] = 2
    while top >= 0:
        if f_i[top] >= f_budget[top]:
            top -= 1
            continue
        k = f_k[top]
        # advance the loop counters of this frame before any recursion
        if k >= q_max:
            f_k[top] = 2
            f_i[top] += 1
        else:
            f_k[top] = k + 1
        u = _ZERO
        while popcount(u) < k:
            u |= _ONE << np.uint64(np.random.randint(0, r))
        cand = h ^ u
        e = _err_h(basis, r, x, mask, cand, scratch)
        if e < cur:
            h = cand
            cur = e
            nb = f_budget[top] - 1
            if nb > 0:
                top += 1
                f_budget[top] = nb
                f_i[top] = 0
                f_k[top] = 2
    return h, cur


@njit(cache=True)
def greedy_ls_batch(basis, r, targets, masks, incumbents, use_incumbent,
                    depth, q_max, seeds, run_ls):
    """Greedy (optionally plus local search) for every target.

    With ``use_incumbent`` the incumbent coefficient vector is kept whenever
    the new one would have a larger error.
    """
    nt, nw = targets.shape
    hs = np.zeros(nt, dtype=np.uint64)
    errs = np.zeros(nt, dtype=np.int64)
    trace = np.zeros(r + 1, dtype=np.int64)
    scratch = np.zeros(nw, dtype=np.uint64)
    for j in range(nt):
        x = targets[j]
        mask = masks[j]
        h, e, _ = greedy_one(basis, r, x, mask, trace)
        if run_ls:
            np.random.seed(seeds[j])
            h, e = local_search_one(basis, r, x, mask, h, depth, q_max)
        if use_incumbent:
            ei = _err_h(basis, r, x, mask, incumbents[j], scratch)
            if e > ei:
                h = incumbents[j]
                e = ei
        hs[j] = h
        errs[j] = e
    return hs, errs


@njit(cache=True)
def local_search_batch(basis, r, targets, masks, starts, depth, q_max, seeds):
    nt = targets.shape[0]
    hs = np.zeros(nt, dtype=np.uint64)
    errs = np.zeros(nt, dtype=np.int64)
    for j in range(nt):
        np.random.seed(seeds[j])
        h, e = local_search_one(basis, r, targets[j], masks[j], starts[j],
                                depth, q_max)
        hs[j] = h
        errs[j] = e
    return hs, errs


@njit(cache=True)
def masked_error(x_rows, m_rows, a_rows):
    e = 0
    for i in range(x_rows.shape[0]):
        for t in range(x_rows.shape[1]):
            e += popcount(m_rows[i, t] & (x_rows[i, t] ^ a_rows[i, t]))
    return e


@njit(cache=True)
def error_parts(x_rows, m_rows, a_rows):
    """(observed ones left uncovered, observed zeros covered)."""
    miss = 0
    extra = 0
    for i in range(x_rows.shape[0]):
        for t in range(x_rows.shape[1]):
            mk = m_rows[i, t]
            miss += popcount(mk & x_rows[i, t] & ~a_rows[i, t])
            extra += popcount(mk & ~x_rows[i, t] & a_rows[i, t])
    return miss, extra


@njit(cache=True)
def overlap_counts(a_rows, b_rows):
    """out[i, k] = |row i of A AND row k of B|."""
    m = a_rows.shape[0]
    r = b_rows.shape[0]
    out = np.zeros((m, r), dtype=np.int64)
    for i in range(m):
        for k in range(r):
            c = 0
            for t in range(a_rows.shape[1]):
                c += popcount(a_rows[i, t] & b_rows[k, t])
            out[i, k] = c
    return out


@njit(cache=True)
def union_cover(w_cols, h_rows, idx, m):
    """Rows of the OR of outer products w_s h_s^T over the selected s."""
    nw = h_rows.shape[1]
    out = np.zeros((m, nw), dtype=np.uint64)
    for s in idx:
        for i in range(m):
            if (w_cols[s, i >> 6] >> np.uint64(i & 63)) & _ONE:
                for t in range(nw):
                    out[i, t] |= h_rows[s, t]
    return out


@njit(cache=True)
def union_error(w_cols, h_rows, idx, x_rows, m_rows):
    cover = union_cover(w_cols, h_rows, idx, x_rows.shape[0])
    return masked_error(x_rows, m_rows, cover)


@njit(cache=True)
def combine_bnb(flat, x, mask, r, best_err, node_cap):
    """Choose r of the N flattened factors minimising the masked error.

    ``flat`` holds each factor's outer product as one packed row, already in
    search order.  Returns (chosen positions, error, nodes, completed); the
    positions are empty when nothing beats ``best_err``.
    """
    N, L = flat.shape
    suffix = np.zeros((N + 1, L), dtype=np.uint64)
    for p in range(N - 1, -1, -1):
        for t in range(L):
            suffix[p, t] = suffix[p + 1, t] | flat[p, t]
    cover = np.zeros((N + 1, L), dtype=np.uint64)
    state = np.zeros(N + 1, dtype=np.int64)
    chosen = np.zeros(N + 1, dtype=np.int64)  # count chosen before depth p
    picked = np.zeros(N, dtype=np.bool_)
    best = np.zeros(r, dtype=np.int64)
    found = False
    nodes = 0
    p = 0
    while p >= 0:
        if state[p] == 0:
            nodes += 1
            if nodes > node_cap:
                return best, best_err, nodes, False
            c = chosen[p]
            fp = 0
            unc = 0
            for t in range(L):
                cv = cover[p, t]
                fp += popcount(mask[t] & ~x[t] & cv)
                unc += popcount(mask[t] & x[t] & ~cv & ~suffix[p, t])
            if fp + unc >= best_err:
                p -= 1
                continue
            if c == r:
                miss = 0
                for t in range(L):
                    miss += popcount(mask[t] & x[t] & ~cover[p, t])
                e = fp + miss
                if e < best_err:
                    best_err = e
                    k = 0
                    for q in range(p):
                        if picked[q]:
                            best[k] = q
                            k += 1
                    found = True
                p -= 1
                continue
            if p == N:
                p -= 1
                continue
            state[p] = 1
            picked[p] = True
            for t in range(L):
                cover[p + 1, t] = cover[p, t] | flat[p, t]
            chosen[p + 1] = c + 1
            state[p + 1] = 0
            p += 1
        elif state[p] == 1:
            state[p] = 2
            picked[p] = False
            # skipping p only makes sense if enough factors remain
            if r - chosen[p] <= N - p - 1:
                for t in range(L):
                    cover[p + 1, t] = cover[p, t]
                chosen[p + 1] = chosen[p]
                state[p + 1] = 0
                p += 1
        else:
            picked[p] = False
            p -= 1
    if not found:
        return best[:0], best_err, nodes, True
    return best, best_err, nodes, True

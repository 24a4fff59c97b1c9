"""Bit-packed Boolean vectors and matrices.

Entries are stored 64 per uint64 word, little-endian within a word, with all
padding bits held at zero.  ``BoolMatrix`` keeps its rows as the primary
storage and builds a packed column mirror lazily the first time a column view
is needed; any ``set`` call invalidates the mirror.
"""

from __future__ import annotations

import numpy as np

from . import _kernels

WORD_BITS = 64


class DimensionError(ValueError):
    """Operand shapes do not agree."""


def n_words(n: int) -> int:
    return (n + WORD_BITS - 1) // WORD_BITS


def pack_bits(a: np.ndarray) -> np.ndarray:
    """Pack a 2-D 0/1 array into an (m, n_words(n)) uint64 array."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {a.shape}")
    m, n = a.shape
    nw = n_words(n)
    padded = np.zeros((m, nw * WORD_BITS), dtype=np.uint8)
    padded[:, :n] = a != 0
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False).reshape(m, nw)


def unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns a uint8 array of shape (m, n)."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    m = words.shape[0]
    as_bytes = words.astype("<u8", copy=False).view(np.uint8).reshape(m, -1)
    return np.unpackbits(as_bytes, axis=1, count=n, bitorder="little")


def popcount(words: np.ndarray) -> int:
    return int(np.bitwise_count(words).sum())


class BitVec:
    """Fixed-length packed bit vector."""

    __slots__ = ("length", "words")

    def __init__(self, length: int, words: np.ndarray | None = None):
        if length < 0:
            raise ValueError("length must be non-negative")
        self.length = int(length)
        if words is None:
            words = np.zeros(n_words(length), dtype=np.uint64)
        else:
            words = np.asarray(words, dtype=np.uint64)
            if words.shape != (n_words(length),):
                raise DimensionError(
                    f"{words.shape[0]} words cannot hold a length-{length} vector")
        self.words = words

    @classmethod
    def from_bits(cls, bits) -> "BitVec":
        a = np.asarray(bits).reshape(1, -1)
        return cls(a.shape[1], pack_bits(a)[0])

    def to_array(self) -> np.ndarray:
        return unpack_bits(self.words.reshape(1, -1), self.length)[0]

    def _check(self, i: int) -> None:
        if not 0 <= i < self.length:
            raise IndexError(f"bit {i} out of range for length {self.length}")

    def get(self, i: int) -> int:
        self._check(i)
        return int((self.words[i >> 6] >> np.uint64(i & 63)) & np.uint64(1))

    def set(self, i: int, bit: int) -> None:
        self._check(i)
        b = np.uint64(1) << np.uint64(i & 63)
        if bit:
            self.words[i >> 6] |= b
        else:
            self.words[i >> 6] &= ~b

    def popcount(self) -> int:
        return popcount(self.words)

    def copy(self) -> "BitVec":
        return BitVec(self.length, self.words.copy())

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitVec):
            return NotImplemented
        return self.length == other.length and np.array_equal(self.words, other.words)

    def __hash__(self):
        return hash((self.length, self.words.tobytes()))

    def __repr__(self) -> str:
        return "BitVec(" + "".join(map(str, self.to_array())) + ")"


def _same_length(a: BitVec, b: BitVec) -> None:
    if a.length != b.length:
        raise DimensionError(f"lengths differ: {a.length} vs {b.length}")


def bool_or(a: BitVec, b: BitVec) -> BitVec:
    _same_length(a, b)
    return BitVec(a.length, a.words | b.words)


def bool_and(a: BitVec, b: BitVec) -> BitVec:
    _same_length(a, b)
    return BitVec(a.length, a.words & b.words)


def bool_xor(a: BitVec, b: BitVec) -> BitVec:
    _same_length(a, b)
    return BitVec(a.length, a.words ^ b.words)


class BoolMatrix:
    """Row-major packed Boolean matrix with a lazily built column mirror."""

    __slots__ = ("m", "n", "rows", "_cols")

    def __init__(self, m: int, n: int, rows: np.ndarray | None = None):
        if m < 0 or n < 0:
            raise ValueError("shape must be non-negative")
        self.m, self.n = int(m), int(n)
        if rows is None:
            rows = np.zeros((self.m, n_words(self.n)), dtype=np.uint64)
        else:
            rows = np.ascontiguousarray(rows, dtype=np.uint64)
            if rows.shape != (self.m, n_words(self.n)):
                raise DimensionError(
                    f"row words of shape {rows.shape} do not fit a {m}x{n} matrix")
        self.rows = rows
        self._cols = None

    @classmethod
    def zeros(cls, m: int, n: int) -> "BoolMatrix":
        return cls(m, n)

    @classmethod
    def ones(cls, m: int, n: int) -> "BoolMatrix":
        return cls.from_dense(np.ones((m, n), dtype=np.uint8))

    @classmethod
    def from_dense(cls, a) -> "BoolMatrix":
        a = np.asarray(a)
        if a.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got shape {a.shape}")
        return cls(a.shape[0], a.shape[1], pack_bits(a))

    @classmethod
    def from_rows(cls, vecs: list[BitVec]) -> "BoolMatrix":
        if not vecs:
            raise ValueError("need at least one row")
        n = vecs[0].length
        for v in vecs:
            if v.length != n:
                raise DimensionError("rows have different lengths")
        return cls(len(vecs), n, np.stack([v.words for v in vecs]))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @property
    def cols(self) -> np.ndarray:
        """Packed columns, shape (n, n_words(m)); built on first use."""
        if self._cols is None:
            self._cols = pack_bits(unpack_bits(self.rows, self.n).T)
        return self._cols

    def to_dense(self) -> np.ndarray:
        return unpack_bits(self.rows, self.n)

    def _check(self, i: int, j: int) -> None:
        if not (0 <= i < self.m and 0 <= j < self.n):
            raise IndexError(f"entry ({i}, {j}) out of range for shape {self.shape}")

    def get(self, i: int, j: int) -> int:
        self._check(i, j)
        return int((self.rows[i, j >> 6] >> np.uint64(j & 63)) & np.uint64(1))

    def set(self, i: int, j: int, bit: int) -> None:
        self._check(i, j)
        b = np.uint64(1) << np.uint64(j & 63)
        if bit:
            self.rows[i, j >> 6] |= b
        else:
            self.rows[i, j >> 6] &= ~b
        self._cols = None

    def row(self, i: int) -> BitVec:
        if not 0 <= i < self.m:
            raise IndexError(f"row {i} out of range for {self.m} rows")
        return BitVec(self.n, self.rows[i].copy())

    def col(self, j: int) -> BitVec:
        if not 0 <= j < self.n:
            raise IndexError(f"column {j} out of range for {self.n} columns")
        return BitVec(self.m, self.cols[j].copy())

    def transpose(self) -> "BoolMatrix":
        t = BoolMatrix(self.n, self.m, self.cols.copy())
        t._cols = self.rows.copy()
        return t

    @property
    def T(self) -> "BoolMatrix":
        return self.transpose()

    def ones_count(self) -> int:
        return popcount(self.rows)

    def row_sums(self) -> np.ndarray:
        return np.bitwise_count(self.rows).sum(axis=1).astype(np.int64)

    def copy(self) -> "BoolMatrix":
        out = BoolMatrix(self.m, self.n, self.rows.copy())
        if self._cols is not None:
            out._cols = self._cols.copy()
        return out

    def __and__(self, other: "BoolMatrix") -> "BoolMatrix":
        _same_shape(self, other)
        return BoolMatrix(self.m, self.n, self.rows & other.rows)

    def __or__(self, other: "BoolMatrix") -> "BoolMatrix":
        _same_shape(self, other)
        return BoolMatrix(self.m, self.n, self.rows | other.rows)

    def __xor__(self, other: "BoolMatrix") -> "BoolMatrix":
        _same_shape(self, other)
        return BoolMatrix(self.m, self.n, self.rows ^ other.rows)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoolMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash((self.m, self.n, self.rows.tobytes()))

    def __repr__(self) -> str:
        lines = ["".join(map(str, r)) for r in self.to_dense()[:20]]
        more = "\n..." if self.m > 20 else ""
        return f"BoolMatrix({self.m}x{self.n})\n" + "\n".join(lines) + more


def _same_shape(a: BoolMatrix, b: BoolMatrix) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")


def bool_product(W: BoolMatrix, H: BoolMatrix) -> BoolMatrix:
    """Boolean product min(1, W H) computed by OR-ing packed rows of H."""
    if W.n != H.m:
        raise DimensionError(f"cannot multiply {W.shape} by {H.shape}")
    rows = _kernels.bool_product(W.rows, W.n, H.rows)
    return BoolMatrix(W.m, H.n, rows)


def naive_product(W: np.ndarray, H: np.ndarray) -> np.ndarray:
    """One-byte-per-entry reference product used as a benchmark baseline."""
    W = np.ascontiguousarray(W, dtype=np.uint8)
    H = np.ascontiguousarray(H, dtype=np.uint8)
    if W.shape[1] != H.shape[0]:
        raise DimensionError(f"cannot multiply {W.shape} by {H.shape}")
    return _kernels.naive_byte_product(W, H)


def all_ones_mask(m: int, n: int) -> BoolMatrix:
    return BoolMatrix.ones(m, n)


def masked_sq_error(X: BoolMatrix, M: BoolMatrix | None, A: BoolMatrix) -> int:
    """Number of observed entries where X and A disagree."""
    _same_shape(X, A)
    if M is None:
        return popcount(X.rows ^ A.rows)
    _same_shape(X, M)
    return int(_kernels.masked_error(X.rows, M.rows, A.rows))


def masked_error_parts(X: BoolMatrix, M: BoolMatrix | None, A: BoolMatrix) -> tuple[int, int]:
    """Split the masked error into (uncovered ones, covered zeros)."""
    _same_shape(X, A)
    if M is None:
        M = all_ones_mask(X.m, X.n)
    _same_shape(X, M)
    miss, extra = _kernels.error_parts(X.rows, M.rows, A.rows)
    return int(miss), int(extra)

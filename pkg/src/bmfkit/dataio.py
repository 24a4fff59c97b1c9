"""Reading and writing binary datasets, binarization, topic importances, reports.

Dense format: one matrix row per line, whitespace-separated tokens ``0``,
``1`` or ``?`` (missing).  Lines starting with ``#`` are comments, except the
directives ``#! name <name>``, ``#! rows <tab-separated labels>`` and
``#! cols <tab-separated labels>``.

Triplet format: a header line ``m n``, then one ``i j`` line (1-based) per
one of X.  An optional ``# missing`` line starts a section of ``i j`` lines
listing unobserved entries.  The same ``#!`` directives are accepted before
the header.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .bitcore import BoolMatrix, DimensionError, bool_product, masked_sq_error
from . import _kernels


class FormatError(ValueError):
    """Malformed dataset file."""


@dataclass
class Dataset:
    name: str
    X: BoolMatrix
    M: BoolMatrix
    row_labels: list[str] | None = None
    col_labels: list[str] | None = None

    def __post_init__(self):
        if self.M.shape != self.X.shape:
            raise DimensionError(f"mask shape {self.M.shape} != data shape {self.X.shape}")
        if self.row_labels is not None and len(self.row_labels) != self.X.m:
            raise DimensionError(f"{len(self.row_labels)} row labels for {self.X.m} rows")
        if self.col_labels is not None and len(self.col_labels) != self.X.n:
            raise DimensionError(f"{len(self.col_labels)} column labels for {self.X.n} columns")

    @property
    def shape(self):
        return self.X.shape

    @property
    def n_missing(self) -> int:
        return self.X.m * self.X.n - self.M.ones_count()

    @classmethod
    def from_arrays(cls, X, M=None, name="data", row_labels=None, col_labels=None) -> "Dataset":
        X = np.asarray(X)
        M = np.ones_like(X) if M is None else np.asarray(M)
        if M.shape != X.shape:
            raise DimensionError(f"mask shape {M.shape} != data shape {X.shape}")
        Xb = BoolMatrix.from_dense((X != 0) & (M != 0))
        return cls(name, Xb, BoolMatrix.from_dense(M != 0), row_labels, col_labels)


def _directive(line: str, meta: dict) -> None:
    body = line[2:].strip("\n")
    key, _, rest = body.strip(" ").partition(" ")
    if key == "name":
        meta["name"] = rest.strip()
    elif key in ("rows", "cols"):
        meta[key] = rest.split("\t") if rest else []


def load_dense(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    meta = {"name": path.stem}
    x_rows, m_rows = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#!"):
            _directive(line, meta)
            continue
        if line.startswith("#") or not line.strip():
            continue
        toks = line.split()
        try:
            x_rows.append([{"0": 0, "1": 1, "?": 0}[t] for t in toks])
        except KeyError as exc:
            raise FormatError(f"{path}:{lineno}: invalid token {exc.args[0]!r}") from None
        m_rows.append([t != "?" for t in toks])
        if len(toks) != len(x_rows[0]):
            raise FormatError(f"{path}:{lineno}: expected {len(x_rows[0])} entries, got {len(toks)}")
    if not x_rows:
        raise FormatError(f"{path}: no data rows")
    X = np.array(x_rows, dtype=np.uint8)
    M = np.array(m_rows, dtype=np.uint8)
    return Dataset(meta["name"], BoolMatrix.from_dense(X), BoolMatrix.from_dense(M),
                   meta.get("rows"), meta.get("cols"))


def _header(ds: Dataset) -> list[str]:
    lines = [f"#! name {ds.name}"]
    if ds.row_labels is not None:
        lines.append("#! rows " + "\t".join(ds.row_labels))
    if ds.col_labels is not None:
        lines.append("#! cols " + "\t".join(ds.col_labels))
    return lines


def save_dense(ds: Dataset, path) -> None:
    X = ds.X.to_dense()
    M = ds.M.to_dense()
    tok = np.where(M == 1, X.astype(str), "?")
    lines = _header(ds) + [" ".join(row) for row in tok]
    Path(path).write_text("\n".join(lines) + "\n")


def load_triplets(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    meta = {"name": path.stem}
    shape = None
    ones, missing = set(), set()
    target = ones
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#!"):
            _directive(line, meta)
            continue
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if s[1:].strip().lower() == "missing":
                target = missing
            continue
        parts = s.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected two integers")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: expected two integers") from None
        if shape is None:
            if a < 0 or b < 0:
                raise FormatError(f"{path}:{lineno}: negative dimensions")
            shape = (a, b)
            continue
        if not (1 <= a <= shape[0] and 1 <= b <= shape[1]):
            raise FormatError(f"{path}:{lineno}: entry ({a}, {b}) outside {shape[0]}x{shape[1]}")
        if (a, b) in target:
            raise FormatError(f"{path}:{lineno}: duplicate entry ({a}, {b})")
        target.add((a, b))
    if shape is None:
        raise FormatError(f"{path}: missing 'm n' header")
    if ones & missing:
        raise FormatError(f"{path}: entries listed both as ones and as missing")
    X = np.zeros(shape, dtype=np.uint8)
    M = np.ones(shape, dtype=np.uint8)
    for i, j in ones:
        X[i - 1, j - 1] = 1
    for i, j in missing:
        M[i - 1, j - 1] = 0
    return Dataset(meta["name"], BoolMatrix.from_dense(X), BoolMatrix.from_dense(M),
                   meta.get("rows"), meta.get("cols"))


def save_triplets(ds: Dataset, path) -> None:
    X = ds.X.to_dense()
    M = ds.M.to_dense()
    lines = _header(ds) + [f"{ds.X.m} {ds.X.n}"]
    lines += [f"{i + 1} {j + 1}" for i, j in zip(*np.nonzero(X & M))]
    miss = np.argwhere(M == 0)
    if len(miss):
        lines.append("# missing")
        lines += [f"{i + 1} {j + 1}" for i, j in miss]
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> Dataset:
    """Load by extension: ``.tri``/``.triplets`` as triplets, anything else dense."""
    p = Path(path)
    if p.suffix in (".tri", ".triplets"):
        return load_triplets(p)
    return load_dense(p)


def builtin_names() -> list[str]:
    root = resources.files("bmfkit") / "data"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


def load_builtin(name: str) -> Dataset:
    """One of the bundled datasets (see ``builtin_names``)."""
    ref = resources.files("bmfkit") / "data" / f"{name}.txt"
    if not ref.is_file():
        raise FormatError(f"no bundled dataset {name!r}; have {builtin_names()}")
    with resources.as_file(ref) as p:
        return load_dense(p)


def resolve_dataset(spec: str) -> Dataset:
    """A path if it exists, otherwise a bundled dataset name."""
    if Path(spec).exists():
        return load(spec)
    return load_builtin(spec)


BINARIZE_POLICIES = ("round", "nonzero", "mean_per_column", "median_per_column", "fixed")


def binarize(values, policy: str = "round", tau: float | None = None,
             mask=None) -> BoolMatrix:
    """Threshold a real matrix.  Ties go to 1 for every threshold policy.

    Per-column thresholds ignore entries where ``mask`` is zero.
    """
    A = np.asarray(values, dtype=float)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("binarize needs finite values")
    obs = np.ones(A.shape, dtype=bool) if mask is None else np.asarray(mask) != 0
    if policy == "round":
        B = A >= 0.5
    elif policy == "nonzero":
        B = A != 0
    elif policy == "fixed":
        if tau is None:
            raise ValueError("the fixed policy needs tau")
        B = A >= tau
    elif policy in ("mean_per_column", "median_per_column"):
        stat = np.mean if policy == "mean_per_column" else np.median
        thr = np.array([stat(A[obs[:, j], j]) if obs[:, j].any() else np.inf
                        for j in range(A.shape[1])])
        # a column mean can land one ulp above equal entries; count those as ties
        B = (A >= thr) | np.isclose(A, thr, rtol=1e-12, atol=0.0)
    else:
        raise ValueError(f"policy must be one of {BINARIZE_POLICIES}, got {policy!r}")
    return BoolMatrix.from_dense(B & obs)


@dataclass
class TopicImportance:
    """W_t(i, k): documents of topic k that use word i, zero outside topic k."""

    W_t: np.ndarray


def topic_importance(X: BoolMatrix, W: BoolMatrix, H: BoolMatrix) -> TopicImportance:
    if W.m != X.m or H.n != X.n or W.n != H.m:
        raise DimensionError(f"shapes X{X.shape}, W{W.shape}, H{H.shape} do not conform")
    counts = _kernels.overlap_counts(X.rows, H.rows)
    return TopicImportance((counts * W.to_dense()).astype(np.int32))


def top_words(W_t, k: int, labels: list[str] | None = None) -> list[list]:
    """Per topic, up to ``k`` words with positive importance, most important first.

    Ties keep label (row) order.  Returns labels if given, else row indices.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    A = W_t.W_t if isinstance(W_t, TopicImportance) else np.asarray(W_t)
    if labels is not None and len(labels) != A.shape[0]:
        raise DimensionError(f"{len(labels)} labels for {A.shape[0]} words")
    out = []
    for col in A.T:
        order = np.argsort(-col, kind="stable")
        order = [int(i) for i in order[:k] if col[i] > 0]
        out.append([labels[i] for i in order] if labels is not None else order)
    return out


def relative_error(X: BoolMatrix, M: BoolMatrix | None, W: BoolMatrix, H: BoolMatrix) -> float:
    """sqrt(masked error) / sqrt(observed ones of X)."""
    obs = X if M is None else X & M
    total = obs.ones_count()
    if total == 0:
        raise ValueError("relative error is undefined when X has no observed ones")
    return math.sqrt(masked_sq_error(X, M, bool_product(W, H))) / math.sqrt(total)


REPORT_COLUMNS = ["dataset", "method", "r", "seed", "time_s", "error",
                  "error_diff_vs_reference", "relative_error_pct"]


def write_report(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in REPORT_COLUMNS})


def save_factor(B: BoolMatrix, path) -> None:
    Path(path).write_text("\n".join(" ".join(map(str, r)) for r in B.to_dense()) + "\n")


def load_factor(path) -> BoolMatrix:
    ds = load_dense(path)
    if ds.n_missing:
        raise FormatError(f"{path}: factor files may not contain missing entries")
    return ds.X

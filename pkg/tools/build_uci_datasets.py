"""Rebuild the bundled UCI datasets from the Orange 2.7.8 source distribution.

Usage:
    python tools/build_uci_datasets.py ORANGE_DATASETS_DIR [OUT_DIR]

ORANGE_DATASETS_DIR is ``Orange-2.7.8/Orange/datasets`` from the ``Orange``
sdist on PyPI.  Encoding rules:

* two-valued attributes (yes/no, y/n, t/f, 0/1) become one column (positive
  value -> 1);
* other categorical attributes become one-hot columns over their sorted
  values, and a missing value hides every column of that attribute;
* numeric attributes are split into "<= median" and "> median" columns;
* class attributes are dropped.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from bmfkit.dataio import Dataset, save_dense  # noqa: E402

MISSING = ("?", "", "unmeasured")


def read_tab(path):
    lines = [ln.rstrip("\n").split("\t") for ln in open(path)]
    header, rows = lines[0], lines[3:]
    return header, {h: [r[j] for r in rows] for j, h in enumerate(header)}, len(rows)


def single(name, col, positive):
    x = np.array([[v == positive] for v in col])
    m = np.array([[v not in MISSING] for v in col])
    return x, m, [name]


def onehot(name, col):
    cats = sorted(set(v for v in col if v not in MISSING))
    x = np.array([[v == c for c in cats] for v in col])
    m = np.array([[v not in MISSING] * len(cats) for v in col])
    return x, m, [f"{name}={c}" for c in cats]


def median_split(name, col):
    a = np.array([float(v) for v in col])
    md = np.median(a)
    x = np.column_stack([a <= md, a > md])
    return x, np.ones_like(x), [f"{name}<={md:g}", f"{name}>{md:g}"]


def build(name, parts, row_labels=None):
    X = np.hstack([p[0] for p in parts]).astype(np.uint8)
    M = np.hstack([p[1] for p in parts]).astype(np.uint8)
    cols = [c for p in parts for c in p[2]]
    return Dataset.from_arrays(X, M, name=name, row_labels=row_labels, col_labels=cols)


def zoo(src):
    header, C, _ = read_tab(src / "zoo.tab")
    attrs = [h for h in header[1:17] if h != "legs"]
    parts = [single(h, C[h], "1") for h in attrs]
    parts.append(median_split("legs", C["legs"]))
    return build("zoo", parts, row_labels=C["name"])


def votes(src):
    header, C, _ = read_tab(src / "voting.tab")
    return build("votes", [single(h, C[h], "y") for h in header[1:17]])


def tumor(src):
    header, C, _ = read_tab(src / "primary-tumor.tab")
    parts = []
    for h in header[1:]:
        vals = set(C[h]) - set(MISSING)
        parts.append(single(h, C[h], "yes") if vals <= {"yes", "no"} else onehot(h, C[h]))
    return build("tumor", parts)


def audio(src):
    header, C, _ = read_tab(src / "audiology.tab")
    parts = []
    for h in header[:-1]:
        vals = set(C[h]) - set(MISSING)
        parts.append(single(h, C[h], "t") if vals <= {"t", "f"} else onehot(h, C[h]))
    return build("audio", parts)


LYMP_BINARY = ["bl_affere", "bl_lymph_c", "bl_lymph_s", "by_pass", "extravasates",
               "regen", "early_uptake", "dislocation", "exclusion"]


def lymp(src):
    header, C, _ = read_tab(src / "lymphography.tab")
    parts = []
    for h in header[1:]:
        if h in LYMP_BINARY:
            parts.append(single(h, C[h], "yes"))
        elif h == "no_nodes":
            parts.append(median_split(h, C[h]))
        else:
            parts.append(onehot(h, C[h]))
    return build("lymp", parts)


BUILDERS = {"zoo": zoo, "votes": votes, "tumor": tumor, "audio": audio, "lymp": lymp}


def main(argv):
    if len(argv) < 2:
        print(__doc__)
        return 2
    src = Path(argv[1])
    out = Path(argv[2]) if len(argv) > 2 else Path(__file__).resolve().parents[1] / "src/bmfkit/data"
    for name, fn in BUILDERS.items():
        ds = fn(src)
        save_dense(ds, out / f"{name}.txt")
        print(f"{name}: {ds.X.m}x{ds.X.n}, ones={ds.X.ones_count()}, missing={ds.n_missing}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))

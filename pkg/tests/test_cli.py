import csv
import json

import numpy as np
import pytest

from bmfkit import cli
from bmfkit.bitcore import BoolMatrix
from bmfkit.dataio import Dataset, load_factor, save_dense

from conftest import random_bits


def planted_dataset(tmp_path, name="planted.txt", seed=0):
    rng = np.random.default_rng(seed)
    W = random_bits(rng, (12, 2), 0.4)
    H = random_bits(rng, (2, 10), 0.4)
    X = np.minimum(1, W.astype(int) @ H)
    path = tmp_path / name
    save_dense(Dataset.from_arrays(X, name="planted"), path)
    return path, X


def topic_corpus(tmp_path):
    """Two topics: words a* appear in documents 0-14, words b* in 15-29."""
    rng = np.random.default_rng(3)
    words = [f"a{i}" for i in range(8)] + [f"b{i}" for i in range(8)]
    X = np.zeros((16, 30), dtype=np.uint8)
    X[:8, :15] = rng.random((8, 15)) < 0.85
    X[8:, 15:] = rng.random((8, 15)) < 0.85
    path = tmp_path / "corpus.txt"
    save_dense(Dataset.from_arrays(X, name="corpus", row_labels=words), path)
    return path, words


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("method", cli.METHODS)
def test_factorize_planted_reaches_zero(tmp_path, capsys, method):
    path, X = planted_dataset(tmp_path)
    out_csv = tmp_path / "r.csv"
    code, out, _ = run(["factorize", str(path), "-r", "2", "--method", method, "--budget", "2",
                        "--max-runs", "20", "--trials", "1", "--workers", "1",
                        "--csv", str(out_csv), "--save-factors", str(tmp_path / "f")], capsys)
    assert code == 0 and "best error 0" in out
    row = next(csv.DictReader(out_csv.open()))
    assert row["error"] == "0" and row["relative_error_pct"] == "0.00"
    W, H = load_factor(tmp_path / "f/W.txt"), load_factor(tmp_path / "f/H.txt")
    assert W.shape == (12, 2) and H.shape == (2, 10)


def test_report_deterministic_apart_from_time(tmp_path, capsys):
    path, _ = planted_dataset(tmp_path, seed=5)
    rows = []
    for i in range(2):
        out_csv = tmp_path / f"r{i}.csv"
        assert run(["factorize", str(path), "-r", "3", "--budget", "100", "--max-runs", "5",
                    "--trials", "3", "--workers", "2", "--csv", str(out_csv)], capsys)[0] == 0
        rows.append([{k: v for k, v in r.items() if k != "time_s"}
                     for r in csv.DictReader(out_csv.open())])
    assert rows[0] == rows[1]
    assert [r["seed"] for r in rows[0]] == ["0", "1", "2"]


def test_reference_diff_for_bundled_dataset(tmp_path, capsys):
    out_csv = tmp_path / "z.csv"
    code, out, _ = run(["factorize", "zoo", "-r", "2", "--budget", "1", "--workers", "1",
                        "--csv", str(out_csv)], capsys)
    row = next(csv.DictReader(out_csv.open()))
    assert code == 0 and int(row["error_diff_vs_reference"]) == int(row["error"]) - 271


@pytest.mark.parametrize("argv", [
    ["factorize", "no-such-dataset"],
    ["factorize", "zoo", "-r", "0"],
    ["factorize", "zoo", "--trials", "0"],
    ["factorize", "zoo", "--budget", "-1"],
    ["factorize", "zoo", "-r", "30"],
    ["factorize", "zoo", "--method", "greedy-comb", "--backend", "exact"],
    ["factorize", "zoo", "--preset", "nonexistent"],
    ["topics", "votes", "-r", "2", "--budget", "1"],
    ["topics", "zoo", "--method", "ms-ao", "--diversify", "--budget", "1"],
    ["bench-kernel", "--n", "0"],
    ["bench-kernel", "--trials", "0"],
    ["combine", "zoo", "-r", "2"],
])
def test_error_paths_exit_nonzero(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code != 0
    assert err.startswith("bmfkit: error:") and err.count("\n") == 1


def test_bad_file_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 0\n1\n")
    code, _, err = run(["factorize", str(bad)], capsys)
    assert code != 0 and "bad.txt" in err


def test_argparse_errors_exit_nonzero():
    with pytest.raises(SystemExit) as exc:
        cli.main(["factorize", "zoo", "--method", "svd"])
    assert exc.value.code != 0


def test_worker_count(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli.worker_count() == 3
    assert cli.worker_count(5) == 5
    monkeypatch.setenv(cli.WORKERS_ENV, "many")
    with pytest.raises(cli.CLIError):
        cli.worker_count()


def test_presets_apply_and_flags_override():
    args = cli.build_parser().parse_args(["factorize", "zoo", "--method", "tree-bmf",
                                          "--preset", "short", "--budget", "7"])
    spec = cli.spec_from_args(args)
    assert spec.budget == 7 and spec.leaf_solutions == 5
    assert set(cli.load_presets()) >= {"short", "long"}


def test_reference_table_has_24_values():
    ref = cli.load_reference()
    assert len(ref) == 24
    assert ref[("zoo", 2)] == 271 and ref[("zoo", 10)] == 39


def test_bench_kernel_smoke(tmp_path, capsys):
    out_csv = tmp_path / "b.csv"
    code, out, _ = run(["bench-kernel", "--n", "64", "100", "--trials", "2", "--csv", str(out_csv)],
                       capsys)
    assert code == 0
    rows = list(csv.DictReader(out_csv.open()))
    assert [r["n"] for r in rows] == ["64", "100"] and all(r["identical"] == "True" for r in rows)


def test_combine_from_saved_factors(tmp_path, capsys):
    path, _ = planted_dataset(tmp_path, seed=9)
    dirs = []
    for s in range(3):
        d = tmp_path / f"run{s}"
        run(["factorize", str(path), "-r", "2", "--budget", "5", "--max-runs", "1",
             "--seed", str(s), "--workers", "1", "--save-factors", str(d)], capsys)
        dirs.append(str(d))
    out = tmp_path / "sel.json"
    code, text, _ = run(["combine", str(path), "-r", "2", "--factors", *dirs, "--out", str(out),
                         "--save-factors", str(tmp_path / "comb")], capsys)
    assert code == 0
    sel = json.loads(out.read_text())
    assert len(sel["indices"]) == 2 and sel["error"] == 0
    code, text, _ = run(["combine", str(path), "-r", "2", "--factors", *dirs, "--heuristic"],
                        capsys)
    assert code == 0 and json.loads(text)["error"] == 0


def test_combine_pool_json(tmp_path, capsys):
    X = np.zeros((3, 3), dtype=np.uint8)
    X[:2, :2] = 1
    path = tmp_path / "x.txt"
    save_dense(Dataset.from_arrays(X), path)
    pool = tmp_path / "pool.json"
    pool.write_text(json.dumps({"factors": [{"w": "110", "h": "110"}, {"w": "001", "h": "001"},
                                            {"w": "100", "h": "100"}]}))
    code, text, _ = run(["combine", str(path), "-r", "1", "--pool", str(pool)], capsys)
    assert code == 0 and json.loads(text) == {"dataset": "data", "r": 1, "pool_size": 3,
                                              "indices": [0], "error": 0}


def test_topics_planted_corpus(tmp_path, capsys):
    path, words = topic_corpus(tmp_path)
    code, out, _ = run(["topics", str(path), "-r", "2", "-k", "5", "--budget", "3",
                        "--max-runs", "10", "--diversify", "--w-min", "5"], capsys)
    assert code == 0
    lists = [line.split(": ", 1)[1].split(", ") for line in out.splitlines()
             if line.startswith("topic")]
    assert len(lists) == 2
    assert {w[0] for w in lists[0]} != {w[0] for w in lists[1]}
    for ws in lists:
        assert len({w[0] for w in ws}) == 1


def test_topics_rank_one_and_short_lists(tmp_path, capsys):
    path, words = topic_corpus(tmp_path)
    code, out, _ = run(["topics", str(path), "-r", "1", "-k", "100", "--budget", "1",
                        "--max-runs", "3"], capsys)
    assert code == 0
    lines = [line for line in out.splitlines() if line.startswith("topic")]
    assert len(lines) == 1
    assert len(lines[0].split(": ", 1)[1].split(", ")) <= len(words)


def test_datasets_listing(capsys):
    code, out, _ = run(["datasets"], capsys)
    assert code == 0 and "zoo" in out and "lymp" in out

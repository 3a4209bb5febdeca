import numpy as np
import pandas as pd
import pytest

import cli
from config import (
    BENCH_COLUMNS,
    EXIT_IO,
    EXIT_OK,
    EXIT_OVERFLOW,
    EXIT_USAGE,
    LOCALITY_COLUMNS,
    OVERFLOW_COLUMNS,
    SEED_ENV_VAR,
)
from core import Overflow


@pytest.fixture
def keys_file(tmp_path):
    def write(lines, name="in.txt"):
        path = tmp_path / name
        path.write_text("".join(f"{line}\n" for line in lines))
        return path
    return write


def test_sort_example(keys_file, tmp_path, capsys):
    source = keys_file([5, 3, 1, 4])
    target = tmp_path / "out.txt"
    assert cli.main(["sort", "--z", "4", "--seed", "7", str(source), str(target)]) == EXIT_OK
    assert target.read_text() == "1\n3\n4\n5\n"
    assert "Sorted 4 keys" in capsys.readouterr().out


def test_sort_is_deterministic(keys_file, tmp_path):
    source = keys_file(np.random.default_rng(0).integers(0, 1 << 40, 300).tolist())
    outputs = []
    for run in range(2):
        target = tmp_path / f"out{run}.txt"
        cli.main(["sort", "--z", "64", "--seed", "0x2a", str(source), str(target)])
        outputs.append(target.read_bytes())
    assert outputs[0] == outputs[1]


def test_empty_input(keys_file, tmp_path):
    source = keys_file([])
    target = tmp_path / "out.txt"
    assert cli.main(["sort", str(source), str(target)]) == EXIT_OK
    assert target.read_text() == ""


@pytest.mark.parametrize("argv", [["sort"], ["bench", "--n", "16", "--algos", "quick"], ["shuffle"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as err:
        cli.main(argv)
    assert err.value.code == EXIT_USAGE


def test_bad_key(keys_file, tmp_path, capsys):
    source = keys_file([1, "two", 3])
    assert cli.main(["sort", str(source), str(tmp_path / "out.txt")]) == EXIT_USAGE
    assert "not a decimal key" in capsys.readouterr().err


def test_invalid_bucket_size(keys_file, tmp_path):
    source = keys_file([1, 2, 3])
    assert cli.main(["sort", "--z", "3", str(source), str(tmp_path / "out.txt")]) == EXIT_USAGE


def test_missing_file(tmp_path):
    assert cli.main(["sort", str(tmp_path / "nope.txt"), str(tmp_path / "out.txt")]) == EXIT_IO


def test_overflow_exit_code(keys_file, tmp_path, monkeypatch, capsys):
    def overflowing(X, params, **kwargs):
        raise Overflow(1, 0, params.Z + 1, params.Z)

    monkeypatch.setattr(cli, "bucket_osort", overflowing)
    source = keys_file([4, 3, 2, 1])
    assert cli.main(["sort", "--z", "4", str(source), str(tmp_path / "out.txt")]) == EXIT_OVERFLOW
    assert capsys.readouterr().err.startswith("Error:")


def test_seed_from_environment(keys_file, tmp_path, monkeypatch):
    source = keys_file(range(50))
    flagged = tmp_path / "flag.txt"
    cli.main(["orp", "--z", "32", "--seed", "7", str(source), str(flagged)])
    monkeypatch.setenv(SEED_ENV_VAR, "7")
    from_env = tmp_path / "env.txt"
    cli.main(["orp", "--z", "32", str(source), str(from_env)])
    assert flagged.read_text() == from_env.read_text()
    assert sorted(map(int, flagged.read_text().split())) == list(range(50))


def test_orp_with_retries(keys_file, tmp_path, capsys):
    source = keys_file(range(40))
    target = tmp_path / "out.txt"
    assert cli.main(["orp", "--z", "32", "--mode", "const", "--max-attempts", "3",
                     str(source), str(target)]) == EXIT_OK
    assert sorted(map(int, target.read_text().split())) == list(range(40))
    assert "Permuted 40 keys" in capsys.readouterr().out


def test_binary_records_keep_their_payload(tmp_path):
    dtype = np.dtype([("key", "<u8"), ("payload", "V4")])
    records = np.zeros(10, dtype=dtype)
    keys = np.random.default_rng(3).permutation(10).astype(np.uint64) * 1000
    records["key"] = keys
    records["payload"] = np.frombuffer(b"".join(int(k).to_bytes(4, "little") for k in keys), dtype="V4")
    source = tmp_path / "in.bin"
    source.write_bytes(records.tobytes())
    target = tmp_path / "out.bin"

    assert cli.main(["sort", "--z", "16", "--format", "binary", "--payload-width", "4",
                     str(source), str(target)]) == EXIT_OK
    result = np.frombuffer(target.read_bytes(), dtype=dtype)
    np.testing.assert_array_equal(result["key"], np.sort(keys))
    for record in result:
        assert int.from_bytes(bytes(record["payload"]), "little") == int(record["key"])


def test_truncated_binary_file(tmp_path):
    source = tmp_path / "in.bin"
    source.write_bytes(b"\x00" * 13)
    argv = ["sort", "--format", "binary", str(source), str(tmp_path / "out.bin")]
    assert cli.main(argv) == EXIT_USAGE


def test_bench_csv(tmp_path):
    target = tmp_path / "bench.csv"
    argv = ["bench", "--n", "2048", "--z", "512", "--algos", "bucket,bitonic,merge", "-o", str(target)]
    assert cli.main(argv) == EXIT_OK
    frame = pd.read_csv(target)
    assert list(frame.columns) == BENCH_COLUMNS
    assert (frame["measured_accesses"] == frame["predicted_accesses"]).all()
    totals = frame.set_index("algo")["measured_accesses"]
    assert totals["bucket"] < totals["bitonic"]
    assert totals["merge"] == 2 * 2048 * 11


def test_bench_is_deterministic(tmp_path, capsys):
    argv = ["bench", "--n", "256,512", "--z", "64,128", "--algos", "bin_assign,orp"]
    cli.main(argv)
    first = capsys.readouterr().out
    cli.main(argv)
    assert capsys.readouterr().out == first
    assert len(first.strip().splitlines()) == 1 + 4 * 2


def test_overflow_csv(tmp_path):
    target = tmp_path / "overflow.csv"
    argv = ["overflow", "--n", "96", "--z", "12,16", "--trials", "500", "-o", str(target)]
    assert cli.main(argv) == EXIT_OK
    frame = pd.read_csv(target)
    assert list(frame.columns) == OVERFLOW_COLUMNS
    assert frame["trials"].tolist() == [500, 500]
    assert (frame["final_bucket_rate"] <= frame["bucket_bound"]).all()


def test_locality_csv(tmp_path):
    target = tmp_path / "locality.csv"
    argv = ["locality", "--n", "512", "--z", "64", "-o", str(target)]
    assert cli.main(argv) == EXIT_OK
    frame = pd.read_csv(target)
    assert list(frame.columns) == LOCALITY_COLUMNS
    assert set(frame["algo"]) == {"osort", "merge"}
    assert (frame["disks"] == 3).all()
    assert (frame["moves"] > 0).all()


@pytest.mark.parametrize("algo", ["merge", "orp", "bin_assign", "osort"])
def test_trace_output(algo, tmp_path):
    target = tmp_path / "run.trace"
    assert cli.main(["trace", "--algo", algo, "--n", "16", "--z", "16", "-o", str(target)]) == EXIT_OK
    lines = target.read_text().splitlines()
    assert lines
    assert {line.split()[0] for line in lines} <= {"read", "write", "move"}


def test_trace_to_stdout_is_deterministic(capsys):
    cli.main(["trace", "--algo", "orp", "--n", "8", "--z", "8", "--seed", "1"])
    first = capsys.readouterr().out
    cli.main(["trace", "--algo", "orp", "--n", "8", "--z", "8", "--seed", "1"])
    assert capsys.readouterr().out == first
    assert first.startswith("move")


def test_trace_needs_input(capsys):
    assert cli.main(["trace"]) == EXIT_USAGE


def test_locality_csv_for_the_constant_storage_client(tmp_path):
    target = tmp_path / "locality.csv"
    argv = ["locality", "--n", "256", "--z", "32", "--mode", "const", "--algos", "osort", "-o", str(target)]
    assert cli.main(argv) == EXIT_OK
    frame = pd.read_csv(target)
    assert frame["algo"].tolist() == ["osort"]
    assert frame["disks"].tolist() == [3]
    assert frame["levels"].tolist() == [4]

import pytest

from polyglot_probe.errors import InputError
from polyglot_probe.io import atomic_write_text, read_csv, read_jsonl, write_csv, write_json, write_jsonl


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_text(tmp_path / "a.txt", "one")
    atomic_write_text(tmp_path / "a.txt", "two")
    assert (tmp_path / "a.txt").read_text() == "two"
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]


def test_jsonl_round_trip_and_line_numbers(tmp_path):
    write_jsonl(tmp_path / "x.jsonl", [{"a": 1}, {"b": "ü"}])
    assert [obj for _, obj in read_jsonl(tmp_path / "x.jsonl")] == [{"a": 1}, {"b": "ü"}]
    (tmp_path / "bad.jsonl").write_text('{"a": 1}\n{oops\n')
    with pytest.raises(InputError, match="bad.jsonl:2"):
        list(read_jsonl(tmp_path / "bad.jsonl"))


def test_csv_keeps_float_precision(tmp_path):
    write_csv(tmp_path / "t.csv", ["x"], [(0.1 + 0.2,)])
    assert float(read_csv(tmp_path / "t.csv")[0]["x"]) == 0.1 + 0.2


def test_json_is_stable(tmp_path):
    write_json(tmp_path / "a.json", {"b": 1, "a": [1, 2]})
    first = (tmp_path / "a.json").read_bytes()
    write_json(tmp_path / "a.json", {"b": 1, "a": [1, 2]})
    assert (tmp_path / "a.json").read_bytes() == first

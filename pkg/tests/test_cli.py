import json
import os
import subprocess
import sys

import pytest

from polyglot_probe.cli import main


def run(*args):
    return main([str(a) for a in args])


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def syn(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "syn"
    assert run("gen-synthetic", "--out", out, "--languages", 3, "--concepts", 12, "--train-prompts", 60,
               "--lens-tasks", 6, "--parallel-sentences", 8, "--seed", 3) == 0
    return out


@pytest.fixture(scope="module")
def trained(syn):
    out = syn.parent / "train"
    assert run("train", "--out", out, "--corpus", syn / "train_corpus.jsonl", "--vocab", syn / "vocab.json",
               "--n-layers", 2, "--d-model", 16, "--n-heads", 2, "--d-ff", 24, "--steps", 5, "--batch", 4) == 0
    return out


def test_unknown_flag_exits_1(capsys):
    with pytest.raises(SystemExit) as info:
        run("bleu", "--nope")
    assert info.value.code == 1


def test_missing_required(tmp_path, capsys):
    assert run("bleu", "--out", tmp_path, "--hyp", "x") == 1
    assert "--ref is required" in capsys.readouterr().err


def test_missing_input_writes_failure_manifest(tmp_path, capsys):
    assert run("bleu", "--out", tmp_path, "--hyp", tmp_path / "h", "--ref", tmp_path / "r") == 1
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "error" and manifest["exit_code"] == 1


def test_bleu_command(tmp_path):
    (tmp_path / "h.txt").write_text("the cat sat\n", encoding="utf-8")
    (tmp_path / "r.txt").write_text("the cat sat down\n", encoding="utf-8")
    assert run("bleu", "--out", tmp_path / "o", "--hyp", tmp_path / "h.txt", "--ref", tmp_path / "r.txt", "--max-n", 2) == 0
    result = json.loads((tmp_path / "o" / "bleu.json").read_text())
    assert result["bleu"] == pytest.approx(0.7165, abs=1e-4)


def test_bleu_line_count_mismatch(tmp_path):
    (tmp_path / "h.txt").write_text("a\nb\n")
    (tmp_path / "r.txt").write_text("a\n")
    assert run("bleu", "--out", tmp_path / "o", "--hyp", tmp_path / "h.txt", "--ref", tmp_path / "r.txt") == 1


def test_config_file_and_conflicts(tmp_path, capsys, caplog):
    (tmp_path / "h.txt").write_text("a b c\n")
    (tmp_path / "r.txt").write_text("a b d\n")
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'hyp = "{tmp_path / "h.txt"}"\nref = "{tmp_path / "r.txt"}"\n[bleu]\nmax_n = 1\n')
    assert run("bleu", "--config", cfg, "--out", tmp_path / "o1") == 0
    m = json.loads((tmp_path / "o1" / "manifest.json").read_text())
    assert m["config"]["max_n"] == 1
    assert json.loads((tmp_path / "o1" / "bleu.json").read_text())["bleu"] == pytest.approx(2 / 3)

    assert run("bleu", "--config", cfg, "--out", tmp_path / "o2", "--max-n", 2) == 0
    assert "flag value 2 overrides config file value 1" in caplog.text
    assert json.loads((tmp_path / "o2" / "manifest.json").read_text())["config"]["max_n"] == 2

    assert run("bleu", "--config", cfg, "--out", tmp_path / "o3", "--max-n", 2, "--strict-config") == 1
    assert "2" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"hyp": "a", "ref": "b", "colour": "red"}))
    assert run("bleu", "--config", cfg, "--out", tmp_path / "o") == 1
    assert "colour" in capsys.readouterr().err


def test_codemix_deterministic_across_runs_and_threads(syn, tmp_path):
    dicts = sorted(syn.glob("dict_*.tsv"))
    args = ["gen-codemix", "--parallel", syn / "parallel.jsonl", "--ratio", "0.5", "--seed", 42]
    for d in dicts:
        args += ["--dictionary", d]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert run(*args, "--out", tmp_path / "c", "--threads", 4) == 0
    a = tree(tmp_path / "a")
    assert a == tree(tmp_path / "b")
    # manifests hold relative input paths, so only compare files that do not embed them
    c = tree(tmp_path / "c")
    assert {k: v for k, v in a.items() if k != "manifest.json"} == {k: v for k, v in c.items() if k != "manifest.json"}
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["ratios"] == [0.5]


def test_explicit_dictionary_pair(syn, tmp_path):
    d = syn / "dict_aa-bb.tsv"
    assert run("gen-codemix", "--out", tmp_path, "--parallel", syn / "parallel.jsonl", "--dictionary", f"aa-bb={d}") == 0
    assert run("gen-codemix", "--out", tmp_path / "x", "--parallel", syn / "parallel.jsonl", "--dictionary", f"aabb={d}") == 1


def test_lens_vocab_mismatch(syn, trained, tmp_path, capsys):
    synonyms = json.loads((syn / "synonyms.json").read_text(encoding="utf-8"))
    first = next(iter(synonyms))
    synonyms[first]["aa"] = ["zzzz"]
    (tmp_path / "syn.json").write_text(json.dumps(synonyms), encoding="utf-8")
    code = run("lens", "--out", tmp_path / "o", "--checkpoint", trained / "model.ttlm", "--vocab", syn / "vocab.json",
               "--synonyms", tmp_path / "syn.json", "--tasks", syn / "tasks.jsonl")
    assert code == 1
    assert "zzzz" in capsys.readouterr().err


def test_checkpoint_vocab_size_mismatch(syn, trained, tmp_path, capsys):
    pieces = json.loads((syn / "vocab.json").read_text(encoding="utf-8"))["pieces"] + ["extra"]
    (tmp_path / "v.json").write_text(json.dumps({"pieces": pieces}), encoding="utf-8")
    code = run("lens", "--out", tmp_path / "o", "--checkpoint", trained / "model.ttlm", "--vocab", tmp_path / "v.json",
               "--synonyms", syn / "synonyms.json", "--tasks", syn / "tasks.jsonl")
    assert code == 1
    assert "vocabulary mismatch" in capsys.readouterr().err


def test_malformed_corpus_line(syn, tmp_path, capsys):
    (tmp_path / "c.jsonl").write_text('{"tokens": [1, 2]}\n{"tokens": "x"}\n')
    assert run("train", "--out", tmp_path / "o", "--corpus", tmp_path / "c.jsonl", "--vocab", syn / "vocab.json") == 1
    assert "c.jsonl:2" in capsys.readouterr().err


def test_module_entry_point_and_log_env(syn, tmp_path):
    cmd = [sys.executable, "-m", "polyglot_probe.cli", "gen-codemix", "--out", str(tmp_path / "o"),
           "--parallel", str(syn / "parallel.jsonl"), "--dictionary", str(syn / "dict_aa-bb.tsv")]
    quiet = subprocess.run(cmd, capture_output=True, text=True)
    loud = subprocess.run(cmd, capture_output=True, text=True,
                          env={**os.environ, "POLYGLOT_PROBE_LOG": "INFO"})
    assert quiet.returncode == loud.returncode == 0, loud.stderr
    assert "loaded" not in quiet.stderr
    assert "loaded 32 parallel records" in loud.stderr

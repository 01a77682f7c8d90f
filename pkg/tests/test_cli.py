import json

import pytest

from finsynth.cli import main
from finsynth.datasetio import read_dataset


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# compile


def test_compile_shipped_seed(capsys):
    code, out, _ = run(capsys, "compile")
    assert code == 0
    assert "5 nodes, 3 edges" in out
    assert "node ebit" in out


def test_compile_self_reference(capsys, tmp_path):
    path = tmp_path / "seed.txt"
    path.write_text("x = x + 1\n")
    code, _, err = run(capsys, "compile", "--formulas", str(path))
    assert code == 2
    assert "line 1" in err and "both sides" in err


def test_compile_empty_file(capsys, tmp_path):
    path = tmp_path / "seed.txt"
    path.write_text("# nothing here\n")
    code, _, err = run(capsys, "compile", "--formulas", str(path))
    assert code == 2


def test_compile_missing_file(capsys):
    code, _, err = run(capsys, "compile", "--formulas", "/nonexistent/seed.txt")
    assert code == 2


# ---------------------------------------------------------------------------
# extend


def test_extend_reaches_fixed_point(capsys, tmp_path):
    out_path = tmp_path / "graph.txt"
    code, out, _ = run(
        capsys,
        "extend",
        "--slices", "2",
        "--max-steps", "4",
        "--max-vars", "5",
        "--out", str(out_path),
    )
    assert code == 0
    assert "166 nodes" in out
    assert out_path.read_text().startswith("nodes 166\n")
    rows = [line.split() for line in out.splitlines()]
    rounds = [r for r in rows if len(r) == 3 and all(t.isdigit() for t in r)]
    added = [int(r[1]) for r in rounds]
    totals = [int(r[2]) for r in rounds]
    assert added[-1] == 0
    assert totals == sorted(totals)


def test_extend_static_graph(capsys):
    code, out, _ = run(capsys, "extend")
    assert code == 0
    assert "9 nodes" in out


def test_extend_rejects_single_slice(capsys):
    code, _, err = run(capsys, "extend", "--slices", "1")
    assert code == 2
    assert "slices" in err


# ---------------------------------------------------------------------------
# generate


def test_generate_mock_dataset(capsys, tmp_path):
    out = tmp_path / "ds.json"
    code, text, _ = run(
        capsys, "generate", "--out", str(out), "--seed", "3", "--examples-per-node", "1"
    )
    assert code == 0
    assert "generated 9 examples from 9 nodes" in text
    records = read_dataset(str(out))
    assert len(records) == 9
    log = json.loads((tmp_path / "ds.json.log.json").read_text())
    assert log["generated"] == 9
    assert log["verify_failures"] == []
    assert log["examples_written"] == 9


def test_generate_is_idempotent(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(capsys, "generate", "--out", str(a), "--seed", "5")[0] == 0
    assert run(capsys, "generate", "--out", str(b), "--seed", "5")[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_generate_seed_changes_output(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "generate", "--out", str(a), "--seed", "1")
    run(capsys, "generate", "--out", str(b), "--seed", "2")
    assert a.read_bytes() != b.read_bytes()


def test_generate_live_without_key(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("FINSYNTH_API_KEY", raising=False)
    code, _, err = run(capsys, "generate", "--backend", "live", "--out", str(tmp_path / "x.json"))
    assert code == 3
    assert "AuthError" in err and "FINSYNTH_API_KEY" in err


def test_generate_custom_key_env(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("OTHER_KEY", raising=False)
    code, _, err = run(
        capsys,
        "generate",
        "--backend", "live",
        "--api-key-env", "OTHER_KEY",
        "--out", str(tmp_path / "x.json"),
    )
    assert code == 3
    assert "OTHER_KEY" in err


# ---------------------------------------------------------------------------
# config files


def test_config_file_settings(capsys, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("examples_per_node = 1\nseed = 9  # inline comment\n")
    out = tmp_path / "ds.json"
    code, text, _ = run(capsys, "generate", "--config", str(config), "--out", str(out))
    assert code == 0
    assert "generated 9 examples" in text


def test_flags_override_config(capsys, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("examples_per_node = 1\n")
    out = tmp_path / "ds.json"
    code, text, _ = run(
        capsys,
        "generate",
        "--config", str(config),
        "--examples-per-node", "2",
        "--out", str(out),
    )
    assert code == 0
    assert "generated 18 examples" in text


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("bogus_key = 1\n", "unknown setting"),
        ("slices\n", "key=value"),
        ("seed = lots\n", "expected a number"),
    ],
)
def test_config_file_errors(capsys, tmp_path, body, fragment):
    config = tmp_path / "run.cfg"
    config.write_text(body)
    code, _, err = run(capsys, "compile", "--config", str(config))
    assert code == 2
    assert fragment in err


# ---------------------------------------------------------------------------
# split / convert / stats / eval


@pytest.fixture(scope="module")
def dataset_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ds.json"
    assert main(["generate", "--out", str(path), "--seed", "2"]) == 0
    return str(path)


def test_split_writes_partition(capsys, dataset_path, tmp_path):
    out_dir = tmp_path / "splits"
    code, out, _ = run(capsys, "split", "--in", dataset_path, "--out-dir", str(out_dir), "--seed", "4")
    assert code == 0
    blocks = {name: read_dataset(str(out_dir / f"{name}.json")) for name in ("train", "dev", "test")}
    total = read_dataset(dataset_path)
    assert sum(len(b) for b in blocks.values()) == len(total)
    ids = sorted(r["id"] for block in blocks.values() for r in block)
    assert ids == sorted(r["id"] for r in total)
    assert len(blocks["dev"]) == round(len(total) * 0.10)
    assert len(blocks["test"]) == round(len(total) * 0.15)


def test_split_too_small(capsys, tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text("[]")
    code, _, err = run(capsys, "split", "--in", str(path), "--out-dir", str(tmp_path / "s"))
    assert code == 2
    assert "TooFewExamplesError" in err


def test_convert_tatqa(capsys, tmp_path):
    raw = tmp_path / "tatqa.json"
    raw.write_text(
        json.dumps(
            [
                {
                    "table": {
                        "uid": "t1",
                        "table": [["", "2019"], ["revenue", "1,500.0"], ["cost", "600.0"]],
                    },
                    "paragraphs": [{"order": 1, "text": "Revenue grew."}],
                    "questions": [
                        {
                            "uid": "q1",
                            "question": "what is the cost to revenue ratio?",
                            "answer_type": "arithmetic",
                            "scale": "",
                            "derivation": "600.0 / 1,500.0",
                        },
                        {
                            "uid": "q2",
                            "question": "which grew?",
                            "answer_type": "span",
                            "scale": "",
                            "derivation": "",
                        },
                    ],
                }
            ]
        )
    )
    out = tmp_path / "converted.json"
    code, text, _ = run(capsys, "convert", "--in", str(raw), "--out", str(out))
    assert code == 0
    assert "converted 1 questions, skipped 1" in text
    assert "span: 1" in text
    records = read_dataset(str(out))
    assert records[0]["qa"]["program"] == "divide(600, 1500)"
    assert records[0]["qa"]["exe_ans"] == 0.4


def test_convert_rejects_bad_shape(capsys, tmp_path):
    raw = tmp_path / "bad.json"
    raw.write_text(json.dumps([{"no_table": True}]))
    code, _, err = run(capsys, "convert", "--in", str(raw), "--out", str(tmp_path / "o.json"))
    assert code == 4
    assert "SchemaError" in err


def test_stats_output(capsys, dataset_path):
    code, out, _ = run(capsys, "stats", "--in", dataset_path)
    assert code == 0
    stats = json.loads(out)
    assert stats["examples"] == 18
    assert sum(stats["support"].values()) == 18


def test_eval_perfect_predictions(capsys, dataset_path, tmp_path):
    records = read_dataset(dataset_path)
    preds = tmp_path / "preds.json"
    preds.write_text(
        json.dumps([{"id": r["id"], "predicted_program": r["qa"]["program"]} for r in records])
    )
    code, out, _ = run(capsys, "eval", "--gold", dataset_path, "--predictions", str(preds))
    assert code == 0
    summary = json.loads(out)
    assert summary["program_accuracy"] == summary["execution_accuracy"] == 1.0


def test_eval_unknown_id(capsys, dataset_path, tmp_path):
    preds = tmp_path / "preds.json"
    preds.write_text(json.dumps([{"id": "nope", "predicted_answer": 1.0}]))
    code, _, err = run(capsys, "eval", "--gold", dataset_path, "--predictions", str(preds))
    assert code == 4
    assert "UnknownExampleIdError" in err


def test_eval_malformed_gold(capsys, tmp_path):
    gold = tmp_path / "gold.json"
    gold.write_text("{not json")
    preds = tmp_path / "preds.json"
    preds.write_text("[]")
    code, _, err = run(capsys, "eval", "--gold", str(gold), "--predictions", str(preds))
    assert code == 2


# ---------------------------------------------------------------------------
# top level


def test_usage_errors_exit_2(capsys):
    assert run(capsys, )[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "split", "--in", "x.json")[0] == 2  # missing --out-dir


def test_help_exits_zero(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    assert "compile" in out

import json

import pytest

from hcproof.cli import run
from hcproof.compression import compress_with_trace, replay_trace
from hcproof.dlds import dumps, ground, loads
from hcproof.nd_proof import load_proof, prepare

PREMISES = "A1>A2,A1>(A2>A3),A2>(A3>A4),A3>(A4>A5)"


@pytest.fixture
def fib5(tmp_path):
    path = tmp_path / "fib5.json"
    assert run(["gen", "fib", "--n", "5", "-o", str(path)]) == 0
    return path


@pytest.fixture
def compressed(tmp_path, fib5):
    out = tmp_path / "fib5.dlds.json"
    trace = tmp_path / "trace.jsonl"
    assert run(["compress", "-i", str(fib5), "-o", str(out), "--trace", str(trace)]) == 0
    return out, trace


def test_pipeline_exit_zero(compressed, capsys):
    out, _ = compressed
    capsys.readouterr()
    assert run(["verify", "-i", str(out), "--delta", PREMISES]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["valid"] and report["conditions_failed"] == []


def test_verify_defaults_to_recorded_assumptions(compressed):
    out, _ = compressed
    assert run(["verify", "-i", str(out)]) == 0


def test_verify_wrong_delta(compressed, capsys):
    out, _ = compressed
    assert run(["verify", "-i", str(out), "--delta", "A1>A2"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["diagnostics"][0]["kind"] == "WrongAssumptions"


def test_verify_mutated(compressed, tmp_path, capsys):
    out, _ = compressed
    obj = json.loads(out.read_text())
    key = next(k for k, v in obj["dep"].items() if v != "lambda" and "1" in v and obj["colors"][k] == 0)
    bits = obj["dep"][key]
    i = bits.index("1")
    obj["dep"][key] = bits[:i] + "0" + bits[i + 1:]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(obj))
    capsys.readouterr()
    assert run(["verify", "-i", str(bad), "--delta", PREMISES]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["diagnostics"] and report["diagnostics"][0]["detail"]


def test_verify_tree_input(fib5):
    assert run(["verify", "-i", str(fib5), "--delta", PREMISES]) == 0


def test_trace_replay_matches_output(fib5, compressed):
    out, trace = compressed
    steps = [json.loads(line) for line in trace.read_text().splitlines()]
    d = prepare(load_proof(fib5.read_text()))
    assert dumps(ground(replay_trace(d, steps))) == dumps(loads(out.read_text()))


def test_deterministic_output(tmp_path, fib5, compressed):
    out, _ = compressed
    again = tmp_path / "again.json"
    assert run(["compress", "-i", str(fib5), "-o", str(again)]) == 0
    assert again.read_text() == out.read_text()


def test_mue_only(tmp_path, fib5):
    out = tmp_path / "mue.json"
    assert run(["compress", "-i", str(fib5), "-o", str(out), "--mue-only"]) == 0
    g = loads(out.read_text())
    expected = compress_with_trace(prepare(load_proof(fib5.read_text())), mue_only=True).dlds
    assert len(g.dlds.label) == len(expected.label) + 1


def test_missing_input():
    assert run(["compress", "-i", "/nonexistent/proof.json"]) == 2


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(["verify", "-i", str(p)]) == 2
    assert run(["stats", "-i", str(p)]) == 2


def test_invalid_proof(tmp_path):
    doc = {"nodes": [{"id": 0, "label": "A"}, {"id": 1, "label": "B"}, {"id": 2, "label": "C"}],
           "ded_edges": [[0, 2], [1, 2]], "discharge_edges": [], "root": 2}
    p = tmp_path / "p.json"
    p.write_text(json.dumps(doc))
    assert run(["compress", "-i", str(p)]) == 1


def test_usage_errors():
    assert run([]) == 2
    assert run(["gen", "fib"]) == 2
    assert run(["frobnicate"]) == 2


def test_nonham(tmp_path):
    g3 = tmp_path / "g3.json"
    g3.write_text('{"n": 3, "edges": [[1, 3], [1, 2]]}')
    proof = tmp_path / "g3proof.json"
    out = tmp_path / "g3dlds.json"
    assert run(["gen", "nonham", "--graph", str(g3), "-o", str(proof)]) == 0
    assert run(["compress", "-i", str(proof), "-o", str(out)]) == 0
    assert run(["verify", "-i", str(out)]) == 0
    k3 = tmp_path / "k3.json"
    k3.write_text(json.dumps({"n": 3, "edges": [[a, b] for a in (1, 2, 3) for b in (1, 2, 3) if a != b]}))
    assert run(["gen", "nonham", "--graph", str(k3)]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text('{"n": 2, "edges": [[1, 1]]}')
    assert run(["gen", "nonham", "--graph", str(broken)]) == 2


def test_stats(compressed, capsys):
    out, _ = compressed
    capsys.readouterr()
    assert run(["stats", "-i", str(out)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["height"] == 6
    assert stats["foundation_size"] == 13
    assert stats["within_bound"] and stats["size"] <= stats["bound"]


def test_export_dot(compressed, tmp_path):
    out, _ = compressed
    dot = tmp_path / "x.dot"
    assert run(["export-dot", "-i", str(out), "-o", str(dot)]) == 0
    text = dot.read_text()
    assert text.startswith("digraph dlds {")
    assert text.count("color=blue") == len(json.loads(out.read_text())["anc_edges"])


def test_bench(tmp_path):
    csv_path = tmp_path / "b.csv"
    assert run(["bench", "fib", "--from", "5", "--to", "6", "--repeats", "1", "-o", str(csv_path)]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("family,param,") and len(lines) == 3
    assert run(["bench", "fib", "--from", "6", "--to", "5", "-o", str(csv_path)]) == 0
    assert len(csv_path.read_text().splitlines()) == 1

import json
import subprocess
import sys

import numpy as np
import pytest

from pianist import cli, midi
from pianist import tokenizer as tk
from pianist.model import checkpoint

from conftest import random_piece


@pytest.fixture
def score_file(tmp_path):
    piece = random_piece(np.random.default_rng(5), n_notes=12)
    path = tmp_path / "score.mid"
    midi.write_midi_file(midi.to_midi(piece), path)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_render_stub(tmp_path, score_file):
    out = tmp_path / "perf.mid"
    assert run("render", "--model", "stub", "--in", score_file, "--out", out) == 0
    perf = midi.normalize(midi.read_midi_file(out), "performance")
    score = midi.normalize(midi.read_midi_file(score_file), "score")
    assert [n.pitch for n in perf.notes] == [n.pitch for n in score.notes]
    assert {n.velocity for n in perf.notes} == {64}
    meta = json.loads((tmp_path / "perf.mid.json").read_text())
    assert meta["seed"] == 0 and meta["notes"] == 12


def test_tokenize_detokenize_roundtrip(tmp_path, score_file, capsys):
    tok = tmp_path / "score.tok"
    assert run("tokenize", "--mode", "score", score_file, "--out", tok) == 0
    (seq,) = cli.read_token_file(tok)
    assert len(seq) == 96
    # at ppq 500 one tick is exactly 1 ms, so integer-ms tokens survive unchanged
    back = tmp_path / "back.mid"
    assert run("detokenize", "--in", tok, "--out", back, "--ppq", 500) == 0
    again = tk.encode(midi.normalize(midi.read_midi_file(back), "score"))
    assert np.array_equal(again, seq)
    # at the default ppq ticks are ~1.04 ms and timing tokens may move by one
    assert run("detokenize", "--in", tok, "--out", back) == 0
    coarse = tk.frames(tk.encode(midi.normalize(midi.read_midi_file(back), "score")))
    exact = tk.frames(seq)
    assert np.array_equal(coarse[:, [0, 2]], exact[:, [0, 2]])
    assert np.abs(coarse[:, [1, 3]] - exact[:, [1, 3]]).max() <= 1


def test_evaluate_self_comparison(tmp_path, score_file, capsys):
    assert run("evaluate", "--candidates", score_file, "--references", score_file) == 0
    text = capsys.readouterr().out
    assert "overall.js: 0.000000" in text
    prefix = tmp_path / "report" / "self"
    assert run("evaluate", "--candidates", score_file, "--references", score_file, "--out", prefix) == 0
    assert json.loads(prefix.with_suffix(".json").read_text())["overall_js"] == 0.0
    assert prefix.with_suffix(".csv").read_text().startswith("system,")


def test_human_baseline_cli(tmp_path, score_file, capsys):
    for piece in ("a", "b"):
        d = tmp_path / "groups" / piece
        d.mkdir(parents=True)
        for k in range(2):
            (d / f"p{k}.mid").write_bytes(score_file.read_bytes())
    assert run("human-baseline", "--groups", tmp_path / "groups") == 0
    assert "overall.js: 0.000000" in capsys.readouterr().out
    (tmp_path / "groups" / "c").mkdir()
    (tmp_path / "groups" / "c" / "p.mid").write_bytes(score_file.read_bytes())
    assert run("human-baseline", "--groups", tmp_path / "groups") == 1
    assert "SingletonGroup" in capsys.readouterr().err


def test_cost_report(capsys):
    assert run("cost-report", "--seq-len", 64, 1024, 4096, "--format", "json") == 0
    data = json.loads(capsys.readouterr().out)
    assert [r["ratio"] for r in data["attention"]] == [64, 64, 64]
    assert data["decoder_step"]["ratio_6_vs_2"] == 3
    assert abs(data["parameters"]["total"] - 135e6) <= 13.5e6


def test_tempo_map_cli(tmp_path, score_file):
    score = midi.normalize(midi.read_midi_file(score_file), "score")
    slow = midi.NormalizedPiece(tuple(n._replace(onset_ms=2 * n.onset_ms, duration_ms=2 * n.duration_ms)
                                      for n in score.notes))
    perf_path = tmp_path / "perf.mid"
    midi.write_midi_file(midi.to_midi(slow), perf_path)
    out = tmp_path / "mapped.mid"
    assert run("tempo-map", "--score", score_file, "--perf", perf_path, "--out", out) == 0
    mapped = midi.read_midi_file(out)
    assert mapped.tempo_events == ((0, 1_000_000),)


def test_shard_and_augment(tmp_path, score_file):
    assert run("shard", score_file, "--out", tmp_path / "shards") == 0
    assert (tmp_path / "shards" / "shard-00000.ptsh").exists()
    out = tmp_path / "aug.mid"
    assert run("augment", "--in", score_file, "--out", out, "--seed", 3) == 0
    assert json.loads((tmp_path / "aug.mid.json").read_text())["seed"] == 3


def test_corrupt_cli(tmp_path, score_file):
    out = tmp_path / "ex.json"
    assert run("corrupt", "--in", score_file, "--ratio", 0.3, "--seed", 1, "--out", out) == 0
    (ex,) = json.loads(out.read_text())["examples"]
    assert sum(ex["loss_mask"]) == int(0.3 * 96)


def test_train_toy_writes_checkpoint(tmp_path):
    out = tmp_path / "toy.ckpt"
    assert run("train-toy", "--out", out, "--steps", 5) == 0
    model = checkpoint.load(out)
    assert model.config.hidden_size == 32
    trace = (tmp_path / "toy.ckpt.trace.txt").read_text().splitlines()
    assert trace[0] == "# seed=0" and len(trace) == 6


def test_render_with_checkpoint(tmp_path, score_file):
    ckpt = tmp_path / "toy.ckpt"
    assert run("train-toy", "--out", ckpt, "--steps", 1) == 0
    out = tmp_path / "perf.mid"
    assert run("render", "--model", ckpt, "--in", score_file, "--out", out, "--greedy") == 0
    assert len(midi.read_midi_file(out).notes) == 12


def test_seed_from_environment(tmp_path, score_file, monkeypatch):
    monkeypatch.setenv("PIANIST_SEED", "17")
    out = tmp_path / "perf.mid"
    assert run("render", "--in", score_file, "--out", out) == 0
    assert json.loads((tmp_path / "perf.mid.json").read_text())["seed"] == 17
    monkeypatch.setenv("PIANIST_SEED", "x")
    assert run("render", "--in", score_file, "--out", out) == 1


def test_exit_codes(tmp_path, capsys):
    assert run("render", "--in", tmp_path / "missing.mid", "--out", tmp_path / "o.mid") == 1
    assert "InputError" in capsys.readouterr().err
    bad = tmp_path / "bad.mid"
    bad.write_bytes(b"not midi at all")
    assert run("render", "--in", bad, "--out", tmp_path / "o.mid") == 1
    assert "MalformedHeader" in capsys.readouterr().err
    assert run("no-such-command") == 2
    assert run("render") == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pianist", "cost-report"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "params.total\t130982400" in proc.stdout


def test_every_artifact_records_seed(tmp_path, score_file, capsys):
    assert run("tokenize", score_file, "--seed", 4, "--out", tmp_path / "t.tok") == 0
    assert "seed=4" in (tmp_path / "t.tok").read_text().splitlines()[0]
    assert run("detokenize", "--in", tmp_path / "t.tok", "--out", tmp_path / "d.mid", "--seed", 4) == 0
    assert json.loads((tmp_path / "d.mid.json").read_text())["seed"] == 4
    assert run("shard", score_file, "--out", tmp_path / "s", "--seed", 4) == 0
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["shards"] == ["shard-00000.ptsh"]
    assert run("cost-report", "--seed", 4) == 0
    assert capsys.readouterr().out.startswith("# seed=4")

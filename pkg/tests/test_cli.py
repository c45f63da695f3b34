import json
import logging

import pytest

from mvgpt.cli import run

TINY = ["d_model=16", "heads=2", "text_layers=1", "spatial_layers=1", "temporal_layers=1", "fusion_layers=1",
        "decoder_layers=1", "tubelet_h=8", "tubelet_w=8", "tubelet_t=2", "max_frames=8", "max_text_len=16",
        "max_gen_len=8", "nce_text_layers=1", "total_steps=4", "warmup_steps=1", "batch_size=2"]


def sets(*pairs):
    return [a for p in pairs for a in ("--set", p)]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert run(["synth", "--seed", "3", "--n", "6", "--out", str(d / "data.jsonl")]) == 0
    args = ["pretrain", "--seed", "3", "--data", str(d / "data.jsonl"), "--out", str(d / "pre.ckpt"),
            "--vocab", str(d / "vocab.txt"), "--log", str(d / "loss.tsv"), *sets(*TINY)]
    assert run(args) == 0
    return d


def test_eval_identical_files(tmp_path, capsys):
    recs = [{"id": "a", "caption": "the red ball rolls"}, {"id": "b", "caption": "a cat sits on the mat"}]
    path = tmp_path / "x.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert run(["eval", "--hyps", str(path), "--refs", str(path)]) == 1  # hyps need a hypothesis field
    capsys.readouterr()
    path.write_text("".join(json.dumps({"id": r["id"], "hypothesis": r["caption"]}) + "\n" for r in recs))
    assert run(["eval", "--hyps", str(path), "--refs", str(path)]) == 0
    lines = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert float(lines["BLEU-4"]) == 1.0 and float(lines["ROUGE-L"]) == 1.0 and float(lines["CIDEr"]) == 10.0
    assert set(lines) == {"BLEU-1", "BLEU-4", "ROUGE-L", "CIDEr"}


def test_eval_single_input_file(tmp_path, capsys):
    path = tmp_path / "in.jsonl"
    path.write_text(json.dumps({"id": 1, "hypothesis": "a b c d", "references": ["a b c d", "x"]}) + "\n")
    assert run(["eval", "--input", str(path)]) == 0
    assert "ROUGE-L\t1.0" in capsys.readouterr().out


def test_usage_and_runtime_exit_codes(tmp_path, capsys):
    assert run([]) == 2
    assert run(["frobnicate"]) == 2
    assert run(["caption", "--beam", "x"]) == 2
    assert run(["eval"]) == 1
    assert run(["pretrain", "--data", str(tmp_path / "nope.jsonl"), "--out", "x", "--vocab", "y"]) == 1
    assert "nope.jsonl" in capsys.readouterr().err


def test_unknown_config_key_is_runtime_error(trained, capsys):
    d = trained
    args = ["pretrain", "--data", str(d / "data.jsonl"), "--out", str(d / "z.ckpt"), "--vocab", str(d / "z.txt"),
            "--set", "learning_rate=1"]
    assert run(args) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run(["synth", "--seed", "9", "--n", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_extract(tmp_path):
    utts = [{"text": "Cut the onion.", "start": 0, "end": 3}, {"text": "Then fry it.", "start": 3, "end": 9},
            {"text": "Add salt.", "start": 9, "end": 11}, {"text": "Serve hot.", "start": 11, "end": 14}]
    src = tmp_path / "t.jsonl"
    src.write_text(json.dumps({"id": "v1", "utterances": utts}) + "\n")
    out = tmp_path / "trip.jsonl"
    assert run(["extract", "--transcripts", str(src), "--out", str(out), "--seed", "1"]) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["utterances"][-1]["text"] for r in recs] == [u["text"] for u in utts[1:]]
    assert recs[2]["utterances"][0]["text"] == "Then fry it."
    assert all(r["id"].startswith("v1") for r in recs)
    again = tmp_path / "again.jsonl"
    run(["extract", "--transcripts", str(src), "--out", str(again), "--seed", "1"])
    assert again.read_bytes() == out.read_bytes()


def test_pretrain_outputs(trained):
    rows = (trained / "loss.tsv").read_text().splitlines()
    assert rows[0] == "step\tlr\ttotal" and [r.split("\t")[0] for r in rows[1:]] == ["1", "2", "3", "4"]
    assert (trained / "pre.ckpt").read_bytes()[:8] == b"MVGPTCK1"


def test_pretrain_is_deterministic(trained, tmp_path):
    args = ["pretrain", "--seed", "3", "--data", str(trained / "data.jsonl"), "--out", str(tmp_path / "p.ckpt"),
            "--vocab", str(tmp_path / "v.txt"), *sets(*TINY)]
    assert run(args) == 0
    assert (tmp_path / "p.ckpt").read_bytes() == (trained / "pre.ckpt").read_bytes()


def test_finetune_streams_logged(trained, tmp_path, caplog):
    d = trained
    with caplog.at_level(logging.INFO, logger="mvgpt"):
        code = run(["-v", "finetune", "--checkpoint", str(d / "pre.ckpt"), "--vocab", str(d / "vocab.txt"),
                    "--data", str(d / "data.jsonl"), "--out", str(tmp_path / "ft.ckpt"), "--set", "total_steps=2"])
    assert code == 0
    assert "encoder text starts with CLS1, decoder starts with BOS2" in caplog.text
    assert "total_steps = 2" in caplog.text


def test_caption_beam1_equals_greedy(trained, tmp_path):
    d = trained
    base = ["caption", "--checkpoint", str(d / "pre.ckpt"), "--vocab", str(d / "vocab.txt"), "--data", str(d / "data.jsonl")]
    assert run([*base, "--out", str(tmp_path / "b1"), "--beam", "1"]) == 0
    assert run([*base, "--out", str(tmp_path / "g"), "--greedy"]) == 0
    assert (tmp_path / "b1").read_bytes() == (tmp_path / "g").read_bytes()
    assert run([*base, "--out", str(tmp_path / "b5")]) == 0
    assert len((tmp_path / "b5").read_text().splitlines()) == 6


def test_caption_vocab_mismatch(trained, tmp_path, capsys):
    bad = tmp_path / "v.txt"
    bad.write_text("\n".join(f"t{i}" for i in range(3)) + "\n")
    code = run(["caption", "--checkpoint", str(trained / "pre.ckpt"), "--vocab", str(bad),
                "--data", str(trained / "data.jsonl"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_selfcheck_passes(capsys):
    assert run(["selfcheck"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 4 and all(line.startswith("PASS") for line in out)

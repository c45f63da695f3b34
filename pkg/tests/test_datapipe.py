import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvgpt import datapipe as D
from mvgpt.datapipe import TimedUtterance as U
from mvgpt.tokenizer import build_vocab


def hand_transcript():
    return [U("s1", 0, 2), U("s2", 2, 4.5), U("s3", 4.5, 9), U("s4", 9, 10)]


def random_transcript(rng, n):
    t, out = float(rng.uniform(0, 3)), []
    for k in range(n):
        t += float(rng.choice([0.0, rng.uniform(0, 1.5)]))
        dur = float(rng.uniform(0.3, 6.0))
        out.append(U(f"utt {k}", t, t + dur))
        t += dur
    return out


def test_hand_traced_expansion():
    trips = D.extract_triplets(hand_transcript())
    seeded_at_s3 = trips[2]
    assert [u.text for u in seeded_at_s3.present] == ["s2", "s3"]
    assert seeded_at_s3.U == "s2 s3"
    assert seeded_at_s3.W == "s4"
    assert seeded_at_s3.span == (2, 9)


def test_head_clip_kept_unless_dropping():
    trips = D.extract_triplets(hand_transcript())
    assert trips[0].span == (0, 2) and trips[0].W == "s2"
    dropped = D.extract_triplets(hand_transcript(), drop_short=True)
    assert all(t.span[1] - t.span[0] >= 5 for t in dropped)
    assert len(dropped) < len(trips)


def test_last_utterance_never_seeds():
    assert len(D.extract_triplets(hand_transcript())) == 3
    assert D.extract_triplets([U("only", 0, 9)]) == []


def test_transcript_order_checked():
    with pytest.raises(ValueError, match="sorted"):
        D.extract_triplets([U("b", 3, 4), U("a", 0, 1)])
    with pytest.raises(ValueError, match="overlap"):
        D.extract_triplets([U("a", 0, 2), U("b", 1, 3)])


def test_utterance_times_validated():
    with pytest.raises(ValueError):
        U("x", 2, 2)
    with pytest.raises(ValueError):
        U("x", -1, 2)


def test_frame_times_rule():
    assert D.frame_times(2, 9, fps=1, multiple=1) == [2, 3, 4, 5, 6, 7, 8]
    padded = D.frame_times(2, 9, fps=1, multiple=4)
    assert padded == [2, 3, 4, 5, 6, 7, 8, 8]
    assert D.frame_times(0, 0.5, fps=1, multiple=2) == [0, 0]


def test_literal_frames_from_source():
    trips = D.extract_triplets(hand_transcript(), tubelet_t=2, frame_source=lambda t: np.full((4, 4, 3), t / 10))
    t = trips[2]
    assert t.mode == "literal" and t.frames.shape == (8, 4, 4, 3)
    np.testing.assert_array_equal(t.frames[-1], t.frames[-2])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.sampled_from([1, 2, 4]), st.sampled_from([0.5, 1.0, 2.0]))
def test_extraction_invariants(seed, n, tub, fps):
    tr = random_transcript(np.random.default_rng(seed), n)
    trips = D.extract_triplets(tr, fps=fps, tubelet_t=tub)
    assert len(trips) == max(0, n - 1)
    for i, t in enumerate(trips):
        start, end = t.span
        assert end - start >= 5.0 or t.present[0] is tr[0]
        j = tr.index(t.present[0])
        assert t.present == tr[j : i + 1]
        assert t.future is tr[i + 1]
        if j < i:
            # growth stops as soon as the threshold is reached
            assert tr[i].end - tr[j + 1].start < 5.0
        n_frames = max(1, math.floor((end - start) * fps))
        assert len(t.frame_times) == math.ceil(n_frames / tub) * tub


# ---------------------------------------------------------------- synthetic data


def test_synth_is_deterministic(tmp_path):
    a, ca = D.synth_dataset(5, 10)
    b, cb = D.synth_dataset(5, 10)
    D.write_jsonl(tmp_path / "a.jsonl", a)
    D.write_jsonl(tmp_path / "b.jsonl", b)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert ca == cb
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.frames, y.frames)


def test_synth_color_word_correlation_is_exact():
    g = D.Grammar()
    trips, _ = D.synth_dataset(1, 64)
    for t in trips:
        _, cls = D.synth_frames(t.frame_seed, 4)
        word = g.content_words[cls]
        assert word in t.W.split() and t.caption.split()[-1] == word
        assert D.content_class(t) == cls
        # the class colour fills a whole patch
        assert np.any(np.all(np.isclose(t.frames[0], g.content_colors[cls]), axis=-1))


def test_linear_probe_on_mean_colour():
    trips, _ = D.synth_dataset(2, 64)
    x = np.stack([t.frames.mean(axis=(0, 1, 2)) for t in trips])
    y = np.array([D.content_class(t) for t in trips])
    # nearest class mean is a linear classifier: argmax_c (mu_c . x - |mu_c|^2 / 2)
    mu = np.stack([x[y == c].mean(axis=0) for c in range(4)])
    pred = np.argmax(x @ mu.T - 0.5 * (mu**2).sum(axis=1), axis=1)
    assert np.mean(pred == y) == 1.0


def test_synth_triplets_satisfy_span_rule():
    for t in D.synth_dataset(3, 20)[0]:
        assert t.span[1] - t.span[0] >= 5.0
        assert t.future.start >= t.present[-1].end


def test_synth_needs_one_triplet():
    with pytest.raises(ValueError):
        D.synth_dataset(0, 0)


def test_to_examples_targets():
    trips, corpus = D.synth_dataset(4, 3)
    v = build_vocab(corpus)
    fut = D.to_examples(trips, v)
    cap = D.to_examples(trips, v, target="caption")
    assert fut[0].w == [v.id(w) for w in trips[0].W.split()]
    assert cap[0].w == [v.id(w) for w in trips[0].caption.split()]
    assert fut[0].u == cap[0].u == [v.id(w) for w in trips[0].U.split()]


# ---------------------------------------------------------------- JSONL


def test_jsonl_round_trip(tmp_path):
    trips, _ = D.synth_dataset(6, 5)
    path = tmp_path / "d.jsonl"
    D.write_jsonl(path, trips)
    back = D.read_jsonl(path)
    for a, b in zip(trips, back):
        assert (a.id, a.U, a.W, a.caption, a.frame_seed, a.frame_times) == (b.id, b.U, b.W, b.caption, b.frame_seed, b.frame_times)
        assert a.present == b.present and a.future == b.future
        np.testing.assert_array_equal(a.frames, b.frames)
    rec = json.loads(path.read_text().splitlines()[0])
    assert {"id", "mode", "frame_seed", "frame_times", "utterances"} <= set(rec)


def test_literal_pixels_survive_exactly(tmp_path):
    rng = np.random.default_rng(7)
    trips = D.extract_triplets(hand_transcript(), frame_source=lambda t: rng.random((2, 2, 3)))
    path = tmp_path / "lit.jsonl"
    D.write_jsonl(path, trips)
    for a, b in zip(trips, D.read_jsonl(path)):
        assert b.mode == "literal"
        assert np.array_equal(a.frames, b.frames)


def test_malformed_line_reports_line_number(tmp_path):
    trips, _ = D.synth_dataset(8, 4)
    path = tmp_path / "bad.jsonl"
    D.write_jsonl(path, trips)
    lines = path.read_text().splitlines()
    lines[2] = lines[2][:-5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="line 3"):
        D.read_jsonl(path)


def test_unknown_mode_rejected(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"id": "x", "mode": "video", "frame_times": [0], "utterances": [
        {"text": "a", "start": 0, "end": 1}, {"text": "b", "start": 1, "end": 2}]}) + "\n")
    with pytest.raises(ValueError, match="line 1"):
        D.read_jsonl(path)


def test_read_transcripts(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps({"id": "v1", "utterances": [{"text": "a", "start": 0, "end": 1}]}) + "\n\n")
    assert D.read_transcripts(path) == [("v1", [U("a", 0, 1)])]

"""Triplet extraction from timed transcripts, synthetic clips, and JSONL dataset I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .objectives import Example
from .tokenizer import Vocabulary, encode_ids

MIN_SPAN = 5.0


@dataclass(frozen=True)
class TimedUtterance:
    text: str
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start >= 0:
            raise ValueError(f"bad utterance times [{self.start}, {self.end}] for {self.text!r}")


@dataclass
class ClipTriplet:
    id: str
    present: list[TimedUtterance]
    future: TimedUtterance
    frame_times: list[float]
    frames: np.ndarray | None = None
    frame_seed: int | None = None
    caption: str | None = None
    mode: str = "synthetic"
    patch: int = 8

    @property
    def U(self) -> str:
        return " ".join(u.text for u in self.present)

    @property
    def W(self) -> str:
        return self.future.text

    @property
    def span(self) -> tuple[float, float]:
        return self.present[0].start, self.present[-1].end


def check_transcript(transcript: Sequence[TimedUtterance]) -> None:
    for prev, cur in zip(transcript, transcript[1:]):
        if cur.start < prev.start:
            raise ValueError(f"transcript not sorted: {cur.text!r} starts before {prev.text!r}")
        if cur.start < prev.end:
            raise ValueError(f"utterances overlap: {prev.text!r} and {cur.text!r}")


def frame_times(start: float, end: float, fps: float = 1.0, multiple: int = 1) -> list[float]:
    """Sample times over ``[start, end]``, padded to a multiple by repeating the last."""
    n = max(1, math.floor((end - start) * fps))
    times = [start + k / fps for k in range(n)]
    while len(times) % multiple:
        times.append(times[-1])
    return times


def extract_triplets(
    transcript: Sequence[TimedUtterance],
    fps: float = 1.0,
    tubelet_t: int = 1,
    drop_short: bool = False,
    frame_source: Callable[[float], np.ndarray] | None = None,
    id_prefix: str = "clip",
) -> list[ClipTriplet]:
    """One triplet per seed utterance that has a successor.

    The clip grows backwards one whole utterance at a time until it spans at
    least ``MIN_SPAN`` seconds or reaches the first utterance. Clips that
    stay short are kept unless ``drop_short``.
    """
    transcript = list(transcript)
    check_transcript(transcript)
    out = []
    for i in range(len(transcript) - 1):
        j = i
        while transcript[i].end - transcript[j].start < MIN_SPAN and j > 0:
            j -= 1
        present = transcript[j : i + 1]
        start, end = present[0].start, present[-1].end
        if drop_short and end - start < MIN_SPAN:
            continue
        times = frame_times(start, end, fps, tubelet_t)
        frames = None if frame_source is None else np.stack([frame_source(t) for t in times])
        mode = "synthetic" if frames is None else "literal"
        out.append(ClipTriplet(f"{id_prefix}-{i}", present, transcript[i + 1], times, frames, mode=mode))
    return out


# ----------------------------------------------------------------------------
# synthetic corpus

CONTENT_WORDS = ("tomato", "lettuce", "blueberry", "lemon")
CONTENT_COLORS = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])

_STARTS = ("first", "now", "then", "next", "after that", "okay")
_ACTIONS = ("wash", "chop", "slice", "peel", "rinse", "dice", "grab", "cut")
_OBJECTS = ("board", "knife", "bowl", "pan", "pot", "towel", "plate", "spoon")
_FUTURE = ("now add the {w} to the bowl", "then we slice the {w}", "put the {w} on the plate", "next chop the {w}")


@dataclass
class Grammar:
    starts: Sequence[str] = _STARTS
    actions: Sequence[str] = _ACTIONS
    objects: Sequence[str] = _OBJECTS
    future: Sequence[str] = _FUTURE
    content_words: Sequence[str] = CONTENT_WORDS
    content_colors: np.ndarray = field(default_factory=lambda: CONTENT_COLORS.copy())

    def present(self, rng: np.random.Generator) -> str:
        return f"{rng.choice(self.starts)} {rng.choice(self.actions)} the {rng.choice(self.objects)}"


def synth_frames(
    frame_seed: int,
    n_frames: int,
    height: int = 16,
    width: int = 16,
    patch: int = 8,
    grammar: Grammar | None = None,
) -> tuple[np.ndarray, int]:
    """Noise frames with one class-coloured square; returns ``(frames, class index)``.

    The class and the patch location are drawn from ``frame_seed`` alone.
    """
    g = grammar or Grammar()
    rng = np.random.default_rng(frame_seed)
    cls = int(rng.integers(len(g.content_words)))
    frames = rng.uniform(0.0, 0.4, size=(n_frames, height, width, 3))
    r0 = int(rng.integers(height // patch)) * patch
    c0 = int(rng.integers(width // patch)) * patch
    frames[:, r0 : r0 + patch, c0 : c0 + patch, :] = g.content_colors[cls]
    return frames, cls


def synth_dataset(
    seed: int,
    n_triplets: int,
    grammar: Grammar | None = None,
    n_frames: int = 4,
    height: int = 16,
    width: int = 16,
    patch: int = 8,
) -> tuple[list[ClipTriplet], list[str]]:
    """Deterministic triplets whose future utterance names the patch colour's word.

    Each triplet also carries the caption ``"the cook adds the <word>"``.
    Returns the triplets and the text corpus for vocabulary building.
    """
    if n_triplets < 1:
        raise ValueError("n_triplets must be >= 1")
    g = grammar or Grammar()
    rng = np.random.default_rng(seed)
    out, corpus = [], []
    for k in range(n_triplets):
        frame_seed = int(rng.integers(2**31))
        frames, cls = synth_frames(frame_seed, n_frames, height, width, patch, g)
        word = g.content_words[cls]
        t0 = float(rng.integers(0, 60))
        u1 = TimedUtterance(g.present(rng), t0, t0 + 2.5)
        u2 = TimedUtterance(g.present(rng), t0 + 2.5, t0 + 5.5)
        w = TimedUtterance(str(rng.choice(g.future)).format(w=word), t0 + 5.5, t0 + 8.0)
        caption = f"the cook adds the {word}"
        times = [u1.start + i * (u2.end - u1.start) / n_frames for i in range(n_frames)]
        out.append(ClipTriplet(f"synth-{seed}-{k}", [u1, u2], w, times, frames, frame_seed, caption, patch=patch))
        corpus += [u1.text, u2.text, w.text, caption]
    return out, corpus


def content_class(triplet: ClipTriplet, grammar: Grammar | None = None) -> int:
    g = grammar or Grammar()
    words = set(triplet.W.split())
    return next(i for i, w in enumerate(g.content_words) if w in words)


# ----------------------------------------------------------------------------
# tokenisation bridge


def to_examples(triplets: Sequence[ClipTriplet], vocab: Vocabulary, max_len: int = 32, target: str = "future") -> list[Example]:
    """Tokenise triplets. ``target="caption"`` puts the caption where W would go."""
    out = []
    for t in triplets:
        if t.frames is None:
            raise ValueError(f"triplet {t.id} has no frames")
        w_text = t.W if target == "future" else (t.caption if t.caption is not None else t.W)
        out.append(Example(t.frames, encode_ids(vocab, t.U, max_len=max_len), encode_ids(vocab, w_text, max_len=max_len), t.id))
    return out


# ----------------------------------------------------------------------------
# JSONL


def _record(t: ClipTriplet) -> dict:
    rec = {"id": t.id, "mode": t.mode}
    if t.mode == "synthetic":
        rec["frame_seed"] = t.frame_seed
        if t.frames is not None:
            rec["frame_shape"] = list(t.frames.shape[1:3])
            rec["patch"] = t.patch
    else:
        rec["frames"] = t.frames.tolist()
    rec["frame_times"] = list(t.frame_times)
    rec["utterances"] = [{"text": u.text, "start": u.start, "end": u.end} for u in t.present + [t.future]]
    if t.caption is not None:
        rec["caption"] = t.caption
    return rec


def write_jsonl(path: str | Path, triplets: Sequence[ClipTriplet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(_record(t)) + "\n")


def _parse(rec: dict) -> ClipTriplet:
    utts = [TimedUtterance(u["text"], float(u["start"]), float(u["end"])) for u in rec["utterances"]]
    if len(utts) < 2:
        raise ValueError("a record needs at least one present and one future utterance")
    mode = rec["mode"]
    times = [float(x) for x in rec["frame_times"]]
    frames, seed = None, None
    if mode == "synthetic":
        seed = rec.get("frame_seed")
        if seed is not None and "frame_shape" in rec:
            h, w = rec["frame_shape"]
            frames, _ = synth_frames(int(seed), len(times), h, w, int(rec.get("patch", 8)))
    elif mode == "literal":
        frames = np.asarray(rec["frames"], dtype=np.float64)
        if frames.ndim != 4:
            raise ValueError(f"literal frames must be 4-D, got shape {frames.shape}")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ClipTriplet(
        str(rec["id"]), utts[:-1], utts[-1], times, frames, seed, rec.get("caption"), mode, int(rec.get("patch", 8))
    )


def read_jsonl(path: str | Path) -> list[ClipTriplet]:
    """Parse every line before returning; any bad line aborts the whole load."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(_parse(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: malformed record ({exc})") from exc
    return out


def read_transcripts(path: str | Path) -> list[tuple[str, list[TimedUtterance]]]:
    """Transcript JSONL: ``{"id": ..., "utterances": [{"text", "start", "end"}, ...]}`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                utts = [TimedUtterance(u["text"], float(u["start"]), float(u["end"])) for u in rec["utterances"]]
                out.append((str(rec["id"]), utts))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: malformed transcript ({exc})") from exc
    return out

"""Intelligibility and listening-test statistics.

Word accuracy is ``max(0, 1 - WER)`` from a minimum-edit word alignment, run
against a pluggable ASR adapter (external command, HTTP service, or an
in-process mock). All ``mean +/- half-width`` reporting uses a normal 95%
confidence interval by default, with a t-multiplier flag for small samples.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import string
import subprocess
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import (
    AsrTransportError,
    EmptyInput,
    EmptyReference,
    InvalidScore,
    LengthMismatch,
)

Z_95 = 1.96
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


# --- statistics ---

def mean_ci(values: Iterable[float], use_t: bool = False) -> tuple[float, float]:
    """Arithmetic mean and 95% CI half-width (1.96 * s / sqrt(n), s with n-1).

    A single value has zero half-width. ``use_t`` swaps the normal multiplier
    for Student's t at n-1 degrees of freedom.
    """
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("no values")
    if arr.size == 1:
        return float(arr[0]), 0.0
    mult = Z_95
    if use_t:
        from scipy import stats
        mult = float(stats.t.ppf(0.975, arr.size - 1))
    half = mult * arr.std(ddof=1) / np.sqrt(arr.size)
    return float(arr.mean()), float(half)


def format_pm(mean: float, half_width: float, decimals: int) -> str:
    """Fixed-point 'm ± h' (Python's default half-even float formatting)."""
    return f"{mean:.{decimals}f} ± {half_width:.{decimals}f}"


# --- word accuracy ---

def tokenize_words(text: str) -> list[str]:
    """Case-fold, strip punctuation, split on whitespace."""
    words = [w.translate(_PUNCT_TABLE) for w in text.lower().split()]
    return [w for w in words if w]


def _edit_distance(ref: list[str], hyp: list[str]) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i]
        for j, h in enumerate(hyp, 1):
            cur.append(min(prev[j] + 1,          # deletion
                           cur[j - 1] + 1,       # insertion
                           prev[j - 1] + (r != h)))
        prev = cur
    return prev[-1]


def word_accuracy(ref: str, hyp: str) -> float:
    """max(0, (N - S - D - I) / N) over the minimum-edit word alignment."""
    ref_words = tokenize_words(ref)
    if not ref_words:
        raise EmptyReference(repr(ref))
    distance = _edit_distance(ref_words, tokenize_words(hyp))
    return max(0.0, 1.0 - distance / len(ref_words))


# --- ASR adapters ---

AsrAdapter = Callable[[str], str]
"""wav path -> hypothesis transcript; raises AsrTransportError on failure."""


@dataclass
class CommandAsr:
    """Runs ``<cmd...> <wav_path>``; the hypothesis is the process stdout."""

    command: list[str]
    timeout_s: float = 120.0

    def __call__(self, wav_path: str) -> str:
        try:
            proc = subprocess.run(self.command + [str(wav_path)],
                                  capture_output=True, text=True, timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AsrTransportError(str(exc)) from exc
        if proc.returncode != 0:
            raise AsrTransportError(f"exit {proc.returncode}: {proc.stderr.strip()}")
        return proc.stdout.strip()


@dataclass
class HttpAsr:
    """POSTs WAV bytes and reads the JSON ``transcript`` field."""

    url: str
    timeout_s: float = 120.0
    transport: object = None  # injectable for tests

    def __call__(self, wav_path: str) -> str:
        import httpx
        try:
            with httpx.Client(transport=self.transport, timeout=self.timeout_s) as client:
                response = client.post(
                    self.url,
                    content=Path(wav_path).read_bytes(),
                    headers={"content-type": "audio/wav"},
                )
            response.raise_for_status()
            return str(response.json()["transcript"])
        except AsrTransportError:
            raise
        except Exception as exc:
            raise AsrTransportError(str(exc)) from exc


@dataclass
class MockAsr:
    """Deterministic test adapter: wav path -> transcript via a callable."""

    fn: Callable[[str], str]

    def __call__(self, wav_path: str) -> str:
        return self.fn(str(wav_path))


# --- intelligibility evaluation ---

@dataclass
class SentenceScore:
    ref: str
    hyp: str
    accuracy: float
    failed: bool = False


@dataclass
class WordAccuracyResult:
    per_sentence: list[SentenceScore]
    mean: float
    ci95: float

    @property
    def n_failed(self) -> int:
        return sum(s.failed for s in self.per_sentence)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "reference", "hypothesis", "accuracy", "failed"])
            for i, s in enumerate(self.per_sentence):
                writer.writerow([i, s.ref, s.hyp, f"{s.accuracy:.6f}", int(s.failed)])


def intelligibility_eval(sentences: list[str], wavs: list[str | Path],
                         asr: AsrAdapter, parallelism: int = 1) -> WordAccuracyResult:
    """Run ASR on each wav and score word accuracy against its reference.

    Transport failures score 0 and are flagged rather than aborting the run.
    """
    if len(sentences) != len(wavs):
        raise LengthMismatch(f"{len(sentences)} sentences vs {len(wavs)} wavs")

    def recognize(wav) -> tuple[str, bool]:
        try:
            return asr(str(wav)), False
        except AsrTransportError:
            return "", True

    if parallelism > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as pool:
            outputs = list(pool.map(recognize, wavs))
    else:
        outputs = [recognize(w) for w in wavs]
    scores = []
    for ref, (hyp, failed) in zip(sentences, outputs):
        accuracy = 0.0 if failed else word_accuracy(ref, hyp)
        scores.append(SentenceScore(ref, hyp, accuracy, failed))
    mean, ci = mean_ci([s.accuracy for s in scores])
    return WordAccuracyResult(scores, mean, ci)


# --- MOS aggregation ---

@dataclass
class RatingRecord:
    """One listener's 0-5 confidence rating of one stimulus."""

    session_id: str
    listener_id: str
    utterance_id: str
    emotion: str
    kind: str            # original | synthesized
    score: float
    timestamp: float     # UTC seconds


@dataclass
class MosStats:
    per_emotion: dict[str, tuple[float, float, int]] = field(default_factory=dict)

    def format_table(self) -> str:
        out = io.StringIO()
        out.write(f"{'Emotion':<12} {'Confidence':>14} {'n':>6}\n")
        for emotion in sorted(self.per_emotion):
            mean, ci, n = self.per_emotion[emotion]
            out.write(f"{emotion.capitalize():<12} {format_pm(mean, ci, 2):>14} {n:>6}\n")
        return out.getvalue()

    def to_dict(self) -> dict:
        return {emotion: {"mean": m, "ci95": c, "n": n}
                for emotion, (m, c, n) in self.per_emotion.items()}


def validate_score(score, allow_half: bool = False) -> float:
    """0-5 integer scale (optionally half steps); anything else is InvalidScore."""
    try:
        value = float(score)
    except (TypeError, ValueError):
        raise InvalidScore(repr(score)) from None
    if not 0 <= value <= 5:
        raise InvalidScore(f"{score!r} outside 0..5")
    step = 0.5 if allow_half else 1.0
    if (value / step) != int(value / step):
        raise InvalidScore(f"{score!r} not a multiple of {step}")
    return value


def mos_report(ratings: Iterable[RatingRecord], allow_half: bool = False) -> MosStats:
    """Group ratings by emotion and compute mean ± 95% CI per group."""
    groups: dict[str, list[float]] = {}
    for record in ratings:
        value = validate_score(record.score, allow_half)
        groups.setdefault(record.emotion, []).append(value)
    stats = MosStats()
    for emotion, values in groups.items():
        mean, ci = mean_ci(values)
        stats.per_emotion[emotion] = (mean, ci, len(values))
    return stats


def ratings_from_csv(text: str) -> list[RatingRecord]:
    """Parse the MOS service export format back into rating records."""
    records = []
    for row in csv.DictReader(io.StringIO(text)):
        records.append(RatingRecord(
            session_id=row["session_id"],
            listener_id=row["listener_id"],
            utterance_id=row["utterance_id"],
            emotion=row["emotion"],
            kind=row["kind"],
            score=float(row["score"]),
            timestamp=float(row["timestamp"]),
        ))
    return records


def harvard_sentences(count: int | None = 100) -> list[str]:
    """The bundled phonetically balanced test sentences (lists 1-10)."""
    text = resources.files("emotts").joinpath("data/harvard_sentences.txt").read_text("utf-8")
    lines = [line for line in text.splitlines() if line.strip()]
    return lines if count is None else lines[:count]


def format_accuracy_table(rows: list[tuple[str, float, float]], decimals: int = 3) -> str:
    """Rows of (name, mean, ci) as a fixed-point plus-minus text table."""
    width = max((len(name) for name, _, _ in rows), default=10) + 2
    out = io.StringIO()
    out.write(f"{'Model':<{width}} Word Accuracy\n")
    for name, mean, ci in rows:
        out.write(f"{name:<{width}} {format_pm(mean, ci, decimals)}\n")
    return out.getvalue()

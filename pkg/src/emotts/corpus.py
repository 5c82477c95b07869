"""Corpus ingestion: manifests, transcript normalization/encoding, exclusion lists, splits.

Two on-disk layouts are understood:

* neutral corpus: ``root/metadata.csv`` with ``id|transcript`` rows and a
  ``root/wavs/<id>.wav`` directory (the single-speaker pretraining layout);
* emotional corpus: ``root/<speaker>/<emotion>_<session>/`` directories, each
  holding ``<id>.wav`` files plus a ``transcript.txt`` of ``id|text`` lines.
  Utterances manually edited to cut non-verbal expressions live alongside the
  raw file as ``<id>_edited.wav``.
"""

from __future__ import annotations

import csv
import io
import logging
import unicodedata
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import (
    EmptyAfterNormalization,
    HoldoutTooLarge,
    MissingIndex,
    MissingRoot,
    UnencodableSymbol,
    UnknownEmotion,
)

log = logging.getLogger(__name__)

EMOTIONS = ("neutral", "amused", "angry", "disgusted", "sleepy")
NVE_STATUSES = ("clean", "nve_removed", "excluded")
EXCLUSION_REASONS = ("nve", "trimmed_nve", "other")

PAD = "<pad>"
EOS = "<eos>"


@dataclass(frozen=True)
class Charset:
    """Ordered symbol table: PAD, EOS, then literal characters."""

    symbols: tuple[str, ...]

    @classmethod
    def default(cls) -> "Charset":
        chars = " " + "abcdefghijklmnopqrstuvwxyz" + "',.?!"
        return cls((PAD, EOS) + tuple(chars))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def text_symbols(self) -> tuple[str, ...]:
        return self.symbols[2:]

    @cached_property
    def _ids(self) -> dict[str, int]:
        return {ch: i for i, ch in enumerate(self.symbols) if i >= 2}

    def char_id(self, ch: str) -> int:
        try:
            return self._ids[ch]
        except KeyError:
            raise UnencodableSymbol(repr(ch)) from None


def normalize_transcript(text: str, charset: Charset) -> str:
    """Lowercase, fold diacritics, collapse whitespace, drop out-of-charset symbols."""
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(c for c in decomposed if unicodedata.category(c) != "Mn")
    lowered = stripped.lower()
    allowed = set(charset.text_symbols)
    kept = []
    for ch in lowered:
        if ch.isspace():
            kept.append(" ")
        elif ch in allowed:
            kept.append(ch)
    collapsed = " ".join("".join(kept).split())
    if not collapsed:
        raise EmptyAfterNormalization(repr(text))
    return collapsed


def encode_text(text: str, charset: Charset) -> np.ndarray:
    """Map a normalized transcript to symbol ids with a trailing EOS."""
    ids = [charset.char_id(ch) for ch in text]
    ids.append(charset.eos_id)
    return np.asarray(ids, dtype=np.int64)


def decode_ids(ids, charset: Charset) -> str:
    return "".join(charset.symbols[i] for i in ids if i >= 2)


@dataclass
class Utterance:
    id: str
    audio_path: str
    transcript_raw: str
    transcript_norm: str
    emotion: str
    duration_s: float
    nve_status: str = "clean"


@dataclass
class Manifest:
    corpus_name: str
    utterances: list[Utterance] = field(default_factory=list)
    charset: Charset = field(default_factory=Charset.default)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    @property
    def total_duration_s(self) -> float:
        return sum(u.duration_s for u in self.utterances)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "audio_path", "transcript_norm", "emotion", "duration_s", "nve_status"])
            for u in self.utterances:
                writer.writerow([u.id, u.audio_path, u.transcript_norm, u.emotion,
                                 f"{u.duration_s:.6f}", u.nve_status])

    @classmethod
    def load_csv(cls, path: str | Path, corpus_name: str | None = None) -> "Manifest":
        path = Path(path)
        utts = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                utts.append(Utterance(
                    id=row["id"],
                    audio_path=row["audio_path"],
                    transcript_raw=row["transcript_norm"],
                    transcript_norm=row["transcript_norm"],
                    emotion=row["emotion"],
                    duration_s=float(row["duration_s"]),
                    nve_status=row["nve_status"],
                ))
        return cls(corpus_name or path.stem, utts)


@dataclass
class ExclusionList:
    """Utterance ids to drop (reason nve/other) or swap for an edited file (trimmed_nve)."""

    corpus_name: str
    entries: dict[str, str] = field(default_factory=dict)

    def reason(self, utt_id: str) -> str | None:
        return self.entries.get(utt_id)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "reason"])
            for utt_id in sorted(self.entries):
                writer.writerow([utt_id, self.entries[utt_id]])

    @classmethod
    def load_csv(cls, path: str | Path, corpus_name: str = "") -> "ExclusionList":
        entries = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                reason = row["reason"]
                if reason not in EXCLUSION_REASONS:
                    raise ValueError(f"unknown exclusion reason {reason!r}")
                entries[row["id"]] = reason
        return cls(corpus_name, entries)


def wav_duration_s(path: str | Path) -> float:
    rate, data = wavfile.read(str(path))
    return data.shape[0] / rate


def scan_neutral_corpus(root: str | Path, charset: Charset | None = None) -> Manifest:
    """Build a manifest from a metadata.csv (id|transcript) plus wavs/ layout."""
    root = Path(root)
    index = root / "metadata.csv"
    if not index.exists():
        raise MissingIndex(str(index))
    charset = charset or Charset.default()
    manifest = Manifest(root.name, charset=charset)
    for raw in index.read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        utt_id, _, transcript = raw.partition("|")
        wav = root / "wavs" / f"{utt_id}.wav"
        if not wav.exists():
            log.warning("skipping %s: missing audio %s", utt_id, wav)
            continue
        manifest.utterances.append(Utterance(
            id=utt_id,
            audio_path=str(wav),
            transcript_raw=transcript,
            transcript_norm=normalize_transcript(transcript, charset),
            emotion="neutral",
            duration_s=wav_duration_s(wav),
        ))
    return manifest


def scan_emotional_corpus(
    root: str | Path,
    emotion: str,
    exclusions: ExclusionList | None = None,
    charset: Charset | None = None,
) -> Manifest:
    """Collect one emotion's utterances from a speaker/session tree, honoring exclusions."""
    if emotion not in EMOTIONS:
        raise UnknownEmotion(emotion)
    root = Path(root)
    if not root.is_dir():
        raise MissingRoot(str(root))
    charset = charset or Charset.default()
    exclusions = exclusions or ExclusionList(root.name)
    manifest = Manifest(f"{root.name}-{emotion}", charset=charset)
    sessions = sorted(
        d for d in root.glob(f"*/{emotion}_*") if d.is_dir()
    )
    for session in sessions:
        transcripts = {}
        index = session / "transcript.txt"
        if index.exists():
            for raw in index.read_text(encoding="utf-8").splitlines():
                if raw.strip():
                    utt_id, _, text = raw.partition("|")
                    transcripts[utt_id] = text
        for wav in sorted(session.glob("*.wav")):
            utt_id = wav.stem
            if utt_id.endswith("_edited"):
                continue
            reason = exclusions.reason(utt_id)
            if reason in ("nve", "other"):
                continue
            audio = wav
            status = "clean"
            if reason == "trimmed_nve":
                audio = wav.with_name(f"{utt_id}_edited.wav")
                status = "nve_removed"
                if not audio.exists():
                    log.warning("skipping %s: edited file %s missing", utt_id, audio)
                    continue
            transcript = transcripts.get(utt_id, "")
            if not transcript:
                log.warning("skipping %s: no transcript", utt_id)
                continue
            manifest.utterances.append(Utterance(
                id=utt_id,
                audio_path=str(audio),
                transcript_raw=transcript,
                transcript_norm=normalize_transcript(transcript, charset),
                emotion=emotion,
                duration_s=wav_duration_s(audio),
                nve_status=status,
            ))
    return manifest


def split_manifest(manifest: Manifest, held_out_count: int, seed: int) -> tuple[Manifest, Manifest]:
    """Deterministic disjoint (train, held_out) partition."""
    n = len(manifest)
    if not 0 <= held_out_count <= n:
        raise HoldoutTooLarge(f"cannot hold out {held_out_count} of {n}")
    rng = np.random.default_rng(seed)
    held_idx = set(rng.permutation(n)[:held_out_count].tolist())
    train = Manifest(manifest.corpus_name + "-train", charset=manifest.charset)
    held = Manifest(manifest.corpus_name + "-heldout", charset=manifest.charset)
    for i, utt in enumerate(manifest.utterances):
        (held if i in held_idx else train).utterances.append(utt)
    return train, held


def duration_report(manifests: dict[str, Manifest]) -> str:
    """Per-emotion table of minute-rounded durations and utterance counts."""
    out = io.StringIO()
    out.write(f"{'Emotion':<12} {'Total duration [min]':>22} {'Number of utterances':>22}\n")
    for emotion, manifest in manifests.items():
        minutes = round(manifest.total_duration_s / 60.0)
        out.write(f"{emotion.capitalize():<12} {minutes:>22} {len(manifest):>22}\n")
    return out.getvalue()

"""Deterministic synthetic corpora for tests and dry runs.

Audio is built from the transcript itself: every character maps to a fixed
tone (plus one octave harmonic), so a toy model can actually learn the
text-to-audio correspondence. A per-speaker base frequency stands in for
speaker identity, and a short silent tail teaches the decoder to fade out.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .corpus import Charset, ExclusionList, Manifest, Utterance, normalize_transcript

CHAR_DURATION_S = 0.06
TAIL_SILENCE_S = 0.18
DEFAULT_BASE_HZ = 220.0

# kept (clean, edited) and excluded counts per emotion, mirroring the corpus
# this toolkit was built around
REFERENCE_COUNTS = {
    "amused": {"clean": 156, "edited": 82, "excluded": 58},
    "angry": {"clean": 304, "edited": 0, "excluded": 0},
    "disgusted": {"clean": 303, "edited": 0, "excluded": 0},
    "neutral": {"clean": 357, "edited": 0, "excluded": 0},
    "sleepy": {"clean": 361, "edited": 0, "excluded": 135},
}

_WORDS = (
    "bay", "cove", "dune", "echo", "fern", "gale", "hill", "iris",
    "jade", "kelp", "lark", "mesa", "nook", "opal", "pine", "quay",
    "reed", "sage", "tide", "vale",
)


def char_frequency(ch: str, base_hz: float) -> float:
    """Deterministic tone frequency for one charset character (0 = rest)."""
    if ch == " ":
        return 0.0
    offset = (ord(ch) * 7) % 30  # spread characters over ~2.5 octaves
    return base_hz * 2.0 ** (offset / 12.0)


def tone_waveform(
    text: str,
    rate: int = 22050,
    base_hz: float = DEFAULT_BASE_HZ,
    char_duration_s: float = CHAR_DURATION_S,
    tail_silence_s: float = TAIL_SILENCE_S,
    amplitude: float = 0.25,
) -> np.ndarray:
    """Render a normalized transcript as a character-tone sequence."""
    seg = int(round(char_duration_s * rate))
    pieces = []
    for ch in text:
        freq = char_frequency(ch, base_hz)
        if freq == 0.0:
            pieces.append(np.zeros(seg))
            continue
        t = np.arange(seg) / rate
        tone = amplitude * np.sin(2 * np.pi * freq * t)
        tone += 0.5 * amplitude * np.sin(2 * np.pi * 2 * freq * t)
        fade = min(seg // 8, 64)
        if fade:
            ramp = np.linspace(0.0, 1.0, fade)
            tone[:fade] *= ramp
            tone[-fade:] *= ramp[::-1]
        pieces.append(tone)
    pieces.append(np.zeros(int(round(tail_silence_s * rate))))
    return np.concatenate(pieces)


def random_texts(count: int, seed: int, min_words: int = 2, max_words: int = 4) -> list[str]:
    rng = np.random.default_rng(seed)
    texts = []
    for _ in range(count):
        n = int(rng.integers(min_words, max_words + 1))
        words = [str(_WORDS[i]) for i in rng.integers(0, len(_WORDS), n)]
        texts.append(" ".join(words))
    return texts


@dataclass
class ToyCorpus:
    manifest: Manifest
    root: Path


def build_toy_corpus(
    root: str | Path,
    texts: list[str],
    rate: int = 22050,
    base_hz: float = DEFAULT_BASE_HZ,
    emotion: str = "neutral",
    name: str = "toy",
) -> ToyCorpus:
    """Write character-tone WAVs for the given texts and return their manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    charset = Charset.default()
    manifest = Manifest(name, charset=charset)
    for i, text in enumerate(texts):
        norm = normalize_transcript(text, charset)
        wav = tone_waveform(norm, rate=rate, base_hz=base_hz)
        utt_id = f"{name}_{i:04d}"
        path = root / f"{utt_id}.wav"
        dsp.save_audio(dsp.AudioBuffer(wav, rate), path)
        manifest.utterances.append(Utterance(
            id=utt_id,
            audio_path=str(path),
            transcript_raw=text,
            transcript_norm=norm,
            emotion=emotion,
            duration_s=len(wav) / rate,
        ))
    return ToyCorpus(manifest, root)


def make_neutral_corpus(root: str | Path, count: int, seed: int, rate: int = 22050) -> Path:
    """Generate the metadata.csv + wavs/ pretraining layout."""
    root = Path(root)
    wav_dir = root / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    texts = random_texts(count, seed)
    rows = []
    for i, text in enumerate(texts):
        utt_id = f"neutral_{i:04d}"
        wav = tone_waveform(text, rate=rate)
        dsp.save_audio(dsp.AudioBuffer(wav, rate), wav_dir / f"{utt_id}.wav")
        rows.append(f"{utt_id}|{text}")
    (root / "metadata.csv").write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")
    return root


def make_emotional_corpus(
    root: str | Path,
    counts: dict[str, dict[str, int]] | None = None,
    seed: int = 0,
    speaker: str = "spk1",
    rate: int = 22050,
    session_size: int = 100,
) -> tuple[Path, Path]:
    """Generate the speaker/session layout plus its exclusion list.

    ``counts`` maps emotion -> {clean, edited, excluded}; scanning the result
    with the written exclusion list yields exactly clean + edited utterances.
    Returns (root, exclusion list path).
    """
    root = Path(root)
    counts = counts or REFERENCE_COUNTS
    exclusions = ExclusionList(root.name)
    rng_seed = seed
    for emotion in sorted(counts):
        spec = counts[emotion]
        roles = (["clean"] * spec.get("clean", 0)
                 + ["edited"] * spec.get("edited", 0)
                 + ["excluded"] * spec.get("excluded", 0))
        texts = random_texts(len(roles), seed=rng_seed)
        rng_seed += 1
        rng = np.random.default_rng(rng_seed)
        rng.shuffle(roles)
        session_dir = None
        transcript_lines: list[str] = []
        for i, (role, text) in enumerate(zip(roles, texts)):
            if i % session_size == 0:
                if session_dir is not None:
                    (session_dir / "transcript.txt").write_text(
                        "\n".join(transcript_lines) + "\n", encoding="utf-8")
                    transcript_lines = []
                session_dir = root / speaker / f"{emotion}_{i // session_size + 1:02d}"
                session_dir.mkdir(parents=True, exist_ok=True)
            utt_id = f"{speaker}_{emotion}_{i:04d}"
            wav = tone_waveform(text, rate=rate)
            if role in ("edited", "excluded"):
                # splice a broadband burst standing in for a non-verbal expression
                burst = 0.4 * np.sin(2 * np.pi * 3000.0 * np.arange(int(0.1 * rate)) / rate)
                raw = np.concatenate([burst, wav])
            else:
                raw = wav
            dsp.save_audio(dsp.AudioBuffer(raw, rate), session_dir / f"{utt_id}.wav")
            if role == "edited":
                dsp.save_audio(dsp.AudioBuffer(wav, rate), session_dir / f"{utt_id}_edited.wav")
                exclusions.entries[utt_id] = "trimmed_nve"
            elif role == "excluded":
                exclusions.entries[utt_id] = "nve"
            transcript_lines.append(f"{utt_id}|{text}")
        if session_dir is not None and transcript_lines:
            (session_dir / "transcript.txt").write_text(
                "\n".join(transcript_lines) + "\n", encoding="utf-8")
    exclusion_path = root / "exclusions.csv"
    exclusions.save_csv(exclusion_path)
    return root, exclusion_path

"""Text-to-waveform inference: incremental Text2Mel decoding with a forced
monotonic attention window, SSRN upsampling, Griffin-Lim reconstruction.

During decoding a text-position cursor starts at 0 and only moves forward:
attention mass for a new frame is restricted to ``[cursor - back,
cursor + ahead]`` before the softmax, and the cursor then advances to the
window's argmax if that is further along. Decoding ends once the cursor has
reached the final character and the predicted frames stay quiet, or at the
frame cap.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import dsp
from .corpus import Charset, encode_text, normalize_transcript
from .errors import EmptyAfterNormalization, EmptyText, NoAlignment, UnwritableOutput
from .training import Checkpoint, models_from_checkpoint

log = logging.getLogger(__name__)

ATTN_MASK_VALUE = -1e9


@dataclass(frozen=True)
class SynthesisOptions:
    max_frames: int = 210          # hard cap on generated coarse frames
    window_back: int = 1
    window_ahead: int = 3
    stop_energy: float = 0.05      # mean normalized mel value counting as "quiet"
    stop_quiet_frames: int = 3

    def __post_init__(self):
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")
        if self.window_ahead < 1:
            raise ValueError("window_ahead must be >= 1")


@dataclass
class SynthesisResult:
    mel: dsp.MelSpectrogram
    attention: np.ndarray       # (N, T'), column-stochastic
    positions: np.ndarray       # (T',) monotone text-position cursor
    stop_reason: str            # "quiet" or "cap"


def _window_bias(windows: list[tuple[int, int]], n_text: int, dtype) -> torch.Tensor:
    bias = torch.full((1, n_text, len(windows)), ATTN_MASK_VALUE, dtype=dtype)
    for t, (lo, hi) in enumerate(windows):
        bias[0, lo:hi + 1, t] = 0.0
    return bias


def synthesize_mel(ckpt: Checkpoint, text: str, opts: SynthesisOptions | None = None,
                   charset: Charset | None = None) -> SynthesisResult:
    """Decode a coarse mel spectrogram (and its attention trace) for one text."""
    opts = opts or SynthesisOptions()
    charset = charset or Charset.default()
    try:
        norm = normalize_transcript(text, charset)
    except EmptyAfterNormalization as exc:
        raise EmptyText(repr(text)) from exc
    ids = encode_text(norm, charset)
    t2m, _ = models_from_checkpoint(ckpt)
    return _decode(t2m, ids, ckpt, opts)


def _decode(t2m, ids: np.ndarray, ckpt: Checkpoint, opts: SynthesisOptions) -> SynthesisResult:
    n_text = len(ids)
    n_mels = ckpt.hyper.n_mels
    char = torch.from_numpy(ids).unsqueeze(0)
    t2m.eval()
    with torch.no_grad():
        keys, values = t2m.text_encoder(char)
        mel_input = torch.zeros(1, 1, n_mels)
        frames: list[torch.Tensor] = []
        positions: list[int] = []
        windows: list[tuple[int, int]] = []
        cursor = 0
        quiet = 0
        stop_reason = "cap"
        attention = None
        for t in range(opts.max_frames):
            windows.append((max(0, cursor - opts.window_back),
                            min(n_text - 1, cursor + opts.window_ahead)))
            bias = _window_bias(windows, n_text, mel_input.dtype)
            mel_pred, _, attention = t2m.attend_and_decode(keys, values, mel_input, attn_bias=bias)
            frame = mel_pred[0, t]
            frames.append(frame)
            cursor = max(cursor, int(attention[0, :, t].argmax()))
            positions.append(cursor)
            quiet = quiet + 1 if float(frame.mean()) < opts.stop_energy else 0
            if cursor >= n_text - 1 and quiet >= opts.stop_quiet_frames:
                stop_reason = "quiet"
                break
            mel_input = torch.cat([mel_input, frame.view(1, 1, n_mels)], dim=1)
    if stop_reason == "cap" and max(positions) < n_text - 1:
        raise NoAlignment(f"cap {opts.max_frames} reached at text position "
                          f"{max(positions)}/{n_text - 1}")
    mel = torch.stack(frames).numpy().astype(np.float32)
    return SynthesisResult(
        mel=dsp.MelSpectrogram(mel, hop_effective=ckpt.spectro.reduction * ckpt.spectro.hop),
        attention=attention[0, :, :len(frames)].numpy().astype(np.float32),
        positions=np.asarray(positions, dtype=np.int64),
        stop_reason=stop_reason,
    )


def _superresolve(ssrn, mel: dsp.MelSpectrogram, cfg: dsp.SpectroConfig) -> dsp.AudioBuffer:
    ssrn.eval()
    with torch.no_grad():
        lin_pred, _ = ssrn(torch.from_numpy(mel.frames).unsqueeze(0))
    lin = dsp.LinSpectrogram(lin_pred[0].numpy().astype(np.float32))
    return dsp.invert_spectrogram(lin, cfg)


def mel_to_waveform(ckpt: Checkpoint, mel: dsp.MelSpectrogram,
                    cfg: dsp.SpectroConfig | None = None) -> dsp.AudioBuffer:
    """Run SSRN on a coarse mel track and reconstruct audio with Griffin-Lim."""
    _, ssrn = models_from_checkpoint(ckpt)
    return _superresolve(ssrn, mel, cfg or ckpt.spectro)


def synthesize(ckpt: Checkpoint, text: str, opts: SynthesisOptions | None = None,
               cfg: dsp.SpectroConfig | None = None) -> dsp.AudioBuffer:
    """Full text-to-audio chain; samples clipped to [-1, 1]."""
    result = synthesize_mel(ckpt, text, opts)
    return mel_to_waveform(ckpt, result.mel, cfg)


@dataclass
class BatchSynthesisItem:
    index: int
    text: str
    wav_path: str      # empty on failure
    status: str        # ok | no_alignment | empty_text
    frames: int


def batch_synthesize(ckpt: Checkpoint, texts: list[str], out_dir: str | Path,
                     opts: SynthesisOptions | None = None,
                     cfg: dsp.SpectroConfig | None = None) -> list[BatchSynthesisItem]:
    """Synthesize many texts, recording per-item failures instead of aborting.

    Writes one WAV per successful text plus a ``report.csv`` with columns
    index,text,wav_path,status,frames.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise UnwritableOutput(f"{out_dir}: {exc}") from exc
    opts = opts or SynthesisOptions()
    cfg = cfg or ckpt.spectro
    charset = Charset.default()
    t2m, ssrn = models_from_checkpoint(ckpt)
    results = []
    for i, text in enumerate(texts):
        wav_path = ""
        frames = 0
        try:
            norm = normalize_transcript(text, charset)
            decoded = _decode(t2m, encode_text(norm, charset), ckpt, opts)
            frames = decoded.mel.n_frames
            buf = _superresolve(ssrn, decoded.mel, cfg)
            wav_path = str(out_dir / f"utt_{i:04d}.wav")
            dsp.save_audio(buf, wav_path)
            status = "ok"
        except (EmptyAfterNormalization, EmptyText):
            status = "empty_text"
        except NoAlignment:
            status = "no_alignment"
            log.warning("no alignment for item %d: %r", i, text)
        results.append(BatchSynthesisItem(i, text, wav_path, status, frames))
    with open(out_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "text", "wav_path", "status", "frames"])
        for item in results:
            writer.writerow([item.index, item.text, item.wav_path, item.status, item.frames])
    return results

"""Audio I/O, silence trimming, spectrogram features, and Griffin-Lim reconstruction.

Conventions, fixed across the toolkit:

* waveforms are mono float arrays in [-1, 1] at ``SpectroConfig.sample_rate``;
* the STFT is centered with **zero** padding (not reflection), frame ``t``
  spans samples ``[t*hop - n_fft/2, t*hop + n_fft/2)``, giving
  ``T = floor(len(x)/hop) + 1`` frames;
* magnitudes are compressed to dB and normalized to [0, 1] via
  ``clip((db - ref_db + max_db) / max_db, 0, 1)``;
* the coarse mel track keeps every ``reduction``-th frame after the frame
  count is zero-padded up to a multiple of ``reduction``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as spsignal
from scipy.io import wavfile

from . import configio
from .errors import EmptyAfterTrim, MissingFile, RateMismatch, UndecodableAudio

AMP_FLOOR = 1e-5  # amplitude floor before dB conversion


@dataclass(frozen=True)
class SpectroConfig:
    """All DSP hyperparameters; serializable as a flat key-value file."""

    sample_rate: int = 22050
    n_fft: int = 2048
    hop: int = 276          # 12.5 ms at 22050 Hz
    win: int = 1102         # 50 ms at 22050 Hz
    n_mels: int = 80
    reduction: int = 4      # coarse-frame factor r
    preemph: float = 0.97
    ref_db: float = 20.0
    max_db: float = 100.0
    top_db: float = 20.0    # silence-trim threshold below peak
    gl_iters: int = 60
    sharpening: float = 1.5  # magnitude exponent before Griffin-Lim

    def __post_init__(self):
        if not (0 < self.hop <= self.win <= self.n_fft):
            raise ValueError(f"need 0 < hop <= win <= n_fft, got {self.hop}/{self.win}/{self.n_fft}")
        if self.reduction < 1:
            raise ValueError("reduction must be >= 1")
        if self.top_db <= 0:
            raise ValueError("top_db must be > 0")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")

    @property
    def lin_bins(self) -> int:
        return 1 + self.n_fft // 2

    def save(self, path: str | Path) -> None:
        configio.write_kv(path, configio.dataclass_to_kv(self))

    @classmethod
    def load(cls, path: str | Path) -> "SpectroConfig":
        return configio.dataclass_from_kv(cls, configio.read_kv(path))


@dataclass
class AudioBuffer:
    """Mono waveform plus its sample rate."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.rate


@dataclass
class MelSpectrogram:
    """Coarse mel track, values in [0, 1], one frame per ``hop_effective`` samples."""

    frames: np.ndarray  # (T', n_mels)
    hop_effective: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class LinSpectrogram:
    """Full-resolution magnitude track, values in [0, 1]."""

    frames: np.ndarray  # (T, 1 + n_fft/2)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# --- WAV I/O ---

_PCM_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_audio(path: str | Path, cfg: SpectroConfig) -> AudioBuffer:
    """Read a WAV file, downmix to mono, and resample to ``cfg.sample_rate``."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise UndecodableAudio(f"{path}: {exc}") from exc
    data = np.asarray(data)
    if data.dtype in _PCM_SCALE:
        samples = data.astype(np.float64) / _PCM_SCALE[data.dtype]
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise UndecodableAudio(f"{path}: non-finite samples")
    buf = AudioBuffer(samples, int(rate))
    if buf.rate != cfg.sample_rate:
        buf = resample(buf, cfg.sample_rate)
    return buf


def save_audio(buf: AudioBuffer, path: str | Path) -> None:
    """Write 16-bit PCM little-endian WAV."""
    clipped = np.clip(buf.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(str(path), buf.rate, pcm)


def resample(buf: AudioBuffer, rate: int) -> AudioBuffer:
    if rate == buf.rate:
        return buf
    g = math.gcd(buf.rate, rate)
    out = spsignal.resample_poly(buf.samples, rate // g, buf.rate // g)
    return AudioBuffer(np.clip(out, -1.0, 1.0), rate)


# --- silence trimming ---

def trim_silence(buf: AudioBuffer, top_db: float, frame_len: int | None = None) -> AudioBuffer:
    """Drop leading/trailing frames whose RMS sits more than ``top_db`` below the peak frame.

    The energy scan uses non-overlapping hop-sized frames (default 12.5 ms)
    and cuts at frame boundaries, so a hidden onset is recovered to within
    one frame. Raises EmptyAfterTrim when no frame clears the threshold.
    """
    x = buf.samples
    if x.size == 0:
        raise EmptyAfterTrim("empty buffer")
    if frame_len is None:
        frame_len = max(1, round(buf.rate * 0.0125))
    n_frames = max(1, math.ceil(x.size / frame_len))
    rms = np.empty(n_frames)
    for i in range(n_frames):
        chunk = x[i * frame_len:(i + 1) * frame_len]
        rms[i] = np.sqrt(np.mean(chunk * chunk))
    threshold = rms.max() * 10.0 ** (-top_db / 20.0)
    voiced = np.flatnonzero(rms > threshold)
    if voiced.size == 0:
        raise EmptyAfterTrim("entire signal below trim threshold")
    start = voiced[0] * frame_len
    end = min(x.size, (voiced[-1] + 1) * frame_len)
    return AudioBuffer(x[start:end].copy(), buf.rate)


# --- STFT machinery ---

@lru_cache(maxsize=8)
def _window(win: int, n_fft: int) -> np.ndarray:
    w = spsignal.get_window("hann", win, fftbins=True)
    padded = np.zeros(n_fft)
    off = (n_fft - win) // 2
    padded[off:off + win] = w
    return padded


def preemphasis(x: np.ndarray, coeff: float) -> np.ndarray:
    if coeff == 0.0 or x.size == 0:
        return np.asarray(x, dtype=np.float64)
    return np.append(x[0], x[1:] - coeff * x[:-1])


def deemphasis(x: np.ndarray, coeff: float) -> np.ndarray:
    if coeff == 0.0:
        return np.asarray(x, dtype=np.float64)
    return spsignal.lfilter([1.0], [1.0, -coeff], x)


def stft(x: np.ndarray, cfg: SpectroConfig) -> np.ndarray:
    """Centered zero-padded STFT; returns complex (T, 1 + n_fft/2) with T = floor(len/hop) + 1."""
    x = np.asarray(x, dtype=np.float64)
    n_frames = x.size // cfg.hop + 1
    pad = cfg.n_fft // 2
    # enough tail so every frame has a full n_fft window
    total = pad + (n_frames - 1) * cfg.hop + cfg.n_fft
    padded = np.zeros(total)
    padded[pad:pad + x.size] = x
    frames = sliding_window_view(padded, cfg.n_fft)[::cfg.hop][:n_frames]
    return np.fft.rfft(frames * _window(cfg.win, cfg.n_fft), axis=1)


def _overlap_add(spec: np.ndarray, cfg: SpectroConfig) -> np.ndarray:
    """Least-squares WOLA signal on the full analysis grid, length (T-1)*hop + n_fft."""
    n_frames = spec.shape[0]
    w = _window(cfg.win, cfg.n_fft)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1)
    acc = np.zeros((n_frames - 1) * cfg.hop + cfg.n_fft)
    norm = np.zeros_like(acc)
    for t in range(n_frames):
        lo = t * cfg.hop
        acc[lo:lo + cfg.n_fft] += frames[t] * w
        norm[lo:lo + cfg.n_fft] += w * w
    return acc / np.maximum(norm, 1e-10)


def _grid_spec(grid_signal: np.ndarray, n_frames: int, cfg: SpectroConfig) -> np.ndarray:
    """STFT of a signal already laid out on the analysis grid (no extra padding)."""
    frames = sliding_window_view(grid_signal, cfg.n_fft)[::cfg.hop][:n_frames]
    return np.fft.rfft(frames * _window(cfg.win, cfg.n_fft), axis=1)


def istft(spec: np.ndarray, cfg: SpectroConfig) -> np.ndarray:
    """Inverse of :func:`stft`. Drops the leading half-window of analysis padding
    but keeps the reconstructed tail, so the output covers the whole input span:
    length (T - 1) * hop + n_fft/2."""
    pad = cfg.n_fft // 2
    return _overlap_add(spec, cfg)[pad:]


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular unit-peak filters on the HTK mel scale; shape (n_mels, 1 + n_fft/2)."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    n_bins = 1 + n_fft // 2
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-10)
        down = (hi - fft_freqs) / max(hi - center, 1e-10)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def amplitude_to_normalized_db(mag: np.ndarray, cfg: SpectroConfig) -> np.ndarray:
    db = 20.0 * np.log10(np.maximum(AMP_FLOOR, mag))
    return np.clip((db - cfg.ref_db + cfg.max_db) / cfg.max_db, 0.0, 1.0)


def normalized_db_to_amplitude(norm: np.ndarray, cfg: SpectroConfig) -> np.ndarray:
    db = np.clip(norm, 0.0, 1.0) * cfg.max_db - cfg.max_db + cfg.ref_db
    return 10.0 ** (db / 20.0)


def extract_features(buf: AudioBuffer, cfg: SpectroConfig) -> tuple[MelSpectrogram, LinSpectrogram]:
    """Compute the paired (coarse mel, full linear) normalized spectrograms."""
    if buf.rate != cfg.sample_rate:
        raise RateMismatch(f"buffer at {buf.rate} Hz, config expects {cfg.sample_rate} Hz")
    if buf.samples.size == 0:
        raise ValueError("empty buffer")
    emphasized = preemphasis(buf.samples, cfg.preemph)
    mag = np.abs(stft(emphasized, cfg))                      # (T, bins)
    mel_mag = mag @ mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels).T
    lin = amplitude_to_normalized_db(mag, cfg)
    mel = amplitude_to_normalized_db(mel_mag, cfg)
    r = cfg.reduction
    t_pad = math.ceil(lin.shape[0] / r) * r
    lin = np.pad(lin, ((0, t_pad - lin.shape[0]), (0, 0)))
    mel = np.pad(mel, ((0, t_pad - mel.shape[0]), (0, 0)))[::r]
    return (
        MelSpectrogram(mel.astype(np.float32), hop_effective=r * cfg.hop),
        LinSpectrogram(lin.astype(np.float32)),
    )


# --- Griffin-Lim reconstruction ---

def griffin_lim(mag: np.ndarray, cfg: SpectroConfig, n_iters: int | None = None) -> np.ndarray:
    """Phase reconstruction from a magnitude spectrogram (T, bins).

    Iteration 0 is the zero-phase inverse STFT; each subsequent iteration
    re-imposes ``mag`` on the running estimate's phase.
    """
    if n_iters is None:
        n_iters = cfg.gl_iters
    mag = np.asarray(mag, dtype=np.float64)
    n_frames = mag.shape[0]
    grid = _overlap_add(mag.astype(np.complex128), cfg)
    for _ in range(n_iters):
        est = _grid_spec(grid, n_frames, cfg)
        phase = est / np.maximum(np.abs(est), 1e-12)
        grid = _overlap_add(mag * phase, cfg)
    return grid[cfg.n_fft // 2:]


def spectral_convergence(x: np.ndarray, mag: np.ndarray, cfg: SpectroConfig) -> float:
    """Relative Frobenius distance between |STFT(x)| and a target magnitude."""
    est = np.abs(stft(x, cfg))
    t = min(est.shape[0], mag.shape[0])
    return float(np.linalg.norm(est[:t] - mag[:t]) / max(np.linalg.norm(mag[:t]), 1e-12))


def invert_spectrogram(spec: LinSpectrogram, cfg: SpectroConfig) -> AudioBuffer:
    """Normalized linear spectrogram -> waveform via sharpening, Griffin-Lim, de-emphasis."""
    mag = normalized_db_to_amplitude(spec.frames, cfg) ** cfg.sharpening
    wav = griffin_lim(mag, cfg)
    wav = deemphasis(wav, cfg.preemph)
    return AudioBuffer(np.clip(wav, -1.0, 1.0), cfg.sample_rate)

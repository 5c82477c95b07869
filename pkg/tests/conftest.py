import numpy as np
import pytest
import torch

torch.set_num_threads(1)  # reproducibility contract: single-threaded mode

from emotts import dsp


@pytest.fixture(scope="session")
def cfg():
    return dsp.SpectroConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq_hz: float, duration_s: float = 1.0, rate: int = 22050, amplitude: float = 0.5):
    t = np.arange(int(duration_s * rate)) / rate
    return amplitude * np.sin(2 * np.pi * freq_hz * t)


def two_tone(rate: int = 22050, duration_s: float = 1.0):
    """1 s two-tone test signal: 600 Hz then 900 Hz, short fades at the seams."""
    half = int(duration_s * rate) // 2
    t = np.arange(half) / rate
    first = 0.15 * np.sin(2 * np.pi * 600.0 * t)
    second = 0.10 * np.sin(2 * np.pi * 900.0 * t)
    ramp = np.linspace(0.0, 1.0, 256)
    for seg in (first, second):
        seg[:256] *= ramp
        seg[-256:] *= ramp[::-1]
    return np.concatenate([first, second])

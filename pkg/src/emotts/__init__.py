"""Low-resource emotional TTS toolkit: preprocessing, staged fine-tuning, synthesis, evaluation."""

__version__ = "0.1.0"

"""Text2Mel (text encoder, audio encoder, attention, audio decoder) and the
spectrogram super-resolution network, plus the training losses.

All stacks are 1-D gated (highway) convolutions. Audio-side stacks are
causal, so output frame t never sees input frames > t; the text encoder is
non-causal and re-zeroes padded positions after every layer, which keeps a
padded batch item numerically identical to the same item run alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from . import configio
from .errors import EmptyBatch, ShapeMismatch

LOGIT_CLAMP = 15.0
DILATION_CYCLE = (1, 3, 9, 27)


@dataclass(frozen=True)
class ModelHyper:
    """Network dimensions; serializable as a flat key-value file."""

    embed_dim: int = 128
    hidden_dim: int = 256
    n_mels: int = 80
    lin_bins: int = 1025
    charset_size: int = 34
    guided_g: float = 0.2

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "n_mels", "lin_bins", "charset_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.guided_g <= 0:
            raise ValueError("guided_g must be > 0")

    def save(self, path) -> None:
        configio.write_kv(path, configio.dataclass_to_kv(self))

    @classmethod
    def load(cls, path) -> "ModelHyper":
        return configio.dataclass_from_kv(cls, configio.read_kv(path))


def seeded_init(module: nn.Module, seed: int) -> None:
    """Variance-preserving fan-in uniform init, deterministic in the seed.

    Weights are drawn from U(-sqrt(3/fan_in), sqrt(3/fan_in)) (unit output
    variance for unit inputs) and biases are zeroed; with every fan_in >= 3
    all initial magnitudes stay below 1.
    """
    gen = torch.Generator().manual_seed(seed)
    for name, param in module.named_parameters():
        with torch.no_grad():
            if param.ndim == 1:
                param.zero_()
            else:
                fan_in = param.shape[1] * (param.shape[2] if param.ndim == 3 else 1)
                if isinstance(module.get_submodule(name.rsplit(".", 1)[0]), nn.Embedding):
                    fan_in = param.shape[1]
                bound = math.sqrt(3.0 / max(1, fan_in))
                param.uniform_(-bound, bound, generator=gen)


class CausalConv1d(nn.Conv1d):
    """Conv1d padded on the left only, so outputs depend on past inputs."""

    def __init__(self, channels_in, channels_out, kernel_size, dilation=1):
        super().__init__(channels_in, channels_out, kernel_size, dilation=dilation)
        self.left_pad = (kernel_size - 1) * dilation

    def forward(self, x):
        return super().forward(F.pad(x, (self.left_pad, 0)))


def same_conv1d(channels_in, channels_out, kernel_size, dilation=1):
    return nn.Conv1d(channels_in, channels_out, kernel_size, dilation=dilation,
                     padding=(kernel_size - 1) * dilation // 2)


class HighwayConv1d(nn.Module):
    """Gated residual convolution: sigmoid(H1) * H2 + (1 - sigmoid(H1)) * x."""

    def __init__(self, channels, kernel_size, dilation=1, causal=False):
        super().__init__()
        if causal:
            self.conv = CausalConv1d(channels, 2 * channels, kernel_size, dilation)
        else:
            self.conv = same_conv1d(channels, 2 * channels, kernel_size, dilation)

    def forward(self, x):
        gate, cand = self.conv(x).chunk(2, dim=1)
        g = torch.sigmoid(gate)
        return g * cand + (1.0 - g) * x


class TextEncoder(nn.Module):
    """Characters -> attention keys and values, each hidden_dim channels."""

    def __init__(self, hyper: ModelHyper):
        super().__init__()
        e, d = hyper.embed_dim, hyper.hidden_dim
        self.embed = nn.Embedding(hyper.charset_size, e)
        self.prenet = nn.Sequential(
            nn.Conv1d(e, 2 * d, 1), nn.ReLU(), nn.Conv1d(2 * d, 2 * d, 1))
        blocks = [HighwayConv1d(2 * d, 3, dil) for _ in range(2) for dil in DILATION_CYCLE]
        blocks += [HighwayConv1d(2 * d, 3, 1) for _ in range(2)]
        blocks += [HighwayConv1d(2 * d, 1, 1) for _ in range(2)]
        self.blocks = nn.ModuleList(blocks)

    def forward(self, char_ids, text_mask=None):
        """char_ids (B, N) -> keys, values each (B, d, N).

        text_mask (B, N) marks real positions; padded columns are zeroed
        after every layer so they cannot bleed into real ones.
        """
        x = self.embed(char_ids).transpose(1, 2)
        if text_mask is not None:
            m = text_mask.unsqueeze(1).to(x.dtype)
            x = x * m
            for layer in self.prenet:
                x = layer(x)
                x = x * m
            for block in self.blocks:
                x = block(x) * m
        else:
            x = self.prenet(x)
            for block in self.blocks:
                x = block(x)
        return x.chunk(2, dim=1)


class AudioEncoder(nn.Module):
    """Coarse mel frames -> attention queries (causal)."""

    def __init__(self, hyper: ModelHyper):
        super().__init__()
        d = hyper.hidden_dim
        self.prenet = nn.Sequential(
            nn.Conv1d(hyper.n_mels, d, 1), nn.ReLU(),
            nn.Conv1d(d, d, 1), nn.ReLU(),
            nn.Conv1d(d, d, 1))
        blocks = [HighwayConv1d(d, 3, dil, causal=True)
                  for _ in range(2) for dil in DILATION_CYCLE]
        blocks += [HighwayConv1d(d, 3, 3, causal=True) for _ in range(2)]
        self.blocks = nn.ModuleList(blocks)

    def forward(self, mel):
        x = self.prenet(mel.transpose(1, 2))
        for block in self.blocks:
            x = block(x)
        return x


class AudioDecoder(nn.Module):
    """Attention context + queries -> mel logits (causal)."""

    def __init__(self, hyper: ModelHyper):
        super().__init__()
        d = hyper.hidden_dim
        self.prenet = nn.Conv1d(2 * d, d, 1)
        blocks = [HighwayConv1d(d, 3, dil, causal=True) for dil in DILATION_CYCLE]
        blocks += [HighwayConv1d(d, 3, 1, causal=True) for _ in range(2)]
        self.blocks = nn.ModuleList(blocks)
        self.postnet = nn.Sequential(
            nn.Conv1d(d, d, 1), nn.ReLU(),
            nn.Conv1d(d, d, 1), nn.ReLU(),
            nn.Conv1d(d, d, 1), nn.ReLU(),
            nn.Conv1d(d, hyper.n_mels, 1))

    def forward(self, x):
        x = self.prenet(x)
        for block in self.blocks:
            x = block(x)
        return self.postnet(x).transpose(1, 2)


class Text2Mel(nn.Module):
    """Autoregressive character-to-mel network with scaled dot-product attention."""

    def __init__(self, hyper: ModelHyper):
        super().__init__()
        self.hyper = hyper
        self.text_encoder = TextEncoder(hyper)
        self.audio_encoder = AudioEncoder(hyper)
        self.audio_decoder = AudioDecoder(hyper)

    def forward(self, char_ids, mel_input, text_mask=None, attn_bias=None):
        """Teacher-forced forward pass.

        char_ids: (B, N) int64, ending with EOS (then PAD).
        mel_input: (B, T, n_mels), the target shifted right one frame.
        text_mask: (B, N) bool, True on real characters.
        attn_bias: (B, N, T) additive pre-softmax bias (used by inference to
            force a monotonic window).

        Returns (mel_pred, logits, attention) with attention (B, N, T)
        column-stochastic over the unmasked text positions.
        """
        if char_ids.ndim != 2 or mel_input.ndim != 3:
            raise ShapeMismatch("char_ids must be (B, N), mel_input (B, T, n_mels)")
        keys, values = self.text_encoder(char_ids, text_mask)
        return self.attend_and_decode(keys, values, mel_input, text_mask, attn_bias)

    def attend_and_decode(self, keys, values, mel_input, text_mask=None, attn_bias=None):
        """Attention + decoder given precomputed keys/values (reused by inference)."""
        if mel_input.shape[2] != self.hyper.n_mels:
            raise ShapeMismatch(
                f"expected {self.hyper.n_mels} mel bins, got {mel_input.shape[2]}")
        queries = self.audio_encoder(mel_input)
        scores = torch.bmm(keys.transpose(1, 2), queries) / math.sqrt(self.hyper.hidden_dim)
        if text_mask is not None:
            scores = scores.masked_fill(~text_mask.unsqueeze(2), -1e9)
        if attn_bias is not None:
            scores = scores + attn_bias
        attention = torch.softmax(scores, dim=1)
        context = torch.bmm(values, attention)
        logits = self.audio_decoder(torch.cat([context, queries], dim=1))
        return torch.sigmoid(logits), logits, attention


class SSRN(nn.Module):
    """Coarse mel -> full linear spectrogram: x4 temporal upsampling, frequency lift."""

    def __init__(self, hyper: ModelHyper):
        super().__init__()
        d = hyper.hidden_dim
        layers: list[nn.Module] = [nn.Conv1d(hyper.n_mels, d, 1)]
        layers += [HighwayConv1d(d, 3, dil) for dil in (1, 3)]
        for _ in range(2):
            layers.append(nn.ConvTranspose1d(d, d, 2, stride=2))
            layers += [HighwayConv1d(d, 3, dil) for dil in (1, 3)]
        layers.append(nn.Conv1d(d, 2 * d, 1))
        layers += [HighwayConv1d(2 * d, 1, 1) for _ in range(2)]
        layers.append(nn.Conv1d(2 * d, hyper.lin_bins, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, mel):
        """mel (B, T, n_mels) -> (lin_pred, logits), each (B, 4T, lin_bins)."""
        if mel.ndim != 3:
            raise ShapeMismatch("mel must be (B, T, n_mels)")
        logits = self.net(mel.transpose(1, 2)).transpose(1, 2)
        return torch.sigmoid(logits), logits


# --- losses ---

def probs_to_logits(probs: torch.Tensor) -> torch.Tensor:
    z = torch.log(probs) - torch.log1p(-probs)
    return torch.clamp(z, -LOGIT_CLAMP, LOGIT_CLAMP)


def _frame_mask(lengths, max_len, device, dtype):
    idx = torch.arange(max_len, device=device)
    return (idx.unsqueeze(0) < lengths.unsqueeze(1)).to(dtype)


def spectrogram_loss(logits: torch.Tensor, target: torch.Tensor, lengths=None):
    """Masked L1 + binary cross-entropy between sigmoid(logits) and target.

    logits/target: (B, T, bins); lengths: (B,) valid frame counts. The CE is
    evaluated on clamped logits so saturated predictions stay finite. Each
    item is averaged over its own valid cells, then items are averaged.
    Returns (total, l1, ce) scalars.
    """
    if logits.shape != target.shape:
        raise ShapeMismatch(f"{tuple(logits.shape)} vs {tuple(target.shape)}")
    z = torch.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    pred = torch.sigmoid(z)
    l1_map = torch.abs(pred - target)
    ce_map = torch.clamp(z, min=0) - z * target + torch.log1p(torch.exp(-torch.abs(z)))
    if lengths is None:
        return (l1_map.mean() + ce_map.mean(), l1_map.mean(), ce_map.mean())
    mask = _frame_mask(lengths, logits.shape[1], logits.device, logits.dtype).unsqueeze(2)
    cells = mask.sum(dim=(1, 2)) * logits.shape[2]
    l1 = ((l1_map * mask).sum(dim=(1, 2)) / cells).mean()
    ce = ((ce_map * mask).sum(dim=(1, 2)) / cells).mean()
    return l1 + ce, l1, ce


def attention_weight_grid(n_text: int, n_frames: int, g: float,
                          device=None, dtype=torch.float32) -> torch.Tensor:
    """W[n, t] = 1 - exp(-(n/N - t/T)^2 / (2 g^2)), the off-diagonal penalty."""
    n = torch.arange(n_text, device=device, dtype=dtype) / n_text
    t = torch.arange(n_frames, device=device, dtype=dtype) / n_frames
    delta = n.unsqueeze(1) - t.unsqueeze(0)
    return 1.0 - torch.exp(-(delta * delta) / (2.0 * g * g))


def guided_attention_loss(attention: torch.Tensor, g: float,
                          text_lengths=None, mel_lengths=None) -> torch.Tensor:
    """Mean attention mass falling away from the text-time diagonal.

    attention: (B, N, T) or (N, T). Per item the mean runs over the
    (true text length x true frame count) grid only.
    """
    if attention.ndim == 2:
        attention = attention.unsqueeze(0)
    batch, n_max, t_max = attention.shape
    device, dtype = attention.device, attention.dtype
    if text_lengths is None:
        text_lengths = torch.full((batch,), n_max, device=device, dtype=torch.long)
    if mel_lengths is None:
        mel_lengths = torch.full((batch,), t_max, device=device, dtype=torch.long)
    total = attention.new_zeros(())
    for b in range(batch):
        n_i, t_i = int(text_lengths[b]), int(mel_lengths[b])
        grid = attention_weight_grid(n_i, t_i, g, device=device, dtype=dtype)
        total = total + (attention[b, :n_i, :t_i] * grid).mean()
    return total / batch


def text2mel_total_loss(model: Text2Mel, batch: dict):
    """Spectrogram loss on the predicted mels plus the guided-attention term.

    batch: char_ids (B, N), text_lengths (B,), mel_input/mel_target
    (B, T, n_mels), mel_lengths (B,). Returns (total, parts dict).
    """
    if batch["char_ids"].shape[0] == 0:
        raise EmptyBatch("no utterances in batch")
    text_mask = _frame_mask(batch["text_lengths"], batch["char_ids"].shape[1],
                            batch["char_ids"].device, torch.float32).bool()
    _, logits, attention = model(batch["char_ids"], batch["mel_input"], text_mask)
    total_spec, l1, ce = spectrogram_loss(logits, batch["mel_target"], batch["mel_lengths"])
    attn = guided_attention_loss(attention, model.hyper.guided_g,
                                 batch["text_lengths"], batch["mel_lengths"])
    total = total_spec + attn
    return total, {"l1": l1, "ce": ce, "attn": attn}


def ssrn_loss(model: SSRN, batch: dict):
    """Spectrogram loss of the upsampled linear prediction against its target."""
    if batch["mel_target"].shape[0] == 0:
        raise EmptyBatch("no utterances in batch")
    _, logits = model(batch["mel_target"])
    lin_lengths = batch["mel_lengths"] * (logits.shape[1] // batch["mel_target"].shape[1])
    total, l1, ce = spectrogram_loss(logits, batch["lin_target"], lin_lengths)
    return total, {"l1": l1, "ce": ce}

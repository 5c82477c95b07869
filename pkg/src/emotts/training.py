"""Staged training: checkpoint lineage, selective freezing, seeded batch streams.

A stage is declared by a :class:`StageSpec` (flat key-value file on disk),
initialized either from a fresh seed or from a parent checkpoint, and only
ever updates the modules listed in ``trainable``; everything else is left
bit-identical. Checkpoints are directories written atomically
(temp-then-rename) with one ``.npy`` file per parameter.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import configio, dsp
from .corpus import Charset, Manifest, encode_text, split_manifest
from .errors import ConfigMismatch, EmptyManifest, NonFiniteLoss
from .model import ModelHyper, SSRN, Text2Mel, seeded_init, ssrn_loss, text2mel_total_loss

log = logging.getLogger(__name__)

MODULE_NAMES = ("text2mel", "ssrn")
TRAINABLE_PRESETS = ("text2mel", "text2mel_audio", "ssrn")
GRAD_CLIP_NORM = 1.0


@dataclass
class StageSpec:
    """One fine-tuning (or pretraining) stage, loadable from a key-value file."""

    name: str
    init: str                      # "random:<seed>" or "checkpoint:<path>"
    trainable: tuple[str, ...]
    manifest_path: str
    out_dir: str
    optimizer_kind: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-6
    batch_size: int = 16
    max_steps: int = 0
    checkpoint_every: int = 0      # 0 = final checkpoint only
    seed: int = 0
    hyper: ModelHyper | None = None
    spectro: dsp.SpectroConfig | None = None

    @property
    def frozen(self) -> tuple[str, ...]:
        partial = {name.split("_")[0] for name in self.trainable}
        return tuple(m for m in MODULE_NAMES if m not in partial)

    def validate(self) -> None:
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        for name in self.trainable:
            if name not in TRAINABLE_PRESETS:
                raise ValueError(f"unknown trainable module {name!r}")
        if "text2mel" in self.trainable and "text2mel_audio" in self.trainable:
            raise ValueError("text2mel and text2mel_audio are mutually exclusive")
        if self.max_steps > 0 and not self.trainable:
            raise ValueError("nothing trainable but max_steps > 0")
        kind, _, arg = self.init.partition(":")
        if kind not in ("random", "checkpoint") or not arg:
            raise ValueError(f"init must be random:<seed> or checkpoint:<path>, got {self.init!r}")
        if kind == "random" and self.hyper is None:
            raise ValueError("random init requires an explicit model config")

    def to_file(self, path: str | Path) -> None:
        kv: dict[str, object] = {
            "name": self.name,
            "init": self.init,
            "trainable": ",".join(self.trainable),
            "manifest": self.manifest_path,
            "out_dir": self.out_dir,
            "optimizer.kind": self.optimizer_kind,
            "optimizer.lr": self.lr,
            "optimizer.beta1": self.beta1,
            "optimizer.beta2": self.beta2,
            "optimizer.eps": self.eps,
            "batch_size": self.batch_size,
            "max_steps": self.max_steps,
            "checkpoint_every": self.checkpoint_every,
            "seed": self.seed,
        }
        if self.hyper is not None:
            kv.update({f"hyper.{k}": v for k, v in configio.dataclass_to_kv(self.hyper).items()})
        if self.spectro is not None:
            kv.update({f"spectro.{k}": v for k, v in configio.dataclass_to_kv(self.spectro).items()})
        configio.write_kv(path, kv)

    @classmethod
    def from_file(cls, path: str | Path) -> "StageSpec":
        kv = configio.read_kv(path)
        hyper_kv = {k[6:]: v for k, v in kv.items() if k.startswith("hyper.")}
        spectro_kv = {k[8:]: v for k, v in kv.items() if k.startswith("spectro.")}
        trainable = tuple(t.strip() for t in kv.get("trainable", "").split(",") if t.strip())
        return cls(
            name=kv["name"],
            init=kv["init"],
            trainable=trainable,
            manifest_path=kv.get("manifest", ""),
            out_dir=kv.get("out_dir", "."),
            optimizer_kind=kv.get("optimizer.kind", "adam"),
            lr=float(kv.get("optimizer.lr", 2e-4)),
            beta1=float(kv.get("optimizer.beta1", 0.5)),
            beta2=float(kv.get("optimizer.beta2", 0.9)),
            eps=float(kv.get("optimizer.eps", 1e-6)),
            batch_size=int(kv.get("batch_size", 16)),
            max_steps=int(kv.get("max_steps", 0)),
            checkpoint_every=int(kv.get("checkpoint_every", 0)),
            seed=int(kv.get("seed", 0)),
            hyper=configio.dataclass_from_kv(ModelHyper, hyper_kv) if hyper_kv else None,
            spectro=configio.dataclass_from_kv(dsp.SpectroConfig, spectro_kv) if spectro_kv else None,
        )


@dataclass
class Checkpoint:
    """Parameter snapshot with its lineage and the configs it was trained under."""

    text2mel: dict[str, np.ndarray]
    ssrn: dict[str, np.ndarray]
    step: int
    lineage: list[str]
    hyper: ModelHyper
    spectro: dsp.SpectroConfig

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=directory.name + ".tmp", dir=directory.parent))
        try:
            (tmp / "params").mkdir()
            index = {}
            for module, tensors in (("text2mel", self.text2mel), ("ssrn", self.ssrn)):
                for name, arr in tensors.items():
                    fname = f"params/{module}.{name}.npy"
                    np.save(tmp / fname, arr)
                    index[f"{module}.{name}"] = {
                        "shape": list(arr.shape), "dtype": str(arr.dtype), "file": fname}
            (tmp / "params.json").write_text(json.dumps(index, indent=1), encoding="utf-8")
            (tmp / "meta.json").write_text(
                json.dumps({"step": self.step, "lineage": self.lineage}), encoding="utf-8")
            self.hyper.save(tmp / "hyper.cfg")
            self.spectro.save(tmp / "spectro.cfg")
            if directory.exists():
                backup = directory.with_name(directory.name + ".old")
                os.replace(directory, backup)
                os.replace(tmp, directory)
                _rmtree(backup)
            else:
                os.replace(tmp, directory)
        except Exception:
            _rmtree(tmp)
            raise

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        index = json.loads((directory / "params.json").read_text(encoding="utf-8"))
        modules: dict[str, dict[str, np.ndarray]] = {"text2mel": {}, "ssrn": {}}
        for full_name, entry in index.items():
            module, _, name = full_name.partition(".")
            modules[module][name] = np.load(directory / entry["file"])
        return cls(
            text2mel=modules["text2mel"],
            ssrn=modules["ssrn"],
            step=meta["step"],
            lineage=list(meta["lineage"]),
            hyper=ModelHyper.load(directory / "hyper.cfg"),
            spectro=dsp.SpectroConfig.load(directory / "spectro.cfg"),
        )


def _rmtree(path: Path) -> None:
    import shutil
    shutil.rmtree(path, ignore_errors=True)


def _state_to_numpy(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def models_from_checkpoint(ckpt: Checkpoint, dtype=torch.float32) -> tuple[Text2Mel, SSRN]:
    t2m = Text2Mel(ckpt.hyper).to(dtype)
    ssrn = SSRN(ckpt.hyper).to(dtype)
    t2m.load_state_dict({k: torch.from_numpy(v).to(dtype) for k, v in ckpt.text2mel.items()})
    ssrn.load_state_dict({k: torch.from_numpy(v).to(dtype) for k, v in ckpt.ssrn.items()})
    return t2m, ssrn


def checkpoint_from_models(t2m: Text2Mel, ssrn: SSRN, step: int, lineage: list[str],
                           hyper: ModelHyper, spectro: dsp.SpectroConfig) -> Checkpoint:
    return Checkpoint(_state_to_numpy(t2m), _state_to_numpy(ssrn), step, lineage, hyper, spectro)


def init_params(hyper: ModelHyper, seed: int,
                spectro: dsp.SpectroConfig | None = None) -> Checkpoint:
    """Fresh fan-in scaled random parameters; lineage starts at ["random"]."""
    spectro = spectro or dsp.SpectroConfig()
    t2m = Text2Mel(hyper)
    ssrn = SSRN(hyper)
    seeded_init(t2m, seed)
    seeded_init(ssrn, seed + 1)
    return checkpoint_from_models(t2m, ssrn, 0, ["random"], hyper, spectro)


# --- data preparation and batching ---

@dataclass
class TrainingExample:
    id: str
    char_ids: np.ndarray   # (N,) int64, EOS-terminated
    mel: np.ndarray        # (T', n_mels) float32
    lin: np.ndarray        # (r*T', lin_bins) float32


def prepare_examples(manifest: Manifest, spectro: dsp.SpectroConfig,
                     charset: Charset | None = None) -> list[TrainingExample]:
    """Load audio and compute (char ids, mel, lin) for every utterance."""
    charset = charset or manifest.charset
    examples = []
    for utt in manifest:
        buf = dsp.load_audio(utt.audio_path, spectro)
        mel, lin = dsp.extract_features(buf, spectro)
        examples.append(TrainingExample(
            id=utt.id,
            char_ids=encode_text(utt.transcript_norm, charset),
            mel=mel.frames,
            lin=lin.frames,
        ))
    return examples


def collate(examples: list[TrainingExample], dtype=torch.float32) -> dict:
    """Pad a list of examples into batch tensors with length masks."""
    n_max = max(len(e.char_ids) for e in examples)
    t_max = max(e.mel.shape[0] for e in examples)
    n_mels = examples[0].mel.shape[1]
    lin_bins = examples[0].lin.shape[1]
    r = examples[0].lin.shape[0] // examples[0].mel.shape[0]
    batch = {
        "char_ids": torch.zeros(len(examples), n_max, dtype=torch.long),
        "text_lengths": torch.tensor([len(e.char_ids) for e in examples], dtype=torch.long),
        "mel_input": torch.zeros(len(examples), t_max, n_mels, dtype=dtype),
        "mel_target": torch.zeros(len(examples), t_max, n_mels, dtype=dtype),
        "mel_lengths": torch.tensor([e.mel.shape[0] for e in examples], dtype=torch.long),
        "lin_target": torch.zeros(len(examples), r * t_max, lin_bins, dtype=dtype),
        "ids": [e.id for e in examples],
    }
    for i, e in enumerate(examples):
        n, t = len(e.char_ids), e.mel.shape[0]
        batch["char_ids"][i, :n] = torch.from_numpy(e.char_ids)
        mel = torch.from_numpy(e.mel).to(dtype)
        batch["mel_target"][i, :t] = mel
        batch["mel_input"][i, 1:t] = mel[:-1]
        batch["lin_target"][i, :r * t] = torch.from_numpy(e.lin).to(dtype)
    return batch


def epoch_batch_indices(lengths: list[int], batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Length-bucketed batch index lists, order shuffled per (seed, epoch)."""
    order = np.argsort(np.asarray(lengths), kind="stable")
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng = np.random.default_rng([seed, epoch])
    return [chunks[i] for i in rng.permutation(len(chunks))]


def make_batches(examples: list[TrainingExample], batch_size: int, seed: int,
                 dtype=torch.float32):
    """Infinite deterministic batch stream, cycling shuffled epochs."""
    lengths = [e.mel.shape[0] for e in examples]
    epoch = 0
    while True:
        for idx in epoch_batch_indices(lengths, batch_size, seed, epoch):
            yield collate([examples[i] for i in idx], dtype=dtype)
        epoch += 1


# --- stage execution ---

def _resolve_init(spec: StageSpec) -> Checkpoint:
    kind, _, arg = spec.init.partition(":")
    if kind == "random":
        return init_params(spec.hyper, int(arg), spec.spectro)
    ckpt = Checkpoint.load(arg)
    if spec.hyper is not None and spec.hyper != ckpt.hyper:
        raise ConfigMismatch(f"stage expects {spec.hyper}, checkpoint has {ckpt.hyper}")
    if spec.spectro is not None and spec.spectro != ckpt.spectro:
        raise ConfigMismatch("spectrogram config differs from init checkpoint")
    return ckpt


def _trainable_params(spec: StageSpec, t2m: Text2Mel, ssrn: SSRN) -> list[torch.nn.Parameter]:
    params: list[torch.nn.Parameter] = []
    if "text2mel" in spec.trainable:
        params += list(t2m.parameters())
    elif "text2mel_audio" in spec.trainable:
        params += list(t2m.audio_encoder.parameters())
        params += list(t2m.audio_decoder.parameters())
    if "ssrn" in spec.trainable:
        params += list(ssrn.parameters())
    return params


def _stage_loss(spec: StageSpec, t2m: Text2Mel, ssrn: SSRN, batch: dict):
    total = None
    parts = {"l1": 0.0, "ce": 0.0, "attn": 0.0}
    if "text2mel" in spec.trainable or "text2mel_audio" in spec.trainable:
        loss, p = text2mel_total_loss(t2m, batch)
        total = loss
        parts["l1"] += float(p["l1"].detach())
        parts["ce"] += float(p["ce"].detach())
        parts["attn"] += float(p["attn"].detach())
    if "ssrn" in spec.trainable:
        loss, p = ssrn_loss(ssrn, batch)
        total = loss if total is None else total + loss
        parts["l1"] += float(p["l1"].detach())
        parts["ce"] += float(p["ce"].detach())
    return total, parts


def run_stage(spec: StageSpec, examples: list[TrainingExample] | None = None) -> Checkpoint:
    """Execute one training stage and return (and persist) its final checkpoint.

    ``examples`` may be passed to reuse already-extracted features; otherwise
    the manifest referenced by the spec is loaded and featurized here.
    """
    spec.validate()
    init = _resolve_init(spec)
    if examples is None:
        manifest = Manifest.load_csv(spec.manifest_path)
        if len(manifest) == 0:
            raise EmptyManifest(spec.manifest_path)
        examples = prepare_examples(manifest, init.spectro)
    if not examples:
        raise EmptyManifest(spec.manifest_path)

    t2m, ssrn = models_from_checkpoint(init)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lineage = init.lineage + [spec.name]
    loss_rows: list[tuple[int, float, float, float, float]] = []

    if spec.max_steps > 0:
        torch.manual_seed(spec.seed)
        params = _trainable_params(spec, t2m, ssrn)
        optimizer = torch.optim.Adam(params, lr=spec.lr,
                                     betas=(spec.beta1, spec.beta2), eps=spec.eps)
        batches = make_batches(examples, spec.batch_size, spec.seed)
        for step in range(1, spec.max_steps + 1):
            batch = next(batches)
            total, parts = _stage_loss(spec, t2m, ssrn, batch)
            value = float(total.detach())
            if not math.isfinite(value):
                raise NonFiniteLoss(step, value)
            optimizer.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(params, GRAD_CLIP_NORM)
            optimizer.step()
            loss_rows.append((step, value, parts["l1"], parts["ce"], parts["attn"]))
            if spec.checkpoint_every and step % spec.checkpoint_every == 0:
                checkpoint_from_models(t2m, ssrn, init.step + step, lineage,
                                       init.hyper, init.spectro).save(out_dir / f"step_{step:07d}")

    final = checkpoint_from_models(t2m, ssrn, init.step + spec.max_steps, lineage,
                                   init.hyper, init.spectro)
    final.save(out_dir / "final")
    with open(out_dir / "loss_log.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_total", "loss_l1", "loss_ce", "loss_attn"])
        writer.writerows(loss_rows)
    return final


def evaluate_text2mel_loss(ckpt: Checkpoint, examples: list[TrainingExample],
                           chunk_size: int = 32) -> float:
    """Teacher-forced Text2Mel loss over a fixed example set (no updates)."""
    t2m, _ = models_from_checkpoint(ckpt)
    losses = []
    with torch.no_grad():
        for i in range(0, len(examples), chunk_size):
            batch = collate(examples[i:i + chunk_size])
            total, _ = text2mel_total_loss(t2m, batch)
            losses.append(float(total) * len(batch["ids"]))
    return sum(losses) / len(examples)


# --- fine-tuning vs random-init comparison ---

@dataclass
class TransferReport:
    """Held-out losses of fine-tuned vs randomly initialized adaptation runs."""

    pairs: list[dict] = field(default_factory=list)  # seed, loss_finetuned, loss_random
    win_rate: float = 0.0
    degenerate: bool = False

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(
            {"pairs": self.pairs, "win_rate": self.win_rate, "degenerate": self.degenerate},
            indent=1), encoding="utf-8")


def transfer_experiment(
    pretrain_manifest: Manifest,
    adapt_manifest: Manifest,
    steps: int,
    seeds: list[int],
    workdir: str | Path,
    hyper: ModelHyper,
    spectro: dsp.SpectroConfig | None = None,
    pretrain_steps: int = 1000,
    heldout_count: int = 2,
    batch_size: int = 16,
    lr: float = 2e-4,
    split_seed: int = 0,
    pretrain_init_seed: int = 10_000,
) -> TransferReport:
    """Adapt from a pretrained checkpoint vs from scratch, per seed.

    Pretrains once on ``pretrain_manifest``, splits ``adapt_manifest`` into
    train/held-out, then for every seed fine-tunes (a) from the pretrained
    checkpoint and (b) from a fresh random init, both for ``steps`` steps,
    and compares held-out Text2Mel losses.
    """
    workdir = Path(workdir)
    spectro = spectro or dsp.SpectroConfig()
    report = TransferReport()
    pre_ids = {u.id for u in pretrain_manifest}
    if pre_ids & {u.id for u in adapt_manifest}:
        report.degenerate = True
        log.warning("pretrain and adaptation manifests overlap; comparison is degenerate")

    pre_examples = prepare_examples(pretrain_manifest, spectro)
    run_stage(StageSpec(
        name="pretrain", init=f"random:{pretrain_init_seed}", trainable=("text2mel",),
        manifest_path="", out_dir=str(workdir / "pretrain"),
        batch_size=batch_size, max_steps=pretrain_steps, seed=0,
        lr=lr, hyper=hyper, spectro=spectro,
    ), examples=pre_examples)
    pretrain_dir = workdir / "pretrain" / "final"

    adapt_train, adapt_held = split_manifest(adapt_manifest, heldout_count, split_seed)
    train_examples = prepare_examples(adapt_train, spectro)
    held_examples = prepare_examples(adapt_held, spectro)

    wins = 0
    for seed in seeds:
        finetuned = run_stage(StageSpec(
            name=f"adapt-ft-{seed}", init=f"checkpoint:{pretrain_dir}",
            trainable=("text2mel",), manifest_path="",
            out_dir=str(workdir / f"ft_{seed}"), batch_size=batch_size,
            max_steps=steps, seed=seed, lr=lr,
        ), examples=train_examples)
        scratch = run_stage(StageSpec(
            name=f"adapt-rand-{seed}", init=f"random:{seed}",
            trainable=("text2mel",), manifest_path="",
            out_dir=str(workdir / f"rand_{seed}"), batch_size=batch_size,
            max_steps=steps, seed=seed, lr=lr, hyper=hyper, spectro=spectro,
        ), examples=train_examples)
        loss_ft = evaluate_text2mel_loss(finetuned, held_examples)
        loss_rand = evaluate_text2mel_loss(scratch, held_examples)
        wins += loss_ft < loss_rand
        report.pairs.append({"seed": seed, "loss_finetuned": loss_ft, "loss_random": loss_rand})
        log.info("transfer seed %d: fine-tuned %.4f vs random %.4f", seed, loss_ft, loss_rand)
    report.win_rate = wins / len(seeds) if seeds else 0.0
    return report

"""Command-line entry point.

Subcommands: preprocess | train | synth | eval-intel | mos-serve | mock-corpus.
Exit codes: 0 success, 1 user error (bad paths/config), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import dsp, evalkit, mockcorpus, synthesis
from .corpus import (
    EMOTIONS,
    ExclusionList,
    duration_report,
    scan_emotional_corpus,
    scan_neutral_corpus,
)
from .errors import EmottsError, EmptyAfterTrim, NonFiniteLoss

log = logging.getLogger(__name__)

OK, USER_ERROR, RUNTIME_FAILURE = 0, 1, 2


@dataclass
class CommandResult:
    exit_code: int
    summary: str
    artifacts: dict[str, str] = field(default_factory=dict)


def _load_spectro(args) -> dsp.SpectroConfig:
    if getattr(args, "config", None):
        return dsp.SpectroConfig.load(args.config)
    return dsp.SpectroConfig()


def cmd_preprocess(args) -> CommandResult:
    root = Path(args.root)
    if not root.is_dir():
        return CommandResult(USER_ERROR, f"corpus root {root} does not exist")
    cfg = _load_spectro(args)
    out_dir = Path(args.out)
    wav_out = out_dir / "wavs"
    wav_out.mkdir(parents=True, exist_ok=True)

    exclusions = None
    if args.exclusions:
        exclusions = ExclusionList.load_csv(args.exclusions)
    try:
        if args.kind == "neutral":
            manifests = {"neutral": scan_neutral_corpus(root)}
        else:
            emotions = [args.emotion] if args.emotion else list(EMOTIONS)
            manifests = {e: scan_emotional_corpus(root, e, exclusions) for e in emotions}
    except EmottsError as exc:
        return CommandResult(USER_ERROR, f"scan failed: {exc}")

    skipped: list[tuple[str, str]] = []
    for manifest in manifests.values():
        kept = []
        for utt in manifest:
            buf = dsp.load_audio(utt.audio_path, cfg)
            try:
                trimmed = dsp.trim_silence(buf, cfg.top_db, cfg.hop)
            except EmptyAfterTrim:
                skipped.append((utt.id, "EmptyAfterTrim"))
                continue
            path = wav_out / f"{utt.id}.wav"
            dsp.save_audio(trimmed, path)
            utt.audio_path = str(path)
            utt.duration_s = trimmed.duration_s
            kept.append(utt)
        manifest.utterances = kept

    table = duration_report(manifests)
    lines = [table]
    artifacts = {}
    for emotion, manifest in manifests.items():
        manifest_path = out_dir / f"manifest_{emotion}.csv"
        manifest.save_csv(manifest_path)
        artifacts[emotion] = str(manifest_path)
    if skipped:
        skip_path = out_dir / "skipped.csv"
        skip_path.write_text(
            "id,reason\n" + "\n".join(f"{i},{r}" for i, r in skipped) + "\n", encoding="utf-8")
        artifacts["skipped"] = str(skip_path)
        lines.append(f"skipped {len(skipped)} utterances (see {skip_path})")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return CommandResult(OK, "\n".join(lines), artifacts)


def cmd_train(args) -> CommandResult:
    from .training import StageSpec, run_stage

    try:
        spec = StageSpec.from_file(args.stage_config)
        if args.seed is not None:
            spec.seed = args.seed
        spec.validate()
    except (OSError, KeyError, ValueError) as exc:
        return CommandResult(USER_ERROR, f"bad stage config: {exc}")
    try:
        ckpt = run_stage(spec)
    except NonFiniteLoss as exc:
        return CommandResult(RUNTIME_FAILURE, f"training aborted: {exc}")
    except EmottsError as exc:
        return CommandResult(USER_ERROR, f"stage setup failed: {exc}")
    loss_log = Path(spec.out_dir) / "loss_log.csv"
    final_dir = Path(spec.out_dir) / "final"
    rows = loss_log.read_text(encoding="utf-8").strip().splitlines()
    if len(rows) > 1:
        first = float(rows[1].split(",")[1])
        last = float(rows[-1].split(",")[1])
        summary = (f"stage {spec.name}: {spec.max_steps} steps, "
                   f"loss {first:.4f} -> {last:.4f}, checkpoint {final_dir}")
    else:
        summary = f"stage {spec.name}: no steps run, checkpoint {final_dir}"
    return CommandResult(OK, summary, {"checkpoint": str(final_dir), "loss_log": str(loss_log)})


def _load_merged_checkpoint(t2m_dir: str, ssrn_dir: str):
    from .training import Checkpoint

    t2m_ckpt = Checkpoint.load(t2m_dir)
    ssrn_ckpt = Checkpoint.load(ssrn_dir) if ssrn_dir and ssrn_dir != t2m_dir else t2m_ckpt
    if t2m_ckpt.spectro != ssrn_ckpt.spectro or t2m_ckpt.hyper != ssrn_ckpt.hyper:
        raise ValueError("checkpoint configs differ between text2mel and ssrn sources")
    t2m_ckpt.ssrn = ssrn_ckpt.ssrn
    return t2m_ckpt


def cmd_synth(args) -> CommandResult:
    try:
        ckpt = _load_merged_checkpoint(args.text2mel, args.ssrn or args.text2mel)
    except (OSError, ValueError, KeyError) as exc:
        return CommandResult(USER_ERROR, f"cannot load checkpoints: {exc}")
    opts = synthesis.SynthesisOptions(max_frames=args.max_frames)
    if args.sentences:
        texts = [line for line in Path(args.sentences).read_text(encoding="utf-8").splitlines()
                 if line.strip()]
        results = synthesis.batch_synthesize(ckpt, texts, args.out, opts)
        n_ok = sum(r.status == "ok" for r in results)
        return CommandResult(
            OK, f"synthesized {n_ok}/{len(results)} sentences into {args.out}",
            {"report": str(Path(args.out) / "report.csv")})
    buf = synthesis.synthesize(ckpt, args.text, opts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dsp.save_audio(buf, out)
    return CommandResult(OK, f"wrote {buf.duration_s:.2f}s of audio to {out}", {"wav": str(out)})


def _build_asr(spec: str, sentences: list[str], wavs: list[Path]) -> evalkit.AsrAdapter:
    if spec.startswith("cmd:"):
        return evalkit.CommandAsr(spec[4:].split())
    if spec.startswith("http:") or spec.startswith("https:"):
        return evalkit.HttpAsr(spec)
    if spec == "mock-echo":
        by_path = {str(w): s for w, s in zip(wavs, sentences)}
        return evalkit.MockAsr(lambda p: by_path[p])
    if spec == "mock-empty":
        return evalkit.MockAsr(lambda p: "")
    raise ValueError(f"unknown asr spec {spec!r} (use cmd:<command>, http(s):<url>, "
                     f"mock-echo, or mock-empty)")


def cmd_eval_intel(args) -> CommandResult:
    sentences = [line for line in Path(args.sentences).read_text(encoding="utf-8").splitlines()
                 if line.strip()]
    wav_dir = Path(args.wav_dir)
    if not wav_dir.is_dir():
        return CommandResult(USER_ERROR, f"wav dir {wav_dir} does not exist")
    wavs = sorted(wav_dir.glob("*.wav"))
    if len(wavs) != len(sentences):
        return CommandResult(USER_ERROR,
                             f"{len(sentences)} sentences but {len(wavs)} wavs in {wav_dir}")
    try:
        asr = _build_asr(args.asr, sentences, wavs)
    except ValueError as exc:
        return CommandResult(USER_ERROR, str(exc))
    result = evalkit.intelligibility_eval(sentences, [str(w) for w in wavs], asr,
                                          parallelism=args.parallelism)
    if result.n_failed == len(sentences):
        return CommandResult(RUNTIME_FAILURE, "every ASR call failed")
    table = evalkit.format_accuracy_table([(args.name, result.mean, result.ci95)])
    artifacts = {}
    if args.out:
        result.save_csv(args.out)
        artifacts["csv"] = str(args.out)
    return CommandResult(OK, table.rstrip(), artifacts)


def cmd_mock_corpus(args) -> CommandResult:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return CommandResult(USER_ERROR, f"cannot create {out}: {exc}")
    seed = args.seed if args.seed is not None else 0
    if args.kind == "neutral":
        mockcorpus.make_neutral_corpus(out, args.count, seed=seed)
        return CommandResult(OK, f"wrote neutral mock corpus ({args.count} utterances) to {out}")
    counts = mockcorpus.REFERENCE_COUNTS
    if args.counts:
        counts = {}
        for part in args.counts.split(","):
            emotion, _, numbers = part.partition("=")
            clean, edited, excluded = (int(x) for x in numbers.split(":"))
            counts[emotion] = {"clean": clean, "edited": edited, "excluded": excluded}
    _, exclusion_path = mockcorpus.make_emotional_corpus(out, counts, seed=seed)
    total = sum(sum(c.values()) for c in counts.values())
    return CommandResult(OK, f"wrote emotional mock corpus ({total} files) to {out}",
                         {"exclusions": str(exclusion_path)})


def cmd_mos_serve(args) -> CommandResult:
    from . import mos_service

    try:
        mos_service.serve(args.survey, args.store, host=args.host, port=args.port,
                          allow_half=args.allow_half)
    except EmottsError as exc:
        return CommandResult(USER_ERROR, f"cannot start survey: {exc}")
    return CommandResult(OK, "server stopped")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emotts", description=__doc__)
    parser.add_argument("--config", help="spectrogram config key-value file")
    parser.add_argument("--seed", type=int, default=None, help="override stage/generator seed")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="scan + trim a corpus into processed wavs and a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--kind", choices=["neutral", "emotional"], required=True)
    p.add_argument("--emotion", default=None)
    p.add_argument("--exclusions", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="run one training stage from a config file")
    p.add_argument("stage_config")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("synth", help="synthesize text or a sentences file")
    p.add_argument("--text", default=None)
    p.add_argument("--sentences", default=None)
    p.add_argument("--text2mel", required=True, help="checkpoint dir for Text2Mel")
    p.add_argument("--ssrn", default=None, help="checkpoint dir for SSRN (default: same)")
    p.add_argument("--out", required=True)
    p.add_argument("--max-frames", type=int, default=210)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("eval-intel", help="word-accuracy evaluation via an ASR adapter")
    p.add_argument("--sentences", required=True)
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--asr", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--name", default="model")
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(fn=cmd_eval_intel)

    p = sub.add_parser("mos-serve", help="run the listening-test backend")
    p.add_argument("--survey", default=os.environ.get("EMOTTS_MOS_SURVEY"),
                   required="EMOTTS_MOS_SURVEY" not in os.environ)
    p.add_argument("--store", default=os.environ.get("EMOTTS_MOS_STORE"),
                   required="EMOTTS_MOS_STORE" not in os.environ)
    p.add_argument("--host", default=os.environ.get("EMOTTS_MOS_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int, default=int(os.environ.get("EMOTTS_MOS_PORT", "8765")))
    p.add_argument("--allow-half", action="store_true")
    p.set_defaults(fn=cmd_mos_serve)

    p = sub.add_parser("mock-corpus", help="generate a deterministic synthetic corpus tree")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["neutral", "emotional"], default="emotional")
    p.add_argument("--count", type=int, default=100, help="utterances (neutral kind)")
    p.add_argument("--counts", default=None,
                   help="emotional kind: emotion=clean:edited:excluded[,...]")
    p.set_defaults(fn=cmd_mock_corpus)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth" and bool(args.text) == bool(args.sentences):
        print("synth needs exactly one of --text / --sentences", file=sys.stderr)
        return USER_ERROR
    try:
        result: CommandResult = args.fn(args)
    except EmottsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_FAILURE
    print(result.summary)
    for name, path in result.artifacts.items():
        log.info("artifact %s: %s", name, path)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())

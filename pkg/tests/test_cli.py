import csv
from pathlib import Path

import numpy as np
import pytest

from emotts import dsp, mockcorpus
from emotts.cli import main
from emotts.corpus import Manifest
from emotts.model import ModelHyper
from emotts.training import Checkpoint, StageSpec, init_params

HYPER = ModelHyper(embed_dim=8, hidden_dim=16, n_mels=20, lin_bins=33, charset_size=34)
MICRO_CFG = dsp.SpectroConfig(n_fft=64, hop=16, win=64, n_mels=20, gl_iters=4)


@pytest.fixture(scope="module")
def micro_ckpt_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "ck"
    init_params(HYPER, seed=0, spectro=MICRO_CFG).save(path)
    return path


class TestMockCorpusAndPreprocess:
    def test_mock_corpus_then_preprocess_counts(self, tmp_path, capsys):
        corpus_dir = tmp_path / "corpus"
        code = main(["mock-corpus", "--out", str(corpus_dir), "--kind", "emotional",
                     "--counts", "amused=4:2:1,sleepy=3:0:1"])
        assert code == 0
        out_dir = tmp_path / "processed"
        code = main(["preprocess", "--root", str(corpus_dir), "--kind", "emotional",
                     "--emotion", "amused",
                     "--exclusions", str(corpus_dir / "exclusions.csv"),
                     "--out", str(out_dir)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "Amused" in printed and "6" in printed
        manifest = Manifest.load_csv(out_dir / "manifest_amused.csv")
        assert len(manifest) == 6  # 4 clean + 2 edited
        for utt in manifest:
            assert Path(utt.audio_path).exists()

    def test_mock_corpus_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["--seed", "5", "mock-corpus", "--out", str(tmp_path / name),
                         "--kind", "neutral", "--count", "3"]) == 0
        wav_a = sorted((tmp_path / "a" / "wavs").glob("*.wav"))
        wav_b = sorted((tmp_path / "b" / "wavs").glob("*.wav"))
        assert [p.name for p in wav_a] == [p.name for p in wav_b]
        for pa, pb in zip(wav_a, wav_b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_preprocess_missing_root_exit_1(self, tmp_path):
        assert main(["preprocess", "--root", str(tmp_path / "nope"), "--kind", "neutral",
                     "--out", str(tmp_path / "o")]) == 1

    def test_preprocess_skips_silent_files(self, tmp_path, capsys):
        root = tmp_path / "neutral"
        mockcorpus.make_neutral_corpus(root, 2, seed=0)
        silent = dsp.AudioBuffer(np.zeros(4000), 22050)
        dsp.save_audio(silent, root / "wavs" / "neutral_0000.wav")
        out_dir = tmp_path / "out"
        assert main(["preprocess", "--root", str(root), "--kind", "neutral",
                     "--out", str(out_dir)]) == 0
        skipped = (out_dir / "skipped.csv").read_text()
        assert "neutral_0000,EmptyAfterTrim" in skipped
        assert len(Manifest.load_csv(out_dir / "manifest_neutral.csv")) == 1


class TestTrain:
    def _write_stage(self, tmp_path, manifest_path, **overrides):
        spec = StageSpec(
            name="toy", init="random:0", trainable=("text2mel",),
            manifest_path=str(manifest_path), out_dir=str(tmp_path / "run"),
            batch_size=2, max_steps=0, seed=0, hyper=HYPER, spectro=MICRO_CFG)
        for key, value in overrides.items():
            setattr(spec, key, value)
        path = tmp_path / "stage.cfg"
        spec.to_file(path)
        return path

    @pytest.fixture
    def toy_manifest(self, tmp_path):
        toy = mockcorpus.build_toy_corpus(tmp_path / "toy", ["ab.", "cd."])
        path = tmp_path / "m.csv"
        toy.manifest.save_csv(path)
        return path

    def test_zero_steps_checkpoint_equals_init(self, tmp_path, toy_manifest):
        cfg_path = self._write_stage(tmp_path, toy_manifest)
        assert main(["train", str(cfg_path)]) == 0
        out = Checkpoint.load(tmp_path / "run" / "final")
        ref = init_params(HYPER, seed=0, spectro=MICRO_CFG)
        for name in ref.text2mel:
            np.testing.assert_array_equal(out.text2mel[name], ref.text2mel[name])

    def test_overfit_loss_drops(self, tmp_path, toy_manifest, capsys):
        cfg_path = self._write_stage(tmp_path, toy_manifest, max_steps=30, lr=1e-3)
        assert main(["train", str(cfg_path)]) == 0
        summary = capsys.readouterr().out
        with open(tmp_path / "run" / "loss_log.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[-1]["loss_total"]) < float(rows[0]["loss_total"])
        assert "->" in summary

    def test_nothing_trainable_exit_1(self, tmp_path, toy_manifest):
        cfg_path = self._write_stage(tmp_path, toy_manifest, trainable=(), max_steps=5)
        assert main(["train", str(cfg_path)]) == 1


class TestSynthCommand:
    def test_single_text_writes_wav(self, tmp_path, micro_ckpt_dir):
        out = tmp_path / "say.wav"
        code = main(["synth", "--text", "hi", "--text2mel", str(micro_ckpt_dir),
                     "--out", str(out), "--max-frames", "16"])
        assert code == 0
        assert out.exists()

    def test_sentences_file_batch_report(self, tmp_path, micro_ckpt_dir):
        sentences = tmp_path / "s.txt"
        sentences.write_text("hi\nyo\n")
        out_dir = tmp_path / "synth"
        code = main(["synth", "--sentences", str(sentences),
                     "--text2mel", str(micro_ckpt_dir), "--out", str(out_dir),
                     "--max-frames", "16"])
        assert code == 0
        with open(out_dir / "report.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 2

    def test_config_mismatch_exit_1(self, tmp_path, micro_ckpt_dir):
        other = tmp_path / "other_ck"
        init_params(HYPER, seed=1, spectro=dsp.SpectroConfig(
            n_fft=64, hop=16, win=32, n_mels=20)).save(other)
        code = main(["synth", "--text", "hi", "--text2mel", str(micro_ckpt_dir),
                     "--ssrn", str(other), "--out", str(tmp_path / "x.wav")])
        assert code == 1

    def test_missing_both_text_and_sentences(self, tmp_path, micro_ckpt_dir):
        assert main(["synth", "--text2mel", str(micro_ckpt_dir),
                     "--out", str(tmp_path / "x.wav")]) == 1


class TestEvalIntel:
    @pytest.fixture
    def wav_dir(self, tmp_path):
        d = tmp_path / "wavs"
        d.mkdir()
        for i in range(3):
            dsp.save_audio(dsp.AudioBuffer(0.1 * np.ones(512), 22050), d / f"utt_{i}.wav")
        return d

    @pytest.fixture
    def sentences_file(self, tmp_path):
        path = tmp_path / "sent.txt"
        path.write_text("the cat sat\na dog ran\nbirds fly\n")
        return path

    def test_echo_mock_perfect(self, tmp_path, wav_dir, sentences_file, capsys):
        code = main(["eval-intel", "--sentences", str(sentences_file),
                     "--wav-dir", str(wav_dir), "--asr", "mock-echo",
                     "--out", str(tmp_path / "res.csv")])
        assert code == 0
        assert "1.000 ± 0.000" in capsys.readouterr().out
        with open(tmp_path / "res.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 3

    def test_empty_mock_zero(self, wav_dir, sentences_file, capsys):
        code = main(["eval-intel", "--sentences", str(sentences_file),
                     "--wav-dir", str(wav_dir), "--asr", "mock-empty"])
        assert code == 0
        assert "0.000 ± 0.000" in capsys.readouterr().out

    def test_all_asr_failures_exit_2(self, wav_dir, sentences_file):
        code = main(["eval-intel", "--sentences", str(sentences_file),
                     "--wav-dir", str(wav_dir), "--asr", "cmd:/bin/false"])
        assert code == 2

    def test_command_adapter_end_to_end(self, tmp_path, wav_dir, sentences_file, capsys):
        import stat
        script = tmp_path / "asr.sh"
        script.write_text("#!/bin/sh\necho the cat sat\n")
        script.chmod(script.stat().st_mode | stat.S_IEXEC)
        code = main(["eval-intel", "--sentences", str(sentences_file),
                     "--wav-dir", str(wav_dir), "--asr", f"cmd:{script}"])
        assert code == 0
        out = capsys.readouterr().out
        assert "±" in out

import csv

import numpy as np
import pytest

from emotts import dsp
from emotts.errors import EmptyText, NoAlignment, UnwritableOutput
from emotts.model import ModelHyper
from emotts.synthesis import SynthesisOptions, batch_synthesize, synthesize, synthesize_mel
from emotts.training import init_params

HYPER = ModelHyper(embed_dim=8, hidden_dim=16, n_mels=20, lin_bins=33, charset_size=34)
CFG = dsp.SpectroConfig(n_fft=64, hop=16, win=64, n_mels=20, gl_iters=8)


@pytest.fixture(scope="module")
def random_ckpt():
    return init_params(HYPER, seed=5, spectro=CFG)


class TestSynthesizeMel:
    def test_untrained_monotonic_and_capped(self, random_ckpt):
        opts = SynthesisOptions(max_frames=40)
        result = synthesize_mel(random_ckpt, "hi", opts)
        assert result.mel.n_frames <= 40
        steps = np.diff(result.positions)
        assert (steps >= 0).all()
        assert (steps <= opts.window_ahead).all()

    def test_empty_text(self, random_ckpt):
        with pytest.raises(EmptyText):
            synthesize_mel(random_ckpt, "@@@")

    def test_deterministic(self, random_ckpt):
        opts = SynthesisOptions(max_frames=25)
        a = synthesize_mel(random_ckpt, "hello there", opts)
        b = synthesize_mel(random_ckpt, "hello there", opts)
        np.testing.assert_array_equal(a.mel.frames, b.mel.frames)
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_no_alignment_on_unreachable_text(self, random_ckpt):
        # 8 frames x ahead<=3 can never reach the end of a long sentence
        opts = SynthesisOptions(max_frames=8)
        with pytest.raises(NoAlignment):
            synthesize_mel(random_ckpt, "this sentence is far too long to attend", opts)

    def test_attention_is_column_stochastic(self, random_ckpt):
        result = synthesize_mel(random_ckpt, "hi", SynthesisOptions(max_frames=40))
        sums = result.attention.sum(axis=0)
        np.testing.assert_allclose(sums, 1.0, atol=1e-4)

    def test_window_masking_confines_mass(self, random_ckpt):
        opts = SynthesisOptions(max_frames=15)
        result = synthesize_mel(random_ckpt, "abcdefghij", opts)
        cursor = 0
        for t in range(result.attention.shape[1]):
            lo = max(0, cursor - opts.window_back)
            hi = min(result.attention.shape[0] - 1, cursor + opts.window_ahead)
            outside = result.attention[:, t].sum() - result.attention[lo:hi + 1, t].sum()
            assert outside < 1e-6
            cursor = max(cursor, int(result.attention[:, t].argmax()))


class TestSynthesize:
    def test_length_arithmetic_and_bounds(self, random_ckpt):
        opts = SynthesisOptions(max_frames=15)
        buf = synthesize(random_ckpt, "hello", opts)
        result = synthesize_mel(random_ckpt, "hello", opts)
        lin_frames = CFG.reduction * result.mel.n_frames
        expected = lin_frames * CFG.hop
        assert abs(len(buf.samples) - expected) <= CFG.win
        assert np.abs(buf.samples).max() <= 1.0
        assert np.isfinite(buf.samples).all()
        assert buf.rate == CFG.sample_rate


class TestBatchSynthesize:
    def test_mixed_statuses_do_not_abort(self, random_ckpt, tmp_path):
        opts = SynthesisOptions(max_frames=12)
        texts = ["hi", "@@@", "yes"]
        results = batch_synthesize(random_ckpt, texts, tmp_path / "out", opts)
        statuses = [r.status for r in results]
        assert statuses == ["ok", "empty_text", "ok"]
        assert (tmp_path / "out" / "utt_0000.wav").exists()
        assert not (tmp_path / "out" / "utt_0001.wav").exists()
        assert (tmp_path / "out" / "utt_0002.wav").exists()

    def test_report_rows_in_order(self, random_ckpt, tmp_path):
        opts = SynthesisOptions(max_frames=12)
        texts = ["one", "two", "three"]
        batch_synthesize(random_ckpt, texts, tmp_path / "rep", opts)
        with open(tmp_path / "rep" / "report.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["text"] for r in rows] == texts
        assert [int(r["index"]) for r in rows] == [0, 1, 2]
        assert set(rows[0]) == {"index", "text", "wav_path", "status", "frames"}

    def test_unwritable_output(self, random_ckpt, tmp_path):
        target = tmp_path / "blocked"
        target.write_text("file in the way")
        with pytest.raises(UnwritableOutput):
            batch_synthesize(random_ckpt, ["hi"], target)

    def test_hundred_sentences_hundred_rows(self, random_ckpt, tmp_path):
        from emotts.evalkit import harvard_sentences
        sentences = harvard_sentences(100)
        opts = SynthesisOptions(max_frames=20)
        results = batch_synthesize(random_ckpt, sentences, tmp_path / "hundred", opts)
        assert len(results) == 100
        assert [r.text for r in results] == sentences
        with open(tmp_path / "hundred" / "report.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 100

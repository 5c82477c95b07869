import math
import stat
import time

import httpx
import numpy as np
import pytest

from emotts.errors import (
    AsrTransportError,
    EmptyInput,
    EmptyReference,
    InvalidScore,
    LengthMismatch,
)
from emotts.evalkit import (
    CommandAsr,
    HttpAsr,
    MockAsr,
    RatingRecord,
    format_pm,
    harvard_sentences,
    intelligibility_eval,
    mean_ci,
    mos_report,
    tokenize_words,
    word_accuracy,
)


def brute_force_accuracy(ref_words, hyp_words):
    """Exhaustive minimum-edit alignment, independent of the DP implementation."""

    def dist(i, j):
        if i == len(ref_words):
            return len(hyp_words) - j
        if j == len(hyp_words):
            return len(ref_words) - i
        best = dist(i + 1, j) + 1            # deletion
        best = min(best, dist(i, j + 1) + 1)  # insertion
        best = min(best, dist(i + 1, j + 1) + (ref_words[i] != hyp_words[j]))
        return best

    return max(0.0, 1.0 - dist(0, 0) / len(ref_words))


class TestWordAccuracy:
    def test_identity(self):
        assert word_accuracy("the quick brown fox", "The quick brown fox!") == 1.0

    def test_empty_hypothesis(self):
        assert word_accuracy("any sentence here", "") == 0.0

    def test_two_deletions(self):
        ref = "the birch canoe slid on the smooth planks"
        hyp = "the canoe slid on smooth planks"
        assert word_accuracy(ref, hyp) == pytest.approx(0.75)

    def test_empty_reference(self):
        with pytest.raises(EmptyReference):
            word_accuracy("...", "hello")

    def test_bounded_unit_iff_identical(self):
        rng = np.random.default_rng(0)
        vocab = ["ba", "do", "mi", "ta"]
        for _ in range(300):
            ref = [vocab[i] for i in rng.integers(0, 4, rng.integers(1, 6))]
            hyp = [vocab[i] for i in rng.integers(0, 4, rng.integers(0, 6))]
            acc = word_accuracy(" ".join(ref), " ".join(hyp))
            assert 0.0 <= acc <= 1.0
            if ref == hyp:
                assert acc == 1.0
            if acc == 1.0:
                assert ref == hyp

    def test_matches_brute_force_alignment(self):
        rng = np.random.default_rng(42)
        vocab = ["oak", "elm", "fir", "ash", "yew"]
        for _ in range(200):
            ref = [vocab[i] for i in rng.integers(0, 5, rng.integers(1, 7))]
            hyp = [vocab[i] for i in rng.integers(0, 5, rng.integers(0, 7))]
            assert word_accuracy(" ".join(ref), " ".join(hyp)) == pytest.approx(
                brute_force_accuracy(ref, hyp))

    def test_tokenizer_strips_punctuation_and_case(self):
        assert tokenize_words("It's FINE, really -- ok?") == ["its", "fine", "really", "ok"]


class TestMeanCi:
    def test_zero_variance(self):
        assert mean_ci([3, 3, 3]) == (3.0, 0.0)

    def test_two_point_closed_form(self):
        mean, half = mean_ci([0, 5])
        assert mean == 2.5
        assert half == pytest.approx(1.96 * np.std([0, 5], ddof=1) / math.sqrt(2))
        assert half == pytest.approx(4.8999, abs=1e-3)  # = 1.96 * 3.53553... / sqrt(2)

    def test_single_value(self):
        assert mean_ci([4]) == (4.0, 0.0)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            mean_ci([])

    def test_matches_closed_form_on_random_inputs(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            values = rng.normal(0, 10, rng.integers(2, 40))
            mean, half = mean_ci(values)
            expected_mean = values.sum() / len(values)
            expected_half = 1.96 * values.std(ddof=1) / math.sqrt(len(values))
            assert abs(mean - expected_mean) <= 1e-12 * max(1, abs(expected_mean))
            assert abs(half - expected_half) <= 1e-12 * max(1, abs(expected_half))

    def test_t_multiplier_flag(self):
        from scipy import stats
        mean, half = mean_ci([1.0, 2.0, 3.0], use_t=True)
        expected = float(stats.t.ppf(0.975, 2)) * np.std([1, 2, 3], ddof=1) / math.sqrt(3)
        assert half == pytest.approx(expected)


class TestFormatPm:
    def test_accuracy_row_string(self):
        assert format_pm(0.630, 0.042, 3) == "0.630 ± 0.042"

    def test_mos_row_string(self):
        assert format_pm(3.59, 0.24, 2) == "3.59 ± 0.24"

    def test_zeros(self):
        assert format_pm(0, 0, 3) == "0.000 ± 0.000"

    def test_half_even_rounding(self):
        # exact binary halves round to the even neighbor
        assert format_pm(0.125, 0.0, 2) == "0.12 ± 0.00"
        assert format_pm(0.375, 0.0, 2) == "0.38 ± 0.00"


class TestIntelligibilityEval:
    SENTENCES = ["the cat sat", "a dog ran fast", "birds fly south"]

    def test_echo_asr_perfect(self, tmp_path):
        wavs = [str(tmp_path / f"{i}.wav") for i in range(3)]
        by_path = dict(zip(wavs, self.SENTENCES))
        result = intelligibility_eval(self.SENTENCES, wavs, MockAsr(by_path.get))
        assert result.mean == 1.0 and result.ci95 == 0.0

    def test_empty_asr_zero(self, tmp_path):
        wavs = [str(tmp_path / f"{i}.wav") for i in range(3)]
        result = intelligibility_eval(self.SENTENCES, wavs, MockAsr(lambda p: ""))
        assert result.mean == 0.0

    def test_seeded_corruption_matches_mean_ci(self, tmp_path):
        # drop the last word of every other sentence: accuracies are known exactly
        wavs = [str(tmp_path / f"{i}.wav") for i in range(3)]
        hyps = ["the cat", "a dog ran fast", "birds fly"]
        by_path = dict(zip(wavs, hyps))
        result = intelligibility_eval(self.SENTENCES, wavs, MockAsr(by_path.get))
        expected = [2 / 3, 1.0, 2 / 3]
        mean, half = mean_ci(expected)
        assert result.mean == pytest.approx(mean)
        assert result.ci95 == pytest.approx(half)

    def test_transport_failures_flagged_as_zero(self, tmp_path):
        def flaky(path):
            if path.endswith("1.wav"):
                raise AsrTransportError("down")
            return "the cat sat"

        wavs = [str(tmp_path / f"{i}.wav") for i in range(3)]
        result = intelligibility_eval(self.SENTENCES, wavs, MockAsr(flaky))
        assert result.n_failed == 1
        assert result.per_sentence[1].accuracy == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            intelligibility_eval(["a"], [], MockAsr(lambda p: ""))

    def test_order_invariant_mean(self, tmp_path):
        wavs = [str(tmp_path / f"{i}.wav") for i in range(3)]
        hyps = ["the cat", "a dog ran fast", "birds fly"]
        by_path = dict(zip(wavs, hyps))
        forward = intelligibility_eval(self.SENTENCES, wavs, MockAsr(by_path.get))
        reordered = intelligibility_eval(self.SENTENCES[::-1], wavs[::-1], MockAsr(by_path.get))
        assert forward.mean == pytest.approx(reordered.mean)

    def test_parallel_results_in_input_order(self, tmp_path):
        wavs = [str(tmp_path / f"{i}.wav") for i in range(6)]
        sentences = [f"word{i}" for i in range(6)]
        by_path = dict(zip(wavs, sentences))
        result = intelligibility_eval(sentences, wavs, MockAsr(by_path.get), parallelism=3)
        assert [s.hyp for s in result.per_sentence] == sentences


class TestAsrAdapters:
    def test_command_adapter_reads_stdout(self, tmp_path):
        script = tmp_path / "fake_asr.sh"
        script.write_text("#!/bin/sh\necho \"hello from $1\"\n")
        script.chmod(script.stat().st_mode | stat.S_IEXEC)
        asr = CommandAsr([str(script)])
        assert asr("/x/y.wav") == "hello from /x/y.wav"

    def test_command_adapter_nonzero_exit(self, tmp_path):
        script = tmp_path / "broken.sh"
        script.write_text("#!/bin/sh\nexit 3\n")
        script.chmod(script.stat().st_mode | stat.S_IEXEC)
        with pytest.raises(AsrTransportError):
            CommandAsr([str(script)])("/x/y.wav")

    def test_http_adapter(self, tmp_path):
        wav = tmp_path / "a.wav"
        wav.write_bytes(b"RIFFfake")

        def handler(request):
            assert request.content == b"RIFFfake"
            return httpx.Response(200, json={"transcript": "spoken words"})

        asr = HttpAsr("http://asr.test/decode", transport=httpx.MockTransport(handler))
        assert asr(str(wav)) == "spoken words"

    def test_http_adapter_error(self, tmp_path):
        wav = tmp_path / "a.wav"
        wav.write_bytes(b"x")
        asr = HttpAsr("http://asr.test/decode",
                      transport=httpx.MockTransport(lambda r: httpx.Response(500)))
        with pytest.raises(AsrTransportError):
            asr(str(wav))


def _rating(emotion, score, idx=0):
    return RatingRecord("s1", "l1", f"{emotion}_{idx}", emotion, "synthesized",
                        score, time.time())


class TestMosReport:
    def test_all_fives(self):
        stats = mos_report([_rating("amused", 5, i) for i in range(4)])
        assert stats.per_emotion["amused"] == (5.0, 0.0, 4)

    def test_matches_hand_computed_mean_ci(self):
        scores = {"amused": [2, 3, 1, 2], "neutral": [4, 3, 4, 5, 4]}
        records = [_rating(e, s, i) for e, vals in scores.items() for i, s in enumerate(vals)]
        stats = mos_report(records)
        for emotion, values in scores.items():
            mean, half = mean_ci(values)
            got_mean, got_half, n = stats.per_emotion[emotion]
            assert got_mean == pytest.approx(mean)
            assert got_half == pytest.approx(half)
            assert n == len(values)

    def test_out_of_range_score(self):
        with pytest.raises(InvalidScore):
            mos_report([_rating("amused", 7)])

    def test_fractional_score_needs_flag(self):
        with pytest.raises(InvalidScore):
            mos_report([_rating("amused", 3.5)])
        stats = mos_report([_rating("amused", 3.5)], allow_half=True)
        assert stats.per_emotion["amused"][0] == 3.5

    def test_emotions_without_ratings_omitted(self):
        stats = mos_report([_rating("sleepy", 4)])
        assert list(stats.per_emotion) == ["sleepy"]


class TestHarvardSentences:
    def test_exactly_100_shipped(self):
        sentences = harvard_sentences()
        assert len(sentences) == 100
        assert sentences[0] == "The birch canoe slid on the smooth planks."

    def test_count_truncation(self):
        assert len(harvard_sentences(10)) == 10

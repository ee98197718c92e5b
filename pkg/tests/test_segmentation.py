import numpy as np
import pytest

from beltwear.dataset import AudioClip, SandingRecordMeta, load_wav, synthesize_clip, write_manifest, write_wav
from beltwear.dsp import SpectralConfig, feature_matrix
from beltwear.segmentation import (
    MARKERS_HEADER,
    DetectorConfig,
    NoEventDetected,
    SegmentationError,
    cut_analysis_clip,
    detect_event,
    detect_start,
    energy_trace,
    load_segmented,
    make_markers,
    segment_corpus,
    state_clips,
)

META = SandingRecordMeta(1, 10, 80, "hard", "left", 2)


def synthetic(onset=2.0, seed=0, wear=1):
    meta = SandingRecordMeta(wear, 10, 80, "hard", "left", 2)
    # 7 s leaves room for the post-sanding window after an event starting at 2 s
    return synthesize_clip(meta, np.random.default_rng(seed), clip_seconds=7.0, onset_s=onset)


def noise_clip(seconds=6.0, seed=0):
    rng = np.random.default_rng(seed)
    return AudioClip(0.01 * rng.standard_normal(int(seconds * 44100)), 44100)


class TestDetection:
    @pytest.mark.parametrize("seed", range(5))
    def test_onset_at_two_seconds(self, seed):
        clip, onset, _ = synthetic(2.0, seed)
        assert onset == pytest.approx(2.0)
        assert abs(detect_start(clip) - 2.0) <= 0.05

    @pytest.mark.parametrize("onset", [1.2, 1.45, 1.6])
    def test_other_onsets(self, onset):
        clip, true_onset, _ = synthetic(onset, 9)
        assert abs(detect_start(clip) - true_onset) <= 0.05

    def test_pure_noise_has_no_event(self):
        with pytest.raises(NoEventDetected, match="no event detected"):
            detect_start(noise_clip())

    def test_short_clip_rejected(self):
        with pytest.raises(SegmentationError, match="shorter than 3 s"):
            detect_start(noise_clip(2.5))

    def test_noise_window_longer_than_clip(self):
        with pytest.raises(SegmentationError, match="noise window"):
            energy_trace(noise_clip(3.0), DetectorConfig(noise_window_s=4.0))

    @pytest.mark.parametrize("wear", [0, 4])
    def test_stop_found_despite_dust_collector(self, wear):
        clip, onset, stop = synthetic(2.0, 1, wear)
        start, end = detect_event(clip)
        assert abs(end - stop) <= 0.1

    def test_trace_timeline_is_frame_centres(self):
        tr = energy_trace(noise_clip(), DetectorConfig())
        assert tr.times[0] == pytest.approx(2822 / 2 / 44100)
        assert np.allclose(np.diff(tr.times), 705 / 44100)
        assert tr.first_search_frame == (22050 - 2822) // 705 + 1


class TestCutting:
    def test_window_arithmetic(self):
        x = np.arange(6 * 44100, dtype=float) / 1e6
        cut = cut_analysis_clip(AudioClip(x, 44100), 0.0)
        np.testing.assert_array_equal(cut.samples, x[57330:136710])

    @pytest.mark.parametrize("sr", [8000, 16000, 22050, 44100, 48000])
    def test_length_is_exact(self, sr):
        clip = AudioClip(np.zeros(6 * sr), sr)
        for start in (0.0, 0.123, 1.77, 2.9):
            assert len(cut_analysis_clip(clip, start).samples) == round(1.8 * sr)

    def test_overrun_is_an_error(self):
        with pytest.raises(SegmentationError, match="outside"):
            cut_analysis_clip(AudioClip(np.zeros(6 * 44100), 44100), 3.0)

    def test_markers(self):
        m = make_markers(2.0, 5.3)
        assert (m.pre_s, m.post_s, m.analysis_start_s, m.analysis_len_s) == pytest.approx((1.0, 5.8, 3.3, 1.8))
        with pytest.raises(SegmentationError):
            make_markers(2.0, 2.0)

    def test_pre_window_is_much_quieter_than_event(self):
        clip, onset, stop = synthetic(2.0, 4, wear=0)
        pre, post = state_clips(clip, make_markers(onset, stop))
        event = cut_analysis_clip(clip, onset)
        cfg = SpectralConfig()

        def mean_db(c):
            return 10 * np.log10(np.mean(np.exp(feature_matrix(c, cfg))))

        assert mean_db(event) - mean_db(pre) >= 10
        assert len(pre.samples) == len(post.samples) == 22050

    def test_stop_near_end_is_an_error(self):
        clip, onset, _ = synthetic(2.0, 0)
        with pytest.raises(SegmentationError):
            state_clips(clip, make_markers(onset, 6.8))


class TestCorpus:
    def test_no_rejects_and_exact_lengths(self, small_segmentation):
        res = small_segmentation
        assert res.rejects == [] and res.reject_fraction == 0.0
        assert len(res.corpus) == 15
        assert all(len(c.samples) == 79380 for c in res.corpus.analysis)
        assert max(abs(e) for e in res.detection_error_s) <= 0.05

    def test_written_layout_round_trips(self, small_segmentation, small_seg_dir):
        loaded = load_segmented(small_seg_dir)
        assert loaded.records == small_segmentation.corpus.records
        for a, b in zip(loaded.analysis, small_segmentation.corpus.analysis):
            assert len(a.samples) == 79380
            assert np.max(np.abs(a.samples - b.samples)) <= 1 / 32768
        lines = (small_seg_dir / "markers.csv").read_text().splitlines()
        assert lines[0] == ",".join(MARKERS_HEADER) and len(lines) == 16
        assert (small_seg_dir / "rejects.csv").read_text() == "clip_path,reason\n"

    def test_missing_analysis_dir(self, tmp_path, small_seg_dir):
        (tmp_path / "manifest.csv").write_bytes((small_seg_dir / "manifest.csv").read_bytes())
        with pytest.raises(FileNotFoundError):
            load_segmented(tmp_path)

    def test_noise_clip_lands_in_rejects(self, tmp_path, small_data_dir):
        good = SandingRecordMeta(0, 14, 150, "soft", "center", 1, "good.wav")
        bad = SandingRecordMeta(1, 14, 150, "soft", "center", 1, "noise.wav")
        write_wav(tmp_path / "good.wav", synthetic(2.0, 3)[0])
        write_wav(tmp_path / "noise.wav", noise_clip())
        write_manifest(tmp_path / "manifest.csv", [good, bad])
        res = segment_corpus(tmp_path)
        assert [r.clip_path for r in res.corpus.records] == ["good.wav"]
        assert res.rejects[0][0] == "noise.wav" and "no event" in res.rejects[0][1]
        assert res.reject_fraction == 0.5
        # input clip untouched
        assert len(load_wav(tmp_path / "noise.wav").samples) == 6 * 44100
        assert len(load_wav(tmp_path / "good.wav").samples) == 7 * 44100

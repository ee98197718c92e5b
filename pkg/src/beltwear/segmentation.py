"""Sanding-event detection from mel-spectrogram energy and fixed-window cutting."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from beltwear._util import parallel_map, write_text_atomic
from beltwear.dataset import AudioClip, load_manifest, load_onsets, load_wav, write_manifest, write_wav
from beltwear.dsp import SpectralConfig, filterbank, frame_geometry, power_spectrogram

ANALYSIS_OFFSET_S = 1.3
ANALYSIS_LEN_S = 1.8
PRE_OFFSET_S = 1.0
POST_OFFSET_S = 0.5
STATE_LEN_S = 0.5


class SegmentationError(ValueError):
    pass


class NoEventDetected(SegmentationError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    w_l: int = 64
    n_b: int = 64
    noise_window_s: float = 0.5
    k: float = 6.0
    smooth_frames: int = 5
    sustain_frames: int = 10


@dataclass(frozen=True)
class EventMarkers:
    """All times in seconds. ``pre_s``/``post_s`` are where the idle windows begin."""

    start_s: float
    stop_s: float
    pre_s: float
    post_s: float

    @property
    def analysis_start_s(self) -> float:
        return self.start_s + ANALYSIS_OFFSET_S

    @property
    def analysis_len_s(self) -> float:
        return ANALYSIS_LEN_S


def make_markers(start_s: float, stop_s: float, pre_offset_s=PRE_OFFSET_S, post_offset_s=POST_OFFSET_S) -> EventMarkers:
    if stop_s <= start_s:
        raise SegmentationError(f"stop {stop_s} is not after start {start_s}")
    return EventMarkers(start_s, stop_s, start_s - pre_offset_s, stop_s + post_offset_s)


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    """Smoothed per-frame mel energy with the frame timeline and the detection threshold."""

    times: np.ndarray
    energy: np.ndarray
    threshold: float
    first_search_frame: int


def energy_trace(clip: AudioClip, cfg: DetectorConfig = DetectorConfig()) -> EnergyTrace:
    sr = clip.sample_rate
    if cfg.noise_window_s * sr > len(clip.samples):
        raise SegmentationError("noise window is longer than the clip")
    spec_cfg = SpectralConfig("mel_spectrogram", cfg.w_l, cfg.n_b, 20, sr)
    spec = power_spectrogram(clip, spec_cfg)
    fft_size = 2 * (spec.power.shape[1] - 1)
    raw = (spec.power @ filterbank("mel", cfg.n_b, fft_size, sr).T).sum(axis=1)

    # trailing moving average; the first frames average over what is available
    csum = np.concatenate([[0.0], np.cumsum(raw)])
    idx = np.arange(len(raw))
    lo = np.maximum(0, idx - cfg.smooth_frames + 1)
    smooth = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)

    frame_len = frame_geometry(spec_cfg, len(clip.samples)).frame_len
    starts = idx * spec.frame_hop_samples
    times = (starts + frame_len / 2) / sr
    noise = starts + frame_len <= cfg.noise_window_s * sr
    n_noise = int(noise.sum())
    if n_noise == 0:
        raise SegmentationError("noise window shorter than one analysis frame")
    mu, sigma = smooth[:n_noise].mean(), smooth[:n_noise].std()
    return EnergyTrace(times, smooth, float(mu + cfg.k * sigma), n_noise)


def _sustained_runs(above: np.ndarray, min_len: int) -> list[tuple[int, int]]:
    """Inclusive (first, last) index pairs of runs of True at least ``min_len`` long."""
    padded = np.concatenate([[False], above, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends) if e - s + 1 >= min_len]


def detect_event(clip: AudioClip, cfg: DetectorConfig = DetectorConfig()) -> tuple[float, float]:
    """(start_s, stop_s) of the sanding event.

    The start is the first frame of the first sustained run above the noise
    threshold. Idle machinery after the event (the dust collector) can stay above
    that threshold, so the stop is where energy falls below the geometric mean of
    the noise level and the event's median level, or the last frame if it never does.
    """
    if clip.duration < 3.0:
        raise SegmentationError(f"clip of {clip.duration:.2f} s is shorter than 3 s")
    trace = energy_trace(clip, cfg)
    above = trace.energy > trace.threshold
    above[: trace.first_search_frame] = False
    runs = _sustained_runs(above, cfg.sustain_frames)
    if not runs:
        raise NoEventDetected("no event detected")
    first, last = runs[0]
    level = float(np.median(trace.energy[first : last + 1]))
    floor = float(np.mean(trace.energy[: trace.first_search_frame]))
    stop_threshold = np.sqrt(max(level, 0.0) * max(floor, 0.0))
    below = np.flatnonzero(trace.energy[first:] < stop_threshold)
    below = below[below >= cfg.sustain_frames]
    stop = first + int(below[0]) - 1 if len(below) else len(trace.energy) - 1
    return float(trace.times[first]), float(trace.times[stop])


def detect_start(clip: AudioClip, cfg: DetectorConfig = DetectorConfig()) -> float:
    return detect_event(clip, cfg)[0]


def _window(clip: AudioClip, start_s: float, length_s: float, what: str) -> AudioClip:
    sr = clip.sample_rate
    a = int(round(start_s * sr))
    n = int(round(length_s * sr))
    if a < 0 or a + n > len(clip.samples):
        raise SegmentationError(
            f"{what} window [{start_s:.3f}, {start_s + length_s:.3f}) s outside clip of {clip.duration:.3f} s"
        )
    return AudioClip(clip.samples[a : a + n].copy(), sr)


def cut_analysis_clip(clip: AudioClip, start_s: float) -> AudioClip:
    """The fixed 1.8 s window beginning 1.3 s after the event start."""
    return _window(clip, start_s + ANALYSIS_OFFSET_S, ANALYSIS_LEN_S, "analysis")


def state_clips(clip: AudioClip, markers: EventMarkers, state_len_s: float = STATE_LEN_S) -> tuple[AudioClip, AudioClip]:
    """Idle windows before the event (engine only) and after it (engine plus dust collector)."""
    if markers.pre_s + state_len_s > markers.start_s:
        raise SegmentationError("pre-sanding window overlaps the event")
    if markers.post_s < markers.stop_s:
        raise SegmentationError("post-sanding window overlaps the event")
    pre = _window(clip, markers.pre_s, state_len_s, "pre-sanding")
    post = _window(clip, markers.post_s, state_len_s, "post-sanding")
    return pre, post


# --- corpus level -------------------------------------------------------------

MARKERS_HEADER = ("clip_path", "start_s", "stop_s", "analysis_start_s")


@dataclass(eq=False)
class SegmentedCorpus:
    """Cut clips aligned with their records: analysis windows plus idle windows."""

    records: list
    analysis: list[AudioClip]
    pre: list[AudioClip] | None = None
    post: list[AudioClip] | None = None

    def __len__(self) -> int:
        return len(self.records)


@dataclass(eq=False)
class SegmentationResult:
    corpus: SegmentedCorpus
    markers: list[EventMarkers]
    rejects: list[tuple[str, str]]
    detection_error_s: list[float]

    @property
    def reject_fraction(self) -> float:
        total = len(self.corpus) + len(self.rejects)
        return len(self.rejects) / total if total else 0.0


def segment_corpus(data_dir, cfg: DetectorConfig = DetectorConfig(), records=None) -> SegmentationResult:
    """Detect, cut and split every clip listed in ``data_dir/manifest.csv``.

    Markers come from detection only. When ``onsets.csv`` is present its ground
    truth is used to measure the onset error. Clips that fail are collected in
    ``rejects`` instead of raising.
    """
    data_dir = Path(data_dir)
    records = load_manifest(data_dir / "manifest.csv") if records is None else records
    sidecar = data_dir / "onsets.csv"
    truth = load_onsets(sidecar) if sidecar.is_file() else {}

    def one(rec):
        try:
            clip = load_wav(data_dir / rec.clip_path)
            start, stop = detect_event(clip, cfg)
            true_on = truth.get(rec.clip_path, (None, None))[0]
            markers = make_markers(start, stop)
            analysis = cut_analysis_clip(clip, start)
            pre, post = state_clips(clip, markers)
        except (SegmentationError, ValueError, OSError) as exc:
            return rec, None, str(exc)
        err = None if true_on is None else start - true_on
        return rec, (markers, analysis, pre, post, err), None

    kept, markers, analysis, pre, post, rejects, errors = [], [], [], [], [], [], []
    for rec, out, reason in parallel_map(one, records):
        if out is None:
            rejects.append((rec.clip_path, reason))
            continue
        kept.append(rec)
        markers.append(out[0])
        analysis.append(out[1])
        pre.append(out[2])
        post.append(out[3])
        if out[4] is not None:
            errors.append(out[4])
    return SegmentationResult(SegmentedCorpus(kept, analysis, pre, post), markers, rejects, errors)


def write_segmented(result: SegmentationResult, out_dir) -> None:
    """Layout: manifest.csv, markers.csv, rejects.csv and analysis/, pre/, post/ WAV trees."""
    out = Path(out_dir)
    c = result.corpus

    def write(i):
        rel = c.records[i].clip_path
        write_wav(out / "analysis" / rel, c.analysis[i])
        write_wav(out / "pre" / rel, c.pre[i])
        write_wav(out / "post" / rel, c.post[i])

    parallel_map(write, range(len(c)))
    write_manifest(out / "manifest.csv", c.records)
    lines = [",".join(MARKERS_HEADER)]
    for rec, m in zip(c.records, result.markers):
        lines.append(f"{rec.clip_path},{m.start_s!r},{m.stop_s!r},{m.analysis_start_s!r}")
    write_text_atomic(out / "markers.csv", "\n".join(lines) + "\n")
    rej = ["clip_path,reason"] + [f"{p},{r.replace(',', ';')}" for p, r in result.rejects]
    write_text_atomic(out / "rejects.csv", "\n".join(rej) + "\n")


def load_segmented(seg_dir) -> SegmentedCorpus:
    seg_dir = Path(seg_dir)
    records = load_manifest(seg_dir / "manifest.csv")

    def read(sub):
        if not (seg_dir / sub).is_dir():
            return None
        return parallel_map(lambda r: load_wav(seg_dir / sub / r.clip_path), records)

    analysis = read("analysis")
    if analysis is None:
        raise FileNotFoundError(f"{seg_dir}: no analysis/ directory; run the segment command first")
    return SegmentedCorpus(records, analysis, read("pre"), read("post"))

"""Spectral feature extraction: framing, power spectrogram, mel / inverse-mel / linear
filterbanks, log compression, orthonormal DCT-II cepstra, flattening.

Window and hop are given in milliseconds; the hop is always a quarter of the
window, taken in samples as ``floor(frame_len / 4)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from beltwear.dataset import AudioClip, SandingRecordMeta

METHODS = ("spectrogram", "mel_spectrogram", "mfcc", "imfcc", "lfcc")
CEPSTRAL = {"mfcc": "mel", "imfcc": "inverse_mel", "lfcc": "linear"}
SCALES = ("mel", "inverse_mel", "linear")
SHORT_NAMES = {
    "spec": "spectrogram",
    "mel": "mel_spectrogram",
    "mfcc": "mfcc",
    "imfcc": "imfcc",
    "lfcc": "lfcc",
}
LONG_TO_SHORT = {v: k for k, v in SHORT_NAMES.items()}

GRID_WL = (32, 64, 128)
GRID_NB = (32, 64, 128)
GRID_NC = (20, 40, 60)

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class SpectralConfig:
    method: str = "mel_spectrogram"
    w_l: int = 64
    n_b: int = 64
    n_c: int = 40
    sample_rate: int = 44100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method {self.method!r} not in {METHODS}")
        if self.w_l not in GRID_WL:
            raise ValueError(f"w_l={self.w_l} not in {GRID_WL}")
        if self.n_b not in GRID_NB:
            raise ValueError(f"n_b={self.n_b} not in {GRID_NB}")
        if self.n_c not in GRID_NC and not (self.is_cepstral and self.n_c == self.n_b):
            raise ValueError(f"n_c={self.n_c} not in {GRID_NC}")
        if self.is_cepstral and self.n_c > self.n_b:
            raise ValueError(f"n_c={self.n_c} exceeds n_b={self.n_b}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def is_cepstral(self) -> bool:
        return self.method in CEPSTRAL

    @property
    def h_l(self) -> float:
        """Nominal hop in ms."""
        return self.w_l / 4

    @property
    def short_name(self) -> str:
        return LONG_TO_SHORT[self.method]

    def effective_key(self) -> tuple:
        """Identity of the features produced; unused hyperparameters collapse to None."""
        n_b = None if self.method == "spectrogram" else self.n_b
        n_c = self.n_c if self.is_cepstral else None
        return (self.method, self.w_l, n_b, n_c, self.sample_rate)


class FrameGeometry(NamedTuple):
    frame_len: int
    hop_len: int
    n_frames: int
    fft_size: int


@dataclass(frozen=True, eq=False)
class Spectrogram:
    power: np.ndarray  # frames x (fft_size/2 + 1)
    frame_hop_samples: int
    bin_frequencies: np.ndarray


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    config: SpectralConfig
    meta: SandingRecordMeta | None = None

    @property
    def dim(self) -> int:
        return len(self.values)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def frame_length(w_l_ms: float, sample_rate: int) -> int:
    return int(math.floor(w_l_ms * sample_rate / 1000 + 0.5))


def frame_geometry(config: SpectralConfig, clip_len: int) -> FrameGeometry:
    frame_len = frame_length(config.w_l, config.sample_rate)
    hop_len = frame_len // 4
    if clip_len < frame_len:
        raise ValueError(f"clip of {clip_len} samples is shorter than one {frame_len}-sample frame")
    n_frames = (clip_len - frame_len) // hop_len + 1
    return FrameGeometry(frame_len, hop_len, n_frames, next_pow2(frame_len))


def _frames(samples: np.ndarray, frame_len: int, hop_len: int, n_frames: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(samples, frame_len)
    return view[: (n_frames - 1) * hop_len + 1 : hop_len]


def power_spectrogram(clip: AudioClip, config: SpectralConfig) -> Spectrogram:
    """One-sided power spectrum per Hann-windowed frame.

    Scaled by ``c_k / fft_size`` with ``c_k = 1`` at DC and Nyquist and 2 elsewhere,
    so each row sums to the energy of the windowed frame.
    """
    if clip.sample_rate != config.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} != config rate {config.sample_rate}")
    geo = frame_geometry(config, len(clip.samples))
    frames = _frames(clip.samples, geo.frame_len, geo.hop_len, geo.n_frames) * hann_window(geo.frame_len)
    spec = np.fft.rfft(frames, n=geo.fft_size, axis=1)
    power = spec.real**2 + spec.imag**2
    power[:, 1:-1] *= 2.0
    power /= geo.fft_size
    freqs = np.arange(geo.fft_size // 2 + 1) * (config.sample_rate / geo.fft_size)
    return Spectrogram(power, geo.hop_len, freqs)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def filter_edges(scale: str, n_b: int, sample_rate: int) -> np.ndarray:
    """The ``n_b + 2`` break frequencies (Hz) of a triangular bank over [0, sr/2].

    Filter ``k`` rises from edge ``k`` to a unit peak at edge ``k+1`` and falls to edge ``k+2``.
    """
    f_max = sample_rate / 2
    if scale == "mel":
        return mel_to_hz(np.linspace(0.0, hz_to_mel(f_max), n_b + 2))
    if scale == "inverse_mel":
        return f_max - filter_edges("mel", n_b, sample_rate)[::-1]
    if scale == "linear":
        return np.linspace(0.0, f_max, n_b + 2)
    raise ValueError(f"scale {scale!r} not in {SCALES}")


@lru_cache(maxsize=64)
def _filterbank(scale: str, n_b: int, fft_size: int, sample_rate: int) -> np.ndarray:
    if n_b < 1:
        raise ValueError("n_b must be >= 1")
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size={fft_size} is not a power of two")
    edges = filter_edges(scale, n_b, sample_rate)
    freqs = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(~(fb > 0).any(axis=1))
    if len(empty):
        raise ValueError(
            f"too many filters for fft_size={fft_size}: {scale} filter {empty[0]} covers no FFT bin"
        )
    fb.setflags(write=False)
    return fb


def filterbank(scale: str, n_b: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular filters, shape ``n_b x (fft_size/2 + 1)``, evaluated at FFT bin centres."""
    return _filterbank(scale, int(n_b), int(fft_size), int(sample_rate))


def log_filterbank_energies(spec, fb: np.ndarray) -> np.ndarray:
    power = spec.power if isinstance(spec, Spectrogram) else np.asarray(spec)
    if power.shape[-1] != fb.shape[1]:
        raise ValueError(f"spectrogram has {power.shape[-1]} bins, filterbank expects {fb.shape[1]}")
    return np.log(power @ fb.T + LOG_FLOOR)


@lru_cache(maxsize=16)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row ``k`` is coefficient ``k``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def dct_ii_cepstra(log_e: np.ndarray, n_c: int) -> np.ndarray:
    n_b = log_e.shape[-1]
    if n_c > n_b:
        raise ValueError(f"n_c={n_c} exceeds n_b={n_b}")
    return log_e @ dct_matrix(n_b)[:n_c].T


def inverse_dct_ii(cepstra: np.ndarray) -> np.ndarray:
    """Inverse of the full (``n_c == n_b``) orthonormal DCT-II."""
    return cepstra @ dct_matrix(cepstra.shape[-1])


def feature_matrix(clip: AudioClip, config: SpectralConfig) -> np.ndarray:
    """Frames x features before flattening."""
    spec = power_spectrogram(clip, config)
    if config.method == "spectrogram":
        return np.log(spec.power + LOG_FLOOR)
    fft_size = 2 * (spec.power.shape[1] - 1)
    scale = "mel" if config.method == "mel_spectrogram" else CEPSTRAL[config.method]
    log_e = log_filterbank_energies(spec, filterbank(scale, config.n_b, fft_size, config.sample_rate))
    if config.method == "mel_spectrogram":
        return log_e
    return dct_ii_cepstra(log_e, config.n_c)


def feature_dim(config: SpectralConfig, clip_len: int) -> int:
    geo = frame_geometry(config, clip_len)
    if config.method == "spectrogram":
        per_frame = geo.fft_size // 2 + 1
    elif config.is_cepstral:
        per_frame = config.n_c
    else:
        per_frame = config.n_b
    return geo.n_frames * per_frame


def extract_features(clip: AudioClip, config: SpectralConfig, meta: SandingRecordMeta | None = None) -> FeatureVector:
    values = feature_matrix(clip, config).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite feature values")
    return FeatureVector(values, config, meta)


FEATURE_LABEL_COLUMNS = ("wear", "feed", "grit", "material", "position", "repetition")


def write_feature_csv(path, rows) -> None:
    """Write ``(clip_path, meta_or_None, values)`` rows; floats at 17 significant digits."""
    from beltwear._util import atomic_path

    rows = list(rows)
    dim = len(rows[0][2]) if rows else 0
    header = ["clip_path", *FEATURE_LABEL_COLUMNS, *(f"v{i}" for i in range(dim))]
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for clip_path, meta, values in rows:
                if len(values) != dim:
                    raise ValueError(f"{clip_path}: dimension {len(values)} != {dim}")
                labels = meta.as_row()[1:] if meta is not None else [""] * len(FEATURE_LABEL_COLUMNS)
                fh.write(",".join([clip_path, *labels, *(format(float(v), ".17g") for v in values)]) + "\n")


def read_feature_csv(path) -> tuple[list[str], list[SandingRecordMeta | None], np.ndarray]:
    paths, metas, values = [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        n_lab = len(FEATURE_LABEL_COLUMNS)
        if tuple(header[1 : 1 + n_lab]) != FEATURE_LABEL_COLUMNS:
            raise ValueError(f"{path}: unexpected header")
        for line in fh:
            cells = line.rstrip("\n").split(",")
            paths.append(cells[0])
            lab = cells[1 : 1 + n_lab]
            if lab[0]:
                metas.append(SandingRecordMeta(int(lab[0]), int(lab[1]), int(lab[2]), lab[3], lab[4], int(lab[5]), cells[0]))
            else:
                metas.append(None)
            values.append(np.array(cells[1 + n_lab :], dtype=np.float64))
    return paths, metas, np.array(values).reshape(len(values), -1)

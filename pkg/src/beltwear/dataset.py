"""Sanding-operation data model, manifest and WAV I/O, and the synthetic corpus generator.

The generator stands in for the proprietary recordings. Every clip is built from
four sources whose dependence on the labels is fixed by construction:

* engine hum (label independent, present for the whole clip),
* a dust collector that switches on with the sanding event and keeps running,
* the sanding event itself: a harmonic stack whose fundamental follows the feed
  speed and whose spectral tilt follows the grit size, plus a broadband noise
  floor that rises 7 dB per wear level,
* white background noise.

Material only scales the harmonic stack slightly, so it is a weak factor on purpose.
"""

from __future__ import annotations

import csv
import itertools
import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from beltwear._util import atomic_path, parallel_map, write_text_atomic

SAMPLE_RATE = 44100

WEAR_LEVELS = (0, 1, 2, 3, 4)
FEED_SPEEDS = (10, 14, 18)
GRIT_SIZES = (80, 150, 240)
MATERIALS = ("soft", "hard")
POSITIONS = ("left", "center", "right")
REPETITIONS = (1, 2, 3)

MANIFEST_HEADER = ("clip_path", "wear", "feed", "grit", "material", "position", "repetition")
ONSET_HEADER = ("clip_path", "onset_seconds", "stop_seconds")

_INT_FIELDS = {
    "wear": WEAR_LEVELS,
    "feed": FEED_SPEEDS,
    "grit": GRIT_SIZES,
    "repetition": REPETITIONS,
}
_STR_FIELDS = {"material": MATERIALS, "position": POSITIONS}


class ManifestError(ValueError):
    pass


class WavFormatError(ValueError):
    pass


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParameterConfiguration:
    feed_speed: int
    grit_size: int
    material: str

    def __str__(self) -> str:
        return f"f{self.feed_speed}_g{self.grit_size}_{self.material}"


ALL_CONFIGURATIONS = tuple(
    ParameterConfiguration(f, g, m) for f, g, m in itertools.product(FEED_SPEEDS, GRIT_SIZES, MATERIALS)
)


@dataclass(frozen=True)
class SandingRecordMeta:
    wear_level: int
    feed_speed: int
    grit_size: int
    material: str
    position: str
    repetition: int
    clip_path: str = ""

    def __post_init__(self):
        for name, value, domain in (
            ("wear", self.wear_level, WEAR_LEVELS),
            ("feed", self.feed_speed, FEED_SPEEDS),
            ("grit", self.grit_size, GRIT_SIZES),
            ("material", self.material, MATERIALS),
            ("position", self.position, POSITIONS),
            ("repetition", self.repetition, REPETITIONS),
        ):
            if value not in domain:
                raise ValueError(f"{name}={value!r} not in {domain}")

    @property
    def key(self) -> tuple:
        return (self.wear_level, self.feed_speed, self.grit_size, self.material, self.position, self.repetition)

    @property
    def configuration(self) -> ParameterConfiguration:
        return ParameterConfiguration(self.feed_speed, self.grit_size, self.material)

    def as_row(self) -> list[str]:
        return [
            self.clip_path,
            str(self.wear_level),
            str(self.feed_speed),
            str(self.grit_size),
            self.material,
            self.position,
            str(self.repetition),
        ]


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def full_corpus_records() -> list[SandingRecordMeta]:
    """All 810 operations in canonical order (wear, feed, grit, material, position, repetition)."""
    records = []
    for w, f, g, m, p, r in itertools.product(
        WEAR_LEVELS, FEED_SPEEDS, GRIT_SIZES, MATERIALS, POSITIONS, REPETITIONS
    ):
        path = f"clips/w{w}_f{f}_g{g}_{m}_{p}_r{r}.wav"
        records.append(SandingRecordMeta(w, f, g, m, p, r, path))
    return records


# --- manifest -----------------------------------------------------------------


def load_manifest(path) -> list[SandingRecordMeta]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    records: list[SandingRecordMeta] = []
    seen: dict[tuple, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}:{line_no}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            raw = dict(zip(MANIFEST_HEADER, (c.strip() for c in row)))
            values = {}
            for name, domain in _INT_FIELDS.items():
                try:
                    values[name] = int(raw[name])
                except ValueError:
                    raise ManifestError(f"{path}:{line_no}: field {name} is not an integer: {raw[name]!r}") from None
                if values[name] not in domain:
                    raise ManifestError(f"{path}:{line_no}: field {name} out of domain: {values[name]} not in {domain}")
            for name, domain in _STR_FIELDS.items():
                if raw[name] not in domain:
                    raise ManifestError(f"{path}:{line_no}: field {name} out of domain: {raw[name]!r} not in {domain}")
            if not raw["clip_path"]:
                raise ManifestError(f"{path}:{line_no}: empty clip_path")
            rec = SandingRecordMeta(
                values["wear"], values["feed"], values["grit"], raw["material"], raw["position"],
                values["repetition"], raw["clip_path"],
            )
            if rec.key in seen:
                raise ManifestError(f"{path}:{line_no}: duplicate key {rec.key} (first seen on line {seen[rec.key]})")
            seen[rec.key] = line_no
            records.append(rec)
    return records


def write_manifest(path, records) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for rec in records:
                writer.writerow(rec.as_row())


def load_onsets(path) -> dict[str, tuple[float, float | None]]:
    """Read the onset sidecar; ``stop_seconds`` is optional."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            stop = row.get("stop_seconds")
            out[row["clip_path"]] = (float(row["onset_seconds"]), float(stop) if stop else None)
    return out


# --- WAV ----------------------------------------------------------------------


def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM mono WAV; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            data = wf.readframes(n)
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a PCM WAV file ({exc})") from None
    except EOFError:
        raise WavFormatError(f"{path}: truncated header") from None
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if len(data) != 2 * n:
        raise WavFormatError(f"{path}: truncated data ({len(data) // 2} of {n} frames)")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, clip: AudioClip) -> None:
    with atomic_path(path) as tmp:
        with wave.open(str(tmp), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(clip.sample_rate)
            wf.writeframes(to_pcm16(clip.samples).tobytes())


# --- synthesis ----------------------------------------------------------------

FEED_FUNDAMENTAL_HZ = {10: 300.0, 14: 348.0, 18: 396.0}
GRIT_TILT = {80: 0.6, 150: 1.0, 240: 1.4}
GRIT_FLOOR_OFFSET_DB = {80: 1.5, 150: 0.0, 240: -1.5}
MATERIAL_GAIN = {"soft": 1.0, "hard": 1.06}
POSITION_GAIN = {"left": 0.92, "center": 1.0, "right": 0.96}
WEAR_STEP_DB = 7.0

_HARMONIC_AMP = 0.05
_HARMONIC_MAX_HZ = 8000.0
_FLOOR_RMS = 0.004
_FLOOR_BAND_HZ = (9000.0, 20000.0)
_HUM_HZ = 50.0
_HUM_AMPS = (0.008, 0.004, 0.002, 0.001)
_DUST_RMS = 0.006
_DUST_CUTOFF_HZ = 1000.0
_BACKGROUND_SIGMA = 0.002
_FLOP_RMS = 0.1
_FLOP_LEN_S = 0.025
_ATTACK_S = 0.02
_RELEASE_S = 0.06
_GAIN_JITTER_DB = 1.0
_F0_JITTER = 0.003

SEPARABILITY_BANDS_HZ = (100, 250, 500, 1000, 2000, 4000, 8000, 12000, 20000)


def _band_noises(n: int, rng: np.random.Generator, sr: int, bands) -> list[np.ndarray]:
    """Independent unit-RMS Gaussian noises, one per disjoint band, from a single white draw.

    Disjoint bins of white Gaussian noise are independent, so one forward FFT serves all bands.
    """
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    out = []
    for lo, hi in bands:
        x = np.fft.irfft(np.where((freqs >= lo) & (freqs < hi), spec, 0.0), n)
        out.append(x / math.sqrt(np.mean(x**2)))
    return out


def _harmonic_stack(f0: float, amps: np.ndarray, phases: np.ndarray, n: int, sr: int) -> np.ndarray:
    """sum_h amps[h-1] * sin(2 pi f0 h t + phases[h-1]) via the angle-addition recurrence."""
    theta = 2 * np.pi * f0 * np.arange(n) / sr
    c1, s1 = np.cos(theta), np.sin(theta)
    ch, sh = c1.copy(), s1.copy()
    out = np.zeros(n)
    for h in range(len(amps)):
        if h:
            ch, sh = ch * c1 - sh * s1, sh * c1 + ch * s1
        out += amps[h] * (sh * math.cos(phases[h]) + ch * math.sin(phases[h]))
    return out


def synthesize_clip(
    meta: SandingRecordMeta,
    rng: np.random.Generator,
    clip_seconds: float = 6.0,
    onset_s: float | None = None,
    duration_s: float | None = None,
    sample_rate: int = SAMPLE_RATE,
) -> tuple[AudioClip, float, float]:
    """Render one operation; returns (clip, onset_s, stop_s) with times on the sample grid."""
    sr = sample_rate
    n = int(round(clip_seconds * sr))
    t = np.arange(n) / sr
    if onset_s is None:
        onset_s = rng.uniform(1.2, clip_seconds - 4.5)
    if duration_s is None:
        duration_s = rng.uniform(3.2, 3.3)
    a = int(round(onset_s * sr))
    b = min(n, int(round((onset_s + duration_s) * sr)))
    if not 0 < a < b:
        raise SynthesisError(f"event [{onset_s}, {onset_s + duration_s}) does not fit a {clip_seconds} s clip")
    m = b - a

    x = np.zeros(n)
    for h, amp in enumerate(_HUM_AMPS, start=1):
        x += amp * np.sin(2 * np.pi * _HUM_HZ * h * t + rng.uniform(0, 2 * np.pi))
    dust, floor = _band_noises(n, rng, sr, [(20.0, _DUST_CUTOFF_HZ), _FLOOR_BAND_HZ])
    x[a:] += _DUST_RMS * dust[: n - a]

    gain = 10 ** (rng.uniform(-_GAIN_JITTER_DB, _GAIN_JITTER_DB) / 20)
    f0 = FEED_FUNDAMENTAL_HZ[meta.feed_speed] * (1 + rng.uniform(-_F0_JITTER, _F0_JITTER))
    h = np.arange(1, int(_HARMONIC_MAX_HZ // f0) + 1)
    amps = _HARMONIC_AMP * MATERIAL_GAIN[meta.material] * POSITION_GAIN[meta.position] * h ** (-GRIT_TILT[meta.grit_size])
    event = _harmonic_stack(f0, amps, rng.uniform(0, 2 * np.pi, len(h)), m, sr)
    floor_db = WEAR_STEP_DB * meta.wear_level + GRIT_FLOOR_OFFSET_DB[meta.grit_size]
    event += _FLOOR_RMS * 10 ** (floor_db / 20) * floor[:m]

    env = np.ones(m)
    na, nr = int(_ATTACK_S * sr), int(_RELEASE_S * sr)
    env[:na] = np.linspace(0.0, 1.0, na, endpoint=False)
    env[m - nr:] *= np.linspace(1.0, 0.0, nr)
    event *= env * gain
    nf = int(_FLOP_LEN_S * sr)
    event[:nf] += _FLOP_RMS * rng.standard_normal(nf) * np.exp(-np.arange(nf) / (0.25 * nf))
    x[a:b] += event

    x += _BACKGROUND_SIGMA * rng.standard_normal(n)
    np.clip(x, -1.0, 1.0, out=x)
    return AudioClip(x, sr), a / sr, b / sr


def band_energies_db(samples: np.ndarray, sample_rate: int, edges=SEPARABILITY_BANDS_HZ) -> np.ndarray:
    """Mean power per frequency band in dB, from a single whole-segment FFT."""
    spec = np.abs(np.fft.rfft(samples)) ** 2 / len(samples)
    freqs = np.fft.rfftfreq(len(samples), 1.0 / sample_rate)
    out = np.empty(len(edges) - 1)
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        sel = (freqs >= lo) & (freqs < hi)
        out[i] = 10 * np.log10(spec[sel].mean() + 1e-20)
    return out


@dataclass(frozen=True)
class SeparabilityReport:
    """Worst pairwise class separation, in within-class standard deviations."""

    min_margin: float
    worst_pair: tuple[int, int]
    threshold: float = 3.0

    @property
    def ok(self) -> bool:
        return self.min_margin > self.threshold


def separability(profiles: np.ndarray, labels: np.ndarray, threshold: float = 3.0) -> SeparabilityReport:
    """For every class pair, the best band's |mean difference| over the pooled std; report the minimum."""
    classes = np.unique(labels)
    mu = {c: profiles[labels == c].mean(axis=0) for c in classes}
    sd = {c: profiles[labels == c].std(axis=0) for c in classes}
    worst, pair = math.inf, (int(classes[0]), int(classes[0]))
    for ca, cb in itertools.combinations(classes, 2):
        pooled = np.sqrt((sd[ca] ** 2 + sd[cb] ** 2) / 2) + 1e-12
        margin = float(np.max(np.abs(mu[ca] - mu[cb]) / pooled))
        if margin < worst:
            worst, pair = margin, (int(ca), int(cb))
    return SeparabilityReport(worst, pair, threshold)


@dataclass
class CorpusInfo:
    root: Path
    manifest_path: Path
    onsets_path: Path
    records: list[SandingRecordMeta]
    onsets: list[tuple[float, float]]
    separability: SeparabilityReport


def clip_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def synthesize_corpus(seed: int, out_dir, clip_seconds: float = 6.0, records=None) -> CorpusInfo:
    """Write WAVs, ``manifest.csv`` and ``onsets.csv`` under ``out_dir``.

    Clip ``i`` draws from its own RNG stream derived from ``(seed, i)``, so the
    output does not depend on scheduling. Raises ``SynthesisError`` if the wear
    classes fail the band-energy separability check.
    """
    if clip_seconds < 6.0:
        raise ValueError("clip_seconds must be at least 6")
    out = Path(out_dir)
    records = full_corpus_records() if records is None else list(records)

    def render(item):
        i, rec = item
        clip, onset, stop = synthesize_clip(rec, clip_rng(seed, i), clip_seconds)
        write_wav(out / rec.clip_path, clip)
        a = int(round((onset + 1.3) * clip.sample_rate))
        window = clip.samples[a:a + int(round(1.8 * clip.sample_rate))]
        return onset, stop, band_energies_db(window, clip.sample_rate)

    results = parallel_map(render, enumerate(records))
    onsets = [(on, st) for on, st, _ in results]
    profiles = np.array([r[2] for r in results])
    report = separability(profiles, np.array([r.wear_level for r in records]))
    if len({r.wear_level for r in records}) > 1 and not report.ok:
        raise SynthesisError(
            f"wear classes {report.worst_pair} separated by only {report.min_margin:.2f} std (need > {report.threshold})"
        )

    manifest_path = out / "manifest.csv"
    write_manifest(manifest_path, records)
    onsets_path = out / "onsets.csv"
    lines = [",".join(ONSET_HEADER)]
    lines += [f"{r.clip_path},{on!r},{st!r}" for r, (on, st) in zip(records, onsets)]
    write_text_atomic(onsets_path, "\n".join(lines) + "\n")
    return CorpusInfo(out, manifest_path, onsets_path, records, onsets, report)

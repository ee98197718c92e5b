"""Experimental protocol: tasks, repetition split, accuracy and confusion matrices,
feature grid search, per-configuration specialised classifiers and the full report."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from beltwear._util import parallel_map, write_text_atomic
from beltwear.dataset import (
    ALL_CONFIGURATIONS,
    FEED_SPEEDS,
    GRIT_SIZES,
    MATERIALS,
    AudioClip,
    ParameterConfiguration,
    SandingRecordMeta,
)
from beltwear.dsp import GRID_NB, GRID_NC, GRID_WL, METHODS, SpectralConfig, feature_matrix
from beltwear.models import KINDS, LabeledSet, TrainedModel, save_model, train
from beltwear.segmentation import STATE_LEN_S, SegmentedCorpus

log = logging.getLogger(__name__)

TASKS = {
    "wear": ["0", "1", "2", "3", "4"],
    "machine_state": ["idle", "sanding"],
    "feed_speed": [str(f) for f in FEED_SPEEDS],
    "grit_size": [str(g) for g in GRIT_SIZES],
    "material": list(MATERIALS),
}
TASK_ALIASES = {"feed": "feed_speed", "grit": "grit_size", "state": "machine_state"}
DEFAULT_TEST_REPS = (3,)


def resolve_task(name: str) -> str:
    name = TASK_ALIASES.get(name, name)
    if name not in TASKS:
        raise ValueError(f"unknown task {name!r}; expected one of {sorted(TASKS)}")
    return name


def record_label(task: str, rec: SandingRecordMeta) -> int:
    if task == "wear":
        return rec.wear_level
    if task == "feed_speed":
        return FEED_SPEEDS.index(rec.feed_speed)
    if task == "grit_size":
        return GRIT_SIZES.index(rec.grit_size)
    if task == "material":
        return MATERIALS.index(rec.material)
    raise ValueError(f"task {task!r} is not labelled per record")


def parameter_columns(rec: SandingRecordMeta) -> list[float]:
    """Process parameters appended to the features when requested: feed, grit, material (soft=0, hard=1)."""
    return [float(rec.feed_speed), float(rec.grit_size), float(MATERIALS.index(rec.material))]


# --- split --------------------------------------------------------------------


def split_indices(repetitions, test_reps=DEFAULT_TEST_REPS) -> tuple[np.ndarray, np.ndarray]:
    reps = np.asarray(repetitions)
    if reps.size and not np.isin(reps, (1, 2, 3)).all():
        raise ValueError("every item needs a repetition in {1, 2, 3}")
    test = np.isin(reps, test_reps)
    train_idx, test_idx = np.flatnonzero(~test), np.flatnonzero(test)
    assert not set(train_idx.tolist()) & set(test_idx.tolist())
    assert len(train_idx) + len(test_idx) == len(reps)
    return train_idx, test_idx


def split_by_repetition(records, test_reps=DEFAULT_TEST_REPS):
    """Repetitions outside ``test_reps`` train, the rest test."""
    for r in records:
        if getattr(r, "repetition", None) is None:
            raise ValueError(f"record {r} has no repetition")
    tr, te = split_indices([r.repetition for r in records], test_reps)
    return [records[i] for i in tr], [records[i] for i in te]


# --- scoring ------------------------------------------------------------------


@dataclass(eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # rows true, columns predicted
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def to_csv(self) -> str:
        lines = ["true\\pred," + ",".join(self.class_names)]
        for name, row in zip(self.class_names, self.counts):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion(y_true, y_pred, class_names) -> ConfusionMatrix:
    c = len(class_names)
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return ConfusionMatrix(counts, list(class_names))


def evaluate(model: TrainedModel, test: LabeledSet) -> tuple[float, ConfusionMatrix]:
    if len(test) == 0:
        raise ValueError("empty test set")
    cm = confusion(test.y, model.predict(test.X), test.class_names)
    return cm.accuracy, cm


# --- features -----------------------------------------------------------------


class FeatureStore:
    """Feature matrices for one segmented corpus, cached per clip source and effective config."""

    SOURCES = ("analysis", "analysis_head", "pre", "post")

    def __init__(self, corpus: SegmentedCorpus):
        self.corpus = corpus
        self._cache: dict[tuple, np.ndarray] = {}

    def clips(self, source: str) -> list[AudioClip]:
        c = self.corpus
        if source == "analysis":
            return c.analysis
        if source == "analysis_head":
            return [AudioClip(a.samples[: int(round(STATE_LEN_S * a.sample_rate))], a.sample_rate) for a in c.analysis]
        clips = c.pre if source == "pre" else c.post if source == "post" else None
        if clips is None:
            raise ValueError(f"corpus has no {source!r} clips")
        return clips

    def matrix(self, source: str, config: SpectralConfig) -> np.ndarray:
        key = (source, config.effective_key())
        if key not in self._cache:
            clips = self.clips(source)
            first = feature_matrix(clips[0], config).reshape(-1)
            out = np.empty((len(clips), len(first)))
            out[0] = first

            def fill(i):
                out[i] = feature_matrix(clips[i], config).reshape(-1)

            parallel_map(fill, range(1, len(clips)))
            if not np.isfinite(out).all():
                raise ValueError(f"non-finite features for {config}")
            out.setflags(write=False)
            self._cache[key] = out
        return self._cache[key]

    def evict(self, method: str | None = None) -> None:
        for key in [k for k in self._cache if method is None or k[1][0] == method]:
            del self._cache[key]


@dataclass(eq=False)
class TaskData:
    X: np.ndarray
    y: np.ndarray
    repetitions: np.ndarray
    class_names: list[str]
    clip_paths: list[str]
    records: list[SandingRecordMeta] = field(repr=False, default_factory=list)


def machine_state_sources(n_records: int, seed: int) -> np.ndarray:
    """For each record, which idle clip is the negative example: 0 = pre, 1 = post."""
    return np.random.default_rng([seed, 0x5EED]).integers(0, 2, size=n_records)


def task_data(
    store: FeatureStore,
    task: str,
    config: SpectralConfig,
    seed: int = 0,
    with_params: bool = False,
    rows=None,
) -> TaskData:
    """Feature matrix and labels for ``task``.

    Machine state uses the first idle-window-length of each analysis clip as
    "sanding" and one idle clip per record (pre or post, chosen by ``seed``) as
    "idle", so both classes have equal counts and clip lengths.
    """
    task = resolve_task(task)
    records = store.corpus.records
    rows = np.arange(len(records)) if rows is None else np.asarray(rows)
    if task == "machine_state":
        pos = store.matrix("analysis_head", config)[rows]
        which = machine_state_sources(len(records), seed)[rows]
        pre, post = store.matrix("pre", config)[rows], store.matrix("post", config)[rows]
        neg = np.where(which[:, None] == 0, pre, post)
        X = np.vstack([pos, neg])
        y = np.concatenate([np.ones(len(rows), dtype=np.int64), np.zeros(len(rows), dtype=np.int64)])
        recs = [records[i] for i in rows] * 2
        paths = [f"analysis:{r.clip_path}" for r in recs[: len(rows)]]
        paths += [f"{'pre' if w == 0 else 'post'}:{records[i].clip_path}" for w, i in zip(which, rows)]
    else:
        X = store.matrix("analysis", config)
        if len(rows) != len(records) or not np.array_equal(rows, np.arange(len(records))):
            X = X[rows]
        recs = [records[i] for i in rows]
        y = np.array([record_label(task, r) for r in recs], dtype=np.int64)
        paths = [r.clip_path for r in recs]
    if with_params:
        X = np.hstack([X, np.array([parameter_columns(r) for r in recs])])
    reps = np.array([r.repetition for r in recs])
    return TaskData(X, y, reps, TASKS[task], paths, recs)


# --- single experiment ----------------------------------------------------------


@dataclass(eq=False)
class TaskReport:
    task: str
    config: SpectralConfig
    model_kind: str
    accuracy: float
    confusion: ConfusionMatrix
    model: TrainedModel
    n_train: int
    n_test: int

    @property
    def cell_name(self) -> str:
        return f"{self.config.short_name}_{self.model_kind}"

    def write(self, report_dir) -> Path:
        out = Path(report_dir) / self.task / self.cell_name
        write_text_atomic(
            out / "accuracy.txt",
            f"accuracy={self.accuracy:.17g}\ncorrect={int(np.trace(self.confusion.counts))}\ntotal={self.n_test}\n"
            f"train={self.n_train}\nconfig={config_label(self.config)}\n",
        )
        write_text_atomic(out / "confusion.csv", self.confusion.to_csv())
        save_model(self.model, out / "model.bw")
        return out


def config_label(cfg: SpectralConfig) -> str:
    n_b = "-" if cfg.method == "spectrogram" else cfg.n_b
    n_c = cfg.n_c if cfg.is_cepstral else "-"
    return f"{cfg.method}(w_l={cfg.w_l}ms,n_b={n_b},n_c={n_c})"


def split_sets(data: TaskData, test_reps=DEFAULT_TEST_REPS) -> tuple[LabeledSet, LabeledSet]:
    tr, te = split_indices(data.repetitions, test_reps)
    if len(tr) == 0:
        raise ValueError("training split is empty")
    if len(te) == 0:
        raise ValueError("test split is empty")
    return (
        LabeledSet(data.X[tr], data.y[tr], data.class_names),
        LabeledSet(data.X[te], data.y[te], data.class_names),
    )


def fit_and_score(data: TaskData, model_kind: str, seed: int = 0, test_reps=DEFAULT_TEST_REPS, model_params=None):
    train_set, test_set = split_sets(data, test_reps)
    model = train(model_kind, train_set, seed=seed, **(model_params or {}))
    acc, cm = evaluate(model, test_set)
    return model, acc, cm, len(train_set), len(test_set)


def run_task(
    corpus_or_store,
    task: str,
    model_kind: str,
    config: SpectralConfig = SpectralConfig(),
    seed: int = 0,
    out_dir=None,
    with_params: bool = False,
    test_reps=DEFAULT_TEST_REPS,
    model_params=None,
) -> TaskReport:
    """Extract, split, train and evaluate one (task, feature, model) cell."""
    store = corpus_or_store if isinstance(corpus_or_store, FeatureStore) else FeatureStore(corpus_or_store)
    task = resolve_task(task)
    data = task_data(store, task, config, seed, with_params)
    model, acc, cm, n_tr, n_te = fit_and_score(data, model_kind, seed, test_reps, model_params)
    report = TaskReport(task, config, model_kind, acc, cm, model, n_tr, n_te)
    if out_dir is not None:
        report.write(out_dir)
    log.info("%s %s: accuracy %.4f", task, report.cell_name, acc)
    return report


# --- grid search ----------------------------------------------------------------


@dataclass(frozen=True)
class GridRow:
    config: SpectralConfig
    accuracy: float
    requested_n_c: int | None = None

    @property
    def n_c(self):
        """Coefficient count as listed in the grid (may exceed n_b; the config caps it)."""
        if not self.config.is_cepstral:
            return None
        return self.config.n_c if self.requested_n_c is None else self.requested_n_c

    def sort_key(self):
        c = self.config
        return (-self.accuracy, c.w_l, c.n_b, self.n_c if c.is_cepstral else -1)


def grid_points(method: str, sample_rate: int = 44100) -> list[tuple[SpectralConfig, int]]:
    """(config, requested n_c) for every grid point: 27 for cepstral methods, 9 otherwise.

    Points asking for more coefficients than bins keep the full cepstrum (n_c = n_b).
    """
    if method not in METHODS:
        raise ValueError(f"method {method!r} not in {METHODS}")
    cepstral = method in ("mfcc", "imfcc", "lfcc")
    n_cs = GRID_NC if cepstral else (GRID_NC[0],)
    return [
        (SpectralConfig(method, wl, nb, min(nc, nb) if cepstral else nc, sample_rate), nc)
        for wl, nb, nc in itertools.product(GRID_WL, GRID_NB, n_cs)
    ]


def grid_configs(method: str, sample_rate: int = 44100) -> list[SpectralConfig]:
    return [cfg for cfg, _ in grid_points(method, sample_rate)]


def grid_search(corpus_or_store, task: str, method: str, model_kind: str, seed: int = 0, test_reps=DEFAULT_TEST_REPS):
    """Rank every grid config for one feature method by test accuracy (descending, then by config)."""
    store = corpus_or_store if isinstance(corpus_or_store, FeatureStore) else FeatureStore(corpus_or_store)
    sr = store.corpus.analysis[0].sample_rate
    done: dict[tuple, float] = {}
    rows = []
    for cfg, n_c in grid_points(method, sr):
        key = cfg.effective_key()
        if key not in done:
            data = task_data(store, task, cfg, seed)
            done[key] = fit_and_score(data, model_kind, seed, test_reps)[1]
            store.evict(method)
        rows.append(GridRow(cfg, done[key], n_c))
    return sorted(rows, key=GridRow.sort_key)


def grid_csv(rows) -> str:
    lines = ["feature,w_l,n_b,n_c,accuracy"]
    for r in rows:
        c = r.config
        n_c = "" if r.n_c is None else str(r.n_c)
        lines.append(f"{c.short_name},{c.w_l},{c.n_b},{n_c},{r.accuracy:.17g}")
    return "\n".join(lines) + "\n"


# --- specialised classifiers -----------------------------------------------------


@dataclass(eq=False)
class SpecializedResult:
    models: dict[ParameterConfiguration, TrainedModel]
    accuracies: dict[ParameterConfiguration, float]
    test_sizes: dict[ParameterConfiguration, int]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.accuracies.values())))

    def to_csv(self) -> str:
        lines = ["feed,grit,material,n_test,accuracy"]
        for cfg in sorted(self.accuracies, key=lambda c: (c.feed_speed, c.grit_size, c.material)):
            lines.append(
                f"{cfg.feed_speed},{cfg.grit_size},{cfg.material},{self.test_sizes[cfg]},{self.accuracies[cfg]:.17g}"
            )
        lines.append(f"mean,,,,{self.mean_accuracy:.17g}")
        return "\n".join(lines) + "\n"


def train_specialized(
    corpus_or_store,
    task: str = "wear",
    model_kind: str = "tree",
    config: SpectralConfig = SpectralConfig(),
    seed: int = 0,
    test_reps=DEFAULT_TEST_REPS,
) -> SpecializedResult:
    """One model per sanding-parameter configuration, trained and tested on that configuration only."""
    store = corpus_or_store if isinstance(corpus_or_store, FeatureStore) else FeatureStore(corpus_or_store)
    records = store.corpus.records
    models, accs, sizes = {}, {}, {}
    for pc in ALL_CONFIGURATIONS:
        rows = [i for i, r in enumerate(records) if r.configuration == pc]
        if not rows:
            continue
        data = task_data(store, task, config, seed, rows=rows)
        try:
            model, acc, _, _, n_te = fit_and_score(data, model_kind, seed, test_reps)
        except ValueError as exc:
            raise ValueError(f"configuration {pc}: {exc}") from None
        models[pc], accs[pc], sizes[pc] = model, acc, n_te
    return SpecializedResult(models, accs, sizes)


# --- full report -------------------------------------------------------------------

SIDE_TASKS = ("machine_state", "feed_speed", "grit_size", "material")


def table_csv(table: dict, methods=METHODS, kinds=KINDS) -> str:
    lines = ["feature," + ",".join(kinds)]
    for m in methods:
        lines.append(SpectralConfig(m).short_name + "," + ",".join(f"{table[(m, k)]:.6f}" for k in kinds))
    return "\n".join(lines) + "\n"


def run_table(store: FeatureStore, task="wear", seed=0, out_dir=None, methods=METHODS, kinds=KINDS, base=SpectralConfig()):
    """Accuracy for every (feature method, model family) pair at the default operating point."""
    table = {}
    for method in methods:
        cfg = SpectralConfig(method, base.w_l, base.n_b, base.n_c, base.sample_rate)
        # split once and drop the cached matrix so wide features are held in memory only once
        train_set, test_set = split_sets(task_data(store, task, cfg, seed))
        store.evict(method)
        for kind in kinds:
            model = train(kind, train_set, seed=seed)
            acc, cm = evaluate(model, test_set)
            report = TaskReport(task, cfg, kind, acc, cm, model, len(train_set), len(test_set))
            if out_dir is not None:
                report.write(out_dir)
            log.info("%s %s: accuracy %.4f", task, report.cell_name, acc)
            table[(method, kind)] = acc
            del model, report
        del train_set, test_set
    if out_dir is not None:
        write_text_atomic(Path(out_dir) / task / "table.csv", table_csv(table, methods, kinds))
    return table


def run_report(corpus: SegmentedCorpus, out_dir, seed: int = 0, methods=METHODS, kinds=KINDS) -> dict:
    """The whole protocol on one segmented corpus; writes everything under ``out_dir``.

    Nothing written here depends on wall-clock time, so equal inputs give byte-identical output.
    """
    out = Path(out_dir)
    store = FeatureStore(corpus)
    mel = SpectralConfig("mel_spectrogram", sample_rate=corpus.analysis[0].sample_rate)
    table = run_table(store, "wear", seed, out, methods, kinds, mel)
    summary = {
        "seed": seed,
        "n_records": len(corpus),
        "wear_table": {f"{SpectralConfig(m).short_name}_{k}": table[(m, k)] for m, k in table},
        "tasks": {},
    }
    summary["tasks"]["wear"] = table.get(("mel_spectrogram", "tree"))
    if summary["tasks"]["wear"] is None:
        summary["tasks"]["wear"] = run_task(store, "wear", "tree", mel, seed, out).accuracy
    for task in SIDE_TASKS:
        if task == "machine_state" and (corpus.pre is None or corpus.post is None):
            continue
        summary["tasks"][task] = run_task(store, task, "tree", mel, seed, out).accuracy
    with_params = run_task(store, "wear", "tree", mel, seed, with_params=True)
    summary["wear_with_parameters"] = with_params.accuracy
    spec = train_specialized(store, "wear", "tree", mel, seed)
    write_text_atomic(out / "wear" / "specialized.csv", spec.to_csv())
    summary["specialized"] = {
        "n_models": len(spec.models),
        "mean_accuracy": spec.mean_accuracy,
        "test_sizes": sorted(set(spec.test_sizes.values())),
    }
    write_text_atomic(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary

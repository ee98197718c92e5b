import json
from dataclasses import replace

import numpy as np
import pytest

from beltwear.dataset import full_corpus_records
from beltwear.dsp import METHODS, SpectralConfig
from beltwear.evaluation import (
    TASKS,
    FeatureStore,
    confusion,
    evaluate,
    fit_and_score,
    grid_configs,
    grid_csv,
    grid_search,
    resolve_task,
    run_report,
    run_task,
    split_by_repetition,
    split_indices,
    task_data,
    train_specialized,
)
from beltwear.models import KINDS, LabeledSet, load_model, train_random


@pytest.fixture(scope="module")
def store(toy_corpus):
    return FeatureStore(toy_corpus)


class TestConfusion:
    def test_reference_example(self):
        cm = confusion([0, 1, 1], [0, 1, 0], ["a", "b"])
        assert cm.accuracy == pytest.approx(2 / 3)
        np.testing.assert_array_equal(cm.counts, [[1, 0], [1, 1]])

    def test_perfect_is_diagonal(self):
        y = np.array([0, 2, 1, 2, 2])
        cm = confusion(y, y, ["a", "b", "c"])
        assert cm.accuracy == 1.0
        np.testing.assert_array_equal(cm.counts, np.diag([1, 1, 3]))

    def test_row_sums_are_true_counts(self):
        rng = np.random.default_rng(0)
        y, p = rng.integers(0, 4, 100), rng.integers(0, 4, 100)
        cm = confusion(y, p, list("abcd"))
        np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(y, minlength=4))
        assert cm.total == 100

    def test_csv(self):
        assert confusion([0, 1], [1, 1], ["x", "y"]).to_csv() == "true\\pred,x,y\nx,0,1\ny,0,1\n"

    def test_random_model_near_chance(self):
        y = np.repeat(np.arange(5), 400)
        m = train_random(LabeledSet(np.zeros((2000, 1)), y), seed=1)
        acc, _ = evaluate(m, LabeledSet(np.zeros((2000, 1)), np.tile(np.arange(5), 400)))
        assert 0.17 <= acc <= 0.23


class TestSplit:
    def test_full_corpus_540_270(self):
        records = full_corpus_records()
        train, test = split_by_repetition(records)
        assert (len(train), len(test)) == (540, 270)
        assert not {r.key for r in train} & {r.key for r in test}
        assert {r.key for r in train} | {r.key for r in test} == {r.key for r in records}
        assert {r.repetition for r in test} == {3}

    def test_alternate_reading(self):
        tr, te = split_indices([r.repetition for r in full_corpus_records()], (2, 3))
        assert (len(tr), len(te)) == (270, 540)

    def test_bad_repetition(self):
        with pytest.raises(ValueError):
            split_indices([1, 2, 4])

    def test_only_test_repetition_means_empty_train(self, store):
        rows = [i for i, r in enumerate(store.corpus.records) if r.repetition == 3][:20]
        data = task_data(store, "wear", SpectralConfig(), rows=rows)
        with pytest.raises(ValueError, match="training split is empty"):
            fit_and_score(data, "tree")


class TestTaskData:
    def test_class_counts(self):
        assert {t: len(c) for t, c in TASKS.items()} == {
            "wear": 5, "machine_state": 2, "feed_speed": 3, "grit_size": 3, "material": 2,
        }

    def test_aliases(self):
        assert resolve_task("feed") == "feed_speed" and resolve_task("state") == "machine_state"
        with pytest.raises(ValueError):
            resolve_task("colour")

    def test_machine_state_is_balanced(self, store):
        d = task_data(store, "machine_state", SpectralConfig(), seed=3)
        assert len(d.y) == 1620 and d.y.sum() == 810
        idle = [p for p in d.clip_paths if not p.startswith("analysis:")]
        n_pre = sum(p.startswith("pre:") for p in idle)
        assert len(idle) == 810 and 300 < n_pre < 510

    def test_machine_state_choice_follows_seed(self, store):
        a = task_data(store, "machine_state", SpectralConfig(), seed=3).clip_paths
        b = task_data(store, "machine_state", SpectralConfig(), seed=3).clip_paths
        c = task_data(store, "machine_state", SpectralConfig(), seed=4).clip_paths
        assert a == b and a != c

    def test_with_params_appends_three_columns(self, store):
        plain = task_data(store, "wear", SpectralConfig())
        extra = task_data(store, "wear", SpectralConfig(), with_params=True)
        assert extra.X.shape[1] == plain.X.shape[1] + 3
        r = store.corpus.records[100]
        np.testing.assert_array_equal(extra.X[100, -3:], [r.feed_speed, r.grit_size, ["soft", "hard"].index(r.material)])


class TestRunTask:
    def test_report_layout(self, store, tmp_path):
        rep = run_task(store, "wear", "tree", SpectralConfig(), seed=0, out_dir=tmp_path)
        cell = tmp_path / "wear" / "mel_tree"
        text = (cell / "accuracy.txt").read_text()
        assert f"accuracy={rep.accuracy:.17g}" in text and "config=mel_spectrogram(w_l=64ms,n_b=64,n_c=-)" in text
        lines = (cell / "confusion.csv").read_text().splitlines()
        assert len(lines) == 6 and sum(int(v) for ln in lines[1:] for v in ln.split(",")[1:]) == 270
        assert (rep.n_train, rep.n_test) == (540, 270)
        model = load_model(cell / "model.bw")
        data = task_data(store, "wear", SpectralConfig())
        np.testing.assert_array_equal(model.predict(data.X), rep.model.predict(data.X))

    def test_toy_wear_is_learnable_and_random_is_chance(self, store):
        assert run_task(store, "wear", "tree", SpectralConfig()).accuracy > 0.6
        assert run_task(store, "wear", "random", SpectralConfig()).accuracy < 0.35


class TestGrid:
    def test_config_counts(self):
        assert len(grid_configs("mfcc")) == 27
        assert sum(c.n_c == c.n_b == 32 for c in grid_configs("lfcc")) == 6
        assert len(grid_configs("spectrogram")) == 9 and len(grid_configs("mel_spectrogram")) == 9
        with pytest.raises(ValueError):
            grid_configs("chroma")

    @pytest.mark.parametrize("method, rows", [("mfcc", 27), ("mel_spectrogram", 9)])
    def test_rows_sorted_and_reproducible(self, toy_corpus, method, rows):
        a = grid_search(FeatureStore(toy_corpus), "feed_speed", method, "tree")
        b = grid_search(FeatureStore(toy_corpus), "feed_speed", method, "tree")
        assert len(a) == rows and grid_csv(a) == grid_csv(b)
        keys = [r.sort_key() for r in a]
        assert keys == sorted(keys)
        lines = grid_csv(a).splitlines()
        assert lines[0] == "feature,w_l,n_b,n_c,accuracy"
        if rows == 27:
            assert sorted(ln.split(",")[3] for ln in lines[1:]) == sorted(["20", "40", "60"] * 9)
            # points asking for more coefficients than bins share the full-cepstrum score
            capped = {ln.split(",")[4] for ln in lines[1:] if ln.split(",")[2] == "32" and ln.split(",")[3] != "20" and ln.split(",")[1] == "64"}
            assert len(capped) == 1


class TestSpecialized:
    def test_eighteen_models_fifteen_tests(self, store):
        res = train_specialized(store, "wear", "tree", SpectralConfig())
        assert len(res.models) == 18
        assert set(res.test_sizes.values()) == {15}
        assert res.mean_accuracy == pytest.approx(np.mean(list(res.accuracies.values())))
        lines = res.to_csv().splitlines()
        assert len(lines) == 20 and lines[-1].startswith("mean,")


class TestReport:
    def test_layout_and_determinism(self, toy_corpus, tmp_path):
        a = run_report(toy_corpus, tmp_path / "a", seed=5)
        b = run_report(toy_corpus, tmp_path / "b", seed=5)
        assert a == b
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
        table = (tmp_path / "a" / "wear" / "table.csv").read_text().splitlines()
        assert table[0] == "feature," + ",".join(KINDS) and len(table) == 1 + len(METHODS)
        assert len(a["wear_table"]) == 25
        for m in ("spec", "mel", "mfcc", "imfcc", "lfcc"):
            for k in KINDS:
                assert (tmp_path / "a" / "wear" / f"{m}_{k}" / "model.bw").is_file()
        assert json.loads((tmp_path / "a" / "summary.json").read_text()) == a
        assert set(a["tasks"]) == {"wear", "machine_state", "feed_speed", "grit_size", "material"}
        assert a["specialized"]["n_models"] == 18

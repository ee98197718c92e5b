import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beltwear.decomposition import (
    fit_pca,
    inverse_transform,
    transform,
    write_scatter_csv,
    write_scatter_svg,
)


def data(n=60, d=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)) @ rng.normal(size=(d, d))


class TestPca:
    @pytest.mark.parametrize("standardize", [False, True])
    def test_full_rank_reconstruction(self, standardize):
        X = data()
        m = fit_pca(X, 8, standardize=standardize)
        assert np.max(np.abs(inverse_transform(m, transform(m, X)) - X)) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 10), st.integers(3, 30))
    def test_ratio_spectrum_sums_to_one(self, seed, d, n):
        X = np.random.default_rng(seed).normal(size=(n, d))
        k = min(n - 1, d)
        m = fit_pca(X, k)
        assert abs(m.ratio_spectrum.sum() - 1) < 1e-9
        assert np.all(np.diff(m.ratio_spectrum) <= 1e-12)

    def test_rank_one(self):
        rng = np.random.default_rng(1)
        X = np.outer(rng.normal(size=40), rng.normal(size=5)) + 3.0
        m = fit_pca(X, 1)
        assert abs(m.explained_variance_ratio[0] - 1) < 1e-9

    def test_matches_covariance_eigen(self):
        X = data(seed=2)
        m = fit_pca(X, 3)
        evals, evecs = np.linalg.eigh(np.cov(X, rowvar=False))
        order = np.argsort(evals)[::-1]
        np.testing.assert_allclose(m.explained_variance_ratio, evals[order][:3] / evals.sum(), rtol=1e-9)
        for i in range(3):
            assert abs(abs(m.components[i] @ evecs[:, order[i]]) - 1) < 1e-9

    def test_components_orthonormal_and_signed(self):
        m = fit_pca(data(seed=3), 4)
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(4), atol=1e-12)
        pivots = m.components[np.arange(4), np.argmax(np.abs(m.components), axis=1)]
        assert (pivots > 0).all()

    def test_sign_is_deterministic_under_row_order(self):
        X = data(seed=4)
        a = fit_pca(X, 2).components
        b = fit_pca(X[::-1], 2).components
        np.testing.assert_allclose(a, b, atol=1e-10)

    @pytest.mark.parametrize("k", [0, 9, 60])
    def test_bad_k(self, k):
        with pytest.raises(ValueError):
            fit_pca(data(), k)

    def test_identical_rows(self):
        with pytest.raises(ValueError, match="identical"):
            fit_pca(np.ones((5, 3)), 1)

    def test_transform_shape_check(self):
        m = fit_pca(data(), 2)
        with pytest.raises(ValueError):
            transform(m, np.zeros((3, 7)))


class TestScatter:
    def test_csv(self, tmp_path):
        scores = np.array([[1.0, 2.0, 9.0], [3.5, -1.0, 9.0]])
        write_scatter_csv(tmp_path / "s.csv", ["a.wav", "b.wav"], scores, "feed", [10, 18])
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines == ["clip_path,pc1,pc2,feed", "a.wav,1,2,10", "b.wav,3.5,-1,18"]

    def test_bad_color_key(self, tmp_path):
        with pytest.raises(ValueError):
            write_scatter_csv(tmp_path / "s.csv", ["a"], np.zeros((1, 2)), "size", [1])

    def test_svg_has_one_point_per_row_and_legend(self, tmp_path):
        scores = np.random.default_rng(0).normal(size=(30, 2))
        colors = [10, 14, 18] * 10
        write_scatter_svg(tmp_path / "s.svg", scores, colors, "t")
        svg = (tmp_path / "s.svg").read_text()
        assert svg.count("<circle") == 30
        assert svg.count('width="10" height="10"') == 3

"""Tests for the interpolated density and its product log-likelihood."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import lognorm, norm

from oracles import numeric_mass as _numeric_mass

from lidqr import CoefficientMatrix, ContractError, Dataset, QuantileGrid, make_grid
from lidqr.density import LidModel, interpolation_error_sup, lid_loglik, lid_pdf


def _scalar_model(q_values, grid, tail_sd=1.0):
    """Model with one predictor whose fitted quantiles at x=[1] are q_values."""
    B = CoefficientMatrix(np.asarray(q_values, dtype=float)[:, None])
    return LidModel(B, grid, tail_sd)


GRID3 = make_grid(3)  # levels 0.25, 0.5, 0.75


class TestLidPdf:
    def test_middle_interval(self):
        model = _scalar_model([0.0, 1.0, 3.0], GRID3)
        assert lid_pdf(model, [1.0], 0.5) == pytest.approx(0.25)

    def test_upper_interval(self):
        model = _scalar_model([0.0, 1.0, 3.0], GRID3)
        assert lid_pdf(model, [1.0], 2.0) == pytest.approx(0.125)

    def test_left_tail_is_weighted_half_normal(self):
        model = _scalar_model([0.0, 1.0, 3.0], GRID3, tail_sd=1.0)
        expected = 0.25 * 2.0 * norm.pdf(-1.0)
        assert lid_pdf(model, [1.0], -1.0) == pytest.approx(expected)
        assert lid_pdf(model, [1.0], -1.0) == pytest.approx(0.1209854, abs=1e-7)

    def test_right_tail_is_weighted_half_normal(self):
        model = _scalar_model([0.0, 1.0, 3.0], GRID3, tail_sd=2.0)
        expected = 0.25 * (2.0 / 2.0) * norm.pdf((5.0 - 3.0) / 2.0)
        assert lid_pdf(model, [1.0], 5.0) == pytest.approx(expected)

    def test_boundary_goes_right(self):
        model = _scalar_model([0.0, 1.0, 3.0], GRID3)
        # y == q_1 belongs to the first interior interval, not the tail.
        assert lid_pdf(model, [1.0], 0.0) == pytest.approx(0.25)
        # y == q_2 belongs to the interval above it.
        assert lid_pdf(model, [1.0], 1.0) == pytest.approx(0.125)
        # y == q_m starts the right tail.
        expected = 0.25 * 2.0 * norm.pdf(0.0)
        assert lid_pdf(model, [1.0], 3.0) == pytest.approx(expected)

    def test_piecewise_constant_within_interval(self):
        model = _scalar_model([0.0, 1.0, 3.0], GRID3)
        assert lid_pdf(model, [1.0], 1.25) == lid_pdf(model, [1.0], 2.75)

    def test_crossing_raises(self):
        model = _scalar_model([0.0, 1.0, 3.0], GRID3)
        with pytest.raises(ContractError):
            lid_pdf(model, [-1.0], 0.5)  # negated x flips the ordering

    def test_location_scale_equivariance(self):
        rng = np.random.default_rng(42)
        grid = make_grid(7)
        q = np.sort(rng.normal(size=7))
        a, b = 2.5, 3.0
        base = _scalar_model(q, grid, tail_sd=1.3)
        moved = _scalar_model(a + b * q, grid, tail_sd=b * 1.3)
        for y in [-2.0, q[0], 0.1, q[3], 1.9, q[-1], 4.0]:
            f0 = lid_pdf(base, [1.0], y)
            f1 = lid_pdf(moved, [1.0], a + b * y)
            assert f1 == pytest.approx(f0 / b, rel=1e-12)

    def test_mass_is_one(self):
        rng = np.random.default_rng(42)
        for m in (2, 5, 15):
            grid = make_grid(m)
            q = np.cumsum(0.1 + rng.random(m))
            model = _scalar_model(q, grid, tail_sd=0.5 + rng.random())
            assert _numeric_mass(model, [1.0]) == pytest.approx(1.0, abs=1e-6)


class TestLidLoglik:
    def _data(self, ys, x_val=1.0):
        n = len(ys)
        X = np.column_stack([np.ones(n), np.full(n, x_val)])
        return Dataset(X, np.asarray(ys, dtype=float))

    def _model(self):
        # With x = (1, 1), rows (c0, c1) give quantile values c0 + c1.
        B = CoefficientMatrix(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 2.0]]))
        return LidModel(B, GRID3, tail_sd=1.0)

    def test_single_observation(self):
        assert lid_loglik(self._model(), self._data([0.5])) == pytest.approx(np.log(0.25))

    def test_product_structure(self):
        assert lid_loglik(self._model(), self._data([0.5, 0.5])) == pytest.approx(
            2 * np.log(0.25)
        )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(42)
        ys = rng.normal(size=9).tolist()
        a = lid_loglik(self._model(), self._data(ys))
        b = lid_loglik(self._model(), self._data(ys[::-1]))
        assert a == pytest.approx(b, rel=1e-13)

    def test_empty_dataset_is_impossible(self):
        with pytest.raises(ContractError):
            self._data([])

    def test_crossing_observation_raises(self):
        model = self._model()
        data = self._data([0.5], x_val=-2.0)  # ordering flips at x1 = -2
        with pytest.raises(ContractError):
            lid_loglik(model, data)

    def test_matches_sum_of_pdfs(self):
        rng = np.random.default_rng(42)
        model = self._model()
        ys = rng.normal(scale=2.0, size=12)
        data = self._data(ys.tolist())
        expected = sum(np.log(lid_pdf(model, [1.0, 1.0], y)) for y in ys)
        assert lid_loglik(model, data) == pytest.approx(expected, rel=1e-12)


class TestLidModelValidation:
    def test_dimension_mismatch(self):
        B = CoefficientMatrix(np.array([[0.0], [1.0]]))
        with pytest.raises(ContractError):
            LidModel(B, GRID3, 1.0)

    def test_bad_tail_sd(self):
        B = CoefficientMatrix(np.arange(3.0)[:, None])
        for sd in (0.0, -1.0, np.inf):
            with pytest.raises(ContractError):
                LidModel(B, GRID3, sd)


class TestInterpolationError:
    def test_uniform_is_interpolated_exactly(self):
        u = QuantileGrid(np.array([0.2, 0.4, 0.6, 0.8]))
        sup, skipped = interpolation_error_sup(
            lambda t: t, lambda y: 1.0, u, np.linspace(0.25, 0.75, 21)
        )
        assert sup == pytest.approx(0.0, abs=1e-15)
        assert skipped == 0

    def test_normal_error_shrinks_with_refinement(self):
        probes = np.arange(-1.5, 1.5 + 1e-9, 0.01)
        e15, _ = interpolation_error_sup(norm.ppf, norm.pdf, make_grid(15), probes)
        e63, _ = interpolation_error_sup(norm.ppf, norm.pdf, make_grid(15, 2), probes)
        assert 0.0 < e63 < e15

    def test_out_of_span_probes_are_counted(self):
        grid = make_grid(3)  # normal quantiles at -0.674, 0, 0.674
        sup, skipped = interpolation_error_sup(
            norm.ppf, norm.pdf, grid, [-5.0, 0.1, 5.0]
        )
        assert skipped == 2
        assert sup > 0.0

    def test_lognormal_error_shrinks_with_refinement(self):
        dist = lognorm(s=1.0)
        probes = np.arange(0.3, 3.0, 0.01)
        e15, _ = interpolation_error_sup(dist.ppf, dist.pdf, make_grid(15), probes)
        e63, _ = interpolation_error_sup(dist.ppf, dist.pdf, make_grid(15, 2), probes)
        assert 0.0 < e63 < e15

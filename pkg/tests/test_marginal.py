import json

import numpy as np
import pytest
from scipy import stats

from conftest import analytic_zi_expon, sample_zi_expon
from vinebc.errors import EstimationError
from vinebc.marginal import (
    MixtureMarginal,
    fit_marginal,
    marginal_eval,
    marginal_quantile,
    randomized_pit,
)

LN2 = np.log(2.0)


def mixture_cdf_oracle(x, p0=0.4, scale=1.0):
    """Analytic CDF of p0*delta_0 + (1-p0)*Exp(scale)."""
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.0, p0 + (1.0 - p0) * (1.0 - np.exp(-x / scale)))


# -- fitting ------------------------------------------------------------------


def test_fit_detects_zero_atom_share_exactly():
    rng = np.random.default_rng(1)
    x = rng.exponential(1.0, size=1000)
    x[rng.permutation(1000)[:300]] = 0.0
    m = fit_marginal(x, "zero_inflated")
    assert m.atom_values.tolist() == [0.0]
    assert m.atom_masses[0] == pytest.approx(0.300, abs=1e-12)


def test_fit_all_distinct_interval_has_no_atoms():
    x = np.random.default_rng(2).normal(size=500)
    m = fit_marginal(x, "interval")
    assert m.atom_values.size == 0
    assert m.continuous_mass == 1.0


def test_fit_repeated_value_atom_interval():
    rng = np.random.default_rng(3)
    x = rng.normal(size=1000)
    x[:50] = 2.5
    m = fit_marginal(x, "interval")
    assert 2.5 in m.atom_values
    assert m.atom_masses[list(m.atom_values).index(2.5)] == pytest.approx(0.05)


def test_fitted_mixture_cdf_anchors():
    x = sample_zi_expon(10_000, seed=11)
    m = fit_marginal(x, "zero_inflated")
    assert float(m.cdf(0.0)) == pytest.approx(0.40, abs=0.02)
    assert float(m.cdf(LN2)) == pytest.approx(0.70, abs=0.02)


def test_fitted_cdf_error_bound_large_sample():
    x = sample_zi_expon(100_000, seed=12)
    m = fit_marginal(x, "zero_inflated")
    grid = np.linspace(0.0, 8.0, 400)
    err = np.abs(np.asarray(m.cdf(grid)) - mixture_cdf_oracle(grid))
    assert err.max() <= 0.02


def test_fit_rejects_small_and_negative_samples():
    with pytest.raises(EstimationError):
        fit_marginal(np.arange(10.0), "interval")
    bad = np.concatenate([np.full(20, -1.0), np.arange(30.0)])
    with pytest.raises(EstimationError):
        fit_marginal(bad, "nonnegative")


def test_fit_degenerate_all_atomic():
    x = np.zeros(100)
    m = fit_marginal(x, "zero_inflated")
    assert m.degenerate_continuous
    assert m.continuous_mass == 0.0
    assert m.atom_masses.sum() == pytest.approx(1.0)


# -- evaluation ---------------------------------------------------------------


def test_eval_analytic_mixture_at_atom_and_continuous_point():
    m = analytic_zi_expon()
    at0 = marginal_eval(m, 0.0)
    assert at0.cdf == pytest.approx(0.4, abs=1e-12)
    assert at0.cdf_left == pytest.approx(0.0, abs=1e-12)
    assert at0.density == pytest.approx(0.4, abs=1e-12)
    at = marginal_eval(m, LN2)
    assert at.cdf == pytest.approx(0.7, abs=1e-12)
    assert at.cdf_left == pytest.approx(0.7, abs=1e-12)
    assert at.density == pytest.approx(0.6 * 0.5, abs=1e-12)


def test_quantile_jump_interval_and_continuous():
    m = analytic_zi_expon()
    assert marginal_quantile(m, 0.2) == 0.0
    assert marginal_quantile(m, 0.7) == pytest.approx(LN2, abs=1e-12)
    assert marginal_quantile(m, 0.4) == 0.0  # closed right end of the jump


def test_quantile_cdf_roundtrip_on_fitted_margin():
    x = sample_zi_expon(5000, seed=4)
    m = fit_marginal(x, "zero_inflated")
    v = np.linspace(0.45, 0.999, 200)
    xs = np.asarray(m.quantile(v))
    back = np.asarray(m.cdf(xs))
    assert np.abs(back - v).max() < 1e-6


def test_quantile_galois_property():
    x = sample_zi_expon(3000, seed=5)
    m = fit_marginal(x, "zero_inflated")
    vs = np.linspace(0.01, 0.99, 37)
    xs = np.linspace(-0.5, 6.0, 41)
    for v in vs:
        for xx in xs:
            lhs = float(np.asarray(m.quantile(v))) <= xx
            rhs = v <= float(np.asarray(m.cdf(xx)))
            assert lhs == rhs


def test_monotone_cdf_left_limits_and_jumps():
    x = sample_zi_expon(4000, seed=6)
    m = fit_marginal(x, "zero_inflated")
    grid = np.linspace(-1.0, 10.0, 1000)
    f = np.asarray(m.cdf(grid))
    fl = np.asarray(m.cdf_left(grid))
    assert np.all(np.diff(f) >= -1e-13)
    assert np.all(fl <= f + 1e-13)
    for value, mass in zip(m.atom_values, m.atom_masses):
        jump = float(np.asarray(m.cdf(value))) - float(np.asarray(m.cdf_left(value)))
        assert jump == pytest.approx(mass, abs=1e-12)


def test_normalization_by_quadrature():
    x = sample_zi_expon(4000, seed=7)
    m = fit_marginal(x, "zero_inflated")
    lo = float(np.asarray(m.quantile(1e-9)))
    hi = float(np.asarray(m.quantile(1.0 - 1e-9)))
    grid = np.linspace(max(lo, 1e-12), hi, 200_001)
    dens = np.asarray(m.density(grid))
    dens[np.isin(grid, m.atom_values)] = 0.0
    total = np.trapezoid(dens, grid) + m.atom_masses.sum()
    assert total == pytest.approx(1.0, abs=1e-4)


# -- randomized PIT ------------------------------------------------------------


def test_randomized_pit_formula():
    m = analytic_zi_expon()
    assert randomized_pit(m, 0.0, 0.25) == pytest.approx(0.25 * 0.4, abs=1e-12)
    for w in (0.0, 0.3, 1.0):
        assert randomized_pit(m, LN2, w) == pytest.approx(0.7, abs=1e-12)


def test_randomized_pit_uniformity():
    m = analytic_zi_expon()
    rng = np.random.default_rng(8)
    x = sample_zi_expon(100_000, seed=9)
    v = randomized_pit(m, x, rng.uniform(size=x.size))
    assert stats.kstest(v, "uniform").statistic < 0.01


# -- serialization ---------------------------------------------------------------


def test_serialization_roundtrip_bit_exact():
    x = sample_zi_expon(2000, seed=10)
    m = fit_marginal(x, "zero_inflated")
    blob = json.dumps(m.to_dict())
    m2 = MixtureMarginal.from_dict(json.loads(blob))
    assert np.array_equal(m.atom_values, m2.atom_values)
    assert np.array_equal(m.atom_masses, m2.atom_masses)
    assert np.array_equal(m.continuous.grid.knots, m2.continuous.grid.knots)
    assert np.array_equal(m.continuous.grid.pdf_values, m2.continuous.grid.pdf_values)
    pts = np.linspace(-1, 8, 50)
    assert np.array_equal(np.asarray(m.cdf(pts)), np.asarray(m2.cdf(pts)))


def test_analytic_margin_not_serializable():
    with pytest.raises(TypeError):
        analytic_zi_expon().to_dict()

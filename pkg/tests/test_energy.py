from __future__ import annotations

import math

import numpy as np
import pytest

from epolab.energy import (MUELLER_BROWN_TERMS, Potential, bin_probabilities, boltzmann_oracle, mh_sample, preset,
                           rank_by_energy, wrap_angle)


def test_double_well_values():
    p = preset("double-well")
    np.testing.assert_array_equal(p.energy(np.array([[-1.0], [0.0], [1.0]])), [0.0, 2.0, 0.0])
    tilted = preset("double-well-tilted")
    assert tilted.energy(np.array([-1.0])) < tilted.energy(np.array([1.0]))


def test_mueller_brown_minima():
    p = preset("mueller-brown")
    e = p.energy(np.array([[-0.558, 1.442], [0.623, 0.028], [-0.050, 0.467]]))
    np.testing.assert_allclose(e, [-146.70, -108.17, -80.77], atol=0.01)
    assert len(MUELLER_BROWN_TERMS) == 4


def test_gaussian_mixture_single_component_is_quadratic():
    p = Potential.gaussian_mixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    x = np.array([[1.0, 0.0], [0.0, 0.0]])
    e = p.energy(x)
    assert math.isclose(e[0] - e[1], 0.5, rel_tol=1e-12)


def test_torsion_is_periodic():
    p = preset("torsion-2d")
    x = np.random.default_rng(0).uniform(-np.pi, np.pi, (10, 2))
    np.testing.assert_allclose(p.energy(x), p.energy(x + 2 * np.pi), atol=1e-12)
    assert p.periodic


def test_wrap_angle_range():
    x = np.linspace(-20, 20, 1001)
    w = wrap_angle(x)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    np.testing.assert_allclose(np.sin(w), np.sin(x), atol=1e-12)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        preset("double-well").energy(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        preset("no-such-potential")


def test_boltzmann_oracle_normalization_and_symmetry():
    grid = boltzmann_oracle(preset("double-well"))
    assert abs(grid.total() - 1.0) < 1e-10
    np.testing.assert_allclose(grid.mode_masses(), [0.5, 0.5], atol=1e-9)


def test_boltzmann_oracle_rejects_tight_bounds():
    with pytest.raises(ValueError, match="bounds"):
        boltzmann_oracle(preset("double-well"), bounds=((-1.0, 1.0),))


def test_bin_probabilities_match_gaussian_cdf():
    p = preset("gaussian-1d")
    edges = [np.linspace(-8, 8, 33)]
    probs = bin_probabilities(p, edges)
    cdf = np.array([0.5 * (1 + math.erf(e / math.sqrt(2))) for e in edges[0]])
    # trapezoid sub-grid of 32 points per bin: O(h^2) relative error
    np.testing.assert_allclose(probs, np.diff(cdf), rtol=1e-3, atol=1e-12)


def test_mh_samples_gaussian_moments():
    r = mh_sample(preset("gaussian-1d"), 50_000, step=1.5, seed=3)
    assert 0.2 < r.acceptance < 0.8
    assert abs(r.samples.mean()) < 0.05
    assert abs(r.samples.var() - 1.0) < 0.05


def test_mh_is_reproducible():
    a = mh_sample(preset("double-well"), 2000, seed=5).samples
    b = mh_sample(preset("double-well"), 2000, seed=5).samples
    assert np.array_equal(a, b)


def test_mh_periodic_samples_wrapped():
    x = mh_sample(preset("torsion-2d"), 5000, step=0.8, seed=0).samples
    assert np.all(x >= -np.pi) and np.all(x < np.pi)


def test_rank_by_energy_stable_order():
    r = rank_by_energy(np.arange(4.0)[:, None], [2.0, 1.0, 2.0, 0.0])
    assert r.order.tolist() == [3, 1, 0, 2]
    assert r.ranked_energies().tolist() == [0.0, 1.0, 2.0, 2.0]


def test_rank_by_energy_rejects_non_finite():
    with pytest.raises(ValueError, match="index 1"):
        rank_by_energy(np.zeros((3, 1)), [0.0, np.nan, 1.0])


def test_potential_round_trip():
    for name in ("double-well", "gmm-2d", "mueller-brown", "torsion-2d"):
        p = preset(name)
        q = Potential.from_dict(p.to_dict())
        x = np.random.default_rng(0).uniform(-1, 1, (5, p.dim))
        assert np.array_equal(p.energy(x), q.energy(x))

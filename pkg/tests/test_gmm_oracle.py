import numpy as np
import pytest
import torch

from app.core.errors import InvalidInputError, ShapeMismatchError
from app.services.gmm_oracle import (
    GMMOracleDenoiser,
    GMMSpec,
    gmm_log_density,
    gmm_optimal_denoiser,
    gmm_score,
)


def test_single_center_denoises_to_center(rng):
    center = rng.normal(size=(4, 4))
    spec = GMMSpec(center[None], 2.0)
    x = rng.normal(size=(5, 4, 4)) * 10
    assert np.allclose(gmm_optimal_denoiser(x, spec), center[None])


def test_midpoint_is_fixed():
    centers = np.stack([np.zeros((3, 3)), np.ones((3, 3))])
    spec = GMMSpec(centers, 0.3)
    assert np.allclose(gmm_optimal_denoiser(np.full((3, 3), 0.5), spec), 0.5)


def test_score_matches_finite_difference(rng):
    spec = GMMSpec(rng.normal(size=(2, 3, 3)), 0.8)
    x = rng.normal(size=(3, 3))
    score = gmm_score(x, spec)
    h = 1e-6
    numeric = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[idx] = h
        numeric[idx] = (gmm_log_density(x + step, spec) - gmm_log_density(x - step, spec)) / (2 * h)
    assert np.allclose(score, numeric, rtol=1e-5, atol=1e-7)


def test_log_density_matches_single_gaussian(rng):
    center = rng.normal(size=(2, 2))
    sigma = 0.7
    x = rng.normal(size=(2, 2))
    expected = -0.5 * ((x - center) ** 2).sum() / sigma**2 - 2 * np.log(2 * np.pi * sigma**2)
    assert np.isclose(gmm_log_density(x, GMMSpec(center[None], sigma)), expected)


def test_denoiser_stays_in_convex_hull(rng):
    centers = np.stack([np.zeros((2, 2)), np.ones((2, 2))])
    out = gmm_optimal_denoiser(rng.normal(size=(50, 2, 2)) * 5, GMMSpec(centers, 0.5))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_small_sigma_snaps_to_nearest_center():
    centers = np.stack([np.zeros((2, 2)), np.ones((2, 2))])
    out = gmm_optimal_denoiser(np.full((2, 2), 0.1), GMMSpec(centers, 1e-3))
    assert np.abs(out).max() <= 1e-6


def test_far_points_do_not_overflow():
    centers = np.stack([np.zeros((2, 2)), np.ones((2, 2))])
    out = gmm_optimal_denoiser(np.full((2, 2), 1e4), GMMSpec(centers, 1e-3))
    assert np.all(np.isfinite(out))


def test_invalid_specs():
    with pytest.raises(InvalidInputError):
        GMMSpec(np.zeros((1, 2, 2)), 0.0)
    with pytest.raises(ShapeMismatchError):
        gmm_score(np.zeros((3, 3)), GMMSpec(np.zeros((1, 2, 2)), 1.0))


def test_oracle_denoiser_contract():
    centers = np.stack([np.full((1, 3, 3), -1.0), np.full((1, 3, 3), 1.0)])
    oracle = GMMOracleDenoiser(centers)
    x = torch.full((2, 1, 3, 3), 0.9, dtype=torch.float32)
    out = oracle(x, None, torch.tensor([0.01, 0.01]))
    assert out.shape == x.shape and out.dtype == x.dtype
    assert torch.allclose(out, torch.ones_like(x))

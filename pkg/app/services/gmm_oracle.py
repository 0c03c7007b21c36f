"""Analytic noisy-data GMM: log density, score and Tweedie-optimal denoiser.

With training matrices A_1..A_m and noise level σ the noisy data distribution
is the isotropic mixture (1/m) Σ N(x; A_i, σ² I); the optimal denoiser is the
posterior mean Σ r_i(x) A_i = x + σ² ∇ log p_σ(x).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.special import logsumexp, softmax

from app.core.errors import InvalidInputError, ShapeMismatchError


@dataclass(frozen=True)
class GMMSpec:
    centers: np.ndarray
    sigma: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim < 2 or centers.shape[0] == 0:
            raise InvalidInputError("a GMM needs at least one center")
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        m = centers.shape[0]
        weights = np.full(m, 1.0 / m) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (m,) or np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
            raise InvalidInputError("weights must be a probability vector over the centers")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)

    @property
    def event_shape(self) -> tuple[int, ...]:
        return self.centers.shape[1:]


def _component_logits(x: np.ndarray, spec: GMMSpec) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    event = spec.event_shape
    if x.shape[x.ndim - len(event):] != event:
        raise ShapeMismatchError(f"point of shape {x.shape} does not match centers {event}")
    batch = x.shape[: x.ndim - len(event)]
    flat_x = x.reshape(batch + (-1,))
    flat_c = spec.centers.reshape(spec.centers.shape[0], -1)
    sq = ((flat_x[..., None, :] - flat_c) ** 2).sum(axis=-1)
    return flat_x, np.log(spec.weights) - 0.5 * sq / spec.sigma**2


def gmm_log_density(x: np.ndarray, spec: GMMSpec) -> np.ndarray:
    flat_x, logits = _component_logits(x, spec)
    dim = flat_x.shape[-1]
    log_norm = -0.5 * dim * np.log(2.0 * np.pi * spec.sigma**2)
    return logsumexp(logits, axis=-1) + log_norm


def gmm_optimal_denoiser(x: np.ndarray, spec: GMMSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _, logits = _component_logits(x, spec)
    responsibilities = softmax(logits, axis=-1)
    flat_c = spec.centers.reshape(spec.centers.shape[0], -1)
    return (responsibilities @ flat_c).reshape(x.shape)


def gmm_score(x: np.ndarray, spec: GMMSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (gmm_optimal_denoiser(x, spec) - x) / spec.sigma**2


class GMMOracleDenoiser:
    """Denoiser contract D(x, x_sc, σ) backed by the analytic posterior mean.

    The self-conditioning input is ignored. Batched tensors (B, ...) are
    denoised per sample with that sample's σ.
    """

    def __init__(self, centers: Sequence[np.ndarray] | np.ndarray) -> None:
        self.centers = np.stack([np.asarray(c, dtype=np.float64) for c in centers])

    def __call__(
        self,
        x: torch.Tensor,
        x_sc: torch.Tensor | None,
        sigma: torch.Tensor | float,
        node_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        array = x.detach().cpu().numpy().astype(np.float64)
        sigmas = np.broadcast_to(np.asarray(torch.as_tensor(sigma).cpu(), dtype=np.float64), (array.shape[0],))
        out = np.empty_like(array)
        for sigma_value in np.unique(sigmas):
            rows = sigmas == sigma_value
            out[rows] = gmm_optimal_denoiser(array[rows], GMMSpec(self.centers, float(sigma_value)))
        return torch.as_tensor(out, dtype=x.dtype, device=x.device)

"""EDM preconditioning, training objective and the stochastic 2nd-order sampler.

Tensors carry the batch on dim 0; σ is either a Python float or a tensor of
shape (B,). Everything else about the state layout is left to the denoiser.
"""

from __future__ import annotations

import logging
import math
from typing import Literal, Optional, Protocol, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from app.core.config import EDMConfig
from app.core.errors import InvalidInputError, SamplingDivergedError, ShapeMismatchError, TrainingDivergedError
from app.services.attribute_encoding import EncodingScheme
from app.services.batching import StateLayout, decode_state
from app.services.graphs import Graph, permute, uniform_random_permutation

logger = logging.getLogger(__name__)


class Denoiser(Protocol):
    """D(Ã, Â_sc, σ) -> estimate of the clean state, same shape as Ã."""

    def __call__(
        self, x: Tensor, x_sc: Optional[Tensor], sigma: Tensor, node_mask: Optional[Tensor] = None
    ) -> Tensor: ...


def precondition_coeffs(sigma, cfg: EDMConfig):
    """(c_s, c_o, c_i, c_n) for scalar or tensor σ > 0."""
    if isinstance(sigma, Tensor):
        if torch.any(sigma <= 0):
            raise InvalidInputError("sigma must be positive")
        sq, log = torch.sqrt, torch.log
    else:
        if not sigma > 0:
            raise InvalidInputError(f"sigma must be positive, got {sigma}")
        sq, log = math.sqrt, math.log
    sd2 = cfg.sigma_d**2
    total = sd2 + sigma**2
    c_skip = sd2 / total
    c_out = sigma * cfg.sigma_d / sq(total)
    c_in = 1.0 / sq(total)
    c_noise = log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


def loss_weight(sigma, cfg: EDMConfig):
    """λ(σ) = 1 / c_o(σ)²."""
    _, c_out, _, _ = precondition_coeffs(sigma, cfg)
    return 1.0 / c_out**2


def sample_training_sigma(generator: torch.Generator, cfg: EDMConfig, size: int = 1, dtype=torch.float32) -> Tensor:
    """ln σ ~ N(P_mean, P_std²)."""
    normal = torch.randn(size, generator=generator, dtype=dtype)
    return torch.exp(cfg.p_mean + cfg.p_std * normal)


def _expand(sigma: Tensor, like: Tensor) -> Tensor:
    return sigma.reshape(-1, *([1] * (like.ndim - 1))).to(like)


class PreconditionedDenoiser(nn.Module):
    """D_θ(Ã, Â_sc, σ) = c_s Ã + c_o F_θ(c_i Ã, Â_sc, c_n)."""

    def __init__(self, net: nn.Module, cfg: EDMConfig) -> None:
        super().__init__()
        self.net = net
        self.cfg = cfg

    def raw(self, x: Tensor, x_sc: Optional[Tensor], sigma: Tensor, node_mask: Optional[Tensor] = None) -> Tensor:
        """F_θ evaluated on the scaled input; the regression output of the loss."""
        sigma = torch.as_tensor(sigma, dtype=x.dtype, device=x.device).expand(x.shape[0])
        _, _, c_in, c_noise = precondition_coeffs(sigma, self.cfg)
        if x_sc is None:
            x_sc = torch.zeros_like(x)
        return self.net(_expand(c_in, x) * x, x_sc, c_noise, node_mask=node_mask)

    def forward(self, x: Tensor, x_sc: Optional[Tensor], sigma, node_mask: Optional[Tensor] = None) -> Tensor:
        sigma = torch.as_tensor(sigma, dtype=x.dtype, device=x.device).expand(x.shape[0])
        c_skip, c_out, _, _ = precondition_coeffs(sigma, self.cfg)
        raw = self.raw(x, x_sc, sigma, node_mask=node_mask)
        return _expand(c_skip, x) * x + _expand(c_out, x) * raw


def self_conditioning_input(
    x_noisy: Tensor,
    sigma: Tensor,
    denoiser: Denoiser,
    generator: torch.Generator,
    cfg: EDMConfig,
    *,
    branch: Literal["zero", "denoise"] | None = None,
    node_mask: Optional[Tensor] = None,
) -> Tensor:
    """Â_sc: zeros with probability ½ per sample, otherwise D(Ã, 0, σ) without gradients.

    ``branch`` forces one side for the whole batch.
    """
    zeros = torch.zeros_like(x_noisy)
    if not cfg.self_conditioning or branch == "zero":
        return zeros
    with torch.no_grad():
        estimate = denoiser(x_noisy, zeros, sigma, node_mask=node_mask).detach()
    if branch == "denoise":
        return estimate
    keep = torch.rand(x_noisy.shape[0], generator=generator) < 0.5
    return torch.where(_expand(keep, x_noisy).bool(), estimate, zeros)


def edm_weighted_loss(clean: Tensor, noisy: Tensor, raw: Tensor, sigma: Tensor, cfg: EDMConfig) -> Tensor:
    """Per-sample λ(σ)‖c_s Ã + c_o F − A‖²_F."""
    c_skip, c_out, _, _ = precondition_coeffs(sigma, cfg)
    denoised = _expand(c_skip, noisy) * noisy + _expand(c_out, noisy) * raw
    return loss_weight(sigma, cfg).to(raw) * (denoised - clean).pow(2).flatten(1).sum(dim=1)


def edm_target(clean: Tensor, noisy: Tensor, sigma: Tensor, cfg: EDMConfig) -> Tensor:
    """Regression target (A − c_s Ã) / c_o."""
    c_skip, c_out, _, _ = precondition_coeffs(sigma, cfg)
    return (clean - _expand(c_skip, noisy) * noisy) / _expand(c_out, noisy)


def training_loss(
    denoiser: PreconditionedDenoiser,
    clean: Tensor,
    generator: torch.Generator,
    cfg: EDMConfig,
    *,
    node_mask: Optional[Tensor] = None,
    entry_mask: Optional[Tensor] = None,
    sigma: Optional[Tensor] = None,
    sc_branch: Literal["zero", "denoise"] | None = None,
) -> Tensor:
    """Mean over the batch of ‖F − (A − c_s Ã)/c_o‖²_F summed over (valid) entries."""
    if entry_mask is not None and entry_mask.shape != clean.shape:
        raise ShapeMismatchError(f"entry mask {tuple(entry_mask.shape)} does not match state {tuple(clean.shape)}")
    batch = clean.shape[0]
    if sigma is None:
        sigma = sample_training_sigma(generator, cfg, batch, dtype=clean.dtype)
    sigma = sigma.to(clean)
    noise = torch.randn(clean.shape, generator=generator, dtype=clean.dtype).to(clean.device)
    noisy = clean + _expand(sigma, clean) * noise
    x_sc = self_conditioning_input(noisy, sigma, denoiser, generator, cfg, branch=sc_branch, node_mask=node_mask)
    raw = denoiser.raw(noisy, x_sc, sigma, node_mask=node_mask)
    if raw.shape != clean.shape:
        raise ShapeMismatchError(f"network output {tuple(raw.shape)} does not match state {tuple(clean.shape)}")
    residual = (raw - edm_target(clean, noisy, sigma, cfg)).pow(2)
    if entry_mask is not None:
        residual = residual * entry_mask
    loss = residual.flatten(1).sum(dim=1).mean()
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"non-finite training loss {loss.item()}")
    return loss


# ------------------------------------------------------------------
# Sampling
# ------------------------------------------------------------------
def time_grid(cfg: EDMConfig) -> Tensor:
    """t_0 = σ_max > … > t_{N−1} = σ_min, followed by t_N = 0 (float64)."""
    n = cfg.num_steps
    inv_rho = 1.0 / cfg.rho
    if n == 1:
        steps = torch.tensor([cfg.sigma_max], dtype=torch.float64)
    else:
        ramp = torch.arange(n, dtype=torch.float64) / (n - 1)
        steps = (cfg.sigma_max**inv_rho + ramp * (cfg.sigma_min**inv_rho - cfg.sigma_max**inv_rho)) ** cfg.rho
        steps[0], steps[-1] = cfg.sigma_max, cfg.sigma_min
    return torch.cat([steps, torch.zeros(1, dtype=torch.float64)])


def gamma(t: float, cfg: EDMConfig) -> float:
    if cfg.s_tmin <= t <= cfg.s_tmax:
        return min(cfg.s_churn / cfg.num_steps, math.sqrt(2.0) - 1.0)
    return 0.0


def _check_finite(x: Tensor, step: int) -> None:
    if not torch.isfinite(x).all():
        logger.error("sampler diverged at step %d", step)
        raise SamplingDivergedError("non-finite sampler state", step=step)


@torch.no_grad()
def sample(
    denoiser: Denoiser,
    n: int,
    channels: int,
    generator: torch.Generator,
    cfg: EDMConfig,
    *,
    batch_size: int = 1,
    state_shape: Optional[Sequence[int]] = None,
    node_mask: Optional[Tensor] = None,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str = "cpu",
) -> Tensor:
    """Stochastic sampler with Heun correction and self-conditioning.

    Returns the final state Ã^(N) with shape (batch_size, *state_shape);
    ``state_shape`` defaults to (channels, n, n).
    """
    shape = (batch_size, *(state_shape if state_shape is not None else (channels, n, n)))
    grid = time_grid(cfg).tolist()
    x = torch.randn(shape, generator=generator, dtype=dtype).to(device) * grid[0]
    x_sc = torch.zeros_like(x)
    zeros = torch.zeros_like(x)

    for i in range(cfg.num_steps):
        t_cur, t_next = grid[i], grid[i + 1]
        eps = torch.randn(shape, generator=generator, dtype=dtype).to(device) * cfg.s_noise
        t_hat = (1.0 + gamma(t_cur, cfg)) * t_cur
        x_hat = x + math.sqrt(max(t_hat**2 - t_cur**2, 0.0)) * eps

        sc_in = x_sc if cfg.self_conditioning else zeros
        sigma_hat = torch.full((batch_size,), t_hat, dtype=dtype, device=device)
        denoised = denoiser(x_hat, sc_in, sigma_hat, node_mask=node_mask)
        d_cur = (x_hat - denoised) / t_hat
        x_next = x_hat + (t_next - t_hat) * d_cur
        x_sc = denoised

        if cfg.second_order and t_next != 0:
            sc_in = x_sc if cfg.self_conditioning else zeros
            sigma_next = torch.full((batch_size,), t_next, dtype=dtype, device=device)
            denoised_next = denoiser(x_next, sc_in, sigma_next, node_mask=node_mask)
            d_next = (x_next - denoised_next) / t_next
            x_next = x_hat + (t_next - t_hat) * (0.5 * d_cur + 0.5 * d_next)
            x_sc = denoised_next

        x = x_next
        _check_finite(x, i)
        if i % 32 == 0:
            logger.debug("sampler step %d/%d t=%.4g", i, cfg.num_steps, t_cur)
    return x


def numpy_rng_from(generator: torch.Generator) -> np.random.Generator:
    """Child numpy generator seeded from a torch generator stream."""
    seed = int(torch.randint(0, 2**31 - 1, (1,), generator=generator).item())
    return np.random.default_rng(seed)


def generate_graphs(
    denoiser: Denoiser,
    count: int,
    n: int,
    cfg: EDMConfig,
    generator: torch.Generator,
    apply_random_permutation: bool = False,
    *,
    scheme: Optional[EncodingScheme] = None,
    batch_size: int = 64,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str = "cpu",
) -> list[Graph]:
    """Sample, quantize (or decode attributes) and optionally apply a fresh uniform permutation per graph."""
    if count < 0:
        raise InvalidInputError("count must be nonnegative")
    if count == 0:
        return []
    if scheme is not None and scheme.node_channels == 0 and scheme.num_edge_types == 2:
        scheme = None
    layout = StateLayout(
        n,
        1 if scheme is None else scheme.edge_channels,
        0 if scheme is None else scheme.node_channels,
    )
    perm_rng = numpy_rng_from(generator)
    graphs: list[Graph] = []
    remaining = count
    while remaining:
        size = min(batch_size, remaining)
        state = sample(
            denoiser, n, layout.edge_channels, generator, cfg,
            batch_size=size, state_shape=layout.shape, dtype=dtype, device=device,
        )
        graphs.extend(decode_state(state, layout, [n] * size, scheme))
        remaining -= size
        logger.debug("generated %d/%d graphs", count - remaining, count)
    if apply_random_permutation:
        graphs = [permute(g, uniform_random_permutation(g.n, perm_rng)) for g in graphs]
    return graphs

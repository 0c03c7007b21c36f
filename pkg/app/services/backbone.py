"""SwinGNN denoiser network: shifted-window attention over the edge-token grid.

Layout conventions: grids are channels-last (B, H, W, C) inside the stages and
the network consumes/produces diffusion states (B, C_e, n, n) or the packed
attributed layout of ``app.services.batching``.
"""

from __future__ import annotations

import logging
import math
from typing import Optional

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import Tensor, nn

from app.core.config import ModelConfig, stage_ceil
from app.core.errors import InvalidInputError, SamplingDivergedError, ShapeMismatchError
from app.services.attribute_encoding import EncodingScheme
from app.services.batching import StateLayout

logger = logging.getLogger(__name__)

MASK_VALUE = -100.0


# ------------------------------------------------------------------
# Tiling helpers
# ------------------------------------------------------------------
def window_partition(grid: Tensor, window_size: int) -> Tensor:
    """(B, H, W, C) -> (B·nW, M², C), windows in row-major order."""
    _, height, width, _ = grid.shape
    if height % window_size or width % window_size:
        raise ShapeMismatchError(f"grid {height}×{width} is not divisible by window {window_size}")
    return rearrange(grid, "b (h m1) (w m2) c -> (b h w) (m1 m2) c", m1=window_size, m2=window_size)


def window_reverse(windows: Tensor, window_size: int, height: int, width: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    return rearrange(
        windows,
        "(b h w) (m1 m2) c -> b (h m1) (w m2) c",
        h=height // window_size,
        w=width // window_size,
        m1=window_size,
        m2=window_size,
    )


def parity_split(grid: Tensor) -> Tensor:
    """(B, H, W, C) -> (B, H/2, W/2, 4C): the four index-parity sub-grids stacked on channels."""
    _, height, width, _ = grid.shape
    if height % 2 or width % 2:
        raise ShapeMismatchError(f"cannot split an odd grid {height}×{width}")
    return rearrange(grid, "b (h p1) (w p2) c -> b h w (p2 p1 c)", p1=2, p2=2)


def parity_merge(grid: Tensor) -> Tensor:
    """Inverse of :func:`parity_split`."""
    return rearrange(grid, "b h w (p2 p1 c) -> b (h p1) (w p2) c", p1=2, p2=2)


def shift_attention_mask(height: int, width: int, window_size: int, shift: int, device=None) -> Tensor:
    """(nW, M², M²) additive mask blocking attention between regions split by the cyclic roll."""
    regions = torch.zeros((1, height, width, 1), device=device)
    slices = (slice(0, -window_size), slice(-window_size, -shift), slice(-shift, None))
    label = 0
    for hs in slices:
        for ws in slices:
            regions[:, hs, ws, :] = label
            label += 1
    windows = window_partition(regions, window_size).squeeze(-1)
    diff = windows.unsqueeze(1) - windows.unsqueeze(2)
    return diff.masked_fill(diff != 0, MASK_VALUE).masked_fill(diff == 0, 0.0)


def sigma_embedding(c_noise: Tensor, dim: int, max_period: float = 10000.0) -> Tensor:
    """Sinusoidal embedding of the noise label c_n, width ``dim``."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32, device=c_noise.device) / half)
    args = (c_noise.float() * 1000.0)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb.to(c_noise.dtype)


# ------------------------------------------------------------------
# Modules
# ------------------------------------------------------------------
class PatchEmbed(nn.Module):
    """Each non-overlapping p×p×C_in block -> one d-token."""

    def __init__(self, in_channels: int, dim: int, patch_size: int) -> None:
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(in_channels, dim, kernel_size=patch_size, stride=patch_size)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        if x.numel() == 0:
            raise InvalidInputError("cannot embed an empty grid")
        if x.shape[-1] % self.patch_size or x.shape[-2] % self.patch_size:
            raise ShapeMismatchError(f"grid {tuple(x.shape[-2:])} is not divisible by patch {self.patch_size}")
        return self.norm(rearrange(self.proj(x), "b c h w -> b h w c"))


class PatchUnembed(nn.Module):
    """Token (B, H, W, d) -> (B, pH, pW, C_out) by a linear map to p×p×C_out."""

    def __init__(self, dim: int, out_channels: int, patch_size: int) -> None:
        super().__init__()
        self.patch_size = patch_size
        self.out_channels = out_channels
        self.proj = nn.Linear(dim, patch_size * patch_size * out_channels)

    def forward(self, grid: Tensor) -> Tensor:
        p = self.patch_size
        return rearrange(self.proj(grid), "b h w (p1 p2 c) -> b (h p1) (w p2) c", p1=p, p2=p)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside M×M windows with a learned relative position bias."""

    def __init__(self, dim: int, num_heads: int, window_size: int) -> None:
        super().__init__()
        self.num_heads = num_heads
        self.window_size = window_size
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.relative_position_bias_table = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, num_heads))

        coords = torch.stack(torch.meshgrid(torch.arange(window_size), torch.arange(window_size), indexing="ij"))
        flat = coords.flatten(1)
        rel = (flat[:, :, None] - flat[:, None, :]).permute(1, 2, 0).contiguous()
        rel[..., 0] += window_size - 1
        rel[..., 1] += window_size - 1
        rel[..., 0] *= 2 * window_size - 1
        self.register_buffer("relative_position_index", rel.sum(-1), persistent=False)
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)

    def relative_bias(self) -> Tensor:
        tokens = self.window_size * self.window_size
        bias = self.relative_position_bias_table[self.relative_position_index.reshape(-1)]
        return bias.reshape(tokens, tokens, self.num_heads).permute(2, 0, 1)

    def forward(self, x: Tensor, mask: Optional[Tensor] = None) -> Tensor:
        """x: (B·nW, N, C); mask: additive (B·nW, N, N) or None."""
        windows, tokens, channels = x.shape
        qkv = self.qkv(x).reshape(windows, tokens, 3, self.num_heads, channels // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        attn = attn + self.relative_bias().unsqueeze(0)
        if mask is not None:
            attn = attn + mask.unsqueeze(1)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(windows, tokens, channels)
        return self.proj(out)


class SwinBlock(nn.Module):
    """Pre-norm (shifted-)window attention + feedforward, with additive σ conditioning."""

    def __init__(self, dim: int, num_heads: int, window_size: int, shift: int, ff_dim: int, emb_dim: int) -> None:
        super().__init__()
        self.window_size = window_size
        self.shift = shift
        self.emb_proj = nn.Sequential(nn.SiLU(), nn.Linear(emb_dim, dim))
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, window_size)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim))

    def forward(self, x: Tensor, emb: Tensor, token_mask: Optional[Tensor] = None) -> Tensor:
        batch, height, width, _ = x.shape
        m = self.window_size
        shift = self.shift if height > m else 0

        x = x + self.emb_proj(emb)[:, None, None, :]
        h = self.norm1(x)
        valid = token_mask
        if shift:
            h = torch.roll(h, shifts=(-shift, -shift), dims=(1, 2))
            if valid is not None:
                valid = torch.roll(valid, shifts=(-shift, -shift), dims=(1, 2))

        windows = window_partition(h, m)
        num_windows = windows.shape[0] // batch
        mask = None
        if shift:
            mask = shift_attention_mask(height, width, m, shift, device=x.device).to(x.dtype).repeat(batch, 1, 1)
        if valid is not None:
            keys = window_partition(valid[..., None].to(x.dtype), m).squeeze(-1)
            key_mask = (1.0 - keys)[:, None, :] * MASK_VALUE
            key_mask = key_mask.expand(-1, m * m, -1)
            mask = key_mask if mask is None else mask + key_mask
        if mask is not None and mask.shape[0] != batch * num_windows:
            raise ShapeMismatchError("attention mask does not cover every window")

        h = window_reverse(self.attn(windows, mask), m, height, width)
        if shift:
            h = torch.roll(h, shifts=(shift, shift), dims=(1, 2))
        x = x + h
        return x + self.mlp(self.norm2(x))


class Downsample(nn.Module):
    """Parity split to 4C channels, then a linear map to the next stage width 2C."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return self.reduction(self.norm(parity_split(x)))


class Upsample(nn.Module):
    """Linear expansion of 2C channels to four parity groups of C, interleaved to double resolution."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.expand = nn.Linear(dim, 2 * dim, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return parity_merge(self.expand(self.norm(x)))


class SkipMerge(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.proj = nn.Linear(2 * dim, dim)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        return self.proj(torch.cat([x, skip], dim=-1))


def _stage_blocks(cfg: ModelConfig, stage: int, depth: int, emb_dim: int) -> nn.ModuleList:
    dim = cfg.stage_dim(stage)
    ff_dim = cfg.ff_dim * dim // cfg.token_dim
    half = cfg.window_size // 2
    return nn.ModuleList(
        SwinBlock(dim, cfg.heads[stage], cfg.window_size, half if i % 2 else 0, ff_dim, emb_dim)
        for i in range(depth)
    )


class SwinGNN(nn.Module):
    """Raw network F(c_i·Ã, Â_sc, c_n) of the preconditioned denoiser."""

    def __init__(self, cfg: ModelConfig, edge_channels: int = 1, node_channels: int = 0) -> None:
        super().__init__()
        self.cfg = cfg
        self.edge_channels = edge_channels
        self.node_channels = node_channels
        d = cfg.token_dim
        emb_dim = 4 * d
        stages = cfg.num_stages
        in_channels = 2 * edge_channels + 4 * node_channels

        self.patch_embed = PatchEmbed(in_channels, d, cfg.patch_size)
        self.sigma_mlp = nn.Sequential(nn.Linear(d, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))

        self.down_blocks = nn.ModuleList(_stage_blocks(cfg, s, cfg.down_layers[s], emb_dim) for s in range(stages))
        self.downsamples = nn.ModuleList(Downsample(cfg.stage_dim(s)) for s in range(stages - 1))
        self.bottleneck = _stage_blocks(cfg, stages - 1, cfg.bottleneck_layers, emb_dim)
        self.upsamples = nn.ModuleList(Upsample(cfg.stage_dim(s + 1)) for s in range(stages - 1))
        self.skip_merges = nn.ModuleList(SkipMerge(cfg.stage_dim(s)) for s in range(stages))
        self.up_blocks = nn.ModuleList(_stage_blocks(cfg, s, cfg.up_layers[s], emb_dim) for s in range(stages))

        self.norm = nn.LayerNorm(d)
        self.unembed = PatchUnembed(d, d, cfg.patch_size)
        self.edge_head = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, edge_channels))
        self.node_head = (
            nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, node_channels)) if node_channels else None
        )
        self.apply(_init_weights)

    def _input_grid(self, x: Tensor, x_sc: Tensor, layout: StateLayout) -> Tensor:
        edges, nodes = layout.unpack(x)
        sc_edges, sc_nodes = layout.unpack(x_sc)
        parts = [edges, sc_edges]
        if layout.packed:
            node_all = torch.cat([nodes, sc_nodes], dim=1)
            n = layout.n
            parts.append(node_all[:, :, :, None].expand(-1, -1, n, n))
            parts.append(node_all[:, :, None, :].expand(-1, -1, n, n))
        return torch.cat(parts, dim=1)

    def forward(self, x: Tensor, x_sc: Tensor, c_noise: Tensor, node_mask: Optional[Tensor] = None) -> Tensor:
        layout = StateLayout.infer(x, self.edge_channels, self.node_channels)
        if x_sc.shape != x.shape:
            raise ShapeMismatchError(f"self-conditioning input {tuple(x_sc.shape)} != state {tuple(x.shape)}")
        batch, n = x.shape[0], layout.n
        grid = self._input_grid(x, x_sc, layout)

        padded = stage_ceil(n, self.cfg.size_unit)
        if node_mask is None:
            node_mask = torch.ones(batch, n, dtype=torch.bool, device=x.device)
        node_mask = F.pad(node_mask.bool(), (0, padded - n), value=False)
        grid = F.pad(grid, (0, padded - n, 0, padded - n))
        pair_mask = (node_mask[:, :, None] & node_mask[:, None, :]).to(x.dtype)
        token_mask = F.max_pool2d(pair_mask[:, None], self.cfg.patch_size).squeeze(1)

        emb = self.sigma_mlp(sigma_embedding(torch.as_tensor(c_noise, device=x.device).expand(batch), self.cfg.token_dim))
        h = self.patch_embed(grid)

        skips, masks = [], []
        for s, blocks in enumerate(self.down_blocks):
            if s > 0:
                h = self.downsamples[s - 1](h)
                token_mask = F.max_pool2d(token_mask[:, None], 2).squeeze(1)
            valid = token_mask > 0
            for block in blocks:
                h = block(h, emb, valid)
            skips.append(h)
            masks.append(valid)

        for block in self.bottleneck:
            h = block(h, emb, masks[-1])

        for s in reversed(range(len(self.up_blocks))):
            if s < len(self.up_blocks) - 1:
                h = self.upsamples[s](h)
            h = self.skip_merges[s](h, skips[s])
            for block in self.up_blocks[s]:
                h = block(h, emb, masks[s])

        features = self.unembed(self.norm(h))[:, :n, :n]
        if not torch.isfinite(features).all():
            raise SamplingDivergedError("non-finite activations in the denoiser")
        edges = rearrange(self.edge_head(features), "b i j c -> b c i j")
        nodes = None
        if self.node_head is not None:
            valid = node_mask[:, :n].to(features.dtype)
            pooled = (features * valid[:, None, :, None]).sum(dim=2) / valid.sum(dim=1).clamp(min=1.0)[:, None, None]
            nodes = rearrange(self.node_head(pooled), "b i c -> b c i")
        return layout.pack(edges, nodes)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_network(cfg: ModelConfig) -> SwinGNN:
    """Network sized from the model config (edge/node channel counts from its encoding)."""
    if cfg.attributed:
        scheme = EncodingScheme(cfg.encoding, cfg.num_node_types, cfg.num_edge_types)
        net = SwinGNN(cfg, scheme.edge_channels, scheme.node_channels)
    else:
        net = SwinGNN(cfg)
    logger.info("built SwinGNN with %d trainable parameters", count_parameters(net))
    return net

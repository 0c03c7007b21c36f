import pytest
import torch

from app.core.config import ModelConfig
from app.core.errors import ShapeMismatchError
from app.services.backbone import (
    MASK_VALUE,
    Downsample,
    PatchEmbed,
    PatchUnembed,
    SwinBlock,
    SwinGNN,
    Upsample,
    build_network,
    count_parameters,
    parity_merge,
    parity_split,
    shift_attention_mask,
    sigma_embedding,
    window_partition,
    window_reverse,
)

REFERENCE_PARAMETERS = 15.31e6


def symmetric_state(batch, n, generator):
    upper = torch.triu(torch.sign(torch.randn(batch, 1, n, n, generator=generator)), diagonal=1)
    return upper + upper.transpose(-1, -2) - torch.eye(n)


# ------------------------------------------------------------------
# Windows and parity
# ------------------------------------------------------------------
def test_window_partition_roundtrip(generator):
    grid = torch.randn(2, 6, 6, 3, generator=generator)
    windows = window_partition(grid, 3)
    assert windows.shape == (8, 9, 3)
    assert torch.equal(windows[0], grid[0, :3, :3].reshape(9, 3))
    assert torch.equal(window_reverse(windows, 3, 6, 6), grid)


def test_window_partition_rejects_ragged_grid():
    with pytest.raises(ShapeMismatchError):
        window_partition(torch.zeros(1, 5, 6, 1), 3)


def test_parity_split_roundtrip(generator):
    grid = torch.randn(2, 4, 6, 3, generator=generator)
    split = parity_split(grid)
    assert split.shape == (2, 2, 3, 12)
    assert torch.equal(split[..., :3], grid[:, 0::2, 0::2])
    assert torch.equal(parity_merge(split), grid)


def test_parity_split_rejects_odd_grid():
    with pytest.raises(ShapeMismatchError):
        parity_split(torch.zeros(1, 3, 4, 1))


def test_shift_mask_blocks_wrapped_regions():
    mask = shift_attention_mask(8, 8, 4, 2)
    assert mask.shape == (4, 16, 16)
    assert torch.all(mask[0] == 0)
    assert torch.any(mask[-1] == MASK_VALUE)
    assert torch.equal(mask, mask.transpose(1, 2))


def test_sigma_embedding_shape():
    c_noise = torch.tensor([-0.5, 0.0, 1.0])
    assert sigma_embedding(c_noise, 8).shape == (3, 8)
    odd = sigma_embedding(c_noise, 7)
    assert odd.shape == (3, 7) and torch.all(odd[:, -1] == 0)


def test_patch_embed_rejects_indivisible_grid():
    with pytest.raises(ShapeMismatchError):
        PatchEmbed(2, 8, 2)(torch.zeros(1, 2, 5, 5))


@pytest.mark.parametrize("patch_size", [1, 2, 4])
@pytest.mark.parametrize("n", [8, 12, 16])
def test_patch_unembed_restores_grid_shape(generator, n, patch_size):
    x = torch.randn(2, 3, n, n, generator=generator)
    tokens = PatchEmbed(3, 8, patch_size)(x)
    assert tokens.shape == (2, n // patch_size, n // patch_size, 8)
    assert PatchUnembed(8, 3, patch_size)(tokens).shape == (2, n, n, 3)


def test_patch_size_four_on_eight_nodes_gives_two_by_two_tokens():
    assert PatchEmbed(1, 8, 4)(torch.zeros(1, 1, 8, 8)).shape == (1, 2, 2, 8)


# ------------------------------------------------------------------
# Attention blocks
# ------------------------------------------------------------------
def _block(shift, dim=4, window=2, emb_dim=4):
    return SwinBlock(dim, 1, window, shift, 2 * dim, emb_dim).double().eval()


def _changed_tokens(blocks, grid, emb):
    bumped = grid.clone()
    bumped[0, 1, 1] += 1.0
    with torch.no_grad():
        a, b = grid, bumped
        for block in blocks:
            a, b = block(a, emb), block(b, emb)
    return (a - b).abs().amax(dim=-1)[0] > 1e-9


def test_receptive_field_grows_with_alternating_blocks():
    torch.manual_seed(0)
    grid = torch.randn(1, 4, 4, 4, dtype=torch.float64)
    emb = torch.zeros(1, 4, dtype=torch.float64)
    regular, shifted = _block(0), _block(1)

    expected = torch.zeros(4, 4, dtype=torch.bool)
    expected[0:2, 0:2] = True
    assert torch.equal(_changed_tokens([regular], grid, emb), expected)

    expected[0:3, 0:3] = True
    assert torch.equal(_changed_tokens([regular, shifted], grid, emb), expected)


def test_zero_weight_block_is_identity(generator):
    block = _block(1).float()
    with torch.no_grad():
        for layer in (block.attn.proj, block.mlp[-1], block.emb_proj[-1]):
            layer.weight.zero_()
            layer.bias.zero_()
    grid = torch.randn(2, 4, 4, 4, generator=generator)
    emb = torch.randn(2, 4, generator=generator)
    assert torch.equal(block(grid, emb), grid)


def test_downsample_then_upsample_restores_resolution(generator):
    grid = torch.randn(1, 16, 16, 60, generator=generator)
    half = Downsample(60)(grid)
    assert half.shape == (1, 8, 8, 120)
    assert Upsample(120)(half).shape == grid.shape


def test_parity_split_of_constant_block_stacks_channels():
    grid = torch.arange(3.0).expand(1, 2, 2, 3)
    assert torch.equal(parity_split(grid), torch.arange(3.0).repeat(4).reshape(1, 1, 1, 12))


# ------------------------------------------------------------------
# Full network
# ------------------------------------------------------------------
@pytest.mark.parametrize("patch_size", [1, 2, 4])
@pytest.mark.parametrize("n", [4, 5, 7, 8, 12, 16])
def test_forward_keeps_state_shape(tiny_model_config, generator, n, patch_size):
    net = SwinGNN(tiny_model_config.model_copy(update={"patch_size": patch_size}))
    x = symmetric_state(2, n, generator)
    out = net(x, torch.zeros_like(x), torch.tensor([0.1, -0.3]))
    assert out.shape == x.shape
    assert torch.isfinite(out).all()


def test_forward_rejects_mismatched_self_conditioning(tiny_model_config):
    net = SwinGNN(tiny_model_config)
    with pytest.raises(ShapeMismatchError):
        net(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 5, 5), torch.zeros(1))


def test_padding_does_not_leak_into_valid_block(tiny_model_config, generator):
    net = SwinGNN(tiny_model_config).eval()
    small = symmetric_state(1, 5, generator)
    padded = torch.zeros(1, 1, 8, 8)
    padded[..., :5, :5] = small
    mask = torch.zeros(1, 8, dtype=torch.bool)
    mask[0, :5] = True
    c_noise = torch.tensor([0.2])
    with torch.no_grad():
        alone = net(small, torch.zeros_like(small), c_noise)
        inside = net(padded, torch.zeros_like(padded), c_noise, node_mask=mask)
    assert torch.allclose(alone, inside[..., :5, :5], atol=1e-6)


def test_attributed_forward_keeps_packed_shape(generator):
    cfg = ModelConfig(
        patch_size=1, window_size=2, token_dim=8, heads=[1, 2], down_layers=[1, 1], up_layers=[1, 1],
        encoding="one-hot", num_node_types=3, num_edge_types=3,
    )
    net = build_network(cfg)
    x = torch.randn(2, 3 * 25 + 3 * 5, generator=generator)
    assert net(x, torch.zeros_like(x), torch.zeros(2)).shape == x.shape


def test_gradients_match_finite_differences(tiny_model_config, generator):
    net = SwinGNN(tiny_model_config).double()
    x = torch.randn(1, 1, 3, 3, generator=generator, dtype=torch.float64, requires_grad=True)
    x_sc = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
    c_noise = torch.tensor([0.1], dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda inp: net(inp, x_sc, c_noise), (x,), eps=1e-6, atol=1e-4)


def test_network_is_not_permutation_equivariant(tiny_model_config, generator):
    net = SwinGNN(tiny_model_config).eval()
    x = symmetric_state(1, 8, generator)
    perm = torch.tensor([3, 0, 6, 1, 7, 2, 5, 4])
    c_noise = torch.tensor([0.0])
    with torch.no_grad():
        permuted_out = net(x[..., perm, :][..., perm], torch.zeros_like(x), c_noise)
        out_permuted = net(x, torch.zeros_like(x), c_noise)[..., perm, :][..., perm]
    assert not torch.allclose(permuted_out, out_permuted, rtol=1e-3, atol=0)


def test_standard_configuration_size():
    count = count_parameters(build_network(ModelConfig()))
    assert abs(count - REFERENCE_PARAMETERS) / REFERENCE_PARAMETERS < 0.10

import pytest
import torch

from salref.exceptions import InputError
from salref.integration import CoarseAttentionBlock, SaliencyDecoder, upsample2x
from salref.interaction import MiaOutput

from util import check_gradients


def make_mia(batch=1, width=16, sizes=(16, 8, 4, 2)):
    torch.manual_seed(0)
    return MiaOutput([torch.randn(batch, width, s, s) for s in sizes])


def test_decoder_shapes_and_reduction_alignment():
    width = 16
    decoder = SaliencyDecoder(width=width)
    mia = make_mia(batch=2, width=width, sizes=(48, 24, 12, 6))
    state = decoder(mia)
    assert {tuple(state.aggregated[i].shape[2:]) for i in (1, 2, 3)} == {
        (48, 48), (24, 24), (12, 12)}
    for level in (1, 2, 3):
        block = decoder.blocks[str(level)]
        # reduced keys land on level-3's grid for every level
        reduced = block.reduce(state.aggregated[level])
        assert tuple(reduced.shape[2:]) == (12, 12)
        assert state.logits[level].shape[1] == 1
        assert state.logits[level].shape[2:] == state.aggregated[level].shape[2:]


def test_reduction_ratios():
    decoder = SaliencyDecoder(width=8)
    assert decoder.blocks["1"].r == 4
    assert decoder.blocks["2"].r == 2
    assert decoder.blocks["3"].r == 1


def test_reduction_token_counts():
    block = CoarseAttentionBlock(8, 4)
    x = torch.randn(1, 8, 48, 48)
    reduced = block.reduce(x)
    assert tuple(reduced.shape[2:]) == (12, 12)
    # 144 key tokens against 2304 queries: QK^T work drops by r^2 = 16
    assert (48 * 48) // (12 * 12) == 16


def test_r1_degenerates_to_pointwise():
    block = CoarseAttentionBlock(4, 1)
    x = torch.randn(1, 4, 5, 5)
    integrated, logits = block(x)
    assert integrated.shape == x.shape
    assert logits.shape == (1, 1, 5, 5)


def test_divisibility_error():
    block = CoarseAttentionBlock(4, 4)
    with pytest.raises(InputError, match="ratio 4"):
        block(torch.randn(1, 4, 6, 6))


def test_zero_inputs_with_zero_bias_stay_zero():
    decoder = SaliencyDecoder(width=8)
    decoder.train()
    with torch.no_grad():
        for m in decoder.modules():
            if hasattr(m, "bias") and m.bias is not None:
                m.bias.zero_()
        mia = MiaOutput([torch.zeros(2, 8, s, s) for s in (16, 8, 4, 2)])
        state = decoder(mia)
    for level in (1, 2, 3):
        assert torch.allclose(state.aggregated[level],
                              torch.zeros_like(state.aggregated[level]), atol=1e-6)


def test_residual_structure_with_zeroed_branches():
    # zero attention value-projection and zero MLP -> BN(fold(x))
    torch.manual_seed(2)
    block = CoarseAttentionBlock(6, 2)
    block.eval()
    with torch.no_grad():
        block.projections.v_proj.weight.zero_()
        block.projections.v_proj.bias.zero_()
        block.mlp[2].weight.zero_()
        block.mlp[2].bias.zero_()
        x = torch.randn(1, 6, 4, 4)
        integrated, _ = block(x)
        want = block.norm(block.fold(x))
    assert torch.allclose(integrated, want, atol=1e-6)


def test_aggregation_chains_through_previous_output():
    torch.manual_seed(3)
    decoder = SaliencyDecoder(width=8)
    decoder.eval()
    mia = make_mia(width=8)
    state = decoder(mia)
    with torch.no_grad():
        want = decoder.squeeze["2"](
            torch.cat([mia[1], upsample2x(state.integrated[3])], dim=1))
    assert torch.allclose(state.aggregated[2], want, atol=1e-6)


def test_identity_squeeze_passes_current_level_through():
    # identity on the current-level half, zero on the upsampled half
    decoder = SaliencyDecoder(width=4)
    with torch.no_grad():
        sq = decoder.squeeze["3"]
        sq.weight.zero_()
        for i in range(4):
            sq.weight[i, i, 0, 0] = 1.0
        sq.bias.zero_()
    mia = make_mia(width=4)
    state = decoder(mia)
    assert torch.allclose(state.aggregated[3], mia[2], atol=1e-6)


def test_block_gradients_match_finite_differences():
    torch.manual_seed(4)
    block = CoarseAttentionBlock(4, 2).double()
    block.eval()
    x = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
    weights = torch.randn(1, 4, 4, 4, dtype=torch.float64)

    def loss():
        integrated, logits = block(x)
        return (integrated * weights).sum() + logits.sum()

    check_gradients(loss, x)

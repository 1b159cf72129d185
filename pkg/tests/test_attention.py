"""
Tests for masked attention, the tiny ViT forward pass and the gradient checker.
"""

import math

import pytest
import torch
import torch.nn.functional as F

from lookhere.attention import PositionEncoding, TinyViT, attend, grad_check, masked_softmax, vit_forward
from lookhere.bias_field import build_alibi_2d, build_lookhere, default_alibi_slopes, default_head_specs, init_rpe_table, rpe_to_field
from lookhere.exceptions import InternalError, InvalidArgumentError
from lookhere.grid import ModelDims, make_grid
from lookhere.schemas import PenaltyConfig
from lookhere.pos_embed import fourier_embed, learned_1d_init, sincos_2d
from lookhere.rope import RotaryConfig, rotate_tokens


@pytest.fixture
def tiny_dims():
    return ModelDims(depth=2, heads=4, width=16, head_dim=4, patch_size=2)


@pytest.fixture
def grid3():
    return make_grid(3, 3)


def lookhere_field(grid, dims, fov=90):
    return build_lookhere(grid, dims, default_head_specs(fov, dims.heads))


# ============================================================================
# Softmax and attention
# ============================================================================

class TestMaskedSoftmax:
    def test_without_bias(self):
        logits = torch.randn(3, 5, dtype=torch.float64)
        assert torch.equal(masked_softmax(logits), torch.softmax(logits, dim=-1))

    def test_penalty_reweights(self):
        logits = torch.zeros(1, 2, dtype=torch.float64)
        bias = torch.tensor([[0.0, math.log(2.0)]], dtype=torch.float64)
        assert masked_softmax(logits, bias)[0].tolist() == pytest.approx([2 / 3, 1 / 3])

    def test_masked_entries_exactly_zero(self):
        logits = torch.randn(4, 6, dtype=torch.float64)
        bias = torch.zeros(4, 6, dtype=torch.float64)
        bias[:, 2] = math.inf
        bias[1, 4] = math.inf
        weights = masked_softmax(logits, bias)
        assert torch.all(weights[:, 2] == 0)
        assert weights[1, 4] == 0
        torch.testing.assert_close(weights.sum(dim=-1), torch.ones(4, dtype=torch.float64))

    def test_masked_entries_get_no_gradient(self):
        logits = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
        bias = torch.zeros(3, 4, dtype=torch.float64)
        bias[0, 1] = math.inf
        bias[2, 3] = math.inf
        weights = masked_softmax(logits, bias)
        (weights * torch.randn(3, 4, dtype=torch.float64)).sum().backward()
        assert logits.grad[0, 1] == 0
        assert logits.grad[2, 3] == 0
        assert torch.isfinite(logits.grad).all()

    def test_fully_masked_row(self):
        bias = torch.zeros(2, 3)
        bias[1] = math.inf
        with pytest.raises(InternalError):
            masked_softmax(torch.zeros(2, 3), bias)


class TestAttend:
    def test_shapes(self):
        Q = torch.randn(2, 4, 10, 8, dtype=torch.float64)
        result = attend(Q, Q.clone(), Q.clone(), keep_logits=True)
        assert result.weights.shape == (2, 4, 10, 10)
        assert result.outputs.shape == (2, 10, 32)
        assert result.logits.shape == (2, 4, 10, 10)
        assert attend(Q, Q, Q).logits is None

    def test_zero_bias_is_no_bias(self):
        Q, K, V = (torch.randn(3, 10, 4, dtype=torch.float64) for _ in range(3))
        plain = attend(Q, K, V)
        biased = attend(Q, K, V, bias=torch.zeros(3, 10, 10, dtype=torch.float64))
        torch.testing.assert_close(plain.weights, biased.weights)
        torch.testing.assert_close(plain.outputs, biased.outputs)

    def test_scaled_logits(self):
        Q, K, V = (torch.randn(1, 5, 4, dtype=torch.float64) for _ in range(3))
        result = attend(Q, K, V, keep_logits=True)
        torch.testing.assert_close(result.logits, Q @ K.transpose(-2, -1) / 2.0)

    def test_lookhere_mask_zeroes_weights(self, grid3):
        dims = ModelDims(depth=1, heads=12, width=48, head_dim=4)
        field = lookhere_field(grid3, dims, fov=45)
        Q, K, V = (torch.randn(12, grid3.tokens, 4, dtype=torch.float64) for _ in range(3))
        weights = attend(Q, K, V, bias=field.layer(1)).weights
        assert torch.all(weights[field.masked()[0]] == 0)
        torch.testing.assert_close(weights.sum(dim=-1), torch.ones(12, grid3.tokens, dtype=torch.float64))

    def test_rotary_rotates_queries_and_keys(self, grid3):
        cfg = RotaryConfig(head_dim=8, grid=grid3)
        Q, K, V = (torch.randn(2, grid3.tokens, 8, dtype=torch.float64) for _ in range(3))
        result = attend(Q, K, V, rotary=cfg, keep_logits=True)
        expected = rotate_tokens(Q, cfg) @ rotate_tokens(K, cfg).transpose(-2, -1) / math.sqrt(8)
        torch.testing.assert_close(result.logits, expected)

    def test_inconsistent_shapes(self):
        with pytest.raises(InvalidArgumentError):
            attend(torch.zeros(2, 5, 4), torch.zeros(2, 6, 4), torch.zeros(2, 6, 4))

    def test_bias_shape_mismatch(self):
        Q = torch.zeros(2, 5, 4)
        with pytest.raises(InvalidArgumentError):
            attend(Q, Q, Q, bias=torch.zeros(2, 4, 4))


class TestAttentionReference:
    def test_matches_naive_loops(self):
        H, T, D = 2, 5, 3
        generator = torch.Generator().manual_seed(11)
        Q, K, V = (torch.randn(H, T, D, dtype=torch.float64, generator=generator) for _ in range(3))
        bias = torch.rand(H, T, T, dtype=torch.float64, generator=generator) * 2
        bias[0, 0, 3] = bias[0, 4, 1] = bias[1, 2, 0] = bias[1, 2, 4] = math.inf
        result = attend(Q, K, V, bias=bias)

        for h in range(H):
            for i in range(T):
                scores = {}
                for j in range(T):
                    if math.isinf(bias[h, i, j].item()):
                        continue
                    dot = sum(Q[h, i, d].item() * K[h, j, d].item() for d in range(D))
                    scores[j] = dot / math.sqrt(D) - bias[h, i, j].item()
                top = max(scores.values())
                total = sum(math.exp(s - top) for s in scores.values())
                weights = [math.exp(scores[j] - top) / total if j in scores else 0.0 for j in range(T)]
                assert result.weights[h, i].tolist() == pytest.approx(weights, abs=1e-12)
                output = [sum(weights[j] * V[h, j, d].item() for j in range(T)) for d in range(D)]
                assert result.outputs[i, h * D:(h + 1) * D].tolist() == pytest.approx(output, abs=1e-12)

    def test_two_tokens_by_hand(self):
        Q = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=torch.float64)
        K = torch.tensor([[[1.0, 0.0], [1.0, 1.0]]], dtype=torch.float64)
        V = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]], dtype=torch.float64)
        # second query: logits (0, 1/sqrt 2) minus bias (0, 1/sqrt 2) leaves a tie
        bias = torch.tensor([[[0.0, math.inf], [0.0, 1 / math.sqrt(2)]]], dtype=torch.float64)
        result = attend(Q, K, V, bias=bias, keep_logits=True)
        assert result.logits[0].tolist() == pytest.approx([[1 / math.sqrt(2)] * 2, [0.0, 1 / math.sqrt(2)]], abs=1e-15)
        assert result.weights[0].tolist() == pytest.approx([[1.0, 0.0], [0.5, 0.5]], abs=1e-15)
        assert result.outputs.tolist() == pytest.approx([[1.0, 2.0], [2.0, 3.0]], abs=1e-15)

    def test_joint_permutation_of_tokens_and_bias(self, grid3):
        dims = ModelDims(depth=1, heads=12, width=48, head_dim=4)
        bias = lookhere_field(grid3, dims, fov=45).layer(1)
        generator = torch.Generator().manual_seed(5)
        Q, K, V = (torch.randn(12, grid3.tokens, 4, dtype=torch.float64, generator=generator) for _ in range(3))
        perm = torch.randperm(grid3.tokens, generator=generator)

        plain = attend(Q, K, V, bias=bias)
        permuted = attend(Q[:, perm], K[:, perm], V[:, perm], bias=bias[:, perm][:, :, perm])
        torch.testing.assert_close(permuted.weights, plain.weights[:, perm][:, :, perm], rtol=0, atol=1e-12)
        torch.testing.assert_close(permuted.outputs, plain.outputs[perm], rtol=0, atol=1e-12)

    def test_uniform_over_visible_keys_without_content_or_distance(self, grid3):
        dims = ModelDims(depth=1, heads=12, width=48, head_dim=4)
        specs = default_head_specs(90, dims.heads)
        field = build_lookhere(grid3, dims, specs, penalty=PenaltyConfig(no_distance=True))
        zeros = torch.zeros(12, grid3.tokens, 4, dtype=torch.float64)
        weights = attend(zeros, zeros, torch.randn_like(zeros), bias=field.layer(1)).weights

        visible = (~field.masked()[0]).double()
        torch.testing.assert_close(weights, visible / visible.sum(dim=-1, keepdim=True), rtol=0, atol=1e-15)

    def test_bag_of_patches_without_position(self, tiny_dims, grid3):
        model = TinyViT(tiny_dims, in_channels=1, seed=3).double()
        tokens = torch.randn(2, grid3.n, 4, dtype=torch.float64)
        perm = torch.randperm(grid3.n, generator=torch.Generator().manual_seed(8))
        plain = vit_forward(tokens, model, None, grid3)
        shuffled = vit_forward(tokens[:, perm], model, None, grid3)
        torch.testing.assert_close(shuffled.logits, plain.logits, rtol=0, atol=1e-12)
        torch.testing.assert_close(shuffled.patch_reps[-1], plain.patch_reps[-1][:, perm], rtol=0, atol=1e-12)

    def test_biased_logits_depend_only_on_displacement(self):
        grid = make_grid(6, 6)
        dims = ModelDims(depth=1, heads=12, width=48, head_dim=4)
        bias = lookhere_field(grid, dims, fov=90).layer(1)
        # one shared query/key vector: raw logits are 6.25 / 2 for every pair
        Q = torch.tensor([1.0, -2.0, 0.5, 1.0], dtype=torch.float64).expand(12, grid.tokens, 4)
        result = attend(Q, Q, torch.zeros_like(Q), bias=bias, keep_logits=True)
        biased = (result.logits - bias)[:, 1:, 1:]

        by_displacement = {}
        for q in range(36):
            for k in range(36):
                delta = (k // 6 - q // 6, k % 6 - q % 6)
                first = by_displacement.setdefault(delta, biased[:, q, k])
                assert torch.equal(biased[:, q, k], first), (q, k)
        assert len(by_displacement) == 11 * 11
        assert len({tuple(v.tolist()) for v in by_displacement.values()}) > 1


# ============================================================================
# Tiny ViT
# ============================================================================

class TestVitForward:
    def test_images_and_tokens(self, tiny_dims, grid3):
        model = TinyViT(tiny_dims, in_channels=1, seed=0).double()
        images = torch.randn(2, 6, 6, 1, dtype=torch.float64)
        result = vit_forward(images, model, PositionEncoding(bias=lookhere_field(grid3, tiny_dims)), grid3)
        assert result.logits.shape == (2, 4)
        assert len(result.attentions) == 2
        assert result.attentions[0].weights.shape == (2, 4, 10, 10)
        assert result.patch_reps[1].shape == (2, 9, 16)

        tokens = torch.randn(2, 9, 4, dtype=torch.float64)
        assert vit_forward(tokens, model, None, grid3).logits.shape == (2, 4)

    def test_seeded_init(self, tiny_dims):
        first, second = TinyViT(tiny_dims, seed=7), TinyViT(tiny_dims, seed=7)
        for a, b in zip(first.parameters(), second.parameters()):
            assert torch.equal(a, b)
        different = TinyViT(tiny_dims, seed=8)
        assert not torch.equal(first.cls_token, different.cls_token)

    def test_grid_mismatch(self, tiny_dims, grid3):
        model = TinyViT(tiny_dims, in_channels=1).double()
        images = torch.randn(1, 6, 6, 1, dtype=torch.float64)
        other = make_grid(4, 4)
        with pytest.raises(InvalidArgumentError):
            vit_forward(images, model, PositionEncoding(bias=lookhere_field(other, tiny_dims)), grid3)
        with pytest.raises(InvalidArgumentError):
            vit_forward(images, model, None, other)
        with pytest.raises(InvalidArgumentError):
            vit_forward(torch.randn(1, 8, 4, dtype=torch.float64), model, None, grid3)

    def test_layer_count_mismatch(self, tiny_dims, grid3):
        model = TinyViT(tiny_dims, in_channels=1).double()
        other_dims = ModelDims(depth=3, heads=4, width=16, head_dim=4, patch_size=2)
        field = lookhere_field(grid3, other_dims)
        with pytest.raises(InvalidArgumentError):
            vit_forward(torch.randn(1, 9, 4, dtype=torch.float64), model, PositionEncoding(bias=field), grid3)

    def test_masked_keys_never_attended(self, tiny_dims, grid3):
        model = TinyViT(tiny_dims, in_channels=1).double()
        field = lookhere_field(grid3, tiny_dims)
        result = vit_forward(torch.randn(3, 9, 4, dtype=torch.float64), model, PositionEncoding(bias=field), grid3)
        for l, attention in enumerate(result.attentions):
            assert torch.all(attention.weights[:, field.masked()[l]] == 0)


# ============================================================================
# Gradient check
# ============================================================================

def encodings(grid, dims):
    rpe = init_rpe_table(grid, dims.heads, rng_seed=1, std=0.5)
    rpe.values.requires_grad_(True)
    table = learned_1d_init(grid.n, dims.width, grid=grid, seed=2)
    table.values.requires_grad_(True)
    return {
        "lookhere": (lambda: PositionEncoding(bias=lookhere_field(grid, dims)), []),
        "alibi_2d": (lambda: PositionEncoding(bias=build_alibi_2d(grid, dims, default_alibi_slopes(dims.heads))), []),
        "rope_2d": (lambda: PositionEncoding(rotary=RotaryConfig(head_dim=dims.head_dim, grid=grid)), []),
        "rpe_learn": (lambda: PositionEncoding(bias=rpe_to_field(rpe, grid, dims)), [rpe.values]),
        "learned_1d": (lambda: PositionEncoding(table=table), [table.values]),
        "sincos_2d": (lambda: PositionEncoding(table=sincos_2d(grid, dims.width)), []),
        "fourier": (lambda: PositionEncoding(table=fourier_embed(grid, dims.width, seed=3)), []),
    }


@pytest.mark.parametrize(
    "name", ["lookhere", "alibi_2d", "rope_2d", "rpe_learn", "learned_1d", "sincos_2d", "fourier"]
)
def test_gradients_match_finite_differences(name, tiny_dims, grid3):
    model = TinyViT(tiny_dims, in_channels=1, seed=0).double()
    make_encoding, extra = encodings(grid3, tiny_dims)[name]
    tokens = torch.randn(4, 9, 4, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 3])

    def loss_fn():
        return F.cross_entropy(vit_forward(tokens, model, make_encoding(), grid3).logits, labels)

    error = grad_check(loss_fn, [*model.parameters(), *extra], eps=1e-5, samples=24, seed=1, floor=1e-4)
    assert error < 1e-5


def test_grad_check_detects_wrong_gradient():
    x = torch.tensor([1.5, -0.5], dtype=torch.float64, requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, value):
            return value.pow(2).sum()

        @staticmethod
        def backward(ctx, grad):
            return grad * torch.ones(2, dtype=torch.float64)

    assert grad_check(lambda: Wrong.apply(x), [x], samples=4) > 0.1
    assert grad_check(lambda: x.pow(3).sum(), [x], samples=4) < 1e-8

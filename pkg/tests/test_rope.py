"""
Tests for 2D axial rotary position embedding.
"""

import math

import pytest
import torch

from lookhere.exceptions import InvalidArgumentError
from lookhere.grid import make_grid
from lookhere.rope import RotaryConfig, apply_rotary, retune_base, rotary_angles, rotary_frequencies, rotate_tokens


@pytest.fixture
def cfg():
    return RotaryConfig(head_dim=8, grid=make_grid(4, 5))


class TestRotaryConfig:
    @pytest.mark.parametrize("head_dim", [2, 6, 10])
    def test_head_dim_divisible_by_four(self, head_dim):
        with pytest.raises(InvalidArgumentError):
            RotaryConfig(head_dim=head_dim, grid=make_grid(2, 2))

    def test_base_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            RotaryConfig(head_dim=8, grid=make_grid(2, 2), base_freq=0.0)

    def test_frequencies(self, cfg):
        assert rotary_frequencies(cfg).tolist() == pytest.approx([1.0, 0.1])

    def test_retune_base(self, cfg):
        tuned = retune_base(cfg, 400)
        assert tuned.base_freq == 400.0
        assert tuned.grid == cfg.grid
        assert cfg.base_freq == 100.0


class TestRotation:
    def test_angle_table(self, cfg):
        angles = rotary_angles(cfg)
        assert angles.shape == (cfg.grid.tokens, 4)
        assert torch.equal(angles[0], torch.zeros(4, dtype=angles.dtype))
        assert torch.equal(angles[1], torch.zeros(4, dtype=angles.dtype))

    def test_single_pair_example(self):
        cfg = RotaryConfig(head_dim=4, grid=make_grid(1, 2))
        vec = torch.tensor([1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
        rotated = apply_rotary(vec, 2, cfg)
        expected = [1.0, 0.0, math.cos(1.0), math.sin(1.0)]
        assert rotated.tolist() == pytest.approx(expected, abs=1e-15)

    def test_cls_untouched(self, cfg):
        x = torch.randn(2, 3, cfg.grid.tokens, 8, dtype=torch.float64)
        rotated = rotate_tokens(x, cfg)
        assert torch.equal(rotated[..., 0, :], x[..., 0, :])
        assert torch.equal(apply_rotary(x[0, 0, 0], 0, cfg), x[0, 0, 0])

    def test_norm_preserved(self, cfg):
        x = torch.randn(cfg.grid.tokens, 8, dtype=torch.float64)
        torch.testing.assert_close(rotate_tokens(x, cfg).norm(dim=-1), x.norm(dim=-1))

    def test_single_vector_matches_batch(self, cfg):
        x = torch.randn(cfg.grid.tokens, 8, dtype=torch.float64)
        rotated = rotate_tokens(x, cfg)
        for token in range(cfg.grid.tokens):
            torch.testing.assert_close(apply_rotary(x[token], token, cfg), rotated[token])

    def test_dot_product_depends_on_displacement_only(self, cfg):
        q = torch.randn(8, dtype=torch.float64)
        k = torch.randn(8, dtype=torch.float64)
        grid = cfg.grid

        def score(i, j):
            return torch.dot(apply_rotary(q, i, cfg), apply_rotary(k, j, cfg)).item()

        reference = score(grid.index(1, 1), grid.index(2, 3))
        for y, x in [(2, 2), (3, 3), (3, 1)]:
            shifted = score(grid.index(y, x), grid.index(y + 1, x + 2))
            assert shifted == pytest.approx(reference, abs=1e-12)
        assert score(grid.index(1, 1), grid.index(1, 3)) != pytest.approx(reference, abs=1e-6)

    def test_shape_mismatch(self, cfg):
        with pytest.raises(InvalidArgumentError):
            rotate_tokens(torch.zeros(cfg.grid.tokens - 1, 8), cfg)
        with pytest.raises(InvalidArgumentError):
            apply_rotary(torch.zeros(4), 1, cfg)

    def test_keeps_dtype(self, cfg):
        x = torch.randn(cfg.grid.tokens, 8, dtype=torch.float32)
        assert rotate_tokens(x, cfg).dtype == torch.float32

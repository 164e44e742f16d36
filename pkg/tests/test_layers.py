import numpy as np
import pytest

from linerec.layers import (
    DIRECTIONS,
    CellwiseLinear,
    Conv,
    Dropout,
    MdLstm,
    block_input,
    block_input_backward,
    collapse_vertical,
    collapse_vertical_backward,
    softmax_backward,
    softmax_forward,
    sum_tanh_backward,
    sum_tanh_combine,
)
from linerec.numerics import stream_rng

from .oracles import lstm_1d_ref, mdlstm_ref

FD_STEP = 1e-6
FD_TOL = 1e-5


def fd_weight_grads(layer, x, dout, weights, grads, forward, n_coords=12, seed=0):
    """Central differences of sum(forward(x) * dout) against stored grads."""
    rng = stream_rng(seed, "fd")
    worst = 0.0
    for name, tensor in weights.items():
        flat = tensor.reshape(-1)
        coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        gflat = grads[name].reshape(-1)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + FD_STEP
            hi = float(np.sum(forward() * dout))
            flat[c] = keep - FD_STEP
            lo = float(np.sum(forward() * dout))
            flat[c] = keep
            numeric = (hi - lo) / (2.0 * FD_STEP)
            denom = max(abs(gflat[c]), abs(numeric), 1e-4)
            worst = max(worst, abs(gflat[c] - numeric) / denom)
    return worst


def fd_input_grad(x, dout, forward, d_in, n_coords=12, seed=1):
    rng = stream_rng(seed, "fd-in")
    flat = x.reshape(-1)
    din_flat = d_in.reshape(-1)
    worst = 0.0
    coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    for c in coords:
        keep = flat[c]
        flat[c] = keep + FD_STEP
        hi = float(np.sum(forward() * dout))
        flat[c] = keep - FD_STEP
        lo = float(np.sum(forward() * dout))
        flat[c] = keep
        numeric = (hi - lo) / (2.0 * FD_STEP)
        denom = max(abs(din_flat[c]), abs(numeric), 1e-4)
        worst = max(worst, abs(din_flat[c] - numeric) / denom)
    return worst


class TestBlockInput:
    def test_exact_placement(self):
        img = np.arange(16, dtype=np.float64).reshape(4, 4)
        grid, _ = block_input(img, block=(2, 2))
        assert grid.shape == (2, 2, 4)
        # cell (0, 0) holds the top-left 2x2 patch in row-major order
        np.testing.assert_array_equal(grid[0, 0], [0, 1, 4, 5])
        np.testing.assert_array_equal(grid[1, 1], [10, 11, 14, 15])

    def test_ceil_padding(self):
        img = np.ones((5, 7))
        grid, _ = block_input(img, block=(2, 2))
        assert grid.shape == (3, 4, 4)
        # bottom-right cell is three-quarters padding
        np.testing.assert_array_equal(grid[2, 3], [1, 0, 0, 0])

    def test_adjoint_identity(self):
        rng = stream_rng(0, "adj")
        img = rng.random((5, 7))
        grid, cache = block_input(img, block=(2, 2))
        cot = rng.random(grid.shape)
        back = block_input_backward(cot, cache)
        assert back.shape == img.shape
        assert float(np.sum(grid * cot)) == pytest.approx(
            float(np.sum(img * back)), rel=1e-12
        )

    def test_identity_block(self):
        img = np.arange(6, dtype=np.float64).reshape(2, 3)
        grid, cache = block_input(img, block=(1, 1))
        np.testing.assert_array_equal(grid[:, :, 0], img)
        np.testing.assert_array_equal(block_input_backward(grid, cache), img)


class TestMdLstmForward:
    @pytest.mark.parametrize("direction", sorted(DIRECTIONS))
    @pytest.mark.parametrize("shape", [(1, 1), (1, 5), (4, 1), (3, 4)])
    def test_matches_scalar_reference(self, direction, shape):
        rng = stream_rng(0, f"{direction}{shape}")
        layer = MdLstm(3, 2, direction=direction)
        layer.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, shape + (3,))
        h, _ = layer.forward(x)
        ref = mdlstm_ref(x, layer.w, DIRECTIONS[direction])
        np.testing.assert_allclose(h, ref, atol=1e-12)

    @pytest.mark.parametrize("direction", sorted(DIRECTIONS))
    def test_matches_scalar_reference_with_peepholes(self, direction):
        rng = stream_rng(1, direction)
        layer = MdLstm(2, 2, direction=direction, peepholes=True)
        layer.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, (3, 3, 2))
        h, _ = layer.forward(x)
        ref = mdlstm_ref(x, layer.w, DIRECTIONS[direction], peepholes=True)
        np.testing.assert_allclose(h, ref, atol=1e-12)

    def test_single_row_equals_plain_lstm(self):
        rng = stream_rng(2, "1d")
        layer = MdLstm(3, 4, direction="tl")
        layer.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, (1, 6, 3))
        h, _ = layer.forward(x)
        ref = lstm_1d_ref(x[0], layer.w)
        np.testing.assert_allclose(h[0], ref, atol=1e-12)

    def test_single_cell_ignores_direction(self):
        rng = stream_rng(3, "cell")
        x = rng.normal(0.0, 1.0, (1, 1, 3))
        outs = []
        for direction in sorted(DIRECTIONS):
            layer = MdLstm(3, 2, direction=direction)
            layer.init(stream_rng(9, "shared"), std=0.5)
            h, _ = layer.forward(x)
            outs.append(h)
        for h in outs[1:]:
            np.testing.assert_array_equal(h, outs[0])

    def test_direction_changes_output(self):
        rng = stream_rng(4, "dir")
        x = rng.normal(0.0, 1.0, (3, 4, 2))
        tl = MdLstm(2, 2, direction="tl")
        tl.init(stream_rng(5, "w"), std=0.5)
        br = MdLstm(2, 2, direction="br")
        br.init(stream_rng(5, "w"), std=0.5)
        assert not np.allclose(tl.forward(x)[0], br.forward(x)[0])

    def test_rejects_unknown_direction(self):
        with pytest.raises(ValueError):
            MdLstm(2, 2, direction="up")


class TestMdLstmBackward:
    @pytest.mark.parametrize("direction", sorted(DIRECTIONS))
    @pytest.mark.parametrize("peepholes", [False, True])
    def test_all_gradients_match_finite_differences(self, direction, peepholes):
        rng = stream_rng(6, f"{direction}{peepholes}")
        layer = MdLstm(2, 2, direction=direction, peepholes=peepholes)
        layer.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, (2, 3, 2))
        dout = rng.normal(0.0, 1.0, (2, 3, 2))

        h, cache = layer.forward(x)
        layer.zero_grads()
        d_in = layer.backward(cache, dout)

        worst_w = fd_weight_grads(
            layer, x, dout, layer.w, layer.g, lambda: layer.forward(x)[0]
        )
        worst_x = fd_input_grad(x, dout, lambda: layer.forward(x)[0], d_in)
        assert worst_w < FD_TOL
        assert worst_x < FD_TOL

    def test_gradients_accumulate_across_calls(self):
        rng = stream_rng(7, "accum")
        layer = MdLstm(2, 2)
        layer.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, (2, 2, 2))
        dout = rng.normal(0.0, 1.0, (2, 2, 2))
        _, cache = layer.forward(x)
        layer.zero_grads()
        layer.backward(cache, dout)
        once = {k: v.copy() for k, v in layer.g.items()}
        _, cache = layer.forward(x)
        layer.backward(cache, dout)
        for k in once:
            np.testing.assert_allclose(layer.g[k], 2.0 * once[k], rtol=1e-12)


class TestConv:
    def test_forward_matches_loops(self):
        rng = stream_rng(8, "conv")
        conv = Conv(2, 3, (2, 4))
        conv.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, (4, 8, 2))
        out, _ = conv.forward(x)
        assert out.shape == (2, 2, 3)
        for i in range(2):
            for j in range(2):
                patch = x[2 * i : 2 * i + 2, 4 * j : 4 * j + 4, :]
                expect = np.einsum("abc,abco->o", patch, conv.w["w"])
                np.testing.assert_allclose(out[i, j], expect, atol=1e-12)

    def test_ceil_padding_short_edge(self):
        rng = stream_rng(9, "convpad")
        conv = Conv(1, 2, (2, 3))
        conv.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, (3, 4, 1))
        out, _ = conv.forward(x)
        assert out.shape == (2, 2, 2)
        # the bottom-right window sees one real column zero-padded
        padded = np.zeros((4, 6, 1))
        padded[:3, :4] = x
        patch = padded[2:4, 3:6, :]
        expect = np.einsum("abc,abco->o", patch, conv.w["w"])
        np.testing.assert_allclose(out[1, 1], expect, atol=1e-12)

    def test_no_bias_on_zero_input(self):
        conv = Conv(2, 3, (2, 2))
        conv.init(stream_rng(10, "w"), std=0.5)
        out, _ = conv.forward(np.zeros((4, 4, 2)))
        assert np.all(out == 0.0)

    def test_backward_matches_finite_differences(self):
        rng = stream_rng(11, "convfd")
        conv = Conv(2, 3, (2, 3))
        conv.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, (3, 7, 2))
        _, cache = conv.forward(x)
        dout = rng.normal(0.0, 1.0, (2, 3, 3))
        conv.zero_grads()
        d_in = conv.backward(cache, dout)
        assert d_in.shape == x.shape
        worst_w = fd_weight_grads(
            conv, x, dout, conv.w, conv.g, lambda: conv.forward(x)[0]
        )
        worst_x = fd_input_grad(x, dout, lambda: conv.forward(x)[0], d_in)
        assert worst_w < FD_TOL
        assert worst_x < FD_TOL


class TestCombinators:
    def test_sum_tanh_value_and_gradient(self):
        rng = stream_rng(12, "st")
        a = rng.normal(0.0, 1.0, (2, 3, 2))
        b = rng.normal(0.0, 1.0, (2, 3, 2))
        out, cache = sum_tanh_combine([a, b])
        np.testing.assert_allclose(out, np.tanh(a + b), atol=1e-12)
        dout = rng.normal(0.0, 1.0, out.shape)
        d = sum_tanh_backward(cache, dout)
        np.testing.assert_allclose(d, dout * (1.0 - np.tanh(a + b) ** 2), atol=1e-12)

    def test_sum_tanh_shape_mismatch(self):
        with pytest.raises(ValueError):
            sum_tanh_combine([np.zeros((2, 2, 1)), np.zeros((2, 3, 1))])

    def test_collapse_vertical(self):
        x = np.arange(12, dtype=np.float64).reshape(3, 2, 2)
        out, cache = collapse_vertical(x)
        assert out.shape == (1, 2, 2)
        np.testing.assert_array_equal(out[0], x.sum(axis=0))
        back = collapse_vertical_backward(cache, np.ones((1, 2, 2)))
        np.testing.assert_array_equal(back, np.ones((3, 2, 2)))

    def test_collapse_adjoint(self):
        rng = stream_rng(13, "col")
        x = rng.random((4, 3, 2))
        out, cache = collapse_vertical(x)
        cot = rng.random(out.shape)
        back = collapse_vertical_backward(cache, cot)
        assert float(np.sum(out * cot)) == pytest.approx(float(np.sum(x * back)))


class TestCellwiseLinear:
    def test_forward_matches_loops(self):
        rng = stream_rng(14, "fc")
        fc = CellwiseLinear(3, 2)
        fc.init(rng, std=0.5)
        fc.w["b"][:] = [0.5, -0.25]
        x = rng.normal(0.0, 1.0, (2, 2, 3))
        out, _ = fc.forward(x)
        for i in range(2):
            for j in range(2):
                np.testing.assert_allclose(
                    out[i, j], x[i, j] @ fc.w["w"] + fc.w["b"], atol=1e-12
                )

    def test_backward_matches_finite_differences(self):
        rng = stream_rng(15, "fcfd")
        fc = CellwiseLinear(3, 2)
        fc.init(rng, std=0.5)
        x = rng.normal(0.0, 1.0, (2, 3, 3))
        _, cache = fc.forward(x)
        dout = rng.normal(0.0, 1.0, (2, 3, 2))
        fc.zero_grads()
        d_in = fc.backward(cache, dout)
        worst_w = fd_weight_grads(fc, x, dout, fc.w, fc.g, lambda: fc.forward(x)[0])
        worst_x = fd_input_grad(x, dout, lambda: fc.forward(x)[0], d_in)
        assert worst_w < FD_TOL
        assert worst_x < FD_TOL


class TestDropout:
    def test_testing_mode_scales_exactly(self):
        rng = stream_rng(16, "do")
        x = rng.normal(0.0, 1.0, (3, 4, 2))
        out, _ = Dropout(0.5).forward(x, mode="testing")
        np.testing.assert_array_equal(out, 0.5 * x)

    def test_training_mode_masks(self):
        rng = stream_rng(17, "do")
        x = np.ones((20, 20, 4))
        out, (mode, mask) = Dropout(0.5).forward(x, mode="training", rng=rng)
        assert mode == "training"
        assert set(np.unique(out)) <= {0.0, 1.0}
        np.testing.assert_array_equal(out, mask)

    def test_keep_all_shortcut_draws_nothing(self):
        rng = stream_rng(18, "do")
        untouched = stream_rng(18, "do")
        x = np.ones((4, 4, 2))
        out, (_, mask) = Dropout(1.0).forward(x, mode="training", rng=rng)
        np.testing.assert_array_equal(out, x)
        assert mask.min() == 1.0
        # the generator was not consumed
        np.testing.assert_array_equal(rng.random(8), untouched.random(8))

    def test_forced_mask(self):
        x = np.full((2, 2, 1), 3.0)
        mask = np.array([[[1.0], [0.0]], [[0.0], [1.0]]])
        out, cache = Dropout(0.5).forward(x, mode="training", forced_mask=mask)
        np.testing.assert_array_equal(out, 3.0 * mask)
        back = Dropout(0.5).backward(cache, np.ones_like(x))
        np.testing.assert_array_equal(back, mask)

    def test_testing_backward_scales(self):
        x = np.ones((2, 2, 1))
        layer = Dropout(0.25)
        _, cache = layer.forward(x, mode="testing")
        np.testing.assert_array_equal(
            layer.backward(cache, np.ones_like(x)), 0.25 * np.ones_like(x)
        )

    def test_masks_resampled_per_call(self):
        rng = stream_rng(19, "do")
        x = np.ones((10, 10, 4))
        layer = Dropout(0.5)
        _, (_, m1) = layer.forward(x, mode="training", rng=rng)
        _, (_, m2) = layer.forward(x, mode="training", rng=rng)
        assert not np.array_equal(m1, m2)

    def test_mask_statistics(self):
        rng = stream_rng(20, "do")
        x = np.ones((100, 100, 4))
        _, (_, mask) = Dropout(0.7).forward(x, mode="training", rng=rng)
        assert abs(mask.mean() - 0.7) < 5e-3

    def test_bad_p_rejected(self):
        for p in (0.0, -0.5, 1.01):
            with pytest.raises(ValueError):
                Dropout(p)

    def test_training_without_rng_rejected(self):
        with pytest.raises(ValueError, match="rng"):
            Dropout(0.5).forward(np.ones((2, 2, 1)), mode="training")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            Dropout(0.5).forward(np.ones((2, 2, 1)), mode="eval")


class TestSoftmax:
    def test_rows_sum_to_one(self):
        rng = stream_rng(21, "sm")
        x = rng.normal(0.0, 5.0, (2, 3, 4))
        y, _ = softmax_forward(x)
        np.testing.assert_allclose(y.sum(axis=2), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        rng = stream_rng(22, "sm")
        x = rng.normal(0.0, 1.0, (1, 3, 4))
        y1, _ = softmax_forward(x)
        y2, _ = softmax_forward(x + 100.0)
        np.testing.assert_allclose(y1, y2, atol=1e-12)

    def test_backward_matches_finite_differences(self):
        rng = stream_rng(23, "smfd")
        x = rng.normal(0.0, 1.0, (1, 2, 3))
        y, cache = softmax_forward(x)
        dout = rng.normal(0.0, 1.0, y.shape)
        d_in = softmax_backward(cache, dout)
        worst = fd_input_grad(x, dout, lambda: softmax_forward(x)[0], d_in)
        assert worst < FD_TOL

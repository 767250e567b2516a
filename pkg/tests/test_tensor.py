import numpy as np
import pytest

from nsal.tensor import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool2x2,
    ReLU,
    ShapeError,
    Softmax,
    layer_forward,
    layer_from_spec,
)

import oracles


def _f64(layer):
    """Clone a layer with float64 parameters for precise finite differences."""
    if isinstance(layer, Conv2D):
        clone = Conv2D(layer.kernel, layer.bias, layer.stride, layer.same_padding)
        clone.kernel = layer.kernel.astype(np.float64)
        clone.bias = layer.bias.astype(np.float64)
        return clone
    if isinstance(layer, Dense):
        clone = Dense(layer.weight, layer.bias)
        clone.weight = layer.weight.astype(np.float64)
        clone.bias = layer.bias.astype(np.float64)
        return clone
    return layer


def _random_layers(rng):
    """One representative instance of every layer kind, for a 6x6x3 input."""
    return {
        "conv2d_same": Conv2D(
            rng.normal(0, 0.5, (3, 3, 3, 4)).astype(np.float32),
            rng.normal(0, 0.1, 4).astype(np.float32),
        ),
        "conv2d_valid": Conv2D(
            rng.normal(0, 0.5, (3, 3, 3, 2)).astype(np.float32),
            rng.normal(0, 0.1, 2).astype(np.float32),
            same_padding=False,
        ),
        "conv2d_stride2": Conv2D(
            rng.normal(0, 0.5, (3, 3, 3, 2)).astype(np.float32),
            rng.normal(0, 0.1, 2).astype(np.float32),
            stride=2,
        ),
        "relu": ReLU(),
        "maxpool2x2": MaxPool2x2(),
        "flatten": Flatten(),
    }


class TestForward:
    def test_relu_definition(self):
        out = ReLU().forward(np.array([-1.0, 0.0, 2.5], dtype=np.float32))
        np.testing.assert_array_equal(out, [0.0, 0.0, 2.5])

    def test_conv_identity_kernel(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (5, 7, 1)).astype(np.float32)
        layer = Conv2D(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
        np.testing.assert_array_equal(layer.forward(img), img)

    def test_softmax_symmetry(self):
        out = Softmax().forward(np.zeros(4, dtype=np.float32))
        np.testing.assert_allclose(out, 0.25, atol=1e-7)

    def test_dense_hand_example(self):
        layer = Dense(
            np.array([[2.0, 0.0], [0.0, 3.0]], np.float32), np.array([1.0, 1.0], np.float32)
        )
        np.testing.assert_array_equal(
            layer.forward(np.array([1.0, 1.0], np.float32)), [3.0, 4.0]
        )

    def test_conv_same_padding_keeps_extent(self):
        layer = Conv2D(np.zeros((3, 3, 3, 4), np.float32), np.zeros(4, np.float32))
        assert layer.output_shape((32, 32, 3)) == (32, 32, 4)
        layer2 = Conv2D(np.zeros((3, 3, 3, 4), np.float32), np.zeros(4, np.float32), stride=2)
        assert layer2.output_shape((32, 32, 3)) == (16, 16, 4)

    def test_conv_matches_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, (6, 6, 3)).astype(np.float32)
        for name, layer in _random_layers(rng).items():
            if not isinstance(layer, Conv2D):
                continue
            got = layer.forward(x)
            want = oracles.conv2d_f64(layer, x)
            np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6, err_msg=name)

    def test_maxpool_values(self):
        x = np.arange(16, dtype=np.float32).reshape(4, 4, 1)
        out = MaxPool2x2().forward(x)
        np.testing.assert_array_equal(out[:, :, 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_softmax_normalized_at_large_magnitude(self):
        rng = np.random.default_rng(2)
        logits = rng.uniform(-50, 50, 16).astype(np.float32)
        out = Softmax().forward(logits)
        assert abs(float(out.sum()) - 1.0) < 1e-6
        assert np.all(out > 0) and np.all(out < 1)


class TestBackwardInput:
    def test_relu_gate(self):
        grad = ReLU().backward_input(
            np.array([-1.0, 2.0], np.float32), np.array([5.0, 5.0], np.float32)
        )
        np.testing.assert_array_equal(grad, [0.0, 5.0])

    def test_relu_subgradient_zero_at_zero(self):
        grad = ReLU().backward_input(
            np.array([0.0], np.float32), np.array([7.0], np.float32)
        )
        np.testing.assert_array_equal(grad, [0.0])

    def test_dense_adjoint(self):
        rng = np.random.default_rng(3)
        layer = Dense(rng.normal(0, 1, (3, 5)).astype(np.float32), np.zeros(3, np.float32))
        g = rng.normal(0, 1, 3).astype(np.float32)
        got = layer.backward_input(np.zeros(5, np.float32), g)
        np.testing.assert_allclose(got, layer.weight.T @ g, rtol=1e-6)

    def test_maxpool_tie_goes_to_first_row_major(self):
        x = np.full((2, 2, 1), 3.0, dtype=np.float32)
        grad = MaxPool2x2().backward_input(x, np.array([[[2.0]]], np.float32))
        np.testing.assert_array_equal(grad[:, :, 0], [[2.0, 0.0], [0.0, 0.0]])

    @pytest.mark.parametrize("name", [
        "conv2d_same", "conv2d_valid", "conv2d_stride2", "relu", "maxpool2x2", "flatten",
    ])
    def test_matches_finite_differences(self, name):
        rng = np.random.default_rng(4)
        layer = _random_layers(rng)[name]
        x = rng.normal(0, 1, (6, 6, 3)).astype(np.float32)
        if name == "maxpool2x2":
            # keep window maxima unique so the subgradient is well defined
            x = (x + np.arange(x.size).reshape(x.shape) * 0.01).astype(np.float32)
        probe = rng.normal(0, 1, layer.output_shape(x.shape)).astype(np.float32)
        layer64 = _f64(layer)

        def scalar(xv):
            return float(np.sum(layer64.forward(xv) * probe.astype(np.float64)))

        fd = oracles.central_diff(scalar, x)
        grad = layer.backward_input(x, probe)
        rel = oracles.relative_errors(grad, fd)
        assert rel.size and rel.max() < 1e-3

    def test_dense_softmax_finite_differences(self):
        rng = np.random.default_rng(5)
        dense = Dense(rng.normal(0, 1, (4, 6)).astype(np.float32), np.zeros(4, np.float32))
        soft = Softmax()
        x = rng.normal(0, 1, 6).astype(np.float32)
        probe = rng.normal(0, 1, 4).astype(np.float32)
        dense64 = _f64(dense)

        def scalar(xv):
            return float(soft.forward(dense64.forward(xv)) @ probe.astype(np.float64))

        fd = oracles.central_diff(scalar, x)
        grad = dense.backward_input(x, soft.backward_input(dense.forward(x), probe))
        rel = oracles.relative_errors(grad, fd)
        assert rel.size and rel.max() < 1e-3

    def test_chain_rule_across_stacked_pairs(self):
        rng = np.random.default_rng(6)
        layers = _random_layers(rng)
        pairs = [
            (layers["conv2d_same"], ReLU()),
            (ReLU(), MaxPool2x2()),
            (layers["conv2d_same"], MaxPool2x2()),
        ]
        x = rng.normal(0, 1, (6, 6, 3)).astype(np.float32)
        for first, second in pairs:
            mid_shape = first.output_shape(x.shape)
            probe = rng.normal(0, 1, second.output_shape(mid_shape)).astype(np.float32)
            f64_first, f64_second = _f64(first), _f64(second)

            def scalar(xv):
                return float(
                    np.sum(f64_second.forward(f64_first.forward(xv)) * probe.astype(np.float64))
                )

            fd = oracles.central_diff(scalar, x)
            mid = first.forward(x)
            grad = first.backward_input(x, second.backward_input(mid, probe))
            rel = oracles.relative_errors(grad, fd)
            assert rel.size and rel.max() < 1e-3


class TestBackwardParams:
    def test_dense_outer_product(self):
        layer = Dense(np.zeros((2, 2), np.float32), np.zeros(2, np.float32))
        gw, gb = layer.backward_params(
            np.array([1.0, 0.0], np.float32), np.array([4.0, 9.0], np.float32)
        )
        np.testing.assert_array_equal(gw[:, 0], [4.0, 9.0])
        np.testing.assert_array_equal(gw[:, 1], [0.0, 0.0])
        np.testing.assert_array_equal(gb, [4.0, 9.0])

    def test_zero_output_grad_gives_zero_param_grads(self):
        rng = np.random.default_rng(7)
        layer = _random_layers(rng)["conv2d_same"]
        x = rng.normal(0, 1, (6, 6, 3)).astype(np.float32)
        gk, gb = layer.backward_params(x, np.zeros(layer.output_shape(x.shape), np.float32))
        assert not gk.any() and not gb.any()

    def test_parameter_free_layers_return_empty(self):
        x = np.zeros((4, 4, 1), np.float32)
        for layer in (ReLU(), MaxPool2x2(), Flatten()):
            assert layer.params() == []
            assert layer.backward_params(x, layer.forward(x)) == []

    def test_conv_param_grads_match_finite_differences(self):
        rng = np.random.default_rng(8)
        layer = Conv2D(
            rng.normal(0, 0.5, (2, 2, 2, 2)).astype(np.float32),
            rng.normal(0, 0.1, 2).astype(np.float32),
            same_padding=False,
        )
        x = rng.normal(0, 1, (4, 4, 2)).astype(np.float32)
        probe = rng.normal(0, 1, layer.output_shape(x.shape)).astype(np.float32)
        gk, gb = layer.backward_params(x, probe)

        def scalar_of_kernel(kv):
            clone = _f64(layer)
            clone.kernel = kv
            return float(np.sum(clone.forward(x.astype(np.float64)) * probe))

        fd_k = oracles.central_diff(scalar_of_kernel, layer.kernel)
        rel = oracles.relative_errors(gk, fd_k)
        assert rel.size and rel.max() < 1e-3
        np.testing.assert_allclose(gb, probe.sum(axis=(0, 1)), rtol=1e-5)
        assert gk.shape == layer.kernel.shape and gb.shape == layer.bias.shape


class TestContracts:
    def test_determinism(self):
        rng = np.random.default_rng(9)
        layer = _random_layers(rng)["conv2d_same"]
        x = rng.normal(0, 1, (6, 6, 3)).astype(np.float32)
        a, b = layer.forward(x), layer.forward(x)
        np.testing.assert_array_equal(a, b)
        probe = np.ones_like(a)
        np.testing.assert_array_equal(
            layer.backward_input(x, probe), layer.backward_input(x, probe)
        )

    def test_layer_forward_names_index_on_mismatch(self):
        layer = Dense(np.zeros((2, 3), np.float32), np.zeros(2, np.float32))
        with pytest.raises(ShapeError, match=r"layer 5 \(dense\).*\(4,\)"):
            layer_forward(layer, np.zeros(4, np.float32), index=5)

    def test_maxpool_rejects_odd_extent(self):
        with pytest.raises(ShapeError, match="even"):
            MaxPool2x2().output_shape((5, 4, 1))

    def test_conv_rejects_channel_mismatch(self):
        layer = Conv2D(np.zeros((3, 3, 3, 4), np.float32), np.zeros(4, np.float32))
        with pytest.raises(ShapeError, match="HxWx3"):
            layer.output_shape((6, 6, 2))

    def test_outputs_stay_finite(self):
        rng = np.random.default_rng(10)
        x = rng.normal(0, 1, (6, 6, 3)).astype(np.float32)
        for name, layer in _random_layers(rng).items():
            out = layer.forward(x)
            assert np.all(np.isfinite(out)), name

    def test_layer_from_spec_round_trip(self):
        rng = np.random.default_rng(11)
        conv = _random_layers(rng)["conv2d_stride2"]
        rebuilt = layer_from_spec(conv.spec_dict())
        assert rebuilt.kernel.shape == conv.kernel.shape
        assert rebuilt.stride == 2 and rebuilt.same_padding
        with pytest.raises(ValueError, match="unknown layer kind"):
            layer_from_spec({"kind": "avgpool"})

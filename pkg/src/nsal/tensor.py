"""Dense-tensor layer primitives with explicit forward and backward passes.

Every layer is a pure function of its inputs: ``forward`` produces the layer
output, ``backward_input`` chains an upstream gradient to the layer input and
``backward_params`` to the layer parameters. All production arrays are
float32; the layers themselves preserve whatever dtype they are fed so the
test suite can run float64 probes through the same code.
"""

from __future__ import annotations

import math

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """An array shape is incompatible with a layer or a network."""


def _as_param(value, name: str, dtype=DTYPE) -> np.ndarray:
    arr = np.ascontiguousarray(value, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class Layer:
    """Base class; subclasses define ``kind`` and the three passes."""

    kind = "layer"

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in serialization order (weights before biases)."""
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward_input(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward_params(self, x: np.ndarray, grad_out: np.ndarray) -> list[np.ndarray]:
        return []

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def spec_dict(self) -> dict:
        return {"kind": self.kind}


class Conv2D(Layer):
    """2-D cross-correlation over an H x W x C_in array.

    Kernel layout is (k_h, k_w, c_in, c_out). Zero padding ("same") keeps the
    spatial extent at ceil(size / stride); without it the window must fit.
    """

    kind = "conv2d"

    def __init__(self, kernel, bias, stride: int = 1, same_padding: bool = True):
        self.kernel = _as_param(kernel, "kernel")
        if self.kernel.ndim != 4:
            raise ShapeError(f"conv2d kernel must be 4-d, got shape {self.kernel.shape}")
        self.bias = _as_param(bias, "bias")
        if self.bias.shape != (self.kernel.shape[3],):
            raise ShapeError(
                f"conv2d bias shape {self.bias.shape} does not match "
                f"{self.kernel.shape[3]} output channels"
            )
        if stride < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        self.stride = int(stride)
        self.same_padding = bool(same_padding)

    def params(self):
        return [self.kernel, self.bias]

    def _geometry(self, h: int, w: int):
        kh, kw = self.kernel.shape[:2]
        s = self.stride
        if self.same_padding:
            out_h = -(-h // s)
            out_w = -(-w // s)
            pad_h = max((out_h - 1) * s + kh - h, 0)
            pad_w = max((out_w - 1) * s + kw - w, 0)
        else:
            if h < kh or w < kw:
                raise ShapeError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
            out_h = (h - kh) // s + 1
            out_w = (w - kw) // s + 1
            pad_h = pad_w = 0
        # asymmetric split: extra pixel goes to the bottom/right edge
        return out_h, out_w, (pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[2] != self.kernel.shape[2]:
            raise ShapeError(
                f"conv2d expects HxWx{self.kernel.shape[2]} input, got {tuple(input_shape)}"
            )
        out_h, out_w, _, _ = self._geometry(input_shape[0], input_shape[1])
        return (out_h, out_w, self.kernel.shape[3])

    def forward(self, x):
        h, w, _ = x.shape
        out_h, out_w, ph, pw = self._geometry(h, w)
        kh, kw, cin, cout = self.kernel.shape
        s = self.stride
        xp = np.pad(x, (ph, pw, (0, 0)))
        dtype = np.promote_types(x.dtype, self.kernel.dtype)
        acc = np.zeros((out_h * out_w, cout), dtype=dtype)
        for dy in range(kh):
            for dx in range(kw):
                sub = xp[dy : dy + (out_h - 1) * s + 1 : s, dx : dx + (out_w - 1) * s + 1 : s]
                acc += sub.reshape(-1, cin) @ self.kernel[dy, dx].astype(dtype)
        return acc.reshape(out_h, out_w, cout) + self.bias.astype(dtype)

    def backward_input(self, x, grad_out):
        h, w, _ = x.shape
        out_h, out_w, ph, pw = self._geometry(h, w)
        kh, kw, cin, cout = self.kernel.shape
        s = self.stride
        dtype = np.promote_types(grad_out.dtype, self.kernel.dtype)
        g2 = grad_out.reshape(-1, cout).astype(dtype)
        gpad = np.zeros((h + ph[0] + ph[1], w + pw[0] + pw[1], cin), dtype=dtype)
        for dy in range(kh):
            for dx in range(kw):
                gsub = (g2 @ self.kernel[dy, dx].astype(dtype).T).reshape(out_h, out_w, cin)
                gpad[dy : dy + (out_h - 1) * s + 1 : s, dx : dx + (out_w - 1) * s + 1 : s] += gsub
        return gpad[ph[0] : ph[0] + h, pw[0] : pw[0] + w]

    def backward_params(self, x, grad_out):
        h, w, _ = x.shape
        out_h, out_w, ph, pw = self._geometry(h, w)
        kh, kw, cin, cout = self.kernel.shape
        s = self.stride
        xp = np.pad(x, (ph, pw, (0, 0)))
        dtype = np.promote_types(x.dtype, grad_out.dtype)
        g2 = grad_out.reshape(-1, cout).astype(dtype)
        gk = np.zeros((kh, kw, cin, cout), dtype=dtype)
        for dy in range(kh):
            for dx in range(kw):
                sub = xp[dy : dy + (out_h - 1) * s + 1 : s, dx : dx + (out_w - 1) * s + 1 : s]
                gk[dy, dx] = sub.reshape(-1, cin).T @ g2
        return [gk, grad_out.sum(axis=(0, 1))]

    def spec_dict(self):
        return {
            "kind": self.kind,
            "kernel_shape": list(self.kernel.shape),
            "stride": self.stride,
            "same_padding": self.same_padding,
        }


class Dense(Layer):
    """Affine map ``W @ x + b`` on a 1-d input; weight is (out, in)."""

    kind = "dense"

    def __init__(self, weight, bias):
        self.weight = _as_param(weight, "weight")
        if self.weight.ndim != 2:
            raise ShapeError(f"dense weight must be 2-d, got shape {self.weight.shape}")
        self.bias = _as_param(bias, "bias")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"dense bias shape {self.bias.shape} does not match "
                f"{self.weight.shape[0]} outputs"
            )

    def params(self):
        return [self.weight, self.bias]

    def output_shape(self, input_shape):
        if len(input_shape) != 1 or input_shape[0] != self.weight.shape[1]:
            raise ShapeError(
                f"dense expects ({self.weight.shape[1]},) input, got {tuple(input_shape)}"
            )
        return (self.weight.shape[0],)

    def forward(self, x):
        return self.weight @ x + self.bias

    def backward_input(self, x, grad_out):
        return self.weight.T @ grad_out

    def backward_params(self, x, grad_out):
        return [np.outer(grad_out, x), grad_out.copy()]

    def spec_dict(self):
        return {
            "kind": self.kind,
            "in_features": int(self.weight.shape[1]),
            "out_features": int(self.weight.shape[0]),
        }


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x):
        return np.maximum(x, 0)

    def backward_input(self, x, grad_out):
        # subgradient at 0 is 0
        return grad_out * (x > 0)


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; requires even spatial extents."""

    kind = "maxpool2x2"

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] % 2 or input_shape[1] % 2:
            raise ShapeError(
                f"maxpool2x2 needs an even HxWxC input, got {tuple(input_shape)}"
            )
        return (input_shape[0] // 2, input_shape[1] // 2, input_shape[2])

    @staticmethod
    def _windows(x):
        h, w, c = x.shape
        return x.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(
            h // 2, w // 2, 4, c
        )

    def forward(self, x):
        return self._windows(x).max(axis=2)

    def backward_input(self, x, grad_out):
        h, w, c = x.shape
        win = self._windows(x)
        # argmax returns the first maximum; window cells are in row-major order,
        # so ties break toward the top-left element
        idx = win.argmax(axis=2)
        g = np.zeros(win.shape, dtype=grad_out.dtype)
        np.put_along_axis(g, idx[:, :, None, :], grad_out[:, :, None, :], axis=2)
        return g.reshape(h // 2, w // 2, 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        return x.reshape(-1)

    def backward_input(self, x, grad_out):
        return grad_out.reshape(x.shape)


class Softmax(Layer):
    """Numerically stabilized softmax; only valid as a network's final layer."""

    kind = "softmax"

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"softmax expects a 1-d input, got {tuple(input_shape)}")
        return tuple(input_shape)

    def forward(self, x):
        z = np.exp(x - x.max())
        return z / z.sum()

    def backward_input(self, x, grad_out):
        s = self.forward(x)
        return s * (grad_out - grad_out @ s)


_LAYER_KINDS = {cls.kind: cls for cls in (Conv2D, Dense, ReLU, MaxPool2x2, Flatten, Softmax)}


def layer_from_spec(spec: dict) -> Layer:
    """Rebuild a layer (with zeroed parameters) from its ``spec_dict``."""
    kind = spec.get("kind")
    if kind not in _LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    if kind == "conv2d":
        kh, kw, cin, cout = spec["kernel_shape"]
        return Conv2D(
            np.zeros((kh, kw, cin, cout), dtype=DTYPE),
            np.zeros(cout, dtype=DTYPE),
            stride=spec["stride"],
            same_padding=spec["same_padding"],
        )
    if kind == "dense":
        return Dense(
            np.zeros((spec["out_features"], spec["in_features"]), dtype=DTYPE),
            np.zeros(spec["out_features"], dtype=DTYPE),
        )
    return _LAYER_KINDS[kind]()


def layer_forward(layer: Layer, x: np.ndarray, index: int | None = None) -> np.ndarray:
    """Run one layer forward, naming the layer index on shape mismatch."""
    try:
        layer.output_shape(x.shape)
    except ShapeError as exc:
        where = f"layer {index} ({layer.kind})" if index is not None else layer.kind
        raise ShapeError(f"{where}: {exc}") from None
    return layer.forward(x)


def gaussian_fan_in_scale(fan_in: int) -> float:
    """He-style stddev used by the seeded initializers."""
    return math.sqrt(2.0 / fan_in)
